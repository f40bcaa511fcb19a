"""Acceptance suite: one test per criterion, each reported in the terminal summary."""
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import record
from dkdssd import dsp, experiment, runner
from dkdssd import tensor as T
from dkdssd.config import toy_config, wiring
from dkdssd.distill import System, Trainer, kd_loss, ssd_loss
from dkdssd.enhancer import se_loss
from dkdssd.gradcheck import check_directional, check_op
from dkdssd.tensor import Tensor

from helpers import micro_batch, micro_cfg
from test_dsp import interior_error_db, naive_stft
from test_metrics import brute_force_eer
from test_models import _random_fusion, fusion_oracle
from test_tensor import OPS

ORDERING_SEEDS = (17, 18, 19)
ORDERING_EPOCHS = 6
ORDERING_BUDGET_S = 30 * 60


# ---------------------------------------------------------------------------
# 1. gradients
# ---------------------------------------------------------------------------

GRAPH_DSP_OPS = {
    "lowband_logmag_graph": (
        lambda x: dsp.lowband_logmag_graph(x, dsp.LowbandSpec(dsp.StftGeometry(64, 32, "blackman"), 4000.0, 5)),
        lambda r: [r.standard_normal((1, 200))],
    ),
    "istft_graph": (
        lambda m: dsp.istft_graph(m, np.random.default_rng(3).uniform(-3, 3, (1, 33, 7)),
                                  dsp.StftGeometry(64, 32, "hann"), 200),
        lambda r: [r.uniform(0.1, 2.0, (1, 33, 7))],
    ),
}


def test_criterion_1_gradients():
    start = time.time()
    op_worst = {}
    for name, (fn, make) in {**OPS, **GRAPH_DSP_OPS}.items():
        op_worst[name] = max(check_op(fn, make(np.random.default_rng(s)), seed=s) for s in range(3))

    batch = micro_batch(3, n=2, length=3200)  # 0.2 s at 16 kHz
    loss_worst = {}
    # Attached teacher: every parameter, including the teacher's KD path.
    # Detached teacher (the training default): student parameters only, since
    # finite differences cannot see the stop-gradient.
    for detach in (False, True):
        system = System(wiring("dkdssd", detach_teacher=detach), micro_cfg(), seed=5, dtype=np.dtype("float64"))
        system.student_margin.step = system.teacher_margin.step = 10**4  # lambda at its floor
        named = [(k, p) for k, p in system.named_parameters() if not (detach and k.startswith("teacher."))]
        errs = check_directional(lambda: system(batch).L, [p for _, p in named], np.random.default_rng(0))
        loss_worst.update({f"{named[i][0]}@detach={detach}": e for i, e in errs.items()})

    elapsed = time.time() - start
    worst_op = max(op_worst, key=op_worst.get)
    worst_param = max(loss_worst, key=loss_worst.get)
    ok = op_worst[worst_op] < 1e-3 and loss_worst[worst_param] < 1e-3 and elapsed < 300
    record("1", ok, f"{len(op_worst)} ops worst {op_worst[worst_op]:.1e} ({worst_op}); full loss over "
                    f"{len(loss_worst)} parameter tensors worst {loss_worst[worst_param]:.1e}; {elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------------------
# 2. DSP
# ---------------------------------------------------------------------------

def test_criterion_2_dsp():
    rng = np.random.default_rng(2)
    dft_err = 0.0
    for n_fft, hop, kind in [(64, 16, "hann"), (320, 160, "hann"), (256, 100, "blackman"), (1728, 130, "blackman")]:
        x = rng.standard_normal(4000)
        dft_err = max(dft_err, np.abs(dsp.stft(x, n_fft, hop, kind) - naive_stft(x, n_fft, hop, kind)).max())
    rt_db = -np.inf
    for geom in (dsp.CLASSIFIER_GEOMETRY, dsp.ENHANCER_GEOMETRY):
        x = rng.standard_normal(16000)
        y = dsp.istft(dsp.stft(x, geom.n_fft, geom.hop, geom.window), geom.hop, geom.window, len(x))
        rt_db = max(rt_db, interior_error_db(x, y, geom.n_fft))
    snr_err = 0.0
    for _ in range(100):
        clean = rng.standard_normal(int(rng.integers(200, 4000))) * rng.uniform(0.01, 1)
        noise = rng.standard_normal(int(rng.integers(100, 6000))) * rng.uniform(0.01, 1)
        target = rng.uniform(-5, 25)
        mix = dsp.mix_at_snr(clean, noise, target, rng=rng)
        snr_err = max(snr_err, abs(dsp.snr_db(clean, mix.noisy - clean) - target))
    ok = dft_err <= 1e-9 and rt_db < -50 and snr_err < 1e-6
    record("2", ok, f"stft vs DFT {dft_err:.1e}; round trip {rt_db:.0f} dB; SNR error {snr_err:.1e} dB")
    assert ok


# ---------------------------------------------------------------------------
# 3. formulas
# ---------------------------------------------------------------------------

def _softmax(z, tau):
    e = [np.exp(v / tau) for v in z]
    return [v / sum(e) for v in e]


def _kl(p, q):
    return sum(pi * np.log(pi / qi) for pi, qi in zip(p, q))


def test_criterion_3_formulas():
    worst = dict.fromkeys(("fusion", "mse", "kl", "combination"), 0.0)
    direction_distinguished = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        fm, xe, xn = _random_fusion(seed)
        state = fm(Tensor(xe[None]), Tensor(xn[None]))
        for got, want in zip((state.xe_tilde, state.xn_tilde, state.mask, state.x_inter), fusion_oracle(fm, xe, xn)):
            worst["fusion"] = max(worst["fusion"], np.abs(got.data[0] - want).max())

        a, b = rng.normal(size=(9, 5)), rng.normal(size=(9, 5))
        mse = sum((a[f, t] - b[f, t]) ** 2 for f in range(9) for t in range(5)) / 45
        worst["mse"] = max(worst["mse"], abs(float(se_loss(a, b).data) - mse))

        tau = rng.uniform(0.5, 5)
        ys, yt = rng.normal(size=2) * 3, rng.normal(size=2) * 3
        forward = tau**2 * _kl(_softmax(yt, tau), _softmax(ys, tau))  # teacher is the target
        reverse = tau**2 * _kl(_softmax(ys, tau), _softmax(yt, tau))
        got = float(kd_loss(ys, yt, tau).data)
        worst["kl"] = max(worst["kl"], abs(got - forward))
        direction_distinguished += abs(got - reverse) > 1e-6 or abs(forward - reverse) <= 1e-6

        alpha, parts = rng.uniform(), rng.uniform(0, 3, size=3)
        want = (1 - alpha) * parts[0] + alpha * parts[1] + parts[2]
        worst["combination"] = max(worst["combination"], abs(ssd_loss(*parts, alpha) - want))
    ok = max(worst.values()) < 1e-6 and direction_distinguished == 20
    record("3", ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
           + f"; KL(teacher||student) implemented, reverse direction distinguished in {direction_distinguished}/20")
    assert ok


# ---------------------------------------------------------------------------
# 4. EER
# ---------------------------------------------------------------------------

def test_criterion_4_eer():
    from dkdssd.metrics import compute_eer

    mismatches = total = 0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        for n in range(2, 51):
            labels = ["bonafide", "spoof"] + list(rng.choice(["bonafide", "spoof"], size=n - 2))
            labels = [str(l) for l in rng.permutation(labels)]
            scores = list(np.round(rng.normal(size=n), int(rng.integers(0, 3))))  # rounding forces ties
            total += 1
            mismatches += compute_eer(scores, labels)[0] != brute_force_eer(scores, labels)
    record("4", mismatches == 0, f"{total - mismatches}/{total} trial sets agree exactly")
    assert mismatches == 0


# ---------------------------------------------------------------------------
# 5. ablation identities
# ---------------------------------------------------------------------------

def test_criterion_5_ablations():
    batch = micro_batch(0)
    out = System(wiring("dkdssd-ablation:no-kd"), micro_cfg(), seed=5)(batch)
    no_kd = float(out.L.data) == float((out.L_SL + out.L_TL + out.L_SE).data)

    cascade = System(wiring("cascade"), micro_cfg(), seed=5)
    cascade.zero_grad()
    T.backward(cascade(batch).L_SSD)
    enh = [p.grad for k, p in cascade.named_parameters() if k.startswith("enhancer.")]
    cascade_zero = all(g is None or not np.any(g) for g in enh)

    dk = System(wiring("dkdssd", alpha=0.0, with_if=False, with_se=False), micro_cfg(), seed=5)
    mct = System(wiring("mct2"), micro_cfg(), seed=5)
    a, b = Trainer(dk, 1e-3).step(batch), Trainer(mct, 1e-3).step(batch)
    after = dict(dk.named_parameters())
    bitwise = a["L_SL"] == b["L_SL"] and all(np.array_equal(after[k].data, p.data) for k, p in mct.named_parameters())
    ok = no_kd and cascade_zero and bitwise
    record("5", ok, f"no-KD sum exact: {no_kd}; cascade enhancer grad zero: {cascade_zero}; "
                    f"alpha=0/IF-off/SE-off equals MCT2 bitwise: {bitwise}")
    assert ok


# ---------------------------------------------------------------------------
# 6-7. ordering experiment
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def ordering(tmp_path_factory):
    workdir = tmp_path_factory.mktemp("ordering")
    start = time.time()
    experiment.prepare_corpus(workdir, {"train": 400, "dev": 100, "eval": 200})
    results = [experiment.run_seed(workdir, s, epochs=ORDERING_EPOCHS) for s in ORDERING_SEEDS]
    elapsed = time.time() - start
    summary = experiment.summary_tsv(results)
    Path(workdir / "summary.tsv").write_text(summary)
    print("\n" + summary)
    return results, elapsed


def test_criterion_6a_noise_hurts_noise_free(ordering):
    results, elapsed = ordering
    clean = np.mean([r.eer[("noise-free", "eval_clean")] for r in results])
    zero_db = np.mean([r.eer_unseen_0db["noise-free"] for r in results])
    ok = zero_db - clean >= 0.10
    record("6a", ok, f"noise-free clean {100 * clean:.1f}% vs unseen 0 dB {100 * zero_db:.1f}% "
                     f"(gap {100 * (zero_db - clean):.1f} points)")
    assert ok


def test_criterion_6b_dkdssd_ordering(ordering):
    results, _ = ordering
    held, cells = 0, []
    for r in results:
        dk = r.eer[("dkdssd", "eval_unseen")]
        cas = r.eer[("cascade", "eval_unseen")]
        nokd = r.eer[("dkdssd-ablation:no-kd", "eval_unseen")]
        held += dk <= cas and dk <= nokd
        cells.append(f"seed {r.seed}: {100 * dk:.1f} / {100 * cas:.1f} / {100 * nokd:.1f}")
    ok = held >= 2
    record("6b", ok, f"held in {held}/3 seeds (unseen EER % dkdssd / cascade / no-kd: {'; '.join(cells)})")
    assert ok


def test_criterion_6c_clean_eval_and_budget(ordering):
    results, elapsed = ordering
    clean = {v: np.mean([r.eer[(v, "eval_clean")] for r in results]) for v in experiment.ORDERING_VARIANTS}
    ok = max(clean.values()) <= 0.05 and elapsed <= ORDERING_BUDGET_S
    record("6c", ok, "clean EER " + ", ".join(f"{v} {100 * e:.1f}%" for v, e in clean.items())
           + f"; experiment took {elapsed / 60:.1f} min of {ORDERING_BUDGET_S // 60}")
    assert ok


def test_criterion_7_mask_favours_noisy_branch(ordering):
    results, _ = ordering
    means = [r.mask_mean for r in results]
    ok = float(np.mean(means)) > 0.5
    record("7", ok, f"pooled mask mean {np.mean(means):.3f} (per seed {', '.join(f'{m:.3f}' for m in means)})")
    assert ok


# ---------------------------------------------------------------------------
# 8. determinism
# ---------------------------------------------------------------------------

def _run_small(root: Path) -> dict[str, bytes]:
    cfg = toy_config(output_dir=root / "runs", corpus_dir=root / "toy", seed=23)
    cfg.dsp.segment_samples = 4800
    cfg.train.epochs = 2
    cfg.train.workers = 3
    runner.gen_toy(cfg, {"train": 16, "dev": 4, "eval": 10})
    runner.simulate(cfg)
    runner.train(cfg)
    runner.evaluate(cfg)
    runner.maskstats(cfg)
    out = runner.variant_dir(cfg)
    files = [p for p in sorted(out.rglob("*")) if p.is_file() and p.name != "config.ini"]
    files += sorted((root / "runs" / "manifests").glob("*.tsv"))
    return {str(p.relative_to(root)): p.read_bytes() for p in files}


def test_criterion_8_determinism(tmp_path):
    a = _run_small(tmp_path / "a")
    b = _run_small(tmp_path / "b")
    differing = sorted(k for k in a if a[k] != b.get(k))
    ok = a.keys() == b.keys() and not differing and any(k.endswith("metrics.tsv") for k in a)
    record("8", ok, f"{len(a)} files compared byte for byte (logs, checkpoints, scores, reports); differing: {differing}")
    assert ok
