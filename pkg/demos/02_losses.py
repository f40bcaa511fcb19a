# coding: utf-8

# # The pieces of the training objective

import numpy as np

from dkdssd import tensor as T
from dkdssd.classifier import MarginConfig, hard_loss
from dkdssd.distill import kd_loss, ssd_loss
from dkdssd.fusion import InteractiveFusion
from dkdssd.tensor import Tensor


# ## Soft targets
#
# Logits are divided by a temperature before the softmax. The distillation
# loss is the KL divergence from the teacher distribution to the student's,
# scaled by tau squared so its gradient stays comparable across temperatures.

y_s = np.array([[2.0, 0.0]])
y_t = np.array([[0.0, 0.0]])
for tau in (1.0, 3.0, 10.0):
    print(f"tau={tau:4}: KD = {float(kd_loss(y_s, y_t, tau).data):.6f}")

# Swapping the arguments gives a different number, since KL is asymmetric.

print("student as target instead:", float(kd_loss(y_t, y_s, 3.0).data))


# ## Hard loss with an angular margin
#
# With m=2 the true-class logit is pushed towards ||x|| cos(2 theta). The
# blend weight lambda starts at 1000, so early training is almost plain
# cross-entropy, and decays by 0.99 per step down to 5.

rng = np.random.default_rng(1)
logits = Tensor(rng.normal(size=(4, 2)))
norm = Tensor(np.full((4, 1), 2.0))
labels = np.array([0, 1, 0, 1])
for step in (0, 200, 1000):
    margin = MarginConfig(step=step)
    print(f"step {step:4d}: lambda {margin.lam:7.2f}  loss {float(hard_loss(logits, labels, margin, norm).data):.4f}")


# ## Combining the terms
#
# The student's hard loss and the distillation loss are traded off by alpha,
# the teacher's own loss is added unweighted.

print("alpha=0.05, (1.0, 2.0, 0.5):", ssd_loss(1.0, 2.0, 0.5, 0.05))


# ## Interactive fusion
#
# Two feature maps of the same shape go in. A channel-interaction step mixes
# them, then a spatial mask M picks, per time-frequency cell, how much of the
# noisy branch to keep. With the mask convolution at zero, M is exactly 0.5.

fm = InteractiveFusion(4, 7, rng=np.random.default_rng(2))
xe = Tensor(rng.normal(size=(1, 4, 6, 8)))
xn = Tensor(rng.normal(size=(1, 4, 6, 8)))
with T.no_grad():
    state = fm(xe, xn)
print("mask range at init:", state.mask.data.min(), state.mask.data.max())
print("fused shape:", state.x_inter.shape)
