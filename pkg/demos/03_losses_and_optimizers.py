"""The loss family (DL, CE, LC, DL+CE) and the optimizer zoo (Adam, RAdam,
Lookahead combinations) on a small segmentation problem.

Run:  python3 demos/03_losses_and_optimizers.py
"""

import numpy as np

from gliomaseg.autodiff import ParamSet, backward
from gliomaseg.layers import softmax_channels
from gliomaseg.losses import LOSSES, one_hot
from gliomaseg.optim import OPTIMIZER_NAMES, make_optimizer

rng = np.random.default_rng(3)
labels = rng.integers(0, 4, size=(1, 6, 6, 6))
target = one_hot(labels, 4)

# -- probe every loss at the same fixed prediction --------------------------
ps = ParamSet()
logits = ps.register("z", rng.normal(size=(1, 6, 6, 6, 4)))
probs = softmax_channels(logits)
print("loss values at a random prediction:")
for name, fn in LOSSES.items():
    print(f"  {name:6s} {float(fn(probs, target).data):.4f}")

# -- race the optimizers on the LC loss -------------------------------------
print("\nLC loss after 150 steps, by optimizer:")
for opt_name in OPTIMIZER_NAMES:
    ps = ParamSet()
    z = ps.register("z", np.zeros((1, 6, 6, 6, 4)))
    opt = make_optimizer(opt_name, lr=0.05)
    for _ in range(150):
        loss = LOSSES["LC"](softmax_channels(z), target)
        backward(loss)
        theta = opt.step(ps.flatten().astype(np.float64), ps.grad_flat())
        ps.set_flat(theta)
        ps.zero_grad()
    final = float(LOSSES["LC"](softmax_channels(z), target).data)
    print(f"  {opt_name:5s} {final:.5f}")
