"""Tour of the reverse-mode autodiff engine the networks are built on.

The engine records a tape of Tensor nodes; backward() walks it once in
topological order.  Every op ships an analytic vector-Jacobian product,
audited against central finite differences.

Run:  python3 demos/02_autodiff_engine.py
"""

import numpy as np

from gliomaseg import autodiff as ad
from gliomaseg.autodiff import ParamSet, Tensor, backward, no_grad
from gliomaseg.gradcheck import finite_diff_check, gradient_suite

# -- a scalar chain, differentiated by hand vs by tape ----------------------
x = ad.Parameter(np.array(0.7), name="x")
y = ad.mul(ad.exp(x), ad.add(x, 1.0))          # f = e^x (x + 1)
backward(y)
analytic = np.exp(0.7) * (0.7 + 2.0)           # f' = e^x (x + 2)
print(f"f'(0.7): tape {float(x.grad):.10f}, by hand {analytic:.10f}")

# -- a 3D convolution with gradient check -----------------------------------
rng = np.random.default_rng(0)
ps = ParamSet()
xt = ps.register("x", rng.normal(size=(1, 4, 4, 4, 2)))
wt = ps.register("w", rng.normal(size=(3, 3, 3, 2, 2)) * 0.3)


def f(_ps):
    out = ad.conv3d(xt, wt, stride=2, padding="same")
    return ad.reduce_sum(ad.mul(out, out))


err = finite_diff_check(f, ps)
print(f"conv3d stride-2 'same' gradcheck max relative error: {err:.2e}")

# -- inference mode skips the tape entirely ---------------------------------
with no_grad():
    silent = ad.mul(xt, xt)
print(f"inside no_grad(): parents={silent.parents}, "
      f"backward_fn={silent.backward_fn}")

# -- the full audit used by `gliomaseg gradcheck` ---------------------------
results = gradient_suite(seed=0)
worst_name = max(results, key=results.get)
print(f"\nfull gradient suite: {len(results)} checks, "
      f"worst {worst_name} at {results[worst_name]:.2e}")
