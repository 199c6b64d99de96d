"""
Checking gradients by finite differences
=========================================

Every op in the autodiff engine is checked against central differences in
double precision. A hand-written example comes first, then the full sweep.
"""

import numpy as np

from mpasal.autodiff import Tensor, check_gradients, ops, precision
from mpasal.gradsuite import gradcheck_suite

rng = np.random.default_rng(0)

# a single strided convolution, checked by hand
with precision(np.float64):
    x = Tensor(rng.uniform(-1, 1, (1, 2, 6, 6)), requires_grad=True)
    w = Tensor(rng.uniform(-1, 1, (3, 2, 3, 3)), requires_grad=True)
    r = rng.normal(size=(1, 3, 3, 3))
    result = check_gradients(lambda: ops.sum(ops.mul(ops.conv2d(x, w, None, 2, 1), Tensor(r))),
                             {"x": x, "weight": w})
print("conv2d: passed=%s max_rel_err=%.2e over %d coordinates"
      % (result.passed, result.max_error, result.checked))

# the whole sweep: every op family plus a tiny end-to-end network
report = gradcheck_suite(seed=0)
print("suite passed:", report.passed)
