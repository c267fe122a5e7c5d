"""Central-difference verification of taped gradients.

Analytic gradients come from one backward pass; numeric ones perturb each
parameter element by +/-eps and re-run the closure. The reported figure is
max over elements of |analytic - numeric| / max(1, |numeric|).
"""

from __future__ import annotations

import numpy as np

from genvc.errors import NumericError
from genvc.numerics.tensor import Parameter, Tensor


def grad_check(f, params: list[Parameter], eps: float = 1e-5) -> float:
    if not 1e-6 <= eps <= 1e-3:
        raise NumericError(f"grad_check eps {eps} outside [1e-6, 1e-3]")
    out = f()
    if not isinstance(out, Tensor) or out.size != 1:
        raise NumericError("grad_check closure must return a scalar Tensor")
    if not np.isfinite(out.data):
        raise NumericError("grad_check closure returned a non-finite value")
    for p in params:
        p.zero_grad()
    out.backward()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            f_plus = float(f().data)
            flat[i] = keep - eps
            f_minus = float(f().data)
            flat[i] = keep
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError("grad_check closure returned a non-finite value")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(ana_flat[i] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
    return worst
