"""Finite-difference gradient verification.

``grad_check`` compares reverse-mode gradients of a scalar-valued function
against central differences with step h = 1e-4, all in 64-bit.  The returned
figure is the worst relative error max(|g_ad - g_fd| / max(1, |g_fd|)) over
every element of every checked input.
"""

from __future__ import annotations

import numpy as np

from geoaware.errors import NumericError
from geoaware.numerics.tensor import Tensor, no_grad


def grad_check(f, inputs, step=1e-4):
    """Max relative error between reverse-mode and finite-difference gradients.

    ``f`` maps a list of Tensors to a scalar Tensor; ``inputs`` are arrays or
    Tensors whose gradients are checked (copied into float64 leaves first).
    """
    leaves = []
    for x in inputs:
        vals = x.values if isinstance(x, Tensor) else np.asarray(x)
        leaves.append(Tensor(vals.astype(np.float64), requires_grad=True))

    out = f(leaves)
    if out.size != 1:
        raise NumericError("grad_check target must be scalar")
    out.backward()
    analytic = []
    for leaf in leaves:
        if leaf.grad is None:
            analytic.append(np.zeros_like(leaf.values))
        else:
            analytic.append(leaf.grad.copy())

    def eval_at():
        with no_grad():
            return float(f(leaves).values.reshape(-1)[0])

    worst = 0.0
    for leaf, g_ad in zip(leaves, analytic):
        flat = leaf.values.reshape(-1)
        g_flat = g_ad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = eval_at()
            flat[i] = orig - step
            f_minus = eval_at()
            flat[i] = orig
            g_fd = (f_plus - f_minus) / (2.0 * step)
            if not np.isfinite(g_fd):
                raise NumericError("finite differences produced non-finite values")
            err = abs(g_flat[i] - g_fd) / max(1.0, abs(g_fd))
            if err > worst:
                worst = err
    return worst
