"""Central-difference gradient verification for any scalar tensor function."""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .tensor import Tape, Tensor, backward, no_grad, using_dtype


def grad_check(f, point, step=1e-4):
    """Max relative error between analytic and central-difference gradients.

    `f` maps one Tensor to a scalar Tensor. The check always runs in 64-bit:
    `point` is cast to float64 and so is everything derived from it. The
    error per coordinate is |analytic - numeric| / max(1, |analytic|).
    """
    # Copy unconditionally: the caller may also capture `point` as a constant
    # inside f, and the probe loop below mutates `base` in place.
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64, copy=True)

    with using_dtype(np.float64):
        x = Tensor(base.copy(), requires_grad=True, dtype=np.float64)
        with Tape():
            out = f(x)
            if out.size != 1:
                raise ContractError("grad_check needs a scalar-valued function")
            backward(out)
        analytic = np.zeros_like(base) if x.grad is None else x.grad.copy()

        numeric = np.zeros_like(base)
        flat = base.reshape(-1)
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                with Tape():
                    hi = f(Tensor(base.copy(), dtype=np.float64)).item()
                flat[i] = orig - step
                with Tape():
                    lo = f(Tensor(base.copy(), dtype=np.float64)).item()
                flat[i] = orig
                numeric.reshape(-1)[i] = (hi - lo) / (2.0 * step)

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))
