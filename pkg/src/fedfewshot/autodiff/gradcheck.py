"""Central finite-difference oracle for gradient checks.

The oracle only ever calls the forward function; it never touches the tape.
For float32 tensors the perturbed points ``x +- h`` are rounded to float32,
but the forward pass at those points may be evaluated in float64
(``oracle_dtype``) so the difference quotient is not swamped by float32
roundoff.
"""

import contextlib

import numpy as np

from .tensor import default_dtype, no_grad


def numerical_grad(fn, arrays, h, grid_dtypes=None):
    """d fn() / d array for each array in ``arrays`` via central differences.

    ``fn`` must re-read the arrays' current contents on every call; entries are
    perturbed in place and restored. ``grid_dtypes`` rounds the perturbed
    points to a coarser dtype than the arrays themselves.
    """
    grids = grid_dtypes or [arr.dtype for arr in arrays]
    grads = []
    for arr, grid in zip(arrays, grids):
        grad = np.zeros(arr.shape, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            hi = float(np.asarray(orig + h, dtype=grid))
            lo = float(np.asarray(orig - h, dtype=grid))
            flat[i] = hi
            up = float(fn())
            flat[i] = lo
            down = float(fn())
            flat[i] = orig
            gflat[i] = (up - down) / (hi - lo)
        grads.append(grad)
    return grads


def relative_error(analytic, numeric, floor):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def check_gradients(build_loss, tensors, h, floor, oracle_dtype=None):
    """Compare tape gradients of ``tensors`` with finite differences.

    ``build_loss()`` returns a scalar Tensor computed from ``tensors``.
    Returns the maximum elementwise relative error.
    """
    for t in tensors:
        t.grad = None
    loss = build_loss()
    loss.backward()
    analytic = [t.grad.copy() for t in tensors]
    for t in tensors:
        t.grad = None

    originals = [t.data for t in tensors]
    grids = [a.dtype for a in originals]
    if oracle_dtype is not None:
        for t in tensors:
            t.data = t.data.astype(oracle_dtype)
    scope = default_dtype(oracle_dtype) if oracle_dtype is not None else contextlib.nullcontext()
    try:
        with no_grad(), scope:
            numeric = numerical_grad(
                lambda: build_loss().item(), [t.data for t in tensors], h, grids
            )
    finally:
        for t, orig in zip(tensors, originals):
            t.data = orig
    return max(float(relative_error(a, n, floor).max()) for a, n in zip(analytic, numeric))
