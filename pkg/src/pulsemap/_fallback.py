"""Pure-numpy implementations of the per-pixel kernels.

Every function here mirrors one in ``_kernels.pyx`` operation for
operation (same summation order, same promotion to float64 for
accumulation), so both backends agree bit-for-bit on float64 data.  The
one exception is the power in :func:`normalize`, where numpy's vectorized
``pow`` and the C library may round the last bit differently.  The
``threads`` argument is accepted for signature parity and ignored.
"""

import numpy as np

NAME = "python"


def temporal_paired(ring, order, weights, symmetric, out, threads=1):
    """Centered temporal convolution written in paired-difference form.

    ``ring[order[m]]`` is the frame at window position ``m``; the center is
    position ``r = len(weights)``.  Symmetric kernels use
    ``sum_k w_k * ((x[c-k] - x[c]) + (x[c+k] - x[c]))``, antisymmetric ones
    ``sum_k w_k * (x[c-k] - x[c+k])``.  Both are exact zero on constants.
    Integer rings are widened to ``out.dtype`` before differencing.
    """
    r = len(weights)
    at = lambda m: ring[order[m]].astype(out.dtype, copy=False)
    center = at(r)
    acc = np.zeros(out.shape, dtype=np.float64)
    for k in range(1, r + 1):
        before = at(r - k)
        after = at(r + k)
        if symmetric:
            d = (before - center) + (after - center)
        else:
            d = before - after
        acc += weights[k - 1] * d.astype(np.float64, copy=False)
    out[...] = acc


def _first_bad(y):
    bad = ~np.isfinite(y)
    if bad.any():
        return int(np.flatnonzero(bad.ravel())[0])
    return -1


def df1_step(x, xhist, yhist, nb, na, out, threads=1):
    """One frame of the direct-form-I recurrence.

    ``xhist`` holds past inputs and ``yhist`` (always float64) past outputs,
    most recent first.  Returns the flat index of the first non-finite
    output, or -1.
    """
    order = len(nb) - 1
    xs = xhist.astype(np.float64)
    y = nb[0] * x.astype(np.float64)
    for i in range(1, order + 1):
        y = y + nb[i] * xs[..., i - 1]
    for i in range(1, order + 1):
        y = y - na[i] * yhist[..., i - 1]
    xhist[..., 1:] = xhist[..., :-1]
    xhist[..., 0] = x
    yhist[..., 1:] = yhist[..., :-1]
    yhist[..., 0] = y
    out[...] = y
    return _first_bad(y)


def sos_step(x, state, sos, out, threads=1):
    """One frame through a cascade of transposed-direct-form-II biquads."""
    v = x.astype(np.float64)
    for s in range(sos.shape[0]):
        b0, b1, b2, _, a1, a2 = sos[s]
        z1 = state[..., 2 * s].astype(np.float64)
        z2 = state[..., 2 * s + 1].astype(np.float64)
        y = b0 * v + z1
        state[..., 2 * s] = (b1 * v - a1 * y) + z2
        state[..., 2 * s + 1] = b2 * v - a2 * y
        v = y
    out[...] = v
    return _first_bad(v)


def normalize(x, alpha, inv_gamma, out, threads=1):
    """Clamp((alpha*|x|)**inv_gamma, 0, 255); returns first NaN index or -1."""
    dt = x.dtype.type
    with np.errstate(invalid="ignore", over="ignore"):
        v = np.power(dt(alpha) * np.abs(x), dt(inv_gamma))
    nan = np.isnan(v)
    if nan.any():
        return int(np.flatnonzero(nan.ravel())[0])
    np.minimum(v, dt(255.0), out=out)
    return -1
