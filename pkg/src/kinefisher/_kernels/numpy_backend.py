"""Pure-numpy implementations of the hot kernels.

Same call signatures as the compiled module; selected automatically when
the extension is unavailable. All reductions are plain numpy sums, so
results are deterministic for a fixed numpy build.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def bingham_logsum(a1, a2, a3, a4, x1sq, x2sq, x3sq, x4sq, w):
    """sum_i w_i * exp(-(a1*x1sq + a2*x2sq + a3*x3sq + a4*x4sq))_i.

    Callers pre-shift the coefficients so every a is >= 0 (the exponent is
    then <= 0 and exp cannot overflow).
    """
    t = a1 * x1sq + a2 * x2sq
    t += a3 * x3sq
    t += a4 * x4sq
    np.negative(t, out=t)
    e = np.exp(t, out=t)
    e *= w
    return float(e.sum())


def bingham_moments(a1, a2, a3, a4, x1sq, x2sq, x3sq, x4sq, w):
    """Weighted sums needed by the normalizer and its first two derivatives.

    Returns (i0, m2, m3, m4, p22, p33, p44, p23, p24, p34) where
    i0 = sum w e, m_k = sum w e x_k^2, p_jk = sum w e x_j^2 x_k^2,
    with e = exp(-(a . xsq)). Same shift precondition as bingham_logsum.
    """
    t = a1 * x1sq + a2 * x2sq
    t += a3 * x3sq
    t += a4 * x4sq
    np.negative(t, out=t)
    e = np.exp(t, out=t)
    e *= w
    e2 = e * x2sq
    e3 = e * x3sq
    e4 = e * x4sq
    return (
        float(e.sum()),
        float(e2.sum()),
        float(e3.sum()),
        float(e4.sum()),
        float((e2 * x2sq).sum()),
        float((e3 * x3sq).sum()),
        float((e4 * x4sq).sum()),
        float((e2 * x3sq).sum()),
        float((e2 * x4sq).sum()),
        float((e3 * x4sq).sum()),
    )


def envelope_max_log_ratio(a2, a3, a4, b, log_m, x):
    """max over unit rows x of  -x'Ax + 2*log(x' Omega x) - log_m.

    A = diag(0, a2, a3, a4), Omega = I + (2/b) A. Nonpositive everywhere
    when the envelope constant is valid.
    """
    xsq = x * x
    t = xsq[:, 1] * a2 + xsq[:, 2] * a3 + xsq[:, 3] * a4
    omega_quad = 1.0 + (2.0 / b) * t
    return float(np.max(-t + 2.0 * np.log(omega_quad) - log_m))
