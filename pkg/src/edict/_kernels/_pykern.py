"""Pure-numpy implementations of the per-step kernels.

These five functions are the hot inner loop of every sampler: the affine
coupling line, its algebraic inverse, the mixing/dilating pair, and the
Gaussian-mixture noise predictor.  The compiled backend in ``_ckern.pyx``
implements the same signatures; either may be active at runtime, so all
operations here must keep strict IEEE-754 semantics (no reassociation
tricks) for the inversion guarantees to hold.

All array arguments are flat, C-contiguous float64; scalars are Python
floats.  Shape handling lives one level up.
"""

import math

import numpy as np

NAME = "python"


def axpby(a, x, b, e):
    """a*x + b*e elementwise.  Exact identity for a=1, b=0."""
    return a * x + b * e


def inv_axpby(a, z, b, e):
    """(z - b*e)/a elementwise, the exact algebraic inverse of axpby."""
    return (z - b * e) / a


def mix(p, x, y):
    """Convex combination p*x + (1-p)*y.

    Computed as x + (1-p)*(y-x) so that x == y returns x bitwise for any p,
    which keeps a coupled pair with equal members exactly on the uncoupled
    trajectory.
    """
    return x + (1.0 - p) * (y - x)


def unmix(p, xm, y):
    """(xm - (1-p)*y)/p, the dilating inverse of mix."""
    return (xm - (1.0 - p) * y) / p


def gauss_mixture_eps(x, means, variances, log_weights, abar, label):
    """Posterior-mean noise prediction for Gaussian-mixture data.

    With data drawn from component k and noised to level abar, the optimal
    prediction is sqrt(1-abar)*(x - sqrt(abar)*mu_k) / (abar*var_k + 1-abar).
    label >= 0 selects that single component; label < 0 marginalizes over
    the mixture with responsibility weights computed stably in log space.
    """
    sa = math.sqrt(abar)
    s1a = math.sqrt(1.0 - abar)
    post_var = abar * variances + (1.0 - abar)
    if label >= 0:
        return (s1a / post_var[label]) * (x - sa * means[label])
    diffs = x[np.newaxis, :] - sa * means
    d2 = np.einsum("kd,kd->k", diffs, diffs)
    logits = log_weights - 0.5 * x.size * np.log(post_var) - d2 / (2.0 * post_var)
    top = np.max(logits)
    if math.isfinite(top):
        resp = np.exp(logits - top)
        resp /= resp.sum()
    else:
        # Degenerate (overflowed or non-finite) state: fall back to prior
        # weights so divergence runs keep propagating data instead of NaN-ing
        # out inside the predictor.
        resp = np.exp(log_weights - np.max(log_weights))
        resp /= resp.sum()
    return s1a * ((resp / post_var) @ diffs)
