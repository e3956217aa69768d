"""Deterministic single-track sampler and its approximate inversion.

One denoising step is the affine update x_lo = a*x_hi + b*eps(x_hi, t_hi)
with the coefficients from schedule.coeffs.  Inverting it exactly would
need eps at the unknown higher-noise state; the standard approximation
evaluates the model at the state already in hand instead:

    x_hi = (x_lo - b*eps(x_lo, t_hi)) / a

That substitution is the whole source of this sampler's round-trip error,
which the coupled sampler in ``coupled`` removes.  No fixed-point refinement
is attempted here; this module is the plain baseline.
"""

from dataclasses import dataclass

from . import _kernels as K
from .eps_models import Condition, GuidanceConfig, guided_predict
from .tensor_io import Tensor


@dataclass
class Trajectory:
    """States visited by one sampler run, as (t, Tensor) pairs in visit order."""

    direction: str  # "denoise" or "invert"
    points: list

    @property
    def final(self):
        return self.points[-1][1]

    @property
    def start(self):
        return self.points[0][1]


def ddim_step(x, coeffs, model, cond, guidance):
    """One denoising step t_hi -> t_lo."""
    eps = guided_predict(model, x, coeffs.t_hi, cond, guidance)
    return Tensor(x.shape, K.axpby(coeffs.a, x.data, coeffs.b, eps.data))


def ddim_invert_step(x, coeffs, model, cond, guidance):
    """One approximate noising step t_lo -> t_hi (model queried at x, t_hi)."""
    eps = guided_predict(model, x, coeffs.t_hi, cond, guidance)
    return Tensor(x.shape, K.inv_axpby(coeffs.a, x.data, coeffs.b, eps.data))


def _resolve(cond, guidance):
    cond = Condition.NULL if cond is None else cond
    guidance = GuidanceConfig() if guidance is None else guidance
    return cond, guidance


def ddim_sample(x_start, schedule, model, cond=None, guidance=None,
                num_steps=None, store_all=False):
    """Denoise from the top of the selected schedule down to t = 0.

    With num_steps=m only the first m step pairs are walked, so x_start must
    sit at t = schedule.bounds()[m]; the default walks the full subsequence
    from its highest timestep.
    """
    cond, guidance = _resolve(cond, guidance)
    pairs = schedule.pairs()
    num_steps = len(pairs) if num_steps is None else num_steps
    if not 0 <= num_steps <= len(pairs):
        raise ValueError(f"num_steps must be in [0, {len(pairs)}], got {num_steps}")
    x = x_start
    points = [(schedule.bounds()[num_steps], x)]
    for t_lo, t_hi in reversed(pairs[:num_steps]):
        x = ddim_step(x, schedule.coeffs(t_hi, t_lo), model, cond, guidance)
        if store_all:
            points.append((t_lo, x))
    if not store_all:
        points.append((pairs[0][0] if num_steps else points[0][0], x))
    return Trajectory(direction="denoise", points=points)


def ddim_invert(x0, schedule, model, cond=None, guidance=None,
                num_steps=None, store_all=False):
    """Noise from t = 0 up the selected schedule (first num_steps pairs)."""
    cond, guidance = _resolve(cond, guidance)
    pairs = schedule.pairs()
    num_steps = len(pairs) if num_steps is None else num_steps
    if not 0 <= num_steps <= len(pairs):
        raise ValueError(f"num_steps must be in [0, {len(pairs)}], got {num_steps}")
    x = x0
    points = [(pairs[0][0] if num_steps else 0, x)]
    for t_lo, t_hi in pairs[:num_steps]:
        x = ddim_invert_step(x, schedule.coeffs(t_hi, t_lo), model, cond, guidance)
        if store_all:
            points.append((t_hi, x))
    if not store_all:
        points.append((schedule.bounds()[num_steps], x))
    return Trajectory(direction="invert", points=points)
