"""Exactly invertible coupled sampler.

The sampler tracks two states (x, y) that estimate the same underlying
trajectory.  One denoising step applies an affine coupling block followed by
an averaging pair:

    x_inter = a*x + b*eps(y, t_hi)
    y_inter = a*y + b*eps(x_inter, t_hi)
    x_next  = p*x_inter + (1-p)*y_inter
    y_next  = p*y_inter + (1-p)*x_next

Each line writes one sequence in terms of quantities that are all available
when the line is undone, so the whole block inverts in closed form (bottom
to top, divisions instead of multiplications) with no approximation:

    y_inter = (y_next - (1-p)*x_next) / p
    x_inter = (x_next - (1-p)*y_inter) / p
    y       = (y_inter - b*eps(x_inter, t_hi)) / a
    x       = (x_inter - b*eps(y, t_hi)) / a

Note the fourth averaging line mixes y_inter with the already-averaged
x_next; that asymmetry is what keeps the block triangular and therefore
invertible.  All four model queries of a step pair use the pair's higher
timestep, in both directions.

The roles of x and y alternate from step to step so neither sequence drifts
ahead of the other.  CoupledState carries that parity as ``flip`` and the
step functions maintain it: every step flips it, a denoise step applies the
block with the parity it reads, a noise step applies the inverse block with
the flipped parity.  Chaining steps in either order therefore undoes parity
correctly with no external bookkeeping.

The averaging lines contract the gap between x and y by p each, and their
inverses dilate by 1/p.  Long runs of pure dilation amplify float roundoff
exponentially, which is why p close to 1 is required for stable generation
round trips; the trace recorded by the drivers makes that visible.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .eps_models import Condition, GuidanceConfig, guided_predict
from .tensor_io import Tensor


def _check_p(p):
    if not 0.0 < p <= 1.0:
        raise ValueError(f"mixing weight p must be in (0, 1], got {p}")


def cosine_similarity(u, v):
    """Cosine of the angle between two flattened tensors; 0 when degenerate."""
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch: {u.shape} vs {v.shape}")
    a, b = u.data, v.data
    nu = float(a @ a)
    nv = float(b @ b)
    if nu == 0.0 or nv == 0.0 or not (math.isfinite(nu) and math.isfinite(nv)):
        return 0.0
    return float(a @ b) / math.sqrt(nu * nv)


def mix(x, y, p):
    """p*x + (1-p)*y elementwise; returns x bitwise when x equals y."""
    _check_p(p)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return Tensor(x.shape, K.mix(p, x.data, y.data))


def unmix(x_mixed, y, p):
    """Inverse of mix in its first argument: (x_mixed - (1-p)*y) / p."""
    _check_p(p)
    if x_mixed.shape != y.shape:
        raise ValueError(f"shape mismatch: {x_mixed.shape} vs {y.shape}")
    return Tensor(x_mixed.shape, K.unmix(p, x_mixed.data, y.data))


def scale_p(base_p, base_steps, steps):
    """Transfer a mixing weight across step counts, keeping p**steps fixed."""
    _check_p(base_p)
    if base_steps < 1 or steps < 1:
        raise ValueError("step counts must be >= 1")
    return base_p ** (base_steps / steps)


@dataclass
class CoupledState:
    """The sampler state: two tensors, their timestep, and role parity."""

    x: Tensor
    y: Tensor
    t: int
    flip: bool = False

    def __post_init__(self):
        if self.x.shape != self.y.shape:
            raise ValueError(f"shape mismatch: {self.x.shape} vs {self.y.shape}")

    @classmethod
    def paired(cls, x, t, flip=False):
        """Both members initialized to the same tensor."""
        return cls(x=x, y=x, t=t, flip=flip)

    def gap_norm(self):
        return float(np.linalg.norm(self.x.data - self.y.data))

    def all_finite(self):
        return self.x.all_finite() and self.y.all_finite()


def _forward_block(x, y, coeffs, model, cond, guidance, p):
    e1 = guided_predict(model, y, coeffs.t_hi, cond, guidance)
    x_i = Tensor(x.shape, K.axpby(coeffs.a, x.data, coeffs.b, e1.data))
    e2 = guided_predict(model, x_i, coeffs.t_hi, cond, guidance)
    y_i = Tensor(y.shape, K.axpby(coeffs.a, y.data, coeffs.b, e2.data))
    x_n = Tensor(x.shape, K.mix(p, x_i.data, y_i.data))
    y_n = Tensor(y.shape, K.mix(p, y_i.data, x_n.data))
    return x_n, y_n


def _inverse_block(x, y, coeffs, model, cond, guidance, p):
    y_i = Tensor(y.shape, K.unmix(p, y.data, x.data))
    x_i = Tensor(x.shape, K.unmix(p, x.data, y_i.data))
    e2 = guided_predict(model, x_i, coeffs.t_hi, cond, guidance)
    y_hi = Tensor(y.shape, K.inv_axpby(coeffs.a, y_i.data, coeffs.b, e2.data))
    e1 = guided_predict(model, y_hi, coeffs.t_hi, cond, guidance)
    x_hi = Tensor(x.shape, K.inv_axpby(coeffs.a, x_i.data, coeffs.b, e1.data))
    return x_hi, y_hi


def edict_denoise_step(state, coeffs, model, cond, guidance, p):
    """One coupled denoising step t_hi -> t_lo, flipping parity."""
    _check_p(p)
    if state.flip:
        y_n, x_n = _forward_block(state.y, state.x, coeffs, model, cond, guidance, p)
    else:
        x_n, y_n = _forward_block(state.x, state.y, coeffs, model, cond, guidance, p)
    return CoupledState(x=x_n, y=y_n, t=coeffs.t_lo, flip=not state.flip)


def edict_noise_step(state, coeffs, model, cond, guidance, p):
    """One coupled noising step t_lo -> t_hi, the exact inverse of denoising."""
    _check_p(p)
    if not state.flip:
        y_h, x_h = _inverse_block(state.y, state.x, coeffs, model, cond, guidance, p)
    else:
        x_h, y_h = _inverse_block(state.x, state.y, coeffs, model, cond, guidance, p)
    return CoupledState(x=x_h, y=y_h, t=coeffs.t_hi, flip=not state.flip)


@dataclass
class TraceRow:
    """Pair health at one point of a coupled run."""

    step: int
    t: int
    cos_xy: float
    norm_x: float
    norm_y: float
    gap_norm: float

    def is_flagged(self, threshold=0.5):
        finite = (
            math.isfinite(self.norm_x)
            and math.isfinite(self.norm_y)
            and math.isfinite(self.gap_norm)
        )
        return self.cos_xy < threshold or not finite


class CoupledTrace:
    """Per-step TraceRows recorded by the coupled drivers."""

    def __init__(self, rows):
        self.rows = list(rows)

    def min_cos(self):
        return min(row.cos_xy for row in self.rows)

    def first_flagged(self, threshold=0.5):
        """Step index of the first unhealthy row, or None."""
        for row in self.rows:
            if row.is_flagged(threshold):
                return row.step
        return None

    def to_csv(self, path):
        with open(path, "w", encoding="ascii") as fh:
            fh.write("# schema: trace_v1\n")
            fh.write("step,t,cos_sim_xy,norm_x,norm_y,gap_norm\n")
            for r in self.rows:
                fh.write(
                    f"{r.step},{r.t},{r.cos_xy!r},{r.norm_x!r},{r.norm_y!r},{r.gap_norm!r}\n"
                )


def _trace_row(step, state):
    return TraceRow(
        step=step,
        t=state.t,
        cos_xy=cosine_similarity(state.x, state.y),
        norm_x=float(np.linalg.norm(state.x.data)),
        norm_y=float(np.linalg.norm(state.y.data)),
        gap_norm=state.gap_norm(),
    )


def _resolve(cond, guidance):
    cond = Condition.NULL if cond is None else cond
    guidance = GuidanceConfig() if guidance is None else guidance
    return cond, guidance


def _as_state(state, t, flip):
    if isinstance(state, Tensor):
        return CoupledState.paired(state, t=t, flip=flip)
    return state


def edict_denoise(state, schedule, model, cond=None, guidance=None, p=0.93,
                  num_steps=None, flip=False):
    """Run coupled denoising down to t = 0 (or num_steps pairs of it).

    ``state`` is a CoupledState at t = schedule.bounds()[num_steps], or a
    bare Tensor to be paired there with the given starting parity.  Returns
    (final state, trace).
    """
    cond, guidance = _resolve(cond, guidance)
    pairs = schedule.pairs()
    m = len(pairs) if num_steps is None else num_steps
    if not 0 <= m <= len(pairs):
        raise ValueError(f"num_steps must be in [0, {len(pairs)}], got {num_steps}")
    state = _as_state(state, t=schedule.bounds()[m], flip=flip)
    rows = [_trace_row(0, state)]
    for i, (t_lo, t_hi) in enumerate(reversed(pairs[:m])):
        coeffs = schedule.coeffs(t_hi, t_lo)
        state = edict_denoise_step(state, coeffs, model, cond, guidance, p)
        rows.append(_trace_row(i + 1, state))
    return state, CoupledTrace(rows)


def edict_invert(state, schedule, model, cond=None, guidance=None, p=0.93,
                 num_steps=None, flip=False):
    """Run coupled noising up from t = 0 (first num_steps pairs).

    ``state`` is a CoupledState at t = 0, or a bare Tensor to be paired
    there.  Exactly undoes edict_denoise run with the same arguments.
    Returns (final state, trace).
    """
    cond, guidance = _resolve(cond, guidance)
    pairs = schedule.pairs()
    m = len(pairs) if num_steps is None else num_steps
    if not 0 <= m <= len(pairs):
        raise ValueError(f"num_steps must be in [0, {len(pairs)}], got {num_steps}")
    state = _as_state(state, t=0, flip=flip)
    rows = [_trace_row(0, state)]
    for i, (t_lo, t_hi) in enumerate(pairs[:m]):
        coeffs = schedule.coeffs(t_hi, t_lo)
        state = edict_noise_step(state, coeffs, model, cond, guidance, p)
        rows.append(_trace_row(i + 1, state))
    return state, CoupledTrace(rows)
