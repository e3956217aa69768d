"""Measurement harnesses: reconstruction error tables, mixing-weight
divergence sweeps, and step-to-step prediction alignment.

Everything here is pure measurement — runs are deterministic functions of
their inputs, divergence and non-finite blowups are recorded as data rather
than raised, and CSV emission uses fixed versioned headers so downstream
tooling can key on the schema comment line.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .coupled import (
    CoupledState,
    cosine_similarity,
    edict_denoise,
    edict_invert,
    edict_noise_step,
    scale_p,
)
from .ddim import Trajectory, ddim_invert, ddim_sample
from .eps_models import Condition, GuidanceConfig

__all__ = [
    "ReconRow",
    "AlignmentRow",
    "AlignmentTrace",
    "SweepResult",
    "cosine_similarity",
    "recon_benchmark",
    "recon_rows_to_csv",
    "divergence_sweep",
    "invert_trajectory",
    "pseudograd_alignment",
    "write_trace_svg",
]

RECON_METHODS = ("ddim_c", "ddim_uc", "edict_c", "edict_uc")


def _thread_count():
    # EDICT_THREADS > 1 parallelizes benchmark cells; unset/1 stays serial.
    raw = os.environ.get("EDICT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"EDICT_THREADS must be an integer, got {raw!r}") from exc
    return max(1, n)


# ---------------------------------------------------------------------------
# Reconstruction benchmark


@dataclass(frozen=True)
class ReconRow:
    """Average round-trip error for one (method, steps, guidance) cell."""

    method: str
    steps: int
    guidance: float
    mse: float
    n_inputs: int

    def __post_init__(self):
        if self.method not in RECON_METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not self.mse >= 0.0:  # NaN fails this too
            raise ValueError(f"mse must be >= 0, got {self.mse}")


def _finite_mse(recon, target):
    d = recon.data - target.data
    mse = float(d @ d) / d.size
    return mse if math.isfinite(mse) else math.inf


def _recon_cell(x0, cond, method, steps, guidance, schedule, model, p):
    """One input's round-trip MSE; non-finite blowups become inf, not errors."""
    sched = schedule.with_steps(steps) if steps != schedule.steps else schedule
    g = GuidanceConfig(guidance)
    with np.errstate(all="ignore"):
        if method.startswith("ddim"):
            inv = ddim_invert(x0, sched, model, cond=cond, guidance=g).final
            recon = ddim_sample(inv, sched, model, cond=cond, guidance=g).final
        else:
            # p is quoted at a 50-step run; rescale so the per-pair mixing
            # matches across step counts.
            p_eff = scale_p(p, 50, steps)
            inv, _ = edict_invert(x0, sched, model, cond=cond, guidance=g, p=p_eff)
            out, _ = edict_denoise(inv, sched, model, cond=cond, guidance=g, p=p_eff)
            recon = out.x
    return _finite_mse(recon, x0)


def recon_benchmark(inputs, schedule, model, conditions, guidance_grid,
                    steps_grid, p=0.93):
    """Invert-then-regenerate error table over methods x steps x guidance.

    ``conditions`` gives the per-input condition used by the _c methods; the
    _uc methods run fully unconditional.  Cells are independent, so they may
    run on a thread pool (EDICT_THREADS), but assembly is sorted and the
    result is byte-stable across thread counts.
    """
    if not inputs:
        raise ValueError("inputs must be nonempty")
    if len(conditions) != len(inputs):
        raise ValueError(
            f"got {len(conditions)} conditions for {len(inputs)} inputs"
        )
    cells = []
    for steps in steps_grid:
        for guidance in guidance_grid:
            for method in RECON_METHODS:
                for i, x0 in enumerate(inputs):
                    cond = conditions[i] if method.endswith("_c") else Condition.NULL
                    cells.append((method, steps, guidance, i, x0, cond))

    def run(cell):
        method, steps, guidance, i, x0, cond = cell
        return _recon_cell(x0, cond, method, steps, guidance, schedule, model, p)

    n_threads = _thread_count()
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            mses = list(pool.map(run, cells))
    else:
        mses = [run(cell) for cell in cells]

    totals = {}
    for (method, steps, guidance, _i, _x0, _cond), mse in zip(cells, mses):
        totals.setdefault((steps, guidance, method), []).append(mse)
    rows = []
    for (steps, guidance, method) in sorted(totals):
        per_input = totals[(steps, guidance, method)]
        rows.append(
            ReconRow(
                method=method,
                steps=steps,
                guidance=guidance,
                mse=math.fsum(per_input) / len(per_input),
                n_inputs=len(per_input),
            )
        )
    return rows


def recon_rows_to_csv(rows, path):
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# schema: bench_v1\n")
        fh.write("method,steps,guidance,mse,n\n")
        for r in rows:
            fh.write(f"{r.method},{r.steps},{r.guidance!r},{r.mse!r},{r.n_inputs}\n")


# ---------------------------------------------------------------------------
# Mixing-weight divergence sweep


@dataclass
class SweepResult:
    """Round-trip health for one (p, direction) cell of a sweep."""

    p: float
    direction: str  # "generation" | "inversion"
    trace: object  # CoupledTrace over both passes of the round trip
    flagged: bool
    min_cos: float
    first_flagged_step: object  # int | None


def _round_trip_trace(x, schedule, model, cond, guidance, p, direction):
    if direction == "generation":
        first, second = edict_denoise, edict_invert
    else:
        first, second = edict_invert, edict_denoise
    mid, trace_a = first(x, schedule, model, cond=cond, guidance=guidance, p=p)
    _, trace_b = second(mid, schedule, model, cond=cond, guidance=guidance, p=p)
    rows = list(trace_a.rows)
    offset = rows[-1].step
    for row in trace_b.rows[1:]:
        rows.append(
            type(row)(
                step=offset + row.step,
                t=row.t,
                cos_xy=row.cos_xy,
                norm_x=row.norm_x,
                norm_y=row.norm_y,
                gap_norm=row.gap_norm,
            )
        )
    return type(trace_a)(rows)


def divergence_sweep(x, schedule, model, p_grid, cond=None, guidance=None):
    """Probe round-trip stability of the coupled sampler across mixing weights.

    For each p, runs a generation round trip (denoise, then re-noise) and an
    inversion round trip (noise, then re-denoise) from the same tensor, and
    flags the cell when the pair's cosine similarity drops below 0.5 or any
    state stops being finite.  Divergence is the measurement, so blowups are
    captured in the trace instead of raised.
    """
    for p in p_grid:
        if not 0.0 < p <= 1.0:
            raise ValueError(f"p values must be in (0, 1], got {p}")
    results = []
    with np.errstate(all="ignore"):
        for p in p_grid:
            for direction in ("generation", "inversion"):
                trace = _round_trip_trace(
                    x, schedule, model, cond, guidance, p, direction
                )
                results.append(
                    SweepResult(
                        p=p,
                        direction=direction,
                        trace=trace,
                        flagged=trace.first_flagged() is not None,
                        min_cos=trace.min_cos(),
                        first_flagged_step=trace.first_flagged(),
                    )
                )
    return results


# ---------------------------------------------------------------------------
# Step-to-step prediction alignment


@dataclass
class AlignmentRow:
    step: int
    t: int
    cos_uncond: float
    cos_cond: float
    cos_pseudograd: float
    degenerate: bool = False


class AlignmentTrace:
    """Cosine similarity of prediction components across consecutive steps."""

    def __init__(self, rows):
        self.rows = list(rows)

    def __len__(self):
        return len(self.rows)

    def mean(self, field):
        return math.fsum(getattr(r, field) for r in self.rows) / len(self.rows)

    def any_degenerate(self):
        return any(r.degenerate for r in self.rows)

    def to_csv(self, path):
        with open(path, "w", encoding="ascii") as fh:
            fh.write("# schema: align_v1\n")
            fh.write("step,t,cos_uncond,cos_cond,cos_pseudograd\n")
            for r in self.rows:
                fh.write(
                    f"{r.step},{r.t},{r.cos_uncond!r},{r.cos_cond!r},"
                    f"{r.cos_pseudograd!r}\n"
                )


def _alignment_cos(u, v):
    """Cosine with the conventions alignment needs.

    Bitwise-equal vectors count as perfectly aligned even when both are zero
    (a state-independent model predicts the same component forever — that is
    alignment, not a failure); a zero vector against a nonzero one has no
    direction to compare, so it reports 0 and marks the row degenerate.
    """
    if np.array_equal(u, v):
        return 1.0, False
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0 or not (math.isfinite(nu) and math.isfinite(nv)):
        return 0.0, True
    c = float(u @ v) / (nu * nv)
    return max(-1.0, min(1.0, c)), False


def invert_trajectory(x0, schedule, model, cond=None, guidance=None, p=0.93,
                      num_steps=None):
    """Coupled inversion that keeps every intermediate state.

    Returns a Trajectory whose points are (t, CoupledState), t ascending from
    0; the endpoint-only driver does not store these.
    """
    cond = Condition.NULL if cond is None else cond
    guidance = GuidanceConfig() if guidance is None else guidance
    pairs = schedule.pairs()
    m = len(pairs) if num_steps is None else num_steps
    state = x0 if isinstance(x0, CoupledState) else CoupledState.paired(x0, t=0)
    points = [(state.t, state)]
    for t_lo, t_hi in pairs[:m]:
        state = edict_noise_step(
            state, schedule.coeffs(t_hi, t_lo), model, cond, guidance, p
        )
        points.append((t_hi, state))
    return Trajectory(direction="invert", points=points)


def _trajectory_points(trajectory):
    """Normalize a trajectory-ish argument to [(t, Tensor), ...]."""
    points = getattr(trajectory, "points", trajectory)
    out = []
    for entry in points:
        if isinstance(entry, CoupledState):
            out.append((entry.t, entry.x))
        else:
            t, state = entry
            out.append((t, state.x if isinstance(state, CoupledState) else state))
    return out


def pseudograd_alignment(trajectory, model, cond, guidance=None):
    """How consistent each prediction component stays across adjacent steps.

    For every step the sampler would take along the stored trajectory, the
    model's unconditional prediction, conditional prediction, and their
    difference (the direction guidance actually pushes along, scale-free so
    the guidance weight cancels) are evaluated exactly as the step would:
    on the step's input state, at the higher of the two step times.  Each
    row is the cosine between one step's components and the previous
    step's.  n stored steps give n-1 rows; a single step gives none.
    """
    guidance = GuidanceConfig() if guidance is None else guidance
    points = _trajectory_points(trajectory)
    null = Condition.NULL
    components = []
    for k in range(len(points) - 1):
        t_in, x_in = points[k]
        t_out, _ = points[k + 1]
        t_eval = max(t_in, t_out)
        e_uncond = model.predict(x_in, t_eval, null).data
        e_cond = model.predict(x_in, t_eval, cond).data
        components.append((t_eval, e_uncond, e_cond, e_cond - e_uncond))
    rows = []
    for k in range(1, len(components)):
        t_eval, u1, c1, d1 = components[k]
        _, u0, c0, d0 = components[k - 1]
        cos_u, deg_u = _alignment_cos(u0, u1)
        cos_c, deg_c = _alignment_cos(c0, c1)
        cos_d, deg_d = _alignment_cos(d0, d1)
        rows.append(
            AlignmentRow(
                step=k,
                t=t_eval,
                cos_uncond=cos_u,
                cos_cond=cos_c,
                cos_pseudograd=cos_d,
                degenerate=deg_u or deg_c or deg_d,
            )
        )
    return AlignmentTrace(rows)


# ---------------------------------------------------------------------------
# SVG emission


def write_trace_svg(path, series, title="", width=640, height=360):
    """Plot named (x, y) series as polylines in a standalone SVG.

    ``series`` maps a label to a list of (x, y) pairs.  Non-finite points
    break the polyline rather than distorting the scale.
    """
    pad = 42
    finite = [
        (x, y)
        for pts in series.values()
        for x, y in pts
        if math.isfinite(x) and math.isfinite(y)
    ]
    if not finite:
        raise ValueError("no finite points to plot")
    xs = [p[0] for p in finite]
    ys = [p[1] for p in finite]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0

    def sx(x):
        return pad + (x - x_lo) / x_span * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y_lo) / y_span * (height - 2 * pad)

    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" '
        f'height="{height - 2 * pad}" fill="none" stroke="#999"/>',
    ]
    if title:
        parts.append(
            f'<text x="{width / 2}" y="{pad - 14}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="13">{title}</text>'
        )
    for i, (label, pts) in enumerate(series.items()):
        color = colors[i % len(colors)]
        chunk = []
        chunks = [chunk]
        for x, y in pts:
            if math.isfinite(x) and math.isfinite(y):
                chunk.append(f"{sx(x):.2f},{sy(y):.2f}")
            elif chunk:
                chunk = []
                chunks.append(chunk)
        for chunk in chunks:
            if len(chunk) >= 2:
                parts.append(
                    f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                    f'points="{" ".join(chunk)}"/>'
                )
        parts.append(
            f'<text x="{width - pad + 4}" y="{pad + 16 * i + 12}" '
            f'font-family="sans-serif" font-size="11" fill="{color}">{label}</text>'
        )
    parts.append(
        f'<text x="{pad}" y="{height - pad + 16}" font-family="sans-serif" '
        f'font-size="11">{x_lo:g}</text>'
    )
    parts.append(
        f'<text x="{width - pad}" y="{height - pad + 16}" text-anchor="end" '
        f'font-family="sans-serif" font-size="11">{x_hi:g}</text>'
    )
    parts.append("</svg>")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(parts))
