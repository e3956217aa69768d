"""Noise schedules and per-step affine coefficients.

A schedule is the cumulative signal level alpha_bar[t] for integer t in
[0, t_train], with alpha_bar[0] = 1 exactly.  A sampler run selects a
subsequence of timesteps and walks adjacent pairs (t_lo, t_hi); the affine
coefficients for one pair are

    a = sqrt(alpha_bar[t_lo] / alpha_bar[t_hi])
    b = sqrt(1 - alpha_bar[t_lo]) - a * sqrt(1 - alpha_bar[t_hi])

(the second line is the factored form of
-sqrt(alpha_bar_lo*(1-alpha_bar_hi)/alpha_bar_hi) + sqrt(1-alpha_bar_lo);
factoring through a makes a degenerate pair with equal levels come out as
exactly a=1, b=0, an identity step).  The deterministic update
x_lo = a*x_hi + b*eps moves one step down the noise level and
x_hi = (x_lo - b*eps)/a moves back up.  Coefficients are always indexed by
the underlying training timesteps, never renumbered to the selected
subsequence.

Three beta families are built in (scaled_linear, linear, cosine) and two
subsequence spacings (trailing, which always includes t_train, and leading,
which always includes t = 1).
"""

import math
from dataclasses import dataclass

import numpy as np

from .tensor_io import Tensor

SCHEDULE_KINDS = ("scaled_linear", "linear", "cosine")
SPACINGS = ("trailing", "leading")

_BETA_DEFAULTS = {
    "scaled_linear": (0.00085, 0.012),
    "linear": (1e-4, 0.02),
}


@dataclass(frozen=True)
class StepCoeffs:
    """Affine coefficients for one step pair, plus the pair itself."""

    a: float
    b: float
    t_hi: int
    t_lo: int


def coeffs_from_alpha(abar_hi, abar_lo, t_hi=-1, t_lo=-1):
    """StepCoeffs from the two cumulative signal levels directly."""
    if not 0.0 < abar_hi <= 1.0 or not 0.0 < abar_lo <= 1.0:
        raise ValueError(f"alpha_bar values must be in (0, 1], got {abar_hi}, {abar_lo}")
    if abar_lo < abar_hi:
        raise ValueError(
            f"expected abar_lo >= abar_hi, got {abar_lo} < {abar_hi}"
        )
    a = math.sqrt(abar_lo / abar_hi)
    b = math.sqrt(1.0 - abar_lo) - a * math.sqrt(1.0 - abar_hi)
    return StepCoeffs(a=a, b=b, t_hi=t_hi, t_lo=t_lo)


def select_timesteps(t_train, steps, spacing="trailing"):
    """Increasing tuple of ``steps`` timesteps from [1, t_train]."""
    if steps < 1 or steps > t_train:
        raise ValueError(f"steps must be in [1, {t_train}], got {steps}")
    if spacing not in SPACINGS:
        raise ValueError(f"spacing must be one of {SPACINGS}, got {spacing!r}")
    stride = t_train // steps
    if spacing == "trailing":
        ts = [t_train - k * stride for k in range(steps)]
        return tuple(reversed(ts))
    return tuple(1 + k * stride for k in range(steps))


def _betas(kind, t_train, beta_start, beta_end):
    if kind == "linear":
        return np.linspace(beta_start, beta_end, t_train)
    if kind == "scaled_linear":
        roots = np.linspace(math.sqrt(beta_start), math.sqrt(beta_end), t_train)
        return roots * roots
    if kind == "cosine":
        # beta_start/beta_end are unused; the family is parameterized by the
        # standard small offset keeping beta_1 finite.
        s = 0.008
        t = np.arange(t_train + 1, dtype=np.float64)
        f = np.cos((t / t_train + s) / (1.0 + s) * (math.pi / 2.0)) ** 2
        abar = f / f[0]
        betas = 1.0 - abar[1:] / abar[:-1]
        return np.minimum(betas, 0.999)
    raise ValueError(f"kind must be one of {SCHEDULE_KINDS}, got {kind!r}")


class NoiseSchedule:
    """alpha_bar table plus a selected timestep subsequence."""

    def __init__(self, alpha_bar, timesteps, kind="custom", spacing="trailing"):
        abar = np.ascontiguousarray(alpha_bar, dtype=np.float64)
        if abar.ndim != 1 or abar.size < 2:
            raise ValueError("alpha_bar must be a 1-d table with at least 2 entries")
        if abar[0] != 1.0:
            raise ValueError(f"alpha_bar[0] must be exactly 1, got {abar[0]}")
        if not np.all(abar > 0.0) or not np.all(abar <= 1.0):
            raise ValueError("alpha_bar values must be in (0, 1]")
        if np.any(np.diff(abar) > 0.0):
            raise ValueError("alpha_bar must be non-increasing")
        abar = abar.copy()
        abar.flags.writeable = False
        self._abar = abar
        self.t_train = abar.size - 1
        ts = tuple(int(t) for t in timesteps)
        if not ts:
            raise ValueError("timesteps must be non-empty")
        if ts[0] < 1 or ts[-1] > self.t_train or any(
            u >= v for u, v in zip(ts, ts[1:])
        ):
            raise ValueError(
                f"timesteps must be strictly increasing within [1, {self.t_train}]"
            )
        self.timesteps = ts
        self.kind = kind
        self.spacing = spacing

    @property
    def steps(self):
        return len(self.timesteps)

    @property
    def alpha_bar(self):
        return self._abar

    def alpha(self, t):
        if not 0 <= t <= self.t_train:
            raise ValueError(f"t must be in [0, {self.t_train}], got {t}")
        return float(self._abar[t])

    def bounds(self):
        """(0,) + timesteps: the endpoints the sampler visits, increasing."""
        return (0,) + self.timesteps

    def pairs(self):
        """Adjacent (t_lo, t_hi) pairs in increasing order."""
        b = self.bounds()
        return list(zip(b[:-1], b[1:]))

    def coeffs(self, t_hi, t_lo):
        if not 0 <= t_lo < t_hi <= self.t_train:
            raise ValueError(
                f"need 0 <= t_lo < t_hi <= {self.t_train}, got ({t_lo}, {t_hi})"
            )
        return coeffs_from_alpha(
            float(self._abar[t_hi]), float(self._abar[t_lo]), t_hi=t_hi, t_lo=t_lo
        )

    def with_steps(self, steps, spacing=None):
        """Same alpha_bar table, a different selected subsequence."""
        spacing = self.spacing if spacing is None else spacing
        ts = select_timesteps(self.t_train, steps, spacing)
        return NoiseSchedule(self._abar, ts, kind=self.kind, spacing=spacing)

    def to_csv(self, path):
        with open(path, "w", encoding="ascii") as fh:
            fh.write("# schema: schedule_v1\n")
            fh.write("t,alpha_bar\n")
            for t in range(self.t_train + 1):
                fh.write(f"{t},{float(self._abar[t])!r}\n")

    def __repr__(self):
        return (
            f"NoiseSchedule(kind={self.kind!r}, t_train={self.t_train}, "
            f"steps={self.steps}, spacing={self.spacing!r})"
        )


def build_schedule(
    kind="scaled_linear",
    t_train=1000,
    steps=50,
    spacing="trailing",
    beta_start=None,
    beta_end=None,
):
    """Construct a NoiseSchedule for one of the built-in beta families."""
    if kind not in SCHEDULE_KINDS:
        raise ValueError(f"kind must be one of {SCHEDULE_KINDS}, got {kind!r}")
    if t_train < 1:
        raise ValueError(f"t_train must be >= 1, got {t_train}")
    defaults = _BETA_DEFAULTS.get(kind, (0.0, 0.0))
    beta_start = defaults[0] if beta_start is None else float(beta_start)
    beta_end = defaults[1] if beta_end is None else float(beta_end)
    if kind != "cosine":
        # beta_start == beta_end == 0 is the degenerate no-noise schedule
        # (alpha_bar all ones); useful as an identity-step edge case.
        if not 0.0 <= beta_start <= beta_end < 1.0:
            raise ValueError(
                f"need 0 <= beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )
    betas = _betas(kind, t_train, beta_start, beta_end)
    abar = np.empty(t_train + 1)
    abar[0] = 1.0
    np.cumprod(1.0 - betas, out=abar[1:])
    ts = select_timesteps(t_train, steps, spacing)
    return NoiseSchedule(abar, ts, kind=kind, spacing=spacing)


def forward_noise(x0, eps, abar):
    """sqrt(abar)*x0 + sqrt(1-abar)*eps as a Tensor."""
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {eps.shape}")
    if not 0.0 < abar <= 1.0:
        raise ValueError(f"abar must be in (0, 1], got {abar}")
    values = math.sqrt(abar) * x0.data + math.sqrt(1.0 - abar) * eps.data
    return Tensor(x0.shape, values)
