"""Seeded toy models and datasets shared by the tests, benchmarks, and CLI.

Everything here is a deterministic function of hard-coded seeds, so any two
processes agree bitwise on fixture contents.  The three closed-form model
families probe different failure surfaces: ConstantEps (state-independent,
every sampler identity holds exactly), LinearEps (state feedback with a
known Lipschitz constant — the divergence workhorse), and GaussianScoreEps
(an exact posterior-mean predictor whose conditional/unconditional split
exercises guidance).  The MLP fixture is the one *learned* model; training
is cheap enough (~seconds) to run on demand and is bit-reproducible, so it
is trained in-process and memoized rather than shipped as binary weights.
"""

import math

import numpy as np

from .eps_models import (
    Condition,
    ConstantEps,
    GaussianScoreEps,
    LinearEps,
    train_mlp,
)
from .schedule import build_schedule
from .tensor_io import SeededRng, Tensor, gaussian_draw

FIXTURE_SHAPE = (2, 16, 16)

# One seed per fixture so regenerating one cannot shift another.
MIXTURE_SEED = 11
INPUT_SEED = 12
LINEAR_SEED = 13
CONSTANT_SEED = 14
MLP_SEED = 15

# Mixture means sit in two groups of three: group centres drawn at scale
# _MIXTURE_GROUP_STD, members offset from their centre at _MIXTURE_WITHIN_STD.
_MIXTURE_GROUPS = 2
_MIXTURE_PER_GROUP = 3
_MIXTURE_GROUP_STD = 0.10
_MIXTURE_WITHIN_STD = 0.07
_MIXTURE_VARIANCE = 1.0
_LINEAR_OFFSET_STD = 0.3


def fixture_schedule(steps=50, t_train=1000):
    return build_schedule("scaled_linear", t_train=t_train, steps=steps,
                          spacing="trailing")


def mixture_model(schedule, seed=MIXTURE_SEED):
    """Six unit-variance Gaussian components in two groups of three.

    Equal variances keep the unconditional prediction close to affine in the
    state, so unguided DDIM inversion stays accurate.  The two-scale mean
    layout makes the label-vs-marginal difference rotate as noise grows —
    first toward the group centre, then toward the global mean — which is
    what drives guided DDIM inversion error on this fixture.
    """
    rng = SeededRng(seed)
    dim = math.prod(FIXTURE_SHAPE)
    means = []
    for _ in range(_MIXTURE_GROUPS):
        centre = _MIXTURE_GROUP_STD * rng.normals(dim)
        for _ in range(_MIXTURE_PER_GROUP):
            offset = _MIXTURE_WITHIN_STD * rng.normals(dim)
            means.append(Tensor(FIXTURE_SHAPE, centre + offset))
    variances = (_MIXTURE_VARIANCE,) * len(means)
    return GaussianScoreEps(schedule, means, variances)


def mixture_inputs(model, n, seed=INPUT_SEED):
    """n label-balanced draws from the mixture; returns (inputs, conditions)."""
    rng = SeededRng(seed)
    inputs, conditions = [], []
    for i in range(n):
        label = i % model.n_components
        x0, _ = model.sample_x0(rng, label)
        inputs.append(x0)
        conditions.append(Condition.for_label(label))
    return inputs, conditions


def linear_model(seed=LINEAR_SEED, scale=0.1, shape=FIXTURE_SHAPE):
    """Two-label linear predictor; scale sets the state-feedback strength."""
    rng = SeededRng(seed)
    dim = math.prod(shape)
    offsets = {
        0: _LINEAR_OFFSET_STD * rng.normals(dim),
        1: _LINEAR_OFFSET_STD * rng.normals(dim),
    }
    return LinearEps(shape, scale=scale, label_offsets=offsets)


def constant_model(seed=CONSTANT_SEED, shape=FIXTURE_SHAPE):
    return ConstantEps(gaussian_draw(SeededRng(seed), shape))


def seeded_state(seed, shape=FIXTURE_SHAPE):
    return gaussian_draw(SeededRng(seed), shape)


# ---------------------------------------------------------------------------
# Trained-MLP fixture (2-D so training takes seconds)

MLP_SHAPE = (2,)
_MLP_MEANS = ((0.8, 0.8), (-0.8, -0.8))
# Unit component variance keeps the score gentle; a trained net on sharper
# data is too rough at small step sizes for sampler-equivalence checks.
_MLP_VARIANCE = 1.0
_MLP_HIDDEN = 128

_mlp_cache = {}


def mlp_data_model(schedule):
    """The 2-D two-component mixture the MLP fixture is trained against.

    Doubles as the closed-form reference predictor for the same data.
    """
    means = [Tensor(MLP_SHAPE, np.asarray(m, dtype=np.float64)) for m in _MLP_MEANS]
    return GaussianScoreEps(schedule, means, (_MLP_VARIANCE, _MLP_VARIANCE))


def mlp_model(schedule, steps=8000, seed=MLP_SEED):
    """Train (once per process) and return the 2-D MLP fixture.

    Training is deterministic given (steps, seed, schedule identity), so the
    memo key only needs the call parameters.
    """
    key = (steps, seed, schedule.t_train, schedule.timesteps)
    if key not in _mlp_cache:
        data = mlp_data_model(schedule)
        rng = SeededRng(seed)
        model, losses = train_mlp(
            data.sample_x0, schedule, MLP_SHAPE, data.n_components, rng,
            steps=steps, hidden=_MLP_HIDDEN,
        )
        _mlp_cache[key] = (model, losses)
    return _mlp_cache[key][0]


# ---------------------------------------------------------------------------
# Name -> model lookup for the CLI

MODEL_NAMES = ("constant", "linear", "mixture", "mlp")


def make_model(name, schedule, shape=FIXTURE_SHAPE):
    """Build a named fixture model; mixture/mlp only exist at their own shape."""
    if name == "constant":
        return constant_model(shape=shape)
    if name == "linear":
        return linear_model(shape=shape)
    if name == "mixture":
        if tuple(shape) != FIXTURE_SHAPE:
            raise ValueError(f"mixture model is defined at shape {FIXTURE_SHAPE}")
        return mixture_model(schedule)
    if name == "mlp":
        if tuple(shape) != MLP_SHAPE:
            raise ValueError(f"mlp model is defined at shape {MLP_SHAPE}")
        return mlp_model(schedule)
    raise ValueError(f"unknown model {name!r}, expected one of {MODEL_NAMES}")
