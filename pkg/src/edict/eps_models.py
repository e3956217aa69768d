"""Noise predictors and classifier-free guidance.

Every sampler in this package is generic over a noise predictor: an object
with ``predict(x, t, cond) -> Tensor`` estimating the unit-variance noise
component of a state x at training timestep t.  Three predictor families
cover the desk-scale experiments:

* ConstantEps and LinearEps are analytic probes.  A constant field makes
  coupled and uncoupled samplers coincide exactly; a linear field gives
  closed-form single-step references for the inversion tests.

* GaussianScoreEps is the exact posterior-mean predictor for data drawn
  from a known Gaussian mixture.  For component k with mean mu_k and
  variance v_k, at signal level abar,

      eps_hat = sqrt(1-abar) * (x - sqrt(abar)*mu_k) / (abar*v_k + 1-abar)

  and the unconditional prediction marginalizes over components with
  posterior responsibilities.  This is the workhorse model: it is exact,
  fast, and genuinely conditional.

* MlpEps is a small trained network (two tanh hidden layers) with a
  sinusoidal time embedding and one-hot labels, trained by train_mlp with
  Adam on the standard noise-regression objective, with random label
  dropout so the same network serves conditional and unconditional queries.

Classifier-free guidance combines two predictions:

    eps_g = eps(null) + G * (eps(cond) - eps(null))

``guided_predict`` special-cases G = 0, G = 1, and null conditions to a
single model call so that guided and unguided runs agree bitwise there.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .schedule import forward_noise
from .tensor_io import EdictError, Tensor, read_tensor, write_tensor


class ModelError(EdictError):
    """A predictor was asked for something outside its contract."""


_COND_KINDS = ("null", "label", "embedding")


@dataclass(frozen=True)
class Condition:
    """What a prediction is conditioned on: nothing, a label, or a vector."""

    kind: str = "null"
    label: int = -1
    embedding: Tensor = None

    def __post_init__(self):
        if self.kind not in _COND_KINDS:
            raise ValueError(f"kind must be one of {_COND_KINDS}, got {self.kind!r}")
        if self.kind == "label" and self.label < 0:
            raise ValueError(f"label conditions need label >= 0, got {self.label}")
        if self.kind == "embedding" and self.embedding is None:
            raise ValueError("embedding conditions need an embedding tensor")

    @classmethod
    def for_label(cls, label):
        return cls(kind="label", label=label)

    @classmethod
    def for_embedding(cls, tensor):
        return cls(kind="embedding", embedding=tensor)

    def is_null(self):
        return self.kind == "null"


Condition.NULL = Condition()


@dataclass(frozen=True)
class GuidanceConfig:
    """Classifier-free guidance strength.  0 disables, 1 is pure conditional."""

    scale: float = 7.5

    def __post_init__(self):
        if not math.isfinite(self.scale) or self.scale < 0.0:
            raise ValueError(f"guidance scale must be finite and >= 0, got {self.scale}")


class EpsModel:
    """Noise-predictor interface; subclasses implement predict."""

    shape = None

    def predict(self, x, t, cond):
        raise NotImplementedError

    def _check_input(self, x, t):
        if self.shape is not None and x.shape != self.shape:
            raise ModelError(f"model serves shape {self.shape}, got {x.shape}")
        if t < 0:
            raise ModelError(f"timestep must be >= 0, got {t}")


def guided_predict(model, x, t, cond, guidance):
    """Guided prediction, collapsing to one model call whenever exact."""
    if cond.is_null() or guidance.scale == 0.0:
        return model.predict(x, t, Condition.NULL)
    if guidance.scale == 1.0:
        return model.predict(x, t, cond)
    e_u = model.predict(x, t, Condition.NULL)
    e_c = model.predict(x, t, cond)
    return Tensor(x.shape, e_u.data + guidance.scale * (e_c.data - e_u.data))


class ConstantEps(EpsModel):
    """Returns one fixed tensor for every query.  Conditions are ignored."""

    def __init__(self, value):
        self._value = value
        self.shape = value.shape

    def predict(self, x, t, cond):
        self._check_input(x, t)
        return self._value


class LinearEps(EpsModel):
    """eps(x) = M x + u_label, time-independent.

    With matrix=None the map is scale*identity (applied without forming the
    matrix).  label_offsets maps label -> flat offset vector; null conditions
    get no offset.
    """

    def __init__(self, shape, matrix=None, scale=0.1, label_offsets=None):
        self.shape = tuple(shape)
        dim = math.prod(self.shape)
        self._scale = float(scale)
        if matrix is None:
            self._matrix = None
        else:
            m = np.ascontiguousarray(matrix, dtype=np.float64)
            if m.shape != (dim, dim):
                raise ValueError(f"matrix must be {(dim, dim)}, got {m.shape}")
            self._matrix = m
        self._offsets = {}
        for label, vec in (label_offsets or {}).items():
            v = np.ascontiguousarray(vec, dtype=np.float64).reshape(-1)
            if v.size != dim:
                raise ValueError(f"offset for label {label} has size {v.size}, need {dim}")
            self._offsets[int(label)] = v

    def predict(self, x, t, cond):
        self._check_input(x, t)
        if self._matrix is None:
            out = self._scale * x.data
        else:
            out = self._matrix @ x.data
        if cond.kind == "label":
            if cond.label not in self._offsets:
                raise ModelError(
                    f"no offset for label {cond.label}, known: {sorted(self._offsets)}"
                )
            out = out + self._offsets[cond.label]
        elif cond.kind == "embedding":
            raise ModelError("LinearEps supports null and label conditions only")
        return Tensor(x.shape, out)


class GaussianScoreEps(EpsModel):
    """Exact posterior-mean predictor for Gaussian-mixture data."""

    def __init__(self, schedule, means, variances, weights=None):
        if not means:
            raise ValueError("need at least one component")
        self.shape = means[0].shape
        for m in means:
            if m.shape != self.shape:
                raise ValueError("all component means must share one shape")
        k = len(means)
        variances = [float(v) for v in variances]
        if len(variances) != k or any(v <= 0.0 for v in variances):
            raise ValueError("need one positive variance per component")
        if weights is None:
            weights = [1.0] * k
        weights = np.asarray([float(w) for w in weights])
        if weights.size != k or np.any(weights <= 0.0):
            raise ValueError("need one positive weight per component")
        self.schedule = schedule
        self._means = np.ascontiguousarray(np.stack([m.data for m in means]))
        self._vars = np.asarray(variances)
        self._weights = weights / weights.sum()
        self._logw = np.log(self._weights)

    @property
    def n_components(self):
        return self._vars.size

    def mean_for_label(self, label):
        if not 0 <= label < self.n_components:
            raise ModelError(f"label must be in [0, {self.n_components}), got {label}")
        return Tensor(self.shape, self._means[label].copy())

    def sample_x0(self, rng, label=None):
        """Draw one clean sample; label None picks a component by weight."""
        if label is None:
            u = float(rng.uniforms(1)[0])
            label = int(np.searchsorted(np.cumsum(self._weights), u, side="right"))
            label = min(label, self.n_components - 1)
        sigma = math.sqrt(self._vars[label])
        z = rng.normals(self._means.shape[1])
        return Tensor(self.shape, self._means[label] + sigma * z), label

    def predict(self, x, t, cond):
        self._check_input(x, t)
        abar = self.schedule.alpha(t)
        if cond.is_null():
            label = -1
        elif cond.kind == "label":
            if not 0 <= cond.label < self.n_components:
                raise ModelError(
                    f"label must be in [0, {self.n_components}), got {cond.label}"
                )
            label = cond.label
        else:
            raise ModelError("GaussianScoreEps supports null and label conditions only")
        out = K.gauss_mixture_eps(x.data, self._means, self._vars, self._logw, abar, label)
        return Tensor(x.shape, out)


def time_embedding(t, dims):
    """Sinusoidal embedding of an integer timestep, sin block then cos block."""
    if dims < 2 or dims % 2:
        raise ValueError(f"time embedding size must be even and >= 2, got {dims}")
    half = dims // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    angles = t * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)])


class MlpEps(EpsModel):
    """Two-hidden-layer tanh network over [x, time embedding, one-hot label]."""

    _WEIGHT_KEYS = ("w1", "b1", "w2", "b2", "w3", "b3")

    def __init__(self, shape, n_labels, weights, time_dims=16):
        self.shape = tuple(shape)
        self.n_labels = int(n_labels)
        self.time_dims = int(time_dims)
        if self.n_labels < 0:
            raise ValueError(f"n_labels must be >= 0, got {n_labels}")
        dim = math.prod(self.shape)
        d_in = dim + self.time_dims + self.n_labels
        w = {k: np.ascontiguousarray(weights[k], dtype=np.float64) for k in self._WEIGHT_KEYS}
        hidden = w["b1"].size
        expected = {
            "w1": (hidden, d_in),
            "b1": (hidden,),
            "w2": (hidden, hidden),
            "b2": (hidden,),
            "w3": (dim, hidden),
            "b3": (dim,),
        }
        for key, shp in expected.items():
            if w[key].shape != shp:
                raise ValueError(f"weight {key} must have shape {shp}, got {w[key].shape}")
        self._w = w

    @property
    def hidden(self):
        return self._w["b1"].size

    def _features(self, x_flat, t, cond):
        onehot = np.zeros(self.n_labels)
        if cond.kind == "label":
            if not 0 <= cond.label < self.n_labels:
                raise ModelError(
                    f"label must be in [0, {self.n_labels}), got {cond.label}"
                )
            onehot[cond.label] = 1.0
        elif cond.kind == "embedding":
            raise ModelError("MlpEps supports null and label conditions only")
        return np.concatenate([x_flat, time_embedding(t, self.time_dims), onehot])

    def _forward(self, feats):
        w = self._w
        h1 = np.tanh(feats @ w["w1"].T + w["b1"])
        h2 = np.tanh(h1 @ w["w2"].T + w["b2"])
        return h2 @ w["w3"].T + w["b3"]

    def predict(self, x, t, cond):
        self._check_input(x, t)
        out = self._forward(self._features(x.data, t, cond))
        return Tensor(self.shape, out)

    def save_weights(self, dirpath):
        """Write weights as one manifest plus one EDT1 file per array."""
        import os

        os.makedirs(dirpath, exist_ok=True)
        shape_txt = "x".join(str(d) for d in self.shape)
        lines = [
            "format=mlp_v1",
            f"shape={shape_txt}",
            f"n_labels={self.n_labels}",
            f"time_dims={self.time_dims}",
            f"hidden={self.hidden}",
            "activation=tanh",
        ]
        with open(os.path.join(dirpath, "manifest.txt"), "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")
        for key in self._WEIGHT_KEYS:
            arr = self._w[key]
            t = Tensor(arr.shape, arr.reshape(-1))
            write_tensor(t, os.path.join(dirpath, f"{key}.edt1"))

    @classmethod
    def load_weights(cls, dirpath):
        import os

        fields = {}
        with open(os.path.join(dirpath, "manifest.txt"), encoding="ascii") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                key, _, value = line.partition("=")
                fields[key.strip()] = value.strip()
        if fields.get("format") != "mlp_v1":
            raise ModelError(f"unsupported weight format {fields.get('format')!r}")
        if fields.get("activation", "tanh") != "tanh":
            raise ModelError(f"unsupported activation {fields.get('activation')!r}")
        shape = tuple(int(d) for d in fields["shape"].split("x"))
        weights = {
            key: read_tensor(os.path.join(dirpath, f"{key}.edt1")).to_array()
            for key in cls._WEIGHT_KEYS
        }
        return cls(
            shape,
            int(fields["n_labels"]),
            weights,
            time_dims=int(fields["time_dims"]),
        )


def _init_weights(rng, dim, n_labels, hidden, time_dims):
    d_in = dim + time_dims + n_labels
    w = {}
    for key, (rows, cols) in (
        ("w1", (hidden, d_in)),
        ("w2", (hidden, hidden)),
        ("w3", (dim, hidden)),
    ):
        w[key] = rng.normals(rows * cols).reshape(rows, cols) / math.sqrt(cols)
    w["b1"] = np.zeros(hidden)
    w["b2"] = np.zeros(hidden)
    w["b3"] = np.zeros(dim)
    return w


def train_mlp(
    sampler,
    schedule,
    shape,
    n_labels,
    rng,
    steps=2000,
    batch_size=64,
    lr=1e-3,
    cond_dropout=0.1,
    hidden=64,
    time_dims=16,
    ema=0.999,
    lr_floor=0.1,
):
    """Train an MlpEps on the noise-regression objective.

    ``sampler(rng) -> (Tensor, label)`` supplies clean draws.  Each step
    noises a fresh batch at uniformly random timesteps and takes one Adam
    step on mean squared prediction error; labels are dropped to null with
    probability cond_dropout so the network learns both query types.
    The learning rate follows a cosine decay from lr to lr_floor*lr, and
    the returned model carries an exponential moving average of the
    weights (decay ``ema``; pass 0 for the raw final weights) — both keep
    the learned function smooth enough for step-size-sensitive callers.
    Returns (model, per-step loss array); steps=0 returns the untouched
    initialization.
    """
    if not 0.0 <= cond_dropout <= 1.0:
        raise ValueError(f"cond_dropout must be in [0, 1], got {cond_dropout}")
    if not 0.0 <= ema < 1.0:
        raise ValueError(f"ema must be in [0, 1), got {ema}")
    dim = math.prod(tuple(shape))
    w = _init_weights(rng, dim, n_labels, hidden, time_dims)
    model = MlpEps(shape, n_labels, w, time_dims=time_dims)

    beta1, beta2, eps_adam = 0.9, 0.999, 1e-8
    m = {k: np.zeros_like(v) for k, v in model._w.items()}
    v = {k: np.zeros_like(val) for k, val in model._w.items()}
    w_ema = {k: val.copy() for k, val in model._w.items()}
    losses = np.empty(steps)

    t_train = schedule.t_train
    for step in range(steps):
        xs = np.empty((batch_size, dim))
        labels = np.empty(batch_size, dtype=np.int64)
        for i in range(batch_size):
            x0, label = sampler(rng)
            xs[i] = x0.data
            labels[i] = label
        ts = np.asarray([rng.randrange(t_train) + 1 for _ in range(batch_size)])
        eps = rng.normals(batch_size * dim).reshape(batch_size, dim)
        drop = rng.uniforms(batch_size) < cond_dropout

        feats = np.empty((batch_size, dim + time_dims + n_labels))
        for i in range(batch_size):
            abar = schedule.alpha(int(ts[i]))
            noisy = math.sqrt(abar) * xs[i] + math.sqrt(1.0 - abar) * eps[i]
            onehot = np.zeros(n_labels)
            if not drop[i]:
                onehot[labels[i]] = 1.0
            feats[i] = np.concatenate(
                [noisy, time_embedding(int(ts[i]), time_dims), onehot]
            )

        w = model._w
        a1 = feats @ w["w1"].T + w["b1"]
        h1 = np.tanh(a1)
        a2 = h1 @ w["w2"].T + w["b2"]
        h2 = np.tanh(a2)
        out = h2 @ w["w3"].T + w["b3"]
        resid = out - eps
        loss = float(np.mean(resid * resid))
        losses[step] = loss
        if not math.isfinite(loss):
            raise ModelError(f"training diverged at step {step}: loss={loss}")

        g_out = (2.0 / resid.size) * resid
        grads = {
            "w3": g_out.T @ h2,
            "b3": g_out.sum(axis=0),
        }
        g_h2 = g_out @ w["w3"]
        g_a2 = g_h2 * (1.0 - h2 * h2)
        grads["w2"] = g_a2.T @ h1
        grads["b2"] = g_a2.sum(axis=0)
        g_h1 = g_a2 @ w["w2"]
        g_a1 = g_h1 * (1.0 - h1 * h1)
        grads["w1"] = g_a1.T @ feats
        grads["b1"] = g_a1.sum(axis=0)

        frac = step / max(steps - 1, 1)
        lr_t = lr * (lr_floor + (1.0 - lr_floor) * 0.5 * (1.0 + math.cos(math.pi * frac)))
        for key, grad in grads.items():
            m[key] = beta1 * m[key] + (1.0 - beta1) * grad
            v[key] = beta2 * v[key] + (1.0 - beta2) * grad * grad
            m_hat = m[key] / (1.0 - beta1 ** (step + 1))
            v_hat = v[key] / (1.0 - beta2 ** (step + 1))
            w[key] = w[key] - lr_t * m_hat / (np.sqrt(v_hat) + eps_adam)
        for key in w_ema:
            w_ema[key] = ema * w_ema[key] + (1.0 - ema) * w[key]

    if ema > 0.0 and steps > 0:
        for key in w_ema:
            model._w[key] = w_ema[key]
    return model, losses


def denoise_mse(model, sampler, schedule, rng, n_samples=256, conditional=True):
    """Mean squared prediction error on fresh noised draws, for eval."""
    dim = math.prod(model.shape)
    total = 0.0
    for _ in range(n_samples):
        x0, label = sampler(rng)
        t = rng.randrange(schedule.t_train) + 1
        eps = rng.normals(dim)
        noisy = forward_noise(x0, Tensor(model.shape, eps), schedule.alpha(t))
        cond = Condition.for_label(label) if conditional else Condition.NULL
        pred = model.predict(noisy, t, cond)
        d = pred.data - eps
        total += float(d @ d) / dim
    return total / n_samples
