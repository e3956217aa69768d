"""Command-line front end: sampling, inversion, editing, and diagnostics.

Every run writes PREFIX.config.txt, the canonical flat key=value form of its
configuration; re-running with only ``--config PREFIX.config.txt`` reproduces
the run (and re-serializes byte-identically).  Data goes to files; stdout
carries exactly one machine-parseable key=value summary line.

Exit codes: 0 success, 2 configuration/usage, 3 file format, 4 model,
1 unexpected (including non-finite results where finiteness is required).
"""

import argparse
import math
import os
import sys
from dataclasses import dataclass, fields

from . import fixtures
from .coupled import edict_denoise, edict_invert, scale_p
from .ddim import ddim_invert, ddim_sample
from .diagnostics import (
    divergence_sweep,
    invert_trajectory,
    pseudograd_alignment,
    recon_benchmark,
    recon_rows_to_csv,
    write_trace_svg,
)
from .editing import EditParams, edit
from .eps_models import Condition, GuidanceConfig, MlpEps, ModelError
from .schedule import SCHEDULE_KINDS, SPACINGS, build_schedule
from .tensor_io import (
    EdictError,
    FormatError,
    SeededRng,
    gaussian_draw,
    read_tensor,
    write_pgm,
    write_tensor,
)

COMMANDS = ("sample", "invert", "roundtrip", "edit", "bench", "diverge", "align")
SAMPLERS = ("ddim", "edict")
_NEEDS_INPUT = ("invert", "roundtrip", "edit")


class ConfigError(EdictError):
    """Invalid or inconsistent run configuration."""


@dataclass
class RunConfig:
    """One run, fully specified.  Field order is the canonical file order."""

    command: str
    sampler: str = "edict"
    model: str = "mixture"
    weights: str = ""
    schedule: str = "scaled_linear"
    t_train: int = 1000
    spacing: str = "trailing"
    shape: str = "2x16x16"
    steps: int = 50
    strength: float = 0.8
    p: float = 0.93
    guidance: float = -1.0  # -1 = unset; resolved per command in finalize
    label: int = -1  # -1 = unconditional
    base_label: int = 0
    target_label: int = 1
    seed: int = 0
    input: str = ""
    out: str = "run"
    schedule_csv: str = ""
    steps_grid: str = "50,200"
    p_grid: str = "0.5,0.7,0.9,0.93,0.97,1.0"
    n_inputs: int = 16
    auto_scale_p: bool = False
    store_trajectory: bool = False


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_to_text(config):
    """Canonical serialization: one key=value per line, field order."""
    return "".join(
        f"{f.name}={_format_value(getattr(config, f.name))}\n"
        for f in fields(RunConfig)
    )


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key, text):
    kind = _FIELD_TYPES[key]
    if kind is bool or kind == "bool":
        if text not in ("true", "false"):
            raise ConfigError(f"{key} must be true or false, got {text!r}")
        return text == "true"
    if kind is int or kind == "int":
        return int(text)
    if kind is float or kind == "float":
        return float(text)
    return text


def _read_config_file(path):
    values = {}
    try:
        with open(path, encoding="ascii") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                key, sep, value = line.partition("=")
                key = key.strip()
                if not sep or key not in _FIELD_TYPES:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                try:
                    values[key] = _parse_value(key, value.strip())
                except ValueError as exc:
                    raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return values


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="edict-cli",
        description="Deterministic diffusion sampling with exact inversion.",
    )
    parser.add_argument("command", nargs="?", choices=COMMANDS)
    parser.add_argument("--config", help="key=value config file; flags override it")
    arg = parser.add_argument
    arg("--sampler", choices=SAMPLERS, default=argparse.SUPPRESS)
    arg("--model", choices=fixtures.MODEL_NAMES, default=argparse.SUPPRESS)
    arg("--weights", default=argparse.SUPPRESS,
        help="mlp weights directory (model must be mlp)")
    arg("--schedule", choices=SCHEDULE_KINDS, default=argparse.SUPPRESS)
    arg("--t-train", dest="t_train", type=int, default=argparse.SUPPRESS)
    arg("--spacing", choices=SPACINGS, default=argparse.SUPPRESS)
    arg("--shape", default=argparse.SUPPRESS, help="state shape, e.g. 2x16x16")
    arg("--steps", type=int, default=argparse.SUPPRESS)
    arg("--strength", type=float, default=argparse.SUPPRESS)
    arg("--p", type=float, default=argparse.SUPPRESS)
    arg("--guidance", type=float, default=argparse.SUPPRESS)
    arg("--label", type=int, default=argparse.SUPPRESS)
    arg("--base-label", dest="base_label", type=int, default=argparse.SUPPRESS)
    arg("--target-label", dest="target_label", type=int, default=argparse.SUPPRESS)
    arg("--seed", type=int, default=argparse.SUPPRESS)
    arg("--input", default=argparse.SUPPRESS, help="EDT1 input tensor")
    arg("--out", default=argparse.SUPPRESS, help="output path prefix")
    arg("--schedule-csv", dest="schedule_csv", default=argparse.SUPPRESS,
        help="also write the alpha_bar table to this path")
    arg("--steps-grid", dest="steps_grid", default=argparse.SUPPRESS)
    arg("--p-grid", dest="p_grid", default=argparse.SUPPRESS)
    arg("--n-inputs", dest="n_inputs", type=int, default=argparse.SUPPRESS)
    arg("--auto-scale-p", action="store_true", default=argparse.SUPPRESS)
    arg("--store-trajectory", action="store_true", default=argparse.SUPPRESS)
    return parser


def _parse_shape(text):
    try:
        shape = tuple(int(d) for d in text.split("x"))
    except ValueError as exc:
        raise ConfigError(f"bad shape {text!r}") from exc
    if not shape or any(d < 1 for d in shape):
        raise ConfigError(f"bad shape {text!r}")
    return shape


def _parse_grid(text, kind, name):
    try:
        values = tuple(kind(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"bad {name} {text!r}") from exc
    if not values:
        raise ConfigError(f"{name} must be non-empty")
    return values


def _validate(config):
    if config.command not in COMMANDS:
        raise ConfigError(f"command must be one of {COMMANDS}")
    if config.steps < 1:
        raise ConfigError(f"steps must be >= 1, got {config.steps}")
    if not 0.0 < config.p <= 1.0:
        raise ConfigError(f"p must be in (0, 1], got {config.p}")
    if not math.isfinite(config.guidance) or config.guidance < 0.0:
        raise ConfigError(f"guidance must be finite and >= 0, got {config.guidance}")
    if not 0.0 < config.strength <= 1.0:
        raise ConfigError(f"strength must be in (0, 1], got {config.strength}")
    if config.weights and config.model != "mlp":
        raise ConfigError("--weights requires --model mlp")
    if config.command == "diverge" and config.sampler != "edict":
        raise ConfigError("diverge probes the coupled sampler; use --sampler edict")
    if config.command == "align" and config.label < 0:
        raise ConfigError("align needs --label to form the guided component")
    if config.command in _NEEDS_INPUT and not config.input:
        raise ConfigError(f"{config.command} requires --input")
    _parse_shape(config.shape)
    _parse_grid(config.steps_grid, int, "steps grid")
    for p in _parse_grid(config.p_grid, float, "p grid"):
        if not 0.0 < p <= 1.0:
            raise ConfigError(f"p grid values must be in (0, 1], got {p}")
    return config


def parse_config(argv):
    """argv (+ optional config file) -> validated RunConfig.

    Precedence: built-in defaults, then file values, then explicit flags.
    """
    ns = vars(_build_parser().parse_args(argv))
    file_path = ns.pop("config", None)
    command = ns.pop("command", None)
    values = _read_config_file(file_path) if file_path else {}
    if command is not None:
        values["command"] = command
    values.update(ns)
    if "command" not in values:
        raise ConfigError("no command given (argument or config file)")
    config = RunConfig(**values)
    if config.guidance == -1.0:
        # generation-style commands lean on strong conditioning; edits
        # conventionally use a gentler default
        config.guidance = 3.0 if config.command == "edit" else 7.5
    return _validate(config)


# ---------------------------------------------------------------------------
# Execution


class _Artifacts:
    """Tracks written paths so failures can clean up partial output."""

    def __init__(self):
        self.paths = []

    def add(self, path):
        self.paths.append(path)
        return path

    def tensor(self, t, path):
        write_tensor(t, path)
        return self.add(path)

    def discard_all(self):
        for path in self.paths:
            try:
                os.unlink(path)
            except OSError:
                pass


def _effective_p(config):
    # quoted-at-50-steps convention; opt-in rescaling for other step counts
    if config.auto_scale_p:
        return scale_p(config.p, 50, config.steps)
    return config.p


def _load_model(config, schedule, shape):
    if config.weights:
        model = MlpEps.load_weights(config.weights)
        if model.shape != shape:
            raise ConfigError(
                f"weights are for shape {model.shape}, config says {shape}"
            )
        return model
    try:
        return fixtures.make_model(config.model, schedule, shape)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _start_state(config, shape):
    if config.input:
        try:
            t = read_tensor(config.input)
        except OSError as exc:
            raise ConfigError(f"cannot read --input {config.input}: {exc}") from exc
        if t.shape != shape:
            raise ConfigError(
                f"input tensor has shape {t.shape}, config says {shape}"
            )
        return t
    return gaussian_draw(SeededRng(config.seed), shape)


def _condition(label):
    return Condition.for_label(label) if label >= 0 else Condition.NULL


def _write_state_artifacts(arts, prefix, x, trace, config):
    arts.tensor(x, f"{prefix}.out.edt1")
    if len(x.shape) == 2:
        write_pgm(x, f"{prefix}.out.pgm")
        arts.add(f"{prefix}.out.pgm")
    if config.store_trajectory and trace is not None:
        trace.to_csv(f"{prefix}.trace.csv")
        arts.add(f"{prefix}.trace.csv")


def _norm(x):
    return math.sqrt(float(x.data @ x.data))


def _run_sample(config, schedule, model, arts, prefix):
    x = _start_state(config, _parse_shape(config.shape))
    cond = _condition(config.label)
    guidance = GuidanceConfig(config.guidance)
    if config.sampler == "edict":
        state, trace = edict_denoise(
            x, schedule, model, cond=cond, guidance=guidance, p=_effective_p(config)
        )
        out = state.x
    else:
        out = ddim_sample(x, schedule, model, cond=cond, guidance=guidance).final
        trace = None
    _write_state_artifacts(arts, prefix, out, trace, config)
    return {"norm": repr(_norm(out))}, out.all_finite()


def _run_invert(config, schedule, model, arts, prefix):
    x = _start_state(config, _parse_shape(config.shape))
    cond = _condition(config.label)
    guidance = GuidanceConfig(config.guidance)
    if config.sampler == "edict":
        state, trace = edict_invert(
            x, schedule, model, cond=cond, guidance=guidance, p=_effective_p(config)
        )
        out = state.x
    else:
        out = ddim_invert(x, schedule, model, cond=cond, guidance=guidance).final
        trace = None
    _write_state_artifacts(arts, prefix, out, trace, config)
    return {"norm": repr(_norm(out))}, out.all_finite()


def _run_roundtrip(config, schedule, model, arts, prefix):
    x0 = _start_state(config, _parse_shape(config.shape))
    cond = _condition(config.label)
    guidance = GuidanceConfig(config.guidance)
    p = _effective_p(config)
    if config.sampler == "edict":
        mid, _ = edict_invert(x0, schedule, model, cond=cond, guidance=guidance, p=p)
        state, _ = edict_denoise(mid, schedule, model, cond=cond, guidance=guidance, p=p)
        recon = state.x
    else:
        mid = ddim_invert(x0, schedule, model, cond=cond, guidance=guidance).final
        recon = ddim_sample(mid, schedule, model, cond=cond, guidance=guidance).final
    arts.tensor(recon, f"{prefix}.recon.edt1")
    d = recon.data - x0.data
    mse = float(d @ d) / d.size
    return {"mse": repr(mse)}, recon.all_finite() and math.isfinite(mse)


def _run_edit(config, schedule, model, arts, prefix):
    x0 = _start_state(config, _parse_shape(config.shape))
    params = EditParams(
        c_base=Condition.for_label(config.base_label),
        c_target=Condition.for_label(config.target_label),
        strength=config.strength,
        guidance=config.guidance,
        p=_effective_p(config),
    )
    result = edit(x0, params, schedule, model)
    _write_state_artifacts(arts, prefix, result.x, result.denoise_trace, config)
    d = result.x.data - result.y.data
    return {
        "edit_steps": str(result.num_steps),
        "xy_gap": repr(math.sqrt(float(d @ d))),
    }, result.x.all_finite()


def _bench_inputs(config, model, shape):
    n = config.n_inputs
    if n < 1:
        raise ConfigError(f"n_inputs must be >= 1, got {config.n_inputs}")
    if hasattr(model, "sample_x0"):
        rng = SeededRng(config.seed)
        inputs, conds = [], []
        for i in range(n):
            label = i % model.n_components
            x0, _ = model.sample_x0(rng, label)
            inputs.append(x0)
            conds.append(Condition.for_label(label))
        return inputs, conds
    inputs = [gaussian_draw(SeededRng(config.seed + i), shape) for i in range(n)]
    if getattr(model, "_offsets", None):
        conds = [Condition.for_label(i % 2) for i in range(n)]
    else:
        conds = [Condition.NULL] * n
    return inputs, conds


def _run_bench(config, schedule, model, arts, prefix):
    shape = _parse_shape(config.shape)
    inputs, conds = _bench_inputs(config, model, shape)
    rows = recon_benchmark(
        inputs, schedule, model, conds,
        guidance_grid=[config.guidance],
        steps_grid=_parse_grid(config.steps_grid, int, "steps grid"),
        p=config.p,
    )
    recon_rows_to_csv(rows, f"{prefix}.bench.csv")
    arts.add(f"{prefix}.bench.csv")
    return {"rows": str(len(rows))}, True


def _run_diverge(config, schedule, model, arts, prefix):
    x = _start_state(config, _parse_shape(config.shape))
    results = divergence_sweep(
        x, schedule, model,
        _parse_grid(config.p_grid, float, "p grid"),
        cond=_condition(config.label),
        guidance=GuidanceConfig(config.guidance),
    )
    path = f"{prefix}.sweep.csv"
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# schema: sweep_v1\n")
        fh.write("p,direction,flagged,min_cos,first_flagged_step\n")
        for r in results:
            first = "" if r.first_flagged_step is None else str(r.first_flagged_step)
            fh.write(
                f"{r.p!r},{r.direction},{str(r.flagged).lower()},{r.min_cos!r},{first}\n"
            )
    arts.add(path)
    if config.store_trajectory:
        for r in results:
            tp = f"{prefix}.p{r.p!r}.{r.direction}.csv"
            r.trace.to_csv(tp)
            arts.add(tp)
    n_flagged = sum(r.flagged for r in results)
    # divergence is the measurement here, so non-finite traces still exit 0
    return {"cells": str(len(results)), "flagged": str(n_flagged)}, True


def _run_align(config, schedule, model, arts, prefix):
    x0 = _start_state(config, _parse_shape(config.shape))
    cond = Condition.for_label(config.label)
    guidance = GuidanceConfig(config.guidance)
    trajectory = invert_trajectory(
        x0, schedule, model, cond=cond, guidance=guidance, p=_effective_p(config)
    )
    trace = pseudograd_alignment(trajectory, model, cond, guidance)
    trace.to_csv(f"{prefix}.align.csv")
    arts.add(f"{prefix}.align.csv")
    if trace.rows:
        series = {
            "cos_uncond": [(r.step, r.cos_uncond) for r in trace.rows],
            "cos_cond": [(r.step, r.cos_cond) for r in trace.rows],
            "cos_pseudograd": [(r.step, r.cos_pseudograd) for r in trace.rows],
        }
        write_trace_svg(f"{prefix}.align.svg", series,
                        title="prediction component alignment")
        arts.add(f"{prefix}.align.svg")
    extra = {"rows": str(len(trace.rows))}
    if trace.rows:
        extra["mean_cos_uncond"] = repr(trace.mean("cos_uncond"))
        extra["mean_cos_pseudograd"] = repr(trace.mean("cos_pseudograd"))
    return extra, True


_RUNNERS = {
    "sample": _run_sample,
    "invert": _run_invert,
    "roundtrip": _run_roundtrip,
    "edit": _run_edit,
    "bench": _run_bench,
    "diverge": _run_diverge,
    "align": _run_align,
}


def run(config):
    """Execute a validated config.  Returns (exit_code, summary_line)."""
    arts = _Artifacts()
    prefix = config.out
    parent = os.path.dirname(prefix)
    if parent:
        os.makedirs(parent, exist_ok=True)
    try:
        with open(f"{prefix}.config.txt", "w", encoding="ascii") as fh:
            fh.write(config_to_text(config))
        arts.add(f"{prefix}.config.txt")
        schedule = build_schedule(
            config.schedule, t_train=config.t_train, steps=config.steps,
            spacing=config.spacing,
        )
        if config.schedule_csv:
            schedule.to_csv(config.schedule_csv)
            arts.add(config.schedule_csv)
        shape = _parse_shape(config.shape)
        model = _load_model(config, schedule, shape)
        extra, finite_ok = _RUNNERS[config.command](config, schedule, model, arts, prefix)
    except Exception:
        arts.discard_all()
        raise
    parts = [
        f"command={config.command}",
        f"sampler={config.sampler}",
        f"model={config.model}",
        f"steps={config.steps}",
        f"p={_effective_p(config)!r}",
        f"guidance={config.guidance!r}",
        f"seed={config.seed}",
    ]
    parts.extend(f"{k}={v}" for k, v in extra.items())
    parts.append(f"out={prefix}")
    parts.append(f"ok={str(finite_ok).lower()}")
    return (0 if finite_ok else 1), " ".join(parts)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        config = parse_config(argv)
        code, summary = run(config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except SystemExit:
        raise
    except Exception as exc:  # pragma: no cover - last-resort mapping
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(summary)
    return code


if __name__ == "__main__":
    sys.exit(main())
