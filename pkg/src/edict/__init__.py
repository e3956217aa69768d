"""Deterministic diffusion sampling with exact inversion.

The coupled sampler advances two intertwined state sequences through a stack
of affine steps arranged so that every step has a closed-form inverse; a
noising pass therefore recovers, to float round-off, exactly the state a
denoising pass started from.  A plain deterministic single-sequence sampler
(whose inversion is only approximate) is included as the baseline, along
with closed-form and trained toy noise predictors, partial-inversion
editing, and measurement harnesses for reconstruction error, mixing-weight
divergence, and prediction alignment.
"""

from ._kernels import NAME as backend_name
from ._kernels import available_backends
from .coupled import (
    CoupledState,
    CoupledTrace,
    TraceRow,
    cosine_similarity,
    edict_denoise,
    edict_denoise_step,
    edict_invert,
    edict_noise_step,
    mix,
    scale_p,
    unmix,
)
from .ddim import Trajectory, ddim_invert, ddim_invert_step, ddim_sample, ddim_step
from .diagnostics import (
    AlignmentRow,
    AlignmentTrace,
    ReconRow,
    SweepResult,
    divergence_sweep,
    invert_trajectory,
    pseudograd_alignment,
    recon_benchmark,
    recon_rows_to_csv,
    write_trace_svg,
)
from .editing import EditParams, EditResult, edit, edit_roundtrip_report
from .eps_models import (
    Condition,
    ConstantEps,
    EpsModel,
    GaussianScoreEps,
    GuidanceConfig,
    LinearEps,
    MlpEps,
    ModelError,
    denoise_mse,
    guided_predict,
    time_embedding,
    train_mlp,
)
from .schedule import (
    NoiseSchedule,
    StepCoeffs,
    build_schedule,
    coeffs_from_alpha,
    forward_noise,
    select_timesteps,
)
from .tensor_io import (
    EdictError,
    FormatError,
    SeededRng,
    Tensor,
    gaussian_draw,
    read_pgm,
    read_tensor,
    write_pgm,
    write_tensor,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentRow",
    "AlignmentTrace",
    "Condition",
    "ConstantEps",
    "CoupledState",
    "CoupledTrace",
    "EdictError",
    "EditParams",
    "EditResult",
    "EpsModel",
    "FormatError",
    "GaussianScoreEps",
    "GuidanceConfig",
    "LinearEps",
    "MlpEps",
    "ModelError",
    "NoiseSchedule",
    "ReconRow",
    "SeededRng",
    "StepCoeffs",
    "SweepResult",
    "Tensor",
    "TraceRow",
    "Trajectory",
    "available_backends",
    "backend_name",
    "build_schedule",
    "coeffs_from_alpha",
    "cosine_similarity",
    "ddim_invert",
    "ddim_invert_step",
    "ddim_sample",
    "ddim_step",
    "denoise_mse",
    "divergence_sweep",
    "edict_denoise",
    "edict_denoise_step",
    "edict_invert",
    "edict_noise_step",
    "edit",
    "edit_roundtrip_report",
    "forward_noise",
    "gaussian_draw",
    "guided_predict",
    "invert_trajectory",
    "mix",
    "pseudograd_alignment",
    "read_pgm",
    "read_tensor",
    "recon_benchmark",
    "recon_rows_to_csv",
    "scale_p",
    "select_timesteps",
    "time_embedding",
    "train_mlp",
    "unmix",
    "write_pgm",
    "write_tensor",
    "write_trace_svg",
]
