"""Few-step conditional diffusion: train and sample on the same small step grid."""

from .denoiser import DenoiserConfig, DenoiserNet, init as init_denoiser, time_embed
from .diffusion import (
    GaussianDataSpec,
    GaussianOracleDenoiser,
    TrainBatch,
    analytic_eps_gaussian,
    analytic_final_variance,
    ddim_step,
    forward_sample,
    sample,
    train_step,
)
from .metrics import MetricReport, psnr, ssim
from .numerics import AdamState, RandomSource
from .schedule import (
    BaseSchedule,
    NonUniform,
    StepGrid,
    Uniform,
    alpha_sigma,
    build_base,
    snr,
    subsample,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "BaseSchedule", "DenoiserConfig", "DenoiserNet", "GaussianDataSpec",
    "GaussianOracleDenoiser", "MetricReport", "NonUniform", "RandomSource", "StepGrid",
    "TrainBatch", "Uniform", "alpha_sigma", "analytic_eps_gaussian", "analytic_final_variance",
    "build_base", "ddim_step", "forward_sample", "init_denoiser", "psnr", "sample", "snr",
    "ssim", "subsample", "time_embed", "train_step",
]
