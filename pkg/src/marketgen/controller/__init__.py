"""Conditional diffusion market-state model and its samplers."""
from .model import (
    MetaController,
    cfg_combine,
    ddim_sample,
    ddpm_sample,
    forward_diffuse,
)
from .network import (
    ContinuousConditionEncoder,
    Denoiser,
    DenoiserConfig,
    DiscreteConditionEncoder,
)
from .schedule import DiffusionSchedule, ddim_step_subsequence, make_schedule

__all__ = [
    "ContinuousConditionEncoder",
    "Denoiser",
    "DenoiserConfig",
    "DiffusionSchedule",
    "DiscreteConditionEncoder",
    "MetaController",
    "cfg_combine",
    "ddim_sample",
    "ddim_step_subsequence",
    "ddpm_sample",
    "forward_diffuse",
    "make_schedule",
]
