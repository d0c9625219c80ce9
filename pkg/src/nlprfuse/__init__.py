"""Guided nonlocal patch regularized multiband fusion."""

from .grid import Grid, MultibandImage, PatchSpec
from .linops import BlurFilter, FilterBank, FusionOperators, SamplingMask, SpectralResponse, SubspaceBasis, build_subspace
from .metrics import MetricReport, evaluate
from .nlpr import NlprWeights, compute_weights, regularizer_value
from .simkit import DegradationSpec, degrade, make_inpainting_instance, make_phantom
from .solver import ABLATION_CASES, FusionResult, SolverConfig, solve

__all__ = [
    "ABLATION_CASES",
    "BlurFilter",
    "DegradationSpec",
    "FilterBank",
    "FusionOperators",
    "FusionResult",
    "Grid",
    "MetricReport",
    "MultibandImage",
    "NlprWeights",
    "PatchSpec",
    "SamplingMask",
    "SolverConfig",
    "SpectralResponse",
    "SubspaceBasis",
    "build_subspace",
    "compute_weights",
    "degrade",
    "evaluate",
    "make_inpainting_instance",
    "make_phantom",
    "regularizer_value",
    "solve",
]
