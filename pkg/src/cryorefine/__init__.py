"""Sparsity-regularized EM refinement for single-particle cryo-EM maps.

The package simulates particles from a blob phantom, refines a 3D map from
them by expectation maximization over a discrete pose grid, and replaces the
usual per-shell Wiener M-step with a reweighted L1 plus smoothed total
variation solve.  Gold-standard half-map FSC drives resolution estimates.
"""

from .em import (AccumulatorPair, NoiseSpectrum, OrientationGrid, PosteriorRow,
                 backproject_accumulate, e_step, estimate_noise, naive_reconstruct,
                 split_halves, wiener_reconstruct)
from .errors import CryoRefineError, DidNotConverge, IoError, ValidationError
from .forward import (CTFParams, ParticleImage, ParticleSet, PhantomSpec, Pose,
                      extract_slice, generate_phantom, simulate_particles)
from .grid import FourierVolume, GradientField, Volume3D, fft3, ifft3
from .kernels import KernelSpec
from .params import RefineConfig, derive_config, scale_data, sweep_grid
from .refine import RefineResult, em_refine, reconstruct_known_poses
from .regularizer import RegConfig, compute_weights, m_step, prox_l1
from .validation import FSCCurve, Mask, fsc, model_map_fsc, resolution_at_threshold

__version__ = "0.1.0"

__all__ = [
    "AccumulatorPair", "CTFParams", "CryoRefineError", "DidNotConverge", "FSCCurve",
    "FourierVolume", "GradientField", "IoError", "KernelSpec", "Mask", "NoiseSpectrum",
    "OrientationGrid", "ParticleImage", "ParticleSet", "PhantomSpec", "Pose", "PosteriorRow",
    "RefineConfig", "RefineResult", "RegConfig", "ValidationError", "Volume3D",
    "backproject_accumulate", "compute_weights", "derive_config", "e_step", "em_refine",
    "estimate_noise", "extract_slice", "fft3", "fsc", "generate_phantom", "ifft3", "m_step",
    "model_map_fsc", "naive_reconstruct", "prox_l1", "reconstruct_known_poses",
    "resolution_at_threshold", "scale_data", "simulate_particles", "split_halves",
    "sweep_grid", "wiener_reconstruct",
]
