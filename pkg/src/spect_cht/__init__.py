"""SPECT reconstruction under uniform attenuation via cosh-weighted Hilbert inversion."""

__version__ = "0.1.0"

from .cht import StandardLine, invert_line, normalize_line, solve_line
from .dbp import backproject, backproject_points
from .phantom import ImageGrid, Phantom, default_phantom, ert_line, project, rasterize
from .recon import ReconConfig, profile, reconstruct, rmse, run_reconstruction
from .sinogram import Sinogram, add_poisson_noise, apply_truncation, differentiate_s

__all__ = [
    "ImageGrid",
    "Phantom",
    "ReconConfig",
    "Sinogram",
    "StandardLine",
    "add_poisson_noise",
    "apply_truncation",
    "backproject",
    "backproject_points",
    "default_phantom",
    "differentiate_s",
    "ert_line",
    "invert_line",
    "normalize_line",
    "profile",
    "project",
    "rasterize",
    "reconstruct",
    "rmse",
    "run_reconstruction",
    "solve_line",
]
