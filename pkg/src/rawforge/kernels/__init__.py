"""SR kernel modelling: forward model, Gaussian kernels, joint estimation."""

from .estimate import FlatFields, KernelEstimationConfig, KernelProblem, estimate_kernels
from .forward import SrKernelSet, forward_model
from .gaussian import GaussianKernelSpec, gen_gaussian_kernel
from .grid import FovResult, PatchData, PatchFailure, average_burst, estimate_fov_grid, split_fov

__all__ = ["FlatFields", "FovResult", "GaussianKernelSpec", "KernelEstimationConfig", "KernelProblem",
           "PatchData", "PatchFailure", "SrKernelSet", "average_burst", "estimate_fov_grid",
           "estimate_kernels", "forward_model", "gen_gaussian_kernel", "split_fov"]
