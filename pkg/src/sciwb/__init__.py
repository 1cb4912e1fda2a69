"""Snapshot compressive imaging workbench.

Simulation of coded-aperture snapshot systems, classic and learned
reconstruction (GAP-TV, stacked residual networks, unfolded GAP), and
architecture/quality analysis tooling.
"""

from .autograd import (Tensor, conv2d, global_avg_pool, l2_norm_loss, mse_loss,
                       no_grad, pixel_shuffle, relu, sigmoid)
from .exceptions import (ContractError, DataError, DimensionError,
                         NumericalError, SciwbError, UsageError)
from .forward_model import (MaskSet, Measurement, SensingOp, build_sensing_op,
                            disperse, expand_mask, generate_mask, init_input,
                            measure, modulate, sample_noise_std, undisperse)
from .gap import (GapConfig, GapState, gap_loss, gap_project, gap_srn_forward,
                  gap_tv_reconstruct, identity_denoiser, train_gap_srn,
                  tv_denoise)
from .metrics import MetricReport, evaluate, pooled_psnr, psnr, ssim, ssim_plane
from .optim import Adam, halved_lr
from .srn import SrnConfig, SrnModel, layer_plan
from .analysis import (ArchProfile, build_profile, count_flops, count_params,
                       receptive_field, standard_variant_profiles)

__version__ = "0.1.0"

__all__ = [
    "Adam", "ArchProfile", "ContractError", "DataError", "DimensionError",
    "GapConfig", "GapState", "MaskSet", "Measurement", "MetricReport",
    "NumericalError", "SciwbError", "SensingOp", "SrnConfig", "SrnModel",
    "Tensor", "UsageError", "build_profile", "build_sensing_op", "conv2d",
    "count_flops", "count_params", "disperse", "evaluate", "expand_mask",
    "gap_loss", "gap_project", "gap_srn_forward", "gap_tv_reconstruct",
    "generate_mask", "global_avg_pool", "halved_lr", "identity_denoiser",
    "init_input", "l2_norm_loss", "layer_plan", "measure", "modulate",
    "mse_loss", "no_grad", "pixel_shuffle", "pooled_psnr", "psnr",
    "receptive_field", "relu", "sample_noise_std", "sigmoid", "ssim",
    "ssim_plane", "standard_variant_profiles", "train_gap_srn", "tv_denoise",
    "undisperse",
]
