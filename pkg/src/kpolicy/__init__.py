"""Adaptive Cartesian k-space subsampling policies trained with policy
gradients, plus the baselines and diagnostics used to analyse them."""

from .estimators import AcquisitionConfig
from .kspace import ColumnMask, apply_mask, forward_transform, init_center_mask, inverse_transform
from .metrics import SsimConfig, psnr, reward, ssim
from .policynet import ArchSpec, GradientBuffer, OptimizerState, PolicyNetwork
from .recon import ExternalTable, ZeroFilled

__all__ = [
    "AcquisitionConfig",
    "ArchSpec",
    "ColumnMask",
    "ExternalTable",
    "GradientBuffer",
    "OptimizerState",
    "PolicyNetwork",
    "SsimConfig",
    "ZeroFilled",
    "apply_mask",
    "forward_transform",
    "init_center_mask",
    "inverse_transform",
    "psnr",
    "reward",
    "ssim",
]
