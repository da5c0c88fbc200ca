"""Comparison methods: deep linear networks, diagonal networks, l1 and nuclear-norm minimization."""

from .convex import l1_min, nuclear_norm, nuclear_norm_min, soft_threshold, svt
from .nets import (
    GD,
    Balanced,
    DiagNearZero,
    Gaussian,
    LinearNet,
    RMSProp,
    TrainConfig,
    balanced_init,
    balancedness_defect,
    default_std,
    diag_gradients,
    init_net,
    layer_shapes,
    load_checkpoint,
    net_gradients,
    net_loss,
    nfa_defect,
    save_checkpoint,
    train_diag_net,
    train_linear_net,
)

__all__ = [
    "l1_min",
    "nuclear_norm",
    "nuclear_norm_min",
    "soft_threshold",
    "svt",
    "GD",
    "RMSProp",
    "Balanced",
    "Gaussian",
    "DiagNearZero",
    "TrainConfig",
    "LinearNet",
    "layer_shapes",
    "default_std",
    "init_net",
    "balanced_init",
    "balancedness_defect",
    "nfa_defect",
    "net_loss",
    "net_gradients",
    "diag_gradients",
    "train_linear_net",
    "train_diag_net",
    "save_checkpoint",
    "load_checkpoint",
]
