"""Seg-GAN: adversarial semantic segmentation with a ConvCRF discriminator."""

from ._core import (
    ConfigError,
    Discriminator,
    InputError,
    NumericalDivergence,
    SegNet,
    bilinear_upsample,
    confusion_matrix,
    conv2d,
    convcrf_forward,
    default_config,
    gen_shapes,
    grad_suite,
    leaky_relu,
    load_segnet,
    loss_adv,
    loss_ce,
    loss_discriminator,
    miou,
    one_hot,
    poly_lr,
    predict_labels,
    sigmoid,
    softmax_channels,
    train,
)

__all__ = [
    "ConfigError",
    "Discriminator",
    "InputError",
    "NumericalDivergence",
    "SegNet",
    "bilinear_upsample",
    "confusion_matrix",
    "conv2d",
    "convcrf_forward",
    "default_config",
    "gen_shapes",
    "grad_suite",
    "leaky_relu",
    "load_segnet",
    "loss_adv",
    "loss_ce",
    "loss_discriminator",
    "miou",
    "one_hot",
    "poly_lr",
    "predict_labels",
    "sigmoid",
    "softmax_channels",
    "train",
]
