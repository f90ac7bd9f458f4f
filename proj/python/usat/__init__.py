"""Multi-sensor masked-autoencoder toolkit (C++ core)."""

from usat._core import (  # noqa: F401
    GeometryConfig,
    RuntimeFailure,
    ValidationError,
    accuracy,
    average_precision,
    bilinear_resample,
    compose_encodings,
    evaluate,
    fine_grid_offset,
    macro_ap,
    mask_count,
    micro_ap,
    posenc_2d,
    pretrain,
    sample_masks,
    sequence_length,
    sincos_1d,
    superpositional,
    synth_generate,
    usatlas_geometry,
)

__all__ = [
    "GeometryConfig",
    "RuntimeFailure",
    "ValidationError",
    "accuracy",
    "average_precision",
    "bilinear_resample",
    "compose_encodings",
    "evaluate",
    "fine_grid_offset",
    "macro_ap",
    "mask_count",
    "micro_ap",
    "posenc_2d",
    "pretrain",
    "sample_masks",
    "sequence_length",
    "sincos_1d",
    "superpositional",
    "synth_generate",
    "usatlas_geometry",
]
