"""Python access to the rfrp spectrum, model and harness utilities."""

from ._rfrp import (
    AZIMUTH_BINS,
    ELEVATION_BINS,
    CheckpointError,
    DegenerateInput,
    InvalidArgument,
    bin_center,
    bin_of,
    checkpoint_summary,
    config_to_json,
    desk_config_json,
    fourier_encode,
    gate,
    generate_dataset,
    lr_at,
    masked_count,
    positional_encoding,
    read_dataset,
    spatial_spectrum,
    ssim,
    steering_weights,
    top_k_indices,
    triangulate,
    write_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]
