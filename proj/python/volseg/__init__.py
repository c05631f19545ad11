"""3D CNN volumetric segmentation: networks, phantom data, NIfTI I/O and the experiment harness."""

from ._core import (
    ARCHS,
    ArgumentError,
    ConfigError,
    FormatError,
    IoError,
    Model,
    ShapeError,
    StateError,
    VolsegError,
    compare_runs,
    conv3d,
    dense,
    deterministic,
    dice_score,
    emit_plot_data,
    f1_score,
    fingerprint,
    generate_phantom,
    global_avg_pool,
    load_config,
    maxpool3d,
    normalize,
    pixel_accuracy,
    read_nifti,
    run_experiment,
    set_deterministic,
    summarize_config,
    transposed_conv3d,
    write_nifti,
)

__all__ = [name for name in dir() if not name.startswith("_")]
