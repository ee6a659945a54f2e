"""Audio-visual fusion toolkit.

Thin python surface over the C++ core: tensor ops with verified gradients,
the fusion model's losses and metrics, the planted-signal data generator,
and the train/evaluate pipelines.
"""

from trifuse._core import (  # noqa: F401
    ConfigError,
    DataError,
    NumericError,
    align_to_length,
    conv1d,
    cross_entropy_loss,
    derive_class_target,
    eri_loss,
    evaluate,
    focal_loss,
    gradcheck,
    layer_norm,
    macro_f1,
    matmul,
    mean_pearson,
    mse_loss,
    normalize_label,
    pearson_per_class,
    read_feature_file,
    softmax_rows,
    synth_generate,
    train,
    write_feature_file,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "align_to_length",
    "conv1d",
    "cross_entropy_loss",
    "derive_class_target",
    "eri_loss",
    "evaluate",
    "focal_loss",
    "gradcheck",
    "layer_norm",
    "macro_f1",
    "matmul",
    "mean_pearson",
    "mse_loss",
    "normalize_label",
    "pearson_per_class",
    "read_feature_file",
    "softmax_rows",
    "synth_generate",
    "train",
    "write_feature_file",
]

__version__ = "0.1.0"
