from .inference import model_predictor, sliding_window_infer, window_starts
from .io import (
    DataError, FundusSample, MissingMaskError, UnknownLayoutError, UnreadableImageError, load_dataset,
    read_image, read_mask, read_rgb, save_flat, to_uint16, write_image,
)
from .metrics import MetricsReport, compute_metrics, mean_report, roc_auc
from .patches import augment, extract_patch_set, extract_patches, worker_seed
from .preprocess import clahe, gamma_correct, green_channel, minmax_normalize, preprocess
from .synth import as_fundus_sample, synth_dataset, synth_vessel

__all__ = [
    "DataError", "FundusSample", "MetricsReport", "MissingMaskError", "UnknownLayoutError",
    "UnreadableImageError", "as_fundus_sample", "augment", "clahe", "compute_metrics", "extract_patch_set",
    "extract_patches", "gamma_correct", "green_channel", "load_dataset", "mean_report", "minmax_normalize",
    "model_predictor", "preprocess", "read_image", "read_mask", "read_rgb", "roc_auc", "save_flat",
    "sliding_window_infer", "synth_dataset", "synth_vessel", "to_uint16", "window_starts", "worker_seed",
]
