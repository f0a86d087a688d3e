"""Conditional diffusion augmentation for EEG epoch classification."""

from .classifiers import (
    ClassifierSpec,
    EEGNetClassifier,
    FoldReport,
    TSceptionClassifier,
    build_classifier,
    ci95,
    crossval_evaluate,
    make_svm,
    train_and_eval,
)
from .data import (
    ChecksumError,
    DataError,
    LabeledDataset,
    SplitSpec,
    import_deap,
    import_sadt,
    load_dataset,
    make_toy_corpus,
    normalize,
    pad_channels,
    save_dataset,
    split_subject_independent,
)
from .diffusion import (
    augment_condition,
    estimate_y0,
    forward_marginal,
    generate,
    posterior_params,
    refinement_step,
    training_loss,
)
from .estimator import DiffusionAugmenter, GaussianNoiseAugmenter
from .schedule import NoiseSchedule, ScheduleError, build_linear_schedule, sample_gamma
from .training import TrainOptions, train_denoiser
from .unet import DenoiserConfig, UNet, build_denoiser, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "ChecksumError",
    "ClassifierSpec",
    "DataError",
    "DenoiserConfig",
    "DiffusionAugmenter",
    "EEGNetClassifier",
    "FoldReport",
    "GaussianNoiseAugmenter",
    "LabeledDataset",
    "NoiseSchedule",
    "ScheduleError",
    "SplitSpec",
    "TSceptionClassifier",
    "TrainOptions",
    "UNet",
    "augment_condition",
    "build_classifier",
    "build_denoiser",
    "build_linear_schedule",
    "ci95",
    "crossval_evaluate",
    "estimate_y0",
    "forward_marginal",
    "generate",
    "import_deap",
    "import_sadt",
    "load_checkpoint",
    "load_dataset",
    "make_svm",
    "make_toy_corpus",
    "normalize",
    "pad_channels",
    "posterior_params",
    "refinement_step",
    "sample_gamma",
    "save_checkpoint",
    "save_dataset",
    "split_subject_independent",
    "train_and_eval",
    "train_denoiser",
    "training_loss",
]
