"""Joint face super-resolution and landmark detection with pose-transfer supervision."""

from .config import PHASES, Config, load_config, save_config, validate_config
from .errors import (
    ConfigError,
    DataError,
    HallmarkError,
    TrainingAbort,
)
from .heatmaps import decode_heatmaps, render_heatmaps
from .losses import LossBreakdown, PerceptualExtractor, loss_dh, loss_gan, loss_pt, loss_sht
from .metrics import EvalReport, ced_auc, failure_rate, nme, psnr_y, ssim_y
from .model import DualStreamNet
from .toyfaces import generate_toy_dataset
from .training import Trainer, evaluate_detector
from .transfer import AppearanceDiscriminator, ShapeDiscriminator, TransferGenerator
from .types import HeatmapStack, ImageTensor, LandmarkSet

__version__ = "0.1.0"

__all__ = [
    "PHASES",
    "Config",
    "load_config",
    "save_config",
    "validate_config",
    "HallmarkError",
    "ConfigError",
    "DataError",
    "TrainingAbort",
    "render_heatmaps",
    "decode_heatmaps",
    "LossBreakdown",
    "PerceptualExtractor",
    "loss_dh",
    "loss_gan",
    "loss_pt",
    "loss_sht",
    "EvalReport",
    "nme",
    "ced_auc",
    "failure_rate",
    "psnr_y",
    "ssim_y",
    "DualStreamNet",
    "TransferGenerator",
    "AppearanceDiscriminator",
    "ShapeDiscriminator",
    "generate_toy_dataset",
    "Trainer",
    "evaluate_detector",
    "HeatmapStack",
    "ImageTensor",
    "LandmarkSet",
    "__version__",
]
