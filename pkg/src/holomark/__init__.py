"""holomark: holistic image watermarking with joint tamper localization.

Embeds a binary message through residual adapters in a toy autoencoder
decoder and trains a mixture-of-experts forensic network that recovers the
message and segments tampered regions, end to end and self-supervised.
"""

__version__ = "0.1.0"

from .autoencoder import WatermarkAdapter, WatermarkAutoencoder
from .configs import (AttackSpec, AutoencoderConfig, ConfigError, LossConfig,
                      MoeConfig, PretrainConfig, RunConfig, SpliceConfig,
                      TrainConfig, UnetConfig, config_hash, run_config_from_dict)
from .forensic import ForensicNetwork, MixtureBlock, SoftRouter
from .losses import LossReport, dice_loss, sim_loss, tamper_loss, total_loss, wbce_loss, wm_loss
from .synthesis import TrainingSample, make_training_sample, sample_mask, splice
from .training import JointTrainer, assert_frozen, pretrain_autoencoder, train

__all__ = [
    "__version__",
    "AttackSpec", "AutoencoderConfig", "ConfigError", "LossConfig", "MoeConfig",
    "PretrainConfig", "RunConfig", "SpliceConfig", "TrainConfig", "UnetConfig",
    "WatermarkAdapter", "WatermarkAutoencoder", "ForensicNetwork", "MixtureBlock",
    "SoftRouter", "LossReport", "dice_loss", "sim_loss", "tamper_loss", "total_loss",
    "wbce_loss", "wm_loss", "TrainingSample", "make_training_sample", "sample_mask",
    "splice", "JointTrainer", "assert_frozen", "pretrain_autoencoder", "train",
    "config_hash", "run_config_from_dict",
]
