"""ezpipe: recipe-free training pipelines built on a lazy dataset and a two-phase Trainer."""

from .batching import BatchPlan, build_fixed_sampler, build_numel_sampler
from .dataset import EZDataset, build_dataset, from_data_directory, get_item, to_data_directory
from .errors import EZError
from .finetune import (
    AugmentationSpec,
    LoRASpec,
    augment,
    count_trainable,
    freeze,
    inject_lora,
    merge_lora,
)
from .manifest import DataDirectory, Utterance, load_data_directory, validate_data_directory, write_data_directory
from .model import TrainableModel
from .modelhub import from_pretrained
from .optim import adamw_step, lr_at
from .stats import FeatureStats, ShapeRecord, collect_stats, finalize_normalizer, merge_stats
from .trainer import Checkpoint, Trainer, TrainConfig, TrainResult, evaluate, train

__version__ = "0.1.0"
