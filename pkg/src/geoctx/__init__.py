"""Self-supervised contextual embeddings for heterogeneous vector geoentities.

The package pretrains a dual-stream spatial transformer over points,
polylines, and polygons with four objectives (masked semantic modeling,
pairwise geometry supervision, anchor-conditioned contrastive learning, and
semivariogram margin regularization), then exports frozen contextual
embeddings for downstream probes.
"""

from .geoentities import Dataset, Geoentity, Geometry, load_dataset, parse_geoentity_record
from .losses import LossConfig, LossReport
from .model import ModelConfig, ParamStore, load_checkpoint, save_checkpoint
from .train import TrainConfig

__all__ = [
    "Dataset",
    "Geoentity",
    "Geometry",
    "LossConfig",
    "LossReport",
    "ModelConfig",
    "ParamStore",
    "TrainConfig",
    "load_checkpoint",
    "load_dataset",
    "parse_geoentity_record",
    "save_checkpoint",
]

__version__ = "0.1.0"
