"""Query-based camera/lidar fusion on synthetic desk-scale driving scenes."""

from fusionq.config import ExperimentConfig, load_config
from fusionq.decoder import DecoderConfig, FusionDecoder, run_decoder
from fusionq.model import FusionModel, Modality
from fusionq.query_gen import ImageQueryGenerator, PointCloudQueryGenerator
from fusionq.scenesim import SceneConfig, generate_sequence

__all__ = [
    "ExperimentConfig",
    "load_config",
    "DecoderConfig",
    "FusionDecoder",
    "run_decoder",
    "FusionModel",
    "Modality",
    "ImageQueryGenerator",
    "PointCloudQueryGenerator",
    "SceneConfig",
    "generate_sequence",
]
