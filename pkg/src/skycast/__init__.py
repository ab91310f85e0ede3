"""Short-term solar irradiance forecasting from sky-camera image sequences."""

from .clearsky import (
    ClearSkyParams,
    Site,
    SolarAngles,
    clearsky_index,
    esra_clearsky_ghi,
    haurwitz_clearsky_ghi,
    smart_persistence_forecast,
    solar_position,
)
from .dataset import (
    SampleIndex,
    SampleSet,
    SkySample,
    SplitSpec,
    assemble_sample,
    build_sample_set,
    ingest_directory,
    preprocess_image,
    split_afternoon_validation,
    split_distinct_days,
)
from .evaluation import EvaluationReport, evaluate_model, forecast_skill, horizon_sweep
from .model import Network, NetworkConfig, build_network, forward_batch, receptive_field_check
from .synth import GenConfig, synth_generate
from .training import TrainConfig, TrainHistory, load_checkpoint, save_checkpoint, train_model

__version__ = "0.1.0"
