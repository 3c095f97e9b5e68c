"""Desk-scale reference-guided video object insertion.

A conditional video diffusion transformer trained on synthetic
recognize-track-erase quintuples, with dual classifier-free guidance
sampling and a Frechet-metric benchmark harness. Everything runs on CPU
from scratch: the tensor engine, codec, model, sampler, data pipeline,
and metrics live in the submodules named after what they do.
"""

__version__ = "0.1.0"

from .codec import CodecConfig, decode, encode, latent_shape, read_video, write_video
from .conditioning import ConditionBundle, DropoutPolicy, Presence, Quintuple
from .config import RunConfig, desk_config, load_config, save_config
from .diffusion import DdimPlan, NoiseSchedule, add_noise, ddim_step, make_plan, make_schedule
from .errors import ContractError, ShapeError
from .harness import TrainState, edit, evaluate_dirs, load_checkpoint, train
from .metrics import EmbedderSuite, MetricReport, evaluate, fid, frechet_distance, fvd
from .model import DiTModel, ModelConfig
from .sampler import GuidanceConfig, cfg_epsilon, dual_cfg_epsilon, sample
from .synth import PipelineStages, SceneSpec, Sprite, build_dataset, load_manifest

__all__ = [
    "CodecConfig",
    "ConditionBundle",
    "ContractError",
    "DdimPlan",
    "DiTModel",
    "DropoutPolicy",
    "EmbedderSuite",
    "GuidanceConfig",
    "MetricReport",
    "ModelConfig",
    "NoiseSchedule",
    "PipelineStages",
    "Presence",
    "Quintuple",
    "RunConfig",
    "SceneSpec",
    "ShapeError",
    "Sprite",
    "TrainState",
    "__version__",
    "add_noise",
    "build_dataset",
    "cfg_epsilon",
    "ddim_step",
    "decode",
    "desk_config",
    "dual_cfg_epsilon",
    "edit",
    "encode",
    "evaluate",
    "evaluate_dirs",
    "fid",
    "frechet_distance",
    "fvd",
    "latent_shape",
    "load_checkpoint",
    "load_config",
    "load_manifest",
    "make_plan",
    "make_schedule",
    "read_video",
    "sample",
    "save_config",
    "train",
    "write_video",
]
