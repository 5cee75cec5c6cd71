"""Visual teach-and-repeat relative pose toolkit: SE(2) geometry, a
spatio-temporal pose graph with label sampling, a synthetic stereo world
generator, a conv+SPP pose regressor, and the evaluation/fusion harness."""

from .geometry import (DEFAULT_WEIGHTS, LossWeights, Pose2, compose, inverse,
                       relative_pose, weighted_norm, wrap_angle)
from .pose_graph import (LOCALIZATION, VO, GraphStructureError, Keyframe,
                         LabeledPair, PoseGraph, PoseGraphFormatError,
                         SamplingExhaustedError, SpatialEdge, TemporalEdge,
                         VertexId)
from .rendering import CameraModel, ConditionParams, Landmark, render_stereo
from .world import (CONDITION_PRESETS, GeneratedWorld, TraversalConfig,
                    WorldConfig, build_graph, close_loop, generate_dataset,
                    generate_repeat, generate_teach, world_preset)
from .model import (ConvStage, NetworkConfig, PoseRegressor, desk_config,
                    full_config, init, load_checkpoint, pose_loss,
                    save_checkpoint, spp, tiny_config)
from .data import ImageCache, PairDataset, assemble_dataset, load_pairs, save_pairs
from .training import EarlyStopping, TrainConfig, TrainReport, train
from .evaluation import (BiasedPredictor, EvalReport, FusionStep, FusionTrace,
                         LocSample, MatrixCell, ModelPredictor, NoisyPredictor,
                         OraclePredictor, Predictor, error_cdf,
                         graph_relative_pose, integrate_vo,
                         localize_standalone, path_follow, rmse_matrix)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
