"""Coarse-to-fine indoor localization from WiFi fingerprints and visual features."""

from .coarse import (RpClassifierModel, area_likelihoods, baseline_wifi_only, coarse_localize,
                     featurize, rp_likelihoods, select_candidate_areas, train_classifier)
from .config import ChannelParams, ExperimentConfig, SceneParams, load_config
from .core import (AreaPartition, CandidateSelection, ImageFeatures, LikelihoodVector, Location,
                   ReferencePoint, RssiObservation, make_grid_partition)
from .fine import (RegressorModel, fine_localize, joint_loss, loss_gradient, pool_features,
                   project_to_area, train_fine)
from .db import load_db, save_db
from .evaluation import (error_cdf, run_accuracy_experiment, run_experiment, run_grid_sweep,
                         run_latency_bench)
from .pipeline import TrainedSystem, load_system, save_system, train_system
from .sim import Environment, run_survey

__version__ = "0.1.0"
