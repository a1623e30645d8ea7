"""Position-aware partial point-cloud matching: rotary 3-D encoding, attention,
dual-softmax matching, soft Procrustes, embedded-deformation registration and
matching metrics, in plain numpy/scipy."""
from .attention import (AttentionWeights, LossConfig, TransformerWeights, cross_attention, matching_loss,
                        self_attention, transformer_block, warping_loss)
from .config import ConfigError, RunConfig
from .deform import DeformationGraph, GraphState, GraphWarp, build_graph, warp_points
from .fileio import read_matrix, read_weights, write_matrix, write_weights
from .geometry import (CorrespondenceSet, NearestNeighbors, RigidTransform, TabulatedWarp, grid_subsample,
                       nearest_neighbor, overlap_set)
from .matching import MatchConfig, dual_softmax, score_matrix, select_matches, top_soft_matches
from .metrics import (MetricConfig, correspondence_rmse, feature_matching_recall, flow_metrics, inlier_ratio,
                      nfmr, registration_recall)
from .nicp import Matches, NicpConfig, UnderdeterminedSystem, gauss_newton_solve
from .pipeline import PipelineWeights, run_pipeline, total_loss
from .ply import read_ply, write_ply
from .procrustes import DegenerateConfiguration, reposition, soft_procrustes, weighted_kabsch
from .ransac import RegistrationFailed, ransac_rigid
from .rope import EncodingConfig, PositionCode, encode
from .synth import synth_deformable_pair, synth_rigid_pair

__version__ = "0.1.0"
