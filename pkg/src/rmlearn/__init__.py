"""Reward machine inference from demonstrations, with a tabular QRM learner."""

from .blockworld import (BlockWorldState, PickPlaceAction, TaskSpec, expert_demos,
                         load_task_spec, placement_error, reset, step)
from .cluster import DBSCAN, Clustering, DbscanParams, Prototype, cluster_center, dbscan, \
    extract_prototypes
from .featurize import FeatureExtractor, featurize_state, featurize_trajectory
from .qrm import (QRMAgent, QRMTrainer, QTables, ReplayBuffers, TrainConfig, epsilon_at,
                  evaluate_greedy, q_update, seed_buffers_from_demos, td_target, train)
from .rmcore import (LabelingFn, RewardMachine, RewardMachineLearner, RmRunState,
                     abstract_demonstration, compute_potentials, export_graph, identify_goal,
                     infer_delta_u, label, rm_step, shaped_reward)
from .trajectories import (AbstractDemonstration, DemonstrationSet, Trajectory,
                           load_demonstrations, save_demonstrations)

__version__ = "0.1.0"
