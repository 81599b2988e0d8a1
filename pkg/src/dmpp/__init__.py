"""Spatio-temporal point process intensities as neural mixtures of kernel experts."""
from .config import RunConfig, load_config
from .context import (EventDescription, RasterMap, SnapshotBatch, Variant, Vocabulary,
                      build_snapshots, build_vocabulary, encode_tokens, extract_image_patch)
from .domain import (Event, NormalizationTransform, RepPointGrid, SpatioTemporalDomain,
                     build_grid, normalize)
from .errors import *  # noqa: F401,F403
from .evaluation import (CountGrid, HpModel, Partition, build_eval_partition, count_events,
                         fit_hp, hp_counts, hp_log_likelihood, mape, predict_counts,
                         simulate_thinning, test_log_likelihood)
from .kernels import (Box, KernelFamily, KernelMatrix, KernelParams, kernel_box_integral,
                      kernel_box_integral_grad, kernel_eval, kernel_matrix, kernel_row)
from .model import DmppModel, FixedMixture
from .network import NetworkConfig, fusion_forward, init_parameters
from .training import AdamState, TrainConfig, adam_step, gradient_check_model, train

__version__ = "0.1.0"
