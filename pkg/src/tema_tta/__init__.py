"""Training-free test-time normalization with TEMA and layer-wise rectification."""

from ._backend import BACKEND
from .diversity import DiversityQuery, expected_diversity, sample_multiset_diversity
from .engine import BatchResult, Engine, EngineConfig, LayerModel, classify, forward_pass
from .momentum import MomentumChoice, MomentumConfig, effective_batch_count, effective_pool, select_momentum
from .rectifier import RectifierState, divergence_to_alpha, gaussian_sym_kl, update_prior
from .stats import ChannelStats, TemaState, batch_moments, mix_statistics, normalize_features

__version__ = "0.1.0"
