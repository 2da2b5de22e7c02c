from .modelspec import FactorModelSpec, MeanModel, ModelData, SamplerConfig
from .state import ChainState, init_state_from_prior
from .adapt import effective_k, adapt_truncation
from .chain import gibbs_sweep, run_chain, run_many_chains
from .store import DrawStore

__all__ = [
    "FactorModelSpec",
    "MeanModel",
    "ModelData",
    "SamplerConfig",
    "ChainState",
    "init_state_from_prior",
    "effective_k",
    "adapt_truncation",
    "gibbs_sweep",
    "run_chain",
    "run_many_chains",
    "DrawStore",
]
