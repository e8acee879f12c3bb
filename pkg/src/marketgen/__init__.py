"""Controllable intraday market generation.

A conditional denoising-diffusion model learns the joint dynamics of minutely
mid-price returns and order arrival rates; its samples drive a heterogeneous
actor-agent order generator against a simulated limit-order-book exchange.
"""
from .controller import MetaController
from .exchange import Exchange, Order
from .marketstate import (
    IndicatorBinner,
    IndicatorSet,
    MarketStateDay,
    StateNormalizer,
    compute_indicators,
    extract_market_states,
)
from .metaagent import MetaAgentParams, generate_day
from .stylizedfacts import (
    autocorr,
    compute_facts,
    controllability_mse,
    kl_divergence,
    synth_corpus,
)

__version__ = "0.1.0"

__all__ = [
    "Exchange",
    "IndicatorBinner",
    "IndicatorSet",
    "MarketStateDay",
    "MetaAgentParams",
    "MetaController",
    "Order",
    "StateNormalizer",
    "autocorr",
    "compute_facts",
    "compute_indicators",
    "controllability_mse",
    "extract_market_states",
    "generate_day",
    "kl_divergence",
    "synth_corpus",
]
