"""Gradient engines for deep recurrent networks.

Thin re-export of the compiled core: reverse-mode (bptt), dense forward
sensitivities (deep_rtrl), per-synapse eligibility traces (eprop), the
finite-difference and path-enumeration oracles, a task trainer, and the
self-verification battery.
"""

from ._core import (
    DivergenceError,
    Model,
    ParamSet,
    ResourceError,
    SpecError,
    bptt_gradient,
    checkpoint_text,
    deep_rtrl_gradient,
    eprop_gradient,
    finite_diff_gradient,
    gradient_paths,
    init_params,
    load_checkpoint_text,
    parse_model,
    run_episode,
    train_on_task,
    verify,
)

__all__ = [
    "DivergenceError",
    "Model",
    "ParamSet",
    "ResourceError",
    "SpecError",
    "bptt_gradient",
    "checkpoint_text",
    "deep_rtrl_gradient",
    "eprop_gradient",
    "finite_diff_gradient",
    "gradient_paths",
    "init_params",
    "load_checkpoint_text",
    "parse_model",
    "run_episode",
    "train_on_task",
    "verify",
]
