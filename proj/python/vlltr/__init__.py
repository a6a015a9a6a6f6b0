"""Desk-scale long-tail recognition with language guidance."""

from ._vlltr import (
    IoError,
    NumericError,
    RunConfig,
    ShapeError,
    ValidationError,
    VlltrError,
    ablate,
    ccl_loss,
    config,
    distill_loss,
    evaluate,
    evaluate_run,
    finetune,
    gen_data,
    gradcheck,
    make_teacher,
    pareto_counts,
    pretrain,
    retrieve,
    run_pipeline,
    select_anchors,
    sqrt_weights,
)

__all__ = [
    "IoError",
    "NumericError",
    "RunConfig",
    "ShapeError",
    "ValidationError",
    "VlltrError",
    "ablate",
    "ccl_loss",
    "config",
    "distill_loss",
    "evaluate",
    "evaluate_run",
    "finetune",
    "gen_data",
    "gradcheck",
    "make_teacher",
    "pareto_counts",
    "pretrain",
    "retrieve",
    "run_pipeline",
    "select_anchors",
    "sqrt_weights",
]
