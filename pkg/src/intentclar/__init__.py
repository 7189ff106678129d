"""Intent-clarification data construction and evaluation for tool-using assistants."""

from __future__ import annotations

__version__ = "0.1.0"

from .degrade import (  # noqa: E402
    RemovalPlan,
    SamplerConfig,
    SimilarityProviderConfig,
    degrade_query,
    quality_gate,
    sample_removal_plan,
    similarity,
)
from .dialogue import assemble_dialogue, decompose_task, generate_questions, load_tones, render_user_reply  # noqa: E402
from .gateway import ChatRequest, Gateway, GatewayConfig, Mode, cache_key  # noqa: E402
from .harness import (  # noqa: E402
    OracleAssistant,
    ScriptedAssistant,
    Termination,
    build_scenario,
    run_session,
    score_session,
    simulate_user,
)
from .inject import (  # noqa: E402
    InjectionPolicy,
    augment_dialogue,
    generate_incomplete_error,
    generate_redundant_error,
    inject,
    plan_injection,
)
from .masking import TrainingSample, emit, extract_error_spans  # noqa: E402
from .metrics import MetricsReport, SessionTally, aggregate, f1_sets, format_table  # noqa: E402
from .model import (  # noqa: E402
    ComplexityLevel,
    DegradedRecord,
    DialogueRecord,
    ErrorType,
    KeyInfo,
    ParameterSpec,
    SolutionPath,
    ToolCall,
    validate_record,
)
from .protocol import extract_solution, parse_turn  # noqa: E402
from .pipeline import ConfigError, StageFailure, dataset_stats, load_config, make_gateway, run_pipeline  # noqa: E402
from .fixtures import FixtureBundle, verify_bundle  # noqa: E402

__all__ = [
    "__version__",
    "ChatRequest", "Gateway", "GatewayConfig", "Mode", "cache_key",
    "ComplexityLevel", "DegradedRecord", "DialogueRecord", "ErrorType", "KeyInfo",
    "ParameterSpec", "SolutionPath", "ToolCall", "validate_record",
    "RemovalPlan", "SamplerConfig", "SimilarityProviderConfig", "degrade_query",
    "quality_gate", "sample_removal_plan", "similarity",
    "assemble_dialogue", "decompose_task", "generate_questions", "load_tones", "render_user_reply",
    "InjectionPolicy", "augment_dialogue", "generate_incomplete_error", "generate_redundant_error",
    "inject", "plan_injection",
    "TrainingSample", "emit", "extract_error_spans",
    "extract_solution", "parse_turn",
    "MetricsReport", "SessionTally", "aggregate", "f1_sets", "format_table",
    "OracleAssistant", "ScriptedAssistant", "Termination", "build_scenario", "run_session",
    "score_session", "simulate_user",
    "ConfigError", "StageFailure", "dataset_stats", "load_config", "make_gateway", "run_pipeline",
    "FixtureBundle", "verify_bundle",
]
