"""Relation classification between annotated entity pairs.

The heavy lifting happens in the compiled ``_relcat`` extension; this package
re-exports it under shorter names.
"""

from ._relcat import (
    Config,
    ConfigError,
    Dataset,
    Model,
    RelcatError,
    TrainOutput,
    categories,
    compute_report,
    config_help,
    load_config,
    load_model,
    mock_llm_reply,
    parse_label,
    prepare,
    render_prompt,
    synth_corpus,
    tokenize,
    train,
)

__all__ = [
    "Config",
    "ConfigError",
    "Dataset",
    "Model",
    "RelcatError",
    "TrainOutput",
    "categories",
    "compute_report",
    "config_help",
    "load_config",
    "load_model",
    "mock_llm_reply",
    "parse_label",
    "prepare",
    "render_prompt",
    "synth_corpus",
    "tokenize",
    "train",
]

__version__ = "0.1.0"
