"""Fine-grained LLM-based summary evaluation with faithfulness, completeness and conciseness scores."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    DIMENSIONS,
    AlignmentGraph,
    ErrorCategory,
    EvalInstance,
    FactCheckVerdict,
    GoldAnnotations,
    KeyfactList,
    ScoreTriple,
)

__all__ = [
    "__version__",
    "DIMENSIONS",
    "AlignmentGraph",
    "ErrorCategory",
    "EvalInstance",
    "FactCheckVerdict",
    "GoldAnnotations",
    "KeyfactList",
    "ScoreTriple",
]
