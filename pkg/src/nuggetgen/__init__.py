"""Grounded answer generation from information nuggets, with nugget-based evaluation."""

from nuggetgen.core import (
    ClusterSummary,
    FacetCluster,
    GroundedResponse,
    InformationNugget,
    Passage,
    PipelineConfig,
    Query,
    ResponseBudget,
    Sentence,
    citations_of,
    count_words,
    locate_nugget,
)
from nuggetgen.pipeline import Pipeline, QueryResult

__version__ = "0.1.0"

__all__ = [
    "ClusterSummary",
    "FacetCluster",
    "GroundedResponse",
    "InformationNugget",
    "Passage",
    "Pipeline",
    "PipelineConfig",
    "Query",
    "QueryResult",
    "ResponseBudget",
    "Sentence",
    "citations_of",
    "count_words",
    "locate_nugget",
]
