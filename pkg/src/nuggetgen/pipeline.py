"""End-to-end response generation and experiment runs."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

from nuggetgen.clustering import ClusteringParams, cluster_nuggets
from nuggetgen.core import (
    ClusterSummary,
    FacetCluster,
    GroundedResponse,
    InformationNugget,
    Passage,
    PipelineConfig,
    Query,
    check_ranked_list,
)
from nuggetgen.detection import detect_nuggets
from nuggetgen.io import RankedDoc, RunManifest, load_ranking, load_segments, load_topics, write_answers
from nuggetgen.prompts import PromptSet, default_prompts
from nuggetgen.provider import ProviderSet
from nuggetgen.ranking import ClusterRanking, rank_bm25, rank_pairwise
from nuggetgen.synthesis import assemble_response, generate_baseline, rewrite_fluency, summarize_top

logger = logging.getLogger(__name__)


@dataclass
class QueryResult:
    response: GroundedResponse
    nuggets: list[InformationNugget] = field(default_factory=list)
    clusters: list[FacetCluster] = field(default_factory=list)
    ranking: Optional[ClusterRanking] = None
    summaries: list[ClusterSummary] = field(default_factory=list)


class Pipeline:
    def __init__(self, config: PipelineConfig, providers: ProviderSet, prompts: Optional[PromptSet] = None):
        self.config = config
        self.providers = providers
        self.prompts = prompts or default_prompts()

    @property
    def clustering_params(self) -> ClusteringParams:
        return ClusteringParams(self.config.clusterer, self.config.similarity_threshold, self.config.lsa_dims)

    def run_query(self, query: Query, passages: Sequence[Passage], run_tag: str = "") -> QueryResult:
        cfg = self.config
        passages = check_ranked_list(passages)[: cfg.top_k_passages]
        nuggets = detect_nuggets(query, passages, self.providers.generator, self.prompts,
                                 workers=cfg.workers)
        if not nuggets:
            return QueryResult(GroundedResponse(query.id, (), run_tag))
        clusters = cluster_nuggets(nuggets, self.clustering_params, self.providers.embedder)
        if cfg.ranker == "bm25":
            ranking = rank_bm25(query, clusters, cfg.scorer_char_budget)
        else:
            ranking = rank_pairwise(query, clusters, self.providers.scorer, cfg.scorer_char_budget, cfg.workers)
        by_id = {c.cluster_id: c for c in clusters}
        ranked = [by_id[i] for i in ranking.cluster_ids]
        summaries = summarize_top(query, ranked, cfg.facet_threshold, self.providers.generator,
                                  cfg.summary_word_budget, self.prompts, cfg.max_output_tokens)
        response = assemble_response(query, summaries, cfg.budget, run_tag)
        if cfg.rewrite_enabled and not response.no_answer:
            response = rewrite_fluency(query, response, self.providers.generator, cfg.budget, self.prompts,
                                       cfg.max_output_tokens * 2)
        return QueryResult(response, nuggets, clusters, ranking, summaries)


def build_passages(docs: Sequence[RankedDoc], texts: Mapping[str, str]) -> list[Passage]:
    return [Passage(d.docid, texts[d.docid], d.rank, d.score) for d in docs]


@dataclass
class RunInputs:
    topics: list[Query]
    ranking: dict[str, list[RankedDoc]]
    segments: dict[str, str]
    paths: dict

    @classmethod
    def load(cls, topics: str | Path, ranking: str | Path, corpus: str | Path, top_k: int) -> "RunInputs":
        queries = load_topics(topics)
        runs = load_ranking(ranking, top_k)
        ids = {d.docid for q in queries for d in runs.get(q.id, [])}
        segments = load_segments(corpus, ids)
        return cls(queries, runs, segments, {"topics": str(topics), "ranking": str(ranking), "corpus": str(corpus)})

    def passages_for(self, query: Query, top_k: int) -> list[Passage]:
        return build_passages(self.ranking.get(query.id, [])[:top_k], self.segments)


def run_tag_for(config: PipelineConfig, prefix: str = "nuggetgen") -> str:
    tag = f"{prefix}-top{config.top_k_passages}"
    if not config.rewrite_enabled:
        tag += "-norewrite"
    if config.clusterer != "embedding-agglomerative":
        tag += f"-{config.clusterer}"
    if config.ranker != "pairwise":
        tag += f"-{config.ranker}"
    return tag


def _isolated(fn, query: Query, run_tag: str) -> GroundedResponse:
    try:
        return fn(query)
    except Exception as exc:
        logger.error("query %s failed: %s", query.id, exc, extra={"query_id": query.id, "failure_kind": "query-failed"})
        return GroundedResponse(query.id, (), run_tag)


def run_generate(
    inputs: RunInputs,
    config: PipelineConfig,
    providers: ProviderSet,
    out_dir: str | Path,
    run_tag: Optional[str] = None,
    prompts: Optional[PromptSet] = None,
    query_workers: int = 4,
    extra_inputs: Optional[dict] = None,
) -> Path:
    """Run the pipeline over every topic; write ``<run_tag>.jsonl`` and its manifest."""
    prompts = prompts or default_prompts()
    run_tag = run_tag or run_tag_for(config)
    pipeline = Pipeline(config, providers, prompts)

    def one(query: Query) -> GroundedResponse:
        return pipeline.run_query(query, inputs.passages_for(query, config.top_k_passages), run_tag).response

    with ThreadPoolExecutor(max_workers=max(1, query_workers)) as pool:
        responses = list(pool.map(lambda q: _isolated(one, q, run_tag), inputs.topics))
    return _write_run(out_dir, run_tag, responses, config, inputs, providers, prompts, extra_inputs)


def run_baseline(
    inputs: RunInputs,
    providers: ProviderSet,
    out_dir: str | Path,
    mode: str = "plain",
    run_tag: Optional[str] = None,
    prompts: Optional[PromptSet] = None,
    query_workers: int = 4,
    extra_inputs: Optional[dict] = None,
) -> Path:
    prompts = prompts or default_prompts()
    run_tag = run_tag or ("baseline-top5" if mode == "plain" else "baseline_cot-top5")

    def one(query: Query) -> GroundedResponse:
        return generate_baseline(query, inputs.passages_for(query, 5), providers.generator, mode, prompts, run_tag)

    with ThreadPoolExecutor(max_workers=max(1, query_workers)) as pool:
        responses = list(pool.map(lambda q: _isolated(one, q, run_tag), inputs.topics))
    config = {"baseline_mode": mode, "top_k_passages": 5}
    return _write_run(out_dir, run_tag, responses, config, inputs, providers, prompts, extra_inputs)


def _write_run(out_dir, run_tag, responses, config, inputs, providers, prompts, extra_inputs) -> Path:
    out_dir = Path(out_dir)
    path = out_dir / f"{run_tag}.jsonl"
    write_answers(path, responses, run_tag)
    manifest = RunManifest.build(run_tag, config, {**inputs.paths, **(extra_inputs or {})},
                                 providers.model_tags, prompts.digest())
    manifest.write(out_dir / f"{run_tag}.manifest.json")
    return path


GRIDS = {
    # response-generation regimes of the main results table
    "table1": [
        dict(top_k=20, rewrite=False),
        dict(top_k=10, rewrite=False),
        dict(top_k=5, rewrite=False),
        dict(top_k=5, rewrite=True),
    ],
    # component ablation at top-20 without rewriting
    "table2": [
        dict(top_k=20, rewrite=False, clusterer=c, ranker=r)
        for c in ("embedding-agglomerative", "lsa")
        for r in ("pairwise", "bm25")
    ],
    "full": [
        dict(top_k=k, rewrite=w, clusterer=c, ranker=r)
        for k in (5, 10, 20)
        for w in (False, True)
        for c in ("embedding-agglomerative", "lsa")
        for r in ("pairwise", "bm25")
    ],
}


def grid_configs(grid: str | Sequence[dict], base: Optional[PipelineConfig] = None) -> list[PipelineConfig]:
    """Expand a named grid (or explicit cells) into validated configs before anything runs."""
    cells = GRIDS[grid] if isinstance(grid, str) else list(grid)
    base = base or PipelineConfig()
    configs = []
    for cell in cells:
        budget = PipelineConfig.for_top_k(cell["top_k"])
        configs.append(replace(
            base,
            top_k_passages=cell["top_k"],
            rewrite_enabled=cell.get("rewrite", base.rewrite_enabled),
            clusterer=cell.get("clusterer", base.clusterer),
            ranker=cell.get("ranker", base.ranker),
            response_sentence_limit=budget.response_sentence_limit,
            response_word_limit=budget.response_word_limit,
        ))
    return configs


def run_matrix(
    topics: str | Path,
    ranking: str | Path,
    corpus: str | Path,
    providers: ProviderSet,
    out_dir: str | Path,
    grid: str | Sequence[dict] = "table1",
    base: Optional[PipelineConfig] = None,
    prompts: Optional[PromptSet] = None,
    prefix: str = "nuggetgen",
    query_workers: int = 4,
    extra_inputs: Optional[dict] = None,
) -> list[Path]:
    configs = grid_configs(grid, base)
    inputs = RunInputs.load(topics, ranking, corpus, max(c.top_k_passages for c in configs))
    return [
        run_generate(inputs, c, providers, out_dir, run_tag_for(c, prefix), prompts, query_workers, extra_inputs)
        for c in configs
    ]
