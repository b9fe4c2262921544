from __future__ import annotations

import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import click

from nuggetgen.core import PipelineConfig
from nuggetgen.evaluation import (
    EvalReport,
    UnevaluableQuery,
    create_nuggets,
    read_answer_key,
    score_run,
    write_answer_key,
)
from nuggetgen.io import load_qrels, load_ranking, load_segments, load_topics, read_answers
from nuggetgen.pipeline import GRIDS, RunInputs, run_baseline, run_generate, run_matrix, run_tag_for
from nuggetgen.prompts import PromptSet
from nuggetgen.provider import ProviderError, load_provider_config

log = logging.getLogger("nuggetgen")


def _providers(provider_config, cache_dir, mock_script):
    if provider_config is None and mock_script is None:
        raise click.UsageError("give --provider-config or --mock-script")
    try:
        return load_provider_config(provider_config, cache_dir, mock_script)
    except (ValueError, OSError) as exc:
        raise click.UsageError(f"provider configuration: {exc}")


def _extra_inputs(provider_config, mock_script):
    return {k: v for k, v in (("provider_config", provider_config), ("mock_script", mock_script)) if v}


inputs_options = [
    click.option("--topics", required=True, type=click.Path(exists=True, dir_okay=False)),
    click.option("--ranking", required=True, type=click.Path(exists=True, dir_okay=False)),
    click.option("--corpus", required=True, type=click.Path(exists=True, dir_okay=False)),
    click.option("--provider-config", type=click.Path(exists=True, dir_okay=False)),
    click.option("--mock-script", type=click.Path(exists=True, dir_okay=False)),
    click.option("--cache-dir", type=click.Path(file_okay=False)),
    click.option("--prompt-dir", type=click.Path(exists=True, file_okay=False),
                 help="Directory of prompt templates overriding the built-in ones."),
    click.option("--out", "out_dir", default="runs", show_default=True, type=click.Path(file_okay=False)),
    click.option("--workers", default=4, show_default=True, type=click.IntRange(1)),
]


def with_inputs(fn):
    for opt in reversed(inputs_options):
        fn = opt(fn)
    return fn


@click.group()
@click.option("-v", "--verbose", count=True)
def main(verbose):
    """Nugget-based grounded response generation and evaluation."""
    level = logging.WARNING - 10 * verbose
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@main.command()
@with_inputs
@click.option("--top-k", default=20, show_default=True, type=click.IntRange(1))
@click.option("--facets", default=3, show_default=True, type=click.IntRange(1), help="Facet threshold n.")
@click.option("--summary-words", default=35, show_default=True, type=click.IntRange(1))
@click.option("--no-rewrite", is_flag=True, help="Skip the fluency rewrite.")
@click.option("--clusterer", type=click.Choice(["embedding-agglomerative", "lsa"]), default="embedding-agglomerative",
              show_default=True)
@click.option("--ranker", type=click.Choice(["pairwise", "bm25"]), default="pairwise", show_default=True)
@click.option("--similarity-threshold", default=0.6, show_default=True, type=float)
@click.option("--sentence-limit", type=click.IntRange(1), help="Override the response sentence limit.")
@click.option("--word-limit", type=click.IntRange(1), help="Override the response word limit.")
@click.option("--run-tag")
@click.option("--grid", type=click.Choice(sorted(GRIDS)), help="Run a whole experiment grid instead of one config.")
def generate(topics, ranking, corpus, provider_config, mock_script, cache_dir, prompt_dir, out_dir, workers,
             top_k, facets, summary_words, no_rewrite, clusterer, ranker, similarity_threshold,
             sentence_limit, word_limit, run_tag, grid):
    """Generate grounded answers for every topic."""
    overrides = {}
    if sentence_limit or word_limit:
        if sentence_limit and word_limit:
            raise click.UsageError("--sentence-limit and --word-limit are exclusive")
        overrides = dict(response_sentence_limit=sentence_limit, response_word_limit=word_limit)
    try:
        config = PipelineConfig.for_top_k(
            top_k, facet_threshold=facets, summary_word_budget=summary_words, rewrite_enabled=not no_rewrite,
            clusterer=clusterer, ranker=ranker, similarity_threshold=similarity_threshold, workers=workers,
            **overrides,
        )
    except ValueError as exc:
        raise click.UsageError(str(exc))
    providers = _providers(provider_config, cache_dir, mock_script)
    prompts = PromptSet(prompt_dir)
    extra = _extra_inputs(provider_config, mock_script)
    if grid:
        paths = run_matrix(topics, ranking, corpus, providers, out_dir, grid, config, prompts,
                           prefix=run_tag or "nuggetgen", query_workers=workers, extra_inputs=extra)
    else:
        inputs = RunInputs.load(topics, ranking, corpus, top_k)
        paths = [run_generate(inputs, config, providers, out_dir, run_tag or run_tag_for(config), prompts,
                              workers, extra)]
    for p in paths:
        click.echo(str(p))


@main.command()
@with_inputs
@click.option("--mode", type=click.Choice(["plain", "cot"]), default="plain", show_default=True)
@click.option("--run-tag")
def baseline(topics, ranking, corpus, provider_config, mock_script, cache_dir, prompt_dir, out_dir, workers,
             mode, run_tag):
    """Single-prompt baseline answers from the top five passages."""
    providers = _providers(provider_config, cache_dir, mock_script)
    inputs = RunInputs.load(topics, ranking, corpus, 5)
    path = run_baseline(inputs, providers, out_dir, mode, run_tag, PromptSet(prompt_dir), workers,
                        _extra_inputs(provider_config, mock_script))
    click.echo(str(path))


@main.command()
@click.option("--answers", "answer_files", required=True, multiple=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--topics", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--answer-key", required=True, type=click.Path(dir_okay=False),
              help="Answer-key JSONL; created with the first judge if it does not exist.")
@click.option("--ranking", type=click.Path(exists=True, dir_okay=False))
@click.option("--corpus", type=click.Path(exists=True, dir_okay=False))
@click.option("--qrels", type=click.Path(exists=True, dir_okay=False),
              help="Relevance judgments selecting the passages nuggets are created from.")
@click.option("--relevant-k", default=20, show_default=True, type=click.IntRange(1),
              help="Without --qrels, create nuggets from this many top-ranked passages.")
@click.option("--provider-config", type=click.Path(exists=True, dir_okay=False))
@click.option("--mock-script", type=click.Path(exists=True, dir_okay=False))
@click.option("--cache-dir", type=click.Path(file_okay=False))
@click.option("--prompt-dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", default="reports", show_default=True, type=click.Path(file_okay=False))
@click.option("--workers", default=4, show_default=True, type=click.IntRange(1))
def evaluate(answer_files, topics, answer_key, ranking, corpus, qrels, relevant_k, provider_config, mock_script,
             cache_dir, prompt_dir, out_dir, workers):
    """Score answer files with V_strict under every configured judge."""
    providers = _providers(provider_config, cache_dir, mock_script)
    if not providers.judges:
        raise click.UsageError("provider config lists no judges")
    prompts = PromptSet(prompt_dir)
    queries = load_topics(topics)
    key_path = Path(answer_key)
    if key_path.exists():
        keys = read_answer_key(key_path)
    else:
        if not (ranking and corpus):
            raise click.UsageError("creating an answer key needs --ranking and --corpus")
        if qrels:
            rel = load_qrels(qrels)
        else:
            rel = {q: [d.docid for d in docs] for q, docs in load_ranking(ranking, relevant_k).items()}
        texts = load_segments(corpus, {d for q in queries for d in rel.get(q.id, [])})
        keys = {}
        for q in queries:
            docs = rel.get(q.id, [])
            if not docs:
                log.warning("no relevant passages for %s; query left out of the answer key", q.id)
                continue
            try:
                keys[q.id] = create_nuggets(q, [texts[d] for d in docs], providers.judges[0], prompts)
            except (UnevaluableQuery, ProviderError) as exc:
                log.warning("answer key for %s failed: %s", q.id, exc)
        key_path.parent.mkdir(parents=True, exist_ok=True)
        write_answer_key(key_path, keys)
    scored = [q for q in queries if q.id in keys]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for path in answer_files:
        responses = {r.query_id: r.text for r in read_answers(path)}
        run_tag = Path(path).stem
        report = score_run(scored, responses, keys, providers.judges, prompts, run_tag, workers)
        target = out / f"{run_tag}.eval.json"
        report.write(target)
        click.echo(f"{target}\t{report.average if report.average is not None else 'n/a'}")


@main.command()
@click.argument("reports", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["tsv", "markdown"]), default="markdown", show_default=True)
def report(reports, fmt):
    """Tabulate V_strict per judge and averaged over judges for several runs."""
    loaded = [EvalReport.from_json(json.loads(Path(p).read_text())) for p in reports]
    judges = []
    for r in loaded:
        judges += [j for j in r.judges if j not in judges]
    header = ["run"] + judges + ["avg"]

    def fmt_score(v):
        return "-" if v is None else f"{v:.3f}"

    rows = [[r.run_tag] + [fmt_score(r.judge_means.get(j)) for j in judges] + [fmt_score(r.average)] for r in loaded]
    if fmt == "tsv":
        for row in [header] + rows:
            click.echo("\t".join(row))
    else:
        click.echo("| " + " | ".join(header) + " |")
        click.echo("|" + "---|" * len(header))
        for row in rows:
            click.echo("| " + " | ".join(row) + " |")


if __name__ == "__main__":
    sys.exit(main())
