"""Nugget-based answer evaluation with LLM judges (V_strict)."""

from __future__ import annotations

import ast
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean
from typing import Mapping, Optional, Sequence

from nuggetgen.core import Query
from nuggetgen.prompts import PromptSet, default_prompts
from nuggetgen.provider import GenerationRequest, Provider, ProviderError

logger = logging.getLogger(__name__)

IMPORTANCE = ("vital", "okay")
VERDICTS = ("support", "partial_support", "not_support")
ASSIGN_BATCH = 10

ANSWER_KEY_VERSION = 1
REPORT_VERSION = 1

_NUGGET_LINE = re.compile(r"^\[?(vital|okay)\]?[\t ]+(\S.*)$")
_VERDICT_LINE = re.compile(r"^\s*(?:\d+\s*[.):-]\s*)?[\"'\[]?([a-z_]+)[\"'\]]?\s*,?\s*$")


class UnevaluableQuery(RuntimeError):
    pass


class UndefinedScore(ValueError):
    """V_strict is undefined when a query has no vital nuggets."""


@dataclass(frozen=True)
class EvalNugget:
    text: str
    importance: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("nugget text must be non-empty")
        if self.importance not in IMPORTANCE:
            raise ValueError(f"importance must be vital or okay, got {self.importance!r}")

    @property
    def vital(self) -> bool:
        return self.importance == "vital"


@dataclass(frozen=True)
class NuggetAssignment:
    index: int
    supported: int

    def __post_init__(self):
        if self.supported not in (0, 1):
            raise ValueError("supported must be 0 or 1")


def parse_nugget_lines(text: str, query_id: str = "") -> list[EvalNugget]:
    nuggets = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        m = _NUGGET_LINE.match(line)
        if m is None:
            logger.warning("dropping malformed nugget line %d for %s: %r", lineno, query_id, line[:80],
                           extra={"query_id": query_id, "failure_kind": "malformed-nugget"})
            continue
        nuggets.append(EvalNugget(m.group(2).strip(), m.group(1)))
    return nuggets


def create_nuggets(query: Query, relevant_texts: Sequence[str], judge: Provider,
                   prompts: Optional[PromptSet] = None, max_output_tokens: int = 1024) -> list[EvalNugget]:
    if not relevant_texts:
        raise ValueError("create_nuggets needs at least one relevant text")
    prompts = prompts or default_prompts()
    passages = "\n".join(f"[{i}] {t}" for i, t in enumerate(relevant_texts, 1))
    prompt = prompts.render("judge_create", query=query.text, passages=passages)
    text = judge.generate(GenerationRequest(prompt, "judge_create", max_output_tokens)).text
    nuggets = parse_nugget_lines(text, query.id)
    if not nuggets:
        raise UnevaluableQuery(f"judge produced no parseable nuggets for {query.id}")
    return nuggets


def parse_verdicts(text: str) -> list[str]:
    """Verdict labels from either a Python/JSON list or one label per line."""
    stripped = text.strip()
    start, end = stripped.find("["), stripped.rfind("]")
    if start >= 0 and end > start:
        try:
            items = ast.literal_eval(stripped[start : end + 1])
            if isinstance(items, list) and all(isinstance(x, str) for x in items):
                return [x.strip().lower() for x in items]
        except (ValueError, SyntaxError):
            pass
    out = []
    for line in stripped.splitlines():
        if not line.strip():
            continue
        m = _VERDICT_LINE.match(line.lower())
        out.append(m.group(1) if m else line.strip().lower())
    return out


def assign_nuggets(
    query: Query,
    response_text: str,
    nuggets: Sequence[EvalNugget],
    judge: Provider,
    prompts: Optional[PromptSet] = None,
    batch_size: int = ASSIGN_BATCH,
    max_output_tokens: int = 256,
) -> list[NuggetAssignment]:
    """Binary support flags, aligned with ``nuggets``; only "support" counts as 1."""
    if not nuggets:
        raise ValueError("assign_nuggets needs at least one nugget")
    prompts = prompts or default_prompts()
    flags: list[int] = []
    for offset in range(0, len(nuggets), batch_size):
        batch = nuggets[offset : offset + batch_size]
        listing = "\n".join(f"{i}. {n.text}" for i, n in enumerate(batch, 1))
        prompt = prompts.render("judge_assign", query=query.text, response=response_text or "(empty)",
                                nuggets=listing)
        verdicts = parse_verdicts(judge.generate(GenerationRequest(prompt, "judge_assign", max_output_tokens)).text)
        for i in range(len(batch)):
            if i >= len(verdicts):
                logger.warning("missing verdict for nugget %d of %s", offset + i, query.id,
                               extra={"query_id": query.id, "failure_kind": "missing-verdict"})
                flags.append(0)
                continue
            if verdicts[i] not in VERDICTS:
                logger.warning("unparseable verdict %r for nugget %d of %s", verdicts[i], offset + i, query.id,
                               extra={"query_id": query.id, "failure_kind": "bad-verdict"})
            flags.append(1 if verdicts[i] == "support" else 0)
    return [NuggetAssignment(i, f) for i, f in enumerate(flags)]


def v_strict(assignments: Sequence[NuggetAssignment], nuggets: Sequence[EvalNugget]) -> float:
    """Fraction of vital nuggets the response supports; okay nuggets are ignored."""
    if len(assignments) != len(nuggets):
        raise ValueError("assignments and nuggets are not aligned")
    vital = [a.supported for a, n in zip(assignments, nuggets) if n.vital]
    if not vital:
        raise UndefinedScore("no vital nuggets")
    return sum(vital) / len(vital)


@dataclass
class EvalReport:
    judges: list[str]
    # per_query[judge][query_id] is None when the cell is missing
    per_query: dict[str, dict[str, Optional[float]]]
    run_tag: str = ""
    judge_means: dict[str, Optional[float]] = field(default_factory=dict)
    average: Optional[float] = None

    def __post_init__(self):
        if not self.judge_means:
            self.judge_means = {
                j: (fmean(v for v in self.per_query[j].values() if v is not None)
                    if any(v is not None for v in self.per_query[j].values()) else None)
                for j in self.judges
            }
        means = [m for m in self.judge_means.values() if m is not None]
        if self.average is None and means:
            self.average = fmean(means)

    @property
    def missing(self) -> dict[str, list[str]]:
        return {j: sorted(q for q, v in self.per_query[j].items() if v is None) for j in self.judges}

    def to_json(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "run_tag": self.run_tag,
            "judges": self.judges,
            "per_query": {j: dict(sorted(self.per_query[j].items())) for j in self.judges},
            "judge_means": self.judge_means,
            "average": self.average,
            "missing": self.missing,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "EvalReport":
        return cls(list(data["judges"]), {j: dict(v) for j, v in data["per_query"].items()},
                   data.get("run_tag", ""), dict(data["judge_means"]), data.get("average"))

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def score_run(
    queries: Sequence[Query],
    responses: Mapping[str, str],
    answer_keys: Mapping[str, Sequence[EvalNugget]],
    judges: Sequence[Provider],
    prompts: Optional[PromptSet] = None,
    run_tag: str = "",
    workers: int = 4,
) -> EvalReport:
    """V_strict per (judge, query), per-judge means over queries, and their average.

    A failing or undefined cell is recorded as missing and left out of the means.
    Judges are named by model tag; repeated tags get a ``#n`` suffix.
    """
    missing_keys = [q.id for q in queries if q.id not in answer_keys]
    if missing_keys:
        raise ValueError(f"no answer key for queries {missing_keys}")
    names: list[str] = []
    for j in judges:
        name, k = j.model_tag, 1
        while name in names:
            k += 1
            name = f"{j.model_tag}#{k}"
        names.append(name)

    def cell(args):
        judge, query = args
        nuggets = answer_keys[query.id]
        try:
            flags = assign_nuggets(query, responses.get(query.id, ""), nuggets, judge, prompts)
            return v_strict(flags, nuggets)
        except (ProviderError, UndefinedScore) as exc:
            logger.warning("no score for %s by %s: %s", query.id, judge.model_tag, exc,
                           extra={"query_id": query.id, "failure_kind": "judge-missing"})
            return None

    cells = [(j, q) for j in judges for q in queries]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        values = list(pool.map(cell, cells))
    per_query: dict[str, dict[str, Optional[float]]] = {n: {} for n in names}
    it = iter(values)
    for name in names:
        for q in queries:
            per_query[name][q.id] = next(it)
    return EvalReport(names, per_query, run_tag)


def write_answer_key(path: str | Path, keys: Mapping[str, Sequence[EvalNugget]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(keys):
            fh.write(json.dumps({
                "version": ANSWER_KEY_VERSION,
                "query_id": qid,
                "nuggets": [{"text": n.text, "importance": n.importance} for n in keys[qid]],
            }, ensure_ascii=False) + "\n")


def read_answer_key(path: str | Path) -> dict[str, list[EvalNugget]]:
    keys = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                keys[row["query_id"]] = [EvalNugget(n["text"], n["importance"]) for n in row["nuggets"]]
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad answer-key row ({exc})") from None
    return keys
