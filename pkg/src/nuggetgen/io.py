"""Input loaders and output writers.

Formats
-------
topics
    TSV, ``query_id<TAB>query_text`` per line.
ranking
    TREC run file, ``qid Q0 docid rank score tag``.
corpus
    JSONL segments with ``docid`` and ``segment`` (or ``text``) fields.
answers (schema version 1)
    JSONL, one object per topic sorted by topic id::

        {"topic_id": ..., "run_id": ..., "answer": [{"text": ..., "citations": [0, 2]}],
         "references": ["msmarco_v2.1_doc_...", ...]}

    ``citations`` index into ``references``; references are listed in order
    of first citation.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import os
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

from nuggetgen.core import GroundedResponse, PipelineConfig, Query, Sentence

logger = logging.getLogger(__name__)

ANSWER_SCHEMA_VERSION = 1
MANIFEST_VERSION = 1

_DOCID = re.compile(r'"docid"\s*:\s*"((?:[^"\\]|\\.)*)"')


class FormatError(ValueError):
    pass


class MissingSegments(KeyError):
    def __init__(self, missing: Sequence[str]):
        self.missing = sorted(missing)
        super().__init__(f"{len(self.missing)} segment id(s) not in corpus: {', '.join(self.missing)}")


class RankedDoc(NamedTuple):
    docid: str
    rank: int
    score: float


def load_topics(path: str | Path) -> list[Query]:
    queries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            qid, sep, text = line.partition("\t")
            if not sep or not qid.strip() or not text.strip():
                raise FormatError(f"{path}:{lineno}: expected 'query_id<TAB>query_text'")
            queries.append(Query(qid.strip(), text.strip()))
    return queries


def load_ranking(path: str | Path, top_k: int) -> dict[str, list[RankedDoc]]:
    """First ``top_k`` entries per query.

    Every line is validated: ranks must run 1, 2, 3, ... per query and a
    docid may appear once per query.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    runs: dict[str, list[RankedDoc]] = {}
    last_rank: dict[str, int] = {}
    seen: dict[str, set[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            cols = line.split()
            if len(cols) != 6:
                raise FormatError(f"{path}:{lineno}: expected 6 columns, got {len(cols)}")
            qid, _, docid, rank_s, score_s, _ = cols
            try:
                rank, score = int(rank_s), float(score_s)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad rank or score") from None
            ids = seen.setdefault(qid, set())
            if docid in ids:
                raise FormatError(f"{path}:{lineno}: duplicate docid {docid} for query {qid}")
            prev = last_rank.get(qid, 0)
            if rank != prev + 1:
                raise FormatError(f"{path}:{lineno}: rank {rank} follows {prev} for query {qid}")
            ids.add(docid)
            last_rank[qid] = rank
            docs = runs.setdefault(qid, [])
            if len(docs) < top_k:
                docs.append(RankedDoc(docid, rank, score))
    for qid, docs in runs.items():
        if len(docs) < top_k:
            logger.warning("query %s has only %d ranked passages (wanted %d)", qid, len(docs), top_k)
    return runs


def load_segments(path: str | Path, ids: Iterable[str]) -> dict[str, str]:
    """Texts of exactly the requested segment ids, read in one streaming pass."""
    wanted = set(ids)
    found: dict[str, str] = {}
    if not wanted:
        return found
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            m = _DOCID.search(line)
            if m is not None and json.loads(f'"{m.group(1)}"') not in wanted:
                continue
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError:
                raise FormatError(f"{path}:{lineno}: invalid JSON") from None
            docid = row.get("docid")
            if docid in wanted and docid not in found:
                text = row.get("segment", row.get("text"))
                if not isinstance(text, str):
                    raise FormatError(f"{path}:{lineno}: segment {docid} has no text field")
                found[docid] = text
                if len(found) == len(wanted):
                    break
    missing = wanted - found.keys()
    if missing:
        raise MissingSegments(missing)
    return found


def response_to_record(response: GroundedResponse, run_id: str) -> dict:
    references: list[str] = []
    index: dict[str, int] = {}
    answer = []
    for s in response.sentences:
        for pid in sorted(s.citations):
            if pid not in index:
                index[pid] = len(references)
                references.append(pid)
        answer.append({"text": s.text, "citations": sorted(index[p] for p in s.citations)})
    return {"topic_id": response.query_id, "run_id": run_id, "answer": answer, "references": references}


def record_to_response(record: dict) -> GroundedResponse:
    refs = record["references"]
    sentences = tuple(Sentence(a["text"], frozenset(refs[i] for i in a["citations"])) for a in record["answer"])
    return GroundedResponse(record["topic_id"], sentences, record.get("run_id", ""))


def write_answers(path: str | Path, responses: Sequence[GroundedResponse], run_id: str) -> None:
    """One JSON line per topic, sorted by topic id; byte-stable for equal inputs."""
    lines = [
        json.dumps(response_to_record(r, run_id), ensure_ascii=False, separators=(",", ":"))
        for r in sorted(responses, key=lambda r: r.query_id)
    ]
    _atomic_write(Path(path), "".join(line + "\n" for line in lines))


def read_answers(path: str | Path) -> list[GroundedResponse]:
    with open(path, encoding="utf-8") as fh:
        return [record_to_response(json.loads(line)) for line in fh if line.strip()]


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


@dataclass(frozen=True)
class RunManifest:
    """What produced an answer file.

    ``timestamp`` is the newest modification time among the input files, so
    that re-running on unchanged inputs reproduces the manifest byte for byte.
    """

    run_tag: str
    config: dict
    inputs: dict
    models: dict
    prompt_digest: str
    timestamp: str
    digest: str
    version: int = MANIFEST_VERSION

    @classmethod
    def build(cls, run_tag: str, config: PipelineConfig | dict, inputs: dict, models: dict,
              prompt_digest: str) -> "RunManifest":
        cfg = asdict(config) if isinstance(config, PipelineConfig) else dict(config)
        mtimes = [Path(p).stat().st_mtime for p in inputs.values() if p and Path(p).exists()]
        stamp = dt.datetime.fromtimestamp(max(mtimes), dt.timezone.utc).isoformat() if mtimes else ""
        h = hashlib.sha256()
        h.update(prompt_digest.encode())
        h.update(json.dumps(cfg, sort_keys=True).encode())
        return cls(run_tag, cfg, {k: str(v) for k, v in inputs.items() if v}, models, prompt_digest,
                   stamp, h.hexdigest())

    def write(self, path: str | Path) -> None:
        _atomic_write(Path(path), json.dumps(asdict(self), indent=2, sort_keys=True, ensure_ascii=False) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def load_qrels(path: str | Path) -> dict[str, list[str]]:
    """Relevant docids (grade > 0) per query from a ``qid iter docid grade`` file."""
    rel: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            cols = line.split()
            if len(cols) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 columns")
            if int(cols[3]) > 0:
                rel.setdefault(cols[0], []).append(cols[2])
    return rel
