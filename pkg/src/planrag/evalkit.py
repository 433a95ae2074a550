"""Metrics over run records: accuracy, depth histograms, retrieval P/R, token
means, and the judged information-gain curve.

Everything here is pure aggregation over immutable records; only the
information-gain curve talks to a backend (the judge).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .backends import Backend, build_ig_judge_prompt, generate_with_retry, parse_ig_score
from .errors import IdMismatch, JudgeUnparseable, MissingGold
from .executor import RunRecord
from .plan_model import ROOT_ID, ReasoningDag, dag_from_json, node_depths, reasoning_depth
from .textutils import contains_normalized, word_split


@dataclass(frozen=True)
class DatasetItem:
    id: str
    question: str
    answers: tuple[str, ...]
    gold_sentences: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.answers:
            raise ValueError(f"dataset item {self.id!r} has no acceptable answers")


def load_dataset(path) -> list[DatasetItem]:
    """Read a JSONL dataset: {id, question, answers:[...], gold_sentences?:[...]}."""
    items: list[DatasetItem] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                items.append(
                    DatasetItem(
                        id=str(doc["id"]),
                        question=doc["question"],
                        answers=tuple(doc["answers"]),
                        gold_sentences=tuple(doc.get("gold_sentences", ())),
                    )
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as err:
                raise ValueError(f"{path}:{lineno}: bad dataset line ({err})") from err
    return items


def accuracy_contains(prediction: str, answers) -> bool:
    """True iff any acceptable answer appears inside the prediction.

    Both sides are lowercased, whitespace-collapsed, and stripped of
    surrounding punctuation first — a relaxed containment match.
    """
    return any(contains_normalized(prediction, gold) for gold in answers)


def _record_dag(record: RunRecord) -> ReasoningDag | None:
    if not record.plan:
        return None
    return dag_from_json(record.plan)


def record_depth(record: RunRecord) -> int:
    """Reasoning depth of a record's plan; 0 when it ran without one."""
    dag = _record_dag(record)
    return 0 if dag is None else reasoning_depth(dag)


def _bucket(depth: int) -> str:
    return str(depth) if depth < 4 else "4+"


def depth_histogram(records) -> dict[str, tuple[int, float]]:
    """Bucketed plan-depth counts and fractions (buckets 0..3 and "4+").

    Only attained buckets appear; fractions sum to 1 over a nonempty input.
    """
    counts: dict[str, int] = {}
    for record in records:
        key = _bucket(record_depth(record))
        counts[key] = counts.get(key, 0) + 1
    total = sum(counts.values())
    order = sorted(counts, key=lambda k: 4 if k == "4+" else int(k))
    return {k: (counts[k], counts[k] / total) for k in order}


def _record_docs(record: RunRecord) -> list[str]:
    """All documents a record retrieved, deduplicated by id, order preserved."""
    seen: dict[str, str] = {}
    trace = record.trace or {}
    for doc in trace.get("shared_retrieved", ()):
        seen.setdefault(doc["doc_id"], doc["text"])
    for node in trace.get("nodes", ()):
        for doc in node.get("retrieved", ()):
            seen.setdefault(doc["doc_id"], doc["text"])
    return list(seen.values())


def gold_chunks(sentence: str, chunk_words: int = 50) -> list[str]:
    words = word_split(sentence)
    return [
        " ".join(words[start : start + chunk_words])
        for start in range(0, len(words), chunk_words)
    ] or [""]


def retrieval_pr(records, items, chunk_words: int = 50) -> dict[str, float]:
    """Micro-averaged retrieval precision/recall against gold sentences.

    Gold sentences are split into ``chunk_words``-word pieces; a retrieved
    document counts as a hit if it contains any piece (normalized substring),
    and a sentence is covered if any of its pieces shows up in any retrieved
    document.  Documents are deduplicated per record before counting.
    """
    gold_by_id = {item.id: item for item in items}
    total_docs = 0
    total_hits = 0
    total_sentences = 0
    total_covered = 0
    for record in records:
        item = gold_by_id.get(record.id)
        if item is None or not item.gold_sentences:
            raise MissingGold(record.id)
        chunks_per_sentence = [gold_chunks(s, chunk_words) for s in item.gold_sentences]
        all_chunks = [c for chunks in chunks_per_sentence for c in chunks]
        docs = _record_docs(record)
        total_docs += len(docs)
        for doc in docs:
            if any(contains_normalized(doc, chunk) for chunk in all_chunks):
                total_hits += 1
        total_sentences += len(chunks_per_sentence)
        for chunks in chunks_per_sentence:
            if any(
                contains_normalized(doc, chunk) for doc in docs for chunk in chunks
            ):
                total_covered += 1
    return {
        "precision": total_hits / total_docs if total_docs else 0.0,
        "recall": total_covered / total_sentences if total_sentences else 0.0,
    }


def _judge_lines(dag: ReasoningDag, up_to_depth: int) -> list[str]:
    depths = node_depths(dag)
    return [
        f"{nid.render()}: {dag.nodes[nid].template}"
        for nid in dag.sorted_ids()
        if nid != ROOT_ID and depths[nid] <= up_to_depth
    ]


def info_gain_curve(records, judge: Backend, warnings: list[str] | None = None) -> dict[int, float]:
    """Judged information gain per depth, averaged across records.

    For a planned record the judge scores the subquery set truncated at each
    depth 1..max; a record that ran without decomposition contributes a single
    depth-0 score for the bare query.  Unparseable judgments skip that
    (record, depth) cell with a warning rather than failing the curve.
    """
    sink = warnings if warnings is not None else []
    buckets: dict[int, list[int]] = {}
    for record in records:
        dag = _record_dag(record)
        depth = 0 if dag is None else reasoning_depth(dag)
        if depth == 0:
            probes = [(0, [f"Q: {record.question}"])]
        else:
            probes = [(d, _judge_lines(dag, d)) for d in range(1, depth + 1)]
        for d, lines in probes:
            bundle = build_ig_judge_prompt(record.question, lines)
            completion, _ = generate_with_retry(judge, bundle)
            try:
                score = parse_ig_score(completion.text)
            except JudgeUnparseable as err:
                sink.append(f"record {record.id}: judge output unusable at depth {d}: {err}")
                continue
            buckets.setdefault(d, []).append(score)
    return {d: sum(scores) / len(scores) for d, scores in sorted(buckets.items())}


@dataclass
class EvalReport:
    n: int
    accuracy: float
    depth_histogram: dict[str, tuple[int, float]]
    precision: float | None = None
    recall: float | None = None
    mean_tokens_in: float = 0.0
    mean_tokens_out: float = 0.0
    ig_curve: dict[int, float] | None = None
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "accuracy": self.accuracy,
            "depth_histogram": {
                k: {"count": c, "fraction": f} for k, (c, f) in self.depth_histogram.items()
            },
            "precision": self.precision,
            "recall": self.recall,
            "mean_tokens_in": self.mean_tokens_in,
            "mean_tokens_out": self.mean_tokens_out,
            "ig_curve": None
            if self.ig_curve is None
            else {str(d): v for d, v in self.ig_curve.items()},
            "warnings": self.warnings,
        }


def build_report(records, items, with_pr: bool | None = None, judge: Backend | None = None) -> EvalReport:
    """Join records to dataset items by id and assemble every metric.

    ``with_pr=None`` includes precision/recall exactly when every joined item
    carries gold sentences; True forces it (raising MissingGold when absent);
    False omits it.  The information-gain curve is judged only when a judge
    backend is supplied.
    """
    records = list(records)
    by_id = {item.id: item for item in items}
    missing = sorted(r.id for r in records if r.id not in by_id)
    if missing:
        raise IdMismatch(missing)
    if not records:
        raise ValueError("no records to evaluate")

    joined = [(r, by_id[r.id]) for r in records]
    warnings: list[str] = []
    hits = sum(accuracy_contains(r.final_answer, item.answers) for r, item in joined)

    if with_pr is None:
        with_pr = all(item.gold_sentences for _, item in joined)
    pr = retrieval_pr(records, items) if with_pr else {"precision": None, "recall": None}

    curve = info_gain_curve(records, judge, warnings) if judge is not None else None

    return EvalReport(
        n=len(records),
        accuracy=hits / len(records),
        depth_histogram=depth_histogram(records),
        precision=pr["precision"],
        recall=pr["recall"],
        mean_tokens_in=sum(r.tokens.get("in", 0) for r in records) / len(records),
        mean_tokens_out=sum(r.tokens.get("out", 0) for r in records) / len(records),
        ig_curve=curve,
        warnings=warnings,
    )


def format_report(report: EvalReport) -> str:
    """Plain-text table of an EvalReport, one metric per line."""
    lines = [
        f"items            {report.n}",
        f"accuracy         {report.accuracy:.4f}",
        "depth histogram  "
        + (
            ", ".join(
                f"{k}: {c} ({f * 100:.1f}%)" for k, (c, f) in report.depth_histogram.items()
            )
            or "-"
        ),
    ]
    if report.precision is not None:
        lines.append(f"precision        {report.precision:.4f}")
        lines.append(f"recall           {report.recall:.4f}")
    lines.append(f"mean tokens in   {report.mean_tokens_in:.1f}")
    lines.append(f"mean tokens out  {report.mean_tokens_out:.1f}")
    if report.ig_curve is not None:
        curve = ", ".join(f"d{d}: {v:.2f}" for d, v in report.ig_curve.items())
        lines.append(f"info gain        {curve or '-'}")
    if report.warnings:
        lines.append("warnings:")
        lines.extend(f"  - {w}" for w in report.warnings)
    return "\n".join(lines)
