"""Plan execution and the baseline pipelines.

A plan runs layer by layer: all nodes at one depth are dispatched together
(bounded by max_parallel) and a barrier separates depths, so every node sees
its parents' answers and nothing else.  Each node's prompt holds exactly its
own materialized question, its retrievals, and its parents' (question,
answer) pairs — never siblings, never the full history.

The same entry point also drives the non-plan pipelines (direct answering,
shared-retrieval answering, step-by-step reasoning, sequential query
decomposition) so one record format covers every mode.
"""

from __future__ import annotations

import json
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

from .backends import (
    Backend,
    Completion,
    build_answer_prompt,
    build_cot_rag_prompt,
    build_plan_prompt,
    build_qd_answer_prompt,
    build_qd_split_prompt,
    build_tag_replace_prompt,
    build_vanilla_llm_prompt,
    build_vanilla_rag_prompt,
    extract_json_response,
    generate_with_retry,
)
from .errors import (
    BadLabel,
    MalformedGeneration,
    MissingParentAnswer,
    NodeFailed,
    PlanStructureError,
    PlanSyntaxError,
    UnnormalizableBoolean,
    UnparseableSyntax,
)
from .plan_model import (
    ROOT_ID,
    TAG_RE,
    NodeId,
    PlanNode,
    ReasoningDag,
    build_dag,
    dag_to_json,
    node_depths,
    parse_node_label,
)
from .plan_parser import SimpleQuery, parse_plan_text, parse_subquery_list
from .retrieval import RetrievalSet
from .textutils import estimate_tokens, index_tokens


class Mode(Enum):
    VANILLA_LLM = "VanillaLLM"
    VANILLA_RAG = "VanillaRAG"
    COT_RAG = "CoTRAG"
    QD_RAG = "QDRAG"
    PLAN = "Plan"
    PLAN_SUBQ = "PlanSubQ"

    @classmethod
    def parse(cls, text: str) -> "Mode":
        wanted = text.replace("-", "").replace("_", "").lower()
        for mode in cls:
            if mode.value.lower() == wanted:
                return mode
        raise ValueError(f"unknown mode {text!r}; choose from {[m.value for m in cls]}")


class TagResolution(Enum):
    DETERMINISTIC = "deterministic"
    LLM = "llm"


class Aggregation(Enum):
    SINK_ANSWER = "sink"
    BOOLEAN_NORMALIZE = "boolean"


@dataclass
class RunConfig:
    mode: Mode = Mode.PLAN
    k: int = 5
    max_parallel: int = 4
    tag_resolution: TagResolution = TagResolution.DETERMINISTIC
    aggregation: Aggregation = Aggregation.SINK_ANSWER
    retries: int = 1
    retry_base_delay: float = 0.5
    timeout: float = 60.0
    plan_retries: int = 1


@dataclass
class NodeResult:
    node: NodeId
    materialized_question: str
    retrievals: RetrievalSet | None
    answer: str
    gen_time: float = 0.0
    ret_time: float = 0.0
    input_tokens: int = 0
    output_tokens: int = 0
    context_tokens: int = 0  # size of the full rendered user prompt
    question_tokens: int = 0
    docs_tokens: int = 0
    parents_tokens: int = 0
    t_start: float = 0.0
    t_end: float = 0.0
    retry_count: int = 0
    warnings: list[str] = field(default_factory=list)


@dataclass
class ExecutionTrace:
    dag: ReasoningDag
    results: dict[NodeId, NodeResult] = field(default_factory=dict)
    failures: dict[NodeId, str] = field(default_factory=dict)
    skipped: list[NodeId] = field(default_factory=list)
    final_answer: str = ""
    wall_time: float = 0.0
    shared_retrieval: RetrievalSet | None = None
    shared_ret_time: float = 0.0
    warnings: list[str] = field(default_factory=list)

    @property
    def status(self) -> str:
        return "ok" if not self.failures and not self.skipped else "failed-partial"


def materialize_subquery(node: PlanNode, parent_results, cfg: RunConfig, backend=None, stats=None) -> str:
    """Resolve a node's answer tags into a concrete question.

    Deterministic mode splices each parent's answer text in place of its tag.
    LLM mode asks the tag-replacement prompt instead, falling back to literal
    substitution (with a warning in ``stats``) if tags survive the rewrite.
    ``parent_results`` maps NodeId to a NodeResult or a bare answer string.
    """

    def answer_of(target: NodeId) -> str:
        value = parent_results.get(target)
        if value is None:
            raise MissingParentAnswer(f"<A{target.depth}.{target.pos}>")
        return value if isinstance(value, str) else value.answer

    def question_of(target: NodeId) -> str:
        value = parent_results.get(target)
        return "" if isinstance(value, str) else getattr(value, "materialized_question", "")

    def substitute() -> str:
        return TAG_RE.sub(
            lambda m: answer_of(NodeId(int(m.group(1)), int(m.group(2)))),
            node.template,
        )

    if cfg.tag_resolution is TagResolution.DETERMINISTIC or not node.tags:
        return substitute()

    for tag in node.tags:
        if tag.target not in parent_results:
            raise MissingParentAnswer(tag.render())
    parent_qas = [
        (tag.target.render(), question_of(tag.target), answer_of(tag.target))
        for tag in node.tags
    ]
    bundle = build_tag_replace_prompt(f"{node.id.render()}: {node.template}", parent_qas)
    completion, retries = generate_with_retry(backend, bundle, cfg.retries, cfg.retry_base_delay)
    text = completion.text.strip()
    try:
        nid, stripped = parse_node_label(text)
        if nid == node.id:
            text = stripped
    except BadLabel:
        pass
    warnings: list[str] = []
    if TAG_RE.search(text):
        warnings.append(f"node {node.id}: rewrite left tags in place; substituted literally")
        text = substitute()
    if stats is not None:
        stats["completion"] = completion
        stats["retries"] = retries
        stats["warnings"] = warnings
    return text


def run_plan(
    query: str,
    dag: ReasoningDag,
    cfg: RunConfig,
    backend: Backend,
    retriever=None,
) -> ExecutionTrace:
    """Execute a validated plan layer by layer.

    A failed node aborts only its descendants; independent branches finish and
    their slots stay in the trace.  The root is not answered separately — it
    seeds retrieval (shared mode) and its children's templates — except in the
    root-only plan, where it degenerates to a single retrieve-and-answer call.
    """
    t0 = time.perf_counter()
    trace = ExecutionTrace(dag=dag)
    trace.warnings.extend(dag.warnings)
    per_node_retrieval = cfg.mode is Mode.PLAN_SUBQ
    depths = node_depths(dag)

    if retriever is not None and not per_node_retrieval:
        rt0 = time.perf_counter()
        trace.shared_retrieval = retriever.retrieve(query, cfg.k)
        trace.shared_ret_time = time.perf_counter() - rt0

    def run_node(node: PlanNode) -> NodeResult:
        t_start = time.perf_counter()
        warnings: list[str] = []
        parent_results = {
            pid: trace.results[pid]
            for pid in dag.parents_of(node.id)
            if pid in trace.results
        }
        stats: dict = {}
        question = materialize_subquery(node, parent_results, cfg, backend=backend, stats=stats)
        warnings.extend(stats.get("warnings", ()))
        retry_count = stats.get("retries", 0)

        ret_time = 0.0
        if per_node_retrieval and retriever is not None:
            rt_start = time.perf_counter()
            retrievals = retriever.retrieve(question, cfg.k)
            ret_time = time.perf_counter() - rt_start
        elif trace.shared_retrieval is not None:
            retrievals = trace.shared_retrieval
        else:
            retrievals = RetrievalSet(query=question, documents=(), k=cfg.k)

        doc_texts = [d.text for d in retrievals.documents]
        known = [
            (parent_results[pid].materialized_question, parent_results[pid].answer)
            for pid in sorted(parent_results)
            if pid != ROOT_ID
        ]
        bundle = build_answer_prompt(question, doc_texts, known)
        completion, gen_retries = generate_with_retry(backend, bundle, cfg.retries, cfg.retry_base_delay)
        retry_count += gen_retries
        try:
            answer = extract_json_response(completion.text)
        except MalformedGeneration:
            answer = completion.text.strip()
            warnings.append(f"node {node.id}: malformed generation; raw completion kept as answer")

        gen_time = completion.latency
        input_tokens = completion.input_tokens
        output_tokens = completion.output_tokens
        rewrite = stats.get("completion")
        if rewrite is not None:
            gen_time += rewrite.latency
            input_tokens += rewrite.input_tokens
            output_tokens += rewrite.output_tokens

        return NodeResult(
            node=node.id,
            materialized_question=question,
            retrievals=retrievals,
            answer=answer,
            gen_time=gen_time,
            ret_time=ret_time,
            input_tokens=input_tokens,
            output_tokens=output_tokens,
            context_tokens=estimate_tokens(bundle.user),
            question_tokens=estimate_tokens(question),
            docs_tokens=sum(estimate_tokens(t) for t in doc_texts),
            parents_tokens=sum(estimate_tokens(q) + estimate_tokens(a) for q, a in known),
            t_start=t_start,
            t_end=time.perf_counter(),
            retry_count=retry_count,
            warnings=warnings,
        )

    if len(dag.nodes) == 1:
        layer_plan: list[list[NodeId]] = [[ROOT_ID]]
    else:
        by_depth: dict[int, list[NodeId]] = defaultdict(list)
        for nid, depth in depths.items():
            if nid != ROOT_ID:
                by_depth[depth].append(nid)
        layer_plan = [sorted(by_depth[d]) for d in sorted(by_depth)]

    blocked: set[NodeId] = set()
    with ThreadPoolExecutor(max_workers=max(1, cfg.max_parallel)) as pool:
        for layer in layer_plan:
            runnable = []
            for nid in layer:
                bad_parents = [
                    p for p in dag.parents_of(nid) if p in trace.failures or p in blocked
                ]
                if bad_parents:
                    blocked.add(nid)
                    trace.skipped.append(nid)
                    continue
                runnable.append(nid)
            futures = {nid: pool.submit(run_node, dag.nodes[nid]) for nid in runnable}
            for nid, future in futures.items():
                try:
                    trace.results[nid] = future.result()
                except Exception as exc:  # noqa: BLE001 — any node fault becomes a recorded failure
                    trace.failures[nid] = repr(exc)
                    trace.warnings.append(str(NodeFailed(nid, exc)))

    sink = dag.sink_id()
    if sink in trace.results:
        trace.final_answer = aggregate(trace, cfg)
    else:
        trace.final_answer = ""
        trace.warnings.append("sink never executed; run has no final answer")
    trace.wall_time = time.perf_counter() - t0
    return trace


_AFFIRMATIVE = {"yes", "yeah", "yep", "true", "correct", "affirmative"}
_NEGATIVE = {"no", "nope", "false", "incorrect", "negative", "not"}


def normalize_boolean(answer: str) -> str:
    tokens = set(index_tokens(answer))
    pos = tokens & _AFFIRMATIVE
    neg = tokens & _NEGATIVE
    if pos and not neg:
        return "yes"
    if neg and not pos:
        return "no"
    raise UnnormalizableBoolean(answer)


def aggregate(trace: ExecutionTrace, cfg: RunConfig) -> str:
    """Final-answer operator: the sink's answer, optionally yes/no-normalized.

    An answer that cannot be normalized is kept raw, with a trace warning.
    """
    sink_answer = trace.results[trace.dag.sink_id()].answer
    if cfg.aggregation is Aggregation.BOOLEAN_NORMALIZE:
        try:
            return normalize_boolean(sink_answer)
        except UnnormalizableBoolean:
            trace.warnings.append(f"cannot normalize {sink_answer!r} to yes/no; keeping raw answer")
    return sink_answer


def latency_model(trace: ExecutionTrace) -> dict[str, float]:
    """Sequential vs layer-parallel time for a completed trace.

    t_seq sums every executed node's generation + retrieval time; t_plan sums,
    per depth, the maximum over that layer.  A shared retrieval (done once on
    the original query) is added once to both.  t_plan <= t_seq always, with
    equality exactly when every layer is a singleton.
    """
    depths = node_depths(trace.dag)
    per_node = {nid: r.gen_time + r.ret_time for nid, r in trace.results.items()}
    by_depth: dict[int, list[float]] = defaultdict(list)
    for nid, cost in per_node.items():
        by_depth[depths[nid]].append(cost)
    t_seq = trace.shared_ret_time + sum(per_node.values())
    t_plan = trace.shared_ret_time + sum(max(costs) for costs in by_depth.values())
    return {"t_seq": t_seq, "t_plan": t_plan}


def context_cost(trace: ExecutionTrace) -> dict[str, dict[str, int]]:
    """Per-node context sizes: measured prompt tokens plus their parts."""
    out: dict[str, dict[str, int]] = {}
    for nid in sorted(trace.results):
        r = trace.results[nid]
        out[nid.render()] = {
            "total": r.context_tokens,
            "question": r.question_tokens,
            "docs": r.docs_tokens,
            "parents": r.parents_tokens,
        }
    return out


# --- records ------------------------------------------------------------------


@dataclass
class RunRecord:
    id: str
    mode: str
    question: str
    plan: dict | None
    trace: dict
    final_answer: str
    tokens: dict
    timing: dict
    status: str
    warnings: list[str]

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "mode": self.mode,
            "question": self.question,
            "plan": self.plan,
            "trace": self.trace,
            "final_answer": self.final_answer,
            "tokens": self.tokens,
            "timing": self.timing,
            "status": self.status,
            "warnings": self.warnings,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "RunRecord":
        return cls(
            id=doc["id"],
            mode=doc["mode"],
            question=doc["question"],
            plan=doc.get("plan"),
            trace=doc.get("trace", {"nodes": []}),
            final_answer=doc.get("final_answer", ""),
            tokens=doc.get("tokens", {"in": 0, "out": 0}),
            timing=doc.get("timing", {}),
            status=doc.get("status", "ok"),
            warnings=list(doc.get("warnings", [])),
        )


_TIMING_KEYS = {
    "timing",
    "gen_time",
    "ret_time",
    "t_start",
    "t_end",
    "latency",
    "wall",
    "t_seq",
    "t_plan",
    "shared_ret_time",
}


def normalize_record(doc):
    """Strip every wall-clock field, recursively, for determinism comparisons."""
    if isinstance(doc, dict):
        return {k: normalize_record(v) for k, v in doc.items() if k not in _TIMING_KEYS}
    if isinstance(doc, list):
        return [normalize_record(v) for v in doc]
    return doc


def normalized_record_bytes(doc: dict) -> bytes:
    """Canonical byte form of a record with timing removed: equal runs, equal bytes."""
    return json.dumps(normalize_record(doc), sort_keys=True, ensure_ascii=False).encode("utf-8")


def _documents_json(retrievals: RetrievalSet | None) -> list[dict]:
    if retrievals is None:
        return []
    return [
        {"doc_id": d.doc_id, "text": d.text, "score": d.score}
        for d in retrievals.documents
    ]


def _node_json(result: NodeResult, include_docs: bool) -> dict:
    return {
        "id": result.node.render(),
        "question": result.materialized_question,
        "retrieved": _documents_json(result.retrievals) if include_docs else [],
        "answer": result.answer,
        "context": {
            "total": result.context_tokens,
            "question": result.question_tokens,
            "docs": result.docs_tokens,
            "parents": result.parents_tokens,
        },
        "tokens": {"in": result.input_tokens, "out": result.output_tokens},
        "gen_time": result.gen_time,
        "ret_time": result.ret_time,
        "t_start": result.t_start,
        "t_end": result.t_end,
        "retries": result.retry_count,
        "warnings": list(result.warnings),
    }


@dataclass
class _StepLog:
    """Accumulates node entries for the sequential (non-plan) pipelines."""

    nodes: list[dict] = field(default_factory=list)
    tokens_in: int = 0
    tokens_out: int = 0
    t_seq: float = 0.0
    warnings: list[str] = field(default_factory=list)

    def add(
        self,
        step_id: str,
        question: str,
        retrievals: RetrievalSet | None,
        ret_time: float,
        completion: Completion,
        answer: str,
        bundle_user: str,
        known: list[tuple[str, str]],
        retries: int,
        extra: dict | None = None,
        warnings: list[str] = (),
    ):
        doc_texts = [d.text for d in retrievals.documents] if retrievals else []
        node = {
            "id": step_id,
            "question": question,
            "retrieved": _documents_json(retrievals),
            "answer": answer,
            "context": {
                "total": estimate_tokens(bundle_user),
                "question": estimate_tokens(question),
                "docs": sum(estimate_tokens(t) for t in doc_texts),
                "parents": sum(estimate_tokens(q) + estimate_tokens(a) for q, a in known),
            },
            "tokens": {"in": completion.input_tokens, "out": completion.output_tokens},
            "gen_time": completion.latency,
            "ret_time": ret_time,
            "t_start": 0.0,
            "t_end": 0.0,
            "retries": retries,
            "warnings": list(warnings),
        }
        if extra:
            node.update(extra)
        self.nodes.append(node)
        self.tokens_in += completion.input_tokens
        self.tokens_out += completion.output_tokens
        self.t_seq += completion.latency + ret_time
        self.warnings.extend(warnings)


def _answer_or_raw(completion: Completion, warnings: list[str], label: str) -> str:
    try:
        return extract_json_response(completion.text)
    except MalformedGeneration:
        warnings.append(f"{label}: malformed generation; raw completion kept as answer")
        return completion.text.strip()


def generate_plan(query: str, planner: Backend, cfg: RunConfig):
    """Plan generation with one retry; falls back to the undecomposed query.

    Returns (dag, accounting dict, warnings).
    """
    warnings: list[str] = []
    accounting = {"tokens": {"in": 0, "out": 0}, "latency": 0.0, "retries": 0, "calls": 0}
    bundle = build_plan_prompt(query)
    for attempt in range(cfg.plan_retries + 1):
        completion, retries = generate_with_retry(planner, bundle, cfg.retries, cfg.retry_base_delay)
        accounting["tokens"]["in"] += completion.input_tokens
        accounting["tokens"]["out"] += completion.output_tokens
        accounting["latency"] += completion.latency
        accounting["retries"] += retries
        accounting["calls"] += 1
        try:
            result = parse_plan_text(completion.text, query)
        except (PlanSyntaxError, PlanStructureError) as err:
            warnings.append(f"plan attempt {attempt + 1} rejected: {err}")
            continue
        if isinstance(result.outcome, SimpleQuery):
            return build_dag(query), accounting, warnings
        warnings.extend(w for w in result.warnings if w not in warnings)
        return result.outcome, accounting, warnings
    warnings.append("plan generation failed twice; answering the query without a plan")
    return build_dag(query), accounting, warnings


def run_pipeline(
    query: str,
    cfg: RunConfig,
    backend: Backend,
    retriever=None,
    item_id: str = "",
    planner: Backend | None = None,
    plan: ReasoningDag | None = None,
) -> RunRecord:
    """Run one query through the configured mode and return its record.

    Never raises for per-item trouble: any unhandled fault becomes a record
    with status "error" so batch runs stay total.
    """
    t0 = time.perf_counter()
    try:
        return _run_pipeline_inner(query, cfg, backend, retriever, item_id, planner, plan, t0)
    except Exception as exc:  # noqa: BLE001 — per-item faults must not kill a batch
        return RunRecord(
            id=item_id,
            mode=cfg.mode.value,
            question=query,
            plan=None,
            trace={"nodes": []},
            final_answer="",
            tokens={"in": 0, "out": 0},
            timing={"wall": time.perf_counter() - t0, "t_seq": 0.0, "t_plan": 0.0},
            status="error",
            warnings=[f"pipeline failed: {exc!r}"],
        )


def _timed_retrieve(retriever, query: str, k: int):
    if retriever is None:
        return None, 0.0
    t0 = time.perf_counter()
    rset = retriever.retrieve(query, k)
    return rset, time.perf_counter() - t0


def _run_pipeline_inner(query, cfg, backend, retriever, item_id, planner, plan, t0) -> RunRecord:
    mode = cfg.mode
    warnings: list[str] = []

    if mode in (Mode.PLAN, Mode.PLAN_SUBQ):
        plan_gen = None
        if plan is None:
            plan, plan_gen, plan_warnings = generate_plan(query, planner or backend, cfg)
            warnings.extend(plan_warnings)
        trace = run_plan(query, plan, cfg, backend, retriever)
        timing = latency_model(trace)
        include_docs = mode is Mode.PLAN_SUBQ
        node_docs = [
            _node_json(trace.results[nid], include_docs) for nid in sorted(trace.results)
        ]
        trace_doc = {
            "nodes": node_docs,
            "shared_retrieved": _documents_json(trace.shared_retrieval),
            "shared_ret_time": trace.shared_ret_time,
            "failed": {nid.render(): cause for nid, cause in sorted(trace.failures.items())},
            "skipped": [nid.render() for nid in sorted(trace.skipped)],
            "plan_gen": plan_gen,
        }
        tokens_in = sum(r.input_tokens for r in trace.results.values())
        tokens_out = sum(r.output_tokens for r in trace.results.values())
        if plan_gen:
            tokens_in += plan_gen["tokens"]["in"]
            tokens_out += plan_gen["tokens"]["out"]
        warnings.extend(w for w in trace.warnings if w not in warnings)
        return RunRecord(
            id=item_id,
            mode=mode.value,
            question=query,
            plan=dag_to_json(plan),
            trace=trace_doc,
            final_answer=trace.final_answer,
            tokens={"in": tokens_in, "out": tokens_out},
            timing={"wall": time.perf_counter() - t0, **timing},
            status=trace.status,
            warnings=warnings,
        )

    log = _StepLog()

    if mode is Mode.VANILLA_LLM:
        bundle = build_vanilla_llm_prompt(query)
        completion, retries = generate_with_retry(backend, bundle, cfg.retries, cfg.retry_base_delay)
        step_warnings: list[str] = []
        answer = _answer_or_raw(completion, step_warnings, "answer")
        log.add("Q", query, None, 0.0, completion, answer, bundle.user, [], retries, warnings=step_warnings)
        final_answer = answer

    elif mode in (Mode.VANILLA_RAG, Mode.COT_RAG):
        rset, ret_time = _timed_retrieve(retriever, query, cfg.k)
        doc_texts = [d.text for d in rset.documents] if rset else []
        builder = build_vanilla_rag_prompt if mode is Mode.VANILLA_RAG else build_cot_rag_prompt
        bundle = builder(query, doc_texts)
        completion, retries = generate_with_retry(backend, bundle, cfg.retries, cfg.retry_base_delay)
        step_warnings = []
        answer = _answer_or_raw(completion, step_warnings, "answer")
        extra = None
        if mode is Mode.COT_RAG:
            try:
                extra = {"reasoning_steps": extract_json_response(completion.text, "Reasoning_steps")}
            except MalformedGeneration:
                extra = None
        log.add("Q", query, rset, ret_time, completion, answer, bundle.user, [], retries, extra, step_warnings)
        final_answer = answer

    elif mode is Mode.QD_RAG:
        split_bundle = build_qd_split_prompt(query)
        split_completion, split_retries = generate_with_retry(
            backend, split_bundle, cfg.retries, cfg.retry_base_delay
        )
        try:
            subqueries = parse_subquery_list(split_completion.text)
        except UnparseableSyntax as err:
            warnings.append(f"decomposition unparseable ({err}); answering the query directly")
            subqueries = []
        if not subqueries:
            subqueries = [query]
        split_gen = {
            "tokens": {"in": split_completion.input_tokens, "out": split_completion.output_tokens},
            "latency": split_completion.latency,
            "retries": split_retries,
        }
        log.tokens_in += split_completion.input_tokens
        log.tokens_out += split_completion.output_tokens

        # Sequential answering with a cumulative context: every step carries
        # all documents retrieved so far and every earlier (question, answer)
        # pair, so the context grows linearly with the step index.
        known: list[tuple[str, str]] = []
        cumulative_docs: list = []
        answer = ""
        for index, subquery in enumerate(subqueries, start=1):
            rset, ret_time = _timed_retrieve(retriever, subquery, cfg.k)
            if rset:
                cumulative_docs.extend(rset.documents)
            doc_texts = [d.text for d in cumulative_docs]
            bundle = build_qd_answer_prompt(subquery, doc_texts, known)
            completion, retries = generate_with_retry(backend, bundle, cfg.retries, cfg.retry_base_delay)
            step_warnings = []
            answer = _answer_or_raw(completion, step_warnings, f"step {index}")
            log.add(
                f"Q{index}",
                subquery,
                rset,
                ret_time,
                completion,
                answer,
                bundle.user,
                known,
                retries,
                warnings=step_warnings,
            )
            known.append((subquery, answer))

        if len(subqueries) > 1:
            doc_texts = [d.text for d in cumulative_docs]
            bundle = build_qd_answer_prompt(query, doc_texts, known)
            completion, retries = generate_with_retry(backend, bundle, cfg.retries, cfg.retry_base_delay)
            step_warnings = []
            answer = _answer_or_raw(completion, step_warnings, "final synthesis")
            log.add(
                "final",
                query,
                None,
                0.0,
                completion,
                answer,
                bundle.user,
                known,
                retries,
                warnings=step_warnings,
            )
        final_answer = answer

    else:  # pragma: no cover — Mode is exhaustive
        raise ValueError(f"unhandled mode {mode}")

    trace_doc = {"nodes": log.nodes, "shared_retrieved": [], "shared_ret_time": 0.0}
    if mode is Mode.QD_RAG:
        trace_doc["split_gen"] = split_gen
    warnings.extend(log.warnings)
    return RunRecord(
        id=item_id,
        mode=mode.value,
        question=query,
        plan=None,
        trace=trace_doc,
        final_answer=final_answer,
        tokens={"in": log.tokens_in, "out": log.tokens_out},
        timing={"wall": time.perf_counter() - t0, "t_seq": log.t_seq, "t_plan": log.t_seq},
        status="ok",
        warnings=warnings,
    )
