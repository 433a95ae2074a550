"""Command-line entry point: ingest a corpus, generate plans, run a dataset
through any mode, evaluate records, and benchmark plan shapes.

Exit codes are a stable contract for scripting: 0 success, 1 partial (some
items failed), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

from .backends import Backend, HttpBackend, ScriptedBackend, load_scripted_backend
from .errors import BackendError, EmptyCorpus, IdMismatch, MissingGold, RetrievalError
from .evalkit import build_report, format_report, load_dataset
from .executor import (
    Aggregation,
    Mode,
    RunConfig,
    RunRecord,
    TagResolution,
    context_cost,
    generate_plan,
    latency_model,
    run_pipeline,
    run_plan,
)
from .plan_model import (
    ReasoningDag,
    build_dag,
    dag_from_json,
    dag_to_json,
    reasoning_depth,
)
from .retrieval import ChunkStore, HttpRetriever, LexicalRetriever, ingest_corpus

RETRIEVER_ENDPOINT_VAR = "PLANRAG_RETRIEVER_ENDPOINT"


class UsageError(Exception):
    """Configuration or invocation problem; maps to exit code 2."""


@dataclass
class AppConfig:
    mode: str = "Plan"
    k: int = 5
    max_parallel: int = 4
    parallel: int = 2
    tag_resolution: str = "deterministic"
    aggregation: str = "sink"
    retries: int = 1
    cache_dir: str = ".planrag-cache"
    store: str | None = None
    retriever_endpoint: str | None = None
    backend: str | None = None  # path to a scripted-backend JSON; else HTTP from env
    planner: str | None = None

    def __post_init__(self):
        if self.k < 1:
            raise UsageError("k must be >= 1")
        if self.store and self.retriever_endpoint:
            raise UsageError("configure either a local store or a retriever endpoint, not both")

    @classmethod
    def load(cls, path: str | None, overrides: dict) -> "AppConfig":
        base: dict = {}
        if path:
            try:
                with open(path, encoding="utf-8") as fh:
                    base = json.load(fh)
            except (OSError, json.JSONDecodeError) as err:
                raise UsageError(f"cannot read config {path}: {err}") from err
        unknown = set(base) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        merged = {**base, **{k: v for k, v in overrides.items() if v is not None}}
        try:
            return cls(**merged)
        except TypeError as err:
            raise UsageError(f"bad config: {err}") from err


def make_backend(cfg: AppConfig, script_path: str | None) -> Backend:
    if script_path:
        try:
            return load_scripted_backend(script_path)
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as err:
            raise UsageError(f"cannot load scripted backend {script_path}: {err}") from err
    return HttpBackend.from_env()


def make_retriever(cfg: AppConfig):
    endpoint = cfg.retriever_endpoint or os.environ.get(RETRIEVER_ENDPOINT_VAR)
    if cfg.store:
        try:
            return LexicalRetriever(ChunkStore.open(cfg.store))
        except (OSError, ValueError) as err:
            raise UsageError(f"cannot open store {cfg.store}: {err}") from err
    if endpoint:
        return HttpRetriever(endpoint)
    return None


def _run_config(cfg: AppConfig) -> RunConfig:
    try:
        return RunConfig(
            mode=Mode.parse(cfg.mode),
            k=cfg.k,
            max_parallel=cfg.max_parallel,
            tag_resolution=TagResolution(cfg.tag_resolution),
            aggregation=Aggregation(cfg.aggregation),
            retries=cfg.retries,
        )
    except ValueError as err:
        raise UsageError(str(err)) from err


# --- plan cache -----------------------------------------------------------------


def _plan_cache_path(cache_dir: str, query: str) -> str:
    digest = hashlib.sha256(query.encode("utf-8")).hexdigest()
    return os.path.join(cache_dir, "plans", f"{digest}.json")


def cache_read_plan(cache_dir: str, query: str) -> ReasoningDag | None:
    path = _plan_cache_path(cache_dir, query)
    try:
        with open(path, encoding="utf-8") as fh:
            return dag_from_json(json.load(fh))
    except FileNotFoundError:
        return None
    except (json.JSONDecodeError, ValueError, KeyError):
        return None  # a corrupt cache entry is just a miss


def cache_write_plan(cache_dir: str, query: str, plan_doc: dict) -> None:
    path = _plan_cache_path(cache_dir, query)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        json.dump(plan_doc, fh)
    os.replace(tmp, path)


# --- commands -------------------------------------------------------------------


def cmd_ingest(args, cfg: AppConfig) -> int:
    articles = []
    try:
        with open(args.corpus, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    doc = json.loads(line)
                    articles.append((str(doc["id"]), doc["text"]))
                except (KeyError, json.JSONDecodeError) as err:
                    raise UsageError(f"{args.corpus}:{lineno}: bad corpus line ({err})") from err
    except OSError as err:
        raise UsageError(f"cannot read corpus: {err}") from err
    try:
        store = ingest_corpus(articles, out_dir=args.store, chunk_words=args.chunk_words)
    except EmptyCorpus as err:
        raise UsageError(str(err)) from err
    for warning in store.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"ingested {store.num_sources} articles into {store.num_chunks} chunks -> {args.store}")
    return 0


def _plan_one(query: str, planner: Backend, run_cfg: RunConfig, cfg: AppConfig, use_cache: bool):
    if use_cache:
        cached = cache_read_plan(cfg.cache_dir, query)
        if cached is not None:
            return cached, True
    dag, _accounting, warnings = generate_plan(query, planner, run_cfg)
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    if use_cache:
        cache_write_plan(cfg.cache_dir, query, dag_to_json(dag))
    return dag, False


def _depth_stats(dags) -> str:
    counts: dict[str, int] = {}
    for dag in dags:
        depth = reasoning_depth(dag)
        key = str(depth) if depth < 4 else "4+"
        counts[key] = counts.get(key, 0) + 1
    total = sum(counts.values())
    order = sorted(counts, key=lambda k: 4 if k == "4+" else int(k))
    return ", ".join(f"depth {k}: {counts[k]} ({counts[k] / total * 100:.1f}%)" for k in order)


def cmd_plan(args, cfg: AppConfig) -> int:
    planner = make_backend(cfg, cfg.planner or cfg.backend)
    run_cfg = _run_config(cfg)
    use_cache = not args.no_cache
    dags = []
    failures = 0
    if args.query:
        dag, hit = _plan_one(args.query, planner, run_cfg, cfg, use_cache)
        dags.append(dag)
        payload = json.dumps(dag_to_json(dag), indent=2, ensure_ascii=False)
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(payload + "\n")
        else:
            print(payload)
        if hit:
            print("(cache hit)", file=sys.stderr)
    else:
        items = load_dataset(args.dataset)
        out_fh = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
        try:
            for item in items:
                try:
                    dag, _ = _plan_one(item.question, planner, run_cfg, cfg, use_cache)
                except BackendError as err:
                    print(f"warning: item {item.id}: planner failed ({err})", file=sys.stderr)
                    failures += 1
                    continue
                dags.append(dag)
                out_fh.write(
                    json.dumps({"id": item.id, "plan": dag_to_json(dag)}, ensure_ascii=False) + "\n"
                )
        finally:
            if out_fh is not sys.stdout:
                out_fh.close()
    if dags:
        print(f"depth stats: {_depth_stats(dags)}", file=sys.stderr)
    return 1 if failures else 0


def _existing_record_ids(path: str) -> set[str]:
    done: set[str] = set()
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    done.add(str(json.loads(line)["id"]))
                except (KeyError, json.JSONDecodeError):
                    continue  # a torn final line from a killed run is re-done
    except FileNotFoundError:
        pass
    return done


def cmd_run(args, cfg: AppConfig) -> int:
    run_cfg = _run_config(cfg)
    backend = make_backend(cfg, cfg.backend)
    planner = make_backend(cfg, cfg.planner) if cfg.planner else backend
    retriever = make_retriever(cfg)
    if retriever is None and run_cfg.mode is not Mode.VANILLA_LLM:
        raise UsageError(f"mode {run_cfg.mode.value} retrieves; configure --store or a retriever endpoint")
    items = load_dataset(args.dataset)

    done = _existing_record_ids(args.out) if args.resume else set()
    pending = [item for item in items if item.id not in done]
    if done:
        print(f"resuming: {len(done)} records present, {len(pending)} to go", file=sys.stderr)

    plan_mode = run_cfg.mode in (Mode.PLAN, Mode.PLAN_SUBQ)
    use_cache = plan_mode and not args.no_cache

    def run_one(item) -> RunRecord:
        plan = cache_read_plan(cfg.cache_dir, item.question) if use_cache else None
        record = run_pipeline(
            item.question,
            run_cfg,
            backend,
            retriever,
            item_id=item.id,
            planner=planner,
            plan=plan,
        )
        if use_cache and plan is None and record.plan:
            cache_write_plan(cfg.cache_dir, item.question, record.plan)
        return record

    statuses: list[str] = []
    mode_flag = "a" if args.resume else "w"
    with open(args.out, mode_flag, encoding="utf-8") as out_fh:
        with ThreadPoolExecutor(max_workers=max(1, cfg.parallel)) as pool:
            futures = {i: pool.submit(run_one, item) for i, item in enumerate(pending)}
            buffered: dict[int, RunRecord] = {}
            next_write = 0
            for i in range(len(pending)):
                buffered[i] = futures[i].result()
                while next_write in buffered:
                    record = buffered.pop(next_write)
                    out_fh.write(json.dumps(record.to_json(), ensure_ascii=False) + "\n")
                    out_fh.flush()
                    statuses.append(record.status)
                    next_write += 1
    failed = sum(s != "ok" for s in statuses)
    print(f"wrote {len(statuses)} records to {args.out} ({failed} not ok)", file=sys.stderr)
    return 1 if failed else 0


def load_records(path: str) -> list[RunRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(RunRecord.from_json(json.loads(line)))
            except (KeyError, json.JSONDecodeError) as err:
                raise UsageError(f"{path}:{lineno}: bad record ({err})") from err
    return records


def cmd_eval(args, cfg: AppConfig) -> int:
    records = load_records(args.records)
    items = load_dataset(args.dataset)
    judge = make_backend(cfg, args.judge or cfg.backend) if args.ig else None
    with_pr = True if args.pr else (False if args.no_pr else None)
    try:
        report = build_report(records, items, with_pr=with_pr, judge=judge)
    except IdMismatch as err:
        raise UsageError(f"records and dataset do not join: {err}") from err
    except MissingGold as err:
        raise UsageError(str(err)) from err
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report.to_json(), fh, indent=2, ensure_ascii=False)
            fh.write("\n")
    print(format_report(report))
    return 0


def shape_dag(spec: str, query: str = "benchmark query") -> ReasoningDag:
    """Build a synthetic plan: "chain:N" or "layered:w1,w2,...,1".

    Layered widths wire child j of one layer to parent ceil(j*w_prev/w) when
    the layer grows or stays level, and parent p to child ceil(p*w/w_prev)
    when it shrinks, so depths are exact and the last width-1 layer is the
    lone sink.
    """
    kind, _, rest = spec.partition(":")
    if kind == "chain":
        try:
            n = int(rest)
        except ValueError:
            raise UsageError(f"bad chain spec {spec!r}; expected chain:N") from None
        if n < 0:
            raise UsageError("chain length must be >= 0")
        widths = [1] * n
    elif kind == "layered":
        try:
            widths = [int(w) for w in rest.split(",")] if rest else []
        except ValueError:
            raise UsageError(f"bad layered spec {spec!r}; expected layered:w1,w2,...") from None
        if any(w < 1 for w in widths):
            raise UsageError("layer widths must be >= 1")
        if widths and widths[-1] != 1:
            raise UsageError("the last layer must have width 1 (a single sink)")
    else:
        raise UsageError(f"unknown shape {spec!r}; expected chain:N or layered:w1,...")

    if not widths:
        return build_dag(query)

    def label(depth: int, pos: int, template: str) -> str:
        return f"Q{depth}.{pos}: {template}"

    root = f"Q: {query}"
    edges: list[tuple[str, str]] = []
    labels: dict[tuple[int, int], str] = {}
    for j in range(1, widths[0] + 1):
        labels[(1, j)] = label(1, j, f"part {j} of the question")
        edges.append((root, labels[(1, j)]))
    for i in range(1, len(widths)):
        prev_w, w = widths[i - 1], widths[i]
        parents_of: dict[int, list[int]] = {j: [] for j in range(1, w + 1)}
        if w >= prev_w:
            for j in range(1, w + 1):
                parents_of[j].append(math.ceil(j * prev_w / w))
        else:
            for p in range(1, prev_w + 1):
                parents_of[math.ceil(p * w / prev_w)].append(p)
        for j in range(1, w + 1):
            tags = " and ".join(f"<A{i}.{p}>" for p in sorted(set(parents_of[j])))
            labels[(i + 1, j)] = label(i + 1, j, f"combine {tags} for part {j}")
            for p in sorted(set(parents_of[j])):
                edges.append((labels[(i, p)], labels[(i + 1, j)]))
    return build_dag(query, edges)


def cmd_bench(args, cfg: AppConfig) -> int:
    if args.records:
        records = load_records(args.records)
        by_mode: dict[str, list[RunRecord]] = {}
        for record in records:
            by_mode.setdefault(record.mode, []).append(record)
        print(f"{'mode':<12} {'n':>4} {'tokens in':>10} {'tokens out':>10} {'t_seq':>8} {'t_plan':>8}")
        for mode, group in sorted(by_mode.items()):
            n = len(group)
            mean_in = sum(r.tokens.get("in", 0) for r in group) / n
            mean_out = sum(r.tokens.get("out", 0) for r in group) / n
            mean_seq = sum(r.timing.get("t_seq", 0.0) for r in group) / n
            mean_plan = sum(r.timing.get("t_plan", 0.0) for r in group) / n
            print(f"{mode:<12} {n:>4} {mean_in:>10.1f} {mean_out:>10.1f} {mean_seq:>8.3f} {mean_plan:>8.3f}")
        return 0

    dag = shape_dag(args.shape)
    backend = (
        make_backend(cfg, cfg.backend)
        if cfg.backend
        else ScriptedBackend(delay=args.delay).set_default("Answer", '{"Response": "stub answer"}')
    )
    run_cfg = replace(_run_config(cfg), mode=Mode.PLAN_SUBQ)
    trace = run_plan(dag.original_query, dag, run_cfg, backend, retriever=None)
    timing = latency_model(trace)
    speedup = timing["t_seq"] / timing["t_plan"] if timing["t_plan"] else float("inf")
    print(f"shape {args.shape}: {len(dag.nodes)} nodes, depth {reasoning_depth(dag)}")
    print(f"t_seq  {timing['t_seq']:.4f} s")
    print(f"t_plan {timing['t_plan']:.4f} s")
    print(f"speedup {speedup:.4f}")
    print(f"wall   {trace.wall_time:.4f} s")
    print("per-node context tokens:")
    for node_id, parts in context_cost(trace).items():
        print(
            f"  {node_id:<8} total {parts['total']:>6}  question {parts['question']:>5}  "
            f"docs {parts['docs']:>5}  parents {parts['parents']:>5}"
        )
    return 0


# --- argument parsing -------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planrag",
        description="Test-time reasoning-plan RAG: ingest, plan, run, eval, bench.",
    )
    parser.add_argument("--config", help="JSON file of AppConfig defaults")
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--backend", help="path to a scripted-backend JSON (default: HTTP from env)")
    shared.add_argument("--planner", help="separate backend script for plan generation")
    shared.add_argument("--k", type=int, default=None)
    shared.add_argument("--max-parallel", type=int, default=None, dest="max_parallel")
    shared.add_argument("--cache-dir", default=None, dest="cache_dir")

    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", parents=[shared], help="chunk a corpus into a store")
    p_ingest.add_argument("--corpus", required=True, help="JSONL of {id, text}")
    p_ingest.add_argument("--store", required=True, help="output store directory")
    p_ingest.add_argument("--chunk-words", type=int, default=100, dest="chunk_words")

    p_plan = sub.add_parser("plan", parents=[shared], help="generate reasoning plans")
    group = p_plan.add_mutually_exclusive_group(required=True)
    group.add_argument("--query")
    group.add_argument("--dataset")
    p_plan.add_argument("--out")
    p_plan.add_argument("--no-cache", action="store_true", dest="no_cache")

    p_run = sub.add_parser("run", parents=[shared], help="run a dataset through a mode")
    p_run.add_argument("--dataset", required=True)
    p_run.add_argument("--mode", default=None)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--store", default=None)
    p_run.add_argument("--retriever-endpoint", default=None, dest="retriever_endpoint")
    p_run.add_argument("--tag-resolution", default=None, dest="tag_resolution", choices=["deterministic", "llm"])
    p_run.add_argument("--aggregation", default=None, choices=["sink", "boolean"])
    p_run.add_argument("--parallel", type=int, default=None)
    p_run.add_argument("--resume", action="store_true")
    p_run.add_argument("--no-cache", action="store_true", dest="no_cache")

    p_eval = sub.add_parser("eval", parents=[shared], help="score records against a dataset")
    p_eval.add_argument("--records", required=True)
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--pr", action="store_true", help="force retrieval precision/recall")
    p_eval.add_argument("--no-pr", action="store_true", dest="no_pr")
    p_eval.add_argument("--ig", action="store_true", help="judge the information-gain curve")
    p_eval.add_argument("--judge", help="scripted judge backend (defaults to --backend)")
    p_eval.add_argument("--out", help="write the report JSON here")

    p_bench = sub.add_parser("bench", parents=[shared], help="latency/context for a plan shape")
    group = p_bench.add_mutually_exclusive_group(required=True)
    group.add_argument("--shape", help="chain:N or layered:w1,w2,...,1")
    group.add_argument("--records", help="summarize token/latency stats from records JSONL")
    p_bench.add_argument("--delay", type=float, default=0.05, help="scripted per-call delay (s)")

    return parser


_CONFIG_KEYS = (
    "mode",
    "k",
    "max_parallel",
    "parallel",
    "tag_resolution",
    "aggregation",
    "cache_dir",
    "store",
    "retriever_endpoint",
    "backend",
    "planner",
)


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = {key: getattr(args, key, None) for key in _CONFIG_KEYS}
        cfg = AppConfig.load(args.config, overrides)
        command = {
            "ingest": cmd_ingest,
            "plan": cmd_plan,
            "run": cmd_run,
            "eval": cmd_eval,
            "bench": cmd_bench,
        }[args.command]
        return command(args, cfg)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (OSError, ValueError, BackendError, RetrievalError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
