"""Measure per-step context size: dependency-pruned plans vs. cumulative decomposition.

Runs chains of increasing length with unit-size sentinel answers and documents.
With a plan, each node sees only its parents' answers, so interior context is
flat in chain length; with sequential decomposition the context accumulates
every prior document and answer, growing linearly.

Usage: python3 scripts/context_growth.py [--lengths 2 4 8 16]
"""

import argparse
import json

from planrag import Document, Mode, Purpose, RunConfig, ScriptedBackend, ScriptedRetriever, build_dag, context_cost, run_pipeline, run_plan
from planrag.textutils import estimate_tokens


def unit_chain(n: int):
    """A chain whose every materialized question is exactly six words."""
    query = "what ties all parts together?"
    first = "Q1.1: alpha beta gamma delta epsilon zeta"
    edges = [(f"Q: {query}", first)]
    prev = first
    for depth in range(2, n + 1):
        label = f"Q{depth}.1: combine <A{depth - 1}.1> extra words"
        edges.append((prev, label))
        prev = label
    return build_dag(query, edges)


def plan_mode_contexts(n: int) -> list[int]:
    backend = ScriptedBackend().set_default("Answer", '{"Response": "unit answer text"}')
    retriever = ScriptedRetriever(
        default=[Document(doc_id="shared#0000", text="three word doc", source_id="shared")]
    )
    dag = unit_chain(n)
    trace = run_plan(dag.original_query, dag, RunConfig(mode=Mode.PLAN), backend, retriever)
    costs = context_cost(trace)
    return [costs[node]["total"] for node in sorted(costs)]


def decomposition_contexts(n: int) -> list[int]:
    subqueries = [f"sub part {i:02d}" for i in range(1, n + 1)]
    backend = (
        ScriptedBackend()
        .set_default("QDSplit", json.dumps(subqueries))
        .set_default("QDAnswer", '{"Response": "unit answer text"}')
    )
    retriever = ScriptedRetriever(
        rules=[
            (sub, [Document(doc_id=f"s{i}#0000", text="three word doc", source_id=f"s{i}")])
            for i, sub in enumerate(subqueries, start=1)
        ]
    )
    run_pipeline("the original question?", RunConfig(mode=Mode.QD_RAG), backend, retriever, item_id=f"n{n}")
    return [estimate_tokens(c.user) for c in backend.calls_for(Purpose.QD_ANSWER)[:n]]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--lengths", type=int, nargs="*", default=[2, 4, 8, 16])
    args = parser.parse_args()

    print("plan mode (per-node context tokens; parents only, flat in n):")
    for n in args.lengths:
        print(f"  n={n:<3} {plan_mode_contexts(n)}")

    print("cumulative decomposition (per-step context tokens; grows every step):")
    for n in args.lengths:
        contexts = decomposition_contexts(n)
        diffs = [b - a for a, b in zip(contexts, contexts[1:])]
        print(f"  n={n:<3} {contexts}  step deltas {diffs}")


if __name__ == "__main__":
    main()
