"""Sweep plan shapes and report sequential vs. layer-parallel latency.

Every answering call is served by a scripted backend with a fixed delay, so
t_seq is the call count times the delay and t_plan is the depth times the
delay; wall time shows the executor actually achieving the parallel schedule.

Usage: python3 scripts/bench_shapes.py [--delay 0.05]
"""

import argparse

from planrag import RunConfig, ScriptedBackend, latency_model, reasoning_depth, run_plan
from planrag.cli import shape_dag

SHAPES = [
    "chain:2",
    "chain:4",
    "chain:8",
    "layered:2,1",
    "layered:2,2,1",
    "layered:4,2,1",
    "layered:4,4,4,1",
    "layered:8,1",
]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--delay", type=float, default=0.05, help="scripted per-call delay (s)")
    parser.add_argument("--shapes", nargs="*", default=SHAPES, help="chain:N or layered:w1,...,1")
    args = parser.parse_args()

    print(f"{'shape':<16} {'nodes':>5} {'depth':>5} {'t_seq':>8} {'t_plan':>8} {'speedup':>8} {'wall':>8}")
    for spec in args.shapes:
        dag = shape_dag(spec)
        backend = ScriptedBackend(delay=args.delay).set_default("Answer", '{"Response": "stub"}')
        trace = run_plan(dag.original_query, dag, RunConfig(), backend)
        timing = latency_model(trace)
        speedup = timing["t_seq"] / timing["t_plan"] if timing["t_plan"] else float("inf")
        print(
            f"{spec:<16} {len(dag.nodes):>5} {reasoning_depth(dag):>5} "
            f"{timing['t_seq']:>8.3f} {timing['t_plan']:>8.3f} {speedup:>8.3f} {trace.wall_time:>8.3f}"
        )


if __name__ == "__main__":
    main()
