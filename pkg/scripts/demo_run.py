"""End-to-end walkthrough on the bundled fixtures, no live endpoints needed.

Ingests the sample corpus into a temporary store, runs the three-question
dataset in per-subquery retrieval mode against the scripted backend, then
scores the records (accuracy, retrieval P/R, depth histogram, judged
information-gain curve).

Usage: python3 scripts/demo_run.py
"""

import sys
import tempfile
from pathlib import Path

from planrag.cli import main as cli_main

FIXTURES = Path(__file__).resolve().parents[1] / "tests" / "fixtures"


def main() -> int:
    with tempfile.TemporaryDirectory() as tmp:
        tmp_path = Path(tmp)
        store = tmp_path / "store"
        records = tmp_path / "records.jsonl"

        steps = [
            ["ingest", "--corpus", str(FIXTURES / "corpus.jsonl"), "--store", str(store)],
            [
                "run",
                "--dataset", str(FIXTURES / "dataset.jsonl"),
                "--mode", "PlanSubQ",
                "--backend", str(FIXTURES / "golden_script.json"),
                "--store", str(store),
                "--out", str(records),
                "--cache-dir", str(tmp_path / "cache"),
            ],
            [
                "eval",
                "--records", str(records),
                "--dataset", str(FIXTURES / "dataset.jsonl"),
                "--ig", "--judge", str(FIXTURES / "golden_script.json"),
            ],
        ]
        for argv in steps:
            print(f"\n$ planrag {' '.join(argv)}")
            code = cli_main(argv)
            if code != 0:
                print(f"step failed with exit code {code}", file=sys.stderr)
                return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
