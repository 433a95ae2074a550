import json
import random
from pathlib import Path

import pytest

from planrag import ReasoningDag, build_dag

FIXTURES = Path(__file__).parent / "fixtures"

GOLDEN_QUERY = (
    "Rumble Fish was a novel by the author of the coming-of-age novel "
    "published in what year by Viking Press?"
)

GOLDEN_PLAN_TEXT = """[
    ("Q: Rumble Fish was a novel by the author of the coming-of-age novel published in what year by Viking Press?", "Q1.1: Who is the author of Rumble Fish?"),
    ("Q1.1: Who is the author of Rumble Fish?", "Q2.1: What is the coming-of-age novel by <A1.1>?"),
    ("Q2.1: What is the coming-of-age novel by <A1.1>?", "Q3.1: In what year was <A2.1> published by Viking Press?")
]"""


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def corpus_articles() -> list[tuple[str, str]]:
    articles = []
    with open(FIXTURES / "corpus.jsonl", encoding="utf-8") as fh:
        for line in fh:
            doc = json.loads(line)
            articles.append((doc["id"], doc["text"]))
    return articles


@pytest.fixture(scope="session")
def golden_script_path() -> Path:
    return FIXTURES / "golden_script.json"


@pytest.fixture()
def store_dir(tmp_path, corpus_articles) -> Path:
    from planrag import ingest_corpus

    out = tmp_path / "store"
    ingest_corpus(corpus_articles, out_dir=out)
    return out


# --- random plan generator ---------------------------------------------------
#
# Layer-by-layer construction that is valid by design: each node takes one
# parent in the layer directly above (pinning its longest-path depth), may
# take extra parents from any strictly earlier layer, childless nodes are
# wired into the single sink, and templates only ever tag actual parents.

_WORDS = (
    "alpha", "beta", "gamma", "delta", "sigma", "omega", "kappa", "theta",
    "orbit", "basalt", "meridian", "lantern", "copper", "drift",
)
_SPICE = (
    'with "inner quotes"',
    "a, comma list",
    "colon: inside",
    "back\\slash",
    "(parenthetical)",
    "don't stop",
)


def random_dag(rng: random.Random, max_extra_layers: int = 3, max_width: int = 3) -> ReasoningDag:
    widths = [rng.randint(1, max_width) for _ in range(rng.randint(0, max_extra_layers))]
    widths.append(1)  # the sink layer
    query = " ".join(rng.choice(_WORDS) for _ in range(rng.randint(3, 8))) + "?"
    root_label = f"Q: {query}"

    parents_at: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for depth, width in enumerate(widths, start=1):
        for pos in range(1, width + 1):
            if depth == 1:
                parents_at[(depth, pos)] = []
                continue
            primary = (depth - 1, rng.randint(1, widths[depth - 2]))
            extra = {
                (d, rng.randint(1, widths[d - 1]))
                for d in range(1, depth - 1)
                if rng.random() < 0.3
            }
            parents_at[(depth, pos)] = sorted({primary} | extra)

    # Give every childless non-sink node an edge into the sink.
    sink = (len(widths), 1)
    with_children = {p for ps in parents_at.values() for p in ps}
    for node in parents_at:
        if node != sink and node not in with_children:
            parents_at[sink].append(node)
    parents_at[sink] = sorted(set(parents_at[sink]))

    labels: dict[tuple[int, int], str] = {}
    for (depth, pos), parents in sorted(parents_at.items()):
        bits = [rng.choice(_WORDS) for _ in range(rng.randint(2, 4))]
        if rng.random() < 0.25:
            bits.append(rng.choice(_SPICE))
        for parent in parents:
            if rng.random() < 0.8:
                bits.append(f"<A{parent[0]}.{parent[1]}>")
        labels[(depth, pos)] = f"Q{depth}.{pos}: " + " ".join(bits)

    edges = []
    for (depth, pos), parents in sorted(parents_at.items()):
        child = labels[(depth, pos)]
        if depth == 1:
            edges.append((root_label, child))
        for parent in parents:
            edges.append((labels[parent], child))
    return build_dag(query, edges)
