"""Parse raw planner output into a validated plan.

The expected surface is either a bare quoted "Q: ..." string (simple query,
no decomposition) or a Python-style list of ("parent label", "child label")
tuples.  Model output is approximately-but-not-exactly that format, so this
is a small hand-written recursive-descent parser rather than a literal
evaluator: it tolerates markdown code fences, a leading "DAG:" label, single
or double or TeX-style `...' quotes, backslash escapes, and trailing commas.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import BadLabel, UnparseableSyntax
from .plan_model import (  # noqa: F401  (re-exported as part of this module's API)
    ReasoningDag,
    build_dag,
    extract_tags,
    parse_node_label,
)
from .textutils import strip_code_fences

_OPENERS = {'"': '"', "'": "'", "`": "'"}


@dataclass(frozen=True)
class SimpleQuery:
    """Planner declined to decompose; answer the query directly."""

    text: str


@dataclass(frozen=True)
class PlanParseResult:
    outcome: SimpleQuery | ReasoningDag
    warnings: tuple[str, ...] = ()

    @property
    def is_simple(self) -> bool:
        return isinstance(self.outcome, SimpleQuery)

    @property
    def dag(self) -> ReasoningDag | None:
        return self.outcome if isinstance(self.outcome, ReasoningDag) else None


class _Cursor:
    __slots__ = ("text", "i")

    def __init__(self, text: str):
        self.text = text
        self.i = 0

    def fail(self, detail: str):
        raise UnparseableSyntax(self.i, detail)

    def at_end(self) -> bool:
        return self.i >= len(self.text)

    def peek(self) -> str:
        return self.text[self.i] if self.i < len(self.text) else ""

    def skip_ws(self):
        while not self.at_end() and self.text[self.i] in " \t\r\n":
            self.i += 1

    def expect(self, ch: str):
        if self.peek() != ch:
            self.fail(f"expected {ch!r}, found {self.peek()!r}")
        self.i += 1

    def read_string(self) -> str:
        opener = self.peek()
        if opener not in _OPENERS:
            self.fail("expected a quoted string")
        closer = _OPENERS[opener]
        self.i += 1
        out: list[str] = []
        while True:
            if self.at_end():
                self.fail("unterminated string")
            ch = self.text[self.i]
            if ch == "\\" and self.i + 1 < len(self.text):
                out.append(self.text[self.i + 1])
                self.i += 2
                continue
            if ch == closer or (opener == "`" and ch == "`"):
                self.i += 1
                return "".join(out)
            out.append(ch)
            self.i += 1

    def read_pair(self) -> tuple[str, str]:
        self.expect("(")
        self.skip_ws()
        first = self.read_string()
        self.skip_ws()
        self.expect(",")
        self.skip_ws()
        second = self.read_string()
        self.skip_ws()
        if self.peek() == ",":  # trailing comma inside the tuple
            self.i += 1
            self.skip_ws()
        self.expect(")")
        return first, second

    def read_list(self, element) -> list:
        self.expect("[")
        self.skip_ws()
        items = []
        if self.peek() == "]":
            self.i += 1
            return items
        while True:
            items.append(element())
            self.skip_ws()
            if self.peek() == ",":
                self.i += 1
                self.skip_ws()
                if self.peek() == "]":  # trailing comma
                    self.i += 1
                    return items
                continue
            self.expect("]")
            return items


def _strip_label(text: str, label: str) -> str:
    s = text.strip()
    if s[: len(label)].lower() == label.lower():
        return s[len(label) :].strip()
    return s


def parse_plan_text(raw: str, original_query: str) -> PlanParseResult:
    """Parse planner output and validate the resulting dag.

    Structural faults (cycles, disconnection, ...) propagate from build_dag;
    anything that fails the surface grammar raises UnparseableSyntax with an
    offset into the cleaned text.
    """
    if not raw or not raw.strip():
        raise UnparseableSyntax(0, "empty plan text")
    text = _strip_label(strip_code_fences(raw), "DAG:")
    if not text:
        raise UnparseableSyntax(0, "no plan content after label")

    if not text.startswith("["):
        # Bare string form: the simple-query outcome.
        try:
            nid, template = parse_node_label(text)
        except BadLabel:
            raise UnparseableSyntax(0, "neither a tuple list nor a root-labeled query") from None
        if not nid.is_root:
            raise UnparseableSyntax(0, f"bare string must be a root label, got {nid}")
        return PlanParseResult(SimpleQuery(template))

    cur = _Cursor(text)
    pairs = cur.read_list(cur.read_pair)
    cur.skip_ws()
    if not cur.at_end():
        cur.fail("unexpected trailing content")

    warnings: list[str] = []
    deduped: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    for pair in pairs:
        if pair in seen:
            warnings.append(f"duplicate tuple deduplicated: {pair[0][:40]!r} -> {pair[1][:40]!r}")
            continue
        seen.add(pair)
        deduped.append(pair)

    dag = build_dag(original_query, deduped, extra_warnings=warnings)
    return PlanParseResult(dag, warnings=dag.warnings)


def parse_subquery_list(raw: str) -> list[str]:
    """Parse a decomposer's output: a quoted-string list like [`a', `b'].

    A bare quoted string is tolerated and treated as a one-element list.
    """
    if not raw or not raw.strip():
        raise UnparseableSyntax(0, "empty subquery list")
    text = _strip_label(strip_code_fences(raw), "Subqueries:")
    if not text.startswith("["):
        cur = _Cursor(text)
        if cur.peek() in _OPENERS:
            item = cur.read_string()
            cur.skip_ws()
            if cur.at_end():
                return [item]
        raise UnparseableSyntax(0, "expected a list of quoted subqueries")
    cur = _Cursor(text)
    items = cur.read_list(cur.read_string)
    cur.skip_ws()
    if not cur.at_end():
        cur.fail("unexpected trailing content")
    return [s.strip() for s in items if s.strip()]
