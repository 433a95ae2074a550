"""Typed reasoning-plan graph.

A plan is a rooted DAG of subquery templates.  Node ids carry a depth index
and a position index; depth is always the longest-path distance from the
root, so nodes at equal depth never depend on each other and can run
concurrently.  Templates may embed answer tags ("<A1.2>") pointing at parent
nodes whose answers get spliced in at execution time.
"""

from __future__ import annotations

import re
from collections import defaultdict, deque
from dataclasses import dataclass, field

from .errors import (
    BadLabel,
    CycleDetected,
    DanglingTag,
    DisconnectedNode,
    DuplicateNode,
    MultipleSinks,
)

# Well-formed surfaces only: depth and position are positive decimal integers
# without leading zeros.  Anything else tag-shaped stays literal text.
TAG_RE = re.compile(r"<A([1-9]\d*)\.([1-9]\d*)>")
_NEAR_TAG_RE = re.compile(r"<A[^<>]*>")
_LABEL_RE = re.compile(r"^Q(?:([1-9]\d*)\.([1-9]\d*))?\s*:\s*(.*)$", re.DOTALL)
_QUOTES = {'"': '"', "'": "'", "`": "'"}


@dataclass(frozen=True, order=True)
class NodeId:
    """(depth, position) pair; depth 0 is reserved for the main-query root."""

    depth: int
    pos: int

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError(f"depth must be >= 0, got {self.depth}")
        if self.pos < 1:
            raise ValueError(f"position must be >= 1, got {self.pos}")

    @property
    def is_root(self) -> bool:
        return self.depth == 0

    def render(self) -> str:
        return "Q" if self.depth == 0 else f"Q{self.depth}.{self.pos}"

    def __str__(self) -> str:
        return self.render()

    @classmethod
    def parse(cls, text: str) -> NodeId:
        """Inverse of render: "Q" or "QI.J" (surrounding whitespace tolerated)."""
        s = text.strip()
        if s == "Q":
            return cls(0, 1)
        m = re.fullmatch(r"Q([1-9]\d*)\.([1-9]\d*)", s)
        if not m:
            raise BadLabel(text)
        return cls(int(m.group(1)), int(m.group(2)))


ROOT_ID = NodeId(0, 1)


@dataclass(frozen=True, order=True)
class AnswerTag:
    """Placeholder for the answer of a parent node; renders as "<AI.J>"."""

    target: NodeId

    def __post_init__(self):
        if self.target.depth < 1:
            raise ValueError("answer tags cannot target the root")

    def render(self) -> str:
        return f"<A{self.target.depth}.{self.target.pos}>"

    def __str__(self) -> str:
        return self.render()


def _strip_quotes(text: str) -> str:
    s = text.strip()
    while len(s) >= 2 and s[0] in _QUOTES and s[-1] == _QUOTES[s[0]]:
        s = s[1:-1].strip()
    return s


def parse_node_label(label: str) -> tuple[NodeId, str]:
    """Split a labeled subquery like "Q1.1: Who ...?" into (id, template).

    "Q: ..." names the root.  Surrounding whitespace and quotes are ignored.
    Raises BadLabel for anything else.
    """
    m = _LABEL_RE.match(_strip_quotes(label))
    if not m:
        raise BadLabel(label)
    depth_s, pos_s, template = m.groups()
    if depth_s is None:
        return ROOT_ID, template.strip()
    return NodeId(int(depth_s), int(pos_s)), template.strip()


def extract_tags(template: str) -> list[AnswerTag]:
    """Every well-formed tag occurrence, in order, duplicates preserved."""
    return [
        AnswerTag(NodeId(int(m.group(1)), int(m.group(2))))
        for m in TAG_RE.finditer(template)
    ]


def malformed_tag_spans(template: str) -> list[str]:
    """Tag-shaped spans that are not well-formed tags (e.g. "<A1>", "<A0.1>")."""
    return [
        m.group(0)
        for m in _NEAR_TAG_RE.finditer(template)
        if not TAG_RE.fullmatch(m.group(0))
    ]


@dataclass(frozen=True)
class PlanNode:
    id: NodeId
    template: str
    tags: tuple[AnswerTag, ...]

    @classmethod
    def from_template(cls, node_id: NodeId, template: str) -> PlanNode:
        unique: list[AnswerTag] = []
        for tag in extract_tags(template):
            if tag not in unique:
                unique.append(tag)
        return cls(node_id, template, tuple(unique))


@dataclass(frozen=True)
class ReasoningDag:
    """Validated plan graph.  Immutable after construction; safe to share."""

    original_query: str
    nodes: dict[NodeId, PlanNode]
    edges: frozenset[tuple[NodeId, NodeId]]
    warnings: tuple[str, ...] = field(default=(), compare=False)

    @property
    def root(self) -> PlanNode:
        return self.nodes[ROOT_ID]

    def parents_of(self, node_id: NodeId) -> tuple[NodeId, ...]:
        return tuple(sorted(p for p, c in self.edges if c == node_id))

    def children_of(self, node_id: NodeId) -> tuple[NodeId, ...]:
        return tuple(sorted(c for p, c in self.edges if p == node_id))

    def sink_id(self) -> NodeId:
        sinks = [nid for nid in self.nodes if not self.children_of(nid)]
        assert len(sinks) == 1, "validated dag must have exactly one sink"
        return sinks[0]

    def sorted_ids(self) -> list[NodeId]:
        return sorted(self.nodes)


def _longest_depths(
    node_ids, edge_set: set[tuple[NodeId, NodeId]]
) -> dict[NodeId, int]:
    """Longest-path distance from the root for every node.

    Assumes acyclicity and root-reachability were already established.
    """
    parents = defaultdict(list)
    children = defaultdict(list)
    indeg = {nid: 0 for nid in node_ids}
    for p, c in edge_set:
        parents[c].append(p)
        children[p].append(c)
        indeg[c] += 1
    depths: dict[NodeId, int] = {}
    ready = deque(nid for nid, d in indeg.items() if d == 0)
    while ready:
        nid = ready.popleft()
        depths[nid] = max((depths[p] + 1 for p in parents[nid]), default=0)
        for c in children[nid]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    return depths


def _rewrite_tags(template: str, mapping: dict[NodeId, NodeId]) -> str:
    def sub(m: re.Match) -> str:
        old = NodeId(int(m.group(1)), int(m.group(2)))
        new = mapping.get(old)
        return f"<A{new.depth}.{new.pos}>" if new is not None else m.group(0)

    return TAG_RE.sub(sub, template)


def build_dag(
    original_query: str,
    edge_labels=(),
    extra_warnings=(),
) -> ReasoningDag:
    """Construct and validate a plan from labeled edge pairs.

    ``edge_labels`` holds (parent label, child label) strings in the
    "QI.J: template" form.  An empty list yields the root-only plan for a
    simple query.  The root's template is always the original query; when
    emitted labels disagree with the graph's real depths, depths win and
    labels (plus any tags pointing at them) are rewritten, with a warning.
    """
    warnings = list(extra_warnings)
    templates: dict[NodeId, str] = {ROOT_ID: original_query}
    edge_set: set[tuple[NodeId, NodeId]] = set()

    for parent_label, child_label in edge_labels:
        pid, p_template = parse_node_label(parent_label)
        cid, c_template = parse_node_label(child_label)
        for nid, tmpl in ((pid, p_template), (cid, c_template)):
            if nid == ROOT_ID:
                if tmpl.strip() and tmpl.strip() != original_query.strip():
                    note = "root label text differs from the original query; keeping the original query"
                    if note not in warnings:
                        warnings.append(note)
                continue
            seen = templates.get(nid)
            if seen is not None and seen != tmpl:
                raise DuplicateNode(nid)
            templates[nid] = tmpl
        if pid == cid:
            raise CycleDetected([pid])
        edge_set.add((pid, cid))

    # Acyclicity (Kahn's algorithm: a cycle leaves nodes unprocessed).
    indeg = {nid: 0 for nid in templates}
    for _, c in edge_set:
        indeg[c] += 1
    ready = deque(nid for nid, d in indeg.items() if d == 0)
    processed = 0
    degree = dict(indeg)
    while ready:
        nid = ready.popleft()
        processed += 1
        for p, c in edge_set:
            if p == nid:
                degree[c] -= 1
                if degree[c] == 0:
                    ready.append(c)
    if processed != len(templates):
        stuck = sorted(nid for nid, d in degree.items() if d > 0)
        raise CycleDetected(stuck)

    # Root-reachability.
    reached = {ROOT_ID}
    frontier = deque([ROOT_ID])
    while frontier:
        nid = frontier.popleft()
        for p, c in edge_set:
            if p == nid and c not in reached:
                reached.add(c)
                frontier.append(c)
    unreached = sorted(set(templates) - reached)
    if unreached:
        raise DisconnectedNode(unreached[0])

    # Depth assignment; rewrite labels when the emitted ones disagree.
    depths = _longest_depths(templates.keys(), edge_set)
    if any(depths[nid] != nid.depth for nid in templates):
        by_depth: dict[int, list[NodeId]] = defaultdict(list)
        for nid in templates:
            by_depth[depths[nid]].append(nid)
        mapping: dict[NodeId, NodeId] = {}
        for d, ids in by_depth.items():
            for j, nid in enumerate(sorted(ids), start=1):
                mapping[nid] = NodeId(d, j)
        changed = sorted(nid for nid in templates if mapping[nid] != nid)
        warnings.append(
            "node labels rewritten to match topology: "
            + ", ".join(f"{nid.render()}->{mapping[nid].render()}" for nid in changed)
        )
        templates = {
            mapping[nid]: _rewrite_tags(tmpl, mapping)
            for nid, tmpl in templates.items()
        }
        edge_set = {(mapping[p], mapping[c]) for p, c in edge_set}

    # Node assembly; the root never carries tags.
    nodes: dict[NodeId, PlanNode] = {}
    for nid in sorted(templates):
        if nid == ROOT_ID:
            nodes[nid] = PlanNode(ROOT_ID, original_query, ())
            continue
        tmpl = templates[nid]
        for span in malformed_tag_spans(tmpl):
            warnings.append(f"node {nid}: tag-like text {span!r} left as literal")
        nodes[nid] = PlanNode.from_template(nid, tmpl)

    # Single sink.
    with_children = {p for p, _ in edge_set}
    sinks = sorted(nid for nid in nodes if nid not in with_children)
    if len(sinks) > 1:
        raise MultipleSinks(sinks)

    # Markov discipline: every tag points at a parent.
    for nid, node in nodes.items():
        parent_ids = {p for p, c in edge_set if c == nid}
        for tag in node.tags:
            if tag.target not in nodes or tag.target not in parent_ids:
                raise DanglingTag(nid, tag.render())

    return ReasoningDag(
        original_query=original_query,
        nodes=nodes,
        edges=frozenset(edge_set),
        warnings=tuple(warnings),
    )


def node_depths(dag: ReasoningDag) -> dict[NodeId, int]:
    """Longest-path distance from the root for every node of a valid dag."""
    return _longest_depths(dag.nodes.keys(), set(dag.edges))


def layers(dag: ReasoningDag) -> list[set[NodeId]]:
    """Nodes grouped by depth, ascending; parents always land in earlier sets."""
    depths = node_depths(dag)
    out: list[set[NodeId]] = [set() for _ in range(max(depths.values()) + 1)]
    for nid, d in depths.items():
        out[d].add(nid)
    return out


def reasoning_depth(dag: ReasoningDag) -> int:
    """Maximum node depth; 0 for a root-only (simple-query) plan."""
    return max(node_depths(dag).values())


def dag_to_json(dag: ReasoningDag) -> dict:
    """Canonical plan document: {original_query, nodes, edges}, labels rendered."""
    ids = dag.sorted_ids()
    return {
        "original_query": dag.original_query,
        "nodes": [{"id": nid.render(), "template": dag.nodes[nid].template} for nid in ids],
        "edges": [[p.render(), c.render()] for p, c in sorted(dag.edges)],
    }


def dag_from_json(doc: dict) -> ReasoningDag:
    """Rebuild (and revalidate) a dag from its canonical document."""
    original_query = doc["original_query"]
    templates = {entry["id"]: entry["template"] for entry in doc["nodes"]}
    edge_labels = [
        (f"{p}: {templates[p]}", f"{c}: {templates[c]}") for p, c in doc["edges"]
    ]
    return build_dag(original_query, edge_labels)


def _render_string(text: str) -> str:
    escaped = text.replace("\\", "\\\\").replace('"', '\\"')
    return f'"{escaped}"'


def render_plan_tuples(dag: ReasoningDag) -> str:
    """Render a dag back into the tuple-list plan syntax (or the bare root string)."""
    if len(dag.nodes) == 1:
        return _render_string(f"Q: {dag.original_query}")
    lines = []
    for p, c in sorted(dag.edges):
        left = _render_string(f"{p.render()}: {dag.nodes[p].template}")
        right = _render_string(f"{c.render()}: {dag.nodes[c].template}")
        lines.append(f"\t({left}, {right})")
    return "[\n" + ",\n".join(lines) + "\n]"
