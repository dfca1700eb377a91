"""Concept dependency graph: loading, validation, and curriculum ordering.

Edges point prerequisite -> dependent.  Generating a concept first requires
every ancestor, ordered so prerequisites always come before the concepts that
need them.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .errors import (
    CycleDetected,
    ParseError,
    TraversalError,
    UnknownConcept,
    UnknownNodeInEdge,
)


@dataclass(frozen=True)
class ConceptNode:
    id: str
    prompt: str
    tags: tuple[str, ...] = ()


@dataclass(frozen=True)
class ConceptGraph:
    """Validated DAG of concepts.  nodes maps id -> ConceptNode; edges holds
    (prerequisite, dependent) pairs."""

    nodes: dict[str, ConceptNode]
    edges: tuple[tuple[str, str], ...]
    parents: dict[str, tuple[str, ...]] = field(repr=False, default_factory=dict)

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, concept_id: str) -> bool:
        return concept_id in self.nodes

    def prerequisites(self, concept_id: str) -> tuple[str, ...]:
        if concept_id not in self.nodes:
            raise UnknownConcept(concept_id)
        return self.parents.get(concept_id, ())


def _parse_node(raw, index: int) -> ConceptNode:
    if not isinstance(raw, dict):
        raise ParseError(f"node {index}: expected an object, got {type(raw).__name__}")
    if "id" not in raw:
        raise ParseError(f"node {index}: missing 'id'")
    node_id = raw["id"]
    if not isinstance(node_id, str) or not node_id:
        raise ParseError(f"node {index}: 'id' must be a non-empty string")
    prompt = raw.get("prompt", "")
    if not isinstance(prompt, str):
        raise ParseError(f"node {node_id!r}: 'prompt' must be a string")
    tags = raw.get("tags", [])
    if not isinstance(tags, list) or any(not isinstance(t, str) for t in tags):
        raise ParseError(f"node {node_id!r}: 'tags' must be a list of strings")
    return ConceptNode(id=node_id, prompt=prompt, tags=tuple(tags))


def _find_cycle(nodes: Sequence[str], children: dict[str, list[str]]) -> list[str]:
    """Return one directed cycle (first node repeated at the end)."""
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {n: WHITE for n in nodes}
    stack: list[str] = []

    def dfs(n: str) -> list[str] | None:
        color[n] = GRAY
        stack.append(n)
        for m in children.get(n, []):
            if color[m] == GRAY:
                i = stack.index(m)
                return stack[i:] + [m]
            if color[m] == WHITE:
                found = dfs(m)
                if found is not None:
                    return found
        stack.pop()
        color[n] = BLACK
        return None

    for n in nodes:
        if color[n] == WHITE:
            found = dfs(n)
            if found is not None:
                return found
    raise AssertionError("no cycle found")  # callers only invoke this when one exists


def load_concept_graph(source: str | Path | dict) -> ConceptGraph:
    """Parse and validate a concept graph from a JSON file, JSON text, or an
    already-decoded dict.

    Expected form: {"nodes": [{"id", "prompt", "tags"}], "edges": [[pre, dep]]}.
    Raises ParseError on malformed input, UnknownNodeInEdge when an edge
    mentions an absent id, and CycleDetected (carrying one witness cycle)
    when the graph is not a DAG.
    """
    if isinstance(source, dict):
        data = source
    else:
        # A str that looks like a JSON object is parsed directly; anything
        # else is treated as a path.
        if isinstance(source, str) and source.lstrip().startswith("{"):
            text = source
        else:
            text = Path(source).read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError("top level must be an object")
    raw_nodes = data.get("nodes")
    if not isinstance(raw_nodes, list):
        raise ParseError("'nodes' must be a list")
    raw_edges = data.get("edges", [])
    if not isinstance(raw_edges, list):
        raise ParseError("'edges' must be a list")

    nodes: dict[str, ConceptNode] = {}
    for i, raw in enumerate(raw_nodes):
        node = _parse_node(raw, i)
        if node.id in nodes:
            raise ParseError(f"duplicate node id {node.id!r}")
        nodes[node.id] = node

    edges: list[tuple[str, str]] = []
    children: dict[str, list[str]] = {}
    parents: dict[str, list[str]] = {}
    seen: set[tuple[str, str]] = set()
    for i, raw in enumerate(raw_edges):
        if not (isinstance(raw, (list, tuple)) and len(raw) == 2):
            raise ParseError(f"edge {i}: expected a [prerequisite, dependent] pair")
        pre, dep = raw
        for endpoint in (pre, dep):
            if endpoint not in nodes:
                raise UnknownNodeInEdge(f"edge {i}: unknown node {endpoint!r}")
        if pre == dep:
            raise CycleDetected([pre, pre])
        if (pre, dep) in seen:
            continue
        seen.add((pre, dep))
        edges.append((pre, dep))
        children.setdefault(pre, []).append(dep)
        parents.setdefault(dep, []).append(pre)

    # Kahn's algorithm just to detect cycles; order is recomputed per query.
    indeg = {n: 0 for n in nodes}
    for _, dep in edges:
        indeg[dep] += 1
    queue = [n for n, d in indeg.items() if d == 0]
    visited = 0
    while queue:
        n = queue.pop()
        visited += 1
        for m in children.get(n, []):
            indeg[m] -= 1
            if indeg[m] == 0:
                queue.append(m)
    if visited != len(nodes):
        raise CycleDetected(_find_cycle(list(nodes), children))

    frozen_parents = {k: tuple(sorted(v)) for k, v in parents.items()}
    return ConceptGraph(nodes=nodes, edges=tuple(edges), parents=frozen_parents)


@dataclass(frozen=True)
class TraversalPlan:
    """Curriculum for one target: its ancestor closure in prerequisite-first
    order, target last."""

    target: str
    ordered_concepts: tuple[str, ...]

    def __iter__(self):
        return iter(self.ordered_concepts)

    def __len__(self) -> int:
        return len(self.ordered_concepts)


def curriculum_order(graph: ConceptGraph, target: str) -> TraversalPlan:
    """Prerequisite-first ordering of the target's ancestor closure.

    The plan contains the target's transitive prerequisites and the target
    itself, every prerequisite before its dependents, the target last, and
    ties broken by ascending id so the order is deterministic.
    """
    if target not in graph:
        raise UnknownConcept(target)

    closure: set[str] = set()
    stack = [target]
    while stack:
        n = stack.pop()
        if n in closure:
            continue
        closure.add(n)
        stack.extend(graph.parents.get(n, ()))

    children: dict[str, list[str]] = {}
    indeg = {n: 0 for n in closure}
    for pre, dep in graph.edges:
        if pre in closure and dep in closure:
            children.setdefault(pre, []).append(dep)
            indeg[dep] += 1

    heap = [n for n, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order: list[str] = []
    while heap:
        n = heapq.heappop(heap)
        order.append(n)
        for m in sorted(children.get(n, [])):
            indeg[m] -= 1
            if indeg[m] == 0:
                heapq.heappush(heap, m)
    # target has no dependents inside its own closure, so it always pops last
    assert order[-1] == target and len(order) == len(closure)
    return TraversalPlan(target=target, ordered_concepts=tuple(order))


@dataclass(frozen=True)
class TraversalFrame:
    concept_id: str
    prompt: str
    seed: int
    layout: object
    image: object


def traverse_with(
    graph: ConceptGraph,
    target: str,
    frame_fn: Callable[[ConceptNode, int], tuple],
    seed: int = 0,
) -> list[TraversalFrame]:
    """Run frame_fn(node, per_concept_seed) -> (layout, image) along the
    curriculum path to `target`.

    Per-concept seeds derive from (seed, concept_id) so adding or removing
    unrelated concepts never shifts the seeds of the others.  Failures are
    re-raised as TraversalError tagged with the concept id.
    """
    from .seeding import derive_seed

    frames: list[TraversalFrame] = []
    for concept_id in curriculum_order(graph, target):
        node = graph.nodes[concept_id]
        step_seed = derive_seed(seed, "traverse", concept_id)
        try:
            layout, image = frame_fn(node, step_seed)
        except Exception as exc:
            raise TraversalError(concept_id, f"generation failed: {exc}") from exc
        frames.append(
            TraversalFrame(
                concept_id=concept_id, prompt=node.prompt, seed=step_seed, layout=layout, image=image
            )
        )
    return frames


def learn_traverse(
    graph: ConceptGraph,
    target: str,
    layout_model,
    gen_model,
    enc,
    seed: int = 0,
    num_steps: int | None = None,
) -> list[TraversalFrame]:
    """Curriculum-ordered generation: predict a layout for each concept's
    prompt, then sample an image conditioned on it.  Returns one frame per
    concept in plan order."""
    from .diffusion import generate
    from .layout_decoder import predict_layout

    def frame(node: ConceptNode, step_seed: int):
        layout, _conf = predict_layout(layout_model, node.prompt, enc)
        image = generate(gen_model, layout, seed=step_seed, num_steps=num_steps)
        return layout, image

    return traverse_with(graph, target, frame, seed=seed)
