"""Label hierarchy: the global taxonomy and per-instance local hierarchies.

The taxonomy is a forest of labels (multiple depth-1 roots are allowed, an
implicit virtual root joins them). Every label knows its parent and its
depth; labels are partitioned into per-depth lists whose order follows the
taxonomy file, which fixes a deterministic label order everywhere downstream
(verbalizer rows, score vectors, prompt sequences).

A local hierarchy is the ancestor-closed subtree of one instance's gold
labels, stored as per-depth ordered lists.
"""
from __future__ import annotations

import json
import logging
from bisect import bisect_right
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)


class TaxonomyError(ValueError):
    """Raised for structural problems in a taxonomy or a label set."""


@dataclass(frozen=True)
class LabelNode:
    id: str
    name: str
    parent: str | None
    depth: int


@dataclass(frozen=True)
class Taxonomy:
    """Immutable global label hierarchy.

    ``depth_sets[d-1]`` lists the ids at depth ``d`` in file order;
    ``order`` maps id -> global file position, ``depth_index`` maps
    id -> position within its depth.
    """

    nodes: dict[str, LabelNode]
    max_depth: int
    depth_sets: tuple[tuple[str, ...], ...]
    order: dict[str, int] = field(repr=False)
    depth_index: dict[str, int] = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.nodes)

    def depth_of(self, label_id: str) -> int:
        return self.nodes[label_id].depth

    def labels_at(self, depth: int) -> tuple[str, ...]:
        return self.depth_sets[depth - 1]

    def children(self, label_id: str) -> list[str]:
        return [n.id for n in self.nodes.values() if n.parent == label_id]

    def root_path(self, label_id: str) -> list[str]:
        """Ids from the depth-1 ancestor down to ``label_id`` inclusive."""
        if label_id not in self.nodes:
            raise TaxonomyError(f"unknown label id: {label_id!r}")
        path = [label_id]
        node = self.nodes[label_id]
        while node.parent is not None:
            node = self.nodes[node.parent]
            path.append(node.id)
        path.reverse()
        return path

    def ancestor_closure(self, labels: set[str]) -> set[str]:
        closed: set[str] = set()
        for label_id in labels:
            closed.update(self.root_path(label_id))
        return closed


@dataclass(frozen=True)
class LocalHierarchy:
    """Ancestor-closed label subtree of a single instance."""

    instance_labels: frozenset[str]
    per_depth: tuple[tuple[str, ...], ...]

    @property
    def deepest(self) -> int:
        last = 0
        for d, ids in enumerate(self.per_depth, start=1):
            if ids:
                last = d
        return last


def load_taxonomy(source: str) -> Taxonomy:
    """Parse and validate a taxonomy from its JSON file content.

    The format is a JSON array of ``{"id", "name", "parent"}`` objects;
    array order defines the label order. Raises :class:`TaxonomyError` on
    duplicate ids, dangling parents, cycles, or an empty taxonomy.
    """
    try:
        raw = json.loads(source)
    except json.JSONDecodeError as exc:
        raise TaxonomyError(f"taxonomy is not valid JSON: {exc}") from exc
    if not isinstance(raw, list) or not raw:
        raise TaxonomyError("taxonomy must be a non-empty JSON array")

    parents: dict[str, str | None] = {}
    names: dict[str, str] = {}
    order: dict[str, int] = {}
    for pos, entry in enumerate(raw):
        label_id = entry.get("id")
        if not isinstance(label_id, str) or not label_id:
            raise TaxonomyError(f"entry {pos} has no usable id")
        if label_id in parents:
            raise TaxonomyError(f"duplicate id: {label_id!r}")
        parent = entry.get("parent")
        if parent is not None and not isinstance(parent, str):
            raise TaxonomyError(f"bad parent for id {label_id!r}")
        parents[label_id] = parent
        names[label_id] = entry.get("name", label_id)
        order[label_id] = pos

    for label_id, parent in parents.items():
        if parent is not None and parent not in parents:
            raise TaxonomyError(
                f"dangling parent reference: {label_id!r} -> {parent!r}"
            )

    # Depth via iterative parent walk; a revisit within one walk is a cycle.
    depths: dict[str, int] = {}

    def resolve_depth(label_id: str) -> int:
        chain = []
        cur: str | None = label_id
        seen = set()
        while cur is not None and cur not in depths:
            if cur in seen:
                raise TaxonomyError(f"cycle detected through id {cur!r}")
            seen.add(cur)
            chain.append(cur)
            cur = parents[cur]
        base = 0 if cur is None else depths[cur]
        for link in reversed(chain):
            base += 1
            depths[link] = base
        return depths[label_id]

    nodes: dict[str, LabelNode] = {}
    for label_id in order:
        depth = resolve_depth(label_id)
        nodes[label_id] = LabelNode(
            id=label_id, name=names[label_id], parent=parents[label_id], depth=depth
        )

    max_depth = max(n.depth for n in nodes.values())
    by_depth: list[list[str]] = [[] for _ in range(max_depth)]
    for label_id in order:  # file order within each depth
        by_depth[nodes[label_id].depth - 1].append(label_id)
    depth_sets = tuple(tuple(ids) for ids in by_depth)
    depth_index = {
        label_id: i for ids in depth_sets for i, label_id in enumerate(ids)
    }
    return Taxonomy(
        nodes=nodes,
        max_depth=max_depth,
        depth_sets=depth_sets,
        order=order,
        depth_index=depth_index,
    )


def extract_local_hierarchy(
    tax: Taxonomy, labels: set[str], auto_close: bool = True
) -> LocalHierarchy:
    """Build the per-depth view of an instance's label set.

    With ``auto_close`` the ancestor closure is taken (one warning per
    added ancestor); otherwise a non-closed set is an error.
    """
    for label_id in labels:
        if label_id not in tax.nodes:
            raise TaxonomyError(f"unknown label id: {label_id!r}")
    closed = tax.ancestor_closure(labels)
    if closed != set(labels):
        if not auto_close:
            missing = sorted(closed - set(labels))
            raise TaxonomyError(f"label set is not ancestor-closed, missing {missing}")
        for added in sorted(closed - set(labels)):
            logger.warning("auto-closing label set: adding ancestor %r", added)
    per_depth = tuple(
        tuple(lid for lid in tax.depth_sets[d] if lid in closed)
        for d in range(tax.max_depth)
    )
    return LocalHierarchy(instance_labels=frozenset(closed), per_depth=per_depth)


def label_frequency_buckets(
    tax: Taxonomy, corpus, bucket_edges: list[int]
) -> dict[str, int]:
    """Assign each label a frequency bucket from its gold count in ``corpus``.

    Bucket ``i`` holds counts in ``[edges[i-1], edges[i])``; counts below
    ``edges[0]`` (including zero) land in bucket 0.
    """
    if any(b <= a for a, b in zip(bucket_edges, bucket_edges[1:])):
        raise ValueError("bucket_edges must be strictly increasing")
    counts = {label_id: 0 for label_id in tax.nodes}
    for instance in corpus.instances:
        for label_id in instance.labels:
            counts[label_id] += 1
    return {
        label_id: bisect_right(bucket_edges, count)
        for label_id, count in counts.items()
    }
