"""Hierarchical relation tree: proximity scoring, center selection, layer merging and LCA queries.

Leaves are the detections of one frame. Each construction layer scores its
nodes with a Gaussian-kernel proximity sum, picks centers, and merges every
other node into its nearest center. A center that attracts nothing moves up
unchanged, so every created parent merges at least two nodes and a tree over n
leaves holds at most n - 1 relation candidates.
"""

import logging
from collections.abc import Iterator, Sequence
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from .errors import PreconditionError
from .geometry import BoundingBox, Detection, union_of

logger = logging.getLogger(__name__)

Scheme = Literal[1, 2]
Coord = tuple[float, float, float, float]


class HRTreeNode(BaseModel):
    """One tree node; leaves are detections, non-leaves are relation candidates."""

    model_config = ConfigDict(frozen=True)

    id: int
    box: BoundingBox
    coord: Coord
    score: float
    children: tuple[int, ...] = ()
    parent: Optional[int] = None
    layer: int = 0

    @property
    def is_leaf(self) -> bool:
        return not self.children


class HRTree(BaseModel):
    """Immutable hierarchical relation tree of one frame."""

    model_config = ConfigDict(frozen=True)

    nodes: dict[int, HRTreeNode]
    root: Optional[int]
    leaves: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def is_empty(self) -> bool:
        return self.root is None

    def node(self, node_id: int) -> HRTreeNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise PreconditionError(f"unknown node id {node_id}") from None

    def non_leaf_ids(self) -> list[int]:
        return sorted(i for i, n in self.nodes.items() if not n.is_leaf)

    def candidate_count(self) -> int:
        """Number of relation candidates (non-leaf nodes)."""
        return len(self.non_leaf_ids())

    def pair_count(self) -> int:
        """Ordered object pairs a fully connected relation graph would hold."""
        n = len(self.leaves)
        return n * (n - 1)

    def ancestors(self, node_id: int) -> list[int]:
        """Path from ``node_id`` (inclusive) up to the root."""
        path = [node_id]
        parent = self.node(node_id).parent
        while parent is not None:
            path.append(parent)
            parent = self.nodes[parent].parent
        return path

    def postorder(self) -> Iterator[int]:
        """Children before parents."""
        if self.root is None:
            return
        stack: list[tuple[int, bool]] = [(self.root, False)]
        while stack:
            node_id, expanded = stack.pop()
            if expanded:
                yield node_id
                continue
            stack.append((node_id, True))
            for child in reversed(self.nodes[node_id].children):
                stack.append((child, False))

    def preorder(self) -> Iterator[int]:
        """Parents before children."""
        if self.root is None:
            return
        stack = [self.root]
        while stack:
            node_id = stack.pop()
            yield node_id
            stack.extend(reversed(self.nodes[node_id].children))

    def leaves_under(self, node_id: int) -> list[int]:
        node = self.node(node_id)
        if node.is_leaf:
            return [node_id]
        out: list[int] = []
        for child in node.children:
            out.extend(self.leaves_under(child))
        return sorted(out)

    def depth(self) -> int:
        """Number of nodes on the longest root-to-leaf path (0 for an empty tree)."""
        if not self.leaves:
            return 0
        return max(len(self.ancestors(leaf)) for leaf in self.leaves)

    def to_outline(self) -> str:
        """Indented text outline, one node per line."""
        if self.root is None:
            return "(empty tree)\n"
        lines: list[str] = []

        def visit(node_id: int, indent: int) -> None:
            node = self.nodes[node_id]
            b = node.box
            kind = "leaf" if node.is_leaf else "candidate"
            lines.append(
                f"{'  ' * indent}{kind} {node_id} [{b.x1:.1f}, {b.y1:.1f}, {b.x2:.1f}, {b.y2:.1f}] score={node.score:.4f}"
            )
            for child in node.children:
                visit(child, indent + 1)

        visit(self.root, 0)
        return "\n".join(lines) + "\n"


def node_coord(box: BoundingBox, frame_size: tuple[float, float]) -> Coord:
    """Normalized center-size coordinate (cx/W, cy/H, w/W, h/H)."""
    width, height = frame_size
    cx, cy = box.center
    return (cx / width, cy / height, box.width / width, box.height / height)


def proximity_scores(coords: Sequence[Sequence[float]] | np.ndarray) -> np.ndarray:
    """score_k = sum_i exp(-||f_k - f_i||^2), including the self term."""
    f = np.asarray(coords, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] == 0:
        raise PreconditionError("proximity_scores needs at least one coordinate vector of uniform length")
    diff = f[:, None, :] - f[None, :, :]
    d2 = np.sum(diff * diff, axis=-1)
    return np.sum(np.exp(-d2), axis=1)


def select_centers(scored_ids: Sequence[tuple[int, float]], scheme: Scheme) -> set[int]:
    """Pick the centers of one layer from (id, score) pairs.

    Nodes are ordered by descending score, ties by ascending id. Scheme 1 takes
    every other node starting from the best; scheme 2 takes round(n/2) centers,
    the larger half from the top of the order and the rest from the bottom.
    """
    n = len(scored_ids)
    if n < 2:
        raise PreconditionError(f"center selection needs at least 2 nodes, got {n}")
    ordered = [node_id for node_id, _ in sorted(scored_ids, key=lambda item: (-item[1], item[0]))]
    if scheme == 1:
        return set(ordered[::2])
    if scheme == 2:
        count = (n + 1) // 2  # round half up
        top = (count + 1) // 2
        bottom = count // 2
        return set(ordered[:top]) | (set(ordered[n - bottom :]) if bottom else set())
    raise PreconditionError(f"unknown center selection scheme {scheme}")


class _Draft:
    """Mutable node record used while a tree is being built."""

    __slots__ = ("box", "coord", "score", "children", "parent", "layer", "rank")

    def __init__(self, box: BoundingBox, coord: Coord, rank: int, layer: int, children: tuple[int, ...] = ()) -> None:
        self.box = box
        self.coord = coord
        self.rank = rank
        self.layer = layer
        self.children = children
        self.score = 0.0
        self.parent: Optional[int] = None


def build_hrtree(detections: Sequence[Detection], frame_size: tuple[float, float], scheme: Scheme) -> HRTree:
    """Build the tree bottom-up until a single root remains.

    Leaf ids equal the input positions of the detections. Ties are resolved by a
    canonical rank: leaves by (x1, y1, x2, y2, argmax class, input index),
    parents after all leaves in creation order.
    """
    if frame_size[0] <= 0 or frame_size[1] <= 0:
        raise PreconditionError(f"frame size must be positive, got {frame_size}")
    n = len(detections)
    if n == 0:
        return HRTree(nodes={}, root=None, leaves=())

    canonical = sorted(range(n), key=lambda i: (*detections[i].box.as_tuple(), detections[i].label, i))
    drafts: dict[int, _Draft] = {}
    for rank, i in enumerate(canonical):
        box = detections[i].box
        drafts[i] = _Draft(box, node_coord(box, frame_size), rank=rank, layer=0)

    layer = list(canonical)
    next_id = n
    depth = 0
    while True:
        scores = proximity_scores([drafts[i].coord for i in layer])
        for node_id, score in zip(layer, scores):
            drafts[node_id].score = float(score)
        if len(layer) == 1:
            break

        by_rank = {drafts[i].rank: i for i in layer}
        center_ranks = select_centers([(drafts[i].rank, float(s)) for i, s in zip(layer, scores)], scheme)
        centers = sorted((by_rank[r] for r in center_ranks), key=lambda i: drafts[i].rank)
        center_coords = np.array([drafts[c].coord for c in centers])

        assigned: dict[int, list[int]] = {c: [] for c in centers}
        for node_id in layer:
            if node_id in assigned:
                continue
            d2 = np.sum((center_coords - np.asarray(drafts[node_id].coord)) ** 2, axis=1)
            # ties go to the lower-ranked center; centers are already in rank order
            assigned[centers[int(np.argmin(d2))]].append(node_id)

        depth += 1
        parent_layer: list[int] = []
        for center in centers:
            members = assigned[center]
            if not members:
                parent_layer.append(center)
                continue
            children = tuple(sorted([center, *members], key=lambda i: drafts[i].rank))
            box = union_of([drafts[c].box for c in children])
            drafts[next_id] = _Draft(box, node_coord(box, frame_size), rank=next_id, layer=depth, children=children)
            for child in children:
                drafts[child].parent = next_id
            parent_layer.append(next_id)
            next_id += 1
        layer = sorted(parent_layer, key=lambda i: drafts[i].rank)

    nodes = {
        node_id: HRTreeNode(
            id=node_id,
            box=d.box,
            coord=d.coord,
            score=d.score,
            children=d.children,
            parent=d.parent,
            layer=d.layer,
        )
        for node_id, d in sorted(drafts.items())
    }
    tree = HRTree(nodes=nodes, root=layer[0], leaves=tuple(range(n)))
    logger.debug("built tree over %d leaves with %d candidates", n, tree.candidate_count())
    return tree


def lca(tree: HRTree, leaf_a: int, leaf_b: int) -> int:
    """Deepest node that is an ancestor of both leaves."""
    if leaf_a == leaf_b:
        raise PreconditionError(f"lca needs two distinct leaves, got {leaf_a} twice")
    leaves = set(tree.leaves)
    if len(leaves) < 2 or leaf_a not in leaves or leaf_b not in leaves:
        raise PreconditionError(f"lca needs two leaves of the tree, got {leaf_a} and {leaf_b}")
    above_a = set(tree.ancestors(leaf_a))
    for node_id in tree.ancestors(leaf_b):
        if node_id in above_a:
            return node_id
    raise PreconditionError(f"leaves {leaf_a} and {leaf_b} share no ancestor")
