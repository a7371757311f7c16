"""Response-variable trees: clustering, pruning, and the tree-guided penalty.

The hierarchical grouping of response columns is estimated by agglomerative
clustering (1 - Pearson correlation, complete linkage by default) or supplied
as JSON from prior knowledge. Internal nodes whose normalized merge height
exceeds rho_star are pruned: their group term is dropped from the penalty and
their children re-parent upward, so only strongly correlated groups
contribute. ``node_weights`` expands the nested height recursion into one flat
weight per node; penalty evaluation and the SPG solver consume that flat list.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import linkage as _scipy_linkage
from scipy.spatial.distance import squareform

from .errors import ConfigError
from .ipf import GroupSpec, PenaltyGroup


@dataclass
class TreeNode:
    group: tuple[int, ...]            # response indices, sorted, 0-based
    height: float                     # normalized to [0, 1]; 0 for leaves
    children: tuple[int, ...] = ()
    weight: float = 0.0
    pruned: bool = False

    @property
    def is_leaf(self) -> bool:
        return len(self.children) == 0


@dataclass
class TreeStructure:
    """Nodes 0..m-1 are the leaves in response-column order; merges follow."""

    nodes: list[TreeNode]
    root: int
    m: int

    def __post_init__(self):
        for k in range(self.m):
            node = self.nodes[k]
            if not node.is_leaf or node.group != (k,) or node.height != 0.0:
                raise ConfigError(
                    f"node {k} must be the leaf for response column {k + 1}"
                )
        for i, node in enumerate(self.nodes[self.m:], start=self.m):
            if len(node.children) < 2:
                raise ConfigError(f"internal node {i} must have >= 2 children")
            union = sorted(k for c in node.children for k in self.nodes[c].group)
            if tuple(union) != node.group:
                raise ConfigError(
                    f"internal node {i}: group must equal the union of its children"
                )
            if not 0.0 <= node.height <= 1.0:
                raise ConfigError("node heights must be normalized to [0, 1]")

    @property
    def internal(self) -> list[int]:
        return list(range(self.m, len(self.nodes)))

    def parents(self) -> np.ndarray:
        par = np.full(len(self.nodes), -1)
        for i, node in enumerate(self.nodes):
            for c in node.children:
                par[c] = i
        return par


def build_tree(Y, rho_star: float = 0.95, metric: str = "correlation",
               method: str = "complete", prune_mode: str = "drop_high") -> TreeStructure:
    """Cluster response columns and prune by the normalized-height threshold.

    Dissimilarity is 1 - Pearson correlation (``metric="euclidean"`` uses
    column Euclidean distances instead). Merge heights are min-max normalized
    to [0, 1] with leaves at 0. ``prune_mode="drop_high"`` drops internal
    nodes with height > rho_star (the default: ignore weakly correlated
    groups); ``"keep_high"`` implements the literal opposite reading.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[1] < 2:
        raise ConfigError("need a matrix with at least 2 response columns")
    if not 0.0 <= rho_star <= 1.0:
        raise ConfigError("rho_star must lie in [0, 1]")
    if prune_mode not in ("drop_high", "keep_high"):
        raise ConfigError("prune_mode must be 'drop_high' or 'keep_high'")
    m = Y.shape[1]
    sd = Y.std(axis=0)
    if (sd == 0).any():
        k = int(np.flatnonzero(sd == 0)[0])
        raise ConfigError(
            f"response column {k + 1} is constant; correlation is undefined"
        )
    if metric == "correlation":
        D = 1.0 - np.corrcoef(Y, rowvar=False)
    elif metric == "euclidean":
        diff = Y[:, :, None] - Y[:, None, :]
        D = np.sqrt((diff ** 2).sum(axis=0))
    else:
        raise ConfigError(f"unknown metric {metric!r}")
    np.fill_diagonal(D, 0.0)
    D = np.maximum((D + D.T) / 2.0, 0.0)  # symmetrize float noise, clip tiny negatives
    Z = _scipy_linkage(squareform(D, checks=False), method=method)

    heights = Z[:, 2]
    hmax = heights.max()
    norm = heights / hmax if hmax > 0 else np.zeros_like(heights)
    norm = np.clip(norm, 0.0, 1.0)

    nodes = [TreeNode(group=(k,), height=0.0) for k in range(m)]
    for t in range(Z.shape[0]):
        a, b = int(Z[t, 0]), int(Z[t, 1])
        group = tuple(sorted(nodes[a].group + nodes[b].group))
        nodes.append(TreeNode(group=group, height=float(norm[t]), children=(a, b)))
    tree = TreeStructure(nodes=nodes, root=len(nodes) - 1, m=m)
    if prune_mode == "drop_high":
        for i in tree.internal:
            tree.nodes[i].pruned = tree.nodes[i].height > rho_star
    else:
        for i in tree.internal:
            tree.nodes[i].pruned = tree.nodes[i].height <= rho_star
    return node_weights(tree)


def node_weights(tree: TreeStructure) -> TreeStructure:
    """Assign flat penalty weights by expanding the nested height recursion.

    Each surviving internal node carries (1 - h) times the product of the h
    factors of its surviving ancestors; each leaf carries 1 plus the full h
    product along its surviving ancestor chain. Pruned nodes get weight 0 and
    their children effectively re-parent upward.
    """
    par = tree.parents()

    def surviving_ancestor(i: int) -> int:
        a = par[i]
        while a != -1 and tree.nodes[a].pruned:
            a = par[a]
        return int(a)

    # product of h over surviving strict ancestors, topmost first
    amult: dict[int, float] = {}

    def ancestor_product(i: int) -> float:
        if i in amult:
            return amult[i]
        a = surviving_ancestor(i)
        if a == -1:
            val = 1.0
        else:
            val = ancestor_product(a) * tree.nodes[a].height
        amult[i] = val
        return val

    seen = set()
    stack = [tree.root]
    while stack:  # guard against cycles in hand-built trees
        i = stack.pop()
        if i in seen:
            raise ConfigError("tree structure contains a cycle")
        seen.add(i)
        stack.extend(tree.nodes[i].children)

    for i, node in enumerate(tree.nodes):
        if node.is_leaf:
            a = surviving_ancestor(i)
            if a == -1:
                node.weight = 1.0
            else:
                node.weight = 1.0 + ancestor_product(a) * tree.nodes[a].height
        elif node.pruned:
            node.weight = 0.0
        else:
            node.weight = (1.0 - node.height) * ancestor_product(i)
    return tree


def flat_groups(tree: TreeStructure) -> list[tuple[np.ndarray, float]]:
    """(response indices, weight) per contributing node: leaves plus unpruned
    internal nodes with positive weight."""
    out = []
    for node in tree.nodes:
        if node.pruned or node.weight <= 0.0:
            continue
        out.append((np.asarray(node.group, dtype=np.int64), float(node.weight)))
    return out


def tree_penalty(B, tree: TreeStructure, lam: float) -> float:
    """lambda * sum_j sum_nu w_nu ||beta_j^{G_nu}||_2 over the flat node list."""
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[1] != tree.m:
        raise ConfigError(
            f"B has {B.shape} but the tree covers m={tree.m} responses"
        )
    total = 0.0
    for cols, w in flat_groups(tree):
        sub = B[:, cols]
        total += w * np.sqrt((sub * sub).sum(axis=1)).sum()
    return lam * total


def to_json(tree: TreeStructure, path) -> None:
    """Export with 1-based response indices in node groups."""
    out = {
        "m": tree.m,
        "root": tree.root,
        "nodes": [
            {
                "id": i,
                "children": list(node.children),
                "group": [k + 1 for k in node.group],
                "height": node.height,
                "weight": node.weight,
                "pruned": node.pruned,
            }
            for i, node in enumerate(tree.nodes)
        ],
    }
    with open(path, "w") as fh:
        json.dump(out, fh, indent=1)


def from_json(path) -> TreeStructure:
    """Load a tree supplied by prior knowledge; recomputes flat weights."""
    with open(path) as fh:
        raw = json.load(fh)
    entries = sorted(raw["nodes"], key=lambda e: e["id"])
    nodes = []
    for e in entries:
        nodes.append(TreeNode(
            group=tuple(sorted(int(k) - 1 for k in e["group"])),
            height=float(e["height"]),
            children=tuple(int(c) for c in e["children"]),
            pruned=bool(e.get("pruned", False)),
        ))
    tree = TreeStructure(nodes=nodes, root=int(raw["root"]), m=int(raw["m"]))
    return node_weights(tree)


def tree_groups(tree: TreeStructure) -> GroupSpec:
    """The tree penalty as a generic GroupSpec (every feature row, l2 norms)."""
    groups = tuple(
        PenaltyGroup(cols=tuple(int(c) for c in cols), weight=w, q=2.0, rows=None)
        for cols, w in flat_groups(tree)
    )
    return GroupSpec(groups=groups)
