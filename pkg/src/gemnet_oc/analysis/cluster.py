"""Single-linkage (nearest point) agglomerative clustering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation


@dataclass(frozen=True)
class Merge:
    left: int
    right: int
    height: float
    size: int


def _check(d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ContractViolation("distance matrix must be square")
    if not np.array_equal(d, d.T):
        raise ContractViolation("distance matrix must be symmetric")
    if np.any(np.diag(d) != 0):
        raise ContractViolation("distance matrix must have a zero diagonal")
    if np.any(np.isnan(d)):
        raise ContractViolation("distance matrix contains NaN")
    return d


def hierarchical_cluster(distance) -> list[Merge]:
    """Merge list in the usual linkage numbering: leaves are ``0..n-1``, merge ``k`` creates ``n+k``.

    Distances between clusters follow the Lance-Williams single-linkage
    update ``min(d(k,i), d(k,j))``. Among equally close pairs the one with
    the smallest cluster ids (lower id first, then the other) merges first;
    each merge lists the smaller id as ``left``.
    """
    d = _check(distance)
    n = d.shape[0]
    active = list(range(n))
    dist = {(i, j): d[i, j] for i in range(n) for j in range(i + 1, n)}
    size = {i: 1 for i in range(n)}
    merges = []
    next_id = n
    while len(active) > 1:
        a, b = min(dist, key=lambda p: (dist[p], p))
        h = dist[(a, b)]
        active.remove(a)
        active.remove(b)
        for k in active:
            key_a = (min(a, k), max(a, k))
            key_b = (min(b, k), max(b, k))
            dist[(k, next_id)] = min(dist.pop(key_a), dist.pop(key_b))
        del dist[(a, b)]
        size[next_id] = size[a] + size[b]
        merges.append(Merge(a, b, float(h), size[next_id]))
        active.append(next_id)
        next_id += 1
    return merges


def leaves(merges: list[Merge], n: int, node: int) -> list[int]:
    if node < n:
        return [node]
    m = merges[node - n]
    return sorted(leaves(merges, n, m.left) + leaves(merges, n, m.right))


def format_dendrogram(merges: list[Merge], labels) -> str:
    """One line per merge: step, height, size and the member labels of both sides."""
    labels = list(labels)
    n = len(labels)
    lines = ["# step\theight\tsize\tleft\tright"]
    for step, m in enumerate(merges):
        left = ",".join(labels[i] for i in leaves(merges, n, m.left))
        right = ",".join(labels[i] for i in leaves(merges, n, m.right))
        lines.append(f"{step}\t{m.height:.6g}\t{m.size}\t{left}\t{right}")
    return "\n".join(lines) + "\n"
