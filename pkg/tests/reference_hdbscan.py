"""Naive reference clustering used as the test oracle.

Deliberately simple and independent of the package implementation: dense
distance matrix, quadratic Prim scan, dict-based dendrogram, recursive
condense/selection. Only suitable for small n.
"""
from __future__ import annotations

import math

import numpy as np


def reference_core_distances(points, min_samples):
    n = len(points)
    cores = []
    for i in range(n):
        dists = sorted(math.dist(points[i], points[j]) for j in range(n))
        cores.append(dists[min_samples - 1])
    return cores


def reference_mutual_reachability(points, cores):
    n = len(points)
    m = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i != j:
                m[i][j] = max(math.dist(points[i], points[j]), cores[i], cores[j])
    return m


def reference_prim(m):
    n = len(m)
    visited = {0}
    edges = []
    while len(visited) < n:
        best = None
        for i in visited:
            for j in range(n):
                if j in visited:
                    continue
                cand = (m[i][j], min(i, j), max(i, j), i, j)
                if best is None or cand < best:
                    best = cand
        _, _, _, i, j = best
        edges.append((best[0], i, j))
        visited.add(j)
    return edges


def reference_single_linkage(edges, n):
    """Dict dendrogram: node -> (left, right, dist, member frozenset)."""
    edges = sorted(edges, key=lambda e: (e[0], min(e[1], e[2]), max(e[1], e[2])))
    comp = {i: i for i in range(n)}

    def find(x):
        while comp[x] != x:
            comp[x] = comp[comp[x]]
            x = comp[x]
        return x

    tree = {i: (None, None, 0.0, frozenset([i])) for i in range(n)}
    active = {i: i for i in range(n)}  # root of union -> dendrogram node
    next_node = n
    for w, u, v in edges:
        ru, rv = find(u), find(v)
        left, right = active[ru], active[rv]
        members = tree[left][3] | tree[right][3]
        tree[next_node] = (left, right, w, members)
        comp[rv] = ru
        active[find(ru)] = next_node
        next_node += 1
    return tree, next_node - 1


def reference_condense(tree, root, min_cluster_size):
    """Condensed tree as nested dicts with stability bookkeeping."""
    clusters = {}
    counter = {"next": 0}

    def lam_of(node):
        dist = tree[node][2]
        return math.inf if dist == 0.0 else 1.0 / dist

    def walk(node, cluster_id, birth):
        entry = clusters.setdefault(
            cluster_id,
            {"birth": birth, "rows": [], "children": [], "points": set()},
        )
        left, right, dist, members = tree[node]
        if left is None:
            raise AssertionError("leaf reached while cluster still active")
        lam = math.inf if dist == 0.0 else 1.0 / dist
        sizes = [len(tree[left][3]), len(tree[right][3])]
        if sizes[0] >= min_cluster_size and sizes[1] >= min_cluster_size:
            for child in (left, right):
                child_id = counter["next"]
                counter["next"] += 1
                entry["children"].append(child_id)
                entry["rows"].append((lam, len(tree[child][3])))
                clusters[child_id] = {
                    "birth": lam,
                    "rows": [],
                    "children": [],
                    "points": set(),
                }
                if tree[child][0] is None:
                    raise AssertionError("cluster child cannot be a leaf")
                walk(child, child_id, lam)
        else:
            for child, size in ((left, sizes[0]), (right, sizes[1])):
                if size >= min_cluster_size:
                    walk(child, cluster_id, birth)
                else:
                    entry["rows"].append((lam, size))
                    entry["points"].update(tree[child][3])

    root_id = counter["next"]
    counter["next"] += 1
    walk(root, root_id, 0.0)
    for cid, entry in clusters.items():
        entry["stability"] = sum((lam - entry["birth"]) * size for lam, size in entry["rows"])
    return clusters, root_id


def reference_select(clusters, root_id):
    """Excess-of-mass: maximize total stability; the root is never chosen."""

    def best_under(cid):
        entry = clusters[cid]
        if not entry["children"]:
            return {cid}, entry["stability"]
        sets, total = zip(*(best_under(c) for c in entry["children"]))
        child_total = sum(total)
        child_set = set().union(*sets)
        if entry["stability"] >= child_total:
            return {cid}, entry["stability"]
        return child_set, child_total

    if not clusters[root_id]["children"]:
        return set()
    chosen = set()
    for child in clusters[root_id]["children"]:
        chosen |= best_under(child)[0]
    return chosen


def reference_all_points(clusters, cid):
    entry = clusters[cid]
    points = set(entry["points"])
    for child in entry["children"]:
        points |= reference_all_points(clusters, child)
    return points


def reference_hdbscan(points, min_cluster_size, min_samples):
    """Full naive pipeline; returns per-point labels with -1 outliers."""
    points = [list(map(float, p)) for p in np.asarray(points)]
    n = len(points)
    if n < 2 or min_cluster_size > n or min_samples > n:
        return np.full(n, -1, dtype=int)
    cores = reference_core_distances(points, min_samples)
    m = reference_mutual_reachability(points, cores)
    edges = reference_prim(m)
    tree, root = reference_single_linkage(edges, n)
    clusters, root_id = reference_condense(tree, root, min_cluster_size)
    selected = reference_select(clusters, root_id)
    labels = np.full(n, -1, dtype=int)
    member_sets = []
    for cid in selected:
        member_sets.append(sorted(reference_all_points(clusters, cid)))
    member_sets.sort(key=lambda rows: rows[0])
    for label, rows in enumerate(member_sets):
        labels[rows] = label
    return labels
