"""Per-prediction Shapley attributions for the boosted forest.

`tree_shap` is the polynomial-time path-dependent algorithm using training
leaf covers as the background distribution; `exact_shapley_bruteforce` is the
exponential-time power-set oracle used to test it. Attributions are on the
margin (log-odds) scale, where additivity is exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import factorial
from typing import Sequence

import numpy as np

from .features import FeatureMatrix, FeatureSchema
from .gbdt import Forest, TreeNode, predict_margin, route_row


@dataclass
class Attribution:
    change_id: str
    base_value: float
    values: np.ndarray  # per-feature shap values, margin scale
    feature_names: list[str]
    model_version: str = ""

    def to_dict(self, groups: dict[str, str] | None = None) -> dict:
        groups = groups or {}
        return {
            "change_id": self.change_id,
            "base_value": self.base_value,
            "contributions": [
                {
                    "feature": name,
                    "value": float(v),
                    "group": groups.get(name),
                }
                for name, v in zip(self.feature_names, self.values)
            ],
            "model_version": self.model_version,
        }


@dataclass
class GroupedValue:
    name: str
    value: float
    group: str | None = None
    component: str | None = None


@dataclass
class GroupedAttribution:
    change_id: str
    base_value: float
    items: list[GroupedValue]
    model_version: str = ""

    def to_dict(self) -> dict:
        return {
            "change_id": self.change_id,
            "base_value": self.base_value,
            "contributions": [
                {
                    "feature": it.name,
                    "value": it.value,
                    "group": it.group,
                    "component": it.component,
                }
                for it in self.items
            ],
            "model_version": self.model_version,
        }


@dataclass
class ImportanceReport:
    entries: list[tuple[str, float]]  # (feature or group, mean |shap|), descending
    k: int = 15

    def to_dict(self) -> dict:
        return {"top_k": self.k, "entries": [{"feature": f, "importance": v} for f, v in self.entries]}


class CoverError(Exception):
    """Forest lacks the cover statistics path-dependent SHAP requires."""


def _check_covers(node: TreeNode) -> None:
    if node.cover is None or node.cover <= 0:
        raise CoverError("node without positive cover")
    if not node.is_leaf:
        _check_covers(node.left)
        _check_covers(node.right)


def expected_margin(forest: Forest) -> float:
    """Cover-weighted mean training margin."""

    def mean(node: TreeNode) -> float:
        if node.is_leaf:
            return node.value
        wl = node.left.cover / node.cover
        wr = node.right.cover / node.cover
        return wl * mean(node.left) + wr * mean(node.right)

    return forest.base_score + sum(mean(t) for t in forest.trees)


# ---------------------------------------------------------------------------
# Path-dependent TreeSHAP (per-tree recursion over unique feature paths)

# Path element layout: [feature_index, zero_fraction, one_fraction, pweight]
_D, _Z, _O, _W = 0, 1, 2, 3


def _extend(path, pz, po, pi):
    path.append([pi, pz, po, 1.0 if not path else 0.0])
    l = len(path) - 1
    for i in range(l - 1, -1, -1):
        path[i + 1][_W] += po * path[i][_W] * (i + 1) / (l + 1)
        path[i][_W] = pz * path[i][_W] * (l - i) / (l + 1)


def _unwind(path, index):
    l = len(path) - 1
    one = path[index][_O]
    zero = path[index][_Z]
    nxt = path[l][_W]
    for i in range(l - 1, -1, -1):
        if one != 0:
            tmp = path[i][_W]
            path[i][_W] = nxt * (l + 1) / ((i + 1) * one)
            nxt = tmp - path[i][_W] * zero * (l - i) / (l + 1)
        else:
            path[i][_W] = path[i][_W] * (l + 1) / (zero * (l - i))
    for i in range(index, l):
        path[i][_D] = path[i + 1][_D]
        path[i][_Z] = path[i + 1][_Z]
        path[i][_O] = path[i + 1][_O]
    path.pop()


def _unwound_sum(path, index):
    l = len(path) - 1
    one = path[index][_O]
    zero = path[index][_Z]
    total = 0.0
    if one != 0:
        nxt = path[l][_W]
        for i in range(l - 1, -1, -1):
            tmp = nxt / ((i + 1) * one)
            total += tmp
            nxt = path[i][_W] - tmp * zero * (l - i)
    else:
        for i in range(l - 1, -1, -1):
            total += path[i][_W] / (zero * (l - i))
    return total * (l + 1)


def _shap_tree(root: TreeNode, numeric_row, cat_row, n_numeric, phi):
    def recurse(node: TreeNode, path, pz, po, pi):
        _extend(path, pz, po, pi)
        if node.is_leaf:
            for i in range(1, len(path)):
                w = _unwound_sum(path, i)
                el = path[i]
                phi[el[_D]] += w * (el[_O] - el[_Z]) * node.value
            return
        hot = route_row(node, numeric_row, cat_row, n_numeric)
        cold = node.right if hot is node.left else node.left
        iz, io = 1.0, 1.0
        k = next((i for i, el in enumerate(path) if el[_D] == node.feature), None)
        if k is not None:
            iz, io = path[k][_Z], path[k][_O]
            _unwind(path, k)
        recurse(hot, [el[:] for el in path], iz * hot.cover / node.cover, io, node.feature)
        recurse(cold, [el[:] for el in path], iz * cold.cover / node.cover, 0.0, node.feature)

    recurse(root, [], 1.0, 1.0, -1)


def tree_shap(
    forest: Forest,
    matrix: FeatureMatrix,
    row: int,
    model_version: str = "",
    feature_names: list[str] | None = None,
) -> Attribution:
    """Exact path-dependent Shapley values for one row, additive over trees."""
    for tree in forest.trees:
        _check_covers(tree)
    n_numeric = matrix.numeric.shape[1]
    n_features = forest.n_features
    numeric_row = matrix.numeric[row]
    cat_row = matrix.categorical[row]
    phi = np.zeros(n_features)
    for tree in forest.trees:
        if tree.is_leaf:
            continue
        _shap_tree(tree, numeric_row, cat_row, n_numeric, phi)
    names = feature_names or [f"f{i}" for i in range(n_features)]
    return Attribution(
        change_id=matrix.row_ids[row],
        base_value=expected_margin(forest),
        values=phi,
        feature_names=names,
        model_version=model_version,
    )


# ---------------------------------------------------------------------------
# Brute-force oracle: Shapley by power-set enumeration with cover-weighted
# conditional expectation for features outside the coalition.

MAX_BRUTEFORCE_FEATURES = 12


def _tree_features(node: TreeNode, acc: set[int]) -> set[int]:
    if not node.is_leaf:
        acc.add(node.feature)
        _tree_features(node.left, acc)
        _tree_features(node.right, acc)
    return acc


def _tree_value(node: TreeNode, mask: int, numeric_row, cat_row, n_numeric) -> float:
    if node.is_leaf:
        return node.value
    if mask >> node.feature & 1:
        return _tree_value(
            route_row(node, numeric_row, cat_row, n_numeric),
            mask,
            numeric_row,
            cat_row,
            n_numeric,
        )
    wl = node.left.cover / node.cover
    wr = node.right.cover / node.cover
    return wl * _tree_value(node.left, mask, numeric_row, cat_row, n_numeric) + wr * _tree_value(
        node.right, mask, numeric_row, cat_row, n_numeric
    )


def exact_shapley_bruteforce(
    forest: Forest,
    matrix: FeatureMatrix,
    row: int,
    model_version: str = "",
    feature_names: list[str] | None = None,
) -> Attribution:
    n = forest.n_features
    if n > MAX_BRUTEFORCE_FEATURES:
        raise ValueError(
            f"brute-force oracle refuses {n} features (> {MAX_BRUTEFORCE_FEATURES})"
        )
    for tree in forest.trees:
        _check_covers(tree)
    n_numeric = matrix.numeric.shape[1]
    numeric_row = matrix.numeric[row]
    cat_row = matrix.categorical[row]

    # v(S) per subset bitmask, memoized per tree on S restricted to the
    # features the tree actually splits on.
    v = np.full(1 << n, forest.base_score)
    for tree in forest.trees:
        tmask = 0
        for f in _tree_features(tree, set()):
            tmask |= 1 << f
        memo: dict[int, float] = {}
        for mask in range(1 << n):
            key = mask & tmask
            if key not in memo:
                memo[key] = _tree_value(tree, key, numeric_row, cat_row, n_numeric)
            v[mask] += memo[key]

    fact = [factorial(i) for i in range(n + 1)]
    phi = np.zeros(n)
    for i in range(n):
        for mask in range(1 << n):
            if mask >> i & 1:
                continue
            s = bin(mask).count("1")
            weight = fact[s] * fact[n - s - 1] / fact[n]
            phi[i] += weight * (v[mask | (1 << i)] - v[mask])

    names = feature_names or [f"f{i}" for i in range(n)]
    return Attribution(
        change_id=matrix.row_ids[row],
        base_value=float(v[0]),
        values=phi,
        feature_names=names,
        model_version=model_version,
    )


# ---------------------------------------------------------------------------
# Grouping and global importance


def group_collapse(
    attribution: Attribution,
    groups: dict[str, str],
    mode: str = "signed_max",
) -> GroupedAttribution:
    """Collapse each feature group to one representative signed value.

    mode="signed_max" takes the literal maximum of the signed values;
    mode="abs_max" takes the signed value of the largest magnitude.
    """
    if mode not in ("signed_max", "abs_max"):
        raise ValueError(f"unknown collapse mode: {mode}")
    items: list[GroupedValue] = []
    grouped: dict[str, list[tuple[str, float]]] = {}
    for name, val in zip(attribution.feature_names, attribution.values):
        group = groups.get(name)
        if group is None:
            items.append(GroupedValue(name=name, value=float(val)))
        else:
            grouped.setdefault(group, []).append((name, float(val)))
    for group, members in grouped.items():
        key = (lambda m: m[1]) if mode == "signed_max" else (lambda m: abs(m[1]))
        component, value = max(members, key=key)
        items.append(GroupedValue(name=group, value=value, group=group, component=component))
    return GroupedAttribution(
        change_id=attribution.change_id,
        base_value=attribution.base_value,
        items=items,
        model_version=attribution.model_version,
    )


def top_attributions(grouped: GroupedAttribution, k: int = 10) -> list[GroupedValue]:
    return sorted(grouped.items, key=lambda it: (-abs(it.value), it.name))[:k]


def global_importance(
    forest: Forest,
    matrix: FeatureMatrix,
    feature_names: list[str],
    groups: dict[str, str] | None = None,
    k: int = 15,
    max_rows: int | None = None,
    seed: int = 0,
) -> ImportanceReport:
    """Mean |shap| over an evaluation set, grouped components aggregated
    (summed per row) into their group before ranking; top k descending."""
    if matrix.n_rows == 0:
        raise ValueError("evaluation matrix is empty")
    groups = groups or {}
    rows = np.arange(matrix.n_rows)
    if max_rows is not None and matrix.n_rows > max_rows:
        rng = np.random.default_rng(seed)
        rows = np.sort(rng.choice(rows, size=max_rows, replace=False))

    display = [groups.get(name, name) for name in feature_names]
    order: list[str] = []
    seen = set()
    for name in display:
        if name not in seen:
            seen.add(name)
            order.append(name)
    col_of = {name: i for i, name in enumerate(order)}
    agg = np.zeros((len(rows), len(order)))
    for out_i, row in enumerate(rows):
        attr = tree_shap(forest, matrix, int(row), feature_names=feature_names)
        for name, val in zip(display, attr.values):
            agg[out_i, col_of[name]] += val
    importance = np.mean(np.abs(agg), axis=0)
    ranked = sorted(zip(order, importance), key=lambda e: (-e[1], e[0]))[:k]
    return ImportanceReport(entries=[(n, float(v)) for n, v in ranked], k=k)


def write_attribution_json(attr: GroupedAttribution, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(attr.to_dict(), fh)
