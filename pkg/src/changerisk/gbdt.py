"""Histogram gradient-boosted trees for binary logistic loss.

One configurable engine with native missing-value routing, categorical
splits, and sample weights. Gradient/hessian/weight statistics are
quantized to a fixed power-of-two grid before histogram accumulation, so
every sum is exact integer arithmetic: training is bit-deterministic and
invariant to row order, and node covers satisfy exact parent/child
conservation (required by the Shapley explainer).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from .features import FeatureMatrix

# Power of two so dequantization is exact; sums of 2^15 rows stay < 2^53.
_SCALE = float(2**26)

LOG_ODDS_CLAMP = 15.0


class FingerprintMismatchError(Exception):
    """Matrix schema fingerprint differs from the forest's."""


@dataclass
class Hyperparams:
    n_trees: int = 500
    learning_rate: float = 0.05
    max_depth: int = 6
    max_leaves: int = 64
    min_weighted_samples_per_leaf: float = 1.0
    n_bins: int = 255
    l2_leaf_regularization: float = 1.0
    max_categories_per_split: int = 32
    seed: int = 0

    def validate(self) -> None:
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        if not (0 < self.learning_rate <= 1):
            raise ValueError("learning_rate must be in (0, 1]")
        if self.n_bins < 2:
            raise ValueError("n_bins must be >= 2")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        return cls(**d)


@dataclass
class TreeNode:
    cover: float
    value: float = 0.0
    is_leaf: bool = True
    feature: int = -1
    kind: str = ""
    threshold: float = math.nan  # numeric rule: x < threshold -> left
    categories: tuple[int, ...] = ()  # categorical rule: code in set -> left
    default_left: bool = True
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"leaf": self.value, "cover": self.cover}
        d = {
            "feature": self.feature,
            "kind": self.kind,
            "default_left": self.default_left,
            "cover": self.cover,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }
        if self.kind == "numeric":
            d["threshold"] = self.threshold if math.isfinite(self.threshold) else "inf"
        else:
            d["categories"] = list(self.categories)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TreeNode":
        if "leaf" in d:
            return cls(cover=d["cover"], value=d["leaf"])
        thr = d.get("threshold", math.nan)
        if thr == "inf":
            thr = math.inf
        return cls(
            cover=d["cover"],
            is_leaf=False,
            feature=d["feature"],
            kind=d["kind"],
            threshold=float(thr) if d["kind"] == "numeric" else math.nan,
            categories=tuple(d.get("categories", ())),
            default_left=d["default_left"],
            left=cls.from_dict(d["left"]),
            right=cls.from_dict(d["right"]),
        )


@dataclass
class Forest:
    base_score: float
    trees: list[TreeNode]
    feature_kinds: list[str]  # per global feature index: numeric|categorical
    schema_fingerprint: str
    hyperparams: Hyperparams
    degenerate: bool = False
    train_loss_curve: list[float] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.feature_kinds)

    def to_dict(self) -> dict:
        body = {
            "version": 1,
            "base_score": self.base_score,
            "feature_kinds": self.feature_kinds,
            "schema_fingerprint": self.schema_fingerprint,
            "hyperparams": self.hyperparams.to_dict(),
            "degenerate": self.degenerate,
            "trees": [t.to_dict() for t in self.trees],
            "train_loss_curve": self.train_loss_curve,
        }
        blob = json.dumps(body, sort_keys=True)
        body["content_hash"] = hashlib.sha256(blob.encode()).hexdigest()
        return body

    @classmethod
    def from_dict(cls, d: dict) -> "Forest":
        return cls(
            base_score=d["base_score"],
            trees=[TreeNode.from_dict(t) for t in d["trees"]],
            feature_kinds=list(d["feature_kinds"]),
            schema_fingerprint=d["schema_fingerprint"],
            hyperparams=Hyperparams.from_dict(d["hyperparams"]),
            degenerate=d.get("degenerate", False),
            train_loss_curve=list(d.get("train_loss_curve", [])),
        )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))


def _quantize(x: np.ndarray) -> np.ndarray:
    return np.rint(x * _SCALE)


def _feature_values(matrix: FeatureMatrix):
    """Unified view: numeric columns first, then categorical columns."""
    return matrix.numeric, matrix.categorical


class _Binner:
    """Quantile bins for numeric features, identity bins for categoricals.

    Bin 0 is reserved for missing on every feature; non-missing numeric bins
    are 1 + searchsorted(cuts, x, 'right'); categorical bins are 1 + code.
    """

    def __init__(self, matrix: FeatureMatrix, n_bins: int):
        numeric, categorical = _feature_values(matrix)
        n = numeric.shape[0]
        self.n_numeric = numeric.shape[1]
        self.n_categorical = categorical.shape[1]
        self.cuts: list[np.ndarray] = []
        cols = []
        for j in range(self.n_numeric):
            col = numeric[:, j]
            finite = col[~np.isnan(col)]
            if finite.size == 0:
                cuts = np.zeros(0)
            else:
                qs = np.linspace(0, 1, n_bins + 1)[1:-1]
                cuts = np.unique(np.quantile(finite, qs))
            self.cuts.append(cuts)
            b = np.searchsorted(cuts, col, side="right") + 1
            b[np.isnan(col)] = 0
            cols.append(b)
        for j in range(self.n_categorical):
            code = categorical[:, j].astype(np.int64)
            b = code + 1
            b[code < 0] = 0
            cols.append(b)
        self.F = self.n_numeric + self.n_categorical
        if cols:
            bins = np.stack(cols, axis=1).astype(np.int64)
        else:
            bins = np.zeros((n, 0), dtype=np.int64)
        self.B = int(bins.max()) + 2 if bins.size else 2
        self.bins = bins
        offsets = (np.arange(self.F, dtype=np.int64) * self.B)[None, :]
        self.flat = np.ascontiguousarray(bins + offsets)
        self.total_bins = self.F * self.B


def _build_hist(binner: _Binner, rows: np.ndarray, g, h, w):
    idx = binner.flat[rows].ravel()
    F = binner.F
    out = np.empty((3, binner.total_bins))
    for i, stat in enumerate((g, h, w)):
        rep = np.repeat(stat[rows], F)
        out[i] = np.bincount(idx, weights=rep, minlength=binner.total_bins)
    return out


def _gain_terms(G, H, lam_s):
    return np.where(H + lam_s > 0, G * G / (H + lam_s), 0.0)


class _TreeGrower:
    def __init__(self, binner: _Binner, hp: Hyperparams, kinds: list[str]):
        self.binner = binner
        self.hp = hp
        self.kinds = kinds
        self.lam_s = hp.l2_leaf_regularization * _SCALE
        self.min_w = hp.min_weighted_samples_per_leaf * _SCALE
        self.numeric_idx = np.asarray(
            [i for i, k in enumerate(kinds) if k == "numeric"], dtype=np.int64
        )
        self.cat_idx = [i for i, k in enumerate(kinds) if k == "categorical"]

    def grow(self, g, h, w, leaf_rows_out: list):
        rows = np.arange(len(g), dtype=np.int64)
        hist = _build_hist(self.binner, rows, g, h, w)
        self.n_leaves = 1
        root = self._node(rows, hist, g, h, w, depth=0, leaf_rows_out=leaf_rows_out)
        return root

    def _leaf(self, rows, G, H, W, leaf_rows_out):
        value = -G / (H + self.lam_s) * self.hp.learning_rate
        node = TreeNode(cover=W / _SCALE, value=float(value))
        leaf_rows_out.append((rows, node))
        return node

    def _node(self, rows, hist, g, h, w, depth, leaf_rows_out):
        B = self.binner.B
        Hg = hist[0].reshape(self.binner.F, B)
        Hh = hist[1].reshape(self.binner.F, B)
        Hw = hist[2].reshape(self.binner.F, B)
        # Each feature's bins sum to the node total; use feature 0's slice so
        # the total stays an exact integer sum.
        G, H, W = Hg[0].sum(), Hh[0].sum(), Hw[0].sum()

        if (
            depth >= self.hp.max_depth
            or self.n_leaves >= self.hp.max_leaves
            or len(rows) < 2
        ):
            return self._leaf(rows, G, H, W, leaf_rows_out)

        split = self._best_split(Hg, Hh, Hw, G, H, W)
        if split is None:
            return self._leaf(rows, G, H, W, leaf_rows_out)
        self.n_leaves += 1

        f, kind, left_bins, default_left, gain = split
        binf = self.binner.bins[rows, f]
        if kind == "numeric":
            bcut = left_bins  # last bin index routed left
            go_left = (binf != 0) & (binf <= bcut)
        else:
            go_left = np.isin(binf, left_bins)
        if default_left:
            go_left |= binf == 0

        rows_l = rows[go_left]
        rows_r = rows[~go_left]
        # Sibling subtraction: build the smaller child, derive the other.
        if len(rows_l) <= len(rows_r):
            hist_l = _build_hist(self.binner, rows_l, g, h, w)
            hist_r = hist - hist_l
        else:
            hist_r = _build_hist(self.binner, rows_r, g, h, w)
            hist_l = hist - hist_r

        node = TreeNode(cover=W / _SCALE, is_leaf=False, feature=int(f), kind=kind)
        node.default_left = bool(default_left)
        if kind == "numeric":
            cuts = self.binner.cuts[f]
            node.threshold = float(cuts[bcut - 1]) if bcut - 1 < len(cuts) else math.inf
        else:
            node.categories = tuple(sorted(int(b - 1) for b in left_bins))
        node.left = self._node(rows_l, hist_l, g, h, w, depth + 1, leaf_rows_out)
        node.right = self._node(rows_r, hist_r, g, h, w, depth + 1, leaf_rows_out)
        return node

    def _best_split(self, Hg, Hh, Hw, G, H, W):
        parent = _gain_terms(np.asarray(G), np.asarray(H), self.lam_s)
        best_gain = np.full(self.binner.F, -np.inf)
        best_info: list = [None] * self.binner.F

        if self.numeric_idx.size:
            self._numeric_scan(Hg, Hh, Hw, G, H, W, parent, best_gain, best_info)
        for f in self.cat_idx:
            self._categorical_scan(f, Hg[f], Hh[f], Hw[f], G, H, W, parent, best_gain, best_info)

        f = int(np.argmax(best_gain))
        if not np.isfinite(best_gain[f]) or best_gain[f] <= 1e-6:
            return None
        kind, left_bins, default_left = best_info[f]
        return f, kind, left_bins, default_left, best_gain[f]

    def _numeric_scan(self, Hg, Hh, Hw, G, H, W, parent, best_gain, best_info):
        idx = self.numeric_idx
        g0, h0, w0 = Hg[idx, 0], Hh[idx, 0], Hw[idx, 0]
        cg = np.cumsum(Hg[idx, 1:], axis=1)[:, :-1]
        ch = np.cumsum(Hh[idx, 1:], axis=1)[:, :-1]
        cw = np.cumsum(Hw[idx, 1:], axis=1)[:, :-1]
        if cg.shape[1] == 0:
            return

        gains = []
        for miss_left in (True, False):
            GL = cg + (g0[:, None] if miss_left else 0.0)
            HL = ch + (h0[:, None] if miss_left else 0.0)
            WL = cw + (w0[:, None] if miss_left else 0.0)
            GR, HR, WR = G - GL, H - HL, W - WL
            gain = _gain_terms(GL, HL, self.lam_s) + _gain_terms(GR, HR, self.lam_s) - parent
            gain[(WL < self.min_w) | (WR < self.min_w)] = -np.inf
            gains.append(gain)
        stacked = np.concatenate(gains, axis=1)  # (Fn, 2*(B-2)); miss-left first
        pos = np.argmax(stacked, axis=1)
        vals = stacked[np.arange(len(idx)), pos]
        ncand = cg.shape[1]
        for i, f in enumerate(idx):
            if vals[i] > best_gain[f]:
                miss_left = pos[i] < ncand
                bcut = int(pos[i] % ncand) + 1
                best_gain[f] = vals[i]
                best_info[f] = ("numeric", bcut, miss_left)

    def _categorical_scan(self, f, gf, hf, wf, G, H, W, parent, best_gain, best_info):
        g0, h0, w0 = gf[0], hf[0], wf[0]
        cats = np.nonzero(wf[1:] > 0)[0] + 1  # bin indices of present categories
        if cats.size < 2:
            return
        score = gf[cats] / (hf[cats] + self.lam_s)
        order = cats[np.argsort(score, kind="stable")]
        max_left = min(self.hp.max_categories_per_split, cats.size - 1)
        GL = np.cumsum(gf[order])[:max_left]
        HL = np.cumsum(hf[order])[:max_left]
        WL = np.cumsum(wf[order])[:max_left]
        for miss_left in (True, False):
            gl = GL + (g0 if miss_left else 0.0)
            hl = HL + (h0 if miss_left else 0.0)
            wl = WL + (w0 if miss_left else 0.0)
            gr, hr, wr = G - gl, H - hl, W - wl
            gain = _gain_terms(gl, hl, self.lam_s) + _gain_terms(gr, hr, self.lam_s) - parent
            gain[(wl < self.min_w) | (wr < self.min_w)] = -np.inf
            j = int(np.argmax(gain))
            if gain[j] > best_gain[f]:
                best_gain[f] = gain[j]
                best_info[f] = ("categorical", order[: j + 1].tolist(), miss_left)


def weighted_log_loss(y, p, w) -> float:
    eps = 1e-12
    p = np.clip(p, eps, 1 - eps)
    # math.fsum is exactly rounded, so the loss is independent of row order.
    terms = w * -(y * np.log(p) + (1 - y) * np.log(1 - p))
    return math.fsum(terms) / math.fsum(w)


def fit(
    matrix: FeatureMatrix,
    labels: Sequence[int] | np.ndarray,
    sample_weights: Sequence[float] | np.ndarray | None,
    hp: Hyperparams,
) -> Forest:
    """Train a boosted forest on logistic loss.

    Sample weights are normalized to mean 1 before training, so uniformly
    rescaling all weights leaves the fitted forest unchanged.
    """
    hp.validate()
    y = np.asarray(labels, dtype=np.float64)
    if not set(np.unique(y)) <= {0.0, 1.0}:
        raise ValueError("labels must be binary")
    n = len(y)
    w = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError("sample weights must be positive")
    wsum = math.fsum(w)
    if wsum == 0:
        raise ValueError("weight sum is zero")
    w = w / (wsum / n)

    kinds = ["numeric"] * matrix.numeric.shape[1] + ["categorical"] * matrix.categorical.shape[1]
    p0 = math.fsum(w * y) / math.fsum(w)
    if p0 <= 0.0 or p0 >= 1.0:
        base = LOG_ODDS_CLAMP if p0 >= 1.0 else -LOG_ODDS_CLAMP
        return Forest(
            base_score=base,
            trees=[],
            feature_kinds=kinds,
            schema_fingerprint=matrix.schema_fingerprint,
            hyperparams=hp,
            degenerate=True,
        )
    base = float(np.clip(math.log(p0 / (1 - p0)), -LOG_ODDS_CLAMP, LOG_ODDS_CLAMP))

    binner = _Binner(matrix, hp.n_bins)
    grower = _TreeGrower(binner, hp, kinds)
    margins = np.full(n, base)
    trees: list[TreeNode] = []
    loss_curve = [weighted_log_loss(y, _sigmoid(margins), w)]
    wq = _quantize(w)
    for _ in range(hp.n_trees):
        p = _sigmoid(margins)
        g = _quantize((p - y) * w)
        h = _quantize(p * (1 - p) * w)
        leaf_rows: list = []
        root = grower.grow(g, h, wq, leaf_rows)
        for rows, node in leaf_rows:
            margins[rows] += node.value
        trees.append(root)
        loss_curve.append(weighted_log_loss(y, _sigmoid(margins), w))

    return Forest(
        base_score=base,
        trees=trees,
        feature_kinds=kinds,
        schema_fingerprint=matrix.schema_fingerprint,
        hyperparams=hp,
        train_loss_curve=loss_curve,
    )


# ---------------------------------------------------------------------------
# Prediction


def _route_mask(node: TreeNode, numeric, categorical, n_numeric: int, rows):
    f = node.feature
    if node.kind == "numeric":
        vals = numeric[rows, f]
        missing = np.isnan(vals)
        left = vals < node.threshold
    else:
        codes = categorical[rows, f - n_numeric]
        missing = codes < 0
        left = np.isin(codes, node.categories)
    left = np.where(missing, node.default_left, left)
    return left.astype(bool)


def predict_margin(forest: Forest, matrix: FeatureMatrix) -> np.ndarray:
    """Log-odds margins: base score plus every tree's routed leaf value."""
    if matrix.schema_fingerprint != forest.schema_fingerprint:
        raise FingerprintMismatchError(
            "feature matrix schema fingerprint does not match the model"
        )
    numeric, categorical = _feature_values(matrix)
    n_numeric = numeric.shape[1]
    n = matrix.n_rows
    out = np.full(n, forest.base_score)

    def walk(node: TreeNode, rows: np.ndarray):
        if node.is_leaf:
            out[rows] += node.value
            return
        left = _route_mask(node, numeric, categorical, n_numeric, rows)
        walk(node.left, rows[left])
        walk(node.right, rows[~left])

    all_rows = np.arange(n, dtype=np.int64)
    for tree in forest.trees:
        walk(tree, all_rows)
    return out


def predict_proba(forest: Forest, matrix: FeatureMatrix) -> np.ndarray:
    return _sigmoid(predict_margin(forest, matrix))


def predict_score(forest: Forest, matrix: FeatureMatrix) -> np.ndarray:
    """Integer 0-100 risk scores; round-half-up."""
    return np.floor(100.0 * predict_proba(forest, matrix) + 0.5).astype(int)


def route_row(node: TreeNode, numeric_row: np.ndarray, categorical_row: np.ndarray, n_numeric: int) -> TreeNode:
    """Child the row is routed to; missing values follow the default branch."""
    if node.kind == "numeric":
        val = numeric_row[node.feature]
        if np.isnan(val):
            return node.left if node.default_left else node.right
        return node.left if val < node.threshold else node.right
    code = int(categorical_row[node.feature - n_numeric])
    if code < 0:
        return node.left if node.default_left else node.right
    return node.left if code in node.categories else node.right


# ---------------------------------------------------------------------------
# Model artifact


@dataclass
class TrainedModel:
    forest: Forest
    schema_fingerprint: str
    threshold: int
    training_range: tuple[str, str]
    hyperparams: Hyperparams
    model_version: str

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "model_version": self.model_version,
            "schema_fingerprint": self.schema_fingerprint,
            "threshold": self.threshold,
            "training_range": list(self.training_range),
            "hyperparams": self.hyperparams.to_dict(),
            "forest": self.forest.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedModel":
        return cls(
            forest=Forest.from_dict(d["forest"]),
            schema_fingerprint=d["schema_fingerprint"],
            threshold=int(d["threshold"]),
            training_range=tuple(d["training_range"]),
            hyperparams=Hyperparams.from_dict(d["hyperparams"]),
            model_version=d["model_version"],
        )

    @classmethod
    def create(cls, forest: Forest, threshold: int, training_range: tuple[str, str]) -> "TrainedModel":
        version = hashlib.sha256(
            json.dumps(forest.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16]
        return cls(
            forest=forest,
            schema_fingerprint=forest.schema_fingerprint,
            threshold=threshold,
            training_range=training_range,
            hyperparams=forest.hyperparams,
            model_version=version,
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "TrainedModel":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
