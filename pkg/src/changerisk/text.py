"""Latent-semantic text features: token counts projected by truncated SVD.

Tokenization is lowercase word tokens of length >= 2, stopwords removed,
vocabulary restricted to document frequency >= min_df. The rank-k truncated
SVD is fitted by fixed-seed subspace iteration so fitting is bit-deterministic;
the sign convention makes the largest-magnitude loading of each component
positive.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

_TOKEN_RE = re.compile(r"[a-z0-9]{2,}")


def default_stopwords() -> frozenset[str]:
    raw = resources.files("changerisk.data").joinpath("stopwords_en.txt").read_text()
    return frozenset(w.strip() for w in raw.splitlines() if w.strip())


def tokenize(text: str, stopwords: frozenset[str] = frozenset()) -> list[str]:
    return [t for t in _TOKEN_RE.findall(text.lower()) if t not in stopwords]


@dataclass
class TextProjector:
    """Fitted count-vectorizer + rank-k projection for one text field."""

    vocabulary: list[str]
    components: np.ndarray  # (k, |vocab|) right singular vectors
    singular_values: np.ndarray
    stopwords: frozenset[str]
    min_df: int
    k: int

    def counts(self, texts: Sequence[str]) -> sparse.csr_matrix:
        index = {tok: j for j, tok in enumerate(self.vocabulary)}
        indptr = [0]
        indices: list[int] = []
        data: list[int] = []
        for text in texts:
            row: dict[int, int] = {}
            for tok in tokenize(text, self.stopwords):
                j = index.get(tok)
                if j is not None:
                    row[j] = row.get(j, 0) + 1
            for j in sorted(row):
                indices.append(j)
                data.append(row[j])
            indptr.append(len(indices))
        return sparse.csr_matrix(
            (np.asarray(data, dtype=np.float64), indices, indptr),
            shape=(len(texts), len(self.vocabulary)),
        )

    def transform(self, texts: Sequence[str]) -> np.ndarray:
        if not self.vocabulary or self.components.size == 0:
            return np.zeros((len(texts), self.k))
        proj = self.counts(texts) @ self.components.T
        if proj.shape[1] < self.k:  # rank was clamped; pad to the declared width
            proj = np.hstack([proj, np.zeros((proj.shape[0], self.k - proj.shape[1]))])
        return np.asarray(proj)

    def to_dict(self) -> dict:
        return {
            "vocabulary": self.vocabulary,
            "components": self.components.tolist(),
            "singular_values": self.singular_values.tolist(),
            "stopwords": sorted(self.stopwords),
            "min_df": self.min_df,
            "k": self.k,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TextProjector":
        return cls(
            vocabulary=list(d["vocabulary"]),
            components=np.asarray(d["components"], dtype=np.float64).reshape(
                len(d["singular_values"]), len(d["vocabulary"])
            )
            if d["vocabulary"]
            else np.zeros((0, 0)),
            singular_values=np.asarray(d["singular_values"], dtype=np.float64),
            stopwords=frozenset(d["stopwords"]),
            min_df=int(d["min_df"]),
            k=int(d["k"]),
        )


def _subspace_svd(
    counts: sparse.csr_matrix, k: int, seed: int, n_iter: int = 30
) -> tuple[np.ndarray, np.ndarray]:
    """Top-k right singular vectors of `counts` via seeded subspace iteration."""
    n_docs, n_terms = counts.shape
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n_terms, k)))
    for _ in range(n_iter):
        z = counts @ q
        w = counts.T @ z
        q, _ = np.linalg.qr(w)
    # Rayleigh-Ritz refinement on the converged subspace.
    b = counts @ q
    _, svals, wt = np.linalg.svd(np.asarray(b), full_matrices=False)
    v = (q @ wt.T).T  # (k, n_terms)
    # Sign convention: largest-magnitude loading per component is positive.
    for i in range(v.shape[0]):
        j = int(np.argmax(np.abs(v[i])))
        if v[i, j] < 0:
            v[i] = -v[i]
    return v, svals


def fit_text_projector(
    texts: Sequence[str],
    k: int,
    stopwords: frozenset[str] | None = None,
    min_df: int = 3,
    seed: int = 0,
) -> TextProjector:
    """Fit the count/SVD pipeline for one text field on training texts only."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(texts) == 0:
        raise ValueError("corpus is empty")
    stopwords = default_stopwords() if stopwords is None else stopwords

    df: dict[str, int] = {}
    tokenized = []
    for text in texts:
        toks = tokenize(text, stopwords)
        tokenized.append(toks)
        for tok in set(toks):
            df[tok] = df.get(tok, 0) + 1
    vocab = sorted(tok for tok, n in df.items() if n >= min_df)

    proj = TextProjector(
        vocabulary=vocab,
        components=np.zeros((0, len(vocab))),
        singular_values=np.zeros(0),
        stopwords=stopwords,
        min_df=min_df,
        k=k,
    )
    if not vocab:
        return proj  # all-empty field: projects to the k-dim zero vector

    counts = proj.counts(texts)
    if counts.nnz == 0:
        return proj
    rank_cap = min(len(texts), len(vocab))
    k_eff = min(k, rank_cap)
    if k_eff < k:
        warnings.warn(
            f"requested {k} components but achievable rank is {rank_cap}; clamped",
            stacklevel=2,
        )
    components, svals = _subspace_svd(counts, k_eff, seed)
    # Drop numerically-zero trailing components (rank deficiency).
    keep = svals > svals[0] * 1e-12 if svals.size else np.zeros(0, dtype=bool)
    proj.components = components[keep]
    proj.singular_values = svals[keep]
    return proj
