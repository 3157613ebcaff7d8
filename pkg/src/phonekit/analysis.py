"""Cross-lingual analysis: typology-vector coverage and rank correlation.

Coverage weights each training language's utterance count by its cosine
similarity to the test language (negatives clamped to zero, so more data
never lowers a score). Spearman's rho is computed from explicit average
ranks with a two-sided t-approximation p-value, plus an optional seeded
permutation mode for small samples.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DataError, UndefinedMetricError
from .metrics import ScoreReport, aggregate


@dataclass(frozen=True)
class LangVector:
    """A language's phonological typology vector (finite values only)."""

    lang: str
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise DataError(f"vector for {self.lang!r} must be 1-D and non-empty")
        if not np.isfinite(arr).all():
            raise DataError(
                f"vector for {self.lang!r} has non-finite entries; impute first"
            )
        object.__setattr__(self, "values", arr)


@dataclass(frozen=True)
class CoverageScore:
    lang: str
    weighted_count: float


def similarity(a: LangVector, b: LangVector) -> float:
    """Cosine similarity in [-1, 1]; any zero vector gives 0 by convention."""
    if a.values.shape != b.values.shape:
        raise DataError(
            f"vector length mismatch: {a.lang} has {a.values.size}, "
            f"{b.lang} has {b.values.size}"
        )
    na = float(np.linalg.norm(a.values))
    nb = float(np.linalg.norm(b.values))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a.values, b.values) / (na * nb))


def impute_missing(raw: dict[str, list]) -> dict[str, LangVector]:
    """Fill gaps (None/NaN cells) with the per-feature mean over languages.

    A feature missing everywhere becomes 0 for all languages.
    """
    if not raw:
        return {}
    langs = list(raw)
    width = len(next(iter(raw.values())))
    for lang, row in raw.items():
        if len(row) != width:
            raise DataError(f"vector for {lang!r} has length {len(row)}, expected {width}")
    grid = np.full((len(langs), width), np.nan)
    for i, lang in enumerate(langs):
        for j, cell in enumerate(raw[lang]):
            if cell is not None and not (isinstance(cell, float) and np.isnan(cell)):
                grid[i, j] = float(cell)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN columns
        means = np.nanmean(grid, axis=0)
    means = np.where(np.isnan(means), 0.0, means)
    filled = np.where(np.isnan(grid), means, grid)
    return {lang: LangVector(lang, filled[i]) for i, lang in enumerate(langs)}


def coverage_report(
    test_langs,
    train_counts: dict[str, float],
    train_vectors: dict[str, LangVector],
    exclude_self: bool = False,
) -> tuple[list[CoverageScore], list[str]]:
    """Coverage scores plus the training languages dropped for lack of a vector."""
    excluded = sorted(lang for lang in train_counts if lang not in train_vectors)
    for lang in excluded:
        warnings.warn(f"training language {lang!r} has no vector; excluded", stacklevel=2)
    usable = [
        (lang, float(count), train_vectors[lang])
        for lang, count in sorted(train_counts.items())
        if lang in train_vectors
    ]
    scores = []
    for test in test_langs:
        total = 0.0
        for lang, count, vec in usable:
            if exclude_self and lang == test.lang:
                continue
            total += max(0.0, similarity(test, vec)) * count
        scores.append(CoverageScore(test.lang, total))
    return scores, excluded


def coverage(
    test_langs,
    train_counts: dict[str, float],
    train_vectors: dict[str, LangVector],
    exclude_self: bool = False,
) -> list[CoverageScore]:
    """Similarity-weighted training utterance counts per test language."""
    return coverage_report(test_langs, train_counts, train_vectors, exclude_self)[0]


def average_ranks(values) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    arr = np.asarray(values, dtype=np.float64)
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(arr.size)
    i = 0
    while i < arr.size:
        j = i
        while j + 1 < arr.size and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(
    x,
    y,
    method: str = "t",
    permutations: int = 10_000,
    seed: int = 0,
) -> tuple[float, float]:
    """Rank correlation with a two-sided p-value.

    ``method="t"`` uses the usual t-approximation with n-2 degrees of
    freedom; ``method="permutation"`` shuffles y with a seeded generator and
    reports (1 + #more-extreme) / (1 + permutations).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("spearman needs two equal-length 1-D inputs")
    n = x.size
    if n < 3:
        raise DataError(f"spearman needs at least 3 points, got {n}")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedMetricError("spearman undefined for a constant input")
    rx = average_ranks(x)
    ry = average_ranks(y)
    rho = float(np.corrcoef(rx, ry)[0, 1])

    if method == "t":
        if abs(rho) >= 1.0:
            return rho, 0.0
        t = rho * np.sqrt((n - 2) / (1.0 - rho * rho))
        p = float(2.0 * stats.t.sf(abs(t), df=n - 2))
        return rho, min(1.0, p)
    if method == "permutation":
        rng = np.random.default_rng(seed)
        rx_c = rx - rx.mean()
        ry_c = ry - ry.mean()
        denom = np.sqrt((rx_c**2).sum() * (ry_c**2).sum())
        hits = 0
        for _ in range(permutations):
            perm = rng.permutation(ry_c)
            r = float((rx_c * perm).sum() / denom)
            if abs(r) >= abs(rho) - 1e-12:
                hits += 1
        return rho, (1 + hits) / (1 + permutations)
    raise DataError(f"unknown p-value method {method!r}")


def family_breakdown(report: ScoreReport, family_map: dict[str, str]) -> dict[str, float | None]:
    """Micro-averaged PFER per language family; unmapped languages pool under "UNK"."""
    groups = aggregate(report.per_utterance, "family", family_map)
    return {family: g.pfer for family, g in groups.items()}
