"""Statistical kernel: tests, effect sizes and multiple-comparison corrections.

Test statistics are computed here from first principles with numpy; only the
reference distributions' tail integrals come from :mod:`scipy.special`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special


class StatError(ValueError):
    """Input is outside the domain of a statistic."""


@dataclass(frozen=True)
class Sample:
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise StatError(f"sample {self.label!r} contains non-finite values")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size


def _arr(x) -> np.ndarray:
    if isinstance(x, Sample):
        return x.values
    v = np.asarray(x, dtype=float).ravel()
    if not np.all(np.isfinite(v)):
        raise StatError("non-finite values")
    return v


def _label(x, default: str) -> str:
    return x.label if isinstance(x, Sample) and x.label else default


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str
    df: tuple[float, ...] = ()
    sizes: tuple[int, ...] = ()
    flags: tuple[str, ...] = ()
    extra: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise StatError(f"p-value {self.p_value} outside [0, 1]")
        if not math.isfinite(self.statistic):
            raise StatError(f"non-finite {self.method} statistic")


@dataclass(frozen=True)
class EffectSize:
    kind: str
    value: float

    def __post_init__(self):
        if self.kind in ("CliffsDelta", "PearsonR") and not -1.0 <= self.value <= 1.0:
            raise StatError(f"{self.kind} {self.value} outside [-1, 1]")

    def __float__(self) -> float:
        return self.value


# -- distribution tails ----------------------------------------------------

def norm_sf(z: float) -> float:
    return float(special.ndtr(-z))


def p_from_z(z: float) -> float:
    """Upper-tail standard normal probability."""
    if not math.isfinite(z):
        raise StatError("z must be finite")
    return 0.5 * float(special.erfc(z / math.sqrt(2.0)))


def chi2_sf(x: float, df: float) -> float:
    return float(special.chdtrc(df, x))


def chi2_cdf(x: float, df: float) -> float:
    return float(special.chdtr(df, x))


def f_sf(x: float, dfn: float, dfd: float) -> float:
    return float(special.fdtrc(dfn, dfd, x))


def f_cdf(x: float, dfn: float, dfd: float) -> float:
    return float(special.fdtr(dfn, dfd, x))


def t_sf(x: float, df: float) -> float:
    return float(special.stdtr(df, -x))


def _two_sided(p_lower: float, p_upper: float) -> float:
    return min(1.0, 2.0 * min(p_lower, p_upper))


# -- descriptives ----------------------------------------------------------

@dataclass(frozen=True)
class Descriptive:
    n: int
    mean: float
    sd: float | None
    median: float


def descriptive(s, need_sd: bool = False) -> Descriptive:
    v = _arr(s)
    if v.size == 0:
        raise StatError("empty sample")
    sd = float(np.std(v, ddof=1)) if v.size >= 2 else None
    if need_sd and sd is None:
        raise StatError("sd requires n >= 2")
    return Descriptive(int(v.size), float(v.mean()), sd, float(np.median(v)))


def sample_sd(s) -> float:
    v = _arr(s)
    if v.size < 2:
        raise StatError("sd requires n >= 2")
    return float(np.std(v, ddof=1))


# -- variance tests --------------------------------------------------------

def levene_test(groups: Sequence, center: str = "Mean") -> TestResult:
    """Levene's W on absolute deviations from each group's mean (or median)."""
    arrays = [_arr(g) for g in groups]
    if len(arrays) < 2:
        raise StatError("Levene's test needs at least two groups")
    if any(a.size < 2 for a in arrays):
        raise StatError("each group needs n >= 2")
    if center not in ("Mean", "Median"):
        raise StatError(f"unknown center {center!r}")
    loc = np.mean if center == "Mean" else np.median
    devs = [np.abs(a - loc(a)) for a in arrays]
    k = len(devs)
    n = np.array([d.size for d in devs])
    big_n = n.sum()
    means = np.array([d.mean() for d in devs])
    grand = np.concatenate(devs).mean()
    between = float(np.sum(n * (means - grand) ** 2))
    within = float(sum(np.sum((d - m) ** 2) for d, m in zip(devs, means)))
    dfn, dfd = k - 1, big_n - k
    tol = 1e-12 * max(1.0, float(np.concatenate(devs).max()) ** 2)
    if within <= tol:
        if between <= tol:
            return TestResult(0.0, 1.0, f"levene-{center.lower()}", (dfn, dfd), tuple(n), ("degenerate",))
        raise StatError("zero within-group dispersion of deviations; W is unbounded")
    w = (dfd / dfn) * between / within
    return TestResult(w, f_sf(w, dfn, dfd), f"levene-{center.lower()}", (dfn, dfd), tuple(int(x) for x in n))


def chisq_variance_test(s, sigma0: float) -> TestResult:
    """Two-sided test of a sample variance against a known population sigma."""
    v = _arr(s)
    if sigma0 <= 0:
        raise StatError("sigma0 must be positive")
    if v.size < 2:
        raise StatError("variance test needs n >= 2")
    df = v.size - 1
    stat = df * float(np.var(v, ddof=1)) / sigma0 ** 2
    p = _two_sided(chi2_cdf(stat, df), chi2_sf(stat, df))
    return TestResult(stat, p, "chisq-variance", (df,), (int(v.size),))


def f_ratio_test(s1, s2) -> TestResult:
    a, b = _arr(s1), _arr(s2)
    if a.size < 2 or b.size < 2:
        raise StatError("F-ratio test needs n >= 2 in both samples")
    va, vb = float(np.var(a, ddof=1)), float(np.var(b, ddof=1))
    if va == 0 or vb == 0:
        raise StatError("zero variance")
    if va >= vb:
        f, dfn, dfd = va / vb, a.size - 1, b.size - 1
    else:
        f, dfn, dfd = vb / va, b.size - 1, a.size - 1
    return TestResult(f, min(1.0, 2.0 * f_sf(f, dfn, dfd)), "f-ratio", (dfn, dfd), (int(a.size), int(b.size)))


# -- correlation and paired tests ------------------------------------------

def pearson_r(x, y) -> EffectSize:
    a, b = _arr(x), _arr(y)
    if a.size != b.size or a.size < 2:
        raise StatError("pearson_r needs equal lengths >= 2")
    da, db = a - a.mean(), b - b.mean()
    ss = math.sqrt(float(da @ da) * float(db @ db))
    if ss == 0:
        raise StatError("constant input")
    return EffectSize("PearsonR", float(np.clip((da @ db) / ss, -1.0, 1.0)))


def paired_t(x, y) -> TestResult:
    """Paired t on x - y; ``extra`` carries mean and mean absolute difference."""
    a, b = _arr(x), _arr(y)
    if a.size != b.size or a.size < 2:
        raise StatError("paired_t needs equal lengths >= 2")
    d = a - b
    mean = float(d.mean())
    mad = float(np.abs(d).mean())
    sd = float(np.std(d, ddof=1))
    df = d.size - 1
    extra = {"mean_diff": mean, "mean_abs_diff": mad, "sd_diff": sd}
    if sd == 0:
        if mean == 0:
            return TestResult(0.0, 1.0, "paired-t", (df,), (int(d.size),), ("degenerate",), extra)
        raise StatError("zero-variance differences with nonzero mean; t undefined")
    t = mean / (sd / math.sqrt(d.size))
    return TestResult(t, min(1.0, 2.0 * t_sf(abs(t), df)), "paired-t", (df,), (int(d.size),), (), extra)


def one_sample_t(s, mu0: float) -> TestResult:
    v = _arr(s)
    if v.size < 2:
        raise StatError("one-sample t needs n >= 2")
    sd = float(np.std(v, ddof=1))
    diff = float(v.mean()) - mu0
    df = v.size - 1
    if sd == 0:
        if diff == 0:
            return TestResult(0.0, 1.0, "one-sample-t", (df,), (int(v.size),), ("degenerate",))
        raise StatError("zero-variance sample differs from mu0; t undefined")
    t = diff / (sd / math.sqrt(v.size))
    return TestResult(t, min(1.0, 2.0 * t_sf(abs(t), df)), "one-sample-t", (df,), (int(v.size),))


def two_proportion_z(k1: int, n1: int, k2: int, n2: int) -> TestResult:
    if n1 <= 0 or n2 <= 0:
        raise StatError("both groups must be nonempty")
    p1, p2 = k1 / n1, k2 / n2
    pooled = (k1 + k2) / (n1 + n2)
    var = pooled * (1 - pooled) * (1 / n1 + 1 / n2)
    if var == 0:
        return TestResult(0.0, 1.0, "two-proportion-z", (), (n1, n2), ("degenerate",))
    z = (p1 - p2) / math.sqrt(var)
    return TestResult(z, min(1.0, 2.0 * norm_sf(abs(z))), "two-proportion-z", (), (n1, n2))


# -- rank tests ------------------------------------------------------------

def _rank_pool(arrays: Sequence[np.ndarray]):
    pooled = np.concatenate(arrays)
    ranks = _average_ranks(pooled)
    _, counts = np.unique(pooled, return_counts=True)
    ties = float(np.sum(counts.astype(float) ** 3 - counts))
    return pooled, ranks, ties


def _average_ranks(v: np.ndarray) -> np.ndarray:
    _, inverse, counts = np.unique(v, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    return (0.5 * (ends - counts + 1 + ends))[inverse.ravel()]


def kruskal_wallis(groups: Sequence) -> TestResult:
    """Kruskal-Wallis H with tie correction; chi-square reference with k-1 df."""
    arrays = [_arr(g) for g in groups]
    if len(arrays) < 2:
        raise StatError("Kruskal-Wallis needs at least two groups")
    if any(a.size == 0 for a in arrays):
        raise StatError("empty group")
    pooled, ranks, ties = _rank_pool(arrays)
    big_n = pooled.size
    if big_n < 3:
        raise StatError("Kruskal-Wallis needs N >= 3")
    sizes = tuple(int(a.size) for a in arrays)
    df = len(arrays) - 1
    correction = 1.0 - ties / (big_n ** 3 - big_n)
    if correction <= 0:
        return TestResult(0.0, 1.0, "kruskal-wallis", (df,), sizes, ("degenerate",))
    bounds = np.cumsum((0,) + sizes)
    rank_sums = np.array([ranks[lo:hi].sum() for lo, hi in zip(bounds[:-1], bounds[1:])])
    h = 12.0 / (big_n * (big_n + 1)) * np.sum(rank_sums ** 2 / np.array(sizes)) - 3.0 * (big_n + 1)
    h = max(float(h) / correction, 0.0)
    return TestResult(h, chi2_sf(h, df), "kruskal-wallis", (df,), sizes)


@dataclass(frozen=True)
class PairwiseResult:
    group_a: str
    group_b: str
    result: TestResult


def dunn_posthoc(groups: Sequence) -> list[PairwiseResult]:
    """Dunn's z for every pair of groups, using the pooled tie-corrected rank variance.

    P-values are raw two-sided; apply a correction at the call site.
    """
    arrays = [_arr(g) for g in groups]
    labels = [_label(g, str(i)) for i, g in enumerate(groups)]
    if len(arrays) < 2 or any(a.size == 0 for a in arrays):
        raise StatError("Dunn's test needs at least two nonempty groups")
    pooled, ranks, ties = _rank_pool(arrays)
    big_n = pooled.size
    if big_n < 3:
        raise StatError("Dunn's test needs N >= 3")
    sizes = [a.size for a in arrays]
    bounds = np.cumsum([0] + sizes)
    mean_ranks = [ranks[lo:hi].mean() for lo, hi in zip(bounds[:-1], bounds[1:])]
    base_var = big_n * (big_n + 1) / 12.0 - ties / (12.0 * (big_n - 1))
    out = []
    for i, j in itertools.combinations(range(len(arrays)), 2):
        var = base_var * (1.0 / sizes[i] + 1.0 / sizes[j])
        if var <= 0:
            res = TestResult(0.0, 1.0, "dunn", (), (sizes[i], sizes[j]), ("degenerate",))
        else:
            z = (mean_ranks[i] - mean_ranks[j]) / math.sqrt(var)
            res = TestResult(float(z), min(1.0, 2.0 * norm_sf(abs(z))), "dunn", (), (sizes[i], sizes[j]))
        out.append(PairwiseResult(labels[i], labels[j], res))
    return out


def cliffs_delta(x, y) -> EffectSize:
    """Cliff's delta: P(x > y) - P(x < y) over all cross pairs."""
    a, b = _arr(x), _arr(y)
    if a.size == 0 or b.size == 0:
        raise StatError("cliffs_delta needs nonempty samples")
    sb = np.sort(b)
    greater = np.searchsorted(sb, a, side="left").sum()
    less = (b.size - np.searchsorted(sb, a, side="right")).sum()
    return EffectSize("CliffsDelta", float(greater - less) / (a.size * b.size))


def cohens_d_one_sample(sample_mean: float, sample_sd: float, ref_mean: float) -> EffectSize:
    """Standardised distance of a group mean from a reference, scaled by the group's own SD."""
    if not sample_sd > 0:
        raise StatError("sample_sd must be positive")
    return EffectSize("CohensD", (sample_mean - ref_mean) / sample_sd)


# -- multiple comparisons --------------------------------------------------

def _check_p(pvals) -> np.ndarray:
    p = np.asarray(pvals, dtype=float).ravel()
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise StatError("p-values must lie in [0, 1]")
    return p


def bh_fdr(pvals, alpha: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """Benjamini-Hochberg step-up. Returns ``(reject, adjusted)`` in input order."""
    p = _check_p(pvals)
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=bool), np.zeros(0)
    order = np.argsort(p, kind="mergesort")
    ranked = p[order] * m / np.arange(1, m + 1)
    adj_sorted = np.minimum(1.0, np.minimum.accumulate(ranked[::-1])[::-1])
    adjusted = np.empty(m)
    adjusted[order] = adj_sorted
    passing = np.flatnonzero(p[order] <= alpha * np.arange(1, m + 1) / m)
    reject = np.zeros(m, dtype=bool)
    if passing.size:
        reject[order[: passing[-1] + 1]] = True
    return reject, adjusted


def bonferroni(pvals) -> np.ndarray:
    p = _check_p(pvals)
    return np.minimum(1.0, p * p.size)


# -- matrices --------------------------------------------------------------

def correlation_matrix(item_columns) -> np.ndarray:
    """Pairwise Pearson matrix of the given columns (list of samples or an n x k array)."""
    if isinstance(item_columns, np.ndarray) and item_columns.ndim == 2:
        data = item_columns.astype(float)
    else:
        cols = [_arr(c) for c in item_columns]
        if len({c.size for c in cols}) > 1:
            raise StatError("columns differ in length")
        data = np.column_stack(cols)
    if data.shape[0] < 2:
        raise StatError("correlation needs >= 2 rows")
    centred = data - data.mean(axis=0)
    ss = np.sqrt(np.sum(centred ** 2, axis=0))
    zero = np.flatnonzero(ss == 0)
    if zero.size:
        raise StatError(f"zero-variance item at index {int(zero[0])}")
    z = centred / ss
    r = np.clip(z.T @ z, -1.0, 1.0)
    r = 0.5 * (r + r.T)
    np.fill_diagonal(r, 1.0)
    return r


def frobenius_distance(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise StatError(f"dimension mismatch {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))
