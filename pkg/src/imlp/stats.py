"""Cross-model comparison: Pareto fronts and rank-based significance tests."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import chi2, rankdata

from .errors import MissingCellError, StatsPreconditionError

EXACT_WILCOXON_MAX_N = 25

# Two-tailed Nemenyi critical values q_alpha (studentized range statistic at
# infinite degrees of freedom divided by sqrt(2)). k = 2..10 are the values
# tabulated by Demsar (JMLR 2006, Table 5); k = 11..20 extend that table
# from the same distribution, rounded to three decimals.
NEMENYI_Q = {
    0.05: {
        2: 1.960, 3: 2.343, 4: 2.569, 5: 2.728, 6: 2.850, 7: 2.949, 8: 3.031, 9: 3.102, 10: 3.164,
        11: 3.219, 12: 3.268, 13: 3.313, 14: 3.354, 15: 3.391, 16: 3.426, 17: 3.458, 18: 3.489,
        19: 3.517, 20: 3.544,
    },
    0.10: {
        2: 1.645, 3: 2.052, 4: 2.291, 5: 2.459, 6: 2.589, 7: 2.693, 8: 2.780, 9: 2.855, 10: 2.920,
        11: 2.978, 12: 3.030, 13: 3.077, 14: 3.120, 15: 3.159, 16: 3.196, 17: 3.230, 18: 3.261,
        19: 3.291, 20: 3.319,
    },
}


# -- Pareto -----------------------------------------------------------------------


@dataclass(frozen=True)
class TradeoffPoint:
    p: float
    E: float
    label: str = ""

    def dominates(self, other: "TradeoffPoint") -> bool:
        return self.p >= other.p and self.E <= other.E and (self.p > other.p or self.E < other.E)


def pareto_front(points: Sequence[TradeoffPoint]) -> list[TradeoffPoint]:
    """Non-dominated points (maximize ``p``, minimize ``E``), ascending ``E``.

    Identical points do not dominate each other, so duplicates on the front
    are all kept. Sweep over groups of equal energy: within a group only the
    highest ``p`` can survive, and it survives iff it beats every point of
    strictly lower energy.
    """
    pts = list(points)
    for pt in pts:
        if not (math.isfinite(pt.p) and math.isfinite(pt.E)):
            raise ValueError(f"non-finite trade-off point {pt}")
    order = sorted(range(len(pts)), key=lambda i: (pts[i].E, i))
    front, best_p, i = [], -math.inf, 0
    while i < len(order):
        j = i
        while j < len(order) and pts[order[j]].E == pts[order[i]].E:
            j += 1
        group = [pts[k] for k in order[i:j]]
        top = max(pt.p for pt in group)
        if top > best_p:
            front.extend(pt for pt in group if pt.p == top)
            best_p = top
        i = j
    return front


# -- results matrix -----------------------------------------------------------------


@dataclass
class ResultsMatrix:
    datasets: list[str]
    algorithms: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.datasets), len(self.algorithms)):
            raise ValueError(f"values shape {self.values.shape} does not match labels")
        bad = np.argwhere(~np.isfinite(self.values))
        if bad.size:
            r, c = bad[0]
            raise MissingCellError("missing or non-finite cell", self.datasets[r], self.algorithms[c])

    @property
    def N(self) -> int:
        return len(self.datasets)

    @property
    def k(self) -> int:
        return len(self.algorithms)

    def column(self, algorithm: str) -> np.ndarray:
        return self.values[:, self.algorithms.index(algorithm)]

    @classmethod
    def read_csv(cls, path, delimiter: str = ",") -> "ResultsMatrix":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh, delimiter=delimiter) if r]
        if not rows:
            raise StatsPreconditionError(f"{path}: empty results matrix")
        algorithms = [a.strip() for a in rows[0][1:]]
        datasets, values = [], []
        for row in rows[1:]:
            label = row[0].strip()
            datasets.append(label)
            cells = []
            for j, alg in enumerate(algorithms):
                cell = row[j + 1].strip() if j + 1 < len(row) else ""
                try:
                    v = float(cell)
                except ValueError:
                    raise MissingCellError("missing cell", label, alg) from None
                if not math.isfinite(v):
                    raise MissingCellError("non-finite cell", label, alg)
                cells.append(v)
            values.append(cells)
        return cls(datasets, algorithms, np.array(values).reshape(len(datasets), len(algorithms)))


# -- Friedman -------------------------------------------------------------------


@dataclass
class FriedmanResult:
    chi2: float
    p_value: float
    avg_ranks: dict[str, float]
    N: int
    k: int


def rank_rows(values: np.ndarray, higher_is_better: bool = True) -> np.ndarray:
    """Per-row ranks, 1 = best, ties share the mean of their positions."""
    vals = -values if higher_is_better else values
    return np.vstack([rankdata(row, method="average") for row in vals])


def friedman_test(m: ResultsMatrix, higher_is_better: bool = True) -> FriedmanResult:
    if m.k < 3:
        raise StatsPreconditionError(f"Friedman test needs k >= 3 algorithms, got {m.k}; use the Wilcoxon test for two")
    if m.N < 2:
        raise StatsPreconditionError(f"Friedman test needs N >= 2 datasets, got {m.N}")
    N, k = m.N, m.k
    R = rank_rows(m.values, higher_is_better).mean(axis=0)
    stat = 12.0 * N / (k * (k + 1)) * (float(np.sum(R**2)) - k * (k + 1) ** 2 / 4.0)
    stat = max(stat, 0.0)  # rounding can leave -0 or -1e-15 on full ties
    return FriedmanResult(stat, float(chi2.sf(stat, k - 1)), dict(zip(m.algorithms, map(float, R))), N, k)


# -- Wilcoxon / Holm ----------------------------------------------------------------


@dataclass
class WilcoxonResult:
    statistic: float
    w_plus: float
    w_minus: float
    n: int
    n_zero: int
    p_value: float
    method: str
    degenerate: bool = False


def _exact_upper_lower(ranks: np.ndarray, w_plus: float) -> tuple[float, float]:
    """``P(W+ <= w)`` and ``P(W+ >= w)`` under the sign-flip null.

    Mid-ranks are multiples of 1/2, so the distribution is built over doubled
    ranks with integer counts.
    """
    doubled = np.rint(2 * ranks).astype(np.int64)
    counts = np.zeros(int(doubled.sum()) + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: len(counts) - r]
        counts = counts + shifted
    total = 2.0 ** len(ranks)
    w = int(round(2 * w_plus))
    return counts[: w + 1].sum() / total, counts[w:].sum() / total


def wilcoxon_signed_rank(x, y=None, exact_max_n: int = EXACT_WILCOXON_MAX_N) -> WilcoxonResult:
    """Two-sided signed-rank test on paired differences ``x - y``.

    Zero differences are dropped; tied magnitudes get mid-ranks. Exact null
    enumeration for ``n <= exact_max_n``, otherwise the normal approximation
    with tie correction and a 0.5 continuity correction.
    """
    d = np.asarray(x, dtype=np.float64)
    if y is not None:
        d = d - np.asarray(y, dtype=np.float64)
    nz = d[d != 0]
    n_zero = int(d.size - nz.size)
    n = int(nz.size)
    if n == 0:
        return WilcoxonResult(0.0, 0.0, 0.0, 0, n_zero, 1.0, "degenerate", degenerate=True)
    ranks = rankdata(np.abs(nz), method="average")
    w_plus = float(ranks[nz > 0].sum())
    w_minus = float(ranks[nz < 0].sum())
    if n <= exact_max_n:
        lower, upper = _exact_upper_lower(ranks, w_plus)
        p = min(1.0, 2.0 * min(lower, upper))
        method = "exact"
    else:
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
        z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(var)
        p = min(1.0, math.erfc(z / math.sqrt(2.0)))
        method = "normal"
    return WilcoxonResult(min(w_plus, w_minus), w_plus, w_minus, n, n_zero, p, method)


def holm_adjust(pvalues: Sequence[float]) -> list[float]:
    """Holm step-down adjusted p-values, returned in input order."""
    p = np.asarray(pvalues, dtype=np.float64)
    m = p.size
    order = np.argsort(p, kind="stable")
    adjusted = np.empty(m)
    running = 0.0
    for i, idx in enumerate(order):
        running = max(running, min(1.0, (m - i) * p[idx]))
        adjusted[idx] = running
    return adjusted.tolist()


@dataclass
class PairwiseResult:
    algorithm: str
    control: str
    statistic: float
    p_value: float
    p_adjusted: float
    reject: bool
    n_zero: int
    method: str
    degenerate: bool


def wilcoxon_holm(m: ResultsMatrix, control: str, alpha: float = 0.05) -> list[PairwiseResult]:
    if control not in m.algorithms:
        raise StatsPreconditionError(f"control algorithm {control!r} not in {m.algorithms}")
    others = [a for a in m.algorithms if a != control]
    if not others:
        raise StatsPreconditionError("need at least one algorithm besides the control")
    tests = [wilcoxon_signed_rank(m.column(control), m.column(a)) for a in others]
    adjusted = holm_adjust([t.p_value for t in tests])
    return [
        PairwiseResult(a, control, t.statistic, t.p_value, adj, adj <= alpha, t.n_zero, t.method, t.degenerate)
        for a, t, adj in zip(others, tests, adjusted)
    ]


# -- Nemenyi --------------------------------------------------------------------


def nemenyi_cd(k: int, N: int, alpha: float = 0.05) -> float:
    """Critical difference ``q_alpha * sqrt(k (k + 1) / (6 N))``."""
    table = None
    for a, t in NEMENYI_Q.items():
        if math.isclose(alpha, a):
            table = t
    if table is None:
        raise StatsPreconditionError(f"alpha must be one of {sorted(NEMENYI_Q)}, got {alpha}")
    if k not in table:
        raise StatsPreconditionError(f"Nemenyi table covers 2 <= k <= 20, got k={k}")
    if N < 1:
        raise StatsPreconditionError("N must be >= 1")
    return table[k] * math.sqrt(k * (k + 1) / (6.0 * N))


# -- combined report ----------------------------------------------------------------


@dataclass
class StatisticsReport:
    friedman: FriedmanResult
    alpha: float
    rejected: bool
    pairwise: list[PairwiseResult] = field(default_factory=list)
    critical_difference: float | None = None
    cd_alpha: float | None = None
    control: str | None = None

    def to_dict(self) -> dict:
        d = {
            "alpha": self.alpha,
            "friedman": {
                "chi2": self.friedman.chi2,
                "p_value": self.friedman.p_value,
                "N": self.friedman.N,
                "k": self.friedman.k,
                "avg_ranks": self.friedman.avg_ranks,
            },
            "friedman_rejects": self.rejected,
        }
        if self.rejected:
            d["post_hoc"] = {
                "control": self.control,
                "wilcoxon_holm": [vars(p).copy() for p in self.pairwise],
                "nemenyi": {"alpha": self.cd_alpha, "critical_difference": self.critical_difference},
            }
        return d


def compare_algorithms(
    m: ResultsMatrix,
    alpha: float = 0.05,
    higher_is_better: bool = True,
    control: str | None = None,
    cd_alpha: float = 0.05,
) -> StatisticsReport:
    """Friedman test, then post-hoc Wilcoxon-Holm and Nemenyi CD only on rejection.

    Without an explicit ``control`` the best average-ranked algorithm is used.
    """
    fr = friedman_test(m, higher_is_better)
    rejected = fr.p_value <= alpha
    report = StatisticsReport(fr, alpha, rejected)
    if rejected:
        if control is None:
            control = min(fr.avg_ranks, key=lambda a: (fr.avg_ranks[a], m.algorithms.index(a)))
        report.control = control
        report.pairwise = wilcoxon_holm(m, control, alpha)
        report.cd_alpha = cd_alpha
        report.critical_difference = nemenyi_cd(m.k, m.N, cd_alpha)
    return report
