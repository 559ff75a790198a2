"""Nonparametric validation toolkit for simulator force distributions.

Implements the three tests used to compare simulated force magnitudes with
a reference distribution (normality, variance equality, and a rank test),
plus kernel density estimation and the empirical CDF for the accompanying
plots.  ``validate_against_normal`` bundles them: it draws a same-size
reference sample from Normal(mu, sigma) and reports, in order, Shapiro-Wilk,
Levene, and Mann-Whitney, with the same-population verdict decided by the
Mann-Whitney p-value at the 0.05 level.

The test statistics are implemented here (Royston's W approximation, the
Brown-Forsythe variant of Levene's test, midrank U with tie-corrected normal
approximation); only distribution functions (normal quantile, F survival)
come from scipy.special.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import fdtrc, ndtri


def _norm_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


# ---------------------------------------------------------------------------
# Shapiro-Wilk (AS R94, Royston 1995)
# ---------------------------------------------------------------------------

_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)


def _poly(coeffs, x):
    acc = 0.0
    for k, c in enumerate(coeffs):
        acc += c * x ** k
    return acc


def shapiro_wilk(samples) -> tuple[float, float]:
    """W statistic and p-value of the normality test (3 <= n <= 5000)."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = len(x)
    if n < 3 or n > 5000:
        raise ValueError("shapiro_wilk requires 3 <= n <= 5000")
    if x[0] == x[-1]:
        raise ValueError("all samples are equal")

    m = ndtri((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    mm = float(m @ m)
    c = m / math.sqrt(mm)
    u = 1.0 / math.sqrt(n)
    a = np.empty(n)
    if n > 5:
        a_n = c[-1] + _poly(_C1, u)
        a_n1 = c[-2] + _poly(_C2, u)
        phi = (mm - 2.0 * m[-1] ** 2 - 2.0 * m[-2] ** 2) / \
            (1.0 - 2.0 * a_n ** 2 - 2.0 * a_n1 ** 2)
        a[2:-2] = m[2:-2] / math.sqrt(phi)
        a[-1], a[-2] = a_n, a_n1
        a[0], a[1] = -a_n, -a_n1
    elif n > 3:
        a_n = c[-1] + _poly(_C1, u)
        phi = (mm - 2.0 * m[-1] ** 2) / (1.0 - 2.0 * a_n ** 2)
        a[1:-1] = m[1:-1] / math.sqrt(phi)
        a[-1] = a_n
        a[0] = -a_n
    else:
        a[:] = (-math.sqrt(0.5), 0.0, math.sqrt(0.5))

    num = float(a @ x) ** 2
    den = float(np.sum((x - x.mean()) ** 2))
    w = num / den

    if n == 3:
        p = 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        return w, float(min(max(p, 0.0), 1.0))
    if n <= 11:
        g = -2.273 + 0.459 * n
        mu = 0.5440 - 0.39978 * n + 0.025054 * n ** 2 - 0.0006714 * n ** 3
        sigma = math.exp(1.3822 - 0.77857 * n + 0.062767 * n ** 2
                         - 0.0020322 * n ** 3)
        z = (-math.log(g - math.log1p(-w)) - mu) / sigma
    else:
        ln_n = math.log(n)
        mu = -1.5861 - 0.31082 * ln_n - 0.083751 * ln_n ** 2 \
            + 0.0038915 * ln_n ** 3
        sigma = math.exp(-0.4803 - 0.082676 * ln_n + 0.0030302 * ln_n ** 2)
        z = (math.log1p(-w) - mu) / sigma
    p = 1.0 - _norm_cdf(z)
    return float(w), float(min(max(p, 0.0), 1.0))


# ---------------------------------------------------------------------------
# Levene's test (Brown-Forsythe median centering by default)
# ---------------------------------------------------------------------------

def levene(a, b, centering: str = "median") -> tuple[float, float]:
    """One-way Levene statistic on two groups and its F-distribution p."""
    groups = [np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)]
    for g in groups:
        if len(g) < 2:
            raise ValueError("each group needs n >= 2")
    if centering == "median":
        centers = [np.median(g) for g in groups]
    elif centering == "mean":
        centers = [np.mean(g) for g in groups]
    else:
        raise ValueError("centering must be 'median' or 'mean'")
    z = [np.abs(g - c) for g, c in zip(groups, centers)]
    ns = np.array([len(g) for g in groups], dtype=np.float64)
    big_n = float(ns.sum())
    k = len(groups)
    zbars = np.array([zi.mean() for zi in z])
    zbar = float(sum(zi.sum() for zi in z)) / big_n
    between = float(np.sum(ns * (zbars - zbar) ** 2))
    within = float(sum(np.sum((zi - zb) ** 2) for zi, zb in zip(z, zbars)))
    if within == 0.0:
        return 0.0, 1.0  # degenerate: identical absolute deviations
    stat = (big_n - k) / (k - 1) * between / within
    p = float(fdtrc(k - 1, big_n - k, stat))
    return stat, p


# ---------------------------------------------------------------------------
# Mann-Whitney U
# ---------------------------------------------------------------------------

def mann_whitney_u(a, b) -> tuple[float, float]:
    """U for the first sample (pairs won plus half ties) and two-sided p.

    p uses the normal approximation with tie and continuity corrections;
    ``mann_whitney_exact_p`` enumerates the exact null for small tie-free
    samples as a cross-check.
    """
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    n1, n2 = len(x), len(y)
    if n1 == 0 or n2 == 0:
        raise ValueError("both samples must be non-empty")
    combined = np.concatenate([x, y])
    order = np.argsort(combined, kind="mergesort")
    ranks = np.empty(n1 + n2)
    sorted_vals = combined[order]
    # midranks
    i = 0
    while i < n1 + n2:
        j = i
        while j + 1 < n1 + n2 and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    r1 = float(np.sum(ranks[:n1]))
    u1 = r1 - n1 * (n1 + 1) / 2.0

    n = n1 + n2
    _, tie_counts = np.unique(combined, return_counts=True)
    tie_term = float(np.sum(tie_counts ** 3 - tie_counts))
    sigma2 = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)))
    mu = n1 * n2 / 2.0
    if sigma2 <= 0.0:
        return u1, 1.0  # all values tied
    diff = u1 - mu
    cc = 0.5 if diff > 0 else (-0.5 if diff < 0 else 0.0)
    z = (diff - cc) / math.sqrt(sigma2)
    p = 2.0 * (1.0 - _norm_cdf(abs(z)))
    return u1, float(min(max(p, 0.0), 1.0))


def mann_whitney_exact_p(u: float, n1: int, n2: int) -> float:
    """Exact two-sided p for tie-free samples via null enumeration.

    Uses the recurrence N(u; m, n) = N(u - n; m-1, n) + N(u; m, n-1) on the
    count of arrangements with statistic u.  Valid for small problems
    (n1 * n2 up to a few hundred); cross-checks the normal approximation.
    """
    max_u = n1 * n2
    # table[m][v] = number of arrangements of m first-sample items among n
    # second-sample items with statistic v, built up in n.
    table = np.zeros((n1 + 1, max_u + 1))
    table[:, 0] = 1.0  # N(0; m, 0) = 1 for every m
    for n in range(1, n2 + 1):
        new = np.zeros_like(table)
        new[0, 0] = 1.0
        for m in range(1, n1 + 1):
            for v in range(max_u + 1):
                acc = new[m - 1, v - n] if v >= n else 0.0
                acc += table[m, v]
                new[m, v] = acc
        table = new
    f = table[n1]
    f = f / f.sum()
    lo = float(np.sum(f[:int(math.floor(u)) + 1]))
    hi = float(np.sum(f[int(math.ceil(u)):]))
    return min(1.0, 2.0 * min(lo, hi))


# ---------------------------------------------------------------------------
# KDE and empirical CDF
# ---------------------------------------------------------------------------

class GaussianKde:
    """Gaussian kernels with the Scott bandwidth sigma * n^(-1/5)."""

    def __init__(self, samples):
        x = np.asarray(samples, dtype=np.float64)
        if len(x) < 2:
            raise ValueError("kde requires n >= 2")
        sigma = float(np.std(x, ddof=1))
        if sigma == 0.0:
            raise ValueError("kde requires nonzero variance")
        self.samples = x
        self.bandwidth = sigma * len(x) ** (-1.0 / 5.0)

    def __call__(self, grid):
        g = np.atleast_1d(np.asarray(grid, dtype=np.float64))
        h = self.bandwidth
        z = (g[:, None] - self.samples[None, :]) / h
        dens = np.exp(-0.5 * z * z).sum(axis=1) / (len(self.samples) * h
                                                   * math.sqrt(2.0 * math.pi))
        return dens if np.ndim(grid) else float(dens[0])


def gaussian_kde(samples) -> GaussianKde:
    return GaussianKde(samples)


class EmpiricalCdf:
    """Right-continuous step function F(x) = P(X <= x)."""

    def __init__(self, samples):
        x = np.asarray(samples, dtype=np.float64)
        if len(x) == 0:
            raise ValueError("empirical cdf requires at least one sample")
        self.sorted = np.sort(x)

    def __call__(self, grid):
        g = np.asarray(grid, dtype=np.float64)
        out = np.searchsorted(self.sorted, g, side="right") / len(self.sorted)
        return out if np.ndim(grid) else float(out)


def empirical_cdf(samples) -> EmpiricalCdf:
    return EmpiricalCdf(samples)


# ---------------------------------------------------------------------------
# End-to-end comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidationReport:
    shapiro: tuple[float, float]       # (W, p)
    levene: tuple[float, float]        # (statistic, p)
    mann_whitney: tuple[float, float]  # (U, p)
    n: int
    verdict: str

    @property
    def same_population(self) -> bool:
        return self.mann_whitney[1] > 0.05

    def to_dict(self) -> dict:
        return {"n": self.n,
                "shapiro": {"W": self.shapiro[0], "p": self.shapiro[1]},
                "levene": {"statistic": self.levene[0], "p": self.levene[1]},
                "mann_whitney": {"U": self.mann_whitney[0],
                                 "p": self.mann_whitney[1]},
                "verdict": self.verdict}

    def to_text(self) -> str:
        w, pw = self.shapiro
        ls, lp = self.levene
        u, up = self.mann_whitney
        return "\n".join([
            f"samples per group: {self.n}",
            f"Shapiro-Wilk normality:  W = {w:.6g}, p = {pw:.6g}",
            f"Levene variance equality: statistic = {ls:.6g}, p = {lp:.6g}",
            f"Mann-Whitney rank test:   U = {u:.6g}, p = {up:.6g}",
            f"verdict: {self.verdict}",
        ])


def validate_against_normal(sim_samples, mu_ref: float, sigma_ref: float,
                            seed: int = 0) -> ValidationReport:
    """Compare simulated samples against Normal(mu_ref, sigma_ref).

    Draws the same number of reference samples with the seeded generator
    (same-size comparison), runs Shapiro-Wilk on the simulated data, then
    Levene and Mann-Whitney between the two groups.  The verdict is "same
    population" iff the Mann-Whitney p exceeds 0.05.
    """
    if sigma_ref <= 0.0:
        raise ValueError("sigma_ref must be > 0")
    sim = np.asarray(sim_samples, dtype=np.float64)
    rng = np.random.default_rng(seed)
    ref = rng.normal(mu_ref, sigma_ref, len(sim))
    sw = shapiro_wilk(sim)
    lv = levene(sim, ref)
    mw = mann_whitney_u(sim, ref)
    verdict = ("same population (Mann-Whitney p > 0.05)" if mw[1] > 0.05
               else "distinct populations (Mann-Whitney p <= 0.05)")
    return ValidationReport(sw, lv, mw, len(sim), verdict)
