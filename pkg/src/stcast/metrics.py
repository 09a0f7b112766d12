"""Proper scoring rules and calibration diagnostics for sample forecasts.

All scores are estimated directly from forecast sample ensembles: the
ranked probability score via its energy form

    (1/n) sum_k |x_k - x|  -  (1/(2 n^2)) sum_{k,l} |x_k - x_l|

its multivariate generalization with Euclidean norms, normalized pinball
loss at requested quantiles, and empirical interval/quantile coverage.
Quantiles use linear interpolation between order statistics (the type-7
convention).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputValidationError

DEFAULT_QUANTILES = (0.1, 0.5, 0.9)
DEFAULT_COVERAGE_LEVELS = (0.1, 0.5, 0.9)


def quantile(samples: np.ndarray, q: float) -> float | np.ndarray:
    """Type-7 (linear interpolation) sample quantile."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise InputValidationError("quantile of empty sample set")
    if not 0.0 <= q <= 1.0:
        raise InputValidationError(f"quantile level {q} outside [0, 1]")
    return np.quantile(samples, q, axis=-1, method="linear")


def crps_from_samples(samples: np.ndarray, observed: float) -> float:
    """Sample-based ranked probability score for a scalar observation.

    Uses the O(n log n) sorted form of the pairwise term:
    sum_{k,l} |x_k - x_l| = 2 * sum_i (2i - n + 1) x_(i).
    """
    samples = np.asarray(samples, dtype=float).ravel()
    n = samples.size
    if n < 2:
        raise InputValidationError(f"need >= 2 samples, got {n}")
    if not (np.all(np.isfinite(samples)) and np.isfinite(observed)):
        raise InputValidationError("samples and observation must be finite")
    term1 = np.mean(np.abs(samples - observed))
    s = np.sort(samples)
    coeff = 2.0 * np.arange(n) - n + 1.0
    pairwise = 2.0 * np.dot(coeff, s)        # sum_{k,l} |x_k - x_l|
    return float(term1 - pairwise / (2.0 * n * n))


def mean_crps(samples: np.ndarray, observed: np.ndarray) -> float:
    """Mean CRPS over all cells; samples has shape (..., num_samples)."""
    samples = np.asarray(samples, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if samples.shape[:-1] != observed.shape:
        raise InputValidationError(
            f"samples {samples.shape} do not align with observed {observed.shape}"
        )
    flat_s = samples.reshape(-1, samples.shape[-1])
    flat_o = observed.reshape(-1)
    return float(np.mean([
        crps_from_samples(flat_s[k], flat_o[k]) for k in range(flat_o.size)
    ]))


def _quantile_matrix(forecasts, tau: float) -> np.ndarray:
    """Accept either a quantile-accessor object or a raw sample array."""
    if hasattr(forecasts, "quantile"):
        return np.asarray(forecasts.quantile(tau), dtype=float)
    return np.asarray(quantile(np.asarray(forecasts, dtype=float), tau))


def pinball_loss(q: np.ndarray, x: np.ndarray, tau: float) -> np.ndarray:
    """Asymmetric penalty: (1-tau)|q-x| where q > x, else tau|q-x|."""
    q = np.asarray(q, dtype=float)
    x = np.asarray(x, dtype=float)
    return np.where(q > x, (1.0 - tau) * np.abs(q - x), tau * np.abs(q - x))


def weighted_quantile_loss(forecasts, observed: np.ndarray, tau: float) -> float:
    """Pinball loss at level tau, doubled and normalized by sum |observed|."""
    if not 0.0 < tau < 1.0:
        raise InputValidationError(f"tau must be in (0, 1), got {tau}")
    observed = np.asarray(observed, dtype=float)
    q = _quantile_matrix(forecasts, tau)
    if q.shape != observed.shape:
        raise InputValidationError(
            f"quantile matrix {q.shape} does not align with observed {observed.shape}"
        )
    denom = float(np.sum(np.abs(observed)))
    if denom == 0.0:
        raise InputValidationError(
            "weighted quantile loss undefined: sum |observed| is zero"
        )
    return float(2.0 * np.sum(pinball_loss(q, observed, tau)) / denom)


def coverage(forecasts, observed: np.ndarray, alpha: float) -> float:
    """Share of observations inside the central (1-alpha) interval
    [q_{alpha/2}, q_{1-alpha/2}]."""
    if not 0.0 < alpha < 1.0:
        raise InputValidationError(f"alpha must be in (0, 1), got {alpha}")
    observed = np.asarray(observed, dtype=float)
    lo = _quantile_matrix(forecasts, alpha / 2.0)
    hi = _quantile_matrix(forecasts, 1.0 - alpha / 2.0)
    return float(np.mean((lo <= observed) & (observed <= hi)))


def quantile_exceedance(forecasts, observed: np.ndarray, tau: float) -> float:
    """Share of observations at or below the tau-quantile forecast;
    calibrated forecasts give tau."""
    if not 0.0 < tau < 1.0:
        raise InputValidationError(f"tau must be in (0, 1), got {tau}")
    observed = np.asarray(observed, dtype=float)
    q = _quantile_matrix(forecasts, tau)
    return float(np.mean(observed <= q))


def energy_score(sample_paths: np.ndarray, observed: np.ndarray) -> float:
    """Multivariate score over joint sample paths (num_samples, dim):

    (1/n) sum_k ||x_k - x||  -  (1/(2 n^2)) sum_{k,l} ||x_k - x_l||
    """
    paths = np.asarray(sample_paths, dtype=float)
    observed = np.asarray(observed, dtype=float).ravel()
    if paths.ndim == 1:
        paths = paths[:, None]
    if paths.shape[0] < 2:
        raise InputValidationError(f"need >= 2 sample paths, got {paths.shape[0]}")
    if paths.shape[1] != observed.size:
        raise InputValidationError(
            f"paths have dimension {paths.shape[1]}, observed has {observed.size}"
        )
    term1 = float(np.mean(np.linalg.norm(paths - observed, axis=1)))
    # Row-at-a-time pairwise sum keeps memory at O(n * dim) regardless
    # of the ensemble size.
    n = paths.shape[0]
    pairwise = 0.0
    for k in range(n - 1):
        pairwise += 2.0 * float(
            np.sum(np.linalg.norm(paths[k + 1:] - paths[k], axis=1))
        )
    return term1 - pairwise / (2.0 * n * n)


# ---------------------------------------------------------------------------
# Aggregate report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScoreReport:
    """All scores for one forecast run.

    ``coverage_interval`` follows the central-interval definition (nominal
    value 1 - alpha); ``coverage_quantile`` is the per-quantile exceedance
    share (nominal value tau).  Both are reported because the two
    conventions disagree and are easy to mix up.
    """

    crps: float
    wql: dict[float, float]
    coverage_interval: dict[float, float]
    coverage_quantile: dict[float, float]
    energy: float
    crps_per_region: dict[str, float] = field(default_factory=dict)

    def rows(self) -> list[tuple[str, str, float]]:
        out = [("crps", "", self.crps)]
        for tau in sorted(self.wql):
            out.append(("wql", f"{tau:g}", self.wql[tau]))
        for a in sorted(self.coverage_interval):
            out.append(("coverage_interval", f"{a:g}", self.coverage_interval[a]))
        for tau in sorted(self.coverage_quantile):
            out.append(("coverage_quantile", f"{tau:g}", self.coverage_quantile[tau]))
        out.append(("energy", "", self.energy))
        for rid in sorted(self.crps_per_region):
            out.append(("crps_region", rid, self.crps_per_region[rid]))
        return out


def score_report(samples: np.ndarray, observed: np.ndarray,
                 quantiles: tuple[float, ...] = DEFAULT_QUANTILES,
                 coverage_levels: tuple[float, ...] = DEFAULT_COVERAGE_LEVELS,
                 region_ids: tuple[str, ...] | None = None) -> ScoreReport:
    """Score an (N, m, num_samples) ensemble against (N, m) observations."""
    samples = np.asarray(samples, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if samples.ndim != 3 or samples.shape[:2] != observed.shape:
        raise InputValidationError(
            f"expected samples (N, m, s) aligned with observed (N, m); "
            f"got {samples.shape} vs {observed.shape}"
        )
    n = observed.shape[0]

    wql = {t: weighted_quantile_loss(samples, observed, t) for t in quantiles}
    cov_int = {a: coverage(samples, observed, a) for a in coverage_levels}
    cov_q = {t: quantile_exceedance(samples, observed, t) for t in quantiles}

    # Joint paths: flatten (region, horizon) per sample.
    paths = np.moveaxis(samples, -1, 0).reshape(samples.shape[-1], -1)
    energy = energy_score(paths, observed.reshape(-1))

    per_region = {}
    if region_ids is not None:
        if len(region_ids) != n:
            raise InputValidationError(
                f"{len(region_ids)} region ids for {n} regions"
            )
        per_region = {
            rid: mean_crps(samples[i], observed[i])
            for i, rid in enumerate(region_ids)
        }

    return ScoreReport(
        crps=mean_crps(samples, observed),
        wql=wql,
        coverage_interval=cov_int,
        coverage_quantile=cov_q,
        energy=energy,
        crps_per_region=per_region,
    )
