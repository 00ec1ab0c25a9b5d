"""Variance bounds, Lipschitz constants, and Chebyshev confidence terms.

The empirical-mean substitutions in the gap-fitting program fail with
probabilities bounded by Chebyshev's inequality:

    beta1 = Mhat / (delta1^2 * n_hat_1)
    beta2 = 2 * Mhat / (delta2^2 * n_hat_1)

where Mhat is a per-dimension upper bound on the simulator's one-step
variance. Mhat is taken as a safety factor times the largest sample variance
observed anywhere in the dataset; Lipschitz constants are estimated by slope
maximization over neighboring cover centers, with user-supplied overrides
allowed when sharper constants are known from structure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .cover import Dataset
from .errors import InvalidArgumentError

DEFAULT_VARIANCE_SAFETY = 10.0
DEFAULT_LIPSCHITZ_SAFETY = 1.2


def sample_variance(values) -> float:
    """Unbiased sample variance, sum((v - mean)^2) / (count - 1)."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise InvalidArgumentError("sample_variance needs at least 2 values")
    return float(np.var(values, ddof=1))


def per_pair_variances(dataset: Dataset) -> np.ndarray:
    """Sample variance of every (r, j) record, per dimension; shape (N*M, n)."""
    if dataset.n_hat_1 < 2:
        raise InvalidArgumentError("variance estimation needs n_hat_1 >= 2")
    return np.stack([np.var(rec.replicates, axis=0, ddof=1) for rec in dataset.records])


def variance_bound(dataset: Dataset, dim: int, safety_factor: float = DEFAULT_VARIANCE_SAFETY) -> float:
    """Conservative global variance bound: safety factor times the worst sample variance."""
    if safety_factor < 1:
        raise InvalidArgumentError("safety_factor must be >= 1")
    return float(safety_factor * per_pair_variances(dataset)[:, dim].max())


def beta1(m_hat: float, delta1: float, n_hat_1: int) -> float:
    """Chebyshev failure probability of the empirical-mean substitution, clamped to [0, 1]."""
    if delta1 <= 0:
        raise InvalidArgumentError("delta1 must be positive")
    if n_hat_1 < 1:
        raise InvalidArgumentError("n_hat_1 must be >= 1")
    if m_hat < 0:
        raise InvalidArgumentError("m_hat must be non-negative")
    return min(1.0, m_hat / (delta1 ** 2 * n_hat_1))


def beta2(m_hat: float, delta2: float, n_hat_1: int) -> float:
    """Failure probability of the paired-difference substitution; twice beta1."""
    if delta2 <= 0:
        raise InvalidArgumentError("delta2 must be positive")
    if n_hat_1 < 1:
        raise InvalidArgumentError("n_hat_1 must be >= 1")
    if m_hat < 0:
        raise InvalidArgumentError("m_hat must be non-negative")
    return min(1.0, 2.0 * m_hat / (delta2 ** 2 * n_hat_1))


def estimate_lipschitz(points, values, safety_factor: float = DEFAULT_LIPSCHITZ_SAFETY,
                       n_neighbors: Optional[int] = None) -> float:
    """Slope-maximization Lipschitz estimate over one input's evaluations.

    ``points`` is (K, n) and ``values`` (K,) holds g(x) at those points for a
    fixed input. The estimate is the safety factor times the largest
    |g(x) - g(x')| / ||x - x'|| over each point's nearest neighbors
    (2n of them by default), which avoids the O(K^2) all-pairs scan.
    """
    points = np.asarray(points, dtype=float)
    values = np.asarray(values, dtype=float)
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    k_points, n = points.shape
    distinct = np.unique(points, axis=0).shape[0]
    if distinct < 2:
        raise InvalidArgumentError("need at least two distinct states to estimate a slope")
    if n_neighbors is None:
        n_neighbors = 2 * n
    n_neighbors = min(n_neighbors, k_points - 1)

    tree = cKDTree(points)
    dists, idx = tree.query(points, k=n_neighbors + 1)
    # column 0 is the point itself
    dists = dists[:, 1:]
    idx = idx[:, 1:]
    dv = np.abs(values[idx] - values[:, None])
    with np.errstate(divide="ignore", invalid="ignore"):
        slopes = np.where(dists > 0, dv / dists, 0.0)
    return float(safety_factor * slopes.max())


def lipschitz_from_dataset(dataset: Dataset, dim: int, which: str = "nominal",
                           safety_factor: float = DEFAULT_LIPSCHITZ_SAFETY) -> float:
    """Max-over-inputs Lipschitz estimate for one dimension of f or of the
    empirical mean of the simulator ("nominal" / "empirical-mean")."""
    m_inputs = len(dataset.inputs)
    n_centers = dataset.cover.n_centers
    if which == "nominal":
        values_all = dataset.nominals()[:, dim]
    elif which == "empirical-mean":
        values_all = dataset.empirical_means()[:, dim]
    else:
        raise InvalidArgumentError(f"unknown evaluation source {which!r}")
    best = 0.0
    for j in range(m_inputs):
        rows = np.arange(n_centers) * m_inputs + j
        est = estimate_lipschitz(dataset.cover.centers, values_all[rows], safety_factor=1.0)
        best = max(best, est)
    return float(safety_factor * best)


@dataclass
class EstimationReport:
    """Per-dimension variance bounds, Lipschitz constants, and the factors used.

    ``lipschitz_gap_basis`` (the constant of the fitted polynomial in x) is
    filled after the scenario program is solved.
    """

    variance_bound: np.ndarray      # (n,)
    lipschitz_f: np.ndarray         # (n,)
    lipschitz_fhat: np.ndarray      # (n,)
    lipschitz_gap_basis: Optional[np.ndarray] = None
    variance_safety_factor: float = DEFAULT_VARIANCE_SAFETY
    lipschitz_safety_factor: float = DEFAULT_LIPSCHITZ_SAFETY
    per_pair_variances: Optional[np.ndarray] = None   # (N*M, n)

    def validate(self):
        for name in ("variance_bound", "lipschitz_f", "lipschitz_fhat"):
            arr = getattr(self, name)
            if np.any(np.asarray(arr) < 0):
                raise InvalidArgumentError(f"{name} has negative entries")
        if self.per_pair_variances is not None:
            worst = self.per_pair_variances.max(axis=0)
            if np.any(self.variance_bound < worst - 1e-15):
                raise InvalidArgumentError(
                    "variance_bound does not dominate the per-pair sample variances"
                )


def estimate_report(dataset: Dataset,
                    variance_safety_factor: float = DEFAULT_VARIANCE_SAFETY,
                    lipschitz_safety_factor: float = DEFAULT_LIPSCHITZ_SAFETY,
                    lipschitz_f_override=None,
                    lipschitz_fhat_override=None) -> EstimationReport:
    """Assemble the full estimation report for a dataset.

    Overrides replace the data-driven Lipschitz estimates; they are the
    supported way to inject sharper constants known from system structure.
    """
    n = dataset.spec.state_dim
    variances = per_pair_variances(dataset)
    m_hat = variance_safety_factor * variances.max(axis=0)
    if lipschitz_f_override is not None:
        l_f = np.asarray(lipschitz_f_override, dtype=float)
    else:
        l_f = np.array([
            lipschitz_from_dataset(dataset, i, "nominal", lipschitz_safety_factor)
            for i in range(n)
        ])
    if lipschitz_fhat_override is not None:
        l_fhat = np.asarray(lipschitz_fhat_override, dtype=float)
    else:
        l_fhat = np.array([
            lipschitz_from_dataset(dataset, i, "empirical-mean", lipschitz_safety_factor)
            for i in range(n)
        ])
    report = EstimationReport(
        variance_bound=m_hat,
        lipschitz_f=l_f,
        lipschitz_fhat=l_fhat,
        variance_safety_factor=variance_safety_factor,
        lipschitz_safety_factor=lipschitz_safety_factor,
        per_pair_variances=variances,
    )
    report.validate()
    return report


def save_report(report: EstimationReport, path: str) -> None:
    payload = {
        "variance_bound": np.asarray(report.variance_bound).tolist(),
        "lipschitz_f": np.asarray(report.lipschitz_f).tolist(),
        "lipschitz_fhat": np.asarray(report.lipschitz_fhat).tolist(),
        "lipschitz_gap_basis": None if report.lipschitz_gap_basis is None
        else np.asarray(report.lipschitz_gap_basis).tolist(),
        "variance_safety_factor": report.variance_safety_factor,
        "lipschitz_safety_factor": report.lipschitz_safety_factor,
        "per_pair_variances": None if report.per_pair_variances is None
        else np.asarray(report.per_pair_variances).tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_report(path: str) -> EstimationReport:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return EstimationReport(
        variance_bound=np.array(payload["variance_bound"], dtype=float),
        lipschitz_f=np.array(payload["lipschitz_f"], dtype=float),
        lipschitz_fhat=np.array(payload["lipschitz_fhat"], dtype=float),
        lipschitz_gap_basis=None if payload["lipschitz_gap_basis"] is None
        else np.array(payload["lipschitz_gap_basis"], dtype=float),
        variance_safety_factor=payload["variance_safety_factor"],
        lipschitz_safety_factor=payload["lipschitz_safety_factor"],
        per_pair_variances=None if payload["per_pair_variances"] is None
        else np.array(payload["per_pair_variances"], dtype=float),
    )
