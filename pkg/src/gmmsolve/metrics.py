"""Permutation-aligned evaluation of mixture estimates.

Component labels carry no meaning, so every metric first aligns estimated
components to true components by solving a linear assignment program on
pairwise squared mean distances. The solver below is a shortest
augmenting path implementation with dual potentials (the Jonker-Volgenant
family); it is exact and deterministic, breaking cost ties toward the
lowest row index, then the lowest column index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GmmParams
from .em import e_step


@dataclass(frozen=True)
class Assignment:
    """A minimum-cost perfect matching: row i is matched to column perm[i]."""

    perm: tuple[int, ...]
    cost: float


def solve_assignment(cost) -> Assignment:
    """Minimum-cost perfect matching of a square cost matrix.

    Augments one row at a time along shortest alternating paths maintained
    with dual potentials, O(K^3) overall. Ties are broken deterministically:
    rows are augmented in index order and among equally short columns the
    lowest index wins.
    """
    a = np.asarray(cost, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("cost matrix entries must be finite")
    n = a.shape[0]

    inf = np.inf
    u = np.zeros(n + 1)  # row potentials (index n = virtual unmatched row)
    v = np.zeros(n + 1)  # column potentials (index n = virtual source column)
    match = np.full(n + 1, n, dtype=int)  # match[j] = row assigned to column j

    for i in range(n):
        match[n] = i
        j0 = n
        minv = np.full(n + 1, inf)
        way = np.full(n + 1, n, dtype=int)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = inf
            j1 = n
            for j in range(n):
                if used[j]:
                    continue
                cur = a[i0, j] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == n:
                break
        while j0 != n:  # flip the augmenting path
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1

    perm = np.empty(n, dtype=int)
    for j in range(n):
        perm[match[j]] = j
    total = float(a[np.arange(n), perm].sum())
    return Assignment(tuple(int(p) for p in perm), total)


def align_components(est: GmmParams, truth: GmmParams) -> Assignment:
    """Permutation matching estimated components to true ones by squared
    mean distance only (weights and scales never influence the matching)."""
    if est.k != truth.k:
        raise ValueError(f"component counts differ: est {est.k} vs truth {truth.k}")
    if est.d != truth.d:
        raise ValueError(f"dimensions differ: est {est.d} vs truth {truth.d}")
    diff = truth.means[:, None, :] - est.means[None, :, :]
    return solve_assignment(np.sum(diff * diff, axis=2))


def l2_error(est: GmmParams, truth: GmmParams) -> float:
    """Mean per-component squared discrepancy after alignment:
    (1/K) sum_k [ (1/d) ||mu_hat - mu||^2 + (pi_hat - pi)^2 ], plus an
    analogous (1/d) scale term when both sides carry scales."""
    assignment = align_components(est, truth)
    perm = np.asarray(assignment.perm)
    k, d = truth.k, truth.d
    mu_term = np.sum((est.means[perm] - truth.means) ** 2, axis=1) / d
    pi_term = (est.weights[perm] - truth.weights) ** 2
    total = mu_term + pi_term
    if est.scales is not None and truth.scales is not None:
        total = total + np.sum((est.scales[perm] - truth.scales) ** 2, axis=1) / d
    return float(np.sum(total) / k)


def clustering_accuracy(est: GmmParams, data, true_labels) -> float:
    """Fraction of points whose argmax-posterior cluster matches the true
    component, after aligning cluster indices by co-occurrence counts."""
    labels = np.asarray(true_labels, dtype=int)
    data = np.asarray(data, dtype=np.float64)
    if labels.shape[0] != data.shape[0]:
        raise ValueError("labels length must match data rows")
    k = est.k
    if labels.size and labels.max() >= k:
        raise ValueError(f"label {labels.max()} out of range for k={k}")
    pred = np.argmax(e_step(data, est), axis=1)
    counts = np.zeros((k, k))
    np.add.at(counts, (labels, pred), 1.0)
    assignment = solve_assignment(-counts)
    perm = np.asarray(assignment.perm)
    return float(np.sum(counts[np.arange(k), perm]) / labels.shape[0])


def log_likelihood(data, params: GmmParams) -> float:
    """Average log-density of the data under the parameters."""
    from .core import gmm_log_density

    return float(np.mean(gmm_log_density(np.atleast_2d(np.asarray(data, float)), params)))


@dataclass(frozen=True)
class TrainingLoss:
    """Square loss on aligned means plus cross-entropy on weights.

    ``clamped`` flags that some aligned weight estimate was <= 0 and was
    clamped to 1e-12 inside the log.
    """

    mean_loss: float
    weight_loss: float
    scale_loss: float | None
    clamped: bool

    @property
    def total(self) -> float:
        return self.mean_loss + self.weight_loss + (self.scale_loss or 0.0)


def training_loss(est: GmmParams, truth: GmmParams) -> TrainingLoss:
    """Mean squared error over aligned means plus the truth-weighted
    cross-entropy -sum_k pi_k log pi_hat_{perm(k)}; anisotropic estimates
    additionally contribute a mean-square scale term."""
    assignment = align_components(est, truth)
    perm = np.asarray(assignment.perm)
    k, d = truth.k, truth.d
    mean_loss = float(np.sum((est.means[perm] - truth.means) ** 2) / (k * d))
    pi_hat = est.weights[perm]
    clamped = bool(np.any(pi_hat <= 0.0))
    weight_loss = float(-np.sum(truth.weights * np.log(np.maximum(pi_hat, 1e-12))))
    scale_loss = None
    if est.scales is not None and truth.scales is not None:
        scale_loss = float(np.sum((est.scales[perm] - truth.scales) ** 2) / (k * d))
    return TrainingLoss(mean_loss, weight_loss, scale_loss, clamped)
