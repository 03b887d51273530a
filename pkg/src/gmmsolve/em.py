"""Expectation-maximization for isotropic and diagonal-anisotropic GMMs.

The E-step is computed entirely in the log domain (log-softmax over
components), so extreme separations or high dimensions cannot underflow
into 0/0 responsibilities. The M-step is the standard weighted average;
in anisotropic mode it additionally refits per-dimension scales with a
small floor to prevent variance collapse on singleton clusters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DegenerateComponentError,
    GmmParams,
    component_log_densities,
    gmm_log_density,
    logsumexp_rows,
    require_valid,
)

SCALE_FLOOR = 1e-6
MASS_FLOOR = 1e-12

INIT_STRATEGIES = ("kmeanspp", "random", "oracle")


@dataclass(frozen=True)
class EmTrace:
    """Per-iteration snapshots of an EM run.

    ``params_history[0]`` is the initialization; entry j >= 1 is the state
    after iteration j. ``loglik_history[j]`` is the mean log-likelihood of
    ``params_history[j]``, so it is non-decreasing along the run.
    """

    params_history: tuple[GmmParams, ...]
    loglik_history: tuple[float, ...]
    termination: str

    @property
    def iterations(self) -> int:
        return len(self.params_history) - 1


def e_step(data: np.ndarray, params: GmmParams) -> np.ndarray:
    """Posterior responsibilities, an (N, K) row-stochastic matrix."""
    log_joint = component_log_densities(data, params)
    log_post = log_joint - logsumexp_rows(log_joint)[:, None]
    return np.exp(log_post)


def m_step(data: np.ndarray, resp: np.ndarray, anisotropic: bool = False) -> GmmParams:
    """Weighted-average parameter update from responsibilities."""
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[0]
    mass = resp.sum(axis=0)
    low = np.flatnonzero(mass < MASS_FLOOR)
    if low.size:
        raise DegenerateComponentError(int(low[0]))
    weights = mass / n
    means = (resp.T @ data) / mass[:, None]
    scales = None
    if anisotropic:
        sq = np.empty_like(means)
        for k in range(means.shape[0]):
            diff = data - means[k]
            sq[k] = (resp[:, k] @ (diff * diff)) / mass[k]
        scales = np.sqrt(np.maximum(sq, SCALE_FLOOR**2))
    return GmmParams(weights, means, scales)


def _kmeanspp_centers(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: squared-distance-proportional center selection."""
    n = data.shape[0]
    centers = [data[rng.integers(n)]]
    d2 = np.sum((data - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers.append(data[rng.integers(n)])
            continue
        centers.append(data[rng.choice(n, p=d2 / total)])
        d2 = np.minimum(d2, np.sum((data - centers[-1]) ** 2, axis=1))
    return np.stack(centers)


def _hard_assignment_params(
    data: np.ndarray, centers: np.ndarray, anisotropic: bool
) -> GmmParams:
    """One hard-assignment M-step from the given centers."""
    n, k = data.shape[0], centers.shape[0]
    d2 = np.sum((data[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    labels = np.argmin(d2, axis=1)
    resp = np.zeros((n, k))
    resp[np.arange(n), labels] = 1.0
    # guarantee nonzero mass per component: claim the closest point outright
    for j in range(k):
        if resp[:, j].sum() == 0.0:
            i = int(np.argmin(d2[:, j]))
            resp[i] = 0.0
            resp[i, j] = 1.0
    params = m_step(data, resp, anisotropic=anisotropic)
    # hard proportions can hit 0/1 on tiny samples; pull into the open simplex
    w = np.maximum(params.weights, 1.0 / (10.0 * n))
    return GmmParams(w / w.sum(), params.means, params.scales)


def init_kmeanspp(data, k: int, rng: np.random.Generator, anisotropic: bool = False) -> GmmParams:
    return _hard_assignment_params(data, _kmeanspp_centers(np.asarray(data, float), k, rng), anisotropic)


def init_random(data, k: int, rng: np.random.Generator, anisotropic: bool = False) -> GmmParams:
    """K data points chosen uniformly without replacement, uniform weights."""
    data = np.asarray(data, dtype=np.float64)
    idx = rng.choice(data.shape[0], size=k, replace=data.shape[0] < k)
    scales = np.ones((k, data.shape[1])) if anisotropic else None
    return GmmParams(np.full(k, 1.0 / k), data[idx], scales)


def init_oracle(truth: GmmParams, rng: np.random.Generator, radius: float | None = None) -> GmmParams:
    """Truth means perturbed uniformly inside a ball of the given radius
    (default: one sixteenth of the minimum pairwise mean separation)."""
    if radius is None:
        if truth.k < 2:
            radius = 0.5
        else:
            diff = truth.means[:, None, :] - truth.means[None, :, :]
            dist = np.linalg.norm(diff, axis=2)
            radius = float(np.min(dist[np.triu_indices(truth.k, k=1)])) / 16.0
    direction = rng.standard_normal(size=truth.means.shape)
    direction /= np.maximum(np.linalg.norm(direction, axis=1, keepdims=True), 1e-30)
    r = radius * rng.uniform(size=(truth.k, 1)) ** (1.0 / truth.d)
    return GmmParams(truth.weights, truth.means + r * direction, truth.scales)


def _resolve_init(data, k, init, rng, anisotropic) -> GmmParams:
    if isinstance(init, GmmParams):
        return require_valid(init)
    if init == "kmeanspp":
        return init_kmeanspp(data, k, rng, anisotropic)
    if init == "random":
        return init_random(data, k, rng, anisotropic)
    raise ValueError(f"unknown init strategy {init!r}; use {INIT_STRATEGIES} or pass GmmParams")


def _param_change(old: GmmParams, new: GmmParams) -> float:
    shift = float(np.max(np.linalg.norm(new.means - old.means, axis=1)))
    wchange = float(np.max(np.abs(new.weights - old.weights) / old.weights))
    change = max(shift, wchange)
    if old.scales is not None and new.scales is not None:
        change = max(change, float(np.max(np.abs(new.scales - old.scales))))
    return change


def run_em(
    data,
    k: int,
    init: GmmParams | str = "kmeanspp",
    max_iters: int = 100,
    tol: float = 1e-6,
    rng: np.random.Generator | None = None,
    anisotropic: bool = False,
    max_restarts: int = 3,
) -> tuple[GmmParams, EmTrace]:
    """Alternate E and M steps until the parameter change drops below tol.

    Convergence is measured by the max over components of the mean-shift
    norm and the relative weight change. On a degenerate component the run
    restarts from a freshly perturbed initialization up to ``max_restarts``
    times before the error surfaces.
    """
    if k < 1 or max_iters < 1 or tol <= 0:
        raise ValueError("need k >= 1, max_iters >= 1, tol > 0")
    data = np.asarray(data, dtype=np.float64)
    if rng is None:
        rng = np.random.default_rng(0)
    params0 = _resolve_init(data, k, init, rng, anisotropic)
    if params0.k != k or params0.d != data.shape[1]:
        raise ValueError("init shape does not match requested k and data dimension")

    attempt = 0
    while True:
        try:
            return _em_loop(data, params0, max_iters, tol, anisotropic)
        except DegenerateComponentError:
            attempt += 1
            if attempt > max_restarts:
                raise
            spread = float(np.std(data)) or 1.0
            jitter = 0.05 * spread * rng.standard_normal(size=params0.means.shape)
            params0 = GmmParams(params0.weights, params0.means + jitter, params0.scales)


def _em_loop(data, params, max_iters, tol, anisotropic):
    history = [params]
    logliks = [float(np.mean(gmm_log_density(data, params)))]
    termination = "max_iters"
    for _ in range(max_iters):
        resp = e_step(data, params)
        new = m_step(data, resp, anisotropic=anisotropic)
        change = _param_change(params, new)
        params = new
        history.append(params)
        logliks.append(float(np.mean(gmm_log_density(data, params))))
        if change < tol:
            termination = "converged"
            break
    trace = EmTrace(tuple(history), tuple(logliks), termination)
    return params, trace
