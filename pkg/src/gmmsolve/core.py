"""Domain types and Gaussian density evaluation shared by all solvers.

Conventions used throughout the package:

* Data matrices are row-per-sample ``(N, d)`` float64 arrays.
* Mixture parameters live in :class:`GmmParams`; components are isotropic
  unit-variance Gaussians unless per-dimension ``scales`` are present.
* Mixed densities are always combined in the log domain (log-sum-exp);
  raw products of component densities are never formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


class SamplingExhaustedError(RuntimeError):
    """Rejection sampling gave up; the configured filter is likely infeasible."""


class DegenerateComponentError(RuntimeError):
    """An M-step saw a component with (numerically) zero total responsibility."""

    def __init__(self, component: int):
        super().__init__(f"component {component} has vanishing responsibility mass")
        self.component = component


class RankDeficiencyError(RuntimeError):
    """Requested rank exceeds the effective rank of the second-moment matrix."""


class DecompositionFailureError(RuntimeError):
    """Every tensor power restart collapsed; no eigenpair could be extracted."""


class CapacityError(ValueError):
    """Task dimensions exceed the (d0, k0) capacity the weights were built for."""


class IterateOverflowError(OverflowError):
    """Unnormalized tensor power iterates exceeded the magnitude guard."""


def _as_matrix(a, name: str) -> np.ndarray:
    out = np.asarray(a, dtype=np.float64)
    if out.ndim == 1:
        out = out[None, :]
    if out.ndim != 2:
        raise ValueError(f"{name} must be 1- or 2-dimensional, got shape {out.shape}")
    return out


@dataclass(frozen=True)
class GmmParams:
    """Mixture weights, component means and optional per-dimension scales.

    ``weights`` has shape (K,), ``means`` (K, d). ``scales`` is None for the
    isotropic unit-variance model, else a strictly positive (K, d) array.
    Construction only normalizes array shapes; semantic invariants are
    checked by :func:`validate_params` so that invalid parameter sets can be
    represented and reported on.
    """

    weights: np.ndarray
    means: np.ndarray
    scales: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "means", _as_matrix(self.means, "means"))
        if self.scales is not None:
            object.__setattr__(self, "scales", _as_matrix(self.scales, "scales"))
        self.weights.setflags(write=False)
        self.means.setflags(write=False)
        if self.scales is not None:
            self.scales.setflags(write=False)

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def permuted(self, perm) -> "GmmParams":
        """Reindex components by ``perm`` (component i of the result is old perm[i])."""
        perm = np.asarray(perm, dtype=int)
        scales = None if self.scales is None else self.scales[perm]
        return GmmParams(self.weights[perm], self.means[perm], scales)


@dataclass(frozen=True)
class Task:
    """One synthetic estimation problem: data, its generating truth, and K.

    ``labels`` records which component generated each row of ``data`` when
    known (for clustering-accuracy scoring); it is not part of the task's
    serialized form.
    """

    data: np.ndarray
    truth: GmmParams
    k: int
    labels: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "data", _as_matrix(self.data, "data"))
        if self.data.shape[0] < 1:
            raise ValueError("task needs at least one sample")
        if self.truth.k != self.k:
            raise ValueError(f"truth has {self.truth.k} components, task declares k={self.k}")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SymTensor3:
    """Dense symmetric third-order tensor with slice accessors.

    ``entries`` is a (dim, dim, dim) float64 array indexed (i, j, m).
    """

    entries: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.entries, dtype=np.float64)
        if t.ndim != 3 or len(set(t.shape)) != 1:
            raise ValueError(f"expected a cubic (d, d, d) array, got shape {t.shape}")
        if not np.all(np.isfinite(t)):
            raise ValueError("tensor entries must be finite")
        object.__setattr__(self, "entries", t)
        t.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def slab(self, j: int, m: int) -> np.ndarray:
        """The mode-0 fiber T[:, j, m]."""
        return self.entries[:, j, m]

    def symmetry_error(self) -> float:
        """Max absolute deviation from full index-permutation symmetry."""
        t = self.entries
        err = 0.0
        for axes in ((0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)):
            err = max(err, float(np.max(np.abs(t - np.transpose(t, axes)))))
        return err

    @classmethod
    def from_array(cls, entries, tol: float = 1e-9) -> "SymTensor3":
        """Wrap ``entries``, requiring symmetry within ``tol``."""
        t = cls(entries)
        err = t.symmetry_error()
        if err > tol:
            raise ValueError(f"tensor is not symmetric: max asymmetry {err:.3e} > {tol:.1e}")
        return t


def component_log_densities(x, params: GmmParams) -> np.ndarray:
    """Per-component log of pi_k * phi(x; mu_k, scale_k) for each sample.

    ``x`` may be a single point (d,) or a batch (N, d); the result is (N, K).
    """
    x = _as_matrix(x, "x")
    if x.shape[1] != params.d:
        raise ValueError(f"point dimension {x.shape[1]} != params dimension {params.d}")
    diff = x[:, None, :] - params.means[None, :, :]  # (N, K, d)
    if params.scales is None:
        quad = np.sum(diff * diff, axis=2)
        log_norm = 0.5 * params.d * LOG_2PI
    else:
        z = diff / params.scales[None, :, :]
        quad = np.sum(z * z, axis=2)
        log_norm = 0.5 * params.d * LOG_2PI + np.sum(np.log(params.scales), axis=1)[None, :]
    with np.errstate(divide="ignore"):
        log_w = np.log(params.weights)[None, :]
    return log_w - 0.5 * quad - log_norm


def logsumexp_rows(a: np.ndarray) -> np.ndarray:
    """Stable log(sum(exp(a), axis=-1)); tolerates -inf entries."""
    m = np.max(a, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.squeeze(m, -1) + np.log(np.sum(np.exp(a - m), axis=-1))


def gmm_log_density(x, params: GmmParams):
    """log p(x | params) for a single point (d,) or batch (N, d).

    Returns a scalar for a single point, an (N,) array for a batch.
    """
    single = np.asarray(x).ndim == 1
    out = logsumexp_rows(component_log_densities(x, params))
    return float(out[0]) if single else out


def validate_params(params: GmmParams) -> list[str]:
    """Return every violated GmmParams invariant; empty list means valid."""
    violations = []
    w, mu = params.weights, params.means
    if w.ndim != 1 or w.shape[0] < 1:
        violations.append("weights must be a nonempty vector")
        return violations
    if mu.shape[0] != w.shape[0]:
        violations.append(f"means count {mu.shape[0]} != weights count {w.shape[0]}")
    if mu.shape[1] < 1:
        violations.append("mean dimension must be >= 1")
    if not np.all(np.isfinite(w)) or not np.all(np.isfinite(mu)):
        violations.append("non-finite entries")
    if abs(float(np.sum(w)) - 1.0) > 1e-12:
        violations.append(f"weights sum != 1 (sum = {float(np.sum(w))!r})")
    if np.any(w <= 0.0) or np.any(w > 1.0):
        # open upper end is unattainable for K = 1, where the sum constraint
        # forces the single weight to be exactly 1
        violations.append("every weight must lie in (0, 1]")
    if params.scales is not None:
        s = params.scales
        if s.shape != mu.shape:
            violations.append(f"scales shape {s.shape} != means shape {mu.shape}")
        elif not np.all(np.isfinite(s)):
            violations.append("non-finite scale")
        elif np.any(s <= 0.0):
            violations.append("nonpositive scale")
    return violations


def require_valid(params: GmmParams) -> GmmParams:
    """Raise ValueError listing violations if ``params`` is invalid."""
    violations = validate_params(params)
    if violations:
        raise ValueError("invalid mixture parameters: " + "; ".join(violations))
    return params
