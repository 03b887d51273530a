"""Method-of-moments estimation via whitening and tensor power iteration.

Pipeline: second/third empirical moments -> rank-K whitening of the second
moment -> robust power-iteration decomposition of the whitened third
moment -> component weights and means from the recovered eigenpairs.
Requires K <= d; a rank error surfaces otherwise instead of a silently
wrong estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DecompositionFailureError,
    GmmParams,
    RankDeficiencyError,
    SymTensor3,
)

RANK_TOL = 1e-8
DEGENERATE_NORM = 1e-14
_CHUNK = 8192


def empirical_moments(data) -> tuple[np.ndarray, SymTensor3]:
    """Second and third moment statistics of the isotropic mixture.

    M2 = mean(x x^T) - I and M3 = mean(x^(x3)) minus the Gaussian correction
    sum_j (m (x) e_j (x) e_j + e_j (x) m (x) e_j + e_j (x) e_j (x) m) with m
    the sample mean. Both have the component means as their population
    low-rank structure. M3 is explicitly symmetrized to kill round-off
    asymmetry from the blocked accumulation.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("data must be a nonempty (N, d) matrix")
    n, d = x.shape
    m2 = (x.T @ x) / n - np.eye(d)

    m3 = np.zeros((d, d, d))
    for lo in range(0, n, _CHUNK):
        chunk = x[lo : lo + _CHUNK]
        outer = chunk[:, :, None] * chunk[:, None, :]  # (c, d, d)
        m3 += (chunk.T @ outer.reshape(chunk.shape[0], d * d)).reshape(d, d, d)
    m3 /= n

    mean = x.mean(axis=0)
    idx = np.arange(d)
    m3[:, idx, idx] -= mean[:, None]
    m3[idx, :, idx] -= mean[None, :]
    m3[idx, idx, :] -= mean[None, :]

    m3 = (
        m3
        + np.transpose(m3, (0, 2, 1))
        + np.transpose(m3, (1, 0, 2))
        + np.transpose(m3, (1, 2, 0))
        + np.transpose(m3, (2, 0, 1))
        + np.transpose(m3, (2, 1, 0))
    ) / 6.0
    return m2, SymTensor3(m3)


def population_moments(params: GmmParams) -> tuple[np.ndarray, SymTensor3]:
    """Noise-free targets sum_k pi_k mu_k mu_k^T and sum_k pi_k mu_k^(x3)."""
    w, mu = params.weights, params.means
    m2 = (mu.T * w) @ mu
    m3 = np.einsum("k,ki,kj,km->ijm", w, mu, mu, mu)
    return m2, SymTensor3(m3)


@dataclass(frozen=True)
class WhiteningPair:
    """Rank-K whitening of the second moment: W^T M2 W = I_K, B^T W = I_K."""

    w: np.ndarray  # (d, K), U D^{-1/2}
    b: np.ndarray  # (d, K), U D^{1/2}
    singular_values: np.ndarray  # (K,), the retained spectrum


def whiten(m2, k: int, rank_tol: float = RANK_TOL) -> WhiteningPair:
    """Top-K eigenpair whitening of the (symmetrized) second moment."""
    m2 = np.asarray(m2, dtype=np.float64)
    d = m2.shape[0]
    if m2.shape != (d, d):
        raise ValueError("m2 must be square")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > d:
        raise RankDeficiencyError(
            f"requested rank {k} exceeds dimension {d}; the moment method needs K <= d"
        )
    sym = 0.5 * (m2 + m2.T)
    evals, evecs = np.linalg.eigh(sym)
    order = np.argsort(evals)[::-1]
    top = evals[order[:k]]
    if top[-1] <= rank_tol:
        raise RankDeficiencyError(
            f"{k}-th eigenvalue {top[-1]:.3e} <= rank_tol {rank_tol:.1e}; "
            f"effective rank is below {k}"
        )
    u = evecs[:, order[:k]]
    root = np.sqrt(top)
    return WhiteningPair(w=u / root, b=u * root, singular_values=top)


@dataclass(frozen=True)
class EigenPair:
    """One recovered (eigenvalue, unit eigenvector) of the whitened tensor."""

    value: float
    vector: np.ndarray


def tensor_apply(t: SymTensor3, a, b, c):
    """Multilinear contraction T(a, b, c) with b, c vectors.

    ``a`` may be a (d, p) matrix (returns a length-p vector; the identity
    gives T(I, v, v) = sum_{j,m} v_j v_m T[:, j, m]), a vector (returns the
    scalar form), or None as shorthand for the identity.
    """
    d = t.dim
    b = np.asarray(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if b.shape != (d,) or c.shape != (d,):
        raise ValueError(f"b and c must be length-{d} vectors")
    fiber = (t.entries @ c) @ b  # sum_{j,m} T[:, j, m] b_j c_m
    if a is None:
        return fiber
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        if a.shape != (d,):
            raise ValueError(f"a must have leading dimension {d}")
        return float(a @ fiber)
    if a.ndim == 2 and a.shape[0] == d:
        return a.T @ fiber
    raise ValueError(f"a must be a length-{d} vector or a ({d}, p) matrix")


def _power_trajectory(t, v, iters):
    """Run ``iters`` normalized power iterations; None signals collapse."""
    for _ in range(iters):
        v = tensor_apply(t, None, v, v)
        norm = np.linalg.norm(v)
        if norm < DEGENERATE_NORM:
            return None
        v = v / norm
    return v


def _random_unit(rng, d):
    while True:
        v = rng.standard_normal(d)
        norm = np.linalg.norm(v)
        if norm > DEGENERATE_NORM:
            return v / norm


def robust_tensor_decompose(
    t: SymTensor3,
    k: int,
    restarts: int = 20,
    iters: int = 50,
    rng: np.random.Generator | None = None,
) -> list[EigenPair]:
    """Extract k eigenpairs by restarted power iteration with deflation.

    Per deflation round: ``restarts`` trajectories of ``iters`` normalized
    iterations each; the trajectory maximizing T(v, v, v) gets ``iters``
    polishing iterations; the eigenvalue is read off as T(v, v, v) and the
    rank-one piece is subtracted. Eigenvalues are canonicalized positive by
    flipping (value, vector) -> (-value, -vector), which leaves the
    rank-one term value * v^(x3) unchanged.
    """
    if k < 1 or restarts < 1 or iters < 1:
        raise ValueError("k, restarts and iters must all be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    work = np.array(t.entries)
    pairs: list[EigenPair] = []
    for _ in range(k):
        tensor = SymTensor3(work)
        best_v, best_val = None, -np.inf
        for _ in range(restarts):
            v = None
            for _ in range(5):  # redraw a collapsed trajectory a few times
                v = _power_trajectory(tensor, _random_unit(rng, t.dim), iters)
                if v is not None:
                    break
            if v is None:
                continue
            val = tensor_apply(tensor, v, v, v)
            if val > best_val:
                best_val, best_v = val, v
        if best_v is None:
            raise DecompositionFailureError(
                f"all {restarts} restarts collapsed after {len(pairs)} deflation rounds"
            )
        polished = _power_trajectory(tensor, best_v, iters)
        if polished is not None:
            best_v = polished
        lam = float(tensor_apply(tensor, best_v, best_v, best_v))
        if lam < 0.0:
            lam, best_v = -lam, -best_v
        pairs.append(EigenPair(lam, best_v))
        work = work - lam * np.einsum("i,j,m->ijm", best_v, best_v, best_v)
    return pairs


def whitened_third_moment(m3: SymTensor3, w: np.ndarray) -> SymTensor3:
    """T_tilde = M3(W, W, W), the K x K x K whitened tensor."""
    t = np.tensordot(m3.entries, w, axes=([0], [0]))  # (d, d, K)
    t = np.tensordot(t, w, axes=([0], [0]))  # (d, K, K)
    t = np.tensordot(t, w, axes=([0], [0]))  # (K, K, K)
    return SymTensor3(t)


def spectral_estimate(
    data,
    k: int,
    restarts: int = 20,
    iters: int = 50,
    rng: np.random.Generator | None = None,
) -> GmmParams:
    """Full moment pipeline: weights lambda^-2 (renormalized to the simplex,
    since finite-sample eigenvalues need not satisfy it exactly) and means
    lambda * B v."""
    m2, m3 = empirical_moments(data)
    pair = whiten(m2, k)
    t = whitened_third_moment(m3, pair.w)
    eigenpairs = robust_tensor_decompose(t, k, restarts=restarts, iters=iters, rng=rng)
    lam = np.array([p.value for p in eigenpairs])
    vecs = np.stack([p.vector for p in eigenpairs])  # (K, K)
    lam = np.maximum(lam, DEGENERATE_NORM)
    weights = lam**-2
    weights = weights / weights.sum()
    means = (pair.b @ (lam[:, None] * vecs).T).T  # mu_k = lam_k B v_k
    return GmmParams(weights, means)
