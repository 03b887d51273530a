"""Synthetic GMM task generation.

Tasks are drawn the way the benchmark protocol prescribes: the component
count comes uniformly from an admissible set, means are uniform on a cube
and rejection-filtered to a maximum pairwise cosine similarity, mixing
weights are uniform draws renormalized to the simplex, and the sample size
is uniform on the integer range [ceil(n_max/2), n_max].

Reproducibility: all randomness flows through ``numpy.random.Generator``
instances. Helpers below build them on the Philox4x64 counter-based bit
generator, with one independent stream per task derived from the 64-bit
pair ``key = (seed, task_index)``. Given the same seed, task index and
library code, generated tasks are bit-identical across runs and platforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import GmmParams, SamplingExhaustedError, Task, require_valid

MAX_MEAN_DRAWS = 100_000


@dataclass(frozen=True)
class SamplerConfig:
    """Sampling distributions for synthetic GMM tasks."""

    d: int
    k_set: tuple[int, ...] = (2, 3, 4, 5)
    mean_box: float = 5.0
    cos_threshold: float = 0.8
    weight_range: tuple[float, float] = (0.2, 0.8)
    n_max: int = 128
    anisotropic: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "k_set", tuple(int(k) for k in self.k_set))
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not self.k_set or min(self.k_set) < 1:
            raise ValueError("k_set must contain positive component counts")
        if not (0.0 < self.cos_threshold <= 1.0):
            raise ValueError("cos_threshold must lie in (0, 1]")
        lo, hi = self.weight_range
        if not (0.0 < lo < hi < 1.0):
            raise ValueError("weight_range must satisfy 0 < lo < hi < 1")
        if self.n_max < 2:
            raise ValueError("n_max must be >= 2")


def make_rng(seed: int) -> np.random.Generator:
    """Root generator for a run (Philox4x64, key = (seed, 0))."""
    return task_rng(seed, 0)

def task_rng(seed: int, index: int) -> np.random.Generator:
    """Independent per-task stream: Philox keyed by the (seed, index) pair."""
    key = np.array([seed, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _max_pairwise_cosine(means: np.ndarray) -> float:
    norms = np.linalg.norm(means, axis=1)
    norms = np.where(norms > 0.0, norms, 1.0)  # zero vectors count as cosine 0
    unit = means / norms[:, None]
    g = unit @ unit.T
    k = means.shape[0]
    if k < 2:
        return -1.0
    return float(np.max(g[np.triu_indices(k, k=1)]))


def sample_means(d: int, k: int, config: SamplerConfig, rng: np.random.Generator) -> np.ndarray:
    """Uniform means on [-mean_box, mean_box]^d, rejecting whole sets whose
    maximum pairwise cosine similarity exceeds the threshold.

    The entire set is resampled on violation so accepted sets are exact
    draws from the conditioned distribution.
    """
    if d < 1 or k < 1:
        raise ValueError("d and k must be >= 1")
    box = config.mean_box
    for _ in range(MAX_MEAN_DRAWS):
        means = rng.uniform(-box, box, size=(k, d))
        if k == 1 or _max_pairwise_cosine(means) <= config.cos_threshold:
            return means
    raise SamplingExhaustedError(
        f"no mean set with pairwise cosine <= {config.cos_threshold} "
        f"found in {MAX_MEAN_DRAWS} draws (d={d}, k={k})"
    )


def sample_mixing(k: int, config: SamplerConfig, rng: np.random.Generator) -> np.ndarray:
    """k uniform draws on weight_range, normalized to a probability vector."""
    if k < 1:
        raise ValueError("k must be >= 1")
    lo, hi = config.weight_range
    raw = rng.uniform(lo, hi, size=k)
    return raw / raw.sum()


def sample_gmm_data(
    params: GmmParams, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw n points from the mixture; returns (data, component labels)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    labels = rng.choice(params.k, size=n, p=params.weights)
    z = rng.standard_normal(size=(n, params.d))
    if params.scales is not None:
        z = z * params.scales[labels]
    return params.means[labels] + z, labels


def perturb_means(params: GmmParams, sigma_p: float, rng: np.random.Generator) -> GmmParams:
    """Shift every component mean by sigma_p times an independent standard
    normal vector; weights and scales are untouched."""
    if sigma_p < 0:
        raise ValueError("sigma_p must be >= 0")
    eps = rng.standard_normal(size=params.means.shape)
    return GmmParams(params.weights, params.means + sigma_p * eps, params.scales)


def _sample_scales(k: int, d: int, rng: np.random.Generator) -> np.ndarray:
    # softplus of uniform [-1, 1] draws, per component and dimension
    raw = rng.uniform(-1.0, 1.0, size=(k, d))
    return np.log1p(np.exp(raw))


def sample_task(config: SamplerConfig, rng: np.random.Generator) -> Task:
    """Draw one complete task: K, means, weights, (scales), N, then the data."""
    k = int(rng.choice(np.asarray(config.k_set)))
    means = sample_means(config.d, k, config, rng)
    weights = sample_mixing(k, config, rng)
    scales = _sample_scales(k, config.d, rng) if config.anisotropic else None
    truth = require_valid(GmmParams(weights, means, scales))
    n_lo = int(np.ceil(config.n_max / 2))
    n = int(rng.integers(n_lo, config.n_max + 1))
    data, labels = sample_gmm_data(truth, n, rng)
    return Task(data=data, truth=truth, k=k, labels=labels)


def task_to_dict(task: Task) -> dict:
    """JSON-ready form: {d, k, weights, means, scales?, data}."""
    out = {
        "d": task.d,
        "k": task.k,
        "weights": task.truth.weights.tolist(),
        "means": task.truth.means.tolist(),
        "data": task.data.tolist(),
    }
    if task.truth.scales is not None:
        out["scales"] = task.truth.scales.tolist()
    return out


def task_from_dict(obj: dict) -> Task:
    truth = GmmParams(
        np.asarray(obj["weights"], dtype=np.float64),
        np.asarray(obj["means"], dtype=np.float64),
        None if obj.get("scales") is None else np.asarray(obj["scales"], dtype=np.float64),
    )
    task = Task(data=np.asarray(obj["data"], dtype=np.float64), truth=truth, k=int(obj["k"]))
    if task.d != int(obj["d"]):
        raise ValueError(f"declared d={obj['d']} does not match data dimension {task.d}")
    return task


def dump_tasks(tasks: list[Task], fp) -> None:
    json.dump([task_to_dict(t) for t in tasks], fp)


def load_tasks(fp) -> list[Task]:
    return [task_from_dict(obj) for obj in json.load(fp)]
