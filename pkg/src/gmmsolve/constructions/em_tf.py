"""EM unrolled into explicit softmax-attention transformer weights.

Tokens are data points augmented with parameter and bookkeeping slots.
With capacity (d0, k0) a token column is laid out as

    [ x | pi_log | mu | c | w | w_log | pi | 1 | e ]

where x is the zero-padded data point (d0 rows), pi_log / mu / c carry the
current parameter state (log weights, the component mean assigned to this
token, its squared norm), w / w_log hold responsibilities and their logs,
pi is the weight-update scratch slot, the constant-1 row feeds bias terms,
and e is the token's component indicator. Token i is assigned component
i mod K, so each component owns exactly N/K tokens (N is truncated to a
multiple of K).

One EM iteration is two layers:

* E-step layer: a single softmax head with query [x; pi_log; 1] and key
  [mu; e; -c/2] produces logits x.mu + log(pi) - ||mu||^2/2, exactly the
  posterior exponent up to a query-constant shift, so the softmax over the
  N tokens aggregates (through a value head writing e into the w slot) to
  the exact responsibilities. The MLP then writes log(w) into w_log via
  the piecewise-ReLU log and clears the consumed parameter slots.

* M-step layer: head 1 queries by component indicator against w_log keys,
  so its softmax re-normalizes responsibilities per component and its
  x-valued sum lands the new means in the mu slot; head 2 has zero
  query/key (uniform weights) and averages w into the pi slot, the new
  mixing weights. The MLP refreshes pi_log and c (piecewise log / square)
  and clears scratch; the final layer keeps pi for the readout.

The only inexactness anywhere is the piecewise log/square approximators;
attention arithmetic is exact. One weight set built at (d0, k0) runs any
task with d <= d0, K <= k0 unchanged: the readout alone is task-shaped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import CapacityError, GmmParams
from ..relu_approx import build_relu_approx
from ..transformer import (
    AttnHead,
    ClearRows,
    PiecewiseWrite,
    Readout,
    SlotMlp,
    TfLayer,
    TfWeights,
    attention_forward,
    attentive_pool_readout,
)


@dataclass(frozen=True)
class EmTfConfig:
    """Capacity and approximation budget of the compiled EM transformer.

    ``log_range`` is the A of the log approximator: values below 1/A floor
    at -log A, so it bounds how small a responsibility is resolved before
    clamping. ``square_range`` bounds the mean coordinates the squared-norm
    approximator covers. Both are fixed at build time (not task-derived) so
    one weight set serves every task within capacity.
    """

    d0: int
    k0: int
    layers: int = 10
    delta: float = 1e-4
    log_range: float = 1e8
    square_range: float = 16.0

    def __post_init__(self):
        if self.d0 < 1 or self.k0 < 1:
            raise ValueError("d0 and k0 must be >= 1")
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must lie in (0, 1)")
        if self.log_range <= 1.0 or self.square_range <= 1.0:
            raise ValueError("approximator ranges must exceed 1")


@dataclass(frozen=True)
class EmSlotLayout:
    """Row indices of every token slot for capacity (d0, k0)."""

    d0: int
    k0: int

    @property
    def x(self) -> slice:
        return slice(0, self.d0)

    @property
    def pi_log(self) -> slice:
        return slice(self.d0, self.d0 + self.k0)

    @property
    def mu(self) -> slice:
        return slice(self.d0 + self.k0, 2 * self.d0 + self.k0)

    @property
    def c(self) -> int:
        return 2 * self.d0 + self.k0

    @property
    def w(self) -> slice:
        base = 2 * self.d0 + self.k0 + 1
        return slice(base, base + self.k0)

    @property
    def w_log(self) -> slice:
        base = 2 * self.d0 + 2 * self.k0 + 1
        return slice(base, base + self.k0)

    @property
    def pi(self) -> slice:
        base = 2 * self.d0 + 3 * self.k0 + 1
        return slice(base, base + self.k0)

    @property
    def flag(self) -> int:
        return 2 * self.d0 + 4 * self.k0 + 1

    @property
    def e(self) -> slice:
        base = 2 * self.d0 + 4 * self.k0 + 2
        return slice(base, base + self.k0)

    @property
    def dim(self) -> int:
        return 2 * self.d0 + 5 * self.k0 + 2

    def rows(self, s: slice) -> list[int]:
        return list(range(s.start, s.stop))


def encode_em_input(data, init: GmmParams, cfg: EmTfConfig) -> np.ndarray:
    """Tokenize a task: one column per retained data point.

    N is truncated to K * floor(N / K); raises CapacityError when the task
    exceeds (d0, k0) and ValueError when fewer than K samples remain.
    """
    data = np.asarray(data, dtype=np.float64)
    n, d = data.shape
    k = init.k
    if d > cfg.d0 or k > cfg.k0:
        raise CapacityError(f"task (d={d}, K={k}) exceeds capacity (d0={cfg.d0}, k0={cfg.k0})")
    if init.d != d:
        raise ValueError("init dimension does not match data")
    n_used = k * (n // k)
    if n_used < 1:
        raise ValueError(f"need at least K={k} samples, got {n}")
    lay = EmSlotLayout(cfg.d0, cfg.k0)
    comp = np.arange(n_used) % k

    h = np.zeros((lay.dim, n_used))
    h[lay.x][:d] = data[:n_used].T
    h[lay.pi_log][:k] = np.log(init.weights)[:, None]
    h[lay.mu][:d] = init.means[comp].T
    h[lay.c] = np.sum(init.means[comp] ** 2, axis=1)
    h[lay.flag] = 1.0
    h[lay.e][comp, np.arange(n_used)] = 1.0
    return h


def _selector(dim: int, dst, src) -> np.ndarray:
    """Matrix routing token rows ``src`` to projected coordinates ``dst``."""
    m = np.zeros((dim, dim))
    m[dst, src] = 1.0
    return m


def build_em_tf_weights(cfg: EmTfConfig) -> TfWeights:
    """Compile the 2L-layer backbone; the readout is built per task."""
    lay = EmSlotLayout(cfg.d0, cfg.k0)
    dim = lay.dim
    log_fn = build_relu_approx("log", cfg.log_range, cfg.delta)
    square_fn = build_relu_approx("square", cfg.square_range, cfg.delta)

    # E-step attention: logits x.mu + log pi - ||mu||^2 / 2
    q_e = np.zeros((dim, dim))
    q_e[range(cfg.d0), lay.rows(lay.x)] = 1.0
    q_e[range(cfg.d0, cfg.d0 + cfg.k0), lay.rows(lay.pi_log)] = 1.0
    q_e[cfg.d0 + cfg.k0, lay.flag] = 1.0
    k_e = np.zeros((dim, dim))
    k_e[range(cfg.d0), lay.rows(lay.mu)] = 1.0
    k_e[range(cfg.d0, cfg.d0 + cfg.k0), lay.rows(lay.e)] = 1.0
    k_e[cfg.d0 + cfg.k0, lay.c] = -0.5
    v_e = _selector(dim, lay.rows(lay.w), lay.rows(lay.e))
    e_attn = (AttnHead(q_e, k_e, v_e),)

    e_mlp = SlotMlp(
        dim=dim,
        flag_row=lay.flag,
        ops=tuple(
            PiecewiseWrite((lay.w.start + t,), lay.w_log.start + t, log_fn)
            for t in range(cfg.k0)
        )
        + (ClearRows(tuple(lay.rows(lay.pi_log) + lay.rows(lay.mu) + [lay.c])),),
    )

    # M-step attention: head 1 renormalizes responsibilities per component
    # and averages the data; head 2 averages w uniformly into pi.
    q_m1 = _selector(dim, range(cfg.k0), lay.rows(lay.e))
    k_m1 = _selector(dim, range(cfg.k0), lay.rows(lay.w_log))
    v_m1 = _selector(dim, lay.rows(lay.mu), lay.rows(lay.x))
    zero = np.zeros((dim, dim))
    v_m2 = _selector(dim, lay.rows(lay.pi), lay.rows(lay.w))
    m_attn = (AttnHead(q_m1, k_m1, v_m1), AttnHead(zero, zero, v_m2))

    def m_mlp(last: bool) -> SlotMlp:
        clears = lay.rows(lay.w) + lay.rows(lay.w_log)
        if not last:
            clears += lay.rows(lay.pi)
        ops = tuple(
            PiecewiseWrite((lay.pi.start + t,), lay.pi_log.start + t, log_fn)
            for t in range(cfg.k0)
        )
        ops += (PiecewiseWrite(tuple(lay.rows(lay.mu)), lay.c, square_fn),)
        ops += (ClearRows(tuple(clears)),)
        return SlotMlp(dim=dim, flag_row=lay.flag, ops=ops)

    layers = []
    for step in range(cfg.layers):
        layers.append(TfLayer(e_attn, "softmax", e_mlp))
        layers.append(TfLayer(m_attn, "softmax", m_mlp(last=step == cfg.layers - 1)))
    return TfWeights(tuple(layers))


def build_em_readout(cfg: EmTfConfig, k: int, d: int) -> Readout:
    """Task-shaped linear attentive pooling: column i of the pooled output
    is [pi_hat; mu_hat_i]. Keys expose the component indicator, queries are
    K e_i, values expose [pi; mu], and with N/K tokens per component the
    1/N mean pooling collapses to an exact selection."""
    lay = EmSlotLayout(cfg.d0, cfg.k0)
    rows = d + k
    v_o = np.zeros((rows, lay.dim))
    v_o[range(k), lay.rows(lay.pi)[:k]] = 1.0
    v_o[range(k, rows), lay.rows(lay.mu)[:d]] = 1.0
    k_o = np.zeros((rows, lay.dim))
    k_o[range(k), lay.rows(lay.e)[:k]] = 1.0
    q_o = np.zeros((rows, k))
    q_o[range(k), range(k)] = float(k)
    return Readout(v_o=v_o, k_o=k_o, q_o=q_o, pooling="linear-mean")


def params_from_tokens(h: np.ndarray, cfg: EmTfConfig, k: int, d: int) -> GmmParams:
    """Read the mixture estimate straight out of the token slots (token t
    carries component t's mean for t < K; all tokens share pi)."""
    lay = EmSlotLayout(cfg.d0, cfg.k0)
    weights = h[lay.pi, 0][:k]
    means = h[lay.mu, :k][:d].T
    return GmmParams(weights, means)


def run_tf_em(
    data,
    k: int,
    init: GmmParams,
    cfg: EmTfConfig,
    weights: TfWeights | None = None,
) -> tuple[GmmParams, list[GmmParams]]:
    """Encode, run the compiled transformer, decode via the linear readout.

    Returns the final estimate and one snapshot per unrolled EM iteration
    (read from the token slots right after each M-step attention, where
    both the fresh means and the fresh weights are present). Passing
    ``weights`` reuses a previously built backbone, which must match cfg.
    """
    data = np.asarray(data, dtype=np.float64)
    if init.k != k:
        raise ValueError(f"init has {init.k} components, expected {k}")
    if cfg.layers == 0:
        return init, []
    h = encode_em_input(data, init, cfg)
    if weights is None:
        weights = build_em_tf_weights(cfg)
    d = data.shape[1]
    snapshots: list[GmmParams] = []
    for idx, layer in enumerate(weights.layers):
        h = attention_forward(h, layer.heads, layer.activation)
        if idx % 2 == 1:  # M-step layer: estimate is live before the MLP cleans
            snapshots.append(params_from_tokens(h, cfg, k, d))
        if layer.mlp is not None:
            h = layer.mlp.apply(h)
    final = attentive_pool_readout(h, build_em_readout(cfg, k, d), k, d)
    return final, snapshots
