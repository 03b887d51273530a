"""Cubic tensor power iteration as exact ReLU-attention weights.

The iterate update v <- T(I, v, v) is a two-dimensional contraction; the
trick is to spend attention heads on one tensor mode while the query-key
product handles another. Token j carries the stacked fibers
[T[:, j, 1]; ...; T[:, j, d0]] plus the shared iterate v, its indicator
e_j, a constant 1, the token count d, and one scratch row:

* layer A (1 logical head): query e_i against key v gives logit v_i, the
  value reads the token's d entry, and the 1/d attention factor leaves
  exactly d * v_i in the scratch row of token i.
* layer B (d0 + 1 logical heads): head m pairs query v_m with key
  d * v_j (the scratch row) and value T[:, j, m], so summing heads and
  tokens accumulates sum_{j,m} v_m v_j T[:, j, m] = T(I, v, v) into the v
  slot; the extra head (constant query/key, value -v) removes the old
  iterate that the residual stream kept. The MLP clears the scratch row.

Every logical head is emitted as a pair of ReLU heads with negated query
and value, so relu(x) - relu(-x) = x makes the linear-attention algebra
hold exactly: the whole construction is exact to rounding, and one weight
set works for every d <= d0 (all the d-dependence rides on the tokens).
Iterates are deliberately unnormalized; the optional normalized mode
rescales the v slot between iterations to emulate the classical power
iteration update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import CapacityError, IterateOverflowError, SymTensor3
from ..transformer import (
    AttnHead,
    ClearRows,
    DenseMlp,
    SlotMlp,
    TfLayer,
    TfWeights,
    layer_forward,
)

OVERFLOW_GUARD = 1e100


@dataclass(frozen=True)
class TensorSlotLayout:
    """Row indices of every token slot for capacity d0."""

    d0: int

    @property
    def t(self) -> slice:
        return slice(0, self.d0 * self.d0)

    def t_block(self, m: int) -> slice:
        return slice(m * self.d0, (m + 1) * self.d0)

    @property
    def v(self) -> slice:
        return slice(self.d0 * self.d0, self.d0 * self.d0 + self.d0)

    @property
    def e(self) -> slice:
        base = self.d0 * self.d0 + self.d0
        return slice(base, base + self.d0)

    @property
    def flag(self) -> int:
        return self.d0 * self.d0 + 2 * self.d0

    @property
    def count(self) -> int:
        return self.d0 * self.d0 + 2 * self.d0 + 1

    @property
    def scratch(self) -> int:
        return self.d0 * self.d0 + 2 * self.d0 + 2

    @property
    def dim(self) -> int:
        return self.d0 * self.d0 + 2 * self.d0 + 3

    def rows_v(self) -> list[int]:
        return list(range(self.v.start, self.v.stop))

    def rows_e(self) -> list[int]:
        return list(range(self.e.start, self.e.stop))

    def rows_t_block(self, m: int) -> list[int]:
        block = self.t_block(m)
        return list(range(block.start, block.stop))


def encode_tensor_input(t: SymTensor3, v0, d0: int) -> np.ndarray:
    """d tokens, one per tensor column index; see the module docstring."""
    d = t.dim
    if d > d0:
        raise CapacityError(f"tensor dimension {d} exceeds capacity d0={d0}")
    v0 = np.asarray(v0, dtype=np.float64)
    if v0.shape != (d,):
        raise ValueError(f"v0 must be a length-{d} vector")
    if not np.all(np.isfinite(v0)):
        raise ValueError("v0 must be finite")
    lay = TensorSlotLayout(d0)
    h = np.zeros((lay.dim, d))
    for m in range(d):
        h[lay.t_block(m)][:d] = t.entries[:, :, m]  # block m, token j: T[:, j, m]
    h[lay.v][:d] = v0[:, None]
    h[lay.e][range(d), range(d)] = 1.0
    h[lay.flag] = 1.0
    h[lay.count] = float(d)
    return h


def _relu_pair(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> tuple[AttnHead, AttnHead]:
    """Two ReLU heads realizing sigma(x) = x via relu(x) - relu(-x)."""
    return AttnHead(q, k, v), AttnHead(-q, k, -v)


def build_tensor_power_tf(d0: int, layers: int) -> TfWeights:
    """Compile ``layers`` power iterations into a 2*layers-layer ReLU
    transformer (2 heads in the A layers, 2(d0 + 1) in the B layers)."""
    if d0 < 1 or layers < 1:
        raise ValueError("d0 and layers must be >= 1")
    lay = TensorSlotLayout(d0)
    dim = lay.dim

    q_a = np.zeros((dim, dim))
    q_a[range(d0), lay.rows_e()] = 1.0
    k_a = np.zeros((dim, dim))
    k_a[range(d0), lay.rows_v()] = 1.0
    v_a = np.zeros((dim, dim))
    v_a[lay.scratch, lay.count] = 1.0
    layer_a = TfLayer(
        _relu_pair(q_a, k_a, v_a),
        "relu-scaled",
        DenseMlp(np.zeros((1, dim)), np.zeros((dim, 1))),
    )

    heads_b: list[AttnHead] = []
    for m in range(d0):
        q = np.zeros((dim, dim))
        q[0, lay.v.start + m] = 1.0
        k = np.zeros((dim, dim))
        k[0, lay.scratch] = 1.0
        v = np.zeros((dim, dim))
        v[lay.rows_v(), lay.rows_t_block(m)] = 1.0
        heads_b.extend(_relu_pair(q, k, v))
    q = np.zeros((dim, dim))
    q[0, lay.flag] = 1.0
    k = np.zeros((dim, dim))
    k[0, lay.flag] = 1.0
    v = np.zeros((dim, dim))
    v[lay.rows_v(), lay.rows_v()] = -1.0
    heads_b.extend(_relu_pair(q, k, v))
    layer_b = TfLayer(
        tuple(heads_b),
        "relu-scaled",
        SlotMlp(dim=dim, flag_row=lay.flag, ops=(ClearRows((lay.scratch,)),)),
    )

    return TfWeights(tuple([layer_a, layer_b] * layers))


def run_tf_tensor_power(
    t: SymTensor3,
    v0,
    d0: int,
    layers: int,
    normalized: bool = False,
    weights: TfWeights | None = None,
) -> np.ndarray:
    """Run ``layers`` compiled iterations; returns the (layers, d) iterate
    sequence read from the v slot after every second layer.

    Raw mode reproduces the unnormalized update chain (iterates grow
    cubically; magnitudes beyond 1e100 abort with IterateOverflowError).
    Normalized mode rescales the v slot to unit norm between iterations,
    matching the classical power iteration trajectory.
    """
    d = t.dim
    h = encode_tensor_input(t, v0, d0)
    if weights is None:
        weights = build_tensor_power_tf(d0, layers)
    if len(weights.layers) < 2 * layers:
        raise ValueError(f"weights provide {len(weights.layers)} layers, need {2 * layers}")
    lay = TensorSlotLayout(d0)
    iterates = np.zeros((layers, d))
    for step in range(layers):
        h = layer_forward(h, weights.layers[2 * step])
        h = layer_forward(h, weights.layers[2 * step + 1])
        v = h[lay.v, 0][:d].copy()
        if np.max(np.abs(v)) > OVERFLOW_GUARD:
            raise IterateOverflowError(
                f"iterate magnitude exceeded {OVERFLOW_GUARD:.0e} at step {step + 1}"
            )
        if normalized:
            norm = np.linalg.norm(v)
            if norm > 0.0:
                v = v / norm
                h[lay.v][:d] = v[:, None]
        iterates[step] = v
    return iterates
