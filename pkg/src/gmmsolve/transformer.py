"""Generic transformer forward pass on column-token matrices.

Tokens are columns of a D x N float64 matrix H. A layer is a residual
multi-head attention step followed by a residual token-wise MLP:

    attention (softmax):     H + sum_m (V_m H) softmax_cols((K_m H)^T (Q_m H))
    attention (relu-scaled): H + (1/N) sum_m (V_m H) relu((K_m H)^T (Q_m H))
    mlp:                     H + W2 relu(W1 H)

Softmax normalizes over keys for each query column and is always computed
with max-subtraction, so arbitrarily large logits are safe. The two
attention activations are distinct tags on the layer, never inferred; note
only the ReLU variant carries the 1/N factor.

There is no training here: weights are either hand-built (the compiled
algorithm constructions) or loaded from the serialized format below.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from .core import GmmParams
from .relu_approx import ReluScalarApprox, build_relu_approx

ACTIVATIONS = ("softmax", "relu-scaled")
POOLINGS = ("softmax", "linear-mean")

WEIGHTS_FORMAT = "gmmsolve-tf-weights"
WEIGHTS_VERSION = 1


def as_token_matrix(h) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 1 or h.shape[1] < 1:
        raise ValueError(f"token matrix must be 2-D and nonempty, got shape {h.shape}")
    if not np.all(np.isfinite(h)):
        raise ValueError("token matrix contains non-finite entries")
    return h


def softmax_columns(scores: np.ndarray) -> np.ndarray:
    """Column-wise stabilized softmax; every column sums to exactly sum=1
    up to rounding regardless of logit magnitude."""
    m = np.max(scores, axis=0, keepdims=True)
    e = np.exp(scores - m)
    return e / np.sum(e, axis=0, keepdims=True)


@dataclass(frozen=True)
class AttnHead:
    """One attention head: square (D, D) query/key/value maps."""

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        for name in ("q", "k", "v"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.ndim != 2 or a.shape[0] != a.shape[1]:
                raise ValueError(f"{name} must be square, got shape {a.shape}")
            if a.shape != np.asarray(self.q).shape:
                raise ValueError("q, k, v must share one dimension")
            object.__setattr__(self, name, a)
            a.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.q.shape[0]


def attention_forward(h, heads, activation: str) -> np.ndarray:
    """Residual multi-head attention over token columns."""
    h = as_token_matrix(h)
    if activation not in ACTIVATIONS:
        raise ValueError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
    n = h.shape[1]
    out = h.copy()
    for head in heads:
        if head.dim != h.shape[0]:
            raise ValueError(f"head dimension {head.dim} != token dimension {h.shape[0]}")
        qh = head.q @ h
        kh = head.k @ h
        vh = head.v @ h
        scores = kh.T @ qh  # [key j, query i]
        if activation == "softmax":
            out += vh @ softmax_columns(scores)
        else:
            out += (vh @ np.maximum(scores, 0.0)) / n
    return out


def mlp_forward(h, w1, w2) -> np.ndarray:
    """Residual token-wise MLP: H + W2 relu(W1 H)."""
    h = as_token_matrix(h)
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    if w1.ndim != 2 or w2.ndim != 2 or w1.shape[1] != h.shape[0] or w2.shape[0] != h.shape[0]:
        raise ValueError(
            f"mlp shapes {w1.shape}, {w2.shape} incompatible with token dimension {h.shape[0]}"
        )
    if w2.shape[1] != w1.shape[0]:
        raise ValueError(f"hidden dimensions disagree: {w1.shape[0]} vs {w2.shape[1]}")
    return h + w2 @ np.maximum(w1 @ h, 0.0)


@dataclass(frozen=True)
class DenseMlp:
    """Explicitly materialized MLP weights."""

    w1: np.ndarray
    w2: np.ndarray

    def apply(self, h: np.ndarray) -> np.ndarray:
        return mlp_forward(h, self.w1, self.w2)

    def operator_norms(self) -> tuple[float, float]:
        return float(np.linalg.norm(self.w1, 2)), float(np.linalg.norm(self.w2, 2))


@dataclass(frozen=True)
class PiecewiseWrite:
    """dst row += sum over src rows of fn(row value), fn a ReLU unit sum.

    Realizes, for each source row s and unit (a_j, w_j, b_j), the W1 row
    w_j e_s + b_j e_flag and W2 column a_j e_dst; requires a token row
    pinned to the constant 1 (``flag_row`` on the owning SlotMlp).
    """

    src_rows: tuple[int, ...]
    dst_row: int
    fn: ReluScalarApprox


@dataclass(frozen=True)
class ClearRows:
    """Zero the listed rows via the pair relu(x) - relu(-x) = x."""

    rows: tuple[int, ...]


@dataclass(frozen=True)
class SlotMlp:
    """Block-sparse MLP acting on designated token rows ("slots").

    Semantically identical to a DenseMlp whose W1/W2 are assembled from the
    listed ops, but evaluated row-wise so tolerance-1e-4 approximators
    (10^5..10^7 hidden units) stay cheap. ``to_dense`` materializes the
    equivalent weights for small unit counts.
    """

    dim: int
    flag_row: int
    ops: tuple[PiecewiseWrite | ClearRows, ...] = field(default_factory=tuple)

    def apply(self, h: np.ndarray) -> np.ndarray:
        h = as_token_matrix(h)
        if h.shape[0] != self.dim:
            raise ValueError(f"token dimension {h.shape[0]} != mlp dimension {self.dim}")
        out = h.copy()
        for op in self.ops:
            if isinstance(op, ClearRows):
                out[list(op.rows)] -= h[list(op.rows)]
            else:
                acc = np.zeros(h.shape[1])
                for s in op.src_rows:
                    acc += op.fn.evaluate(h[s])
                out[op.dst_row] += acc
        return out

    def hidden_dim(self) -> int:
        total = 0
        for op in self.ops:
            if isinstance(op, ClearRows):
                total += 2 * len(op.rows)
            else:
                total += op.fn.piece_count * len(op.src_rows)
        return total

    def to_dense(self, max_hidden: int = 200_000) -> DenseMlp:
        """Materialize the equivalent (W1, W2); refuses absurd sizes."""
        hid = self.hidden_dim()
        if hid > max_hidden:
            raise ValueError(f"hidden dimension {hid} exceeds max_hidden={max_hidden}")
        w1 = np.zeros((max(hid, 1), self.dim))
        w2 = np.zeros((self.dim, max(hid, 1)))
        r = 0
        for op in self.ops:
            if isinstance(op, ClearRows):
                for row in op.rows:
                    w1[r, row] = 1.0
                    w2[row, r] = -1.0
                    w1[r + 1, row] = -1.0
                    w2[row, r + 1] = 1.0
                    r += 2
            else:
                a, w, b = op.fn.pieces()
                for s in op.src_rows:
                    m = a.shape[0]
                    w1[r : r + m, s] = w
                    w1[r : r + m, self.flag_row] = b
                    w2[op.dst_row, r : r + m] = a
                    r += m
        return DenseMlp(w1, w2)

    def operator_norms(self) -> tuple[float, float]:
        """Exact operator norms of the implied W1/W2 via their Gram matrices."""
        g1 = np.zeros((self.dim, self.dim))  # W1^T W1
        g2 = np.zeros((self.dim, self.dim))  # W2 W2^T
        for op in self.ops:
            if isinstance(op, ClearRows):
                for row in op.rows:
                    g1[row, row] += 2.0
                    g2[row, row] += 2.0
            else:
                a, w, b = op.fn.pieces()
                sww, swb, sbb, saa = float(w @ w), float(w @ b), float(b @ b), float(a @ a)
                for s in op.src_rows:
                    g1[s, s] += sww
                    g1[s, self.flag_row] += swb
                    g1[self.flag_row, s] += swb
                    g1[self.flag_row, self.flag_row] += sbb
                    g2[op.dst_row, op.dst_row] += saa
        n1 = float(np.sqrt(max(np.max(np.linalg.eigvalsh(g1)), 0.0)))
        n2 = float(np.sqrt(max(np.max(np.linalg.eigvalsh(g2)), 0.0)))
        return n1, n2


@dataclass(frozen=True)
class TfLayer:
    heads: tuple[AttnHead, ...]
    activation: str
    mlp: DenseMlp | SlotMlp | None = None

    def __post_init__(self):
        object.__setattr__(self, "heads", tuple(self.heads))
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not self.heads:
            raise ValueError("a layer needs at least one head")
        dims = {head.dim for head in self.heads}
        if len(dims) != 1:
            raise ValueError("heads of one layer must share a dimension")


@dataclass(frozen=True)
class Readout:
    """Attentive-pooling readout decoding tokens into mixture parameters.

    ``v_o`` and ``k_o`` are (rows, D); ``q_o`` is (rows, K) with rows either
    d + K (isotropic) or d + 2K (K appended scale rows).
    """

    v_o: np.ndarray
    k_o: np.ndarray
    q_o: np.ndarray
    pooling: str = "softmax"

    def __post_init__(self):
        for name in ("v_o", "k_o", "q_o"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")
        if self.v_o.shape != self.k_o.shape:
            raise ValueError("v_o and k_o must share shape")
        if self.q_o.shape[0] != self.v_o.shape[0]:
            raise ValueError("q_o row count must match v_o")


@dataclass(frozen=True)
class TfWeights:
    layers: tuple[TfLayer, ...]
    readout: Readout | None = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def dim(self) -> int:
        return self.layers[0].heads[0].dim if self.layers else 0

    def norm(self) -> float:
        """Operator-norm aggregate: max over layers of the largest head map
        norm plus both MLP norms."""
        worst = 0.0
        for layer in self.layers:
            head_norm = max(
                max(np.linalg.norm(m, 2) for m in (head.q, head.k, head.v))
                for head in layer.heads
            )
            if layer.mlp is None:
                n1 = n2 = 0.0
            else:
                n1, n2 = layer.mlp.operator_norms()
            worst = max(worst, float(head_norm) + n1 + n2)
        return worst


def layer_forward(h, layer: TfLayer) -> np.ndarray:
    h = attention_forward(h, layer.heads, layer.activation)
    return layer.mlp.apply(h) if layer.mlp is not None else h


def tf_forward(h, weights: TfWeights) -> np.ndarray:
    """Run every layer (attention then MLP) in order."""
    h = as_token_matrix(h)
    for layer in weights.layers:
        h = layer_forward(h, layer)
    return h


def tf_layer_outputs(h, weights: TfWeights):
    """Yield the token matrix after each layer, for probing token slots."""
    h = as_token_matrix(h)
    for layer in weights.layers:
        h = layer_forward(h, layer)
        yield h


def attentive_pool_matrix(h, readout: Readout) -> np.ndarray:
    """The pooled (rows, K) output matrix O."""
    h = as_token_matrix(h)
    scores = (readout.k_o @ h).T @ readout.q_o  # (N, K)
    if readout.pooling == "softmax":
        pooled = softmax_columns(scores)
    else:
        pooled = scores / h.shape[1]
    return (readout.v_o @ h) @ pooled


def attentive_pool_readout(h, readout: Readout, k: int, d: int) -> GmmParams:
    """Decode pooled columns into mixture parameters.

    Weights come from the row-wise mean of the first K rows, means from the
    next d rows column-wise. With d + 2K rows, the trailing K rows decode a
    per-component scale level (row-wise mean, broadcast across dimensions).
    """
    out = attentive_pool_matrix(h, readout)
    rows = out.shape[0]
    if out.shape[1] != k or rows not in (d + k, d + 2 * k):
        raise ValueError(f"pooled shape {out.shape} does not decode with k={k}, d={d}")
    weights = out[:k].mean(axis=1)
    means = out[k : k + d].T
    scales = None
    if rows == d + 2 * k:
        level = out[k + d :].mean(axis=1)
        scales = np.repeat(level[:, None], d, axis=1)
    return GmmParams(weights, means, scales)


# --------------------------------------------------------------------------
# serialization: JSON manifest with base64 row-major float64 payloads
# --------------------------------------------------------------------------


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype=np.float64).reshape(obj["shape"]).copy()


def _encode_mlp(mlp) -> dict | None:
    if mlp is None:
        return None
    if isinstance(mlp, DenseMlp):
        return {"kind": "dense", "w1": _encode_array(mlp.w1), "w2": _encode_array(mlp.w2)}
    ops = []
    for op in mlp.ops:
        if isinstance(op, ClearRows):
            ops.append({"op": "clear", "rows": list(op.rows)})
        else:
            ops.append(
                {
                    "op": "piecewise",
                    "src": list(op.src_rows),
                    "dst": op.dst_row,
                    "fn": op.fn.payload(),
                }
            )
    return {"kind": "slots", "dim": mlp.dim, "flag_row": mlp.flag_row, "ops": ops}


def _decode_mlp(obj):
    if obj is None:
        return None
    if obj["kind"] == "dense":
        return DenseMlp(_decode_array(obj["w1"]), _decode_array(obj["w2"]))
    ops = []
    for op in obj["ops"]:
        if op["op"] == "clear":
            ops.append(ClearRows(tuple(op["rows"])))
        else:
            fn = build_relu_approx(**op["fn"])
            ops.append(PiecewiseWrite(tuple(op["src"]), op["dst"], fn))
    return SlotMlp(dim=obj["dim"], flag_row=obj["flag_row"], ops=tuple(ops))


def weights_to_json(weights: TfWeights) -> str:
    doc = {
        "format": WEIGHTS_FORMAT,
        "version": WEIGHTS_VERSION,
        "dim": weights.dim,
        "layers": [
            {
                "activation": layer.activation,
                "heads": [
                    {"q": _encode_array(h.q), "k": _encode_array(h.k), "v": _encode_array(h.v)}
                    for h in layer.heads
                ],
                "mlp": _encode_mlp(layer.mlp),
            }
            for layer in weights.layers
        ],
        "readout": None
        if weights.readout is None
        else {
            "v_o": _encode_array(weights.readout.v_o),
            "k_o": _encode_array(weights.readout.k_o),
            "q_o": _encode_array(weights.readout.q_o),
            "pooling": weights.readout.pooling,
        },
    }
    return json.dumps(doc)


def weights_from_json(text: str) -> TfWeights:
    doc = json.loads(text)
    if doc.get("format") != WEIGHTS_FORMAT:
        raise ValueError("not a transformer weights document")
    if doc.get("version") != WEIGHTS_VERSION:
        raise ValueError(f"unsupported weights version {doc.get('version')}")
    layers = []
    for obj in doc["layers"]:
        heads = tuple(
            AttnHead(_decode_array(h["q"]), _decode_array(h["k"]), _decode_array(h["v"]))
            for h in obj["heads"]
        )
        layers.append(TfLayer(heads=heads, activation=obj["activation"], mlp=_decode_mlp(obj["mlp"])))
    readout = None
    if doc["readout"] is not None:
        r = doc["readout"]
        readout = Readout(
            _decode_array(r["v_o"]), _decode_array(r["k_o"]), _decode_array(r["q_o"]), r["pooling"]
        )
    return TfWeights(tuple(layers), readout)


def save_weights(weights: TfWeights, path) -> None:
    with open(path, "w") as fp:
        fp.write(weights_to_json(weights))


def load_weights(path) -> TfWeights:
    with open(path) as fp:
        return weights_from_json(fp.read())
