"""Attention layers on both geometries and the per-node space-selection fusion.

One model layer runs a Euclidean graph-attention block and a hyperbolic
graph-attention block side by side, then fuses the two embeddings per node
with a learned two-way softmax.  The Euclidean selection weight beta_r of each
node is the model's hyperbolicity score and is recorded per layer for the
alignment and non-uniformity losses.

All ball arithmetic here is built from autodiff primitives so gradients flow
through the hyperbolic branch; the plain-numpy kernel in ``poincare`` mirrors
the same formulas.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DiffValue
from .graphs import WeightedGraph
from .poincare import PROJECTION_MARGIN

__all__ = [
    "GATParams",
    "HGATParams",
    "FusionParams",
    "LayerParams",
    "LayerOutput",
    "init_layer_params",
    "attention_edges",
    "gat_forward",
    "hgat_forward",
    "fusion_forward",
    "joint_space_forward",
    "JointSpaceGNN",
    "d_project",
    "d_exp_origin",
    "d_log_origin",
    "d_mobius_add",
    "d_mobius_matvec",
    "d_hyp_distance",
    "save_params_json",
    "load_params_json",
]

_MIN = 1e-15
_ATANH_MAX = 1.0 - 1e-15


# ---------------------------------------------------------------------------
# Differentiable ball operations (curvature may itself be a DiffValue)
# ---------------------------------------------------------------------------

def _sqrt_c(c) -> DiffValue:
    return ad.sqrt(ad.as_diff(c))


def d_project(x, c) -> DiffValue:
    """Radial rescale of rows exceeding the ball margin; identity inside."""
    x = ad.as_diff(x)
    max_norm = ad.div(1.0 - PROJECTION_MARGIN, _sqrt_c(c))
    n = ad.clamp(ad.vector_norm(x), lo=_MIN)
    scale = ad.clamp(ad.div(max_norm, n), hi=1.0)
    return ad.mul(x, scale)


def d_exp_origin(v, c) -> DiffValue:
    v = ad.as_diff(v)
    s = ad.clamp(ad.mul(ad.vector_norm(v), _sqrt_c(c)), lo=_MIN)
    return d_project(ad.mul(v, ad.div(ad.tanh(s), s)), c)


def d_log_origin(y, c) -> DiffValue:
    y = ad.as_diff(y)
    s = ad.clamp(ad.mul(ad.vector_norm(y), _sqrt_c(c)), lo=_MIN, hi=_ATANH_MAX)
    return ad.mul(y, ad.div(ad.atanh(s), s))


def d_mobius_add(x, y, c) -> DiffValue:
    x, y, c = ad.as_diff(x), ad.as_diff(y), ad.as_diff(c)
    x2 = ad.sum_(ad.mul(x, x), axis=-1, keepdims=True)
    y2 = ad.sum_(ad.mul(y, y), axis=-1, keepdims=True)
    xy = ad.sum_(ad.mul(x, y), axis=-1, keepdims=True)
    cxy2 = ad.mul(2.0, ad.mul(c, xy))
    num = ad.add(ad.mul(ad.add(ad.add(1.0, cxy2), ad.mul(c, y2)), x),
                 ad.mul(ad.sub(1.0, ad.mul(c, x2)), y))
    den = ad.clamp(ad.add(ad.add(1.0, cxy2), ad.mul(ad.mul(c, c), ad.mul(x2, y2))),
                   lo=_MIN)
    return d_project(ad.div(num, den), c)


def d_mobius_matvec(w: DiffValue, x, c) -> DiffValue:
    return d_exp_origin(ad.matmul(d_log_origin(x, c), ad.transpose(w)), c)


def d_hyp_distance(x, y, c) -> DiffValue:
    """Row-wise geodesic distance, returned as a flat vector."""
    u = d_mobius_add(ad.neg(ad.as_diff(x)), y, c)
    s = ad.clamp(ad.mul(ad.vector_norm(u), _sqrt_c(c)), hi=_ATANH_MAX)
    dist = ad.mul(ad.div(2.0, _sqrt_c(c)), ad.atanh(s))
    return ad.reshape(dist, (dist.shape[0],))


# ---------------------------------------------------------------------------
# Parameter containers and initialization
# ---------------------------------------------------------------------------

@dataclass
class GATParams:
    W: DiffValue          # (out, in)
    a: DiffValue          # (2*out,)
    leaky_slope: float = 0.2


@dataclass
class HGATParams:
    W: DiffValue          # (out, in)
    b: DiffValue          # (out,), mapped into the ball by exp at the origin
    a: DiffValue          # (2*out,)
    curvature: DiffValue  # positive scalar
    trainable_curvature: bool = False
    leaky_slope: float = 0.2


@dataclass
class FusionParams:
    M: DiffValue          # (q_dim, hidden)
    b: DiffValue          # (q_dim,)
    q: DiffValue          # (q_dim,)


@dataclass
class LayerParams:
    gat: GATParams
    hgat: HGATParams
    fusion: FusionParams


@dataclass
class LayerOutput:
    """Fused embeddings plus the per-node selection weights of one layer."""

    z: DiffValue          # (n, hidden)
    beta_r: DiffValue     # (n,), Euclidean selection weight in (0, 1)
    beta_d: DiffValue     # (n,), hyperbolic counterpart; beta_r + beta_d = 1


def _glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = shape[-1] if len(shape) > 1 else shape[0]
    fan_out = shape[0]
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


def init_layer_params(rng: np.random.Generator, in_dim: int, out_dim: int,
                      q_dim: int, curvature: float = 1.0,
                      trainable_curvature: bool = False,
                      leaky_slope: float = 0.2) -> LayerParams:
    gat = GATParams(
        W=DiffValue(_glorot(rng, (out_dim, in_dim))),
        a=DiffValue(_glorot(rng, (2 * out_dim,))),
        leaky_slope=leaky_slope,
    )
    hgat = HGATParams(
        W=DiffValue(_glorot(rng, (out_dim, in_dim))),
        b=DiffValue(np.zeros(out_dim)),
        a=DiffValue(_glorot(rng, (2 * out_dim,))),
        curvature=DiffValue(float(curvature)),
        trainable_curvature=trainable_curvature,
        leaky_slope=leaky_slope,
    )
    fusion = FusionParams(
        M=DiffValue(_glorot(rng, (q_dim, out_dim))),
        b=DiffValue(np.zeros(q_dim)),
        q=DiffValue(_glorot(rng, (q_dim,))),
    )
    return LayerParams(gat=gat, hgat=hgat, fusion=fusion)


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------

def attention_edges(g: WeightedGraph,
                    add_self_loops: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Directed (source, destination) arrays for attention aggregation.

    Each undirected edge contributes both directions; every node gets a self
    loop so no neighborhood is empty.
    """
    src = [u for u, v, _ in g.edges] + [v for u, v, _ in g.edges]
    dst = [v for u, v, _ in g.edges] + [u for u, v, _ in g.edges]
    if add_self_loops:
        src.extend(range(g.num_nodes))
        dst.extend(range(g.num_nodes))
    else:
        covered = set(dst)
        missing = [v for v in range(g.num_nodes) if v not in covered]
        if missing:
            raise ValueError(
                f"nodes {missing[:5]} have no incoming messages; "
                "enable self loops or connect them")
    return np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64)


def _attention_dropout(alpha: DiffValue, dropout: float,
                       rng: np.random.Generator | None,
                       training: bool) -> DiffValue:
    if not training or dropout <= 0.0:
        return alpha
    if rng is None:
        raise ValueError("dropout requires an rng when training")
    mask = (rng.random(alpha.shape) >= dropout) / (1.0 - dropout)
    return ad.mul(alpha, mask)


def gat_forward(features, g: WeightedGraph, p: GATParams, *,
                dropout: float = 0.0, rng: np.random.Generator | None = None,
                training: bool = False,
                add_self_loops: bool = True) -> DiffValue:
    """One Euclidean graph-attention layer.

    Attention logits are LeakyReLU(a^T [W h_v || W h_j]) softmax-normalized
    over each destination's neighborhood; the update is ELU of the
    attention-weighted sum of transformed neighbor features.
    """
    features = ad.as_diff(features)
    n = g.num_nodes
    src, dst = attention_edges(g, add_self_loops)
    h = ad.matmul(features, ad.transpose(p.W))
    out_dim = h.shape[1]
    h_dst = ad.gather_rows(h, dst)
    h_src = ad.gather_rows(h, src)
    logits = ad.matmul(ad.concat([h_dst, h_src], axis=1),
                       ad.reshape(p.a, (2 * out_dim, 1)))
    e = ad.leaky_relu(ad.reshape(logits, (logits.shape[0],)), p.leaky_slope)
    alpha = ad.segment_softmax(e, dst, n)
    alpha = _attention_dropout(alpha, dropout, rng, training)
    msg = ad.mul(ad.reshape(alpha, (alpha.shape[0], 1)), h_src)
    return ad.elu(ad.segment_sum(msg, dst, n))


def hgat_forward(x_ball, g: WeightedGraph, p: HGATParams, *,
                 dropout: float = 0.0, rng: np.random.Generator | None = None,
                 training: bool = False,
                 add_self_loops: bool = True) -> tuple[DiffValue, DiffValue]:
    """One hyperbolic graph-attention layer.

    Messages are the Mobius matrix action plus a ball bias; attention logits
    combine tangent-space features with the geodesic distance between the
    endpoints.  Returns (tangent-space output, its ball image).
    """
    x = d_project(ad.as_diff(x_ball), p.curvature)
    n = g.num_nodes
    c = p.curvature
    src, dst = attention_edges(g, add_self_loops)

    wx = d_mobius_matvec(p.W, x, c)
    out_dim = wx.shape[1]
    bias_ball = d_exp_origin(ad.reshape(p.b, (1, out_dim)), c)
    m = d_mobius_add(wx, bias_ball, c)

    hhat = d_log_origin(wx, c)
    h_dst = ad.gather_rows(hhat, dst)
    h_src = ad.gather_rows(hhat, src)
    logits = ad.matmul(ad.concat([h_dst, h_src], axis=1),
                       ad.reshape(p.a, (2 * out_dim, 1)))
    dist = d_hyp_distance(ad.gather_rows(x, dst), ad.gather_rows(x, src), c)
    e = ad.leaky_relu(ad.mul(ad.reshape(logits, (logits.shape[0],)), dist),
                      p.leaky_slope)
    alpha = ad.segment_softmax(e, dst, n)
    alpha = _attention_dropout(alpha, dropout, rng, training)

    log_m = d_log_origin(m, c)
    msg = ad.mul(ad.reshape(alpha, (alpha.shape[0], 1)), ad.gather_rows(log_m, src))
    tangent = ad.elu(ad.segment_sum(msg, dst, n))
    ball_out = d_project(d_exp_origin(tangent, c), c)
    return tangent, ball_out


def fusion_forward(z_r, z_d_ball, p: FusionParams, c) -> LayerOutput:
    """Per-node convex combination of the two branch embeddings.

    Scores w = q^T tanh(M z + b) are computed for the Euclidean embedding and
    the tangent image of the hyperbolic one; a two-way softmax yields the
    selection weights, so beta_r + beta_d = 1 exactly.
    """
    z_r = ad.as_diff(z_r)
    n, _ = z_r.shape
    q_dim = p.q.shape[0]
    zd_log = d_log_origin(d_project(ad.as_diff(z_d_ball), c), c)

    def score(z):
        t = ad.tanh(ad.add(ad.matmul(z, ad.transpose(p.M)), p.b))
        return ad.reshape(ad.matmul(t, ad.reshape(p.q, (q_dim, 1))), (n,))

    w_r = score(z_r)
    w_d = score(zd_log)
    beta_r = ad.sigmoid(ad.sub(w_r, w_d))
    beta_d = ad.sub(1.0, beta_r)
    z = ad.add(ad.mul(ad.reshape(beta_r, (n, 1)), z_r),
               ad.mul(ad.reshape(beta_d, (n, 1)), zd_log))
    return LayerOutput(z=z, beta_r=beta_r, beta_d=beta_d)


def joint_space_forward(features, g: WeightedGraph, layers: list[LayerParams], *,
                  dropout: float = 0.0, rng: np.random.Generator | None = None,
                  training: bool = False) -> tuple[LayerOutput, list[LayerOutput]]:
    """Run the full stack; each layer consumes the previous fused embedding.

    The Euclidean branch takes the fused embedding directly and the hyperbolic
    branch takes its exponential image (the raw input features on layer one).
    Returns the final layer output and the per-layer record used by the
    alignment losses.
    """
    if not layers:
        raise ValueError("need at least one layer")
    z = ad.as_diff(features)
    record: list[LayerOutput] = []
    for lp in layers:
        if training and dropout > 0.0:
            if rng is None:
                raise ValueError("dropout requires an rng when training")
            mask = (rng.random(z.shape) >= dropout) / (1.0 - dropout)
            z = ad.mul(z, mask)
        z_ball = d_project(d_exp_origin(z, lp.hgat.curvature), lp.hgat.curvature)
        z_r = gat_forward(z, g, lp.gat, dropout=dropout, rng=rng, training=training)
        _, ball_out = hgat_forward(z_ball, g, lp.hgat, dropout=dropout, rng=rng,
                                   training=training)
        out = fusion_forward(z_r, ball_out, lp.fusion, lp.hgat.curvature)
        z = out.z
        record.append(out)
    return record[-1], record


# ---------------------------------------------------------------------------
# Model container
# ---------------------------------------------------------------------------

class JointSpaceGNN:
    """A stack of joint-space layers with named, checkpointable parameters."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int,
                 num_layers: int = 2, q_dim: int = 16, curvature: float = 1.0,
                 trainable_curvature: bool = False, seed: int = 0,
                 leaky_slope: float = 0.2):
        if num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        rng = np.random.default_rng(seed)
        dims = [in_dim] + [hidden_dim] * (num_layers - 1) + [out_dim]
        self.layers = [
            init_layer_params(rng, dims[i], dims[i + 1], q_dim, curvature,
                              trainable_curvature, leaky_slope)
            for i in range(num_layers)
        ]

    def forward(self, g: WeightedGraph, features=None, *, dropout: float = 0.0,
                rng: np.random.Generator | None = None,
                training: bool = False) -> tuple[LayerOutput, list[LayerOutput]]:
        if features is None:
            features = g.features
        if features is None:
            raise ValueError("graph has no features and none were provided")
        return joint_space_forward(features, g, self.layers, dropout=dropout,
                             rng=rng, training=training)

    def named_parameters(self) -> dict[str, DiffValue]:
        out: dict[str, DiffValue] = {}
        for i, lp in enumerate(self.layers):
            out[f"layer{i}.gat.W"] = lp.gat.W
            out[f"layer{i}.gat.a"] = lp.gat.a
            out[f"layer{i}.hgat.W"] = lp.hgat.W
            out[f"layer{i}.hgat.b"] = lp.hgat.b
            out[f"layer{i}.hgat.a"] = lp.hgat.a
            if lp.hgat.trainable_curvature:
                out[f"layer{i}.hgat.curvature"] = lp.hgat.curvature
            out[f"layer{i}.fusion.M"] = lp.fusion.M
            out[f"layer{i}.fusion.b"] = lp.fusion.b
            out[f"layer{i}.fusion.q"] = lp.fusion.q
        return out

    def parameters(self) -> list[DiffValue]:
        return list(self.named_parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: np.array(v.value, copy=True)
                for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        for name, value in state.items():
            if name not in params:
                raise KeyError(f"unknown parameter {name!r}")
            arr = np.asarray(value, dtype=np.float64)
            if arr.shape != params[name].value.shape:
                raise ValueError(f"shape mismatch for {name!r}")
            params[name].value = arr.copy()


def save_params_json(params: dict[str, np.ndarray] | dict[str, DiffValue]) -> str:
    """Flat name -> {shape, row-major values} checkpoint encoding."""
    obj = {}
    for name, value in params.items():
        arr = value.value if isinstance(value, DiffValue) else np.asarray(value)
        obj[name] = {"shape": list(arr.shape), "values": arr.reshape(-1).tolist()}
    return json.dumps(obj)


def load_params_json(text: str) -> dict[str, np.ndarray]:
    obj = json.loads(text)
    return {name: np.asarray(spec["values"], dtype=np.float64).reshape(spec["shape"])
            for name, spec in obj.items()}
