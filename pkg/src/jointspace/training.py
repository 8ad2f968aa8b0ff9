"""Training loop with early stopping, evaluation metrics, grid/seed runners.

One run precomputes the geometric profile of the graph, trains the model
full-batch with adaptive moment estimation, early-stops on the validation
metric, restores the best checkpoint and reports test performance plus the
learned-hyperbolicity diagnostics.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .graphs import (EdgeSplitSpec, SplitSpec, WeightedGraph, graph_hash,
                     sample_non_edges, split_edges, split_nodes)
from .hyperbolicity import (HyperbolicityProfile, local_profile,
                            profile_from_json, profile_to_json)
from .layers import JointSpaceGNN
from .objectives import (FermiDiracParams, LossWeights, cross_entropy_nc,
                         fermi_dirac_prob, lp_loss, normalize_delta,
                         overall_loss, unif_reference, wasserstein_1d)

__all__ = [
    "TrainingDiverged",
    "TrainConfig",
    "RunReport",
    "Adam",
    "identity_features",
    "mu_profile",
    "train",
    "evaluate_nc",
    "evaluate_lp",
    "run_grid",
    "run_seeds",
    "analyze_hyperbolicities",
    "synthetic_nc_graph",
    "synthetic_lp_tree",
]

_MIN_CURVATURE = 1e-4


class TrainingDiverged(RuntimeError):
    """Raised when the loss becomes non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    """Everything one training run depends on; JSON round-trippable."""

    task: str = "nc"                      # "nc" or "lp"
    layers: int = 2
    hidden: int = 16
    lr: float = 0.01
    dropout: float = 0.0
    omega_nu: float = 0.1
    omega_was: float = 0.1
    p: float = 2.0                        # Wasserstein order
    k: int = 2                            # hop radius for the geometric profile
    q_dim: int = 16
    curvature: float = 1.0
    trainable_curvature: bool = False
    patience: int = 100
    max_epochs: int = 1000
    seed: int = 0
    split_fractions: tuple[float, float, float] | None = None
    comparison_mode: str = "distribution"  # "distribution" | "pairwise" | "mean"
    fermi_r: float = 2.0
    fermi_t: float = 1.0
    metric: str = "accuracy"              # "accuracy" | "f1" (nc); lp uses AUC
    f1_average: str = "micro"
    delta_mode: str = "inf"
    weight_decay: float = 0.0
    cache_dir: str | None = None

    def __post_init__(self) -> None:
        if self.task not in ("nc", "lp"):
            raise ValueError("task must be 'nc' or 'lp'")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must be in [0, 1)")
        if self.comparison_mode not in ("distribution", "pairwise", "mean"):
            raise ValueError("invalid comparison_mode")
        for name in ("layers", "hidden", "lr", "k", "q_dim", "curvature",
                     "patience", "max_epochs", "fermi_r", "fermi_t"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.omega_nu < 0 or self.omega_was < 0:
            raise ValueError("loss weights must be nonnegative")

    @property
    def fractions(self) -> tuple[float, float, float]:
        if self.split_fractions is not None:
            return tuple(self.split_fractions)
        return (0.6, 0.2, 0.2) if self.task == "nc" else (0.85, 0.05, 0.10)

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        obj = json.loads(text)
        if obj.get("split_fractions") is not None:
            obj["split_fractions"] = tuple(obj["split_fractions"])
        return cls(**obj)


@dataclass(frozen=True)
class RunReport:
    """Outcome of one training run; test metric comes from the best-val checkpoint."""

    best_val_metric: float
    test_metric: float
    epoch_of_best: int
    epochs_run: int
    loss_trace: tuple[float, ...]
    beta_samples: tuple[tuple[float, ...], ...]   # per layer, per node
    w2_nu_unif: float
    w2_nu_mu: float
    config: dict
    wall_time: float

    def to_json(self) -> str:
        obj = asdict(self)
        obj["loss_trace"] = list(self.loss_trace)
        obj["beta_samples"] = [list(b) for b in self.beta_samples]
        return json.dumps(obj)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        obj = json.loads(text)
        obj["loss_trace"] = tuple(obj["loss_trace"])
        obj["beta_samples"] = tuple(tuple(b) for b in obj["beta_samples"])
        return cls(**obj)


class Adam:
    """Adaptive moment estimation over DiffValue leaves."""

    def __init__(self, params: list[ad.DiffValue], lr: float = 0.01,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            if self.weight_decay:
                g = g + self.weight_decay * p.value
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p.value = p.value - self.lr * (self.m[i] / b1c) / (
                np.sqrt(self.v[i] / b2c) + self.eps)


# ---------------------------------------------------------------------------
# Inputs and the cached geometric profile
# ---------------------------------------------------------------------------

def identity_features(n: int) -> np.ndarray:
    """One-hot fallback features for graphs without node attributes."""
    return np.eye(n)


def mu_profile(g: WeightedGraph, k: int, mode: str = "inf",
               cache_dir: str | None = None) -> HyperbolicityProfile:
    """Local profile of the graph, cached on disk keyed by (hash, k, mode)."""
    cache_path = None
    if cache_dir is not None:
        cache_path = Path(cache_dir) / f"{graph_hash(g)}_k{k}_{mode}.json"
        if cache_path.exists():
            return profile_from_json(cache_path.read_text())
    profile = local_profile(g, k, mode)
    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        cache_path.write_text(profile_to_json(profile))
    return profile


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def evaluate_nc(logits: np.ndarray, labels: np.ndarray, mask,
                metric: str = "accuracy", f1_average: str = "micro") -> float:
    """Accuracy or F1 over the masked nodes.

    F1 is the binary positive-class score for 2 classes; otherwise averaged
    per ``f1_average`` ("micro" or "macro").
    """
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise ValueError("mask must be non-empty")
    preds = np.argmax(np.asarray(logits), axis=1)[mask]
    truth = np.asarray(labels)[mask]
    if metric == "accuracy":
        return float(np.mean(preds == truth))
    if metric != "f1":
        raise ValueError("metric must be 'accuracy' or 'f1'")
    classes = np.unique(np.asarray(labels))
    if classes.size == 2:
        return _binary_f1(preds, truth, positive=int(classes.max()))
    if f1_average == "micro":
        # Single-label micro-F1 equals accuracy; computed from global counts.
        tp = float(np.sum(preds == truth))
        fp = fn = float(np.sum(preds != truth))
        return 2.0 * tp / max(2.0 * tp + fp + fn, 1e-12)
    scores = [_binary_f1(preds, truth, positive=int(c)) for c in classes]
    return float(np.mean(scores))


def _binary_f1(preds: np.ndarray, truth: np.ndarray, positive: int) -> float:
    tp = float(np.sum((preds == positive) & (truth == positive)))
    fp = float(np.sum((preds == positive) & (truth != positive)))
    fn = float(np.sum((preds != positive) & (truth == positive)))
    return 2.0 * tp / max(2.0 * tp + fp + fn, 1e-12)


def evaluate_lp(scores: np.ndarray, truth: np.ndarray) -> float:
    """ROC-AUC via the rank statistic; tied scores get average ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(bool)
    num_pos = int(truth.sum())
    num_neg = truth.size - num_pos
    if num_pos == 0 or num_neg == 0:
        raise ValueError("AUC needs both positive and negative examples")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(truth.size)
    sorted_scores = scores[order]
    i = 0
    while i < truth.size:
        j = i
        while j + 1 < truth.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    pos_rank_sum = float(ranks[truth].sum())
    return (pos_rank_sum - num_pos * (num_pos + 1) / 2.0) / (num_pos * num_neg)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _lp_message_graph(g: WeightedGraph, split: EdgeSplitSpec) -> WeightedGraph:
    """Message passing for link prediction only sees training edges."""
    train_edges = tuple(g.edges[i] for i in split.train)
    return WeightedGraph(num_nodes=g.num_nodes, edges=train_edges,
                         features=g.features, labels=g.labels)


def _edge_pairs(g: WeightedGraph, idx) -> np.ndarray:
    return np.asarray([[g.edges[i][0], g.edges[i][1]] for i in idx], dtype=np.int64)


def _nc_eval(model: JointSpaceGNN, g: WeightedGraph, features, labels,
             mask, cfg: TrainConfig) -> tuple[float, float]:
    """(metric, cross-entropy) on a node mask; the loss breaks metric ties."""
    out, _ = model.forward(g, features, training=False)
    logits = out.z.value
    metric = evaluate_nc(logits, labels, mask, cfg.metric, cfg.f1_average)
    mask = np.asarray(mask, dtype=np.int64)
    shifted = logits[mask] - logits[mask].max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    ce = -float(np.mean(log_probs[np.arange(mask.size), np.asarray(labels)[mask]]))
    return metric, ce


def _lp_eval(model: JointSpaceGNN, g: WeightedGraph, features,
             pos_pairs: np.ndarray, neg_pairs: np.ndarray,
             cfg: TrainConfig) -> tuple[float, float]:
    """(ROC-AUC, binary cross-entropy) on fixed positive/negative pairs."""
    out, _ = model.forward(g, features, training=False)
    z = out.z.value
    fd = FermiDiracParams(cfg.fermi_r, cfg.fermi_t)
    def score(pairs):
        d = np.linalg.norm(z[pairs[:, 0]] - z[pairs[:, 1]], axis=1)
        return fermi_dirac_prob(d, fd)
    p_pos, p_neg = score(pos_pairs), score(neg_pairs)
    scores = np.concatenate([p_pos, p_neg])
    truth = np.concatenate([np.ones(len(pos_pairs)), np.zeros(len(neg_pairs))])
    eps = 1e-12
    bce = -float(np.mean(np.concatenate([np.log(p_pos + eps),
                                         np.log(1.0 - p_neg + eps)])))
    return evaluate_lp(scores, truth), bce


def train(g: WeightedGraph, cfg: TrainConfig, split: SplitSpec | None = None,
          return_model: bool = False):
    """Train one model; returns a RunReport (plus the model when requested).

    The geometric profile is computed once up front.  Validation is checked
    every epoch; training stops ``patience`` epochs after the last strict
    improvement or at ``max_epochs``, whichever is first, and the test metric
    is evaluated only at the restored best checkpoint.
    """
    t_start = time.monotonic()
    if g.features is None:
        raise ValueError("graph has no node features; attach some or use "
                         "identity_features(n) for a one-hot fallback")
    features = g.features
    if cfg.task == "nc":
        if g.labels is None:
            raise ValueError("node classification requires labels on the graph")
        labels = g.labels
        out_dim = int(labels.max()) + 1
        if split is None:
            split = split_nodes(g, cfg.fractions, cfg.seed)
        msg_graph = g
    else:
        if split is None:
            split = split_edges(g, cfg.fractions, cfg.seed)
        if not isinstance(split, EdgeSplitSpec):
            raise ValueError("link prediction requires an edge split")
        labels = None
        out_dim = cfg.hidden
        msg_graph = _lp_message_graph(g, split)

    profile = mu_profile(msg_graph, cfg.k, cfg.delta_mode, cfg.cache_dir)
    mu = normalize_delta(profile)
    weights = LossWeights(cfg.omega_nu, cfg.omega_was, cfg.p)
    fd_params = FermiDiracParams(cfg.fermi_r, cfg.fermi_t)

    model = JointSpaceGNN(
        in_dim=features.shape[1], hidden_dim=cfg.hidden, out_dim=out_dim,
        num_layers=cfg.layers, q_dim=cfg.q_dim, curvature=cfg.curvature,
        trainable_curvature=cfg.trainable_curvature, seed=cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)

    if cfg.task == "lp":
        train_pos = _edge_pairs(g, split.train)
        val_pos = _edge_pairs(g, split.val)
        test_pos = _edge_pairs(g, split.test)
        val_neg = np.asarray(split.val_neg, dtype=np.int64)
        test_neg = np.asarray(split.test_neg, dtype=np.int64)

    loss_trace: list[float] = []
    best_val = -math.inf
    best_val_loss = math.inf
    best_epoch = 0
    best_state: dict[str, np.ndarray] | None = None
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        rng_epoch = np.random.default_rng([cfg.seed, epoch])
        out, record = model.forward(msg_graph, features, training=True,
                                    dropout=cfg.dropout, rng=rng_epoch)
        if cfg.task == "nc":
            task_loss = cross_entropy_nc(out.z, labels, split.train)
        else:
            neg_pairs = np.asarray(
                sample_non_edges(g, len(train_pos), rng_epoch), dtype=np.int64)
            task_loss = lp_loss(out.z, train_pos, neg_pairs, fd_params)
        loss = overall_loss(task_loss,
                            [(r.beta_r, r.beta_d) for r in record],
                            mu, weights, cfg.comparison_mode)
        loss_value = float(loss.value)
        if not math.isfinite(loss_value):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
        ad.backward(loss)
        opt.step()
        if cfg.trainable_curvature:
            for lp in model.layers:
                lp.hgat.curvature.value = np.maximum(
                    lp.hgat.curvature.value, _MIN_CURVATURE)
        loss_trace.append(loss_value)

        if cfg.task == "nc":
            val_metric, val_loss = _nc_eval(model, msg_graph, features, labels,
                                            split.val, cfg)
        else:
            val_metric, val_loss = _lp_eval(model, msg_graph, features, val_pos,
                                            val_neg, cfg)
        # A strictly better metric improves; an equal metric with strictly
        # lower validation loss also counts (small validation sets saturate).
        if val_metric > best_val or (val_metric == best_val
                                     and val_loss < best_val_loss):
            best_val = val_metric
            best_val_loss = val_loss
            best_epoch = epoch
            best_state = model.state_dict()
        if epoch - best_epoch >= cfg.patience:
            break

    if best_state is not None:
        model.load_state_dict(best_state)
    if cfg.task == "nc":
        test_metric, _ = _nc_eval(model, msg_graph, features, labels,
                                  split.test, cfg)
    else:
        test_metric, _ = _lp_eval(model, msg_graph, features, test_pos,
                                  test_neg, cfg)

    _, record = model.forward(msg_graph, features, training=False)
    beta_samples = tuple(tuple(float(b) for b in r.beta_r.value) for r in record)
    w2_unif, w2_mu = _beta_diagnostics(beta_samples, mu)

    report = RunReport(
        best_val_metric=float(best_val),
        test_metric=float(test_metric),
        epoch_of_best=best_epoch,
        epochs_run=epoch,
        loss_trace=tuple(loss_trace),
        beta_samples=beta_samples,
        w2_nu_unif=w2_unif,
        w2_nu_mu=w2_mu,
        config=asdict(cfg),
        wall_time=time.monotonic() - t_start,
    )
    if return_model:
        return report, model, split
    return report


# ---------------------------------------------------------------------------
# Diagnostics, grids, seeds
# ---------------------------------------------------------------------------

def _beta_diagnostics(beta_samples, mu: np.ndarray) -> tuple[float, float]:
    betas = np.asarray(beta_samples[:2] if len(beta_samples) >= 2 else beta_samples)
    avg = betas.mean(axis=0)
    w2_unif = wasserstein_1d(avg, unif_reference(avg.size), 2.0)
    w2_mu = wasserstein_1d(avg, mu, 2.0)
    return float(w2_unif), float(w2_mu)


def analyze_hyperbolicities(report: RunReport, mu) -> tuple[float, float]:
    """Distance of the learned selection weights from uniform and from the profile.

    Per-node weights from the first two layers (all layers for shallower
    models) are averaged before comparing.
    """
    if not report.beta_samples:
        raise ValueError("report carries no beta record")
    return _beta_diagnostics(report.beta_samples, np.asarray(mu, dtype=np.float64))


def run_grid(g: WeightedGraph, base_cfg: TrainConfig, grid: dict[str, list],
             workers: int = 1) -> tuple[RunReport, list[dict]]:
    """Train every point of a parameter lattice; select by validation metric."""
    if not grid:
        raise ValueError("grid must not be empty")
    names = sorted(grid)
    points = [dict(zip(names, combo))
              for combo in itertools.product(*(grid[n] for n in names))]

    def run_one(overrides: dict) -> RunReport:
        return train(g, replace(base_cfg, **overrides))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run_one, points))
    else:
        reports = [run_one(p) for p in points]
    table = [{**pt, "val_metric": r.best_val_metric, "test_metric": r.test_metric}
             for pt, r in zip(points, reports)]
    best_idx = max(range(len(reports)), key=lambda i: reports[i].best_val_metric)
    return reports[best_idx], table


def run_seeds(g: WeightedGraph, cfg: TrainConfig,
              seeds: list[int], workers: int = 1) -> dict:
    """Repeat a configuration across seeds; report mean and std of the metrics."""
    if not seeds:
        raise ValueError("need at least one seed")

    def run_one(s: int) -> RunReport:
        return train(g, replace(cfg, seed=s))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run_one, seeds))
    else:
        reports = [run_one(s) for s in seeds]
    tests = np.array([r.test_metric for r in reports])
    vals = np.array([r.best_val_metric for r in reports])
    return {
        "seeds": list(seeds),
        "test_mean": float(tests.mean()),
        "test_std": float(tests.std(ddof=1)) if len(seeds) > 1 else 0.0,
        "val_mean": float(vals.mean()),
        "val_std": float(vals.std(ddof=1)) if len(seeds) > 1 else 0.0,
        "reports": reports,
    }


# ---------------------------------------------------------------------------
# Synthetic task
# ---------------------------------------------------------------------------

def synthetic_nc_graph(feature_dim: int = 8, noise: float = 0.4,
                       seed: int = 0) -> WeightedGraph:
    """Reference combined graph with planted two-class labels.

    Lattice nodes are class 0 and tree nodes class 1; features are noisy
    class indicators so the task is learnable but not trivial.
    """
    from .graphs import reference_combined_graph

    g = reference_combined_graph()
    labels = np.array([0] * 25 + [1] * 15, dtype=np.int64)
    rng = np.random.default_rng(seed)
    features = rng.normal(scale=noise, size=(g.num_nodes, feature_dim))
    features[np.arange(g.num_nodes), labels] += 1.0
    return g.with_features(features).with_labels(labels)


def synthetic_lp_tree(depth: int = 4, feature_dim: int = 8, noise: float = 0.05,
                      seed: int = 0) -> WeightedGraph:
    """Balanced binary tree with planar-layout coordinates as node features.

    Each node's leading two feature dimensions hold its position in a radial
    drawing of the tree (radius = depth, angle = center of its subtree's
    angular wedge) plus noise, so features correlate with proximity the way
    attribute vectors do in real link-prediction benchmarks.
    """
    from .graphs import generate_tree

    g = generate_tree(2, depth)
    n = g.num_nodes
    children: dict[int, list[int]] = {v: [] for v in range(n)}
    depths = np.zeros(n, dtype=np.int64)
    for u, v, _ in g.edges:
        children[u].append(v)
        depths[v] = depths[u] + 1

    coords = np.zeros((n, 2))
    def place(v: int, lo: float, hi: float) -> None:
        angle = (lo + hi) / 2.0
        r = float(depths[v])
        coords[v] = (r * math.cos(angle), r * math.sin(angle))
        kids = children[v]
        for i, ch in enumerate(kids):
            width = (hi - lo) / len(kids)
            place(ch, lo + i * width, lo + (i + 1) * width)
    place(0, 0.0, 2.0 * math.pi)

    rng = np.random.default_rng(seed)
    features = rng.normal(scale=noise, size=(n, feature_dim))
    features[:, :2] += coords
    return g.with_features(features)
