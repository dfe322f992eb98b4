"""Numpy MLP with hand-written backprop and Adam, plus the gated update head.

The learned optimiser reads the warm-started mean and variance together with
the normalised costs of the learner's samples (in bank order) and emits four
blocks of ``H * control_dim`` values: mean gate, variance gate, proposed mean
and proposed variance. Gates go through a sigmoid, the proposed variance
through a softplus, and the new distribution is a per-entry convex mix of
the old one and the proposals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .controller import ControlDistribution, RolloutBatch, VAR_FLOOR

Array = NDArray[np.float64]
CHECKPOINT_VERSION = 1
STD_FLOOR = 1e-8


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


@dataclass
class Mlp:
    """Two hidden ReLU layers with inverted dropout. ``weights[l]`` is ``(fan_in, fan_out)``."""

    weights: list[Array]
    biases: list[Array]
    dropout_prob: float = 0.1

    @classmethod
    def init(cls, layer_sizes, rng: np.random.Generator, dropout_prob: float = 0.1,
             output_scale: float = 0.01) -> Mlp:
        weights, biases = [], []
        pairs = list(zip(layer_sizes[:-1], layer_sizes[1:]))
        for i, (n_in, n_out) in enumerate(pairs):
            std = np.sqrt(2.0 / n_in)
            if i == len(pairs) - 1:
                std *= output_scale
            weights.append(rng.normal(0.0, std, size=(n_in, n_out)))
            biases.append(np.zeros(n_out))
        return cls(weights, biases, dropout_prob)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def params(self) -> list[Array]:
        return self.weights + self.biases

    def copy(self) -> Mlp:
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.dropout_prob)

    def num_params(self) -> int:
        return sum(p.size for p in self.params)


def _dropout_masks(mlp: Mlp, batch_shape, dropout_seed) -> list[Array | None]:
    n_hidden = len(mlp.weights) - 1
    if dropout_seed is None or mlp.dropout_prob <= 0:
        return [None] * n_hidden
    rng = np.random.default_rng(dropout_seed)
    keep = 1.0 - mlp.dropout_prob
    return [
        (rng.random((*batch_shape, w.shape[1])) < keep) / keep for w in mlp.weights[:-1]
    ]


def _forward(mlp: Mlp, x: Array, masks):
    acts = [x]
    pre = []
    h = x
    for layer, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = h @ w + b
        if layer == len(mlp.weights) - 1:
            return z, acts, pre
        pre.append(z)
        h = np.maximum(z, 0.0)
        if masks[layer] is not None:
            h = h * masks[layer]
        acts.append(h)
    raise AssertionError("unreachable")


def forward(mlp: Mlp, x, train: bool = False, dropout_seed=None) -> Array:
    """Evaluate the network on one input vector or a ``(batch, input_dim)`` matrix.

    In train mode, dropout masks come from ``default_rng(dropout_seed)``;
    in inference mode no masks are applied.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != mlp.layer_sizes[0]:
        raise ValueError(f"input width {x.shape[-1]} != {mlp.layer_sizes[0]}")
    masks = _dropout_masks(mlp, x.shape[:-1], dropout_seed if train else None)
    return _forward(mlp, x, masks)[0]


def backward(mlp: Mlp, x, output_grad, train: bool = False, dropout_seed=None) -> list[Array]:
    """Parameter gradients (weights then biases) for a given output gradient.

    Replays the forward pass with the same dropout masks, then backpropagates
    ``output_grad``. Batched inputs accumulate gradients over the batch.
    """
    x = np.asarray(x, dtype=float)
    output_grad = np.asarray(output_grad, dtype=float)
    masks = _dropout_masks(mlp, x.shape[:-1], dropout_seed if train else None)
    out, acts, pre = _forward(mlp, x, masks)
    if output_grad.shape != out.shape:
        raise ValueError(f"output_grad shape {output_grad.shape} != {out.shape}")
    return _backprop(mlp, acts, pre, masks, output_grad)


def _backprop(mlp: Mlp, acts, pre, masks, output_grad) -> list[Array]:
    delta = output_grad.reshape(-1, output_grad.shape[-1])
    n_layers = len(mlp.weights)
    gw: list[Array] = [None] * n_layers  # type: ignore[list-item]
    gb: list[Array] = [None] * n_layers  # type: ignore[list-item]
    for layer in range(n_layers - 1, -1, -1):
        a = acts[layer].reshape(-1, acts[layer].shape[-1])
        gw[layer] = a.T @ delta
        gb[layer] = delta.sum(axis=0)
        if layer == 0:
            break
        delta = delta @ mlp.weights[layer].T
        if masks[layer - 1] is not None:
            delta = delta * masks[layer - 1].reshape(delta.shape)
        delta = delta * (pre[layer - 1].reshape(delta.shape) > 0)
    return gw + gb


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list[Array]
    v: list[Array]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    _scratch: list[Array] | None = field(default=None, repr=False, compare=False)

    @classmethod
    def zeros_like(cls, params, lr: float = 1e-3) -> AdamState:
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], lr)

    def scratch(self, params) -> list[Array]:
        if self._scratch is None or any(t.shape != p.shape for t, p in zip(self._scratch, params)):
            self._scratch = [np.empty_like(p) for p in params]
        return self._scratch


def adam_step(params: list[Array], grads: list[Array], state: AdamState) -> tuple[list[Array], AdamState]:
    """Bias-corrected Adam; updates ``params`` and ``state`` in place and returns both."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    scratch = state.scratch(params)
    for p, g, m, v, tmp in zip(params, grads, state.m, state.v, scratch):
        # in place to avoid temporaries on every step
        m *= b1
        np.multiply(g, 1.0 - b1, out=tmp)
        m += tmp
        v *= b2
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - b2
        v += tmp
        np.divide(v, c2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += state.eps
        np.divide(m, tmp, out=tmp)
        tmp *= state.lr / c1
        p -= tmp
    return params, state


# ---------------------------------------------------------------------------
# cost normalisation and input encoding


@dataclass(frozen=True)
class CostNormalizer:
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "std", max(float(self.std), STD_FLOOR))

    def __call__(self, costs):
        return (np.asarray(costs, dtype=float) - self.mean) / self.std


def fit_normalizer(costs) -> CostNormalizer:
    """Population mean and standard deviation over every cost entry."""
    c = np.asarray(costs, dtype=float).ravel()
    if c.size == 0:
        raise ValueError("cannot fit a normalizer on an empty dataset")
    return CostNormalizer(float(c.mean()), float(c.std()))


def encode_input(mean, var_diag, costs, normalizer: CostNormalizer, num_costs: int | None = None) -> Array:
    """``[mean, var_diag, normalised costs]`` with the first two flattened time-major.

    Works on single distributions (``(H, d)``) or batches (``(B, H, d)``).
    Costs stay in bank order.
    """
    mean = np.asarray(mean, dtype=float)
    var_diag = np.asarray(var_diag, dtype=float)
    costs = np.asarray(costs, dtype=float)
    if num_costs is not None and costs.shape[-1] != num_costs:
        raise ValueError(f"expected {num_costs} costs, got {costs.shape[-1]}")
    lead = mean.shape[:-2]
    return np.concatenate(
        [mean.reshape(*lead, -1), var_diag.reshape(*lead, -1), normalizer(costs)], axis=-1
    )


# ---------------------------------------------------------------------------
# gated update head


@dataclass
class GatedUpdateOutput:
    gate_mean: Array
    gate_var: Array
    proposal_mean: Array
    proposal_var: Array


def split_head(raw, horizon: int, control_dim: int) -> GatedUpdateOutput:
    raw = np.asarray(raw, dtype=float)
    k = horizon * control_dim
    if raw.shape[-1] != 4 * k:
        raise ValueError(f"head width {raw.shape[-1]} != 4 * {k}")
    shape = (*raw.shape[:-1], horizon, control_dim)
    blocks = [raw[..., i * k : (i + 1) * k].reshape(shape) for i in range(4)]
    # the floor only bites for logits far below zero, where softplus underflows
    proposal_var = np.maximum(softplus(blocks[3]), VAR_FLOOR)
    return GatedUpdateOutput(sigmoid(blocks[0]), sigmoid(blocks[1]), blocks[2], proposal_var)


def apply_gates(mean, var_diag, head: GatedUpdateOutput, adapt_covariance: bool):
    new_mean = (1.0 - head.gate_mean) * mean + head.gate_mean * head.proposal_mean
    if adapt_covariance:
        new_var = np.maximum((1.0 - head.gate_var) * var_diag + head.gate_var * head.proposal_var, VAR_FLOOR)
    else:
        new_var = np.asarray(var_diag, dtype=float)
    return new_mean, new_var


def learned_update(dist: ControlDistribution, costs, mlp: Mlp, normalizer: CostNormalizer,
                   adapt_covariance: bool = False) -> ControlDistribution:
    """Gated update of ``dist`` from the learner's costs (inference mode)."""
    x = encode_input(dist.mean, dist.var_diag, costs, normalizer)
    head = split_head(forward(mlp, x), dist.horizon, dist.control_dim)
    return ControlDistribution(*apply_gates(dist.mean, dist.var_diag, head, adapt_covariance))


def regression_loss(pred: ControlDistribution, target: ControlDistribution, adapt_covariance: bool = False) -> float:
    loss = float(np.mean((pred.mean - target.mean) ** 2))
    if adapt_covariance:
        loss += float(np.mean((pred.var_diag - target.var_diag) ** 2))
    return loss


def loss_and_grads(mlp: Mlp, x, mean, var_diag, target_mean, target_var=None,
                   adapt_covariance: bool = False, dropout_seed=None) -> tuple[float, list[Array]]:
    """Batch-averaged regression loss through the gated head and its parameter gradients.

    ``x`` is ``(B, input_dim)``; distributions are ``(B, H, d)``. With
    ``dropout_seed`` set the forward pass runs in train mode.
    """
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    var_diag = np.asarray(var_diag, dtype=float)
    target_mean = np.asarray(target_mean, dtype=float)
    batch, horizon, d = mean.shape
    train = dropout_seed is not None
    masks = _dropout_masks(mlp, x.shape[:-1], dropout_seed if train else None)
    raw, acts, pre = _forward(mlp, x, masks)
    k = horizon * d
    head = split_head(raw, horizon, d)
    n = batch * k

    diff_m = (1.0 - head.gate_mean) * mean + head.gate_mean * head.proposal_mean - target_mean
    loss = float(np.sum(diff_m**2) / n)
    d_new_m = 2.0 * diff_m / n
    g_raw = np.zeros_like(raw)
    g_raw[:, :k] = (d_new_m * (head.proposal_mean - mean) * head.gate_mean * (1.0 - head.gate_mean)).reshape(batch, k)
    g_raw[:, 2 * k : 3 * k] = (d_new_m * head.gate_mean).reshape(batch, k)

    if adapt_covariance:
        target_var = np.asarray(target_var, dtype=float)
        diff_v = (1.0 - head.gate_var) * var_diag + head.gate_var * head.proposal_var - target_var
        loss += float(np.sum(diff_v**2) / n)
        d_new_v = 2.0 * diff_v / n
        raw_hs = raw[:, 3 * k :].reshape(batch, horizon, d)
        g_raw[:, k : 2 * k] = (d_new_v * (head.proposal_var - var_diag) * head.gate_var * (1.0 - head.gate_var)).reshape(batch, k)
        live = softplus(raw_hs) > VAR_FLOOR
        g_raw[:, 3 * k :] = (d_new_v * head.gate_var * sigmoid(raw_hs) * live).reshape(batch, k)

    return loss, _backprop(mlp, acts, pre, masks, g_raw)


# ---------------------------------------------------------------------------
# learned optimiser bundle and checkpoints


@dataclass
class LearnedOptimizer:
    """Network, frozen cost normaliser and the shapes it was trained for.

    Calling it with ``(dist, batch)`` makes it a drop-in controller update;
    only the first ``num_samples`` costs of the batch are read.
    """

    mlp: Mlp
    normalizer: CostNormalizer
    horizon: int
    control_dim: int
    num_samples: int
    adapt_covariance: bool = False
    meta: dict = field(default_factory=dict)

    @classmethod
    def create(cls, horizon: int, control_dim: int, num_samples: int, hidden: int,
               rng: np.random.Generator, dropout_prob: float = 0.1,
               adapt_covariance: bool = False, normalizer: CostNormalizer | None = None) -> LearnedOptimizer:
        k = horizon * control_dim
        sizes = [2 * k + num_samples, hidden, hidden, 4 * k]
        return cls(Mlp.init(sizes, rng, dropout_prob), normalizer or CostNormalizer(),
                   horizon, control_dim, num_samples, adapt_covariance)

    def __call__(self, dist: ControlDistribution, batch: RolloutBatch) -> ControlDistribution:
        costs = np.asarray(batch.costs)[: self.num_samples]
        if costs.shape[0] != self.num_samples:
            raise ValueError(f"learned update needs {self.num_samples} costs, got {costs.shape[0]}")
        return learned_update(dist, costs, self.mlp, self.normalizer, self.adapt_covariance)

    def encode(self, mean, var_diag, costs) -> Array:
        return encode_input(mean, var_diag, costs, self.normalizer, self.num_samples)

    def to_dict(self) -> dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "layer_sizes": self.mlp.layer_sizes,
            "weights": [w.tolist() for w in self.mlp.weights],
            "biases": [b.tolist() for b in self.mlp.biases],
            "dropout_prob": self.mlp.dropout_prob,
            "normalizer": {"mean": self.normalizer.mean, "std": self.normalizer.std},
            "config": {
                "horizon": self.horizon,
                "control_dim": self.control_dim,
                "num_samples": self.num_samples,
                "adapt_covariance": self.adapt_covariance,
            },
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data: dict) -> LearnedOptimizer:
        if data.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {data.get('format_version')!r}")
        mlp = Mlp(
            [np.array(w, dtype=float) for w in data["weights"]],
            [np.array(b, dtype=float) for b in data["biases"]],
            float(data["dropout_prob"]),
        )
        if mlp.layer_sizes != list(data["layer_sizes"]):
            raise ValueError("checkpoint layer sizes do not match weight shapes")
        cfg = data["config"]
        norm = CostNormalizer(data["normalizer"]["mean"], data["normalizer"]["std"])
        opt = cls(mlp, norm, int(cfg["horizon"]), int(cfg["control_dim"]), int(cfg["num_samples"]),
                  bool(cfg["adapt_covariance"]), dict(data.get("meta", {})))
        if mlp.layer_sizes[0] != 2 * opt.horizon * opt.control_dim + opt.num_samples:
            raise ValueError("checkpoint input width does not match its config")
        if mlp.layer_sizes[-1] != 4 * opt.horizon * opt.control_dim:
            raise ValueError("checkpoint head width does not match its config")
        return opt

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path) -> LearnedOptimizer:
        return cls.from_dict(json.loads(Path(path).read_text()))
