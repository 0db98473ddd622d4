"""Socio-economic index: thermometer encoding, bottleneck autoencoder, block trimeans."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import NonFiniteLoss, OutOfRangeCategory

SEI_VARIABLES = (
    "home_ownership", "materials_quality", "services_connection", "construction_quality",
    "overcrowding", "ubn", "household_education", "unemployed_count", "domestic_services",
    "head_activity", "head_education",
)
CLAMP = 1e-7


@dataclass(frozen=True)
class OrdinalSchema:
    names: tuple
    levels: tuple                  # K_i per variable; category 1 is the worst-off
    orient_by: str = "head_education"

    def __post_init__(self):
        if len(self.names) != len(self.levels):
            raise ValueError("names and levels differ in length")
        if any(k < 2 for k in self.levels):
            raise ValueError("every variable needs at least two categories")

    @property
    def width(self) -> int:
        return sum(k - 1 for k in self.levels)

    def groups(self):
        """Column slice of each variable in the thermometer matrix."""
        out, start = [], 0
        for k in self.levels:
            out.append(slice(start, start + k - 1))
            start += k - 1
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["names"]), tuple(int(k) for k in d["levels"]), d.get("orient_by", "head_education"))

    def to_dict(self):
        return {"names": list(self.names), "levels": list(self.levels), "orient_by": self.orient_by}


def encode_thermometer(schema: OrdinalSchema, values) -> np.ndarray:
    """x[j, (i, k)] = 1 iff v_i(j) >= k, for k = 2..K_i."""
    v = np.asarray(values)
    if v.ndim == 1:
        v = v[None, :]
    if v.shape[1] != len(schema.levels):
        raise ValueError(f"expected {len(schema.levels)} variables, got {v.shape[1]}")
    cols = []
    for i, K in enumerate(schema.levels):
        col = v[:, i]
        if np.any(col < 1) or np.any(col > K):
            raise OutOfRangeCategory(f"{schema.names[i]}: values outside 1..{K}")
        cols.append((col[:, None] >= np.arange(2, K + 1)[None, :]).astype(np.float64))
    return np.hstack(cols)


def decode_thermometer(schema: OrdinalSchema, X) -> np.ndarray:
    return np.column_stack([1 + X[:, g].sum(axis=1) for g in schema.groups()])


@dataclass
class TrainConfig:
    hidden: int | None = None     # d1; default max(8, ceil(D/2))
    dropout: float = 0.5
    epochs: int = 40
    batch: int = 64
    lr: float = 5e-3
    decay: float = 0.1            # lr / (1 + decay * epoch)
    seed: int = 0


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class AutoencoderModel:
    """D -> d1 -> 1 -> d1 -> D; tanh hidden units, logistic output."""

    params: dict
    schema: OrdinalSchema
    losses: list = field(default_factory=list)        # mean minibatch loss, dropout on
    eval_losses: list = field(default_factory=list)   # full-data loss, dropout off
    config: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def init(cls, schema: OrdinalSchema, hidden: int, rng) -> "AutoencoderModel":
        D = schema.width
        sizes = [(D, hidden), (hidden, 1), (1, hidden), (hidden, D)]
        params = {}
        for n, (a, b) in enumerate(sizes, 1):
            lim = math.sqrt(6.0 / (a + b))
            params[f"W{n}"] = rng.uniform(-lim, lim, size=(a, b))
            params[f"b{n}"] = np.zeros(b)
        return cls(params, schema)

    def forward(self, X, rng=None, dropout=0.0):
        """Returns output probabilities and the cache needed for backprop."""
        p = self.params
        keep = 1.0 - dropout

        def drop(h):
            if rng is None or dropout <= 0:
                return h, None
            m = (rng.random(h.shape) < keep) / keep
            return h * m, m

        h1 = np.tanh(X @ p["W1"] + p["b1"])
        h1d, m1 = drop(h1)
        code = np.tanh(h1d @ p["W2"] + p["b2"])
        h3 = np.tanh(code @ p["W3"] + p["b3"])
        h3d, m3 = drop(h3)
        out = _sigmoid(h3d @ p["W4"] + p["b4"])
        return out, (X, h1, h1d, m1, code, h3, h3d, m3)

    def encode(self, X) -> np.ndarray:
        p = self.params
        h1 = np.tanh(X @ p["W1"] + p["b1"])
        return np.tanh(h1 @ p["W2"] + p["b2"])[:, 0]

    def reconstruct(self, X) -> np.ndarray:
        return self.forward(X)[0]

    def loss_and_grads(self, X, rng=None, dropout=0.0):
        """Mean binary cross-entropy over all cells and its gradients."""
        p = self.params
        out, (X, h1, h1d, m1, code, h3, h3d, m3) = self.forward(X, rng, dropout)
        o = np.clip(out, CLAMP, 1 - CLAMP)
        n_cells = X.size
        loss = -float(np.sum(X * np.log(o) + (1 - X) * np.log(1 - o))) / n_cells
        g = {}
        d4 = (out - X) / n_cells
        g["W4"] = h3d.T @ d4
        g["b4"] = d4.sum(axis=0)
        dh3 = d4 @ p["W4"].T
        if m3 is not None:
            dh3 = dh3 * m3
        d3 = dh3 * (1 - h3 ** 2)
        g["W3"] = code.T @ d3
        g["b3"] = d3.sum(axis=0)
        dcode = d3 @ p["W3"].T
        d2 = dcode * (1 - code ** 2)
        g["W2"] = h1d.T @ d2
        g["b2"] = d2.sum(axis=0)
        dh1 = d2 @ p["W2"].T
        if m1 is not None:
            dh1 = dh1 * m1
        d1 = dh1 * (1 - h1 ** 2)
        g["W1"] = X.T @ d1
        g["b1"] = d1.sum(axis=0)
        return loss, g


def train_autoencoder(X, schema: OrdinalSchema, config: TrainConfig = TrainConfig()) -> AutoencoderModel:
    """Adam on binary cross-entropy with bootstrap-resampled mini-batches."""
    X = np.asarray(X, dtype=np.float64)
    N, D = X.shape
    if D != schema.width:
        raise ValueError("thermometer width does not match schema")
    if D < 2 or N < config.batch:
        raise ValueError("need D >= 2 and at least one full batch of rows")
    rng = np.random.default_rng(config.seed)
    hidden = config.hidden or max(8, math.ceil(D / 2))
    model = AutoencoderModel.init(schema, hidden, rng)
    model.config = config
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m = {k: np.zeros_like(v) for k, v in model.params.items()}
    v = {k: np.zeros_like(w) for k, w in model.params.items()}
    steps_per_epoch = max(1, N // config.batch)
    t = 0
    for epoch in range(config.epochs):
        lr = config.lr / (1.0 + config.decay * epoch)
        total = 0.0
        for _ in range(steps_per_epoch):
            idx = rng.integers(0, N, size=config.batch)
            loss, grads = model.loss_and_grads(X[idx], rng, config.dropout)
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"loss diverged at epoch {epoch}, step {t}")
            total += loss
            t += 1
            for k, gk in grads.items():
                m[k] = beta1 * m[k] + (1 - beta1) * gk
                v[k] = beta2 * v[k] + (1 - beta2) * gk * gk
                mhat = m[k] / (1 - beta1 ** t)
                vhat = v[k] / (1 - beta2 ** t)
                model.params[k] -= lr * mhat / (np.sqrt(vhat) + eps)
        model.losses.append(total / steps_per_epoch)
        model.eval_losses.append(model.loss_and_grads(X)[0])
    return model


def metric_e(X, X_hat, levels, chunk: int | None = None, weights: str = "coded") -> float:
    """Mean per-household explained probability of the coded categories.

    Each coded cell (k = 2..K_i) contributes
    ``exp(x log x_hat + (1 - x) log(1 - x_hat))``, i.e. the probability the
    reconstruction gives the observed bit.  ``weights="coded"`` divides by
    sum(K_i - 1) so the weights form an average and E reaches 1 on perfect
    reconstruction; ``weights="categories"`` divides by sum(K_i) instead,
    which caps E at 1 - I / sum(K_i).
    """
    X = np.asarray(X, dtype=float)
    Xh = np.clip(np.asarray(X_hat, dtype=float), CLAMP, 1 - CLAMP)
    if weights == "coded":
        norm = float(sum(k - 1 for k in levels))
    elif weights == "categories":
        norm = float(sum(levels))
    else:
        raise ValueError(f"unknown weights {weights!r}")
    N = X.shape[0]
    step = chunk or N
    acc = 0.0
    for s in range(0, N, step):
        x, xh = X[s:s + step], Xh[s:s + step]
        acc += float(np.exp(x * np.log(xh) + (1 - x) * np.log1p(-xh)).sum())
    return acc / (N * norm)


def evaluate_model(model: AutoencoderModel, X, chunk: int | None = None, weights: str = "coded") -> float:
    return metric_e(X, model.reconstruct(np.asarray(X, dtype=float)), model.schema.levels, chunk, weights)


def score_households(model: AutoencoderModel, X) -> np.ndarray:
    """Bottleneck activation, signed to rise with head education, rescaled to [0, 1]."""
    X = np.asarray(X, dtype=float)
    s = model.encode(X)
    schema = model.schema
    ref = decode_thermometer(schema, X)[:, schema.names.index(schema.orient_by)]
    if np.ptp(s) > 0 and np.ptp(ref) > 0 and np.corrcoef(s, ref)[0, 1] < 0:
        s = -s
    lo, hi = s.min(), s.max()
    return (s - lo) / (hi - lo) if hi > lo else np.zeros_like(s)


def trimean(values) -> float:
    q1, q2, q3 = np.quantile(np.asarray(values, dtype=float), [0.25, 0.5, 0.75])
    return float(0.25 * q1 + 0.5 * q2 + 0.25 * q3)


def trimean_blocks(scores, blocks) -> pd.Series:
    """Tukey trimean of household scores per block (linear-interpolation quantiles)."""
    df = pd.DataFrame({"block_id": np.asarray(blocks), "s": np.asarray(scores, dtype=float)})
    eta = df.groupby("block_id", sort=True)["s"].apply(trimean)
    eta.name = "eta"
    return eta
