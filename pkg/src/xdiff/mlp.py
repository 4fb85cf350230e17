"""Small dense network with deterministic training, plus its data plumbing.

The model is a plain affine stack with GELU (or ReLU) hidden activations
and a linear head, trained by minibatch Adam or SGD with early stopping
on a validation split.  Everything is seeded and single-threaded, so a
given (data, config) pair reproduces bit-identical weights.

``forward`` is generic over the scalar type: plain arrays evaluate
normally, and lists of CrossDuals are pushed through the same affine and
activation stack on the subset lattice, so any mixed partial derivative
of the trained network is available exactly.  GELU uses the exact erf
form, never the tanh approximation, so its higher derivatives all flow
through the erf derivative table.

Datasets are plain feature/target matrices with scale-only
normalization: each feature column is divided by its population standard
deviation; means are recorded but not subtracted unless centering is
requested explicitly.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import re
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import special

from .autodiff import (
    ERF,
    EXP,
    RECIPROCAL,
    CrossDual,
    lattice_compose,
    lattice_mul,
    max_const_table,
)

log = logging.getLogger(__name__)

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""


class ActivationError(ValueError):
    """The model's activation cannot support the requested derivative order."""


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    """Feature/target matrices plus the fitted normalization statistics."""

    features: np.ndarray
    targets: np.ndarray
    feature_std: np.ndarray | None = None
    feature_mean: np.ndarray | None = None
    normalized: bool = False
    centered: bool = False

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.targets.ndim == 1:
            self.targets = self.targets[:, None]
        if np.isnan(self.features).any() or np.isnan(self.targets).any():
            raise ValueError("dataset contains NaN")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def normalize(data: Dataset, center: bool = False) -> Dataset:
    """Scale each feature column by its population standard deviation.

    Means are fitted and recorded but subtracted only when ``center`` is
    set.  Constant columns keep their values: their std is recorded as 1
    and a warning is emitted.
    """
    if data.normalized:
        raise ValueError("dataset is already normalized")
    if data.n == 0:
        raise ValueError("cannot normalize an empty dataset")
    std = data.features.std(axis=0)
    mean = data.features.mean(axis=0)
    constant = std == 0.0
    if constant.any():
        warnings.warn(
            f"{int(constant.sum())} constant feature column(s); std recorded as 1",
            stacklevel=2,
        )
        std = np.where(constant, 1.0, std)
    feats = data.features - mean if center else data.features
    feats = feats / std
    return Dataset(feats, data.targets.copy(), std, mean, True, center)


def denormalize(data: Dataset) -> Dataset:
    """Inverse of normalize, restoring the original feature scale."""
    if not data.normalized:
        raise ValueError("dataset is not normalized")
    feats = data.features * data.feature_std
    if data.centered:
        feats = feats + data.feature_mean
    return Dataset(feats, data.targets.copy(), None, None, False, False)


@dataclass(frozen=True)
class Normalizer:
    """Feature scaling carried alongside a checkpoint."""

    std: np.ndarray
    mean: np.ndarray
    centered: bool = False

    def apply(self, features: np.ndarray) -> np.ndarray:
        feats = np.asarray(features, dtype=np.float64)
        if self.centered:
            feats = feats - self.mean
        return feats / self.std


_TARGET_NAME = re.compile(r"^y\d*$")


def save_csv(data: Dataset, path) -> None:
    """Write a dataset as CSV: header row, features first, targets in
    trailing columns named y (or y1..yq)."""
    p = data.dim
    q = data.targets.shape[1]
    names = [f"x{i + 1}" for i in range(p)]
    names += ["y"] if q == 1 else [f"y{j + 1}" for j in range(q)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(data.n):
            row = [repr(float(v)) for v in data.features[i]]
            row += [repr(float(v)) for v in data.targets[i]]
            w.writerow(row)


def load_csv(path) -> Dataset:
    """Read a dataset written by save_csv (or any CSV with trailing y* columns)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    is_target = [bool(_TARGET_NAME.match(name.strip())) for name in header]
    try:
        split = is_target.index(True)
    except ValueError:
        raise ValueError(f"{path}: no target columns (named y, y1, ...) found") from None
    if not all(is_target[split:]):
        raise ValueError(f"{path}: target columns must be trailing")
    mat = np.asarray([[float(v) for v in r] for r in rows], dtype=np.float64)
    return Dataset(mat[:, :split], mat[:, split:])


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden: tuple[int, ...] = (140, 100, 60, 20)
    output_dim: int = 1
    activation: str = "gelu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be at least 1")
        if any(w < 1 for w in self.hidden):
            raise ValueError("all hidden widths must be at least 1")
        if self.activation not in ("gelu", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "output_dim": self.output_dim,
            "activation": self.activation,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpConfig":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden=tuple(d["hidden"]),
            output_dim=int(d["output_dim"]),
            activation=str(d["activation"]),
            seed=int(d["seed"]),
        )


@dataclass
class Mlp:
    """Affine stack; weights[i] has shape (fan_out, fan_in)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    config: MlpConfig

    def __post_init__(self):
        dims = [self.config.input_dim, *self.config.hidden, self.config.output_dim]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise ValueError(f"layer {i} has shape {w.shape}, expected {(dims[i+1], dims[i])}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {i} contains non-finite values")

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.config)


def init_mlp(cfg: MlpConfig) -> Mlp:
    """Fan-in scaled uniform weights (bound 1/sqrt(fan_in)), zero biases.

    The modest bound matters beyond optimization speed: larger-gain
    variants leave high-frequency initialization noise in the fitted
    net, which shows up directly in its second and higher derivatives
    and drowns out weak interactions downstream.
    """
    rng = np.random.default_rng(cfg.seed)
    dims = [cfg.input_dim, *cfg.hidden, cfg.output_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases, cfg)


def gelu(x):
    """Exact-erf GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    if isinstance(x, CrossDual):
        from . import autodiff as ad

        return 0.5 * x * (1.0 + ad.erf(x / _SQRT2))
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + special.erf(x / _SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    phi = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    cdf = 0.5 * (1.0 + special.erf(x / _SQRT2))
    return cdf + x * phi


def _act(name: str, z: np.ndarray) -> np.ndarray:
    return gelu(z) if name == "gelu" else np.maximum(z, 0.0)


def _act_grad(name: str, z: np.ndarray) -> np.ndarray:
    return gelu_grad(z) if name == "gelu" else (z > 0).astype(np.float64)


def _gelu_lattice(z: np.ndarray, t: int) -> np.ndarray:
    e = lattice_compose(ERF, z * (1.0 / _SQRT2), t)
    e[..., 0] += 1.0
    return 0.5 * lattice_mul(z, e, t)


def forward_lattice(model: Mlp, arr: np.ndarray, t: int) -> np.ndarray:
    """Push a batch of lattice coefficients through the network.

    ``arr`` has shape (batch, input_dim, 2^t); the result has shape
    (batch, output_dim, 2^t).  Entry [..., 0] is the plain forward pass.
    """
    act = model.config.activation
    h = arr
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = np.einsum("oi,bik->bok", w, h)
        z[..., 0] += b
        if i == last:
            h = z
        elif act == "gelu":
            h = _gelu_lattice(z, t)
        else:
            h = lattice_compose(max_const_table(0.0), z, t)
    return h


def _forward_duals(model: Mlp, xs: Sequence) -> list[CrossDual]:
    t = next(d.ntags for d in xs if isinstance(d, CrossDual))
    xs = [
        d if isinstance(d, CrossDual) else CrossDual.constant(float(d), t)
        for d in xs
    ]
    if any(d.ntags != t for d in xs):
        raise ValueError("all inputs must share one tag universe")
    arr = np.stack([d.coeffs for d in xs])[None, :, :]
    out = forward_lattice(model, arr, t)
    return [CrossDual(t, out[0, j]) for j in range(out.shape[1])]


def forward(model: Mlp, x):
    """Evaluate the network on plain arrays or on CrossDual inputs.

    Arrays may be a single point (1d) or a batch (2d).  A sequence
    holding at least one CrossDual returns a list of CrossDual outputs
    whose empty-set coefficients equal the plain forward pass exactly;
    plain numbers in the sequence are lifted to constants.
    """
    if isinstance(x, (list, tuple)) and any(isinstance(v, CrossDual) for v in x):
        if len(x) != model.config.input_dim:
            raise ValueError(f"expected {model.config.input_dim} inputs, got {len(x)}")
        return _forward_duals(model, x)
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    h = arr[None, :] if single else arr
    if h.shape[1] != model.config.input_dim:
        raise ValueError(f"expected {model.config.input_dim} features, got {h.shape[1]}")
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w.T + b
        h = z if i == last else _act(model.config.activation, z)
    return h[0] if single else h


def softmax_lattice(arr: np.ndarray, t: int) -> np.ndarray:
    """Softmax across axis 1 of a (batch, classes, 2^t) coefficient array."""
    shifted = arr.copy()
    shifted[..., 0] -= arr[..., 0].max(axis=1, keepdims=True)
    e = lattice_compose(EXP, shifted, t)
    total = e.sum(axis=1, keepdims=True)
    return lattice_mul(e, lattice_compose(RECIPROCAL, total, t), t)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.003
    max_epochs: int = 200
    patience: int = 10
    batch_size: int = 100
    val_fraction: float = 0.2
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie strictly between 0 and 1")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainingReport:
    train_losses: list[float]
    val_losses: list[float]
    best_epoch: int
    stopped_epoch: int
    best_val_loss: float


def early_stop_epoch(val_losses: Sequence[float], patience: int) -> tuple[int, int]:
    """(best_epoch, stop_epoch), 1-based, as the training loop applies them.

    The loop halts after the first epoch that trails the best one by
    ``patience`` epochs; ties keep the earlier best.
    """
    best, best_loss = 1, float(val_losses[0])
    for e, v in enumerate(val_losses, start=1):
        if v < best_loss:
            best, best_loss = e, float(v)
        if e - best >= patience:
            return best, e
    return best, len(val_losses)


def _loss_and_grad(pred: np.ndarray, y: np.ndarray, classification: bool):
    if classification:
        p = _softmax(pred)
        eps = 1e-12
        loss = -np.sum(y * np.log(p + eps)) / len(y)
        return loss, (p - y) / len(y)
    diff = pred - y
    return np.mean(diff * diff), 2.0 * diff / diff.size


def _val_loss(model: Mlp, x: np.ndarray, y: np.ndarray, classification: bool) -> float:
    pred = forward(model, x)
    if classification:
        z = pred - pred.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return float(-np.sum(y * logp) / len(y))
    return float(np.mean((pred - y) ** 2))


def train(data: Dataset, mcfg: MlpConfig, tcfg: TrainConfig) -> tuple[Mlp, TrainingReport]:
    """Minibatch training with early stopping on a held-out split.

    Regression (output_dim 1) minimizes mean squared error; wider heads
    are trained as classifiers with softmax cross-entropy on one-hot (or
    soft) target rows.  Returns the weights of the best validation epoch.

    Regression targets are standardized internally (centered, unit
    spread) so the optimizer sees the same residual scale regardless of
    the target's units; the affine map is folded back into the last
    layer afterwards and reported losses stay in raw target units, so
    the returned model and report read as if the loop had run on raw
    targets with better conditioning.
    """
    if not data.normalized:
        raise ValueError("train expects a normalized dataset")
    if data.dim != mcfg.input_dim:
        raise ValueError(f"dataset has {data.dim} features, config expects {mcfg.input_dim}")
    if data.targets.shape[1] != mcfg.output_dim:
        raise ValueError(
            f"dataset has {data.targets.shape[1]} targets, config expects {mcfg.output_dim}"
        )
    classification = mcfg.output_dim > 1
    y_scale, y_shift = 1.0, 0.0
    if not classification:
        spread = float(data.targets.std())
        if math.isfinite(spread) and spread > 0.0:
            y_scale = spread
        y_shift = float(data.targets.mean())
    if y_scale != 1.0 or y_shift != 0.0:
        targets = (data.targets - y_shift) / y_scale
    else:
        targets = data.targets
    rng = np.random.default_rng(tcfg.seed)
    perm = rng.permutation(data.n)
    n_val = max(1, int(round(tcfg.val_fraction * data.n)))
    if n_val >= data.n:
        raise ValueError("validation split leaves no training rows")
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    x_tr, y_tr = data.features[train_idx], targets[train_idx]
    x_va, y_va = data.features[val_idx], targets[val_idx]

    model = init_mlp(mcfg)
    act = mcfg.activation
    params = model.weights + model.biases
    adam_m = [np.zeros_like(p) for p in params]
    adam_v = [np.zeros_like(p) for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    nlayers = len(model.weights)

    train_losses: list[float] = []
    val_losses: list[float] = []
    best_epoch, best_val = 0, math.inf
    best_weights = [w.copy() for w in model.weights]
    best_biases = [b.copy() for b in model.biases]
    stopped = 0

    for epoch in range(1, tcfg.max_epochs + 1):
        order = rng.permutation(len(x_tr))
        epoch_loss = 0.0
        for start in range(0, len(x_tr), tcfg.batch_size):
            idx = order[start : start + tcfg.batch_size]
            xb, yb = x_tr[idx], y_tr[idx]
            # forward, caching pre-activations
            acts = [xb]
            zs = []
            h = xb
            for i in range(nlayers):
                z = h @ model.weights[i].T + model.biases[i]
                zs.append(z)
                h = z if i == nlayers - 1 else _act(act, z)
                acts.append(h)
            loss, delta = _loss_and_grad(h, yb, classification)
            epoch_loss += float(loss) * len(idx)
            # backward
            grads_w = [None] * nlayers
            grads_b = [None] * nlayers
            for i in range(nlayers - 1, -1, -1):
                grads_w[i] = delta.T @ acts[i]
                grads_b[i] = delta.sum(axis=0)
                if i > 0:
                    delta = (delta @ model.weights[i]) * _act_grad(act, zs[i - 1])
            grads = grads_w + grads_b
            step += 1
            if tcfg.optimizer == "adam":
                for p, g, m, v in zip(params, grads, adam_m, adam_v):
                    m *= b1
                    m += (1 - b1) * g
                    v *= b2
                    v += (1 - b2) * g * g
                    mh = m / (1 - b1**step)
                    vh = v / (1 - b2**step)
                    p -= tcfg.learning_rate * mh / (np.sqrt(vh) + eps)
            else:
                for p, g in zip(params, grads):
                    p -= tcfg.learning_rate * g

        train_loss = epoch_loss / len(x_tr)
        val_loss = _val_loss(model, x_va, y_va, classification)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingError(f"training diverged (non-finite loss) at epoch {epoch}")
        train_losses.append(train_loss)
        val_losses.append(val_loss)
        log.debug("epoch %d train %.6g val %.6g", epoch, train_loss, val_loss)
        if val_loss < best_val:
            best_epoch, best_val = epoch, val_loss
            best_weights = [w.copy() for w in model.weights]
            best_biases = [b.copy() for b in model.biases]
        if epoch - best_epoch >= tcfg.patience:
            stopped = epoch
            break
    else:
        stopped = tcfg.max_epochs

    if y_scale != 1.0 or y_shift != 0.0:
        best_weights[-1] = best_weights[-1] * y_scale
        best_biases[-1] = best_biases[-1] * y_scale + y_shift
        raw = y_scale * y_scale
        train_losses = [l * raw for l in train_losses]
        val_losses = [l * raw for l in val_losses]
        best_val *= raw
    report = TrainingReport(train_losses, val_losses, best_epoch, stopped, best_val)
    return Mlp(best_weights, best_biases, mcfg), report


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_model(model: Mlp, path, normalizer: Normalizer | None = None) -> None:
    doc = {
        "config": model.config.to_dict(),
        "layers": [
            {"weights": w.tolist(), "bias": b.tolist()}
            for w, b in zip(model.weights, model.biases)
        ],
    }
    if normalizer is not None:
        doc["normalizer"] = {
            "std": normalizer.std.tolist(),
            "mean": normalizer.mean.tolist(),
            "centered": normalizer.centered,
        }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def load_model(path) -> tuple[Mlp, Normalizer | None]:
    doc = json.loads(Path(path).read_text())
    cfg = MlpConfig.from_dict(doc["config"])
    weights = [np.asarray(l["weights"], dtype=np.float64) for l in doc["layers"]]
    biases = [np.asarray(l["bias"], dtype=np.float64) for l in doc["layers"]]
    norm = None
    if "normalizer" in doc:
        nd = doc["normalizer"]
        norm = Normalizer(
            np.asarray(nd["std"], dtype=np.float64),
            np.asarray(nd["mean"], dtype=np.float64),
            bool(nd["centered"]),
        )
    return Mlp(weights, biases, cfg), norm
