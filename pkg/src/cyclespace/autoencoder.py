"""Fully connected autoencoder with reverse-mode gradients and Adam, in numpy.

Five dense layers encode ``R^m`` to a latent of size ``n_s``; five mirrored
layers decode back. Hidden layers use ReLU, the latent and output layers are
linear. Inputs are standardised per channel with statistics of the training
history, and outputs are mapped back to the original units.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

__all__ = ["TrainConfig", "MlpAutoencoder", "TrainingDivergence", "train_autoencoder"]

log = logging.getLogger(__name__)


class TrainingDivergence(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 2e-4
    batch_size: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    hidden_width: int | None = None  # default max(16, m)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not (self.learning_rate > 0 and self.eps > 0):
            raise ValueError("learning rate and eps must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")


@dataclass
class MlpAutoencoder:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    mean: np.ndarray
    scale: np.ndarray
    loss_history: list[float] = field(default_factory=list)

    # layer index (0-based) of the latent output; ReLU everywhere except here and at the end
    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def latent_layer(self) -> int:
        return self.n_layers // 2 - 1

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def m(self) -> int:
        return self.dims[0]

    @property
    def latent_dim(self) -> int:
        return self.dims[self.latent_layer + 1]

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1] if self.loss_history else float("nan")

    @classmethod
    def init(cls, m: int, latent: int, width: int, rng: np.random.Generator, depth: int = 5):
        dims = [m] + [width] * (depth - 1) + [latent] + [width] * (depth - 1) + [m]
        weights, biases = [], []
        for i in range(len(dims) - 1):
            fan_in = dims[i]
            gain = 2.0 if i + 1 not in (depth, 2 * depth) else 1.0
            weights.append(rng.standard_normal((dims[i], dims[i + 1])) * np.sqrt(gain / fan_in))
            biases.append(np.zeros(dims[i + 1]))
        return cls(weights, biases, np.zeros(m), np.ones(m))

    def _is_linear(self, layer: int) -> bool:
        return layer == self.latent_layer or layer == self.n_layers - 1

    def _forward(self, X):
        """Batch-major forward pass in standardised units; keeps pre-activations."""
        acts, pre = [X], []
        a = X
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            zl = a @ W + b
            pre.append(zl)
            a = zl if self._is_linear(i) else np.maximum(zl, 0.0)
            acts.append(a)
        return acts, pre

    def _grads(self, X):
        acts, pre = self._forward(X)
        diff = acts[-1] - X
        loss = float(np.mean(diff * diff))
        g = 2.0 * diff / diff.size
        gW, gb = [None] * self.n_layers, [None] * self.n_layers
        for i in range(self.n_layers - 1, -1, -1):
            if not self._is_linear(i):
                g = g * (pre[i] > 0)
            gW[i] = acts[i].T @ g
            gb[i] = g.sum(axis=0)
            if i:
                g = g @ self.weights[i].T
        return loss, gW, gb

    def standardize(self, z):
        return (z - self.mean[:, None]) / self.scale[:, None]

    def loss(self, history: np.ndarray) -> float:
        X = self.standardize(history).T
        out = self._forward(X)[0][-1]
        return float(np.mean((out - X) ** 2))

    def encode(self, z):
        z = np.asarray(z, dtype=float)
        vec = z.ndim == 1
        X = self.standardize(z[:, None] if vec else z).T
        a = X
        for i in range(self.latent_layer + 1):
            a = a @ self.weights[i] + self.biases[i]
            if not self._is_linear(i):
                a = np.maximum(a, 0.0)
        return a[0] if vec else a.T

    def reconstruct(self, z):
        """AE(z) in original units; ``z`` is an m-vector or an m x T matrix."""
        z = np.asarray(z, dtype=float)
        vec = z.ndim == 1
        Z = z[:, None] if vec else z
        if Z.shape[0] != self.m:
            raise ValueError(f"model expects {self.m} channels, got {Z.shape[0]}")
        out = self._forward(self.standardize(Z).T)[0][-1].T
        out = out * self.scale[:, None] + self.mean[:, None]
        return out[:, 0] if vec else out

    __call__ = reconstruct

    def to_json(self) -> str:
        return json.dumps(
            {
                "dims": self.dims,
                "latent_layer": self.latent_layer,
                "weights": [w.ravel().tolist() for w in self.weights],  # row-major (in, out)
                "biases": [b.tolist() for b in self.biases],
                "normalization": {"mean": self.mean.tolist(), "scale": self.scale.tolist()},
                "loss_history": list(self.loss_history),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "MlpAutoencoder":
        d = json.loads(text)
        dims = d["dims"]
        weights = [
            np.asarray(w, dtype=float).reshape(dims[i], dims[i + 1]) for i, w in enumerate(d["weights"])
        ]
        biases = [np.asarray(b, dtype=float) for b in d["biases"]]
        norm = d["normalization"]
        return cls(
            weights, biases, np.asarray(norm["mean"]), np.asarray(norm["scale"]),
            list(d.get("loss_history", [])),
        )


def train_autoencoder(history: np.ndarray, latent_dim: int, cfg: TrainConfig = TrainConfig()
                      ) -> MlpAutoencoder:
    """Minibatch Adam on the mean squared reconstruction error.

    ``history`` is m x T. ``loss_history`` on the returned model holds the
    full-training-set loss (standardised units) before training and after
    each epoch.
    """
    history = np.asarray(history, dtype=float)
    m, T = history.shape
    if T < cfg.batch_size:
        raise ValueError(f"need at least batch_size={cfg.batch_size} samples, got {T}")
    if not np.all(np.isfinite(history)):
        raise ValueError("history contains non-finite values")
    if not 1 <= latent_dim <= m:
        raise ValueError("latent dimension must lie in [1, m]")
    rng = np.random.default_rng([cfg.seed, 0xAE])
    width = cfg.hidden_width or max(16, m)
    model = MlpAutoencoder.init(m, latent_dim, width, rng)
    model.mean = history.mean(axis=1)
    std = history.std(axis=1)
    model.scale = np.where(std > 1e-12, std, 1.0)

    X = model.standardize(history).T
    params = model.weights + model.biases
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    b1, b2 = cfg.beta1, cfg.beta2
    step = 0
    model.loss_history = [model.loss(history)]
    for epoch in range(cfg.epochs):
        order = rng.permutation(T)
        for start in range(0, T, cfg.batch_size):
            batch = X[order[start : start + cfg.batch_size]]
            loss, gW, gb = model._grads(batch)
            if not np.isfinite(loss):
                raise TrainingDivergence(f"non-finite loss at epoch {epoch}, step {step}")
            step += 1
            c1 = 1 - b1**step
            c2 = 1 - b2**step
            for k, (p, g) in enumerate(zip(params, gW + gb)):
                m1[k] *= b1
                m1[k] += (1 - b1) * g
                m2[k] *= b2
                m2[k] += (1 - b2) * g * g
                p -= cfg.learning_rate * (m1[k] / c1) / (np.sqrt(m2[k] / c2) + cfg.eps)
        full = model.loss(history)
        if not np.isfinite(full):
            raise TrainingDivergence(f"non-finite training loss after epoch {epoch}")
        model.loss_history.append(full)
        log.debug("epoch %d loss %.6g", epoch, full)
    return model
