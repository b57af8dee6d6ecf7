"""Small dense Q-network in plain numpy with hand-written backprop and Adam."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "fcrstack-qnet"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class QFunction:
    """Feed-forward ReLU network mapping observations to one value per action."""

    def __init__(self, obs_dim: int, n_actions: int = 3, hidden=(128, 128), seed: int = 0):
        self.sizes = [int(obs_dim), *map(int, hidden), int(n_actions)]
        rng = np.random.default_rng(seed)
        self.params: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            # He init for the ReLU layers
            self.params.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))

    @property
    def obs_dim(self) -> int:
        return self.sizes[0]

    @property
    def n_actions(self) -> int:
        return self.sizes[-1]

    def copy(self) -> "QFunction":
        q = QFunction.__new__(QFunction)
        q.sizes = list(self.sizes)
        q.params = [p.copy() for p in self.params]
        return q

    def load_from(self, other: "QFunction") -> None:
        for dst, src in zip(self.params, other.params):
            dst[...] = src

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def forward(self, x):
        """Returns ``(q_values, cache)``; accepts one observation or a batch."""
        h = np.atleast_2d(np.asarray(x, dtype=float))
        cache = [h]
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            z = h @ W + b
            h = np.maximum(z, 0.0) if i < n_layers - 1 else z
            cache.append(h)
        out = h if np.ndim(x) > 1 else h[0]
        return out, cache

    def backward(self, cache, grad_out: np.ndarray) -> list[np.ndarray]:
        """Gradients of a scalar loss w.r.t. every parameter given dL/dQ (batch x actions)."""
        grads = [None] * len(self.params)
        g = np.atleast_2d(grad_out)
        n_layers = len(self.params) // 2
        for i in reversed(range(n_layers)):
            h_in = cache[i]
            W = self.params[2 * i]
            grads[2 * i] = h_in.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = (g @ W.T) * (cache[i] > 0)
        return grads

    # -- flat parameter views ------------------------------------------------

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        i = 0
        for p in self.params:
            n = p.size
            p[...] = flat[i : i + n].reshape(p.shape)
            i += n

    # -- checkpoints -----------------------------------------------------------

    def save(self, path, meta: dict | None = None) -> None:
        doc = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "sizes": self.sizes,
            "meta": meta or {},
            "params": [p.tolist() for p in self.params],
        }
        Path(path).write_text(json.dumps(doc) + "\n")

    @classmethod
    def load(cls, path) -> "QFunction":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path} is not a Q-network checkpoint")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {doc.get('version')}")
        q = cls.__new__(cls)
        q.sizes = [int(s) for s in doc["sizes"]]
        q.params = [np.array(p, dtype=float) for p in doc["params"]]
        expected = []
        for a, b in zip(q.sizes[:-1], q.sizes[1:]):
            expected += [(a, b), (b,)]
        if [p.shape for p in q.params] != expected:
            raise CheckpointError(f"{path}: parameter shapes do not match layer sizes")
        return q


def huber(delta: np.ndarray, kappa: float = 1.0):
    """Elementwise Huber loss and its derivative."""
    a = np.abs(delta)
    quad = a <= kappa
    loss = np.where(quad, 0.5 * delta**2, kappa * (a - 0.5 * kappa))
    grad = np.where(quad, delta, kappa * np.sign(delta))
    return loss, grad


def td_loss_and_grads(q: QFunction, obs, actions, targets, kappa: float = 1.0):
    """Mean Huber loss on ``Q(s, a) - y`` and its parameter gradients."""
    values, cache = q.forward(obs)
    idx = np.arange(len(actions))
    delta = values[idx, actions] - targets
    loss, dl = huber(delta, kappa)
    grad_out = np.zeros_like(values)
    grad_out[idx, actions] = dl / len(actions)
    return float(loss.mean()), q.backward(cache, grad_out)


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float = 3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
