"""Minimal dense feedforward Q-value approximator.

Rectified-linear hidden layers, linear outputs, squared error masked to the
taken action's output, and a reverse-mode gradient with either an
adaptive-moment (default) or plain SGD update. Initialization is seeded and
uniform scaled by fan-in, so identical seeds give identical training
trajectories on identical data.
"""
from __future__ import annotations

import struct
from typing import List, Optional, Sequence, Tuple

import numpy as np

_MAGIC = b"IQNET\x00"
_VERSION = 1


class DenseNet:
    def __init__(
        self,
        layer_dims: Sequence[int],
        seed: int = 0,
        optimizer: str = "adam",
        _init: bool = True,
    ) -> None:
        if len(layer_dims) < 2:
            raise ValueError("need at least input and output layers")
        self.layer_dims = tuple(int(d) for d in layer_dims)
        self.optimizer = optimizer
        self.seed = seed
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        if _init:
            rng = np.random.default_rng(seed)
            for fan_in, fan_out in zip(self.layer_dims, self.layer_dims[1:]):
                bound = 1.0 / np.sqrt(fan_in)
                self.weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
                self.biases.append(rng.uniform(-bound, bound, size=fan_out))
        self._reset_optimizer_state()

    def _reset_optimizer_state(self) -> None:
        self._m = [np.zeros_like(w) for w in self.weights] + [
            np.zeros_like(b) for b in self.biases
        ]
        self._v = [np.zeros_like(p) for p in self._m]
        self._t = 0

    @property
    def n_inputs(self) -> int:
        return self.layer_dims[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_dims[-1]

    def clone(self) -> "DenseNet":
        """Deep copy sharing no mutable state; used for the target network."""
        other = DenseNet(self.layer_dims, seed=self.seed, optimizer=self.optimizer, _init=False)
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        other._reset_optimizer_state()
        return other

    def _forward_cached(self, x: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
        acts = [x]
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            a = z if i == last else np.maximum(z, 0.0)
            acts.append(a)
        return a, acts

    def forward(self, features: np.ndarray) -> np.ndarray:
        """Q-values for one feature vector or a batch of them."""
        x = np.asarray(features, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.n_inputs:
            raise ValueError(f"expected {self.n_inputs} features, got {x.shape[1]}")
        out, _ = self._forward_cached(x)
        return out[0] if single else out

    def fit_batch(
        self,
        inputs: np.ndarray,
        action_indices: np.ndarray,
        targets: np.ndarray,
        lr: float = 1e-3,
    ) -> float:
        """One gradient step on mean squared error over the selected outputs.

        Returns the pre-step loss. The gradient flows only through the
        output unit of each sample's taken action.
        """
        x = np.asarray(inputs, dtype=float)
        idx = np.asarray(action_indices, dtype=int)
        t = np.asarray(targets, dtype=float)
        if not (len(x) == len(idx) == len(t)):
            raise ValueError("batch arrays must have equal length")
        if not np.all(np.isfinite(t)):
            raise ValueError("non-finite target")
        n = len(x)
        out, acts = self._forward_cached(x)
        picked = out[np.arange(n), idx]
        err = picked - t
        loss = float(np.mean(err * err))

        d_out = np.zeros_like(out)
        d_out[np.arange(n), idx] = 2.0 * err / n

        grads_w: List[np.ndarray] = [np.empty(0)] * len(self.weights)
        grads_b: List[np.ndarray] = [np.empty(0)] * len(self.biases)
        delta = d_out
        for i in range(len(self.weights) - 1, -1, -1):
            a_prev = acts[i]
            grads_w[i] = delta.T @ a_prev
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i]) * (acts[i] > 0.0)

        self._step(grads_w + grads_b, lr)
        for p in self.weights + self.biases:
            if not np.all(np.isfinite(p)):
                raise FloatingPointError("non-finite parameter after update")
        return loss

    def _step(self, grads: List[np.ndarray], lr: float) -> None:
        params = self.weights + self.biases
        if self.optimizer == "sgd":
            for p, g in zip(params, grads):
                p -= lr * g
            return
        b1, b2, eps = 0.9, 0.999, 1e-8
        self._t += 1
        t = self._t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            p -= lr * m_hat / (np.sqrt(v_hat) + eps)

    def numeric_gradients(
        self, inputs: np.ndarray, action_indices: np.ndarray, targets: np.ndarray, h: float = 1e-5
    ) -> List[np.ndarray]:
        """Central finite-difference gradient of the same masked loss, used
        as the independent oracle for gradient checks."""
        x = np.asarray(inputs, dtype=float)
        idx = np.asarray(action_indices, dtype=int)
        t = np.asarray(targets, dtype=float)

        def loss() -> float:
            out, _ = self._forward_cached(x)
            err = out[np.arange(len(x)), idx] - t
            return float(np.mean(err * err))

        grads = []
        for p in self.weights + self.biases:
            g = np.zeros_like(p)
            it = np.nditer(p, flags=["multi_index"])
            while not it.finished:
                i = it.multi_index
                orig = p[i]
                p[i] = orig + h
                up = loss()
                p[i] = orig - h
                down = loss()
                p[i] = orig
                g[i] = (up - down) / (2 * h)
                it.iternext()
            grads.append(g)
        return grads

    def analytic_gradients(
        self, inputs: np.ndarray, action_indices: np.ndarray, targets: np.ndarray
    ) -> List[np.ndarray]:
        """Backprop gradients without applying an update."""
        x = np.asarray(inputs, dtype=float)
        idx = np.asarray(action_indices, dtype=int)
        t = np.asarray(targets, dtype=float)
        n = len(x)
        out, acts = self._forward_cached(x)
        d_out = np.zeros_like(out)
        d_out[np.arange(n), idx] = 2.0 * (out[np.arange(n), idx] - t) / n
        grads_w: List[np.ndarray] = [np.empty(0)] * len(self.weights)
        grads_b: List[np.ndarray] = [np.empty(0)] * len(self.biases)
        delta = d_out
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = delta.T @ acts[i]
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i]) * (acts[i] > 0.0)
        return grads_w + grads_b

    def save(self, path: str) -> None:
        """Versioned little-endian binary: magic, version, layer dims, then
        row-major float64 weight and bias arrays per layer."""
        with open(path, "wb") as f:
            f.write(_MAGIC)
            f.write(struct.pack("<HH", _VERSION, len(self.layer_dims)))
            f.write(struct.pack(f"<{len(self.layer_dims)}I", *self.layer_dims))
            for w, b in zip(self.weights, self.biases):
                f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
                f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str) -> "DenseNet":
        with open(path, "rb") as f:
            data = f.read()
        if len(data) < len(_MAGIC) + 4 or data[: len(_MAGIC)] != _MAGIC:
            raise ValueError("not a checkpoint file")
        off = len(_MAGIC)
        version, n_layers = struct.unpack_from("<HH", data, off)
        off += 4
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        if len(data) < off + 4 * n_layers:
            raise ValueError("truncated checkpoint header")
        dims = struct.unpack_from(f"<{n_layers}I", data, off)
        off += 4 * n_layers
        expect = sum(8 * (dims[i] * dims[i + 1] + dims[i + 1]) for i in range(n_layers - 1))
        if len(data) != off + expect:
            raise ValueError("checkpoint size does not match layer dims")
        net = cls(dims, _init=False)
        for fan_in, fan_out in zip(dims, dims[1:]):
            w = np.frombuffer(data, dtype="<f8", count=fan_out * fan_in, offset=off)
            off += 8 * fan_out * fan_in
            b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=off)
            off += 8 * fan_out
            net.weights.append(w.reshape(fan_out, fan_in).astype(float))
            net.biases.append(b.astype(float))
        net._reset_optimizer_state()
        return net
