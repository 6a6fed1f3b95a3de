"""Dense networks with explicit backprop, Adam, policy heads, and GAE.

All parameters of a network live in one flat float64 vector; layer
weights and biases are reshaped views into it. That keeps gradient
checking, soft target updates, checkpointing, and optimizer state
congruence trivial: everything is arithmetic on flat arrays.

Hidden layers use tanh; the output layer is linear. Initialisation is
scaled-uniform (Glorot) on weights with zero biases.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np


class GradientError(Exception):
    pass


class DenseNet:
    """Fully connected tanh network over a flat parameter vector.

    ``out_scale`` shrinks the output layer's initial weights; policy heads
    use a small value so early logits stay near zero (a near-uniform
    starting policy).
    """

    def __init__(self, layer_sizes, rng: np.random.Generator | None = None,
                 params: np.ndarray | None = None, out_scale: float = 1.0):
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.n_params = sum((i + 1) * o for i, o in
                            zip(self.layer_sizes, self.layer_sizes[1:]))
        if params is not None:
            params = np.asarray(params, dtype=np.float64)
            if params.shape != (self.n_params,):
                raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
            self.params = params.copy()
        else:
            self.params = np.zeros(self.n_params, dtype=np.float64)
        self._make_views()
        if params is None and rng is not None:
            self.init_glorot(rng, out_scale)

    def _make_views(self) -> None:
        self._spans = []  # (weight slice, bias slice, shape) per layer
        off = 0
        for fan_in, fan_out in zip(self.layer_sizes, self.layer_sizes[1:]):
            w_span = slice(off, off + fan_in * fan_out)
            off += fan_in * fan_out
            b_span = slice(off, off + fan_out)
            off += fan_out
            self._spans.append((w_span, b_span, (fan_in, fan_out)))
        self.weights = [self.params[w].reshape(shape) for w, _, shape in self._spans]
        self.biases = [self.params[b] for _, b, _ in self._spans]

    def init_glorot(self, rng: np.random.Generator, out_scale: float = 1.0) -> None:
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            fan_in, fan_out = w.shape
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            if k == last:
                limit *= out_scale
            w[:] = rng.uniform(-limit, limit, size=w.shape)
            b[:] = 0.0

    def copy(self) -> "DenseNet":
        return DenseNet(self.layer_sizes, params=self.params)

    def forward(self, x: np.ndarray):
        """Returns (output, cache); accepts (n, d) batches or a single (d,)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.layer_sizes[0]:
            raise ValueError(
                f"input size {x.shape[1]} does not match network input "
                f"{self.layer_sizes[0]}")
        acts = [x]
        a = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = z if k == last else np.tanh(z)
            acts.append(a)
        out = a[0] if single else a
        return out, acts

    def backward(self, cache, grad_out: np.ndarray) -> np.ndarray:
        """Exact reverse-mode gradient of sum(grad_out * output) w.r.t. params."""
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if grad_out.ndim == 1:
            grad_out = grad_out[None, :]
        if cache[0].shape[0] != grad_out.shape[0]:
            raise ValueError("cache/gradient batch size mismatch")
        grads = np.zeros_like(self.params)
        g = grad_out
        for k in range(len(self.weights) - 1, -1, -1):
            w_span, b_span, shape = self._spans[k]
            grads[w_span] = (cache[k].T @ g).reshape(-1)
            grads[b_span] = g.sum(axis=0)
            if k > 0:
                g = (g @ self.weights[k].T) * (1.0 - cache[k] ** 2)
        return grads


class Adam:
    """Adam with bias correction and optional global-norm gradient clipping."""

    def __init__(self, n_params: int, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params, dtype=np.float64)
        self.v = np.zeros(n_params, dtype=np.float64)
        self.t = 0

    def step(self, params: np.ndarray, grads: np.ndarray,
             max_grad_norm: float | None = None) -> np.ndarray:
        if params.shape != self.m.shape or grads.shape != self.m.shape:
            raise ValueError("parameter/gradient shape mismatch with optimizer state")
        if not np.all(np.isfinite(grads)):
            raise GradientError("non-finite gradient; parameters left untouched")
        if max_grad_norm is not None:
            norm = float(np.linalg.norm(grads))
            if norm > max_grad_norm:
                grads = grads * (max_grad_norm / norm)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads ** 2
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return params


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sample_action(logits: np.ndarray, epsilon: float,
                  rng: np.random.Generator) -> tuple[int, float]:
    """Epsilon-greedy draw layered over the categorical policy.

    With probability ``epsilon`` the action is uniform over the head;
    otherwise it is sampled from the softmax. The returned log-prob is
    always the policy's own softmax log-probability of the chosen action,
    never the mixture's, so importance ratios stay well defined.
    """
    logits = np.asarray(logits, dtype=np.float64)
    n = logits.shape[-1]
    if rng.random() < epsilon:
        action = int(rng.integers(n))
    else:
        cdf = np.cumsum(softmax(logits))
        action = int(min(np.searchsorted(cdf, rng.random(), side="right"), n - 1))
    return action, float(log_softmax(logits)[action])


def epsilon_at(step: int, start: float = 1.0, finish: float = 0.05,
               anneal_steps: int = 500_000) -> float:
    """Linear exploration schedule over environment steps."""
    if anneal_steps <= 0:
        return finish
    frac = min(1.0, max(0.0, step / anneal_steps))
    return start + (finish - start) * frac


def gae(rewards, values, next_values, dones, gamma: float,
        lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation, computed backwards.

    Returns ``(advantages, returns)`` with ``returns = advantages + values``.
    ``dones`` cuts bootstrapping: terminal steps use a next value of 0.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    next_values = np.asarray(next_values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not (rewards.shape == values.shape == next_values.shape == dones.shape):
        raise ValueError("gae inputs must share one length")
    T = len(rewards)
    adv = np.zeros(T, dtype=np.float64)
    last = 0.0
    for t in range(T - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values[t] * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv, adv + values


# ----------------------------------------------------------------------
# checkpoint format: one JSON header line, then raw little-endian float64
# bytes of every network's flat parameter vector, concatenated in header
# order.

CHECKPOINT_MAGIC = "atsc-checkpoint"


def save_checkpoint(path: str | Path, nets: dict[str, DenseNet],
                    scalars: dict[str, float] | None = None) -> None:
    entries = []
    offset = 0
    for name, net in nets.items():
        entries.append({"name": name, "layer_sizes": list(net.layer_sizes),
                        "offset": offset, "size": int(net.n_params)})
        offset += net.n_params
    header = {
        "format": CHECKPOINT_MAGIC,
        "format_version": 1,
        "dtype": "<f8",
        "nets": entries,
        "scalars": dict(scalars or {}),
    }
    blob = np.concatenate([net.params for net in nets.values()]) if nets else \
        np.zeros(0, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(blob.astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, DenseNet], dict[str, float]]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("format") != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        if header.get("format_version") != 1:
            raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
        flat = np.frombuffer(fh.read(), dtype="<f8")
    nets = {}
    for entry in header["nets"]:
        chunk = flat[entry["offset"]:entry["offset"] + entry["size"]]
        nets[entry["name"]] = DenseNet(entry["layer_sizes"], params=chunk)
    return nets, dict(header.get("scalars", {}))
