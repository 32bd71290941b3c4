"""Small numpy networks with exact analytic gradients.

The feed-forward head and the tiny convolutional artifact extractor are
implemented directly so that parameter gradients are available in closed
form (finite-difference checkable) and training is bit-reproducible from a
seed on any BLAS.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

# Logits are clamped before the sigmoid so stored scores stay strictly
# inside (0, 1) in float64.
LOGIT_CLAMP = 30.0


class ModelError(Exception):
    """Raised for invalid model usage (shapes, training data, state)."""


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP)
    return 1.0 / (1.0 + np.exp(-z))


def bce_from_logits(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean binary cross-entropy computed stably from logits."""
    return float(np.mean(
        np.maximum(logits, 0.0) - logits * targets
        + np.log1p(np.exp(-np.abs(logits)))
    ))


class FeedForwardNet:
    """Fully-connected ReLU net with a single sigmoid output."""

    def __init__(self, input_dim: int, hidden: tuple[int, ...], seed: int):
        dims = (input_dim, *hidden, 1)
        rng = np.random.default_rng(seed)
        self.dims = dims
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for i in range(len(dims) - 1):
            fan_in = dims[i]
            # He init for ReLU layers, Xavier for the sigmoid output layer
            scale = np.sqrt(2.0 / fan_in) if i < len(dims) - 2 else np.sqrt(1.0 / fan_in)
            self.weights.append(rng.standard_normal((fan_in, dims[i + 1])) * scale)
            self.biases.append(np.zeros(dims[i + 1]))

    # -- inference ----------------------------------------------------------

    def logits(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        squeeze = h.ndim == 1
        if squeeze:
            h = h[None, :]
        if h.shape[1] != self.dims[0]:
            raise ModelError(
                f"input length {h.shape[1]} != expected {self.dims[0]}")
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        z = (h @ self.weights[-1] + self.biases[-1]).ravel()
        return z[0] if squeeze else z

    def predict(self, x: np.ndarray) -> np.ndarray:
        return sigmoid(self.logits(x))

    # -- gradients ----------------------------------------------------------

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray):
        """BCE loss plus gradients for every parameter and for the input.

        Returns (loss, weight_grads, bias_grads, input_grad).
        """
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        acts = [x]
        pre: list[np.ndarray] = []
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = h @ w + b
            pre.append(z)
            h = np.maximum(z, 0.0)
            acts.append(h)
        logits = (h @ self.weights[-1] + self.biases[-1]).ravel()
        loss = bce_from_logits(logits, y)

        n = len(y)
        g = ((1.0 / (1.0 + np.exp(-logits)) - y) / n)[:, None]
        w_grads = [np.empty(0)] * len(self.weights)
        b_grads = [np.empty(0)] * len(self.biases)
        w_grads[-1] = acts[-1].T @ g
        b_grads[-1] = g.sum(axis=0)
        gh = g @ self.weights[-1].T
        for i in range(len(self.weights) - 2, -1, -1):
            gz = gh * (pre[i] > 0.0)
            w_grads[i] = acts[i].T @ gz
            b_grads[i] = gz.sum(axis=0)
            gh = gz @ self.weights[i].T
        return loss, w_grads, b_grads, gh

    # -- persistence --------------------------------------------------------

    def named_tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{i}"] = w
            out[f"b{i}"] = b
        return out

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        for i in range(len(self.weights)):
            w, b = tensors[f"w{i}"], tensors[f"b{i}"]
            if w.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                raise ModelError(f"tensor shape mismatch at layer {i}")
            self.weights[i] = np.asarray(w, dtype=np.float64)
            self.biases[i] = np.asarray(b, dtype=np.float64)

    def architecture_hash(self) -> str:
        spec = {"dims": list(self.dims), "activation": "relu", "output": "sigmoid"}
        return hashlib.sha256(json.dumps(spec, sort_keys=True).encode()).hexdigest()

    def snapshot(self) -> list[np.ndarray]:
        return [w.copy() for w in self.weights] + [b.copy() for b in self.biases]

    def restore(self, snap: list[np.ndarray]) -> None:
        k = len(self.weights)
        self.weights = [a.copy() for a in snap[:k]]
        self.biases = [a.copy() for a in snap[k:]]


class Adam:
    """Adam optimizer over a list of parameter arrays."""

    def __init__(self, params: list[np.ndarray], lr: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class PlainSGD:
    """Plain gradient descent (zero momentum), used for extractor fine-tuning."""

    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        for p, g in zip(params, grads):
            p -= self.lr * g


@dataclass
class EarlyStopper:
    """Stop when the monitored loss fails to improve by min_delta for
    `patience` consecutive epochs; remembers the best epoch."""

    patience: int
    min_delta: float
    best: float = np.inf
    best_epoch: int = -1
    wait: int = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record an epoch value; returns True when training should stop."""
        if value < self.best - self.min_delta:
            self.best = value
            self.best_epoch = epoch
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience


def gradient_check(net: FeedForwardNet, x: np.ndarray, y: np.ndarray,
                   samples_per_tensor: int = 40, h: float = 1e-6,
                   seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks a seeded sample of coordinates in every parameter tensor.
    """
    _, w_grads, b_grads, _ = net.loss_and_grads(x, y)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for tensor, grad in list(zip(net.weights, w_grads)) + list(zip(net.biases, b_grads)):
        flat = tensor.reshape(-1)
        gflat = grad.reshape(-1)
        n = min(samples_per_tensor, flat.shape[0])
        for idx in rng.choice(flat.shape[0], size=n, replace=False):
            orig = flat[idx]
            flat[idx] = orig + h
            lp = net.loss_and_grads(x, y)[0]
            flat[idx] = orig - h
            lm = net.loss_and_grads(x, y)[0]
            flat[idx] = orig
            fd = (lp - lm) / (2.0 * h)
            denom = max(abs(fd), abs(gflat[idx]), 1e-12)
            worst = max(worst, abs(fd - gflat[idx]) / denom)
    return worst


# ---------------------------------------------------------------------------
# Tiny convolutional artifact extractor (desk-scale image path)
# ---------------------------------------------------------------------------

def _conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-padded 3x3 convolution via shift-and-accumulate.

    x: (B, H, W, Cin), w: (3, 3, Cin, Cout), b: (Cout,).
    """
    bsz, hh, ww, _ = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.zeros((bsz, hh, ww, w.shape[3]))
    for dy in range(3):
        for dx in range(3):
            out += xp[:, dy:dy + hh, dx:dx + ww, :] @ w[dy, dx]
    return out + b


def _conv3x3_backward(x: np.ndarray, w: np.ndarray, gout: np.ndarray):
    bsz, hh, ww, _ = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    gw = np.zeros_like(w)
    gxp = np.zeros_like(xp)
    for dy in range(3):
        for dx in range(3):
            patch = xp[:, dy:dy + hh, dx:dx + ww, :]
            gw[dy, dx] = np.tensordot(patch, gout, axes=([0, 1, 2], [0, 1, 2]))
            gxp[:, dy:dy + hh, dx:dx + ww, :] += gout @ w[dy, dx].T
    gb = gout.sum(axis=(0, 1, 2))
    return gw, gb, gxp[:, 1:-1, 1:-1, :]


class TinyConvNet:
    """conv3x3 -> ReLU -> 2x2 avgpool -> conv3x3 -> ReLU -> GAP -> linear.

    Input images must have even height/width of at least 4 pixels.
    """

    def __init__(self, out_dim: int, seed: int, channels: tuple[int, int] = (8, 16)):
        rng = np.random.default_rng(seed)
        c1, c2 = channels
        self.w1 = rng.standard_normal((3, 3, 3, c1)) * np.sqrt(2.0 / (9 * 3))
        self.b1 = np.zeros(c1)
        self.w2 = rng.standard_normal((3, 3, c1, c2)) * np.sqrt(2.0 / (9 * c1))
        self.b2 = np.zeros(c2)
        self.w3 = rng.standard_normal((c2, out_dim)) * np.sqrt(1.0 / c2)
        self.b3 = np.zeros(out_dim)
        self.out_dim = out_dim

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    @staticmethod
    def _prep(images: np.ndarray) -> np.ndarray:
        x = np.asarray(images, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[3] != 3:
            raise ModelError(f"expected (B, H, W, 3) images, got {x.shape}")
        if x.shape[1] % 2 or x.shape[2] % 2 or x.shape[1] < 4 or x.shape[2] < 4:
            raise ModelError("image height/width must be even and >= 4")
        return x / 255.0 if x.max() > 1.5 else x

    def forward(self, images: np.ndarray, keep: bool = False) -> np.ndarray:
        x = self._prep(images)
        z1 = _conv3x3(x, self.w1, self.b1)
        a1 = np.maximum(z1, 0.0)
        bsz, hh, ww, c1 = a1.shape
        p = a1.reshape(bsz, hh // 2, 2, ww // 2, 2, c1).mean(axis=(2, 4))
        z2 = _conv3x3(p, self.w2, self.b2)
        a2 = np.maximum(z2, 0.0)
        gap = a2.mean(axis=(1, 2))
        feats = gap @ self.w3 + self.b3
        if keep:
            self._cache = (x, z1, p, z2, a2, gap)
        return feats

    def backward(self, gfeats: np.ndarray) -> list[np.ndarray]:
        """Gradients for all parameters given d(loss)/d(features)."""
        x, z1, p, z2, a2, gap = self._cache
        bsz, hh2, ww2, _ = a2.shape
        gw3 = gap.T @ gfeats
        gb3 = gfeats.sum(axis=0)
        ggap = gfeats @ self.w3.T
        ga2 = np.broadcast_to(
            ggap[:, None, None, :] / (hh2 * ww2), a2.shape).copy()
        gz2 = ga2 * (z2 > 0.0)
        gw2, gb2, gp = _conv3x3_backward(p, self.w2, gz2)
        c1 = p.shape[3]
        ga1 = np.repeat(np.repeat(gp, 2, axis=1), 2, axis=2) / 4.0
        gz1 = ga1 * (z1 > 0.0)
        gw1, gb1, _ = _conv3x3_backward(x, self.w1, gz1)
        return [gw1, gb1, gw2, gb2, gw3, gb3]

    def named_tensors(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2,
                "b2": self.b2, "w3": self.w3, "b3": self.b3}

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
            cur = getattr(self, name)
            new = np.asarray(tensors[name], dtype=np.float64)
            if new.shape != cur.shape:
                raise ModelError(f"tensor shape mismatch for {name}")
            setattr(self, name, new)
