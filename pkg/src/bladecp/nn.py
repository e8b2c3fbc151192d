"""Framework-free neural network core: layers, loss, backprop, optimizers.

Everything runs on plain float64 numpy arrays in batch-first layout
((B, features) dense, (B, depth, H, W) spatial).  Single samples may be
passed without the batch axis; they are promoted and squeezed back.
Training is float64 throughout so finite-difference gradient checks are
clean; serialized parameters are float32.

Every layer validates its outputs and gradients for finiteness and
raises NNError naming the layer, so a divergence points at the first
place it appears instead of surfacing as a NaN loss epochs later.
"""

from __future__ import annotations

import json
import struct
from typing import Sequence

import numpy as np

PROB_FLOOR = 1e-12  # cross-entropy clamp on the true-class probability

MODEL_MAGIC = b"BNNM"
MODEL_VERSION = 1


class NNError(RuntimeError):
    """Numerical failure or structural misuse inside the network core."""


def _check_finite(arr: np.ndarray, layer: "Layer", what: str) -> None:
    if not np.isfinite(arr).all():
        raise NNError(f"non-finite {what} in {layer.describe()}")


def _apply_activation(layer: "Layer", z: np.ndarray) -> np.ndarray:
    if layer.activation == "identity":
        return z
    if layer.activation == "relu":
        return np.maximum(z, 0.0)
    if layer.activation == "softmax":
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)
    raise NNError(f"unknown activation {layer.activation!r} in {layer.describe()}")


def _activation_backward(layer: "Layer", grad: np.ndarray) -> np.ndarray:
    if layer.activation == "identity":
        return grad
    if layer.activation == "relu":
        return grad * (layer._z > 0.0)
    # Softmax Jacobian: dz_j = p_j (g_j - sum_k g_k p_k).
    p = layer._out
    return p * (grad - (grad * p).sum(axis=1, keepdims=True))


class Layer:
    """Base layer: batch-first forward/backward plus parameter access."""

    activation = "identity"
    _z: np.ndarray
    _out: np.ndarray

    def forward(self, x: np.ndarray, train: bool = False, rng=None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        return []

    def gradients(self) -> list[tuple[str, np.ndarray]]:
        return []

    def descriptor(self) -> dict:
        raise NotImplementedError

    def describe(self) -> str:
        return json.dumps(self.descriptor())


class Dense(Layer):
    """Fully connected layer out = f(W x + b), weights (n_out, n_in)."""

    def __init__(self, n_in: int, n_out: int, activation: str = "identity"):
        if n_in < 1 or n_out < 1:
            raise NNError(f"bad dense shape {n_out}x{n_in}")
        self.n_in, self.n_out = n_in, n_out
        self.activation = activation
        self.W = np.zeros((n_out, n_in))
        self.b = np.zeros(n_out)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)

    def forward(self, x, train=False, rng=None):
        if x.shape[-1] != self.n_in:
            raise NNError(f"input width {x.shape[-1]} != {self.n_in} in {self.describe()}")
        self._x = x
        self._z = x @ self.W.T + self.b
        self._out = _apply_activation(self, self._z)
        _check_finite(self._out, self, "activations")
        return self._out

    def backward(self, grad):
        dz = _activation_backward(self, grad)
        self.dW = dz.T @ self._x
        self.db = dz.sum(axis=0)
        dx = dz @ self.W
        _check_finite(self.dW, self, "gradient")
        _check_finite(dx, self, "gradient")
        return dx

    def parameters(self):
        return [("W", self.W), ("b", self.b)]

    def gradients(self):
        return [("W", self.dW), ("b", self.db)]

    def descriptor(self):
        return {"kind": "dense", "n_in": self.n_in, "n_out": self.n_out,
                "activation": self.activation}


class Conv2D(Layer):
    """2D convolution, stride 1, kernels (d, in_depth, k, k).

    Forward lowers each input window into a row (im2col) so the whole
    layer is one matrix product; backward scatters the column gradient
    back through the 25 kernel offsets.
    """

    def __init__(self, in_depth: int, out_depth: int, kernel: int = 5,
                 padding: str = "same", activation: str = "identity"):
        if padding not in ("same", "valid"):
            raise NNError(f"unknown padding {padding!r}")
        if in_depth < 1 or out_depth < 1 or kernel < 1:
            raise NNError(f"bad conv shape d={out_depth} in={in_depth} k={kernel}")
        self.in_depth, self.out_depth, self.kernel = in_depth, out_depth, kernel
        self.padding = padding
        self.activation = activation
        self.K = np.zeros((out_depth, in_depth, kernel, kernel))
        self.b = np.zeros(out_depth)
        self.dK = np.zeros_like(self.K)
        self.db = np.zeros_like(self.b)

    def _pad(self) -> int:
        return self.kernel // 2 if self.padding == "same" else 0

    def forward(self, x, train=False, rng=None):
        if x.ndim != 4 or x.shape[1] != self.in_depth:
            raise NNError(f"conv input shape {x.shape} != (B, {self.in_depth}, H, W)")
        k, p = self.kernel, self._pad()
        if x.shape[2] + 2 * p < k or x.shape[3] + 2 * p < k:
            raise NNError(f"input {x.shape[2]}x{x.shape[3]} smaller than kernel {k}")
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
        ho, wo = win.shape[2], win.shape[3]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(x.shape[0], ho * wo, -1)
        self._cols, self._xshape, self._hw = cols, x.shape, (ho, wo)
        z = cols @ self.K.reshape(self.out_depth, -1).T + self.b
        self._z = z.transpose(0, 2, 1).reshape(x.shape[0], self.out_depth, ho, wo)
        self._out = _apply_activation(self, self._z)
        _check_finite(self._out, self, "activations")
        return self._out

    def backward(self, grad):
        dz = _activation_backward(self, grad)
        batch, _, ho, wo = dz.shape
        k, p = self.kernel, self._pad()
        g = dz.reshape(batch, self.out_depth, ho * wo).transpose(0, 2, 1)
        self.dK = (
            g.reshape(-1, self.out_depth).T @ self._cols.reshape(-1, self._cols.shape[2])
        ).reshape(self.K.shape)
        self.db = dz.sum(axis=(0, 2, 3))
        dcols = (g @ self.K.reshape(self.out_depth, -1)).reshape(
            batch, ho, wo, self.in_depth, k, k
        ).transpose(0, 3, 1, 2, 4, 5)
        hp, wp = self._xshape[2] + 2 * p, self._xshape[3] + 2 * p
        dxp = np.zeros((batch, self.in_depth, hp, wp))
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + ho, j : j + wo] += dcols[:, :, :, :, i, j]
        dx = dxp[:, :, p : hp - p, p : wp - p] if p else dxp
        _check_finite(self.dK, self, "gradient")
        _check_finite(dx, self, "gradient")
        return dx

    def parameters(self):
        return [("K", self.K), ("b", self.b)]

    def gradients(self):
        return [("K", self.dK), ("b", self.db)]

    def descriptor(self):
        return {"kind": "conv", "in_depth": self.in_depth, "out_depth": self.out_depth,
                "kernel": self.kernel, "padding": self.padding,
                "activation": self.activation}


class MaxPool2x2(Layer):
    """2x2 max pooling, stride 2; argmax ties resolve to the first cell
    in row-major window order, and backward routes gradient only there."""

    def forward(self, x, train=False, rng=None):
        if x.ndim != 4:
            raise NNError(f"pool input shape {x.shape} is not (B, d, H, W)")
        b, d, h, w = x.shape
        if h % 2 or w % 2:
            raise NNError(f"pool input {h}x{w} has odd spatial dims")
        r = x.reshape(b, d, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        flat = r.reshape(b, d, h // 2, w // 2, 4)
        self._arg = flat.argmax(axis=-1)
        self._shape = x.shape
        out = np.take_along_axis(flat, self._arg[..., None], axis=-1)[..., 0]
        _check_finite(out, self, "activations")
        return out

    def backward(self, grad):
        b, d, h, w = self._shape
        flat = np.zeros((b, d, h // 2, w // 2, 4))
        np.put_along_axis(flat, self._arg[..., None], grad[..., None], axis=-1)
        dx = (
            flat.reshape(b, d, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, d, h, w)
        )
        _check_finite(dx, self, "gradient")
        return dx

    def descriptor(self):
        return {"kind": "maxpool2"}


class Dropout(Layer):
    """Inverted dropout: train zeroes with prob 1-keep and rescales by
    1/keep so the expected value is preserved; eval is the identity."""

    def __init__(self, keep_prob: float):
        if not 0.0 < keep_prob <= 1.0:
            raise NNError(f"keep_prob out of (0, 1]: {keep_prob}")
        self.keep_prob = keep_prob
        self._mask = None

    def forward(self, x, train=False, rng=None):
        if not train or self.keep_prob >= 1.0:
            self._mask = None
            return x
        if rng is None:
            raise NNError("dropout in train mode needs an rng")
        self._mask = rng.random(x.shape) < self.keep_prob
        return x * self._mask / self.keep_prob

    def backward(self, grad):
        if self._mask is None:
            return grad
        return grad * self._mask / self.keep_prob

    def descriptor(self):
        return {"kind": "dropout", "keep_prob": self.keep_prob}


class Flatten(Layer):
    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)

    def descriptor(self):
        return {"kind": "flatten"}


class Reshape(Layer):
    """Per-sample reshape, e.g. (20, 20) -> (1, 20, 20) ahead of a conv."""

    def __init__(self, shape: Sequence[int]):
        self.shape = tuple(int(s) for s in shape)

    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], *self.shape)

    def backward(self, grad):
        return grad.reshape(self._shape)

    def descriptor(self):
        return {"kind": "reshape", "shape": list(self.shape)}


_LAYER_KINDS = {
    "dense": lambda d: Dense(d["n_in"], d["n_out"], d["activation"]),
    "conv": lambda d: Conv2D(d["in_depth"], d["out_depth"], d["kernel"],
                             d["padding"], d["activation"]),
    "maxpool2": lambda d: MaxPool2x2(),
    "dropout": lambda d: Dropout(d["keep_prob"]),
    "flatten": lambda d: Flatten(),
    "reshape": lambda d: Reshape(d["shape"]),
}


class Model:
    """Ordered layer stack with batch promotion for single samples."""

    def __init__(self, layers: Sequence[Layer], input_rank: int):
        self.layers = list(layers)
        self.input_rank = input_rank  # rank of one sample, without batch axis

    def forward(self, x: np.ndarray, train: bool = False, rng=None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == self.input_rank
        if single:
            x = x[None]
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x, train=train, rng=rng)
            except NNError as err:
                raise NNError(f"layer {i}: {err}") from None
        return x[0] if single else x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for i in reversed(range(len(self.layers))):
            try:
                grad = self.layers[i].backward(grad)
            except NNError as err:
                raise NNError(f"layer {i}: {err}") from None
        return grad

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        return [
            (f"{i}.{name}", arr)
            for i, layer in enumerate(self.layers)
            for name, arr in layer.parameters()
        ]

    def gradients(self) -> list[tuple[str, np.ndarray]]:
        return [
            (f"{i}.{name}", arr)
            for i, layer in enumerate(self.layers)
            for name, arr in layer.gradients()
        ]

    def snapshot(self) -> list[np.ndarray]:
        return [arr.copy() for _, arr in self.parameters()]

    def restore(self, snapshot: list[np.ndarray]) -> None:
        params = self.parameters()
        if len(snapshot) != len(params):
            raise NNError("snapshot does not match the parameter list")
        for (_, arr), saved in zip(params, snapshot):
            arr[...] = saved

    def descriptor(self) -> list[dict]:
        return [layer.descriptor() for layer in self.layers]


def model_from_descriptor(descriptor: list[dict], input_rank: int) -> Model:
    layers = []
    for d in descriptor:
        if d["kind"] not in _LAYER_KINDS:
            raise NNError(f"unknown layer kind {d['kind']!r}")
        layers.append(_LAYER_KINDS[d["kind"]](d))
    return Model(layers, input_rank)


# --- spec-level functional forms ---

def dense_forward(layer: Dense, x: np.ndarray) -> np.ndarray:
    return layer.forward(np.asarray(x, dtype=np.float64)[None])[0] if x.ndim == 1 \
        else layer.forward(x)


def conv2d_forward(layer: Conv2D, x: np.ndarray) -> np.ndarray:
    return layer.forward(np.asarray(x, dtype=np.float64)[None])[0] if x.ndim == 3 \
        else layer.forward(x)


def maxpool_2x2(x: np.ndarray) -> np.ndarray:
    pool = MaxPool2x2()
    return pool.forward(np.asarray(x, dtype=np.float64)[None])[0] if x.ndim == 3 \
        else pool.forward(x)


def dropout(x: np.ndarray, keep_prob: float, rng, mode: str = "train") -> np.ndarray:
    if mode not in ("train", "eval"):
        raise NNError(f"unknown dropout mode {mode!r}")
    return Dropout(keep_prob).forward(x, train=(mode == "train"), rng=rng)


# --- loss ---

def cross_entropy_loss(probs: np.ndarray, label: int) -> float:
    """-log of the true-class probability, floored at PROB_FLOOR."""
    if not 0 <= label < probs.shape[-1]:
        raise NNError(f"label {label} outside [0, {probs.shape[-1]})")
    return float(-np.log(max(float(probs[label]), PROB_FLOOR)))


def batch_cross_entropy(probs: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean loss over the batch and its gradient with respect to probs.

    The gradient is zero where the floor is active, matching what a
    finite difference of the floored loss sees.
    """
    b = probs.shape[0]
    p_true = probs[np.arange(b), labels]
    loss = float(-np.log(np.maximum(p_true, PROB_FLOOR)).mean())
    grad = np.zeros_like(probs)
    live = p_true > PROB_FLOOR
    grad[np.arange(b)[live], labels[live]] = -1.0 / (p_true[live] * b)
    return loss, grad


# --- optimizers ---

class MomentumSGD:
    """Mini-batch gradient descent with classical momentum."""

    def __init__(self, lr: float = 0.01, momentum: float = 0.9):
        self.lr, self.momentum = lr, momentum
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: list[tuple[str, np.ndarray]],
             grads: list[tuple[str, np.ndarray]]) -> None:
        for (name, p), (gname, g) in zip(params, grads):
            if name != gname:
                raise NNError(f"parameter/gradient mismatch: {name} vs {gname}")
            v = self._v.setdefault(name, np.zeros_like(p))
            # Overflow here is caught by the finiteness check below.
            with np.errstate(over="ignore", invalid="ignore"):
                v *= self.momentum
                v -= self.lr * g
            if not np.isfinite(v).all():
                raise NNError(f"non-finite update for {name}")
            p += v


class Adam:
    """Adaptive-moment variant with standard bias correction."""

    def __init__(self, lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t = 0

    def step(self, params, grads) -> None:
        self._t += 1
        for (name, p), (gname, g) in zip(params, grads):
            if name != gname:
                raise NNError(f"parameter/gradient mismatch: {name} vs {gname}")
            m = self._m.setdefault(name, np.zeros_like(p))
            v = self._v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mh = m / (1.0 - self.beta1**self._t)
            vh = v / (1.0 - self.beta2**self._t)
            update = -self.lr * mh / (np.sqrt(vh) + self.eps)
            if not np.isfinite(update).all():
                raise NNError(f"non-finite update for {name}")
            p += update


def make_optimizer(kind: str, lr: float, momentum: float = 0.9):
    if kind == "momentum":
        return MomentumSGD(lr=lr, momentum=momentum)
    if kind == "adam":
        return Adam(lr=lr)
    raise NNError(f"unknown optimizer {kind!r}")


# --- initialization ---

def init_model(model: Model, rng) -> None:
    """He-scaled normal init for relu layers, Xavier for the rest; zero biases."""
    for layer in model.layers:
        if isinstance(layer, Dense):
            fan_in = layer.n_in
            scale = np.sqrt((2.0 if layer.activation == "relu" else 1.0) / fan_in)
            layer.W[...] = rng.normal(0.0, scale, layer.W.shape)
            layer.b[...] = 0.0
        elif isinstance(layer, Conv2D):
            fan_in = layer.in_depth * layer.kernel**2
            scale = np.sqrt((2.0 if layer.activation == "relu" else 1.0) / fan_in)
            layer.K[...] = rng.normal(0.0, scale, layer.K.shape)
            layer.b[...] = 0.0


# --- gradient checking ---

def gradient_check(model: Model, x: np.ndarray, labels: np.ndarray,
                   step: float = 1e-5) -> float:
    """Max relative error of backprop gradients against central
    finite differences of the loss, over every parameter element.

    Runs the model in eval mode (dropout identity) so the loss is a
    deterministic function of the parameters.
    """
    def loss_only() -> float:
        return batch_cross_entropy(model.forward(x, train=False), labels)[0]

    loss, dprobs = batch_cross_entropy(model.forward(x, train=False), labels)
    model.backward(dprobs)
    analytic = [(name, g.copy()) for name, g in model.gradients()]

    worst = 0.0
    for (name, p), (_, g) in zip(model.parameters(), analytic):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_p.size):
            keep = flat_p[i]
            flat_p[i] = keep + step
            up = loss_only()
            flat_p[i] = keep - step
            down = loss_only()
            flat_p[i] = keep
            fd = (up - down) / (2.0 * step)
            denom = max(abs(fd), abs(flat_g[i]), 1e-8)
            worst = max(worst, abs(fd - flat_g[i]) / denom)
    return worst


# --- serialization ---

def save_model(model: Model, path: str, meta: dict | None = None) -> None:
    """BNNM container: descriptor JSON, then float32 tensors in
    declaration order, each prefixed by its shape."""
    doc = {"layers": model.descriptor(), "input_rank": model.input_rank,
           "meta": meta or {}}
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<H", MODEL_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, arr in model.parameters():
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f4").tobytes())


def load_model(path: str) -> tuple[Model, dict]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MODEL_MAGIC:
        raise NNError(f"bad magic {blob[:4]!r}, not a model file")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != MODEL_VERSION:
        raise NNError(f"unsupported model version {version}")
    try:
        (jlen,) = struct.unpack_from("<I", blob, 6)
        offset = 10
        doc = json.loads(blob[offset : offset + jlen].decode("utf-8"))
        offset += jlen
        model = model_from_descriptor(doc["layers"], doc["input_rank"])
        for name, arr in model.parameters():
            (ndim,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            if shape != arr.shape:
                raise NNError(
                    f"stored shape {shape} != built shape {arr.shape} for {name}"
                )
            count = int(np.prod(shape, dtype=np.int64))
            arr[...] = np.frombuffer(
                blob, dtype="<f4", count=count, offset=offset
            ).reshape(shape).astype(np.float64)
            offset += 4 * count
    except (struct.error, ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, NNError):
            raise
        raise NNError(f"corrupt model file: {exc}") from exc
    if offset != len(blob):
        raise NNError(f"{len(blob) - offset} trailing bytes in model file")
    return model, doc["meta"]
