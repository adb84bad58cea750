"""A small float64 network engine: 3x3 conv, max-pool, dense, dropout.

Activations are channels-last, ``(batch, height, width, channels)``.
Parameters are allocated lazily so that shape bookkeeping (and the
parameter count) of very large configurations costs nothing.
"""
from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

log = logging.getLogger(__name__)

LEAKY_SLOPE = 0.3


class Layer:
    trainable = False

    def __init__(self):
        self.params: list[np.ndarray] = []
        self.grads: list[np.ndarray] = []

    def param_shapes(self) -> list[tuple[int, ...]]:
        return []

    def param_count(self) -> int:
        return int(sum(np.prod(s) for s in self.param_shapes()))

    def init(self, rng: np.random.Generator) -> None:
        pass

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return shape

    def spec(self) -> dict:
        raise NotImplementedError


def _kaiming_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2D(Layer):
    """3x3 convolution, stride 1, zero 'same' padding, fused ReLU."""

    trainable = True

    def __init__(self, cin: int, cout: int, relu: bool = True):
        super().__init__()
        self.cin, self.cout, self.relu = cin, cout, relu
        self.need_input_grad = True

    def param_shapes(self):
        return [(3, 3, self.cin, self.cout), (self.cout,)]

    def init(self, rng):
        self.params = [_kaiming_uniform(rng, (3, 3, self.cin, self.cout), 9 * self.cin),
                       np.zeros(self.cout)]

    def output_shape(self, shape):
        h, w, c = shape
        if c != self.cin:
            raise ShapeError(f"conv expects {self.cin} input channels, got {c}")
        return (h, w, self.cout)

    def spec(self):
        return {"type": "conv2d", "cin": self.cin, "cout": self.cout, "relu": self.relu}

    def forward(self, x, train=False, rng=None):
        n, h, w, c = x.shape
        if c != self.cin:
            raise ShapeError(f"conv expects {self.cin} input channels, got {c}")
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        # (n, h, w, c, 3, 3) -> rows ordered (di, dj, k) to match the kernel layout
        win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, 9 * c)
        kernel, bias = self.params
        z = cols @ kernel.reshape(9 * c, self.cout) + bias
        out = np.maximum(z, 0.0) if self.relu else z
        self._cache = (x.shape, cols, z if self.relu else None)
        return out.reshape(n, h, w, self.cout)

    def backward(self, dout):
        (n, h, w, c), cols, z = self._cache
        dz = dout.reshape(n * h * w, self.cout)
        if z is not None:
            dz = dz * (z > 0)
        kernel = self.params[0]
        self.grads = [(cols.T @ dz).reshape(kernel.shape), dz.sum(axis=0)]
        self._cache = None
        if not self.need_input_grad:
            return None
        dcols = (dz @ kernel.reshape(9 * c, self.cout).T).reshape(n, h, w, 3, 3, c)
        dxp = np.zeros((n, h + 2, w + 2, c))
        for di in range(3):
            for dj in range(3):
                dxp[:, di:di + h, dj:dj + w, :] += dcols[:, :, :, di, dj, :]
        return dxp[:, 1:-1, 1:-1, :]


class MaxPool2D(Layer):
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""

    def output_shape(self, shape):
        h, w, c = shape
        return (h // 2, w // 2, c)

    def spec(self):
        return {"type": "maxpool2d"}

    def forward(self, x, train=False, rng=None):
        n, h, w, c = x.shape
        h2, w2 = h // 2, w // 2
        xc = x[:, :2 * h2, :2 * w2, :].reshape(n, h2, 2, w2, 2, c)
        out = xc.max(axis=(2, 4))
        # first maximal element of each block receives the gradient
        flat = xc.transpose(0, 1, 3, 5, 2, 4).reshape(n, h2, w2, c, 4)
        self._cache = (x.shape, flat.argmax(axis=-1))
        return out

    def backward(self, dout):
        (n, h, w, c), arg = self._cache
        h2, w2 = h // 2, w // 2
        sel = np.zeros((n, h2, w2, c, 4))
        np.put_along_axis(sel, arg[..., None], dout[..., None], axis=-1)
        blocks = sel.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        dx = np.zeros((n, h, w, c))
        dx[:, :2 * h2, :2 * w2, :] = blocks.reshape(n, 2 * h2, 2 * w2, c)
        return dx


class Flatten(Layer):
    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def spec(self):
        return {"type": "flatten"}

    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Dense(Layer):
    """``act(x @ W + b)`` with ``W`` of shape (din, dout)."""

    trainable = True

    def __init__(self, din: int, dout: int, activation: str = "leaky_relu"):
        super().__init__()
        if activation not in ("leaky_relu", "identity"):
            raise ConfigError(f"unknown activation {activation!r}")
        self.din, self.dout, self.activation = din, dout, activation
        self.need_input_grad = True

    def param_shapes(self):
        return [(self.din, self.dout), (self.dout,)]

    def init(self, rng):
        self.params = [_kaiming_uniform(rng, (self.din, self.dout), self.din),
                       np.zeros(self.dout)]

    def output_shape(self, shape):
        if shape != (self.din,):
            raise ShapeError(f"dense expects input ({self.din},), got {shape}")
        return (self.dout,)

    def spec(self):
        return {"type": "dense", "din": self.din, "dout": self.dout,
                "activation": self.activation}

    def forward(self, x, train=False, rng=None):
        if x.shape[-1] != self.din:
            raise ShapeError(f"dense expects {self.din} inputs, got {x.shape[-1]}")
        w, b = self.params
        z = x @ w + b
        self._cache = (x, z)
        if self.activation == "leaky_relu":
            return np.where(z >= 0, z, LEAKY_SLOPE * z)
        return z

    def backward(self, dout):
        x, z = self._cache
        dz = dout * np.where(z >= 0, 1.0, LEAKY_SLOPE) if self.activation == "leaky_relu" else dout
        self.grads = [x.T @ dz, dz.sum(axis=0)]
        self._cache = None
        return dz @ self.params[0].T if self.need_input_grad else None


class Dropout(Layer):
    """Inverted dropout: survivors scaled by 1/(1-p) in training, identity otherwise."""

    def __init__(self, p: float):
        super().__init__()
        if not 0 <= p < 1:
            raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
        self.p = p

    def spec(self):
        return {"type": "dropout", "p": self.p}

    def forward(self, x, train=False, rng=None):
        if not train or self.p == 0:
            self._mask = None
            return x
        if rng is None:
            raise ConfigError("training-mode dropout needs an rng")
        self._mask = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * self._mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask


def dropout(v, p: float, train: bool, rng=None) -> np.ndarray:
    return Dropout(p).forward(np.asarray(v, dtype=np.float64), train, rng)


_LAYER_TYPES = {
    "conv2d": lambda s: Conv2D(s["cin"], s["cout"], s.get("relu", True)),
    "maxpool2d": lambda s: MaxPool2D(),
    "flatten": lambda s: Flatten(),
    "dense": lambda s: Dense(s["din"], s["dout"], s["activation"]),
    "dropout": lambda s: Dropout(s["p"]),
}


class Network:
    def __init__(self, layers: list[Layer], input_shape: tuple[int, ...]):
        self.layers = layers
        self.input_shape = tuple(input_shape)
        shape = self.input_shape
        for layer in layers:
            shape = layer.output_shape(shape)
        self.output_shape = shape
        # the input itself needs no gradient
        for layer in layers:
            if layer.trainable:
                layer.need_input_grad = False
                break

    @classmethod
    def from_spec(cls, specs: list[dict], input_shape) -> "Network":
        return cls([_LAYER_TYPES[s["type"]](s) for s in specs], input_shape)

    def spec(self) -> list[dict]:
        return [layer.spec() for layer in self.layers]

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)

    @property
    def initialized(self) -> bool:
        return all(len(l.params) == len(l.param_shapes()) for l in self.layers)

    def init(self, rng: np.random.Generator) -> "Network":
        for layer in self.layers:
            layer.init(rng)
        return self

    @property
    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def set_params(self, values) -> None:
        values = list(values)
        for layer in self.layers:
            k = len(layer.param_shapes())
            chunk, values = values[:k], values[k:]
            for got, want in zip(chunk, layer.param_shapes()):
                if got.shape != want:
                    raise ShapeError(f"parameter shape {got.shape} != {want}")
            layer.params = [np.array(p, dtype=np.float64) for p in chunk]

    def forward(self, x, train: bool = False, rng=None) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, train, rng)
        return x

    def backward(self, dout) -> list[np.ndarray]:
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
            if dout is None:
                break
        return [g for layer in self.layers for g in layer.grads]

    def predict(self, x, batch_size: int = 64) -> np.ndarray:
        out = [self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0,) + self.output_shape)


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements and its gradient w.r.t. ``pred``."""
    diff = pred - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def loss_and_grads(net: Network, x, y, rng=None, train: bool = True):
    pred = net.forward(x, train=train, rng=rng)
    loss, dpred = mse_loss(pred, y)
    return loss, net.backward(dpred)


# ---------------------------------------------------------------- optimisation

class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        """In-place bias-corrected Adam update."""
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v,
                "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without improvement."""

    def __init__(self, lr: float, patience: int = 10, factor: float = 0.9, min_delta: float = 1e-12):
        self.lr, self.patience, self.factor, self.min_delta = lr, patience, factor, min_delta
        self.best = np.inf
        self.wait = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.lr *= self.factor
                self.wait = 0
        return self.lr


def plateau_schedule(val_losses, lr: float, patience: int = 10, factor: float = 0.9) -> list[float]:
    """Learning rate in effect after each recorded validation loss."""
    sched = PlateauScheduler(lr, patience, factor)
    return [sched.step(v) for v in val_losses]


class EarlyStopping:
    def __init__(self, patience: int = 50):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = -1
        self.epoch = -1

    def update(self, val_loss: float) -> bool:
        """Record one epoch; True when training should stop."""
        self.epoch += 1
        if val_loss < self.best:
            self.best, self.best_epoch = val_loss, self.epoch
        return self.epoch - self.best_epoch >= self.patience


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 32
    max_epochs: int = 1000
    patience: int = 50
    lr_factor: float = 0.9
    lr_patience: int = 10
    shuffle: bool = False


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self):
        return len(self.val_loss)

    def as_rows(self):
        for i in range(len(self)):
            yield {"epoch": i + 1, "train_loss": self.train_loss[i], "val_loss": self.val_loss[i],
                   "lr": self.lr[i], "seconds": self.seconds[i]}


def evaluate_loss(net: Network, x, y, batch_size: int = 64) -> float:
    total = 0.0
    for i in range(0, len(x), batch_size):
        pred = net.forward(x[i:i + batch_size])
        total += float(np.sum((pred - y[i:i + batch_size]) ** 2))
    return total / y.size


def train(net: Network, x_train, y_train, x_val, y_val, cfg: TrainConfig | None = None,
          rng: np.random.Generator | None = None, optimizer: Adam | None = None,
          progress=None) -> TrainHistory:
    """Mini-batch Adam with plateau decay and early stopping.

    Batches follow sample order unless ``cfg.shuffle``. The network is left
    holding the weights of the epoch with the lowest validation loss.
    """
    cfg = cfg or TrainConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    if len(x_train) == 0 or len(x_val) == 0:
        raise ConfigError("training and validation partitions must be non-empty")
    if not net.initialized:
        net.init(rng)
    opt = optimizer or Adam()
    sched = PlateauScheduler(cfg.lr, cfg.lr_patience, cfg.lr_factor)
    stopper = EarlyStopping(cfg.patience)
    history = TrainHistory()
    best_params = [p.copy() for p in net.params]
    lr = cfg.lr
    n = len(x_train)
    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        total = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            loss, grads = loss_and_grads(net, x_train[idx], y_train[idx], rng)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch + 1}, batch {i // cfg.batch_size}")
            opt.step(net.params, grads, lr)
            total += loss * len(idx)
        val = evaluate_loss(net, x_val, y_val)
        if not np.isfinite(val):
            raise NumericError(f"non-finite validation loss at epoch {epoch + 1}")
        history.train_loss.append(total / n)
        history.val_loss.append(val)
        history.lr.append(lr)
        history.seconds.append(time.perf_counter() - t0)
        stop = stopper.update(val)
        if stopper.best_epoch == epoch:
            best_params = [p.copy() for p in net.params]
        lr = sched.step(val)
        if progress:
            progress(epoch, history)
        if stop:
            break
    history.best_epoch = stopper.best_epoch
    net.set_params(best_params)
    return history


def clone(net: Network) -> Network:
    return copy.deepcopy(net)
