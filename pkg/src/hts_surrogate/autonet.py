"""Dense networks in plain numpy: FCN / FCRN forward and backward, SiLU, MSE, Adam.

Parameters are a list of ``(W, b)`` pairs with ``W`` shaped (out, in). All
arithmetic is float64; checkpoints store float32.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

PLAIN = "plain"
RESIDUAL = "residual"

CKPT_MAGIC = b"SFNN"
CKPT_VERSION = 1


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkArch:
    kind: str = RESIDUAL
    hidden_width: int = 256
    depth: int = 12      # linear layers for plain, residual blocks for residual
    input_dim: int = 6
    output_dim: int = 1

    def __post_init__(self):
        if self.kind not in (PLAIN, RESIDUAL):
            raise NetworkError(f"unknown network kind {self.kind!r}")
        if self.hidden_width < 1 or self.depth < 1:
            raise NetworkError("hidden_width and depth must be >= 1")
        if self.kind == PLAIN and self.depth < 2:
            raise NetworkError("a plain network needs at least 2 linear layers")

    @property
    def layer_shapes(self):
        H, d_in, d_out = self.hidden_width, self.input_dim, self.output_dim
        if self.kind == PLAIN:
            return [(H, d_in)] + [(H, H)] * (self.depth - 2) + [(d_out, H)]
        return [(H, d_in)] + [(H, H)] * (2 * self.depth) + [(d_out, H)]

    @property
    def n_linear(self) -> int:
        return len(self.layer_shapes)

    @property
    def label(self) -> str:
        tag = "FCN_L" if self.kind == PLAIN else "FCRN_NRB"
        return f"{tag}{self.depth}_H{self.hidden_width}"

    def to_dict(self):
        return asdict(self)


# --------------------------------------------------------------------------
# elementwise pieces

def sigmoid(x):
    return expit(np.asarray(x, dtype=float))


def silu(x):
    x = np.asarray(x, dtype=float)
    return x * sigmoid(x)


def silu_grad(x):
    x = np.asarray(x, dtype=float)
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def mse(pred, target):
    """Mean squared error and its gradient with respect to ``pred``."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise NetworkError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    B = pred.shape[0]
    return float(np.mean(diff * diff)), 2.0 * diff / (B * (diff.size // B))


# --------------------------------------------------------------------------
# forward / backward

class ForwardCache:
    __slots__ = ("params", "inputs", "pre", "sig")

    def __init__(self, params, inputs, pre, sig):
        self.params = params
        self.inputs = inputs    # input of every linear layer
        self.pre = pre          # pre-activation of every activated linear layer (None otherwise)
        self.sig = sig          # sigmoid of ``pre``


def _linear(x, W, b):
    return x @ W.T + b


def forward(arch: NetworkArch, params, X, keep_cache=True):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != arch.input_dim:
        raise NetworkError(f"expected batch of shape (B, {arch.input_dim}), got {X.shape}")
    if len(params) != arch.n_linear:
        raise NetworkError(f"expected {arch.n_linear} layers, got {len(params)}")
    inputs, pre, sig = [], [], []
    if arch.kind == PLAIN:
        h = X
        last = len(params) - 1
        for i, (W, b) in enumerate(params):
            inputs.append(h)
            z = _linear(h, W, b)
            if i < last:
                s = sigmoid(z)
                pre.append(z)
                sig.append(s)
                h = z * s
            else:
                pre.append(None)
                sig.append(None)
                h = z
        out = h
    else:
        W, b = params[0]
        inputs.append(X)
        pre.append(None)
        sig.append(None)
        h = _linear(X, W, b)
        for blk in range(arch.depth):
            W1, b1 = params[1 + 2 * blk]
            W2, b2 = params[2 + 2 * blk]
            inputs.append(h)
            z = _linear(h, W1, b1)
            s = sigmoid(z)
            pre.append(z)
            sig.append(s)
            a = z * s
            inputs.append(a)
            pre.append(None)
            sig.append(None)
            h = h + _linear(a, W2, b2)
        W, b = params[-1]
        inputs.append(h)
        pre.append(None)
        sig.append(None)
        out = _linear(h, W, b)
    cache = ForwardCache(tuple(params), inputs, pre, sig) if keep_cache else None
    return out, cache


def _silu_inplace(z, tmp):
    # sigmoid(x) = (1 + tanh(x/2)) / 2, cheaper than exp and overflow-free
    np.multiply(z, 0.5, out=tmp)
    np.tanh(tmp, out=tmp)
    tmp *= 0.5
    tmp += 0.5
    z *= tmp


def _infer(arch, layers, X, bufs):
    """Forward pass without a cache; ``layers`` hold transposed weights."""
    B = X.shape[0]
    h, a, tmp = (buf[:B] for buf in bufs)
    W, b = layers[0]
    np.matmul(X, W, out=h)
    h += b
    if arch.kind == PLAIN:
        for W, b in layers[1:-1]:
            _silu_inplace(h, tmp)
            np.matmul(h, W, out=a)
            a += b
            h, a = a, h
        _silu_inplace(h, tmp)
        W, b = layers[-1]
        return h @ W + b
    for blk in range(arch.depth):
        W1, b1 = layers[1 + 2 * blk]
        W2, b2 = layers[2 + 2 * blk]
        np.matmul(h, W1, out=a)
        a += b1
        _silu_inplace(a, tmp)
        np.matmul(a, W2, out=tmp)
        tmp += b2
        h += tmp
    W, b = layers[-1]
    return h @ W + b


PREDICT_CHUNK = 1024     # rows per pass; keeps the activation buffers in cache


def predict(arch: NetworkArch, params, X, batch_size=8192, dtype=np.float64):
    """Batched inference with reused buffers (no autograd cache).

    Results do not depend on ``batch_size``; rows are processed in chunks of
    at most ``PREDICT_CHUNK``. ``dtype=np.float32`` trades about 1e-7
    relative accuracy for speed.
    """
    X = np.asarray(X, dtype=dtype)
    if X.ndim != 2 or X.shape[1] != arch.input_dim:
        raise NetworkError(f"expected batch of shape (B, {arch.input_dim}), got {X.shape}")
    if len(params) != arch.n_linear:
        raise NetworkError(f"expected {arch.n_linear} layers, got {len(params)}")
    n = X.shape[0]
    out = np.empty((n, arch.output_dim))
    if n == 0:
        return out
    layers = [(np.ascontiguousarray(W.T, dtype=dtype), np.asarray(b, dtype=dtype)) for W, b in params]
    step = max(1, min(batch_size, PREDICT_CHUNK, n))
    bufs = [np.empty((step, arch.hidden_width), dtype=dtype) for _ in range(3)]
    for i in range(0, n, step):
        out[i:i + step] = _infer(arch, layers, X[i:i + step], bufs)
    return out


def backward(arch: NetworkArch, params, cache: ForwardCache, output_grad):
    """Gradients of sum(output * output_grad) with respect to every (W, b)."""
    if cache is None or len(cache.params) != len(params) or \
            any(c[0] is not p[0] or c[1] is not p[1] for c, p in zip(cache.params, params)):
        raise NetworkError("stale forward cache: parameters changed since forward()")
    g = np.asarray(output_grad, dtype=float)
    grads = [None] * len(params)

    def act_back(i, g):
        z, s = cache.pre[i], cache.sig[i]
        return g * (s * (1.0 + z * (1.0 - s)))

    def lin_back(i, g):
        x = cache.inputs[i]
        W = params[i][0]
        grads[i] = (g.T @ x, g.sum(axis=0))
        return g @ W

    if arch.kind == PLAIN:
        last = len(params) - 1
        g = lin_back(last, g)
        for i in range(last - 1, -1, -1):
            g = act_back(i, g)
            g = lin_back(i, g)
    else:
        g = lin_back(len(params) - 1, g)
        for blk in range(arch.depth - 1, -1, -1):
            i1, i2 = 1 + 2 * blk, 2 + 2 * blk
            ga = lin_back(i2, g)
            ga = act_back(i1, ga)
            g = g + lin_back(i1, ga)    # skip path adds straight through
        lin_back(0, g)
    return grads


# --------------------------------------------------------------------------
# initialization and optimizer

def init_params(arch: NetworkArch, seed):
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng([int(seed), 0])
    params = []
    for fan_out, fan_in in arch.layer_shapes:
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        params.append((rng.uniform(-lim, lim, size=(fan_out, fan_in)), np.zeros(fan_out)))
    return params


def flatten(params):
    return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in params])


def unflatten(flat, like):
    out, i = [], 0
    for W, b in like:
        j = i + W.size
        out.append((flat[i:j].reshape(W.shape), flat[j:j + b.size]))
        i = j + b.size
    return out


@dataclass
class AdamState:
    """Moments are kept as flat vectors in layer order (W then b per layer)."""
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw):
        n = sum(W.size + b.size for W, b in params)
        return cls(m=np.zeros(n), v=np.zeros(n), **kw)


def adam_update(params, grads, state: AdamState, lr):
    """One bias-corrected Adam step; returns new (params, state)."""
    g = flatten(grads)
    if not np.all(np.isfinite(g)):
        bad = [i for i, (gW, gb) in enumerate(grads)
               if not (np.all(np.isfinite(gW)) and np.all(np.isfinite(gb)))]
        raise FloatingPointError(f"non-finite gradient in layer(s) {bad}")
    b1, b2 = state.beta1, state.beta2
    t = state.step + 1
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * (g * g)
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    theta = flatten(params) - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return unflatten(theta, params), AdamState(m, v, t, b1, b2, state.eps)


def lr_schedule(epoch, base_lr=5e-4, factor=0.6, period=50):
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return base_lr * factor ** (int(epoch) // period)


# --------------------------------------------------------------------------
# checkpoints: magic, version byte, u32 header length, JSON header, f32 weights

def save_params(arch: NetworkArch, params, path, extra=None):
    header = {"arch": arch.to_dict(), "shapes": [list(W.shape) for W, _ in params]}
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<BI", CKPT_VERSION, len(blob)))
        fh.write(blob)
        for W, b in params:
            fh.write(np.ascontiguousarray(W, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def _read_header(fh, path):
    if fh.read(4) != CKPT_MAGIC:
        raise NetworkError(f"{path}: not a checkpoint file")
    head = fh.read(5)
    if len(head) != 5:
        raise NetworkError(f"{path}: truncated header")
    version, n = struct.unpack("<BI", head)
    if version != CKPT_VERSION:
        raise NetworkError(f"{path}: unsupported checkpoint version {version}")
    blob = fh.read(n)
    if len(blob) != n:
        raise NetworkError(f"{path}: truncated header")
    return json.loads(blob.decode("utf-8"))


def load_params(path, expected_arch: NetworkArch = None):
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        arch = NetworkArch(**header["arch"])
        if expected_arch is not None and arch != expected_arch:
            raise NetworkError(f"{path}: checkpoint holds {arch}, expected {expected_arch}")
        shapes = [tuple(s) for s in header["shapes"]]
        if shapes != [tuple(s) for s in arch.layer_shapes]:
            raise NetworkError(f"{path}: layer shapes do not match architecture")
        params = []
        for out_dim, in_dim in shapes:
            raw = fh.read(4 * (out_dim * in_dim + out_dim))
            if len(raw) != 4 * (out_dim * in_dim + out_dim):
                raise NetworkError(f"{path}: truncated weight payload")
            flat = np.frombuffer(raw, dtype="<f4").astype(np.float64)
            params.append((flat[:out_dim * in_dim].reshape(out_dim, in_dim).copy(),
                           flat[out_dim * in_dim:].copy()))
        if fh.read(1):
            raise NetworkError(f"{path}: trailing bytes after weights")
    return arch, params
