"""Small fully-connected networks with exact backprop, Adam and soft updates.

Everything is float64 and batched row-wise: inputs have shape ``(n, in_dim)``.
``forward`` caches activations for the following ``backward`` call.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")
MAGIC = b"SHIPNET\x00"
FORMAT_VERSION = 1


class NetError(ValueError):
    """Shape, topology or call-order violation."""


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name: str, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "tanh":
        return 1.0 - y * y
    return np.ones_like(z)


@dataclass
class Layer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise NetError(f"unknown activation {self.activation!r}")
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        self.b = np.ascontiguousarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise NetError("layer weight/bias shapes disagree")


@dataclass
class DenseNet:
    layers: list[Layer]
    output_scale: float = 1.0
    _cache: list | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.layers:
            raise NetError("network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if b.W.shape[1] != a.W.shape[0]:
                raise NetError(f"layer dims do not chain: {a.W.shape} -> {b.W.shape}")
        # parameters live in one flat buffer so optimiser and soft updates are single vector ops
        self.flat = np.concatenate([p.ravel() for p in self.params()])
        if not np.all(np.isfinite(self.flat)):
            raise NetError("non-finite parameters")
        self.grad_flat = np.zeros_like(self.flat)
        self._views = []
        pos = 0
        for l in self.layers:
            views = []
            for arr in (l.W, l.b):
                views.append((slice(pos, pos + arr.size), arr.shape))
                pos += arr.size
            l.W = self.flat[views[0][0]].reshape(views[0][1])
            l.b = self.flat[views[1][0]]
            self._views += views

    @property
    def in_dim(self) -> int:
        return self.layers[0].W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].W.shape[0]

    def topology(self) -> list[tuple[int, int, str]]:
        return [(l.W.shape[1], l.W.shape[0], l.activation) for l in self.layers]

    def params(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out += [l.W, l.b]
        return out

    def copy(self) -> DenseNet:
        return DenseNet([Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers], self.output_scale)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Outputs for a batch (or a single vector); caches intermediates for ``backward``."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.in_dim:
            raise NetError(f"input dim {h.shape[1]} != {self.in_dim}")
        cache = [h]
        for l in self.layers:
            z = h @ l.W.T + l.b
            h = _act(l.activation, z)
            cache.append((z, h))
        self._cache = cache
        y = h * self.output_scale
        return y[0] if single else y

    __call__ = forward

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Forward pass without touching the backward cache."""
        saved = self._cache
        try:
            return self.forward(x)
        finally:
            self._cache = saved

    def backward(self, grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of ``sum(grad_out * output)`` w.r.t. parameters (``params()`` order) and input."""
        if self._cache is None:
            raise NetError("backward called before forward")
        g = np.asarray(grad_out, dtype=np.float64)
        x0 = self._cache[0]
        if g.ndim == 1:
            g = g[None, :]
        if g.shape != (x0.shape[0], self.out_dim):
            raise NetError(f"upstream gradient shape {g.shape} != {(x0.shape[0], self.out_dim)}")
        g = g * self.output_scale
        gf = self.grad_flat
        for i in range(len(self.layers) - 1, -1, -1):
            l = self.layers[i]
            z, y = self._cache[i + 1]
            h_in = self._cache[i][1] if i > 0 else x0
            gz = g if l.activation == "identity" else g * _act_grad(l.activation, z, y)
            (sw, shw), (sb, _) = self._views[2 * i], self._views[2 * i + 1]
            np.matmul(gz.T, h_in, out=gf[sw].reshape(shw))
            np.sum(gz, axis=0, out=gf[sb])
            g = gz @ l.W
        grads = [gf[sl].reshape(sh) for sl, sh in self._views]
        gin = g[0] if np.asarray(grad_out).ndim == 1 else g
        return grads, gin


def init_net(sizes: Sequence[int], activations: Sequence[str], rng: np.random.Generator,
             output_scale: float = 1.0, final_scale: float = 1.0) -> DenseNet:
    """Uniform fan-in initialisation ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    if len(activations) != len(sizes) - 1:
        raise NetError("need one activation per layer")
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        bound = 1.0 / np.sqrt(n_in)
        W = rng.uniform(-bound, bound, (n_out, n_in))
        b = rng.uniform(-bound, bound, n_out)
        if i == len(sizes) - 2:
            W *= final_scale
            b *= final_scale
        layers.append(Layer(W, b, activations[i]))
    return DenseNet(layers, output_scale)


def actor_net(m: int, rng: np.random.Generator, action_limit: float, hidden=(256, 256)) -> DenseNet:
    sizes = [m + 3, *hidden, m]
    return init_net(sizes, ["relu"] * len(hidden) + ["tanh"], rng, action_limit, final_scale=0.1)


def critic_net(m: int, rng: np.random.Generator, hidden=(256, 256)) -> DenseNet:
    sizes = [2 * m + 3, *hidden, 1]
    return init_net(sizes, ["relu"] * len(hidden) + ["identity"], rng)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    _scratch: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def for_net(cls, net: DenseNet, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
        """Moments are kept flat, in the network's parameter order."""
        return cls([np.zeros_like(net.flat)], [np.zeros_like(net.flat)], 0, lr, beta1, beta2, eps)


def adam_step(net: DenseNet, grads: Sequence[np.ndarray], state: AdamState) -> DenseNet:
    """In-place bias-corrected Adam descent step; returns ``net``."""
    params = net.params()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise NetError("gradient shapes do not match parameters")
    g = net.grad_flat if _is_flat_grads(net, grads) else np.concatenate([x.ravel() for x in grads])
    if len(state.m) != 1:
        state.m = [np.concatenate([x.ravel() for x in state.m])]
        state.v = [np.concatenate([x.ravel() for x in state.v])]
    m, v = state.m[0], state.v[0]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    if state._scratch is None or state._scratch.shape != g.shape:
        state._scratch = np.empty_like(g)
    tmp = state._scratch
    m *= b1
    np.multiply(g, 1.0 - b1, out=tmp)
    m += tmp
    v *= b2
    np.multiply(g, g, out=tmp)
    tmp *= 1.0 - b2
    v += tmp
    np.multiply(v, 1.0 / c2, out=tmp)
    np.sqrt(tmp, out=tmp)
    tmp += state.eps
    np.divide(m, tmp, out=tmp)
    tmp *= state.lr / c1
    net.flat -= tmp
    return net


def _is_flat_grads(net: DenseNet, grads: Sequence[np.ndarray]) -> bool:
    return all(gr.base is net.grad_flat for gr in grads)


def soft_update(target: DenseNet, online: DenseNet, tau: float) -> DenseNet:
    """``theta' <- tau * theta + (1 - tau) * theta'`` in place."""
    if not 0.0 <= tau <= 1.0:
        raise NetError("tau must lie in [0, 1]")
    if target.topology() != online.topology():
        raise NetError("topology mismatch")
    if tau == 1.0:
        target.flat[...] = online.flat
    elif tau != 0.0:
        target.flat *= 1.0 - tau
        np.multiply(online.flat, tau, out=target.grad_flat)  # target nets never backprop; reuse as scratch
        target.flat += target.grad_flat
    return target


# ---------------------------------------------------------------- gradient check


def numeric_grads(net: DenseNet, x: np.ndarray, upstream: np.ndarray, h: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of ``sum(upstream * net(x))`` for every parameter."""
    out = []
    for p in net.params():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = float(np.sum(upstream * net.predict(x)))
            flat[i] = old - h
            fm = float(np.sum(upstream * net.predict(x)))
            flat[i] = old
            gf[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def near_relu_kink(net: DenseNet, x: np.ndarray, tol: float = 1e-6) -> bool:
    net.predict(x)
    h = np.asarray(x, dtype=np.float64)
    h = h[None, :] if h.ndim == 1 else h
    for l in net.layers:
        z = h @ l.W.T + l.b
        if l.activation == "relu" and np.any(np.abs(z) < tol):
            return True
        h = _act(l.activation, z)
    return False


def gradcheck(net: DenseNet, x: np.ndarray, upstream: np.ndarray, h: float = 1e-5,
              floor: float = 1e-8) -> np.ndarray:
    """Per-parameter relative errors ``|a - n| / max(|a| + |n|, floor)`` (flattened)."""
    net.forward(x)
    analytic, _ = net.backward(upstream)
    numeric = numeric_grads(net, x, upstream, h)
    a = np.concatenate([g.ravel() for g in analytic])
    n = np.concatenate([g.ravel() for g in numeric])
    return np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)


# ---------------------------------------------------------------- checkpoints


def _write_blob(fh: BinaryIO, header: dict, arrays: Sequence[np.ndarray]) -> None:
    meta = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    fh.write(MAGIC)
    fh.write(struct.pack("<II", FORMAT_VERSION, len(meta)))
    fh.write(meta)
    for a in arrays:
        fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_blob(fh: BinaryIO) -> tuple[dict, bytes]:
    if fh.read(len(MAGIC)) != MAGIC:
        raise NetError("not a network checkpoint")
    version, n = struct.unpack("<II", fh.read(8))
    if version != FORMAT_VERSION:
        raise NetError(f"unsupported checkpoint version {version}")
    return json.loads(fh.read(n)), fh.read()


def save_net(path: str | Path, net: DenseNet, adam: AdamState | None = None) -> None:
    """Little-endian binary: magic, version, JSON header, then raw float64 params (and Adam moments)."""
    header = {
        "topology": net.topology(),
        "output_scale": net.output_scale,
        "adam": None if adam is None else {"t": adam.t, "lr": adam.lr, "beta1": adam.beta1,
                                           "beta2": adam.beta2, "eps": adam.eps},
    }
    arrays = net.params() + ([] if adam is None else adam.m + adam.v)
    with open(path, "wb") as fh:
        _write_blob(fh, header, arrays)


def load_net(path: str | Path) -> tuple[DenseNet, AdamState | None]:
    with open(path, "rb") as fh:
        header, payload = _read_blob(fh)
    data = np.frombuffer(payload, dtype="<f8")
    pos = 0
    shapes = []
    for n_in, n_out, _ in header["topology"]:
        shapes += [(n_out, n_in), (n_out,)]

    def take(shape):
        nonlocal pos
        size = int(np.prod(shape))
        if pos + size > data.size:
            raise NetError("truncated checkpoint")
        arr = data[pos:pos + size].reshape(shape).astype(np.float64)
        pos += size
        return arr

    params = [take(s) for s in shapes]
    layers = [Layer(params[2 * i], params[2 * i + 1], act) for i, (_, _, act) in enumerate(header["topology"])]
    net = DenseNet(layers, header["output_scale"])
    adam = None
    if header["adam"] is not None:
        h = header["adam"]
        m = [take((net.flat.size,))]
        v = [take((net.flat.size,))]
        adam = AdamState(m, v, h["t"], h["lr"], h["beta1"], h["beta2"], h["eps"])
    if pos != data.size:
        raise NetError("trailing data in checkpoint")
    return net, adam
