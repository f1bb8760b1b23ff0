"""Minimal feed-forward CNN with exact reverse-mode gradients.

The same trunk (stride-2 "same" convolutions + ELU + FC-512) hosts two heads:
a 3-output linear head producing Q-values and a 2-output sigmoid head
producing normalized keypoint coordinates.  Convolutions are evaluated as
im2col + matmul so that all heavy lifting happens in BLAS.

Parameters live in a plain dict keyed by layer name; key order is fixed by
``parameter_shapes`` so serialization is reproducible.
"""

from __future__ import annotations

import io
import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DimensionError, NumericError

ParameterStore = "dict[str, np.ndarray]"
GradientStore = "dict[str, np.ndarray]"

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    input_height: int
    input_width: int
    input_channels: int = 3
    conv_layers: int = 4
    kernel_size: int = 3
    stride: int = 2
    filters: int = 32
    hidden_units: int = 512
    output_units: int = 3
    output_activation: str = "linear"  # "linear" (Q head) or "sigmoid" (keypoint head)
    dtype: str = "float32"

    def validate(self) -> None:
        if min(self.input_height, self.input_width, self.input_channels) <= 0:
            raise ConfigError("input dimensions must be positive")
        if min(self.conv_layers, self.kernel_size, self.filters,
               self.hidden_units, self.output_units, self.stride) <= 0:
            raise ConfigError("layer sizes must be positive")
        if self.output_units not in (2, 3):
            raise ConfigError("output_units must be 2 (keypoint) or 3 (Q)")
        if self.output_activation not in ("linear", "sigmoid"):
            raise ConfigError(f"unknown output activation {self.output_activation!r}")
        if min(self.spatial_sizes()[-1]) < 1:
            raise ConfigError("input too small for the configured conv stack")

    def spatial_sizes(self) -> list[tuple[int, int]]:
        """(h, w) after each conv layer; each layer maps n -> ceil(n/stride)."""
        sizes = []
        h, w = self.input_height, self.input_width
        for _ in range(self.conv_layers):
            h = -(-h // self.stride)
            w = -(-w // self.stride)
            sizes.append((h, w))
        return sizes

    def flat_size(self) -> int:
        h, w = self.spatial_sizes()[-1]
        return h * w * self.filters

    def np_dtype(self):
        return np.dtype(self.dtype)


def parameter_shapes(config: NetworkConfig) -> "OrderedDict[str, tuple]":
    """Deterministic name -> shape map; also fixes serialization order."""
    config.validate()
    k = config.kernel_size
    shapes = OrderedDict()
    in_c = config.input_channels
    for i in range(config.conv_layers):
        shapes[f"conv{i}_w"] = (k, k, in_c, config.filters)
        shapes[f"conv{i}_b"] = (config.filters,)
        in_c = config.filters
    shapes["fc_w"] = (config.flat_size(), config.hidden_units)
    shapes["fc_b"] = (config.hidden_units,)
    shapes["out_w"] = (config.hidden_units, config.output_units)
    shapes["out_b"] = (config.output_units,)
    return shapes


def parameter_count(config: NetworkConfig) -> int:
    return sum(int(np.prod(s)) for s in parameter_shapes(config).values())


def _fans(name: str, shape: tuple) -> tuple[int, int]:
    if name.endswith("_b"):
        return shape[0], shape[0]
    if name.startswith("conv"):
        k, _, in_c, out_c = shape
        return k * k * in_c, k * k * out_c
    return shape[0], shape[1]


def glorot_init(config: NetworkConfig, seed: int) -> dict:
    """Glorot-uniform weights, U[-L, L] with L = sqrt(6/(fan_in+fan_out)); zero biases."""
    rng = np.random.default_rng(seed)
    dtype = config.np_dtype()
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in, fan_out = _fans(name, shape)
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return params


def glorot_limit(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _elu_grad_from_output(y: np.ndarray) -> np.ndarray:
    # elu'(x) = 1 for x>0 else exp(x) = elu(x)+1; recoverable from the output
    return np.where(y > 0, np.array(1.0, dtype=y.dtype), y + 1)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _same_geometry(size: int, stride: int, k: int) -> tuple[int, int, int]:
    """Output size ceil(size/stride) plus (pad_before, pad_after)."""
    out = -(-size // stride)
    pad = max((out - 1) * stride + k - size, 0)
    return out, pad // 2, pad - pad // 2


def _im2col(x: np.ndarray, k: int, stride: int):
    b, h, w, c = x.shape
    ho, pt, pb = _same_geometry(h, stride, k)
    wo, pl, pr = _same_geometry(w, stride, k)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    cols = np.empty((b, ho, wo, k, k, c), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i:i + (ho - 1) * stride + 1:stride,
                                        j:j + (wo - 1) * stride + 1:stride, :]
    geom = (b, h, w, c, ho, wo, (pt, pb, pl, pr))
    return cols.reshape(b * ho * wo, k * k * c), geom


def _col2im(dcol: np.ndarray, k: int, stride: int, geom) -> np.ndarray:
    b, h, w, c, ho, wo, (pt, pb, pl, pr) = geom
    dxp = np.zeros((b, h + pt + pb, w + pl + pr, c), dtype=dcol.dtype)
    d = dcol.reshape(b, ho, wo, k, k, c)
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + (ho - 1) * stride + 1:stride,
                j:j + (wo - 1) * stride + 1:stride, :] += d[:, :, :, i, j, :]
    return dxp[:, pt:pt + h, pl:pl + w, :]


def _as_batch(x: np.ndarray, config: NetworkConfig) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=config.np_dtype())
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != (config.input_height, config.input_width,
                                      config.input_channels):
        raise DimensionError(
            f"input shape {x.shape} does not match config "
            f"({config.input_height}, {config.input_width}, {config.input_channels})")
    return x, single


def forward(params: dict, config: NetworkConfig, x: np.ndarray,
            return_cache: bool = False):
    """Forward pass.  Accepts one HxWxC image or a BxHxWxC batch.

    With ``return_cache=True`` returns (output, cache) where the cache holds
    everything ``backward`` needs.
    """
    x, single = _as_batch(x, config)
    b = x.shape[0]
    k, s = config.kernel_size, config.stride
    h = x
    conv_cache = []
    for i in range(config.conv_layers):
        col, geom = _im2col(h, k, s)
        wname = f"conv{i}_w"
        z = col @ params[wname].reshape(-1, config.filters)
        z += params[f"conv{i}_b"]
        a = elu(z)
        if return_cache:
            conv_cache.append((col, geom, a))
        h = a.reshape(b, geom[4], geom[5], config.filters)
    flat = h.reshape(b, -1)
    z1 = flat @ params["fc_w"] + params["fc_b"]
    a1 = elu(z1)
    out = a1 @ params["out_w"] + params["out_b"]
    if config.output_activation == "sigmoid":
        out = _sigmoid(out)
    if single:
        out = out[0]
    if not return_cache:
        return out
    cache = {"conv": conv_cache, "flat": flat, "a1": a1, "out": out if not single else out[None],
             "batch": b, "single": single}
    return out, cache


def backward(params: dict, config: NetworkConfig, cache: dict,
             loss_grad_at_output: np.ndarray) -> dict:
    """Exact gradients of the scalar loss w.r.t. every parameter.

    ``cache`` must come from a ``forward(..., return_cache=True)`` call on the
    same parameters; ``loss_grad_at_output`` is dL/d(output), one row per
    batch element.
    """
    if not isinstance(cache, dict) or "conv" not in cache:
        raise DimensionError("backward requires the cache from forward(return_cache=True)")
    dtype = config.np_dtype()
    dout = np.asarray(loss_grad_at_output, dtype=dtype)
    if cache["single"] and dout.ndim == 1:
        dout = dout[None]
    b = cache["batch"]
    if dout.shape != (b, config.output_units):
        raise DimensionError(f"loss gradient shape {dout.shape} != ({b}, {config.output_units})")

    grads = {}
    if config.output_activation == "sigmoid":
        y = cache["out"]
        dout = dout * y * (1.0 - y)
    a1 = cache["a1"]
    grads["out_w"] = (a1.T @ dout).astype(dtype)
    grads["out_b"] = dout.sum(axis=0, dtype=np.float64).astype(dtype)
    da1 = dout @ params["out_w"].T
    dz1 = da1 * _elu_grad_from_output(a1)
    flat = cache["flat"]
    grads["fc_w"] = (flat.T @ dz1).astype(dtype)
    grads["fc_b"] = dz1.sum(axis=0, dtype=np.float64).astype(dtype)
    dflat = dz1 @ params["fc_w"].T

    k, s, f = config.kernel_size, config.stride, config.filters
    hlast, wlast = config.spatial_sizes()[-1]
    dh = dflat.reshape(b, hlast, wlast, f)
    for i in reversed(range(config.conv_layers)):
        col, geom, a = cache["conv"][i]
        dz = (dh.reshape(-1, f) * _elu_grad_from_output(a))
        wname = f"conv{i}_w"
        grads[wname] = (col.T @ dz).reshape(params[wname].shape).astype(dtype)
        grads[f"conv{i}_b"] = dz.sum(axis=0, dtype=np.float64).astype(dtype)
        if i > 0:
            dcol = dz @ params[wname].reshape(-1, f).T
            dx = _col2im(dcol, k, s, geom)
            dh = dx
    return grads


class Adam:
    """Adam optimizer carrying first/second moment state between calls."""

    def __init__(self, learning_rate: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict = {}
        self._v: dict = {}

    def step(self, params: dict, grads: dict) -> bool:
        """Update params in place.  Returns False (no-op) on non-finite grads."""
        for name, p in params.items():
            if grads[name].shape != p.shape:
                raise DimensionError(f"gradient shape mismatch for {name}")
        if not all(np.isfinite(g).all() for g in grads.values()):
            return False
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in params.items():
            g = grads[name]
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(p)
                self._v[name] = np.zeros_like(p)
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            mhat = m / bias1
            vhat = v / bias2
            p -= (self.learning_rate * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)
        return True


def optimizer_step(params: dict, grads: dict, optimizer: Adam) -> bool:
    """Apply one Adam step; skipped (returns False) when gradients are non-finite."""
    return optimizer.step(params, grads)


def save_checkpoint(path, params: dict, config: NetworkConfig, seed: int) -> None:
    """Versioned npz checkpoint with a manifest recording config and seed."""
    manifest = json.dumps({
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": asdict(config),
        "seed": int(seed),
        "keys": list(parameter_shapes(config).keys()),
    }, sort_keys=True)
    arrays = {"__manifest__": np.array(manifest)}
    for name in parameter_shapes(config):
        arrays[name] = params[name]
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[dict, NetworkConfig, int]:
    with np.load(path, allow_pickle=False) as data:
        manifest = json.loads(str(data["__manifest__"]))
        if manifest["format_version"] != CHECKPOINT_FORMAT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {manifest['format_version']}")
        config = NetworkConfig(**manifest["config"])
        params = {name: data[name].copy() for name in manifest["keys"]}
    for name, arr in params.items():
        if not np.isfinite(arr).all():
            raise NumericError(f"non-finite parameters in checkpoint entry {name}")
    return params, config, manifest["seed"]
