"""Fully convolutional autoencoder implemented directly on numpy.

Encoder downscales twice via strided 3x3 convolutions, the decoder
upscales with nearest-neighbor 2x upsampling; all convolutions use "same"
padding.  ReLU everywhere except the last two convolutions, which use
Leaky-ReLU.  Includes exact reverse-mode gradients, Glorot Normal init,
L1 weight regularization, an Adam optimizer and a checksummed binary
checkpoint format.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

KERNEL = 3

CHECKPOINT_MAGIC = b"AQMD"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """Base error for unreadable checkpoint files."""


class ChecksumError(CheckpointError):
    """Checkpoint payload does not match its CRC32."""


class VersionError(CheckpointError):
    """Checkpoint was written by an unsupported format version."""


class TrainingDiverged(Exception):
    """Raised when gradients or parameters stop being finite."""


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the architecture.

    kind is "conv" (3x3, same padding, stride 1 or 2, with an activation)
    or "upsample" (nearest-neighbor, factor 2).
    """

    kind: str
    in_ch: int = 0
    out_ch: int = 0
    stride: int = 1
    activation: str = "none"  # none | relu | leaky_relu


def conv(in_ch: int, out_ch: int, stride: int = 1, activation: str = "relu") -> LayerSpec:
    return LayerSpec("conv", in_ch=in_ch, out_ch=out_ch, stride=stride, activation=activation)


def upsample() -> LayerSpec:
    return LayerSpec("upsample")


# Widths chosen to land near the intended ~170k trainable parameters
# (exactly 174,515 with these eleven convolutions).
DEFAULT_LAYERS: tuple[LayerSpec, ...] = (
    conv(3, 32),
    conv(32, 32, stride=2),
    conv(32, 64),
    conv(64, 64, stride=2),
    conv(64, 64),
    conv(64, 64),
    upsample(),
    conv(64, 32),
    conv(32, 32),
    upsample(),
    conv(32, 16),
    conv(16, 16, activation="leaky_relu"),
    conv(16, 3, activation="leaky_relu"),
)


@dataclass
class NetworkParams:
    """Ordered layer weights/biases plus Adam state and step counter.

    ``weights[i]``/``biases[i]`` are None for non-conv layers.  Adam moment
    buffers mirror the parameter arrays.
    """

    specs: tuple[LayerSpec, ...]
    weights: list
    biases: list
    m_w: list = field(default_factory=list)
    v_w: list = field(default_factory=list)
    m_b: list = field(default_factory=list)
    v_b: list = field(default_factory=list)
    step: int = 0
    leaky_alpha: float = 0.19

    def copy(self) -> "NetworkParams":
        dup = lambda xs: [None if x is None else x.copy() for x in xs]
        return NetworkParams(
            specs=self.specs,
            weights=dup(self.weights),
            biases=dup(self.biases),
            m_w=dup(self.m_w),
            v_w=dup(self.v_w),
            m_b=dup(self.m_b),
            v_b=dup(self.v_b),
            step=self.step,
            leaky_alpha=self.leaky_alpha,
        )


Gradients = list  # per layer: None or (dweight, dbias)


def build_network(
    seed: int,
    specs: tuple[LayerSpec, ...] = DEFAULT_LAYERS,
    leaky_alpha: float = 0.19,
) -> NetworkParams:
    """Initialize weights with Glorot Normal and zero biases.

    std = sqrt(2 / (fan_in + fan_out)) with fan counted over the full 3x3
    receptive field.  Two builds with the same seed are identical.
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    zeros = lambda arrs: [None if a is None else np.zeros_like(a) for a in arrs]
    for spec in specs:
        if spec.kind == "conv":
            fan_in = spec.in_ch * KERNEL * KERNEL
            fan_out = spec.out_ch * KERNEL * KERNEL
            std = np.sqrt(2.0 / (fan_in + fan_out))
            weights.append(rng.normal(0.0, std, size=(spec.out_ch, spec.in_ch, KERNEL, KERNEL)))
            biases.append(np.zeros(spec.out_ch))
        else:
            weights.append(None)
            biases.append(None)
    return NetworkParams(
        specs=tuple(specs),
        weights=weights,
        biases=biases,
        m_w=zeros(weights),
        v_w=zeros(weights),
        m_b=zeros(biases),
        v_b=zeros(biases),
        step=0,
        leaky_alpha=leaky_alpha,
    )


def param_count(params: NetworkParams) -> int:
    """Number of trainable parameters (seed-independent)."""
    total = 0
    for w, b in zip(params.weights, params.biases):
        if w is not None:
            total += w.size + b.size
    return total


def spatial_divisor(specs: tuple[LayerSpec, ...]) -> int:
    """Input dims must divide this so strided stages stay exact."""
    div = 1
    for spec in specs:
        if spec.kind == "conv":
            div *= spec.stride
    return div


def _same_pads(size: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + KERNEL - size, 0)
    return total // 2, total - total // 2


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    n, h, wd, cin = x.shape
    out_ch = w.shape[0]
    pt, pb = _same_pads(h, stride)
    pl, pr = _same_pads(wd, stride)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    cols = win.reshape(n, ho, wo, cin * KERNEL * KERNEL)
    return cols @ w.reshape(out_ch, -1).T + b


def _conv_backward(
    x: np.ndarray, w: np.ndarray, stride: int, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, h, wd, cin = x.shape
    out_ch = w.shape[0]
    pt, pb = _same_pads(h, stride)
    pl, pr = _same_pads(wd, stride)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    cols = win.reshape(-1, cin * KERNEL * KERNEL)
    dy_flat = dy.reshape(-1, out_ch)

    dw = (dy_flat.T @ cols).reshape(w.shape)
    db = dy_flat.sum(axis=0)

    dcols = (dy_flat @ w.reshape(out_ch, -1)).reshape(n, ho, wo, cin, KERNEL, KERNEL)
    dxp = np.zeros_like(xp)
    for i in range(KERNEL):
        for j in range(KERNEL):
            dxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += dcols[
                :, :, :, :, i, j
            ]
    return dxp[:, pt : pt + h, pl : pl + wd, :], dw, db


def _activate(z: np.ndarray, activation: str, alpha: float) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "leaky_relu":
        return np.where(z > 0.0, z, alpha * z)
    return z


def _activate_grad(z: np.ndarray, activation: str, alpha: float) -> np.ndarray:
    if activation == "relu":
        return (z > 0.0).astype(np.float64)
    if activation == "leaky_relu":
        return np.where(z > 0.0, 1.0, alpha)
    return np.ones_like(z)


def forward(params: NetworkParams, img: np.ndarray):
    """Run the network; returns (output, cache) with output dims == input dims.

    Accepts a single (H, W, 3) image or a batch (N, H, W, 3); spatial dims
    must be divisible by the architecture's downscale factor.
    """
    x = np.asarray(img, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or x.shape[3] != params.specs[0].in_ch:
        raise ValueError(f"expected (N, H, W, {params.specs[0].in_ch}) input, got {x.shape}")
    div = spatial_divisor(params.specs)
    if x.shape[1] % div or x.shape[2] % div:
        raise ValueError(
            f"spatial dims {x.shape[1]}x{x.shape[2]} must be divisible by {div}"
        )

    cache = []
    for idx, spec in enumerate(params.specs):
        if spec.kind == "conv":
            z = _conv_forward(x, params.weights[idx], params.biases[idx], spec.stride)
            cache.append((x, z))
            x = _activate(z, spec.activation, params.leaky_alpha)
        else:
            cache.append((x.shape,))
            x = x.repeat(2, axis=1).repeat(2, axis=2)
    return (x[0] if single else x), cache


def backward(params: NetworkParams, cache: list, out_grad: np.ndarray) -> Gradients:
    """Exact gradients of a scalar loss w.r.t. every weight and bias.

    ``out_grad`` is dLoss/dOutput with the shape the matching forward
    returned (single image or batch).
    """
    g = np.asarray(out_grad, dtype=np.float64)
    if g.ndim == 3:
        g = g[None]
    grads: Gradients = [None] * len(params.specs)
    for idx in range(len(params.specs) - 1, -1, -1):
        spec = params.specs[idx]
        if spec.kind == "conv":
            x, z = cache[idx]
            if g.shape != z.shape:
                raise ValueError(f"gradient shape {g.shape} does not match layer {idx} {z.shape}")
            g = g * _activate_grad(z, spec.activation, params.leaky_alpha)
            g, dw, db = _conv_backward(x, params.weights[idx], spec.stride, g)
            grads[idx] = (dw, db)
        else:
            (in_shape,) = cache[idx]
            n, h, w, c = in_shape
            g = g.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4))
    return grads


def zero_gradients(params: NetworkParams) -> Gradients:
    return [
        None if w is None else (np.zeros_like(w), np.zeros_like(b))
        for w, b in zip(params.weights, params.biases)
    ]


def add_gradients(a: Gradients, b: Gradients) -> Gradients:
    return [
        None if ga is None else (ga[0] + gb[0], ga[1] + gb[1])
        for ga, gb in zip(a, b)
    ]


def scale_gradients(g: Gradients, s: float) -> Gradients:
    return [None if e is None else (e[0] * s, e[1] * s) for e in g]


def l1_penalty(
    params: NetworkParams,
    kernel_factor: float = 15e-6,
    bias_factor: float = 1.5e-6,
) -> tuple[float, Gradients]:
    """L1 regularization value and its subgradient (zero at exactly zero)."""
    value = 0.0
    grads: Gradients = [None] * len(params.specs)
    for idx, (w, b) in enumerate(zip(params.weights, params.biases)):
        if w is None:
            continue
        value += kernel_factor * float(np.abs(w).sum()) + bias_factor * float(np.abs(b).sum())
        grads[idx] = (kernel_factor * np.sign(w), bias_factor * np.sign(b))
    return value, grads


def adam_step(
    params: NetworkParams,
    grads: Gradients,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> NetworkParams:
    """One Adam update with bias correction (updates params in place)."""
    for entry in grads:
        if entry is not None and not (np.isfinite(entry[0]).all() and np.isfinite(entry[1]).all()):
            raise TrainingDiverged("non-finite gradient passed to the optimizer")
    params.step += 1
    t = params.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for idx, entry in enumerate(grads):
        if entry is None:
            continue
        dw, db = entry
        for value, grad, m, v in (
            (params.weights[idx], dw, params.m_w[idx], params.v_w[idx]),
            (params.biases[idx], db, params.m_b[idx], params.v_b[idx]),
        ):
            m *= beta1
            m += (1.0 - beta1) * grad
            v *= beta2
            v += (1.0 - beta2) * grad * grad
            value -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        if not (np.isfinite(params.weights[idx]).all() and np.isfinite(params.biases[idx]).all()):
            raise TrainingDiverged(f"layer {idx} parameters became non-finite")
    return params


# ---------------------------------------------------------------------------
# Checkpoint format: magic "AQMD", version u16, layer count u16, leaky alpha
# f32, per layer a kind tag plus shape dims and raw little-endian float32
# weight/bias arrays, then the Adam moment buffers, the step counter and a
# trailing CRC32 over everything before it.
# ---------------------------------------------------------------------------

_KIND_CODES = {"conv": 0, "upsample": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}
_ACT_CODES = {"none": 0, "relu": 1, "leaky_relu": 2}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


def _f32_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint payload shorter than declared contents")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def f32_array(self, shape: tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        raw = np.frombuffer(self.take(4 * count), dtype="<f4")
        return raw.astype(np.float64).reshape(shape)


def save_checkpoint(params: NetworkParams, path: str) -> None:
    """Serialize parameters and optimizer state (float32 storage)."""
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<HH", CHECKPOINT_VERSION, len(params.specs))
    out += struct.pack("<f", params.leaky_alpha)
    for idx, spec in enumerate(params.specs):
        out += struct.pack("<B", _KIND_CODES[spec.kind])
        if spec.kind == "conv":
            out += struct.pack(
                "<BHHH", _ACT_CODES[spec.activation], spec.stride, spec.in_ch, spec.out_ch
            )
            out += _f32_bytes(params.weights[idx])
            out += _f32_bytes(params.biases[idx])
    for buffers in (params.m_w, params.v_w, params.m_b, params.v_b):
        for arr in buffers:
            if arr is not None:
                out += _f32_bytes(arr)
    out += struct.pack("<Q", params.step)
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def load_checkpoint(path: str) -> NetworkParams:
    """Load a checkpoint; rejects corrupted or version-mismatched files."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(CHECKPOINT_MAGIC) + 4 or not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError("not a network checkpoint (bad magic)")
    payload, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) != crc:
        raise ChecksumError("checkpoint CRC32 mismatch (truncated or corrupted file)")

    r = _Reader(payload)
    r.take(len(CHECKPOINT_MAGIC))
    version, layer_count = r.unpack("<HH")
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    (alpha,) = r.unpack("<f")

    specs, weights, biases = [], [], []
    for _ in range(layer_count):
        (kind_code,) = r.unpack("<B")
        kind = _KIND_NAMES.get(kind_code)
        if kind is None:
            raise CheckpointError(f"unknown layer kind tag {kind_code}")
        if kind == "conv":
            act_code, stride, in_ch, out_ch = r.unpack("<BHHH")
            specs.append(conv(in_ch, out_ch, stride=stride, activation=_ACT_NAMES[act_code]))
            weights.append(r.f32_array((out_ch, in_ch, KERNEL, KERNEL)))
            biases.append(r.f32_array((out_ch,)))
        else:
            specs.append(upsample())
            weights.append(None)
            biases.append(None)

    def read_buffers(like: list) -> list:
        return [None if a is None else r.f32_array(a.shape) for a in like]

    m_w = read_buffers(weights)
    v_w = read_buffers(weights)
    m_b = read_buffers(biases)
    v_b = read_buffers(biases)
    (step,) = r.unpack("<Q")
    if r.pos != len(payload):
        raise CheckpointError("trailing bytes after checkpoint contents")
    return NetworkParams(
        specs=tuple(specs),
        weights=weights,
        biases=biases,
        m_w=m_w,
        v_w=v_w,
        m_b=m_b,
        v_b=v_b,
        step=step,
        leaky_alpha=float(np.float32(alpha)),
    )
