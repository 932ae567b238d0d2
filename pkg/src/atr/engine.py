"""Small dense-tensor training engine.

Five layer kinds (conv, relu, maxpool, contrast_norm, fully_connected) with
forward and backward passes over NCHW float32 batches, an l2 regression loss,
SGD with momentum and weight decay, finite-difference gradient checking and
the ``ATRN`` checkpoint container.
"""
from __future__ import annotations

import copy
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float32
KINDS = ("conv", "relu", "maxpool", "contrast_norm", "fully_connected")
PARAM_KINDS = ("conv", "fully_connected")


class DimensionError(ValueError):
    """Raised when a tensor does not fit the layer it is fed to."""

    def __init__(self, message: str, layer: int | None = None):
        self.layer = layer
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int = 0
    kernel: int = 0
    stride: int = 1
    pad: int = 0
    units: int = 0
    # across-channel response normalisation constants
    size: int = 5
    alpha: float = 1e-4
    beta: float = 0.75

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.kind in ("conv", "maxpool") and self.kernel < 1:
            raise ValueError(f"{self.kind} needs kernel >= 1")
        if self.kind == "conv" and self.filters < 1:
            raise ValueError("conv needs filters >= 1")
        if self.kind == "fully_connected" and self.units < 1:
            raise ValueError("fully_connected needs units >= 1")
        if self.pad < 0:
            raise ValueError("pad must be >= 0")

    @property
    def has_params(self) -> bool:
        return self.kind in PARAM_KINDS


def conv(filters: int, kernel: int, stride: int = 1, pad: int = 0) -> LayerSpec:
    return LayerSpec("conv", filters=filters, kernel=kernel, stride=stride, pad=pad)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def maxpool(window: int, stride: int) -> LayerSpec:
    return LayerSpec("maxpool", kernel=window, stride=stride)


def contrast_norm(size: int = 5, alpha: float = 1e-4, beta: float = 0.75) -> LayerSpec:
    return LayerSpec("contrast_norm", size=size, alpha=alpha, beta=beta)


def fc(units: int) -> LayerSpec:
    return LayerSpec("fully_connected", units=units)


def conv_output_size(size: int, kernel: int, stride: int, pad: int = 0) -> int:
    """Spatial extent after a sliding window: floor((in + 2 pad - kernel) / stride) + 1."""
    return (size + 2 * pad - kernel) // stride + 1


def output_shape(spec: LayerSpec, in_shape: Sequence[int], index: int | None = None) -> tuple[int, ...]:
    if spec.kind == "fully_connected":
        return (spec.units,)
    if spec.kind == "relu":
        return tuple(in_shape)
    if len(in_shape) != 3:
        raise DimensionError(f"{spec.kind} expects a (C, H, W) input, got {tuple(in_shape)}", index)
    c, h, w = in_shape
    if spec.kind == "contrast_norm":
        return (c, h, w)
    pad = spec.pad if spec.kind == "conv" else 0
    if spec.kernel > h + 2 * pad or spec.kernel > w + 2 * pad:
        raise DimensionError(f"kernel {spec.kernel} exceeds padded input {h + 2 * pad}x{w + 2 * pad}", index)
    ho = conv_output_size(h, spec.kernel, spec.stride, pad)
    wo = conv_output_size(w, spec.kernel, spec.stride, pad)
    return (spec.filters if spec.kind == "conv" else c, ho, wo)


def layer_shapes(specs: Sequence[LayerSpec], input_shape: Sequence[int]) -> list[tuple[int, ...]]:
    """Output shape of every layer, computed without allocating anything."""
    shapes = []
    shape = tuple(input_shape)
    for i, spec in enumerate(specs):
        shape = output_shape(spec, shape, i)
        shapes.append(shape)
    return shapes


# ---------------------------------------------------------------------------
# per-kind forward / backward


def _conv_forward(x, W, b, spec):
    n, c, h, w = x.shape
    k, s, p = spec.kernel, spec.stride, spec.pad
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    ho = conv_output_size(h, k, s, p)
    wo = conv_output_size(w, k, s, p)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, : s * (ho - 1) + 1 : s, : s * (wo - 1) + 1 : s]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * k * k)
    out = cols @ W.reshape(W.shape[0], -1).T
    out += b
    out = out.reshape(n, ho, wo, -1).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), (cols, xp.shape, x.shape)


def _conv_backward(dout, W, spec, cache):
    cols, xp_shape, x_shape = cache
    n, f, ho, wo = dout.shape
    k, s, p = spec.kernel, spec.stride, spec.pad
    c = x_shape[1]
    d2 = np.ascontiguousarray(dout.transpose(0, 2, 3, 1)).reshape(-1, f)
    dW = (d2.T @ cols).reshape(W.shape)
    db = d2.sum(axis=0, dtype=np.float64).astype(dout.dtype)
    dcols = (d2 @ W.reshape(f, -1)).reshape(n, ho, wo, c, k, k)
    dxp = np.zeros(xp_shape, dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if p:
        dxp = dxp[:, :, p : p + x_shape[2], p : p + x_shape[3]]
    return np.ascontiguousarray(dxp), dW, db


def _pool_windows(x, spec):
    k, s = spec.kernel, spec.stride
    ho = conv_output_size(x.shape[2], k, s)
    wo = conv_output_size(x.shape[3], k, s)
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, : s * (ho - 1) + 1 : s, : s * (wo - 1) + 1 : s]
    return win.reshape(*win.shape[:4], k * k)


def _pool_forward(x, spec):
    win = _pool_windows(x, spec)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), (idx, x.shape)


def _pool_backward(dout, spec, cache):
    idx, x_shape = cache
    k, s = spec.kernel, spec.stride
    ho, wo = dout.shape[2:]
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            hit = idx == i * k + j
            if hit.any():
                dx[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += np.where(hit, dout, 0)
    return dx


def pool_ties(x: np.ndarray, spec: LayerSpec) -> np.ndarray:
    """Boolean map of pooling windows whose maximum is attained more than once."""
    win = _pool_windows(x, spec)
    top = win.max(axis=-1, keepdims=True)
    return (win == top).sum(axis=-1) > 1


def _channel_window_sum(a, size):
    # sum over channels c - size//2 .. c + (size-1)//2, zero outside
    lo, hi = size // 2, (size - 1) // 2
    c = a.shape[1]
    csum = np.cumsum(a, axis=1, dtype=np.float64)
    csum = np.concatenate([np.zeros_like(csum[:, :1]), csum], axis=1)
    idx = np.arange(c)
    top = np.minimum(idx + hi + 1, c)
    bot = np.maximum(idx - lo, 0)
    return (csum[:, top] - csum[:, bot]).astype(a.dtype)


def _norm_forward(x, spec):
    scale = 1.0 + (spec.alpha / spec.size) * _channel_window_sum(x * x, spec.size)
    factor = scale ** (-spec.beta)
    return x * factor, (x, scale, factor)


def _norm_backward(dout, spec, cache):
    x, scale, factor = cache
    inner = dout * x * factor / scale
    # the window is symmetric for odd sizes, so the adjoint is the same sum
    if spec.size % 2:
        acc = _channel_window_sum(inner, spec.size)
    else:
        acc = _channel_window_sum(inner[:, ::-1], spec.size)[:, ::-1]
    return dout * factor - (2.0 * spec.alpha * spec.beta / spec.size) * x * acc


# ---------------------------------------------------------------------------


@dataclass
class RegressionNet:
    """An ordered layer stack whose last layer is a fully-connected regressor."""

    specs: list[LayerSpec]
    input_shape: tuple[int, int, int]
    seed: int = 0
    step: int = 0
    params: list[dict[str, np.ndarray] | None] = field(default_factory=list)
    velocity: list[dict[str, np.ndarray] | None] = field(default_factory=list)
    extras: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.specs = list(self.specs)
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if not self.specs or self.specs[-1].kind != "fully_connected":
            raise ValueError("the final layer must be fully_connected")
        self.shapes = layer_shapes(self.specs, self.input_shape)
        self._caches: list | None = None

    # -- construction -----------------------------------------------------

    def init_params(self, seed: int | None = None) -> "RegressionNet":
        if seed is not None:
            self.seed = seed
        rng = np.random.default_rng(self.seed)
        self.params, self.velocity = [], []
        in_shape = self.input_shape
        for spec, out_shape in zip(self.specs, self.shapes):
            if spec.kind == "conv":
                fan_in = in_shape[0] * spec.kernel * spec.kernel
                wshape = (spec.filters, in_shape[0], spec.kernel, spec.kernel)
            elif spec.kind == "fully_connected":
                fan_in = int(np.prod(in_shape))
                wshape = (spec.units, fan_in)
            else:
                self.params.append(None)
                self.velocity.append(None)
                in_shape = out_shape
                continue
            # zero-mean normal scaled for relu units, so activations keep their spread with depth
            W = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=wshape).astype(DTYPE)
            b = np.zeros(wshape[0], dtype=DTYPE)
            self.params.append({"W": W, "b": b})
            self.velocity.append({"W": np.zeros_like(W), "b": np.zeros_like(b)})
            in_shape = out_shape
        return self

    @property
    def output_size(self) -> int:
        return self.specs[-1].units

    @property
    def dtype(self):
        for p in self.params:
            if p is not None:
                return p["W"].dtype
        return DTYPE

    def astype(self, dtype) -> "RegressionNet":
        other = copy.deepcopy(self)
        for group in (other.params, other.velocity):
            for p in group:
                if p is not None:
                    for key in p:
                        p[key] = p[key].astype(dtype)
        other._caches = None
        return other

    def copy(self) -> "RegressionNet":
        other = copy.deepcopy(self)
        other._caches = None
        return other

    def count(self, kind: str) -> int:
        return sum(1 for s in self.specs if s.kind == kind)

    def num_params(self) -> int:
        return sum(p["W"].size + p["b"].size for p in self.params if p is not None)

    # -- passes -----------------------------------------------------------

    def _check_input(self, x):
        x = np.asarray(x)
        if x.shape == self.input_shape:
            return x[None], True
        if x.ndim == 4 and x.shape[1:] == self.input_shape:
            return x, False
        raise DimensionError(f"input {x.shape} does not match declared input {self.input_shape}", 0)

    def forward(self, x: np.ndarray, start: int = 0, keep_cache: bool = True) -> np.ndarray:
        """Run layers ``start..end`` on ``x``; with start=0, ``x`` is the image (batch)."""
        if not self.params:
            raise RuntimeError("network parameters are not initialised")
        if start == 0:
            x, single = self._check_input(x)
        else:
            single = False
        x = x.astype(self.dtype, copy=False)
        caches = [None] * len(self.specs)
        for i in range(start, len(self.specs)):
            spec = self.specs[i]
            expected = self.input_shape if i == 0 else self.shapes[i - 1]
            got = x.shape[1:]
            if spec.kind == "fully_connected":
                if int(np.prod(got)) != int(np.prod(expected)):
                    raise DimensionError(f"expected {expected}, got {got}", i)
            elif got != tuple(expected):
                raise DimensionError(f"expected {expected}, got {got}", i)
            x, caches[i] = self._layer_forward(i, x)
        if keep_cache:
            self._caches = caches
            self._start = start
        return x[0] if single else x

    def _layer_forward(self, i, x):
        spec = self.specs[i]
        if spec.kind == "conv":
            p = self.params[i]
            return _conv_forward(x, p["W"], p["b"], spec)
        if spec.kind == "relu":
            mask = x > 0
            return x * mask, mask
        if spec.kind == "maxpool":
            return _pool_forward(x, spec)
        if spec.kind == "contrast_norm":
            return _norm_forward(x, spec)
        p = self.params[i]
        flat = x.reshape(x.shape[0], -1)
        out = flat @ p["W"].T
        out += p["b"]
        return out, (flat, x.shape)

    def backward(self, dout: np.ndarray) -> tuple[list[dict[str, np.ndarray] | None], np.ndarray]:
        """Gradients for every parameter, plus the gradient w.r.t. the forward input."""
        if self._caches is None:
            raise RuntimeError("backward called before forward")
        dout = np.asarray(dout, dtype=self.dtype)
        if dout.ndim == 1:
            dout = dout[None]
        grads: list = [None] * len(self.specs)
        self.input_grads = [None] * len(self.specs)
        for i in range(len(self.specs) - 1, self._start - 1, -1):
            spec, cache = self.specs[i], self._caches[i]
            if spec.kind == "conv":
                dout, dW, db = _conv_backward(dout, self.params[i]["W"], spec, cache)
                grads[i] = {"W": dW, "b": db}
            elif spec.kind == "relu":
                dout = dout * cache
            elif spec.kind == "maxpool":
                dout = _pool_backward(dout, spec, cache)
            elif spec.kind == "contrast_norm":
                dout = _norm_backward(dout, spec, cache)
            else:
                flat, in_shape = cache
                W = self.params[i]["W"]
                grads[i] = {"W": dout.T @ flat, "b": dout.sum(axis=0, dtype=np.float64).astype(dout.dtype)}
                dout = (dout @ W).reshape(in_shape)
            self.input_grads[i] = dout
        return grads, dout

    def activations(self, x: np.ndarray, layer: int) -> np.ndarray:
        """Output of layer ``layer`` (inclusive) for input ``x``; no cache kept."""
        x, single = self._check_input(x)
        x = x.astype(self.dtype, copy=False)
        for i in range(layer + 1):
            x, _ = self._layer_forward(i, x)
        return x[0] if single else x

    def switch_pattern(self) -> dict[int, np.ndarray]:
        """Relu masks and pooling argmaxes of the last forward pass, by layer."""
        pats = {}
        for i, (spec, cache) in enumerate(zip(self.specs, self._caches or [])):
            if cache is None:
                continue
            if spec.kind == "relu":
                pats[i] = cache
            elif spec.kind == "maxpool":
                pats[i] = cache[0]
        return pats


def forward(net: RegressionNet, image: np.ndarray) -> np.ndarray:
    return net.forward(image)


def backward(net: RegressionNet, loss_gradient: np.ndarray):
    return net.backward(loss_gradient)


def l2_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Squared euclidean distance and its gradient.

    For a batch (2-D input) the loss is the mean over samples of the per-sample
    sums, and the gradient is scaled by 1/n accordingly.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {target.shape}")
    diff = pred.astype(np.float64) - target.astype(np.float64)
    if pred.ndim <= 1:
        return float(np.sum(diff * diff)), (2.0 * diff).astype(pred.dtype)
    n = pred.shape[0]
    loss = float(np.sum(diff * diff) / n)
    return loss, (2.0 * diff / n).astype(pred.dtype)


def sgd_step(net: RegressionNet, grads, lr: float, momentum: float = 0.9, weight_decay: float = 0.0005) -> RegressionNet:
    """v <- momentum*v - lr*(g + weight_decay*w);  w <- w + v.  Updates ``net`` in place."""
    for i, g in enumerate(grads):
        if g is None:
            continue
        for key in ("W", "b"):
            if not np.all(np.isfinite(g[key])):
                raise NonFiniteError(f"non-finite gradient in layer {i} ({net.specs[i].kind}, {key})")
    for i, g in enumerate(grads):
        if g is None:
            continue
        p, v = net.params[i], net.velocity[i]
        for key in ("W", "b"):
            v[key] *= momentum
            v[key] -= lr * (g[key] + weight_decay * p[key])
            p[key] += v[key]
    net.step += 1
    return net


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradcheckReport:
    max_error: float
    per_kind: dict[str, float]
    checked: int
    excluded: int

    def __str__(self):
        rows = [f"{k:16s} {v:.3e}" for k, v in sorted(self.per_kind.items())]
        rows.append(f"{'max':16s} {self.max_error:.3e}  (checked {self.checked}, excluded {self.excluded})")
        return "\n".join(rows)


def _rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def gradcheck(
    net: RegressionNet,
    image: np.ndarray,
    target: np.ndarray,
    eps: float = 1e-3,
    max_checks: int | None = None,
    seed: int = 0,
) -> GradcheckReport:
    """Compare analytic gradients against central differences.

    Checked quantities: every weight and bias of conv/fc layers, and the
    gradient with respect to each layer's input (which exercises relu,
    maxpool and contrast_norm). The check runs on a 64-bit copy of the net.
    Perturbations that flip a relu or change a pooling argmax (this covers
    tied maxima) are excluded, as the loss is not differentiable there.
    ``max_checks`` caps the number of entries probed per tensor.
    """
    net = net.astype(np.float64)
    image = np.asarray(image, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if image.ndim == 3:
        image, target = image[None], target.reshape(1, -1)
    rng = np.random.default_rng(seed)

    pred = net.forward(image)
    _, dloss = l2_loss(pred, target)
    grads, _ = net.backward(dloss)
    input_grads = [g.copy() for g in net.input_grads]
    base_pattern = net.switch_pattern()
    inputs = [image.copy()]
    for i in range(len(net.specs) - 1):
        inputs.append(net._layer_forward(i, inputs[-1])[0])

    def loss_from(start, x):
        out = net.forward(x, start=start)
        changed = any(not np.array_equal(pat, base_pattern[i]) for i, pat in net.switch_pattern().items())
        return l2_loss(out, target)[0], changed

    def indices(size):
        if max_checks is None or size <= max_checks:
            return range(size)
        return np.sort(rng.choice(size, max_checks, replace=False))

    per_kind: dict[str, float] = {}
    checked = excluded = 0

    def record(kind, a, num):
        nonlocal checked
        err = _rel_error(a, num)
        per_kind[kind] = max(per_kind.get(kind, 0.0), err)
        checked += 1

    for li, spec in enumerate(net.specs):
        # gradient with respect to this layer's input
        x = inputs[li].copy()
        flat = x.reshape(-1)
        g_in = input_grads[li].reshape(-1)
        for j in indices(flat.size):
            old = flat[j]
            flat[j] = old + eps
            lp, cp = loss_from(li, x)
            flat[j] = old - eps
            lm, cm = loss_from(li, x)
            flat[j] = old
            if cp or cm:
                excluded += 1
                continue
            record(spec.kind, float(g_in[j]), (lp - lm) / (2 * eps))
        if not spec.has_params:
            continue
        for key in ("W", "b"):
            arr = net.params[li][key].reshape(-1)
            g = grads[li][key].reshape(-1)
            for j in indices(arr.size):
                old = arr[j]
                arr[j] = old + eps
                lp, cp = loss_from(0, image)
                arr[j] = old - eps
                lm, cm = loss_from(0, image)
                arr[j] = old
                if cp or cm:
                    excluded += 1
                    continue
                record(spec.kind, float(g[j]), (lp - lm) / (2 * eps))
    max_error = max(per_kind.values()) if per_kind else 0.0
    return GradcheckReport(max_error, per_kind, checked, excluded)


# ---------------------------------------------------------------------------
# plateau learning-rate schedule


@dataclass
class PlateauSchedule:
    """Divide the learning rate by ``factor`` once the monitored error stops improving.

    An epoch counts as an improvement when the error drops below
    ``best * (1 - threshold)``; after ``patience`` epochs without one the rate
    is divided and the counter resets.
    """

    lr: float
    patience: int = 5
    threshold: float = 1e-4
    factor: float = 10.0
    best: float = math.inf
    stale: int = 0

    def update(self, error: float) -> float:
        if error < self.best * (1.0 - self.threshold):
            self.best = error
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr /= self.factor
                self.stale = 0
        return self.lr


# ---------------------------------------------------------------------------
# ATRN checkpoints

_MAGIC = "ATRN 1"


def _spec_line(spec: LayerSpec) -> str:
    if spec.kind == "conv":
        return f"conv filters={spec.filters} kernel={spec.kernel} stride={spec.stride} pad={spec.pad}"
    if spec.kind == "maxpool":
        return f"maxpool window={spec.kernel} stride={spec.stride}"
    if spec.kind == "contrast_norm":
        return f"contrast_norm size={spec.size} alpha={spec.alpha!r} beta={spec.beta!r}"
    if spec.kind == "fully_connected":
        return f"fully_connected units={spec.units}"
    return "relu"


def _parse_spec(tokens: list[str]) -> LayerSpec:
    kind = tokens[0]
    kv = dict(t.split("=", 1) for t in tokens[1:] if not t.startswith("out="))
    if kind == "conv":
        return conv(int(kv["filters"]), int(kv["kernel"]), int(kv["stride"]), int(kv["pad"]))
    if kind == "maxpool":
        return maxpool(int(kv["window"]), int(kv["stride"]))
    if kind == "contrast_norm":
        return contrast_norm(int(kv["size"]), float(kv["alpha"]), float(kv["beta"]))
    if kind == "fully_connected":
        return fc(int(kv["units"]))
    if kind == "relu":
        return relu()
    raise ValueError(f"unknown layer kind {kind!r} in checkpoint")


def format_header(net: RegressionNet) -> str:
    lines = [
        _MAGIC,
        "input " + " ".join(str(v) for v in net.input_shape),
        f"seed {net.seed}",
        f"step {net.step}",
        f"layers {len(net.specs)}",
    ]
    for i, (spec, shape) in enumerate(zip(net.specs, net.shapes)):
        lines.append(f"layer {i} {_spec_line(spec)} out={'x'.join(str(v) for v in shape)}")
    for name, arr in net.extras.items():
        lines.append(f"block {name} {'x'.join(str(v) for v in arr.shape) or '1'}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def dumps_checkpoint(net: RegressionNet) -> bytes:
    buf = io.BytesIO()
    buf.write(format_header(net).encode("ascii"))
    le = np.dtype("<f4")
    for p in net.params:
        if p is not None:
            buf.write(p["W"].astype(le).tobytes())
            buf.write(p["b"].astype(le).tobytes())
    for arr in net.extras.values():
        buf.write(np.asarray(arr).astype(le).tobytes())
    return buf.getvalue()


def save_checkpoint(net: RegressionNet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_checkpoint(net))


def loads_checkpoint(data: bytes) -> RegressionNet:
    end = data.find(b"\nend\n")
    if not data.startswith(_MAGIC.encode()) or end < 0:
        raise ValueError("not an ATRN checkpoint")
    header = data[: end + 1].decode("ascii").splitlines()
    body = memoryview(data)[end + 5 :]
    input_shape = tuple(int(v) for v in header[1].split()[1:])
    seed = int(header[2].split()[1])
    step = int(header[3].split()[1])
    specs, blocks = [], []
    for line in header[5:]:
        tokens = line.split()
        if tokens[0] == "layer":
            specs.append(_parse_spec(tokens[2:]))
        elif tokens[0] == "block":
            blocks.append((tokens[1], tuple(int(v) for v in tokens[2].split("x"))))
    net = RegressionNet(specs, input_shape, seed=seed, step=step)
    le = np.dtype("<f4")
    offset = 0

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(body, dtype=le, count=count, offset=offset).astype(DTYPE).reshape(shape)
        offset += count * 4
        return arr

    in_shape = input_shape
    for spec, out_shape in zip(specs, net.shapes):
        if spec.kind == "conv":
            W = take((spec.filters, in_shape[0], spec.kernel, spec.kernel))
        elif spec.kind == "fully_connected":
            W = take((spec.units, int(np.prod(in_shape))))
        else:
            net.params.append(None)
            net.velocity.append(None)
            in_shape = out_shape
            continue
        b = take((W.shape[0],))
        net.params.append({"W": W, "b": b})
        net.velocity.append({"W": np.zeros_like(W), "b": np.zeros_like(b)})
        in_shape = out_shape
    for name, shape in blocks:
        net.extras[name] = take(shape)
    if offset != len(body):
        raise ValueError(f"checkpoint body has {len(body) - offset} trailing bytes")
    return net


def load_checkpoint(path) -> RegressionNet:
    with open(path, "rb") as fh:
        return loads_checkpoint(fh.read())
