"""The two structure regressors and everything around them.

The template network (with pooling) regresses the normalized template
coefficients of all labels at once; the shape network (no pooling, strided
convolutions instead) regresses per-label boxes and visibility. Boxes are in
the pixel coordinates of the network input crop. A box ``(x, y, w, h)`` covers
the pixels whose centres fall inside ``[x, x + w) x [y, y + h)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .dictionary import DictionarySet, label_boxes
from .engine import RegressionNet, conv, contrast_norm, fc, maxpool, relu
from .data import crop_rect
from .imaging import resize_nearest

log = logging.getLogger(__name__)

SCALES = ("paper", "desk")
PAPER_INPUT = 227
DESK_INPUT = 64


# ---------------------------------------------------------------------------
# architectures


def template_specs(scale: str, K: int, M: int) -> tuple[list, tuple[int, int, int]]:
    if scale == "paper":
        specs = [
            conv(96, 7, 2), relu(), maxpool(3, 2), contrast_norm(),
            conv(256, 5, 2, 2), relu(), maxpool(3, 2), contrast_norm(),
            conv(384, 3, 1, 1), relu(),
            conv(384, 3, 1, 1), relu(),
            conv(256, 3, 1, 1), relu(), maxpool(3, 2),
            fc(4096), relu(),
            fc(4096), relu(),
            fc(K * M),
        ]  # fmt: skip
        return specs, (3, PAPER_INPUT, PAPER_INPUT)
    if scale == "desk":
        specs = [
            conv(16, 5, 2), relu(), maxpool(3, 2), contrast_norm(),
            conv(32, 3, 2, 1), relu(),
            fc(256), relu(),
            fc(K * M),
        ]  # fmt: skip
        return specs, (3, DESK_INPUT, DESK_INPUT)
    raise ValueError(f"unknown scale {scale!r}; expected one of {SCALES}")


def shape_specs(scale: str, K: int) -> tuple[list, tuple[int, int, int]]:
    if scale == "paper":
        specs = [
            conv(48, 7, 2), relu(),
            conv(128, 5, 2, 2), relu(),
            conv(192, 3, 2, 1), relu(),
            conv(192, 3, 2, 1), relu(),
            conv(128, 3, 1, 1), relu(),
            fc(2048), relu(),
            fc(1024), relu(),
            fc(5 * K),
        ]  # fmt: skip
        return specs, (3, PAPER_INPUT, PAPER_INPUT)
    if scale == "desk":
        specs = [
            conv(16, 5, 2), relu(),
            conv(32, 3, 2, 1), relu(),
            conv(32, 3, 2, 1), relu(),
            fc(128), relu(),
            fc(5 * K),
        ]  # fmt: skip
        return specs, (3, DESK_INPUT, DESK_INPUT)
    raise ValueError(f"unknown scale {scale!r}; expected one of {SCALES}")


def build_template_net(scale: str = "desk", K: int = 17, M: int = 50, seed: int = 0, init: bool = True) -> RegressionNet:
    """Coefficient regressor with a K*M head. ``init=False`` skips weight allocation (shape audits)."""
    specs, input_shape = template_specs(scale, K, M)
    net = RegressionNet(specs, input_shape, seed=seed)
    return net.init_params() if init else net


def build_shape_net(scale: str = "desk", K: int = 17, seed: int = 0, init: bool = True) -> RegressionNet:
    """Box/visibility regressor with a 5K head and no pooling layer."""
    specs, input_shape = shape_specs(scale, K)
    net = RegressionNet(specs, input_shape, seed=seed)
    return net.init_params() if init else net


def penultimate_layer(net: RegressionNet) -> int:
    """Index of the activation feeding the head (the last relu before the final fc)."""
    return len(net.specs) - 2


def prepare_input(images: np.ndarray) -> np.ndarray:
    """uint8 (H, W, 3) or (N, H, W, 3) -> float32 channels-first, centred on zero."""
    x = np.asarray(images, dtype=np.float32) / 255.0 - 0.5
    return np.ascontiguousarray(np.moveaxis(x, -1, -3))


# ---------------------------------------------------------------------------
# shape parameters and their normalizer


@dataclass(frozen=True)
class ShapeParams:
    values: np.ndarray  # (K, 5): x, y, w, h, v
    space: str = "raw"


@dataclass
class ShapeNormalizer:
    """Per-label mean and standard deviation of the four box components.

    Visibility is left alone in both directions.
    """

    mean: np.ndarray  # (K, 4)
    std: np.ndarray  # (K, 4), strictly positive

    @property
    def K(self) -> int:
        return self.mean.shape[0]

    def normalize(self, shape: ShapeParams) -> ShapeParams:
        if shape.space != "raw":
            raise ValueError("shape parameters are already normalized")
        out = np.array(shape.values, dtype=np.float64)
        out[:, :4] = (out[:, :4] - self.mean) / self.std
        return ShapeParams(out, "normalized")

    def denormalize(self, shape: ShapeParams) -> ShapeParams:
        if shape.space != "normalized":
            raise ValueError("shape parameters are not normalized")
        out = np.array(shape.values, dtype=np.float64)
        out[:, :4] = out[:, :4] * self.std + self.mean
        return ShapeParams(out, "raw")


def fit_shape_normalizer(boxes: np.ndarray, present: np.ndarray) -> ShapeNormalizer:
    """Statistics from raw boxes ``(n, K, 4)`` over the samples where each label is present.

    Labels seen fewer than twice (or with a constant component) get unit spread.
    """
    boxes = np.asarray(boxes, dtype=np.float64)
    present = np.asarray(present, dtype=bool)
    K = boxes.shape[1]
    mean = np.zeros((K, 4))
    std = np.ones((K, 4))
    for k in range(K):
        sel = boxes[present[:, k], k]
        if sel.shape[0] == 0:
            continue
        mean[k] = sel.mean(axis=0)
        if sel.shape[0] >= 2:
            s = sel.std(axis=0)
            std[k] = np.where(s > 0, s, 1.0)
    return ShapeNormalizer(mean, std)


# ---------------------------------------------------------------------------
# training targets


@dataclass(frozen=True)
class TrainingTarget:
    coefficients: np.ndarray  # (K, M), normalized space
    shape: np.ndarray  # (K, 5), normalized boxes + raw visibility
    present: np.ndarray  # (K,) bool


def raw_boxes(labels: np.ndarray, K: int) -> tuple[np.ndarray, np.ndarray]:
    boxes = np.zeros((K, 4))
    present = np.zeros(K, dtype=bool)
    for k, box in label_boxes(labels, K).items():
        if box is not None:
            boxes[k - 1] = box
            present[k - 1] = True
    return boxes, present


def make_training_targets(labels: np.ndarray, dicts: DictionarySet, shape_norm: ShapeNormalizer | None) -> TrainingTarget:
    """Regression targets for one (cropped) label map; absent labels are all zeros with v = 0."""
    if shape_norm is None:
        raise ValueError("the shape normalizer has not been fitted")
    coeffs, present = dicts.normalized_targets(labels)
    boxes, _ = raw_boxes(labels, dicts.K)
    raw = np.concatenate([boxes, present[:, None].astype(np.float64)], axis=1)
    shape = shape_norm.normalize(ShapeParams(raw)).values
    shape[~present] = 0.0
    return TrainingTarget(coeffs, shape, present)


def make_target_arrays(label_maps, dicts: DictionarySet, shape_norm: ShapeNormalizer) -> tuple[np.ndarray, np.ndarray]:
    """Stacked flat targets (n, K*M) and (n, 5K) for a sequence of label maps."""
    T, S = [], []
    for labels in label_maps:
        t = make_training_targets(labels, dicts, shape_norm)
        T.append(t.coefficients.ravel())
        S.append(t.shape.ravel())
    return np.asarray(T, dtype=np.float32), np.asarray(S, dtype=np.float32)


def make_shape_targets(label_maps, K: int, shape_norm: ShapeNormalizer) -> np.ndarray:
    """Flat (n, 5K) shape targets alone; needs no dictionary."""
    out = []
    for labels in label_maps:
        boxes, present = raw_boxes(labels, K)
        raw = np.concatenate([boxes, present[:, None].astype(np.float64)], axis=1)
        shape = shape_norm.normalize(ShapeParams(raw)).values
        shape[~present] = 0.0
        out.append(shape.ravel())
    return np.asarray(out, dtype=np.float32)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    lr: float = 0.0005
    batch: int = 128
    epochs: int = 50
    momentum: float = 0.9
    weight_decay: float = 0.0005
    patience: int = 5
    threshold: float = 1e-4
    seed: int = 0


@dataclass
class TrainResult:
    net: RegressionNet
    losses: list[float] = field(default_factory=list)  # mean training loss per epoch
    val_losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)


def evaluate_loss(net: RegressionNet, images: np.ndarray, targets: np.ndarray, batch: int = 256) -> float:
    total = 0.0
    for start in range(0, len(images), batch):
        pred = net.forward(prepare_input(images[start : start + batch]), keep_cache=False)
        diff = pred.astype(np.float64) - targets[start : start + batch]
        total += float(np.sum(diff * diff))
    return total / len(images)


def train(
    net: RegressionNet,
    images: np.ndarray,
    targets: np.ndarray,
    config: TrainConfig | None = None,
    val: tuple[np.ndarray, np.ndarray] | None = None,
    progress=None,
) -> TrainResult:
    """Mini-batch SGD on the summed squared error; ``images`` are uint8 (N, H, W, 3).

    The learning rate drops tenfold when the monitored loss (validation when
    given, training otherwise) stops improving.
    """
    config = config or TrainConfig()
    images = np.asarray(images)
    targets = np.asarray(targets, dtype=np.float32)
    if len(images) != len(targets):
        raise ValueError("image and target counts differ")
    if targets.shape[1] != net.output_size:
        raise ValueError(f"targets have width {targets.shape[1]}, the head has {net.output_size}")
    rng = np.random.default_rng(config.seed)
    schedule = engine.PlateauSchedule(config.lr, config.patience, config.threshold)
    result = TrainResult(net)
    n = len(images)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for step, start in enumerate(range(0, n, config.batch)):
            idx = np.sort(order[start : start + config.batch])
            pred = net.forward(prepare_input(images[idx]))
            loss, grad = engine.l2_loss(pred, targets[idx])
            if not math.isfinite(loss):
                raise engine.NonFiniteError(f"non-finite loss at epoch {epoch + 1}, step {step + 1}")
            grads, _ = net.backward(grad)
            engine.sgd_step(net, grads, schedule.lr, config.momentum, config.weight_decay)
            total += loss * len(idx)
        result.losses.append(total / n)
        result.lrs.append(schedule.lr)
        monitored = result.losses[-1]
        if val is not None:
            monitored = evaluate_loss(net, val[0], np.asarray(val[1], dtype=np.float32))
            result.val_losses.append(monitored)
        schedule.update(monitored)
        log.info("epoch %d loss %.5f lr %.2e", epoch + 1, result.losses[-1], result.lrs[-1])
        if progress is not None:
            progress(epoch + 1, result)
    return result


# ---------------------------------------------------------------------------
# prediction


@dataclass(frozen=True)
class Structure:
    coefficients: np.ndarray  # (K, M) raw space
    shape: np.ndarray  # (K, 5) raw boxes and visibility


def decode_structure(template_out: np.ndarray, shape_out: np.ndarray, dicts: DictionarySet, shape_norm: ShapeNormalizer) -> Structure:
    K, M = dicts.K, dicts.M
    normed = np.asarray(template_out, dtype=np.float64).reshape(K, M)
    coeffs = np.stack([dicts[k].denormalize(normed[k - 1]) for k in range(1, K + 1)])
    if dicts.variant != "pca":
        coeffs = np.maximum(coeffs, 0.0)
    shape = shape_norm.denormalize(ShapeParams(np.asarray(shape_out, dtype=np.float64).reshape(K, 5), "normalized")).values
    shape[:, 4] = np.clip(shape[:, 4], 0.0, 1.0)
    return Structure(coeffs, shape)


def predict_structure(
    template_net: RegressionNet, shape_net: RegressionNet, image: np.ndarray, dicts: DictionarySet, shape_norm: ShapeNormalizer
) -> Structure:
    """Raw coefficients and boxes for one uint8 crop already at the nets' input size."""
    x = prepare_input(image)
    for net in (template_net, shape_net):
        if x.shape != net.input_shape:
            raise engine.DimensionError(f"image {x.shape} does not match network input {net.input_shape}", 0)
    return decode_structure(template_net.forward(x, keep_cache=False), shape_net.forward(x, keep_cache=False), dicts, shape_norm)


# ---------------------------------------------------------------------------
# bounding-box refinement


def iou(a, b) -> float:
    ax, ay, aw, ah = (float(v) for v in a[:4])
    bx, by, bw, bh = (float(v) for v in b[:4])
    iw = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def box_transform(P, G) -> np.ndarray:
    """(t_x, t_y, t_w, t_h) taking box P onto box G."""
    px, py, pw, ph = (float(v) for v in P[:4])
    gx, gy, gw, gh = (float(v) for v in G[:4])
    return np.array([(gx - px) / pw, (gy - py) / ph, math.log(gw / pw), math.log(gh / ph)])


def apply_transform(P, t) -> np.ndarray:
    px, py, pw, ph = (float(v) for v in P[:4])
    return np.array([px + pw * t[0], py + ph * t[1], pw * math.exp(t[2]), ph * math.exp(t[3])])


def clamp_box(box, width: int, height: int) -> np.ndarray:
    x0 = min(max(box[0], 0.0), width)
    y0 = min(max(box[1], 0.0), height)
    x1 = min(max(box[0] + box[2], 0.0), width)
    y1 = min(max(box[1] + box[3], 0.0), height)
    return np.array([x0, y0, x1 - x0, y1 - y0])


@dataclass
class BoxRefiner:
    """Per-label linear maps from a feature vector (plus bias) to transform targets."""

    weights: np.ndarray  # (K, F + 1, 4)
    fitted: np.ndarray  # (K,) bool; unfitted labels act as the identity

    @classmethod
    def identity(cls, K: int, F: int) -> "BoxRefiner":
        return cls(np.zeros((K, F + 1, 4)), np.zeros(K, dtype=bool))

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    def transform(self, label: int, feature: np.ndarray) -> np.ndarray:
        if not self.fitted[label - 1]:
            return np.zeros(4)
        return np.append(np.asarray(feature, dtype=np.float64), 1.0) @ self.weights[label - 1]


def fit_box_refiners(pairs, K: int, F: int, ridge: float = 1.0, min_iou: float = 0.5) -> BoxRefiner:
    """Least-squares refiners from ``(label, feature, predicted box, true box)`` tuples.

    Pairs whose boxes overlap by less than ``min_iou`` are dropped; labels left
    without pairs stay at the identity.
    """
    per_label: dict[int, list] = {k: [] for k in range(1, K + 1)}
    for label, feature, P, G in pairs:
        if P[2] <= 0 or P[3] <= 0 or G[2] <= 0 or G[3] <= 0 or iou(P, G) < min_iou:
            continue
        per_label[label].append((feature, box_transform(P, G)))
    ref = BoxRefiner.identity(K, F)
    for k, rows in per_label.items():
        if not rows:
            continue
        X = np.array([np.append(np.asarray(f, dtype=np.float64), 1.0) for f, _ in rows])
        T = np.array([t for _, t in rows])
        reg = ridge * np.eye(F + 1)
        reg[-1, -1] = 0.0  # leave the bias unpenalized
        ref.weights[k - 1] = np.linalg.solve(X.T @ X + reg, X.T @ T)
        ref.fitted[k - 1] = True
    return ref


def refine_box(refiner: BoxRefiner, label: int, feature: np.ndarray, box, width: int, height: int) -> np.ndarray:
    """Apply the label's learned transform to ``box`` and clamp the result to the frame."""
    t = refiner.transform(label, feature)
    return clamp_box(apply_transform(box, t), width, height)


REFINE_CONTEXT = 1.5


def refinement_features(shape_net: RegressionNet, image: np.ndarray, boxes) -> np.ndarray:
    """Penultimate shape-net activations on crops around each box enlarged by 1.5.

    ``image`` is a uint8 crop; every window is resized (nearest) to the net input.
    """
    H, W = image.shape[:2]
    size = shape_net.input_shape[1:]
    crops = []
    for box in boxes:
        try:
            x0, y0, x1, y1 = crop_rect(box[:4], REFINE_CONTEXT, W, H)
        except ValueError:
            x0, y0, x1, y1 = 0, 0, W, H
        crops.append(resize_nearest(image[y0:y1, x0:x1], size[1], size[0]))
    if not crops:
        return np.zeros((0, feature_size(shape_net)))
    feats = shape_net.activations(prepare_input(np.stack(crops)), penultimate_layer(shape_net))
    return feats.reshape(len(crops), -1).astype(np.float64)


def feature_size(shape_net: RegressionNet) -> int:
    return int(np.prod(shape_net.shapes[penultimate_layer(shape_net)]))


# ---------------------------------------------------------------------------
# storing normalizer and refiners alongside the shape checkpoint


def attach_shape_extras(net: RegressionNet, norm: ShapeNormalizer, refiner: BoxRefiner | None = None) -> RegressionNet:
    net.extras["shape_mean"] = norm.mean.astype(np.float32)
    net.extras["shape_std"] = norm.std.astype(np.float32)
    if refiner is not None:
        net.extras["refiner_fitted"] = refiner.fitted.astype(np.float32)
        for k in range(refiner.K):
            net.extras[f"refiner_{k + 1}"] = refiner.weights[k].astype(np.float32)
    return net


def shape_extras(net: RegressionNet) -> tuple[ShapeNormalizer, BoxRefiner]:
    if "shape_mean" not in net.extras:
        raise ValueError("shape checkpoint carries no shape normalizer")
    norm = ShapeNormalizer(net.extras["shape_mean"].astype(np.float64), net.extras["shape_std"].astype(np.float64))
    K = norm.K
    F = feature_size(net)
    if "refiner_fitted" not in net.extras:
        return norm, BoxRefiner.identity(K, F)
    weights = np.stack([net.extras[f"refiner_{k + 1}"].astype(np.float64) for k in range(K)])
    return norm, BoxRefiner(weights, net.extras["refiner_fitted"] > 0.5)
