"""End-to-end parsing: crop, regress structure, fuse, smooth, paste back.

Also holds the training recipe shared by the command line and the tests:
dictionaries from the person crops (and their mirrors), targets from the
augmented crops, then the two regressors and the box refiners.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .combine import background_confidence, foreground_confidence, generate_seeds, morph_mask, VISIBILITY_THRESHOLD
from .data import PALETTE, Sample, augment, crop_person, crop_rect, foreground_box, reflect
from .dictionary import DictionarySet, extract_label_masks, learn_dictionaries, load_dictionaries, resize_mask, save_dictionaries
from .imaging import resize_nearest
from .nets import (
    BoxRefiner,
    ShapeNormalizer,
    ShapeParams,
    Structure,
    TrainConfig,
    attach_shape_extras,
    build_shape_net,
    build_template_net,
    feature_size,
    fit_box_refiners,
    fit_shape_normalizer,
    make_shape_targets,
    predict_structure,
    prepare_input,
    raw_boxes,
    refine_box,
    refinement_features,
    shape_extras,
    train,
)
from .segmentation import FH_K, FH_MIN_SIZE, FH_SIGMA, felzenszwalb_segment, pixel_argmax, superpixel_smooth

log = logging.getLogger(__name__)

ENLARGE = 1.2


@dataclass
class ParsingModel:
    template_net: engine.RegressionNet
    shape_net: engine.RegressionNet
    dicts: DictionarySet
    shape_norm: ShapeNormalizer
    refiner: BoxRefiner

    @property
    def K(self) -> int:
        return self.dicts.K

    @property
    def input_size(self) -> tuple[int, int]:
        _, h, w = self.template_net.input_shape
        return w, h

    @classmethod
    def load(cls, dict_path, template_path, shape_path) -> "ParsingModel":
        dicts = load_dictionaries(dict_path)
        template_net = engine.load_checkpoint(template_path)
        shape_net = engine.load_checkpoint(shape_path)
        norm, refiner = shape_extras(shape_net)
        return cls(template_net, shape_net, dicts, norm, refiner)


@dataclass(frozen=True)
class SegmentationParams:
    k: float = FH_K
    min_size: int = FH_MIN_SIZE
    sigma: float = FH_SIGMA


@dataclass
class ParseResult:
    labels: np.ndarray  # full-frame label map
    crop: tuple[int, int, int, int]  # x0, y0, x1, y1 of the parsed window
    structure: Structure  # raw outputs in network-input coordinates, boxes refined
    maps: np.ndarray = field(repr=False)  # (K+1, h, w) confidences over the crop window
    degenerate: list[int] = field(default_factory=list)


def refine_structure(model: ParsingModel, crop: np.ndarray, structure: Structure) -> Structure:
    """Replace the boxes of visible labels by their refined versions."""
    shape = structure.shape.copy()
    visible = [k for k in range(1, model.K + 1) if shape[k - 1, 4] >= VISIBILITY_THRESHOLD and shape[k - 1, 2] > 0 and shape[k - 1, 3] > 0]
    visible = [k for k in visible if model.refiner.fitted[k - 1]]
    if visible:
        feats = refinement_features(model.shape_net, crop, [shape[k - 1, :4] for k in visible])
        H, W = crop.shape[:2]
        for k, f in zip(visible, feats):
            shape[k - 1, :4] = refine_box(model.refiner, k, f, shape[k - 1, :4], W, H)
    return Structure(structure.coefficients, shape)


def confidence_maps(model: ParsingModel, structure: Structure, dims: tuple[int, int], scale: tuple[float, float]):
    """Morphed maps of labels 1..K on a canvas ``dims``; boxes are scaled by ``scale`` = (sx, sy)."""
    sx, sy = scale
    maps, degenerate = [], []
    for k in range(1, model.K + 1):
        d = model.dicts[k]
        x, y, w, h, v = structure.shape[k - 1]
        if not d.present:
            v = 0.0
        mask = d.reconstruct(structure.coefficients[k - 1]) if v >= VISIBILITY_THRESHOLD else np.zeros((d.r_h, d.r_w))
        cmap = morph_mask(mask, (x * sx, y * sy, w * sx, h * sy, v), dims, k)
        if cmap.degenerate:
            degenerate.append(k)
        maps.append(cmap.values)
    return maps, degenerate


def fuse(image: np.ndarray, fg_maps, seg: SegmentationParams | None = SegmentationParams()) -> tuple[np.ndarray, np.ndarray]:
    """Background map from colour seeds, then Eq.-style super-pixel vote (or per-pixel argmax when ``seg`` is None)."""
    c_f = foreground_confidence(fg_maps)
    c_0 = background_confidence(image, generate_seeds(c_f))
    maps = np.stack([c_0.values] + list(fg_maps))
    if seg is None:
        return pixel_argmax(maps), maps
    spmap = felzenszwalb_segment(image, seg.k, seg.min_size, seg.sigma)
    return superpixel_smooth(maps, spmap), maps


def parse_image(
    model: ParsingModel,
    image: np.ndarray,
    box,
    seg: SegmentationParams | None = SegmentationParams(),
    refine: bool = True,
    enlarge: float = ENLARGE,
) -> ParseResult:
    """Label map for a full uint8 RGB frame given the person box (x, y, w, h).

    Pixels outside the enlarged box are background.
    """
    image = np.asarray(image, dtype=np.uint8)
    H, W = image.shape[:2]
    x0, y0, x1, y1 = crop_rect(box, enlarge, W, H)
    window = image[y0:y1, x0:x1]
    in_w, in_h = model.input_size
    crop = resize_nearest(window, in_w, in_h)
    structure = predict_structure(model.template_net, model.shape_net, crop, model.dicts, model.shape_norm)
    if refine:
        structure = refine_structure(model, crop, structure)
    scale = ((x1 - x0) / in_w, (y1 - y0) / in_h)
    fg_maps, degenerate = confidence_maps(model, structure, (y1 - y0, x1 - x0), scale)
    crop_labels, maps = fuse(window, fg_maps, seg)
    labels = np.zeros((H, W), dtype=np.uint8)
    labels[y0:y1, x0:x1] = crop_labels
    return ParseResult(labels, (x0, y0, x1, y1), structure, maps, degenerate)


def upperbound_parse(sample: Sample, dicts: DictionarySet, seg: SegmentationParams | None = SegmentationParams()) -> np.ndarray:
    """Parse with the true structure: every present mask is encoded, reconstructed
    from its codes and placed in its true box, then fused like a prediction.

    This measures how much the template representation alone loses.
    """
    H, W = sample.labels.shape
    maps = []
    for k, m in extract_label_masks(sample.labels, dicts.K).items():
        d = dicts[k]
        if m is None or not d.present:
            maps.append(np.zeros((H, W)))
            continue
        rec = d.reconstruct(d.encode(resize_mask(m.values, d.r_w, d.r_h)))
        maps.append(morph_mask(rec, (*m.box, 1.0), (H, W), k).values)
    return fuse(sample.image, maps, seg)[0]


def person_box(sample: Sample):
    if sample.box is not None:
        return sample.box
    return foreground_box(sample.labels) or (0, 0, sample.width, sample.height)


# ---------------------------------------------------------------------------
# training recipe


@dataclass
class FitConfig:
    K: int = PALETTE.K
    M: int = 50
    lam: float = 1e-3
    variant: str = "nmf_l2"
    r_w: int = 100
    r_h: int = 100
    dict_epochs: int = 20
    scale: str = "desk"
    template: TrainConfig = field(default_factory=TrainConfig)
    shape: TrainConfig = field(default_factory=TrainConfig)
    refine_ridge: float = 1.0
    seed: int = 0


def training_crops(samples, input_size=(64, 64), enlarge: float = ENLARGE) -> list[Sample]:
    """Person crops at ``input_size``, or at native resolution when it is None."""
    return [crop_person(s, person_box(s), enlarge, input_size) for s in samples]


def augmented_set(samples, input_size=(64, 64)) -> list[Sample]:
    out = []
    for s in samples:
        if s.box is None:
            s = Sample(s.image, s.labels, person_box(s))
        out.extend(augment(s, size=input_size))
    return out


def fit_dictionaries(crops, config: FitConfig, progress=None) -> DictionarySet:
    """Dictionaries from the crops' label maps together with their mirror images."""
    maps = [c.labels for c in crops] + [reflect(c).labels for c in crops]
    return learn_dictionaries(
        maps, config.K, config.M, config.lam, config.variant, config.r_w, config.r_h,
        epochs=config.dict_epochs, seed=config.seed, progress=progress,
    )  # fmt: skip


def fit_refiners(shape_net, crops, dicts_K: int, norm: ShapeNormalizer, ridge: float) -> BoxRefiner:
    """Pairs of (predicted, true) boxes on the training crops feed the per-label refiners."""
    F = feature_size(shape_net)
    pairs = []
    for c in crops:
        out = shape_net.forward(prepare_input(c.image), keep_cache=False)
        pred = norm.denormalize(ShapeParams(out.astype(np.float64).reshape(dicts_K, 5), "normalized")).values
        true, present = raw_boxes(c.labels, dicts_K)
        labels = [k for k in range(1, dicts_K + 1) if present[k - 1] and pred[k - 1, 2] > 0 and pred[k - 1, 3] > 0]
        if not labels:
            continue
        feats = refinement_features(shape_net, c.image, [pred[k - 1, :4] for k in labels])
        pairs.extend((k, f, pred[k - 1, :4], true[k - 1]) for k, f in zip(labels, feats))
    return fit_box_refiners(pairs, dicts_K, F, ridge)


@dataclass
class FitResult:
    model: ParsingModel
    template_losses: list[float]
    shape_losses: list[float]


def template_targets(label_maps, dicts: DictionarySet) -> np.ndarray:
    """Flat normalized coefficient targets (n, K*M); absent labels are zeros."""
    return np.asarray([dicts.normalized_targets(m)[0].ravel() for m in label_maps], dtype=np.float32)


def shape_targets(label_maps, K: int) -> tuple[np.ndarray, ShapeNormalizer]:
    """Fit the per-label box normalizer on ``label_maps`` and return the flat (n, 5K) targets."""
    label_maps = list(label_maps)
    boxes, present = zip(*(raw_boxes(m, K) for m in label_maps))
    norm = fit_shape_normalizer(np.stack(boxes), np.stack(present))
    # the checkpoint stores 32-bit reals; round now so training and inference agree
    norm = ShapeNormalizer(norm.mean.astype(np.float32).astype(np.float64), norm.std.astype(np.float32).astype(np.float64))
    return make_shape_targets(label_maps, K, norm), norm


def train_template_net(samples, dicts: DictionarySet, config: TrainConfig, scale: str = "desk", seed: int = 0, progress=None):
    net = build_template_net(scale, dicts.K, dicts.M, seed=seed)
    size = (net.input_shape[2], net.input_shape[1])
    aug = augmented_set(samples, size)
    targets = template_targets([a.labels for a in aug], dicts)
    log.info("training template net on %d crops", len(aug))
    return train(net, np.stack([a.image for a in aug]), targets, config, progress=progress)


def train_shape_net(samples, K: int, config: TrainConfig, scale: str = "desk", seed: int = 1, ridge: float = 1.0, progress=None):
    """Shape regressor plus its box normalizer and refiners (kept as extra checkpoint blocks)."""
    net = build_shape_net(scale, K, seed=seed)
    size = (net.input_shape[2], net.input_shape[1])
    aug = augmented_set(samples, size)
    targets, norm = shape_targets([a.labels for a in aug], K)
    log.info("training shape net on %d crops", len(aug))
    result = train(net, np.stack([a.image for a in aug]), targets, config, progress=progress)
    refiner = fit_refiners(net, training_crops(samples, size), K, norm, ridge)
    attach_shape_extras(net, norm, refiner)
    return result


def fit_models(samples, config: FitConfig | None = None, progress=None) -> FitResult:
    """Learn dictionaries, both regressors and the box refiners from full-frame samples."""
    config = config or FitConfig()
    samples = list(samples)
    if not samples:
        raise ValueError("no training samples")
    dicts = fit_dictionaries(training_crops(samples, None), config)
    t_res = train_template_net(samples, dicts, config.template, config.scale, config.seed, progress)
    s_res = train_shape_net(samples, config.K, config.shape, config.scale, config.seed + 1, config.refine_ridge, progress)
    norm, refiner = shape_extras(s_res.net)
    return FitResult(ParsingModel(t_res.net, s_res.net, dicts, norm, refiner), t_res.losses, s_res.losses)


def positional_baseline(label_maps, K: int) -> np.ndarray:
    """Most frequent label at every pixel position over equally sized maps (ties -> lowest label)."""
    stack = np.stack([np.asarray(m) for m in label_maps])
    n, H, W = stack.shape
    counts = np.zeros((K + 1, H, W), dtype=np.int64)
    for k in range(K + 1):
        counts[k] = (stack == k).sum(axis=0)
    return np.argmax(counts, axis=0).astype(np.uint8)


def save_model(model: ParsingModel, dict_path, template_path, shape_path) -> None:
    save_dictionaries(model.dicts, dict_path)
    engine.save_checkpoint(model.template_net, template_path)
    engine.save_checkpoint(model.shape_net, shape_path)


def overlay(image: np.ndarray, labels: np.ndarray, alpha: float = 0.5, palette=PALETTE) -> np.ndarray:
    colors = palette.colors().astype(np.float64)
    blend = (1 - alpha) * image.astype(np.float64) + alpha * colors[labels]
    blend[labels == 0] = image[labels == 0]
    return np.round(blend).astype(np.uint8)

