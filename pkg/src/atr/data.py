"""Samples, label palettes, dataset directories, person cropping, augmentation
and a procedural generator of labelled human figures."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .imaging import resize_nearest

LABEL_NAMES = (
    "background",
    "face",
    "sunglass",
    "hat",
    "scarf",
    "hair",
    "upper-clothes",
    "left-arm",
    "right-arm",
    "belt",
    "pants",
    "left-leg",
    "right-leg",
    "skirt",
    "left-shoe",
    "right-shoe",
    "bag",
    "dress",
)
PARTNERS = (("left-arm", "right-arm"), ("left-leg", "right-leg"), ("left-shoe", "right-shoe"))


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class LabelPalette:
    names: tuple[str, ...] = LABEL_NAMES
    partners: tuple[tuple[str, str], ...] = PARTNERS

    @property
    def K(self) -> int:
        return len(self.names) - 1

    def index(self, name: str) -> int:
        return self.names.index(name)

    def partner_of(self, label: int) -> int:
        name = self.names[label]
        for a, b in self.partners:
            if name == a:
                return self.index(b)
            if name == b:
                return self.index(a)
        return label

    def swap_table(self) -> np.ndarray:
        """Lookup table mapping every label to its left/right partner (or itself)."""
        table = np.arange(256, dtype=np.uint8)
        for k in range(len(self.names)):
            table[k] = self.partner_of(k)
        return table

    def colors(self) -> np.ndarray:
        """Fixed overlay colour per label, background black."""
        rng = np.random.default_rng(1234)
        cols = rng.integers(40, 256, size=(len(self.names), 3)).astype(np.uint8)
        cols[0] = 0
        return cols


PALETTE = LabelPalette()


@dataclass
class Sample:
    image: np.ndarray  # (H, W, 3) uint8
    labels: np.ndarray  # (H, W) uint8
    box: tuple[float, float, float, float] | None = None  # person box x, y, w, h

    def __post_init__(self):
        if self.image.shape[:2] != self.labels.shape:
            raise DatasetError(f"image {self.image.shape[:2]} and labels {self.labels.shape} differ in size")

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]


def foreground_box(labels: np.ndarray) -> tuple[int, int, int, int] | None:
    """Tight box around all non-background pixels."""
    rows = np.flatnonzero((labels > 0).any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero((labels > 0).any(axis=0))
    return (int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))


# ---------------------------------------------------------------------------
# files


def save_label_map(labels: np.ndarray, path) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.dtype != np.uint8:
        raise DatasetError("label maps are 2-D uint8 arrays")
    Image.fromarray(np.ascontiguousarray(labels, dtype=np.uint8)).save(path)


def load_label_map(path, K: int = PALETTE.K) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("L", "P"):
            raise DatasetError(f"{path}: label maps must be 8-bit single channel, got mode {im.mode}")
        labels = np.array(im, dtype=np.uint8)
    if labels.max(initial=0) > K:
        raise DatasetError(f"{path}: label value {int(labels.max())} exceeds K={K}")
    return labels


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im.convert("RGB"), dtype=np.uint8)


def save_image(image: np.ndarray, path) -> None:
    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8)).save(path)


def load_sample(image_path, labels_path, K: int = PALETTE.K) -> Sample:
    image = load_image(image_path)
    labels = load_label_map(labels_path, K)
    if image.shape[:2] != labels.shape:
        raise DatasetError(f"{image_path} is {image.shape[1]}x{image.shape[0]} but {labels_path} is {labels.shape[1]}x{labels.shape[0]}")
    return Sample(image, labels, foreground_box(labels))


def save_dataset(samples, root, palette: LabelPalette = PALETTE) -> list[str]:
    """Write ``images/NNN.png``, ``labels/NNN.png``, ``palette.txt`` and ``boxes.txt``."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    samples = list(samples)
    width = max(3, len(str(len(samples) - 1)))
    names, box_lines = [], []
    for i, s in enumerate(samples):
        name = f"{i:0{width}d}"
        save_image(s.image, root / "images" / f"{name}.png")
        save_label_map(s.labels, root / "labels" / f"{name}.png")
        if s.box is not None:
            box_lines.append(f"{name} " + " ".join(f"{v:g}" for v in s.box))
        names.append(name)
    (root / "palette.txt").write_text("\n".join(palette.names) + "\n")
    (root / "boxes.txt").write_text("\n".join(box_lines) + ("\n" if box_lines else ""))
    return names


def read_palette(root) -> LabelPalette:
    path = Path(root) / "palette.txt"
    if not path.exists():
        return PALETTE
    names = tuple(line.strip() for line in path.read_text().splitlines() if line.strip())
    partners = tuple(p for p in PARTNERS if p[0] in names and p[1] in names)
    return LabelPalette(names, partners)


def dataset_names(root) -> list[str]:
    root = Path(root)
    images = {p.stem for p in (root / "images").glob("*.png")}
    labels = {p.stem for p in (root / "labels").glob("*.png")}
    missing = sorted(images ^ labels)
    if missing:
        raise DatasetError("unpaired files: " + ", ".join(missing))
    return sorted(images)


def load_dataset(root, K: int | None = None) -> tuple[list[Sample], LabelPalette]:
    root = Path(root)
    if not (root / "images").is_dir() or not (root / "labels").is_dir():
        raise FileNotFoundError(f"{root} lacks images/ and labels/ directories")
    palette = read_palette(root)
    K = palette.K if K is None else K
    boxes = {}
    if (root / "boxes.txt").exists():
        for line in (root / "boxes.txt").read_text().splitlines():
            parts = line.split()
            if len(parts) == 5:
                boxes[parts[0]] = tuple(float(v) for v in parts[1:])
    samples = []
    for name in dataset_names(root):
        s = load_sample(root / "images" / f"{name}.png", root / "labels" / f"{name}.png", K)
        if name in boxes:
            s.box = boxes[name]
        samples.append(s)
    return samples, palette


# ---------------------------------------------------------------------------
# cropping and augmentation


def crop_rect(box, enlarge: float, width: int, height: int) -> tuple[int, int, int, int]:
    """Integer rectangle (x0, y0, x1, y1) of ``box`` scaled about its centre and clipped to the frame."""
    x, y, w, h = box
    cx, cy = x + w / 2.0, y + h / 2.0
    ew, eh = w * enlarge, h * enlarge
    x0 = max(0, math.floor(cx - ew / 2.0 + 1e-9))
    y0 = max(0, math.floor(cy - eh / 2.0 + 1e-9))
    x1 = min(width, math.ceil(cx + ew / 2.0 - 1e-9))
    y1 = min(height, math.ceil(cy + eh / 2.0 - 1e-9))
    if x1 <= x0 or y1 <= y0:
        raise DatasetError(f"box {tuple(box)} does not intersect the {width}x{height} frame")
    return x0, y0, x1, y1


def crop_person(sample: Sample, box=None, enlarge: float = 1.2, size: tuple[int, int] | None = (64, 64)) -> Sample:
    """Crop the enlarged person box and resize it (nearest neighbour) to ``size`` = (w, h).

    The returned sample's ``box`` is the person box in the output coordinates.
    """
    box = sample.box if box is None else box
    if box is None:
        box = foreground_box(sample.labels) or (0, 0, sample.width, sample.height)
    x0, y0, x1, y1 = crop_rect(box, enlarge, sample.width, sample.height)
    image = sample.image[y0:y1, x0:x1]
    labels = sample.labels[y0:y1, x0:x1]
    sx = sy = 1.0
    if size is not None:
        sx, sy = size[0] / (x1 - x0), size[1] / (y1 - y0)
        image = resize_nearest(image, *size)
        labels = resize_nearest(labels, *size)
    bx, by, bw, bh = box
    return Sample(np.ascontiguousarray(image), np.ascontiguousarray(labels), ((bx - x0) * sx, (by - y0) * sy, bw * sx, bh * sy))


def reflect(sample: Sample, palette: LabelPalette = PALETTE) -> Sample:
    """Horizontal mirror that also swaps left/right partner labels."""
    labels = palette.swap_table()[sample.labels[:, ::-1]]
    box = None
    if sample.box is not None:
        x, y, w, h = sample.box
        box = (sample.width - x - w, y, w, h)
    return Sample(np.ascontiguousarray(sample.image[:, ::-1]), np.ascontiguousarray(labels), box)


SHIFTS = tuple((dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dx, dy) != (0, 0))
SCALES = (1.2, 1.5, 1.8)


def augmentation_windows(
    sample: Sample, box=None, stride: int = 20, enlarge: float = 1.2
) -> list[tuple[tuple[float, float, float, float], float]]:
    """The 12 (box, enlarge) crop windows: original, 8 shifted by ``stride`` px, 3 enlarged.

    The original and shifted windows use the inference-time ``enlarge``, so
    the first scale variant (1.2) repeats the original window by default.
    """
    box = sample.box if box is None else box
    if box is None:
        raise DatasetError("augmentation needs a person box")
    x, y, w, h = box
    windows = [((x, y, w, h), enlarge)]
    for dx, dy in SHIFTS:
        nx = min(max(x + dx * stride, 1 - w), sample.width - 1)
        ny = min(max(y + dy * stride, 1 - h), sample.height - 1)
        windows.append(((nx, ny, w, h), enlarge))
    windows += [((x, y, w, h), s) for s in SCALES]
    return windows


def augment(
    sample: Sample,
    box=None,
    size: tuple[int, int] | None = (64, 64),
    stride: int = 20,
    palette: LabelPalette = PALETTE,
    enlarge: float = 1.2,
) -> list[Sample]:
    """24 training crops: the 12 windows of :func:`augmentation_windows`, each with its mirror."""
    out = []
    for win, factor in augmentation_windows(sample, box, stride, enlarge):
        crop = crop_person(sample, win, factor, size)
        out.append(crop)
        out.append(reflect(crop, palette))
    return out


# ---------------------------------------------------------------------------
# synthetic figures


@dataclass(frozen=True)
class SynthConfig:
    """Occurrence probabilities of optional items for :func:`synth_generate`."""

    p_hair: float = 0.95
    p_hat: float = 0.25
    p_sunglass: float = 0.2
    p_scarf: float = 0.15
    p_dress: float = 0.2
    p_pants: float = 0.5  # given no dress; otherwise a skirt
    p_belt: float = 0.25  # given no dress
    p_shoes: float = 0.9
    p_bag: float = 0.3
    height_range: tuple[float, float] = (0.55, 0.9)  # figure height / frame height
    noise: float = 6.0

    def label_probabilities(self, palette: LabelPalette = PALETTE) -> dict[str, float]:
        """Probability that each label shows up in a generated map."""
        no_dress = 1.0 - self.p_dress
        p = {
            "face": 1.0,
            "hair": self.p_hair,
            "hat": self.p_hat,
            "sunglass": self.p_sunglass,
            "scarf": self.p_scarf,
            "upper-clothes": no_dress,
            "dress": self.p_dress,
            "pants": no_dress * self.p_pants,
            "skirt": no_dress * (1.0 - self.p_pants),
            "belt": no_dress * self.p_belt,
            "left-arm": 1.0,
            "right-arm": 1.0,
            "left-leg": 1.0 - no_dress * self.p_pants,
            "right-leg": 1.0 - no_dress * self.p_pants,
            "left-shoe": self.p_shoes,
            "right-shoe": self.p_shoes,
            "bag": self.p_bag,
        }
        return {name: p[name] for name in palette.names[1:]}


_SKIN = np.array([[233, 196, 168], [205, 150, 115], [160, 110, 80], [110, 75, 55]])
_HAIR = np.array([[30, 25, 20], [80, 50, 25], [150, 110, 60], [200, 180, 130], [60, 60, 60]])


def _random_color(rng, avoid=(), min_dist=70.0):
    for _ in range(50):
        c = rng.integers(0, 256, size=3)
        if all(np.linalg.norm(c - np.asarray(a, dtype=float)) >= min_dist for a in avoid):
            return c
    return c


class _Canvas:
    """Draws the same polygon on the colour image and the label map."""

    def __init__(self, width, height, background):
        self.image = Image.new("RGB", (width, height), tuple(int(v) for v in background))
        self.labels = Image.new("L", (width, height), 0)
        self._di = ImageDraw.Draw(self.image)
        self._dl = ImageDraw.Draw(self.labels)

    def polygon(self, pts, label, color):
        pts = [tuple(map(float, p)) for p in pts]
        self._di.polygon(pts, fill=tuple(int(v) for v in color))
        self._dl.polygon(pts, fill=int(label))


def _ellipse(cx, cy, rx, ry, n=24):
    t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    return np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)


def _rect(x0, y0, x1, y1):
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def _limb(x0, y0, angle, length, width):
    """Quadrilateral of a limb hanging from (x0, y0), ``angle`` radians from vertical."""
    dx, dy = math.sin(angle), math.cos(angle)
    nx, ny = dy * width / 2.0, -dx * width / 2.0
    x1, y1 = x0 + dx * length, y0 + dy * length
    return np.array([[x0 + nx, y0 + ny], [x1 + nx, y1 + ny], [x1 - nx, y1 - ny], [x0 - nx, y0 - ny]])


def _segment(limb, t0, t1):
    """Sub-quad of a limb between fractions t0 and t1 of its length."""
    a0, a1, b1, b0 = limb  # a: one side, b: other side; 0 top, 1 bottom
    top_a, top_b = a0 + (a1 - a0) * t0, b0 + (b1 - b0) * t0
    bot_a, bot_b = a0 + (a1 - a0) * t1, b0 + (b1 - b0) * t1
    return np.array([top_a, bot_a, bot_b, top_b])


def _draw_figure(rng, width, height, cfg: SynthConfig, palette: LabelPalette):
    L = palette.index
    bg = rng.integers(0, 256, size=3)
    canvas = _Canvas(width, height, bg)
    fh = rng.uniform(*cfg.height_range) * height
    half_span = 0.3 * fh  # arms included
    cx = rng.uniform(half_span + 1, width - half_span - 1) if width > 2 * half_span + 2 else width / 2
    top = rng.uniform(0.06 * fh, max(0.06 * fh, height - fh - 1))
    tilt = math.radians(rng.uniform(-6, 6))
    ca, sa = math.cos(tilt), math.sin(tilt)
    pivot = np.array([cx, top + fh / 2])

    def T(pts):
        # figure units (x across, y down, both times fh) -> frame pixels, with a small tilt
        p = np.asarray(pts, dtype=float) * fh + np.array([cx, top])
        d = p - pivot
        return np.stack([pivot[0] + ca * d[:, 0] - sa * d[:, 1], pivot[1] + sa * d[:, 0] + ca * d[:, 1]], axis=1)

    skin = _SKIN[rng.integers(len(_SKIN))] + rng.integers(-10, 11, size=3)
    hair_col = _HAIR[rng.integers(len(_HAIR))]
    avoid = [bg, skin]
    draw = lambda pts, name, col: canvas.polygon(T(pts), L(name), np.clip(col, 0, 255))

    dress = rng.random() < cfg.p_dress
    pants = (not dress) and rng.random() < cfg.p_pants
    skirt = not dress and not pants
    belt = (not dress) and rng.random() < cfg.p_belt
    has_hair = rng.random() < cfg.p_hair
    hat = rng.random() < cfg.p_hat
    sunglass = rng.random() < cfg.p_sunglass
    scarf = rng.random() < cfg.p_scarf
    shoes = rng.random() < cfg.p_shoes
    bag = rng.random() < cfg.p_bag
    long_hair = rng.random() < 0.4
    sleeve = rng.uniform(0.15, 0.8)

    top_col = _random_color(rng, avoid)
    bottom_col = _random_color(rng, avoid + [top_col])

    head_y, head_rx, head_ry = 0.09, 0.062 * rng.uniform(0.9, 1.1), 0.08
    shoulder_y, shoulder_x = 0.2, 0.12 * rng.uniform(0.9, 1.1)
    waist_y, waist_x = 0.47, 0.085 * rng.uniform(0.9, 1.15)
    ankle_y = 0.93
    arm_len, arm_w = 0.36, 0.045
    arm_l = math.radians(rng.uniform(4, 35))
    arm_r = math.radians(rng.uniform(4, 35))
    leg_spread = math.radians(rng.uniform(0, 9))
    leg_len = (ankle_y - waist_y) / math.cos(leg_spread)
    leg_w = 0.075

    # image-right is the person's left side
    left_arm = _limb(shoulder_x - 0.01, shoulder_y + 0.015, arm_l, arm_len, arm_w)
    right_arm = _limb(-shoulder_x + 0.01, shoulder_y + 0.015, -arm_r, arm_len, arm_w)
    left_leg = _limb(waist_x * 0.5, waist_y, leg_spread, leg_len, leg_w)
    right_leg = _limb(-waist_x * 0.5, waist_y, -leg_spread, leg_len, leg_w)

    if has_hair and long_hair:
        draw(_rect(-head_rx * 1.25, head_y, head_rx * 1.25, head_y + rng.uniform(0.1, 0.2)), "hair", hair_col)
    bag_behind = rng.random() < 0.5
    bag_side = 1 if rng.random() < 0.5 else -1
    if not 0.25 * width < cx < 0.75 * width:
        bag_side = 1 if cx < width / 2 else -1
    hand = (left_arm if bag_side > 0 else right_arm)[1:3].mean(axis=0)
    bag_pts = _rect(hand[0] + bag_side * 0.01, hand[1] - 0.09, hand[0] + bag_side * 0.14, hand[1] + 0.05)
    bag_col = _random_color(rng, avoid)
    if bag and bag_behind:
        draw(bag_pts, "bag", bag_col)

    for leg, name in ((left_leg, "left-leg"), (right_leg, "right-leg")):
        draw(leg, name, skin)
    draw(left_arm, "left-arm", skin)
    draw(right_arm, "right-arm", skin)

    if pants:
        draw(_limb(waist_x * 0.5, waist_y, leg_spread, leg_len * 1.03, leg_w * 1.25), "pants", bottom_col)
        draw(_limb(-waist_x * 0.5, waist_y, -leg_spread, leg_len * 1.03, leg_w * 1.25), "pants", bottom_col)
        draw(_rect(-waist_x, waist_y - 0.01, waist_x, waist_y + 0.08), "pants", bottom_col)
    if skirt:
        hem = rng.uniform(0.62, 0.74)
        flare = rng.uniform(0.12, 0.18)
        draw([[-waist_x, waist_y - 0.01], [waist_x, waist_y - 0.01], [flare, hem], [-flare, hem]], "skirt", bottom_col)
    torso = [[-shoulder_x, shoulder_y], [shoulder_x, shoulder_y], [waist_x, waist_y], [-waist_x, waist_y]]
    if dress:
        hem = rng.uniform(0.66, 0.78)
        flare = rng.uniform(0.13, 0.2)
        draw(torso[:2] + [[waist_x, waist_y - 0.03], [flare, hem], [-flare, hem], [-waist_x, waist_y - 0.03]], "dress", top_col)
        sleeve_label, sleeve_col = "dress", top_col
    else:
        draw(torso, "upper-clothes", top_col)
        sleeve_label, sleeve_col = "upper-clothes", top_col
    for arm in (left_arm, right_arm):
        draw(_segment(arm, 0.0, sleeve), sleeve_label, sleeve_col)
    if belt:
        draw(_rect(-waist_x * 1.02, waist_y - 0.022, waist_x * 1.02, waist_y + 0.008), "belt", _random_color(rng, avoid + [top_col, bottom_col]))

    # head: neck and face, hair behind/above the face
    draw(_rect(-0.025, head_y + 0.06, 0.025, shoulder_y + 0.005), "face", skin)
    if has_hair:
        draw(_ellipse(0.0, head_y - 0.012, head_rx * 1.22, head_ry * 1.05), "hair", hair_col)
    draw(_ellipse(0.0, head_y + 0.008, head_rx, head_ry * 0.92), "face", skin)
    if scarf:
        sc = _random_color(rng, avoid + [top_col])
        draw(_rect(-0.07, shoulder_y - 0.025, 0.07, shoulder_y + 0.025), "scarf", sc)
        draw(_rect(0.02, shoulder_y, 0.05, shoulder_y + rng.uniform(0.08, 0.16)), "scarf", sc)
    if sunglass:
        draw(_rect(-head_rx * 0.85, head_y - 0.005, head_rx * 0.85, head_y + 0.025), "sunglass", rng.integers(0, 50, size=3))
    if hat:
        hc = _random_color(rng, avoid + [hair_col])
        draw(_rect(-head_rx * 1.45, head_y - 0.055, head_rx * 1.45, head_y - 0.03), "hat", hc)
        draw(_rect(-head_rx * 0.95, head_y - 0.12, head_rx * 0.95, head_y - 0.04), "hat", hc)
    if shoes:
        sc = _random_color(rng, avoid + [bottom_col], 50)
        for leg, name in ((left_leg, "left-shoe"), (right_leg, "right-shoe")):
            foot = leg[1:3].mean(axis=0)
            draw(_ellipse(foot[0], foot[1] + 0.005, 0.05, 0.028), name, sc)
    if bag and not bag_behind:
        draw(bag_pts, "bag", bag_col)

    image = np.asarray(canvas.image, dtype=np.float64)
    yy, xx = np.mgrid[0:height, 0:width]
    shade = rng.uniform(-25, 25) * (xx / width - 0.5) + rng.uniform(-25, 25) * (yy / height - 0.5)
    labels = np.asarray(canvas.labels, dtype=np.uint8).copy()
    image += (labels == 0)[..., None] * shade[..., None]
    image += rng.normal(0.0, cfg.noise, size=image.shape)
    image = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    return Sample(image, labels, foreground_box(labels))


def synth_generate(seed: int, n: int, dims: tuple[int, int] = (96, 128), config: SynthConfig | None = None, palette: LabelPalette = PALETTE) -> list[Sample]:
    """``n`` random figures of size ``dims`` = (width, height), reproducible from ``seed``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cfg = config or SynthConfig()
    children = np.random.SeedSequence(seed).spawn(n)
    return [_draw_figure(np.random.default_rng(c), dims[0], dims[1], cfg, palette) for c in children]
