"""Per-label mask template dictionaries.

Binary label masks are cropped to their bounding rectangle, resampled onto a
fixed ``r_h x r_w`` grid and factorised as ``b ~ D @ alpha`` with ``D >= 0``,
``alpha >= 0`` and unit-bounded columns. Learning follows the online scheme of
alternating a coefficient step on a mini-batch with a block-coordinate pass
over the dictionary columns driven by the accumulated sufficient statistics.
The per-sample codes are kept, so the statistics always describe the current
codes and the full objective never increases.

A PCA dictionary (mean + principal directions) and an l1-penalised variant are
provided for comparison.
"""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field

import numba
import numpy as np

from .imaging import resize_bilinear

log = logging.getLogger(__name__)

VARIANTS = ("nmf_l2", "nmf_l1", "pca")
CD_TOL = 1e-8
CD_MAX_SWEEPS = 10_000


class DegenerateLabelError(ValueError):
    """The coefficients of a label have zero spread and cannot be normalised."""


@dataclass(frozen=True)
class BinaryMask:
    values: np.ndarray  # (height, width) uint8 in {0, 1}
    box: tuple[int, int, int, int]  # x, y, width, height in the source image

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class Coefficients:
    label: int
    values: np.ndarray
    space: str = "raw"  # "raw" or "normalized"


def label_boxes(label_map: np.ndarray, K: int) -> dict[int, tuple[int, int, int, int] | None]:
    """Tight bounding rectangle (x, y, w, h) of each label 1..K, or None when absent."""
    label_map = np.asarray(label_map)
    boxes: dict[int, tuple[int, int, int, int] | None] = {}
    present = np.bincount(label_map.ravel(), minlength=K + 1)
    for k in range(1, K + 1):
        if present[k] == 0:
            boxes[k] = None
            continue
        rows = np.flatnonzero((label_map == k).any(axis=1))
        cols = np.flatnonzero((label_map == k).any(axis=0))
        boxes[k] = (int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))
    return boxes


def extract_label_masks(label_map: np.ndarray, K: int) -> dict[int, BinaryMask | None]:
    label_map = np.asarray(label_map)
    masks: dict[int, BinaryMask | None] = {}
    for k, box in label_boxes(label_map, K).items():
        if box is None:
            masks[k] = None
            continue
        x, y, w, h = box
        masks[k] = BinaryMask((label_map[y : y + h, x : x + w] == k).astype(np.uint8), box)
    return masks


def resize_mask(mask: BinaryMask | np.ndarray, r_w: int, r_h: int) -> np.ndarray:
    """Bilinear resample of a cropped mask onto an ``r_h x r_w`` grid (values in [0, 1])."""
    if r_w < 1 or r_h < 1:
        raise ValueError("target size must be at least 1x1")
    values = mask.values if isinstance(mask, BinaryMask) else mask
    return np.clip(resize_bilinear(values, r_w, r_h), 0.0, 1.0)


# ---------------------------------------------------------------------------
# coefficient solver


@numba.njit(cache=True)
def _cd_batch(G, C, alpha, l1, tol, max_sweeps):
    # minimise 0.5 a'Ga - c'a + l1*sum(a)  s.t. a >= 0, one row of C/alpha per sample
    n, M = C.shape
    sweeps_used = 0
    grad = np.empty(M)
    for s in range(n):
        a = alpha[s]
        for j in range(M):
            acc = -C[s, j]
            for l in range(M):
                acc += G[j, l] * a[l]
            grad[j] = acc
        for sweep in range(max_sweeps):
            biggest = 0.0
            for j in range(M):
                gjj = G[j, j]
                if gjj <= 0.0:
                    continue
                new = a[j] - (grad[j] + l1) / gjj
                if new < 0.0:
                    new = 0.0
                delta = new - a[j]
                if delta != 0.0:
                    a[j] = new
                    for l in range(M):
                        grad[l] += delta * G[l, j]
                    if abs(delta) > biggest:
                        biggest = abs(delta)
            if biggest < tol:
                if sweep + 1 > sweeps_used:
                    sweeps_used = sweep + 1
                break
        else:
            sweeps_used = max_sweeps
    return sweeps_used


def solve_codes(D: np.ndarray, X: np.ndarray, lam: float, penalty: str = "l2", init: np.ndarray | None = None) -> np.ndarray:
    """Non-negative codes for the rows of ``X`` by projected coordinate descent.

    ``penalty="l2"`` solves  min 1/2||b - D a||^2 + lam ||a||^2,
    ``penalty="l1"`` solves  min 1/2||b - D a||^2 + lam ||a||_1,  both with a >= 0.
    Coordinates are swept in index order until the largest update of a sweep
    drops below 1e-8 (or 10 000 sweeps).
    """
    D = np.asarray(D, dtype=np.float64)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    G = D.T @ D
    if penalty == "l2":
        G = G + 2.0 * lam * np.eye(D.shape[1])
        l1 = 0.0
    elif penalty == "l1":
        l1 = float(lam)
    else:
        raise ValueError(f"unknown penalty {penalty!r}")
    C = X @ D
    alpha = np.zeros_like(C) if init is None else np.array(init, dtype=np.float64, copy=True)
    _cd_batch(G, C, alpha, l1, CD_TOL, CD_MAX_SWEEPS)
    return alpha


# ---------------------------------------------------------------------------


@dataclass
class TemplateDictionary:
    label: int
    atoms: np.ndarray  # (Z, M)
    r_w: int
    r_h: int
    variant: str = "nmf_l2"
    lam: float = 1e-3
    mu: np.ndarray | None = None
    sigma: float | None = None
    present: bool = True
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def M(self) -> int:
        return self.atoms.shape[1]

    @property
    def Z(self) -> int:
        return self.atoms.shape[0]

    def encode(self, masks: np.ndarray, lam: float | None = None, init: np.ndarray | None = None) -> np.ndarray:
        """Raw codes for one flattened mask (Z,) or a stack (n, Z)."""
        masks = np.asarray(masks, dtype=np.float64)
        single = masks.ndim == 1 or masks.shape == (self.r_h, self.r_w)
        X = masks.reshape(-1, self.Z)
        lam = self.lam if lam is None else lam
        if not self.present:
            codes = np.zeros((X.shape[0], self.M))
        elif self.variant == "pca":
            codes = (X - self.atoms[:, 0]) @ self.atoms
            codes[:, 0] = 1.0
        else:
            codes = solve_codes(self.atoms, X, lam, "l1" if self.variant == "nmf_l1" else "l2", init)
        return codes[0] if single else codes

    def reconstruct(self, codes: np.ndarray) -> np.ndarray:
        """clamp(D @ alpha, 0, 1) for raw codes (M,) -> (r_h, r_w) or (n, M) -> (n, r_h, r_w)."""
        codes = np.asarray(codes, dtype=np.float64)
        single = codes.ndim == 1
        codes = np.atleast_2d(codes)
        if self.variant == "pca":
            codes = codes.copy()
            codes[:, 0] = 1.0
        out = np.clip(codes @ self.atoms.T, 0.0, 1.0).reshape(-1, self.r_h, self.r_w)
        return out[0] if single else out

    def normalize(self, codes: np.ndarray) -> np.ndarray:
        self._require_normalizer()
        return (np.asarray(codes, dtype=np.float64) - self.mu) / self.sigma

    def denormalize(self, codes: np.ndarray) -> np.ndarray:
        self._require_normalizer()
        return np.asarray(codes, dtype=np.float64) * self.sigma + self.mu

    def _require_normalizer(self):
        if self.mu is None or self.sigma is None:
            raise RuntimeError(f"label {self.label}: normalizer not fitted")


def objective(D: np.ndarray, X: np.ndarray, codes: np.ndarray, lam: float, penalty: str = "l2") -> float:
    """(1/n) sum_i 1/2 ||b_i - D a_i||^2 + lam * penalty(a_i)."""
    R = X - codes @ D.T
    data = 0.5 * np.einsum("ij,ij->", R, R)
    reg = np.sum(codes * codes) if penalty == "l2" else np.sum(np.abs(codes))
    return float((data + lam * reg) / X.shape[0])


def _project_column(u: np.ndarray) -> np.ndarray:
    u = np.maximum(u, 0.0)
    nrm = np.sqrt(u @ u)
    return u / nrm if nrm > 1.0 else u


def _readonly(a: np.ndarray) -> np.ndarray:
    view = a.view()
    view.flags.writeable = False
    return view


def learn_dictionary(
    masks: np.ndarray,
    M: int,
    lam: float = 1e-3,
    variant: str = "nmf_l2",
    epochs: int = 20,
    batch: int = 64,
    seed: int = 0,
    r_w: int | None = None,
    r_h: int | None = None,
    label: int = 0,
    on_epoch=None,
) -> TemplateDictionary:
    """Learn an ``M``-atom dictionary from normalised masks ``(n, r_h, r_w)`` or ``(n, Z)``.

    The objective after every epoch is stored in ``history`` (entry 0 is the
    value before learning, with all codes at zero). ``on_epoch(epoch, atoms,
    codes)`` is called after each epoch with read-only views.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    masks = np.asarray(masks, dtype=np.float64)
    if masks.size == 0 or masks.shape[0] == 0:
        raise ValueError("no masks to learn from")
    if masks.ndim == 3:
        r_h, r_w = masks.shape[1:]
    elif r_w is None or r_h is None:
        raise ValueError("flattened masks need r_w and r_h")
    X = masks.reshape(masks.shape[0], -1)
    n, Z = X.shape
    if variant == "pca":
        if M > n:
            raise ValueError(f"pca needs M <= sample count ({M} > {n})")
        mean = X.mean(axis=0)
        _, _, Vt = np.linalg.svd(X - mean, full_matrices=False)
        atoms = np.zeros((Z, M))
        atoms[:, 0] = mean
        k = min(M - 1, Vt.shape[0])
        atoms[:, 1 : 1 + k] = Vt[:k].T
        return TemplateDictionary(label, atoms, r_w, r_h, "pca", lam)
    if lam <= 0:
        raise ValueError("lambda must be positive for nmf variants")
    penalty = "l1" if variant == "nmf_l1" else "l2"
    rng = np.random.default_rng(seed)

    # initial atoms: distinct training masks, padded with uniform noise
    _, distinct = np.unique(X, axis=0, return_index=True)
    pick = np.sort(distinct)[rng.permutation(distinct.size)[:M]]
    D = np.empty((Z, M))
    D[:, : pick.size] = X[pick].T
    if pick.size < M:
        D[:, pick.size :] = rng.uniform(0.0, 1.0, size=(Z, M - pick.size))
    for j in range(M):
        nrm = np.linalg.norm(D[:, j])
        D[:, j] = D[:, j] / nrm if nrm > 0 else rng.uniform(0.0, 1.0, Z) / np.sqrt(Z)

    codes = np.zeros((n, M))
    A = np.zeros((M, M))
    B = np.zeros((Z, M))
    history = [objective(D, X, codes, lam, penalty)]
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            old = codes[idx]
            new = solve_codes(D, X[idx], lam, penalty, init=old)
            A += new.T @ new - old.T @ old
            B += X[idx].T @ (new - old)
            codes[idx] = new
            for j in range(M):
                if A[j, j] <= 1e-12:
                    continue
                u = D[:, j] + (B[:, j] - D @ A[:, j]) / A[j, j]
                D[:, j] = _project_column(u)
        # refresh the statistics to shed round-off from the incremental updates
        A = codes.T @ codes
        B = X.T @ codes
        history.append(objective(D, X, codes, lam, penalty))
        log.debug("label %d epoch %d objective %.6f", label, epoch + 1, history[-1])
        if on_epoch is not None:
            on_epoch(epoch + 1, _readonly(D), _readonly(codes))
    d = TemplateDictionary(label, D, r_w, r_h, variant, lam)
    d.history = history
    d.train_codes = codes
    return d


# ---------------------------------------------------------------------------
# coefficient normalisation


def fit_normalizer(codes: np.ndarray) -> tuple[np.ndarray, float]:
    """Mean vector and scalar spread sqrt(mean_i ||a_i - mu||^2)."""
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim != 2 or codes.shape[0] < 2:
        raise ValueError("the normalizer needs at least two samples")
    mu = codes.mean(axis=0)
    sigma = float(np.sqrt(np.mean(np.sum((codes - mu) ** 2, axis=1))))
    if sigma == 0.0:
        raise DegenerateLabelError("all coefficient vectors are identical")
    return mu, sigma


def normalize(d: TemplateDictionary, c: Coefficients) -> Coefficients:
    if c.space != "raw":
        raise ValueError("coefficients are already normalized")
    return Coefficients(c.label, d.normalize(c.values), "normalized")


def denormalize(d: TemplateDictionary, c: Coefficients) -> Coefficients:
    if c.space != "normalized":
        raise ValueError("coefficients are not normalized")
    return Coefficients(c.label, d.denormalize(c.values), "raw")


def encode_mask(d: TemplateDictionary, mask: np.ndarray, lam: float | None = None) -> Coefficients:
    mask = np.asarray(mask, dtype=np.float64).reshape(-1)
    if mask.size != d.Z:
        raise ValueError(f"mask has {mask.size} values, dictionary expects {d.Z}")
    return Coefficients(d.label, d.encode(mask, lam), "raw")


def reconstruct_mask(d: TemplateDictionary, c: Coefficients) -> np.ndarray:
    if c.space != "raw":
        raise ValueError("reconstruction needs raw-space coefficients")
    return d.reconstruct(c.values)


# ---------------------------------------------------------------------------
# the per-label collection and its file format


@dataclass
class DictionarySet:
    dictionaries: list[TemplateDictionary]  # index k-1 holds label k
    r_w: int
    r_h: int
    variant: str
    lam: float

    @property
    def K(self) -> int:
        return len(self.dictionaries)

    @property
    def M(self) -> int:
        return self.dictionaries[0].M

    def __getitem__(self, label: int) -> TemplateDictionary:
        return self.dictionaries[label - 1]

    def normalized_targets(self, label_map: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(K, M) normalised codes of every label in ``label_map`` (zeros when absent) and presence flags."""
        masks = extract_label_masks(label_map, self.K)
        out = np.zeros((self.K, self.M))
        present = np.zeros(self.K, dtype=bool)
        for k, mask in masks.items():
            d = self[k]
            if mask is None or not d.present:
                continue
            out[k - 1] = d.normalize(d.encode(resize_mask(mask, self.r_w, self.r_h)))
            present[k - 1] = True
        return out, present


def placeholder_dictionary(label: int, M: int, r_w: int, r_h: int, variant: str, lam: float) -> TemplateDictionary:
    """Stand-in for a label never seen in training: zero atoms, zero mean, unit spread."""
    return TemplateDictionary(label, np.zeros((r_w * r_h, M)), r_w, r_h, variant, lam, np.zeros(M), 1.0, present=False)


def learn_dictionaries(
    label_maps,
    K: int,
    M: int = 50,
    lam: float = 1e-3,
    variant: str = "nmf_l2",
    r_w: int = 100,
    r_h: int = 100,
    epochs: int = 20,
    batch: int = 64,
    seed: int = 0,
    progress=None,
) -> DictionarySet:
    """Learn one dictionary and coefficient normalizer per label from ground-truth maps."""
    per_label: list[list[np.ndarray]] = [[] for _ in range(K)]
    count = 0
    for label_map in label_maps:
        count += 1
        for k, mask in extract_label_masks(label_map, K).items():
            if mask is not None:
                per_label[k - 1].append(resize_mask(mask, r_w, r_h))
    if count == 0:
        raise ValueError("no label maps given")
    dictionaries = []
    for k in range(1, K + 1):
        masks = per_label[k - 1]
        if not masks:
            log.warning("label %d never occurs; storing a placeholder dictionary", k)
            dictionaries.append(placeholder_dictionary(k, M, r_w, r_h, variant, lam))
            continue
        X = np.stack(masks)
        if variant == "pca" and X.shape[0] < M:
            d = learn_dictionary(X, X.shape[0], lam, variant, epochs, batch, seed + k, label=k)
            d.atoms = np.hstack([d.atoms, np.zeros((d.Z, M - X.shape[0]))])
        else:
            d = learn_dictionary(X, M, lam, variant, epochs, batch, seed + k, label=k)
        codes = d.encode(X.reshape(X.shape[0], -1), init=getattr(d, "train_codes", None))
        try:
            d.mu, d.sigma = fit_normalizer(codes)
        except ValueError as exc:
            log.warning("label %d: %s; using unit spread", k, exc)
            d.mu, d.sigma = codes.mean(axis=0), 1.0
        dictionaries.append(d)
        if progress is not None:
            progress(k, d)
    return DictionarySet(dictionaries, r_w, r_h, variant, lam)


_DICT_MAGIC = "ATRD 1"


def dumps_dictionaries(ds: DictionarySet) -> bytes:
    header = [
        _DICT_MAGIC,
        f"K {ds.K}",
        f"M {ds.M}",
        f"rw {ds.r_w}",
        f"rh {ds.r_h}",
        f"variant {ds.variant}",
        f"lambda {ds.lam!r}",
        "present " + " ".join("1" if d.present else "0" for d in ds.dictionaries),
        "end",
    ]
    buf = io.BytesIO()
    buf.write(("\n".join(header) + "\n").encode("ascii"))
    le = np.dtype("<f4")
    for d in ds.dictionaries:
        buf.write(np.asarray(d.mu).astype(le).tobytes())
        buf.write(np.array([d.sigma]).astype(le).tobytes())
        buf.write(d.atoms.ravel(order="F").astype(le).tobytes())
    return buf.getvalue()


def save_dictionaries(ds: DictionarySet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_dictionaries(ds))


def loads_dictionaries(data: bytes) -> DictionarySet:
    end = data.find(b"\nend\n")
    if not data.startswith(_DICT_MAGIC.encode()) or end < 0:
        raise ValueError("not an ATRD dictionary file")
    fields = {}
    for line in data[:end].decode("ascii").splitlines()[1:]:
        key, _, value = line.partition(" ")
        fields[key] = value
    K, M = int(fields["K"]), int(fields["M"])
    r_w, r_h = int(fields["rw"]), int(fields["rh"])
    variant, lam = fields["variant"], float(fields["lambda"])
    present = [tok == "1" for tok in fields.get("present", " ".join(["1"] * K)).split()]
    body = np.frombuffer(data, dtype="<f4", offset=end + 5).astype(np.float64)
    Z = r_w * r_h
    per = M + 1 + Z * M
    if body.size != K * per:
        raise ValueError(f"dictionary body has {body.size} values, expected {K * per}")
    dictionaries = []
    for k in range(K):
        chunk = body[k * per : (k + 1) * per]
        atoms = chunk[M + 1 :].reshape((Z, M), order="F")
        dictionaries.append(
            TemplateDictionary(k + 1, atoms, r_w, r_h, variant, lam, chunk[:M].copy(), float(chunk[M]), present[k])
        )
    return DictionarySet(dictionaries, r_w, r_h, variant, lam)


def load_dictionaries(path) -> DictionarySet:
    with open(path, "rb") as fh:
        return loads_dictionaries(fh.read())
