"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Criteria 5 and 10 share one trained desk-scale model (built once per session);
criterion 4 learns its own dictionaries. Expect the whole file to take tens of
minutes on one core.
"""
import math
import time

import numpy as np
import pytest

from atr import cli, engine, nets
from atr.data import PALETTE, augment, reflect, save_image, synth_generate
from atr.dictionary import (
    TemplateDictionary,
    extract_label_masks,
    fit_normalizer,
    learn_dictionaries,
    learn_dictionary,
    resize_mask,
    solve_codes,
)
from atr.engine import RegressionNet, contrast_norm, conv, fc, maxpool, relu
from atr.evaluation import Confusion, accumulate, confusion_of, metrics
from atr.nets import ShapeParams, TrainConfig
from atr.pipeline import FitConfig, fit_models, parse_image, person_box, positional_baseline, save_model, upperbound_parse
from atr.segmentation import canonical_ids, superpixel_smooth

K = PALETTE.K

# desk-scale end-to-end recipe
E2E_TRAIN_SEED, E2E_TEST_SEED = 100, 200
E2E_TRAIN, E2E_TEST = 200, 50
E2E_EPOCHS = 20
E2E_LR = 0.01
E2E_ATOMS = 50


@pytest.fixture
def verdict(capsys):
    def emit(number: int, title: str, ok: bool, detail: str = ""):
        with capsys.disabled():
            print(f"\ncriterion {number:2d} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else ""))
        assert ok, f"criterion {number} failed: {detail}"

    return emit


# ---------------------------------------------------------------------------
# 1. architecture parity


def test_c01_architecture_parity(verdict):
    t0 = time.perf_counter()
    shape_net = nets.build_shape_net("paper", K=17, init=False)
    template_net = nets.build_template_net("paper", K=17, M=50, init=False)
    elapsed = time.perf_counter() - t0
    checks = {
        "shape conv1": shape_net.shapes[0] == (48, 111, 111),
        "shape head": shape_net.output_size == 85,
        "shape pools": shape_net.count("maxpool") == 0,
        "template head": template_net.output_size == 850,
        "template pool1": template_net.shapes[2] == (96, 55, 55),
        "runtime": elapsed < 1.0,
    }
    bad = [k for k, v in checks.items() if not v]
    verdict(1, "architecture parity", not bad, f"{elapsed * 1000:.0f} ms" + (f", mismatched: {bad}" if bad else ""))


# ---------------------------------------------------------------------------
# 2. gradient fidelity


def _instance(kind: str, rng):
    c = int(rng.integers(1, 4))
    s = int(rng.integers(5, 9))
    body = {
        "conv": [conv(int(rng.integers(2, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(0, 2)))],
        "relu": [conv(3, 3), relu()],
        "maxpool": [conv(3, 2), maxpool(int(rng.integers(2, 4)), int(rng.integers(1, 3)))],
        "contrast_norm": [conv(int(rng.integers(3, 7)), 3), contrast_norm()],
        "fully_connected": [fc(int(rng.integers(2, 7)))],
    }[kind]
    net = RegressionNet(body + [fc(int(rng.integers(1, 5)))], (c, s, s), seed=int(rng.integers(1 << 30))).init_params()
    x = rng.normal(size=(c, s, s))
    return net, x, rng.normal(size=net.output_size)


def test_c02_gradient_fidelity(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = {}
    for kind in engine.KINDS:
        errors = []
        for _ in range(20):
            net, x, target = _instance(kind, rng)
            errors.append(engine.gradcheck(net, x, target).max_error)
        worst[kind] = max(errors)
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-3 and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; 20 instances each; {elapsed:.1f} s"
    verdict(2, "gradient fidelity", ok, detail)


# ---------------------------------------------------------------------------
# 3. dictionary learning


def test_c03_dictionary_learning(verdict):
    samples = synth_generate(33, 120)
    masks = [resize_mask(m.values, 40, 40) for s in samples for k, m in extract_label_masks(s.labels, K).items() if k == 6 and m]
    violations = []

    def check(epoch, D, codes):
        if D.min() < 0 or codes.min() < 0:
            violations.append(f"negative entry after epoch {epoch}")
        if np.linalg.norm(D, axis=0).max() > 1 + 1e-9:
            violations.append(f"column norm above one after epoch {epoch}")

    d = learn_dictionary(np.stack(masks), M=10, lam=1e-3, epochs=10, batch=16, on_epoch=check)
    rises = np.diff(d.history)
    lam = 1e-3
    atom = np.zeros((30, 1))
    atom[4, 0] = 1.0
    closed = abs(solve_codes(atom, atom[:, 0], lam)[0, 0] - 1 / (1 + 2 * lam))
    ok = rises.max() <= 1e-6 and not violations and closed < 1e-6
    detail = f"largest per-epoch change {rises.max():+.2e}, invariant violations {len(violations)}, closed-form error {closed:.1e}"
    verdict(3, "dictionary learning", ok, detail)


# ---------------------------------------------------------------------------
# 4. upperbound analog


def test_c04_upperbound(verdict):
    t0 = time.perf_counter()
    samples = synth_generate(7, 500)
    dicts = learn_dictionaries([s.labels for s in samples], K, M=50, lam=1e-3, r_w=100, r_h=100, epochs=20)
    conf = Confusion(K)
    for s in samples:
        accumulate(conf, upperbound_parse(s, dicts), s.labels)
    r = metrics(conf)
    elapsed = time.perf_counter() - t0
    ok = r.accuracy >= 0.95 and r.avg_f1 >= 0.85 and elapsed < 600
    verdict(4, "upperbound analog", ok, f"accuracy {r.accuracy:.4f}, avg F1 {r.avg_f1:.4f}, {elapsed:.0f} s")


# ---------------------------------------------------------------------------
# 5. end-to-end desk run (the trained model is reused by criterion 10)


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    t0 = time.perf_counter()
    train = synth_generate(E2E_TRAIN_SEED, E2E_TRAIN)
    test = synth_generate(E2E_TEST_SEED, E2E_TEST)
    config = FitConfig(
        M=E2E_ATOMS,
        template=TrainConfig(lr=E2E_LR, epochs=E2E_EPOCHS),
        shape=TrainConfig(lr=E2E_LR, epochs=E2E_EPOCHS),
    )
    fit = fit_models(train, config)
    base_map = positional_baseline([s.labels for s in train], K)
    base, full = Confusion(K), Confusion(K)
    for s in test:
        accumulate(base, base_map, s.labels)
        accumulate(full, parse_image(fit.model, s.image, person_box(s)).labels, s.labels)
    root = tmp_path_factory.mktemp("desk")
    paths = [root / "dict.atrd", root / "template.atrn", root / "shape.atrn"]
    save_model(fit.model, *paths)
    return {
        "baseline": metrics(base),
        "pipeline": metrics(full),
        "seconds": time.perf_counter() - t0,
        "paths": paths,
        "test": test,
        "root": root,
    }


def test_c05_end_to_end(desk_run, verdict):
    b, p = desk_run["baseline"], desk_run["pipeline"]
    gain = 100 * (p.avg_f1 - b.avg_f1)
    ok = gain >= 15 and desk_run["seconds"] <= 3600
    detail = (
        f"pipeline F1 {100 * p.avg_f1:.2f} acc {100 * p.accuracy:.2f}, baseline F1 {100 * b.avg_f1:.2f} "
        f"acc {100 * b.accuracy:.2f}, gain {gain:.2f} points, {desk_run['seconds'] / 60:.1f} min"
    )
    verdict(5, "end-to-end desk run", ok, detail)


# ---------------------------------------------------------------------------
# 6. super-pixel vote equals brute-force accumulation


def _brute_vote(maps, ids):
    out = np.zeros(ids.shape, dtype=np.uint8)
    for s in np.unique(ids):
        region = ids == s
        scores = [math.fsum(m[region].tolist()) for m in maps]
        out[region] = max(range(len(scores)), key=lambda k: (scores[k], -k))
    return out


def test_c06_superpixel_vote(verdict):
    rng = np.random.default_rng(6)
    mismatches = 0
    for _ in range(100):
        n_maps = int(rng.integers(2, 8))
        maps = rng.uniform(size=(n_maps, 8, 8))
        ids = canonical_ids(rng.integers(0, int(rng.integers(1, 10)), size=(8, 8)))
        if not np.array_equal(superpixel_smooth(maps, ids), _brute_vote(maps, ids)):
            mismatches += 1
    verdict(6, "super-pixel vote equivalence", mismatches == 0, f"{mismatches} of 100 instances differ")


# ---------------------------------------------------------------------------
# 7. augmentation


def test_c07_augmentation(verdict):
    samples = synth_generate(77, 50)
    counts_ok, mirror_ok = True, True
    table = PALETTE.swap_table()
    for s in samples:
        crops = augment(s)
        counts_ok &= len(crops) == 24
        for a, b in zip(crops[0::2], crops[1::2]):
            ca = np.bincount(a.labels.ravel(), minlength=K + 1)
            cb = np.bincount(b.labels.ravel(), minlength=K + 1)
            mirror_ok &= np.array_equal(cb, ca[table[: K + 1]])
            mirror_ok &= np.array_equal(reflect(a).labels, b.labels)
    verdict(7, "augmentation", counts_ok and mirror_ok, f"24 variants: {counts_ok}, mirrored counts swap: {mirror_ok}")


# ---------------------------------------------------------------------------
# 8. metrics


def test_c08_metrics(verdict):
    r = metrics(confusion_of(np.array([[0, 1], [2, 2]]), np.array([[0, 1], [1, 2]]), 2))
    hand = r.accuracy == 0.75 and abs(r.f1[1] - 2 / 3) < 1e-15
    rng = np.random.default_rng(8)
    invariant = True
    for _ in range(50):
        gt, pred = rng.integers(0, 6, size=(2, 300))
        perm = rng.permutation(300)
        invariant &= metrics(confusion_of(pred, gt, 5)).row() == metrics(confusion_of(pred[perm], gt[perm], 5)).row()
    verdict(8, "metrics", hand and invariant, f"accuracy {r.accuracy}, F1_1 {r.f1[1]:.6f}, permutation invariant {invariant}")


# ---------------------------------------------------------------------------
# 9. normalization round trips


def test_c09_normalization_round_trips(verdict):
    rng = np.random.default_rng(9)
    codes = rng.gamma(1.0, 2.0, size=(1000, 50))
    mu, sigma = fit_normalizer(codes)
    d = TemplateDictionary(1, np.ones((4, 50)), 2, 2, mu=mu, sigma=sigma)
    coeff_err = np.abs(d.denormalize(d.normalize(codes)) - codes).max()
    boxes = rng.uniform(0, 100, size=(1000, K, 4))
    norm = nets.fit_shape_normalizer(boxes, rng.uniform(size=(1000, K)) < 0.7)
    shape_err = 0.0
    for b in boxes:
        raw = ShapeParams(np.concatenate([b, rng.uniform(size=(K, 1))], axis=1))
        back = norm.denormalize(norm.normalize(raw))
        shape_err = max(shape_err, float(np.abs(back.values - raw.values).max()))
    ok = coeff_err < 1e-6 and shape_err < 1e-6
    verdict(9, "normalization round trips", ok, f"coefficients {coeff_err:.1e}, shape parameters {shape_err:.1e}")


# ---------------------------------------------------------------------------
# 10. determinism


def test_c10_determinism(desk_run, verdict):
    root = desk_run["root"]
    sample = desk_run["test"][0]
    save_image(sample.image, root / "input.png")
    box = ",".join(f"{v:g}" for v in person_box(sample))
    d, t, s = desk_run["paths"]
    outputs = []
    for i in range(2):
        out = root / f"parse_{i}.png"
        code = cli.main(["parse", "--image", str(root / "input.png"), "--box", box, "--dict", str(d),
                         "--template-net", str(t), "--shape-net", str(s), "--out", str(out)])  # fmt: skip
        assert code == 0
        outputs.append(out.read_bytes())
    verdict(10, "determinism", outputs[0] == outputs[1], f"{len(outputs[0])} bytes each")
