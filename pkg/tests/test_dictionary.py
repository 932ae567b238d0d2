import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atr import dictionary as dic
from atr.dictionary import Coefficients, TemplateDictionary

LAM = 1e-3


def unit_atom(Z, j=0):
    d = np.zeros((Z, 1))
    d[j, 0] = 1.0
    return d


# -- masks -------------------------------------------------------------------


def test_block_mask_and_box():
    m = np.zeros((10, 12), dtype=np.uint8)
    m[2:6, 7:10] = 5  # 4 rows x 3 columns
    masks = dic.extract_label_masks(m, K=6)
    mask = masks[5]
    assert mask.values.shape == (4, 3) and mask.values.all()
    assert mask.box == (7, 2, 3, 4)
    assert masks[1] is None


def test_disconnected_regions_share_one_rectangle():
    m = np.zeros((8, 8), dtype=np.uint8)
    m[1, 1] = 4
    m[6, 5] = 4
    mask = dic.extract_label_masks(m, K=4)[4]
    assert mask.box == (1, 1, 5, 6)
    assert mask.values.sum() == 2


def test_resize_all_ones_stays_one():
    out = dic.resize_mask(np.ones((3, 7)), 100, 100)
    assert out.shape == (100, 100)
    np.testing.assert_allclose(out, 1.0)


def test_checkerboard_upscale_matches_hand_bilinear():
    board = np.array([[1.0, 0.0], [0.0, 1.0]])
    out = dic.resize_mask(board, 4, 4)
    # output centres land on input coordinates -0.25, 0.25, 0.75, 1.25 (clamped to [0, 1])
    w = np.array([[1, 0], [0.75, 0.25], [0.25, 0.75], [0, 1]])
    np.testing.assert_allclose(out, w @ board @ w.T)
    assert out[1, 1] == pytest.approx(0.75 * 0.75 + 0.25 * 0.25)


def test_atom_length_at_operating_size():
    assert dic.resize_mask(np.ones((5, 5)), 100, 100).size == 10000


def test_resize_rejects_empty_target():
    with pytest.raises(ValueError):
        dic.resize_mask(np.ones((2, 2)), 0, 3)


# -- encoding ------------------------------------------------------------------


def test_single_atom_closed_form():
    D = unit_atom(6)
    alpha = dic.solve_codes(D, D[:, 0], LAM)
    assert abs(alpha[0, 0] - 1.0 / (1.0 + 2 * LAM)) < 1e-6
    assert abs(alpha[0, 0] - 0.998004) < 1e-6
    alpha2 = dic.solve_codes(D, 2 * D[:, 0], LAM)
    assert abs(alpha2[0, 0] - 2.0 / (1.0 + 2 * LAM)) < 1e-6


def test_orthogonal_target_gives_zero_code():
    D = np.zeros((5, 2))
    D[0, 0] = D[1, 1] = 1.0
    b = np.array([0, 0, 1.0, 0, 0])
    assert not dic.solve_codes(D, b, LAM).any()


@given(seed=st.integers(0, 10_000), M=st.integers(1, 6))
@settings(max_examples=40, deadline=None)
def test_matches_ridge_solution_when_nonnegative(seed, M):
    rng = np.random.default_rng(seed)
    D = rng.uniform(0, 1, size=(30, M))
    D /= np.linalg.norm(D, axis=0)
    a_true = rng.uniform(0.5, 2.0, size=M)
    b = D @ a_true
    ridge = np.linalg.solve(D.T @ D + 2 * LAM * np.eye(M), D.T @ b)
    if (ridge < 0).any():
        return
    np.testing.assert_allclose(dic.solve_codes(D, b, LAM)[0], ridge, atol=1e-5)


def test_l1_penalty_soft_thresholds():
    D = unit_atom(4)
    alpha = dic.solve_codes(D, D[:, 0], 0.1, penalty="l1")
    assert alpha[0, 0] == pytest.approx(0.9)


# -- learning -----------------------------------------------------------------


def random_masks(n, seed=0, size=12):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        m = np.zeros((size, size))
        r0, c0 = rng.integers(0, size // 2, size=2)
        m[r0 : r0 + rng.integers(3, size // 2 + 1), c0 : c0 + rng.integers(3, size // 2 + 1)] = 1
        out.append(m)
    return np.stack(out)


@pytest.mark.parametrize("variant", ["nmf_l2", "nmf_l1"])
def test_objective_monotone_and_invariants(variant):
    X = random_masks(60, seed=1)
    d = dic.learn_dictionary(X, M=6, lam=LAM, variant=variant, epochs=8, batch=16, seed=0)
    h = np.array(d.history)
    assert len(h) == 9
    assert np.all(np.diff(h) <= 1e-6)
    assert d.atoms.min() >= 0
    assert np.linalg.norm(d.atoms, axis=0).max() <= 1 + 1e-12


def test_rank_one_data():
    m = np.zeros((10, 10))
    m[2:7, 3:9] = 1
    d = dic.learn_dictionary(np.stack([m] * 20), M=1, lam=LAM, epochs=20, batch=8)
    atom = d.atoms[:, 0]
    np.testing.assert_allclose(atom / atom.max(), m.ravel(), atol=1e-6)
    rec = d.reconstruct(d.encode(m))
    assert np.abs(rec - m).mean() < 1e-3


def test_two_disjoint_masks_two_atoms():
    a = np.zeros((8, 8))
    a[:4] = 1
    b = np.zeros((8, 8))
    b[4:] = 1
    d = dic.learn_dictionary(np.stack([a, b] * 10), M=2, lam=LAM, epochs=30, batch=4, seed=3)
    for m in (a, b):
        assert np.abs(d.reconstruct(d.encode(m)) - m).mean() < 1e-2


def test_learning_rejections():
    with pytest.raises(ValueError):
        dic.learn_dictionary(np.zeros((0, 4, 4)), M=2)
    with pytest.raises(ValueError):
        dic.learn_dictionary(random_masks(3), M=5, variant="pca")
    with pytest.raises(ValueError):
        dic.learn_dictionary(random_masks(3), M=2, lam=0.0)


def test_pca_variant_has_mean_atom():
    X = random_masks(30, seed=2)
    d = dic.learn_dictionary(X, M=5, variant="pca")
    np.testing.assert_allclose(d.atoms[:, 0], X.reshape(30, -1).mean(axis=0))
    codes = d.encode(X[0])
    assert codes[0] == 1.0
    full = dic.learn_dictionary(X, M=30, variant="pca")
    assert np.abs(full.reconstruct(full.encode(X[0])) - X[0]).max() < 1e-8


def test_reconstruction_beats_training_residual():
    X = random_masks(80, seed=4)
    d = dic.learn_dictionary(X, M=8, lam=LAM, epochs=10, batch=16, seed=1)
    train_err = np.abs(d.train_codes @ d.atoms.T - X.reshape(80, -1)).mean()
    rec = d.reconstruct(d.encode(X.reshape(80, -1)))
    assert np.abs(rec.reshape(80, -1) - X.reshape(80, -1)).mean() <= train_err + 1e-9


def test_zero_code_reconstructs_empty_mask():
    d = TemplateDictionary(1, np.ones((16, 3)) / 4, 4, 4)
    assert not d.reconstruct(np.zeros(3)).any()


# -- normalization ------------------------------------------------------------------


def test_two_sample_normalizer():
    mu, sigma = dic.fit_normalizer(np.array([[0.0], [2.0]]))
    assert mu[0] == 1.0 and sigma == 1.0
    d = TemplateDictionary(1, np.ones((4, 1)), 2, 2, mu=mu, sigma=sigma)
    np.testing.assert_array_equal(d.normalize(np.array([[0.0], [2.0]])).ravel(), [-1.0, 1.0])
    np.testing.assert_array_equal(d.denormalize(np.zeros(1)), mu)


def test_normalizer_errors():
    with pytest.raises(ValueError):
        dic.fit_normalizer(np.ones((1, 3)))
    with pytest.raises(dic.DegenerateLabelError):
        dic.fit_normalizer(np.ones((5, 3)))


@given(seed=st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_normalize_round_trips(seed):
    rng = np.random.default_rng(seed)
    codes = rng.uniform(0, 3, size=(20, 7))
    mu, sigma = dic.fit_normalizer(codes)
    d = TemplateDictionary(2, np.ones((4, 7)), 2, 2, mu=mu, sigma=sigma)
    raw = Coefficients(2, codes[0])
    there = dic.normalize(d, raw)
    back = dic.denormalize(d, there)
    np.testing.assert_allclose(back.values, codes[0], atol=1e-6)
    np.testing.assert_allclose(d.normalize(d.denormalize(codes[1])), codes[1], atol=1e-6)


def test_space_tags_are_enforced():
    d = TemplateDictionary(1, np.ones((4, 1)), 2, 2, mu=np.zeros(1), sigma=1.0)
    with pytest.raises(ValueError):
        dic.reconstruct_mask(d, Coefficients(1, np.ones(1), "normalized"))
    with pytest.raises(ValueError):
        dic.normalize(d, Coefficients(1, np.ones(1), "normalized"))
    with pytest.raises(ValueError):
        dic.denormalize(d, Coefficients(1, np.ones(1), "raw"))
    with pytest.raises(RuntimeError):
        TemplateDictionary(1, np.ones((4, 1)), 2, 2).normalize(np.ones(1))
    with pytest.raises(ValueError):
        dic.encode_mask(d, np.ones(5))


# -- collections and files ------------------------------------------------------------


def _maps(n=12, seed=0):
    rng = np.random.default_rng(seed)
    maps = []
    for _ in range(n):
        m = np.zeros((16, 16), dtype=np.uint8)
        r, c = rng.integers(0, 8, size=2)
        m[r : r + rng.integers(2, 8), c : c + rng.integers(2, 8)] = 1
        m[12:, : rng.integers(2, 16)] = 2
        maps.append(m)
    return maps


def test_learn_dictionaries_with_absent_label_and_file_round_trip(tmp_path):
    ds = dic.learn_dictionaries(_maps(), K=3, M=3, r_w=8, r_h=8, epochs=3, batch=4)
    assert ds.K == 3 and ds.M == 3
    assert ds[1].present and ds[2].present and not ds[3].present
    for d in ds.dictionaries:
        assert d.sigma > 0 and d.atoms.min() >= 0
    path = tmp_path / "d.atrd"
    dic.save_dictionaries(ds, path)
    again = dic.load_dictionaries(path)
    assert dic.dumps_dictionaries(again) == path.read_bytes()
    assert [d.present for d in again.dictionaries] == [True, True, False]
    np.testing.assert_allclose(again[1].atoms, ds[1].atoms, atol=1e-6)
    targets, present = again.normalized_targets(_maps()[0])
    assert present.tolist() == [True, True, False]
    assert not targets[2].any()


def test_dictionary_file_rejects_garbage():
    with pytest.raises(ValueError):
        dic.loads_dictionaries(b"nope")
