import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bnnprior.data import (
    ClinicalConfig,
    DecoyConfig,
    FairnessConfig,
    PendulumConfig,
    Standardizer,
    clinical_dataset,
    clinical_rule,
    decoy_dataset,
    energy_grad,
    fairness_dataset,
    integrate,
    load_dataset,
    load_idx,
    pendulum_dataset,
    pendulum_energy,
    pendulum_step,
    save_dataset,
    stratified_batches,
    train_shade,
    write_idx,
)
from bnnprior.data.container import decode_dataset, encode_dataset
from bnnprior.data.decoy import glyph_box
from bnnprior.data.idx import parse_idx
from bnnprior.errors import FormatError, InvalidConfig
from oracles import central_diff


# pendulum ---------------------------------------------------------------

def test_energy_at_rest_and_inverted():
    assert pendulum_energy([0, 0, 0, 0]) == pytest.approx(-107.91, abs=1e-9)
    assert pendulum_energy([np.pi, 0, np.pi, 0]) == pytest.approx(107.91, abs=1e-9)


def test_kinetic_energy_single_joint():
    e = pendulum_energy([0, 1, 0, 0]) - pendulum_energy([0, 0, 0, 0])
    assert e == pytest.approx(3.0, abs=1e-12)


def test_energy_grad_matches_finite_differences(rng):
    for _ in range(5):
        s = rng.uniform(-2, 2, size=4)
        num = central_diff(lambda v: float(pendulum_energy(v)), s, h=1e-6)
        np.testing.assert_allclose(energy_grad(s), num, rtol=1e-6, atol=1e-6)


def test_frictionless_energy_is_conserved():
    cfg = PendulumConfig(c1=0.0, c2=0.0, dt=1e-3)
    s0 = np.array([np.pi / 6, 0.0, np.pi / 6, 0.0])
    s = integrate(s0, 10_000, cfg)
    assert abs(pendulum_energy(s, cfg) - pendulum_energy(s0, cfg)) <= 1e-6


def test_friction_never_adds_energy():
    cfg = PendulumConfig(c1=0.05, c2=0.05, dt=1e-3)
    s = np.array([np.pi / 3, 0.5, -np.pi / 4, -0.2])
    prev = pendulum_energy(s, cfg)
    for _ in range(3000):
        s = pendulum_step(s, cfg)
        e = pendulum_energy(s, cfg)
        assert e <= prev + 1e-9
        prev = e


def test_rk4_is_fourth_order():
    # one-step error scales as h**5
    cfg = PendulumConfig(c1=0.01, c2=0.01)
    s0 = np.array([0.8, 0.0, -0.5, 0.3])
    errs = []
    for h in (0.02, 0.01, 0.005):
        ref = integrate(s0, 2000, cfg, dt=h / 2000)
        errs.append(np.abs(pendulum_step(s0, cfg, dt=h) - ref).max())
    for a, b in zip(errs, errs[1:]):
        assert 26 < a / b < 38


def test_batch_step_matches_single():
    cfg = PendulumConfig()
    S = np.array([[0.1, 0.2, 0.3, 0.4], [-1.0, 0.5, 0.7, -0.3]])
    np.testing.assert_allclose(pendulum_step(S, cfg), np.stack([pendulum_step(s, cfg) for s in S]))


def test_dataset_targets_follow_dynamics(rng):
    cfg = PendulumConfig()
    X, Y = pendulum_dataset(cfg, 3, 5, rng)
    assert X.shape == Y.shape == (15, 4)
    np.testing.assert_allclose(Y[0], integrate(X[0], cfg.steps_per_sample, cfg), atol=1e-12)
    # consecutive pairs inside a trajectory chain together
    np.testing.assert_allclose(X[1], Y[0], atol=1e-12)


def test_dataset_energy_decreases_along_trajectories(rng):
    cfg = PendulumConfig(c1=0.05, c2=0.05)
    X, Y = pendulum_dataset(cfg, 4, 30, rng)
    assert np.all(pendulum_energy(Y, cfg) <= pendulum_energy(X, cfg) + 1e-9)


def test_default_generator_never_gains_energy():
    cfg = PendulumConfig()
    X, Y = pendulum_dataset(cfg, 20, 50, np.random.default_rng(11))
    assert np.max(pendulum_energy(Y, cfg) - pendulum_energy(X, cfg)) <= 1e-9


def test_table_friction_run_is_monotone():
    cfg = PendulumConfig(dt=1e-3)
    s = np.array([np.pi / 6, 0.0, np.pi / 6, 0.0])
    prev = pendulum_energy(s, cfg)
    for _ in range(10_000):
        s = pendulum_step(s, cfg)
        e = pendulum_energy(s, cfg)
        assert e <= prev + 1e-9
        prev = e


def test_pendulum_config_validation():
    with pytest.raises(InvalidConfig):
        PendulumConfig(c1=-0.1)
    with pytest.raises(InvalidConfig):
        PendulumConfig(dt=0.0)


# decoy ------------------------------------------------------------------

@pytest.fixture(scope="module")
def decoy():
    return decoy_dataset(DecoyConfig(), 600, 600, np.random.default_rng(7))


def test_decoy_masks_are_single_patches(decoy):
    cfg = DecoyConfig()
    for split in decoy:
        assert np.all(split.masks.sum(axis=1) == cfg.patch_side ** 2)


def test_decoy_masks_avoid_glyph_box(decoy):
    cfg = DecoyConfig()
    r0, r1, c0, c1 = glyph_box(cfg)
    s = cfg.image_side
    for split in decoy:
        m = split.masks.reshape(-1, s, s)
        assert not m[:, r0:r1 + 1, c0:c1 + 1].any()
        # nothing outside the box except the patch
        img = split.images.reshape(-1, s, s).copy()
        img[m] = 0.0
        img[:, r0:r1 + 1, c0:c1 + 1] = 0.0
        assert np.all(img == 0.0)


def test_decoy_train_shade_encodes_label(decoy):
    train, _ = decoy
    patch = train.images[train.masks].reshape(len(train.labels), -1)
    np.testing.assert_allclose(patch, np.repeat(train_shade(train.labels)[:, None], patch.shape[1], axis=1))


def test_decoy_test_shade_uncorrelated(decoy):
    _, test = decoy
    assert abs(np.corrcoef(test.shades, test.labels)[0, 1]) <= 0.1


def test_decoy_config_rejects_oversized_patch():
    with pytest.raises(InvalidConfig):
        DecoyConfig(image_side=16, patch_side=6)
    with pytest.raises(InvalidConfig):
        DecoyConfig(source="mnist")


def test_decoy_from_idx_files(tmp_path, rng):
    imgs = (rng.random((5, 28, 28)) * 40).astype(np.uint8)
    labels = np.arange(5, dtype=np.uint8)
    write_idx(tmp_path / "img.idx", imgs)
    write_idx(tmp_path / "lab.idx", labels)
    cfg = DecoyConfig(source="idx_files", idx_images=str(tmp_path / "img.idx"), idx_labels=str(tmp_path / "lab.idx"))
    train, test = decoy_dataset(cfg, 4, 3, rng)
    np.testing.assert_array_equal(train.labels, [0, 1, 2, 3])
    np.testing.assert_array_equal(test.labels, [4, 0, 1])


# IDX --------------------------------------------------------------------

def test_idx_handcrafted_fixture(tmp_path):
    raw = bytes([0, 0, 8, 3]) + struct.pack(">III", 1, 2, 2) + bytes([0, 51, 204, 255])
    p = tmp_path / "tiny.idx"
    p.write_bytes(raw)
    arr = load_idx(p)
    assert arr.shape == (1, 2, 2)
    np.testing.assert_allclose(arr.ravel(), [0.0, 0.2, 0.8, 1.0])


def test_idx_labels_round_trip(tmp_path):
    p = tmp_path / "lab.idx"
    write_idx(p, np.array([3, 1, 4, 1, 5], dtype=np.uint8))
    np.testing.assert_array_equal(load_idx(p), [3, 1, 4, 1, 5])
    assert load_idx(p).dtype == np.int64


@pytest.mark.parametrize("raw, where", [
    (b"", "offset 0"),
    (bytes([0, 0, 9, 1, 0, 0, 0, 1, 7]), "magic"),
    (bytes([0, 0, 8, 2, 0, 0]), "dimension table"),
    (bytes([0, 0, 8, 1, 0, 0, 0, 4, 1, 2]), "payload"),
])
def test_idx_rejects_malformed(raw, where):
    with pytest.raises(FormatError, match=where):
        parse_idx(raw)


# container --------------------------------------------------------------

def test_container_round_trip(tmp_path, rng):
    arrays = {"X": rng.standard_normal((7, 3)).astype(np.float32), "mask": rng.random((7, 5)) < 0.5}
    p = tmp_path / "d.bnnd"
    save_dataset(p, arrays, {"task": "x", "nested": {"a": 1}})
    got, meta = load_dataset(p)
    np.testing.assert_array_equal(got["X"], arrays["X"])
    np.testing.assert_array_equal(got["mask"], arrays["mask"])
    assert meta["task"] == "x" and meta["nested"] == {"a": 1}


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 20), st.integers(1, 9))
def test_container_bits_any_length(n, m):
    mask = np.random.default_rng(n * 31 + m).random((n, m)) < 0.3
    got, _ = decode_dataset(encode_dataset({"m": mask}))
    np.testing.assert_array_equal(got["m"], mask)


def test_container_truncation_and_magic():
    blob = encode_dataset({"X": np.ones((4, 4), dtype=np.float32)})
    with pytest.raises(FormatError):
        decode_dataset(blob[:-3])
    with pytest.raises(FormatError):
        decode_dataset(b"XXXXXXXX" + blob[8:])
    with pytest.raises(FormatError):
        decode_dataset(b"")


def test_container_is_deterministic():
    arrays = {"a": np.arange(6, dtype=np.float32).reshape(2, 3)}
    assert encode_dataset(arrays, {"k": 1}) == encode_dataset(arrays, {"k": 1})


# tabular ----------------------------------------------------------------

def _group_gap(X, y, groups):
    return y[groups].mean() - y[~groups].mean()


def test_fairness_gap_near_configured():
    X, y, g = fairness_dataset(FairnessConfig(n_samples=20000), np.random.default_rng(3))
    assert abs(_group_gap(X, y, g) - 0.3) <= 0.05
    assert np.array_equal(X[:, 0], g.astype(float))


def test_fairness_zero_gap():
    X, y, g = fairness_dataset(FairnessConfig(n_samples=20000, base_rate_gap=0.0), np.random.default_rng(3))
    assert abs(_group_gap(X, y, g)) <= 0.05


def test_stratified_batches_cover_both_groups(rng):
    groups = rng.random(503) < 0.2
    seen = []
    for batch in stratified_batches(groups, 32, rng):
        assert groups[batch].any() and (~groups[batch]).any()
        seen.append(batch)
    all_idx = np.concatenate(seen)
    assert sorted(all_idx.tolist()) == list(range(503))


@pytest.fixture(scope="module")
def clinical():
    return clinical_dataset(ClinicalConfig(n_samples=6000), np.random.default_rng(5))


def test_clinical_raw_and_standardized_rules_agree(clinical):
    for name, (Xs, _, region) in clinical["splits"].items():
        raw_region = clinical_rule(clinical["raw"][name], clinical["raw_thresholds"])
        np.testing.assert_array_equal(region, raw_region)


def test_clinical_base_rate(clinical):
    y = np.concatenate([s[1] for s in clinical["splits"].values()])
    assert 0.3 <= y.mean() <= 0.7


def test_clinical_region_rows_positive_without_noise():
    d = clinical_dataset(ClinicalConfig(n_samples=4000, label_noise=0.0), np.random.default_rng(2))
    for Xs, y, region in d["splits"].values():
        assert region.any()
        assert np.all(y[region] == 1)


def test_clinical_standardized_train_moments(clinical):
    Xtr = clinical["splits"]["train"][0]
    np.testing.assert_allclose(Xtr.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(Xtr.std(axis=0), 1.0, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 40), st.integers(1, 5), st.integers(0, 10_000))
def test_standardizer_round_trip(n, d, seed):
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, d)) * r.uniform(0.1, 10, size=d) + r.uniform(-5, 5, size=d)
    s = Standardizer.fit(X)
    np.testing.assert_allclose(s.inverse(s.transform(X)), X, rtol=1e-10, atol=1e-10)
    s2 = Standardizer.from_dict(s.to_dict())
    np.testing.assert_array_equal(s2.mean, s.mean)


def test_standardizer_excluded_column_untouched(rng):
    X = rng.standard_normal((50, 3)) + 4
    s = Standardizer.fit(X, exclude=(1,))
    np.testing.assert_array_equal(s.transform(X)[:, 1], X[:, 1])


def test_generators_deterministic():
    a = fairness_dataset(FairnessConfig(n_samples=100), np.random.default_rng(9))
    b = fairness_dataset(FairnessConfig(n_samples=100), np.random.default_rng(9))
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)
