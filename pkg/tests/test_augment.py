import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinydesc import augment
from tinydesc.augment import AugmentSchedule, apply_augmentation, plan_augmentation


def patch(seed=0):
    return np.random.default_rng(seed).integers(0, 256, (32, 32)).astype(np.uint8)


def test_schedule_probabilities():
    s = AugmentSchedule()
    assert s.probability(0) == pytest.approx(0.95)
    assert s.probability(1) == pytest.approx(0.8075)
    probs = [s.probability(i) for i in range(9)]
    assert all(a > b for a, b in zip(probs, probs[1:]))


def test_schedule_rejects_bad_lists():
    with pytest.raises(ValueError):
        AugmentSchedule(anchor_transforms=("blur",), negative_transforms=("brightness",))
    with pytest.raises(ValueError):
        AugmentSchedule(negative_transforms=augment.ANCHOR_TRANSFORMS + ("sharpen",))


def test_role_lists():
    s = AugmentSchedule()
    assert len(s.transforms_for("anchor_positive")) == 5
    assert set(s.transforms_for("anchor_positive")) < set(s.transforms_for("negative"))
    with pytest.raises(ValueError):
        s.transforms_for("query")


def test_position_frequencies_and_expected_count():
    s = AugmentSchedule()
    rng = np.random.default_rng(0)
    n = 100_000
    hits = np.zeros(5)
    for _ in range(n):
        hits += [applied for _, applied in plan_augmentation(augment.ANCHOR_TRANSFORMS, s, rng)]
    freq = hits / n
    np.testing.assert_allclose(freq, [0.95 * 0.85 ** i for i in range(5)], atol=0.01)
    assert abs(hits.sum() / n - sum(0.95 * 0.85 ** i for i in range(5))) < 0.02


def test_shuffle_covers_every_order_position():
    s = AugmentSchedule()
    rng = np.random.default_rng(1)
    first = {plan_augmentation(augment.ANCHOR_TRANSFORMS, s, rng)[0][0] for _ in range(200)}
    assert first == set(augment.ANCHOR_TRANSFORMS)


def test_empty_transform_list_is_identity():
    s = AugmentSchedule(anchor_transforms=(), negative_transforms=())
    p = patch()
    np.testing.assert_array_equal(apply_augmentation(p, "anchor_positive", s, np.random.default_rng(0)), p)


def test_augmentation_deterministic():
    s = AugmentSchedule()
    p = patch()
    a = apply_augmentation(p, "negative", s, np.random.default_rng(3))
    b = apply_augmentation(p, "negative", s, np.random.default_rng(3))
    assert a.tobytes() == b.tobytes()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), name=st.sampled_from(sorted(augment.TRANSFORMS)))
def test_transforms_keep_geometry(seed, name):
    out = augment.TRANSFORMS[name](patch(seed % 1000), np.random.default_rng(seed))
    assert out.shape == (32, 32) and out.dtype == np.uint8


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_brightness_is_monotonic(seed):
    p = patch(seed % 977)
    out = augment.brightness(p, np.random.default_rng(seed)).astype(int).ravel()
    order = np.argsort(p.ravel(), kind="stable")
    assert np.all(np.diff(out[order]) >= 0)


def test_morphology_constant_patch():
    p = np.full((32, 32), 93, np.uint8)
    np.testing.assert_array_equal(augment.morphology_close(augment.morphology_open(p)), p)


def test_zero_noise_is_identity():
    p = patch()
    np.testing.assert_array_equal(augment.additive_noise(p, np.random.default_rng(0), sigma=0), p)


def test_grid_overlay_darkens_only():
    p = patch(4)
    out = augment.grid_overlay(p, np.random.default_rng(0))
    assert np.all(out <= p) and np.any(out < p)


def test_highlight_brightens_only():
    p = np.full((32, 32), 50, np.uint8)
    out = augment.highlight_blob(p, np.random.default_rng(0))
    assert np.all(out >= p) and out.max() > 100


def test_crop_of_constant_patch_is_constant():
    p = np.full((32, 32), 17, np.uint8)
    np.testing.assert_array_equal(augment.crop_and_rescale(p, np.random.default_rng(0)), p)


def test_motion_kernel_normalized():
    for length in (3, 5, 7):
        for angle in (0.0, 0.7, np.pi / 2):
            k = augment.motion_kernel(length, angle)
            assert k.sum() == pytest.approx(1.0)
            assert k[(length - 1) // 2, (length - 1) // 2] > 0
