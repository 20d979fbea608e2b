import numpy as np
import pytest

from tinydesc.fht import dyadic_line_offsets, fht, fht_vertical


def oracle_offset(y, t, n):
    """Column offset of row ``y`` on the dyadic line with drift ``t``.

    Unrolled form of the recursive definition: descending one level into the
    bottom half adds ceil(t_l / 2), where t_l is the drift at that level.
    """
    k = n.bit_length() - 1
    off = 0
    for level in range(k):
        if (y >> (k - 1 - level)) & 1:
            off += ((t >> level) + 1) >> 1
    return off


def brute_force_hough(img):
    n = img.shape[0]
    out = np.zeros((n, n), dtype=np.int64)
    for t in range(n):
        for x in range(n):
            out[t, x] = sum(int(img[y, (x + oracle_offset(y, t, n)) % n]) for y in range(n))
    return out


def test_oracle_offsets_are_lines():
    for n in (2, 4, 8, 16, 32):
        for t in range(n):
            offs = [oracle_offset(y, t, n) for y in range(n)]
            assert offs[0] == 0 and offs[-1] == t
            assert all(0 <= b - a <= 1 for a, b in zip(offs, offs[1:]))
            assert offs == dyadic_line_offsets(n, t)


def test_zero_image():
    assert not fht(np.zeros((16, 16))).any()


def test_single_pixel():
    n = 8
    img = np.zeros((n, n), dtype=np.int64)
    img[5, 3] = 1
    h = fht_vertical(img)
    expected = brute_force_hough(img)
    np.testing.assert_array_equal(h, expected)
    # every line through (5, 3) sums to 1, all others to 0; one line per drift
    assert set(np.unique(h)) == {0, 1}
    assert np.all(h.sum(axis=1) == 1)


@pytest.mark.parametrize("n", [8, 16])
def test_matches_brute_force(n):
    rng = np.random.default_rng(n)
    for _ in range(5):
        img = rng.integers(0, 100, size=(n, n))
        np.testing.assert_array_equal(fht_vertical(img), brute_force_hough(img))


def test_horizontal_is_transpose():
    img = np.random.default_rng(0).integers(0, 9, size=(8, 8))
    np.testing.assert_array_equal(fht(img, "horizontal"), brute_force_hough(img.T))
    both = fht(img, "both")
    assert both.shape == (2, 8, 8)


def test_column_sums_preserved():
    img = np.random.default_rng(1).random((32, 32))
    np.testing.assert_allclose(fht_vertical(img).sum(axis=1), img.sum(), rtol=1e-12)


def test_addition_count_scaling():
    _, a8 = fht_vertical(np.zeros((8, 8)), count_adds=True)
    _, a16 = fht_vertical(np.zeros((16, 16)), count_adds=True)
    assert a8 == 8 * 8 * 3 and a16 == 16 * 16 * 4
    assert abs(a16 / a8 - 4 * 4 / 3) / (4 * 4 / 3) < 0.10


@pytest.mark.parametrize("shape", [(8, 16), (12, 12), (0, 0)])
def test_rejects_bad_sizes(shape):
    with pytest.raises(ValueError):
        fht(np.zeros(shape))
