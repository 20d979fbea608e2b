import numpy as np
import pytest

from tinydesc.patches import DatasetFormatError, extract_patches, load_dataset, save_dataset, window_positions
from tinydesc.synth import SourceImage


def source(pixels, group="g-000000", member=0):
    return SourceImage(pixels, "texture", group, 0, member)


def ramp(h=64, w=64):
    return (np.add.outer(np.arange(h), 2 * np.arange(w)) % 256).astype(np.uint8)


def test_exact_tiling():
    ds = extract_patches([source(ramp())], stride=32, scales=(1.0,), rotations=(0,), invert_fraction=0.0)
    assert ds.n_classes == 4 and len(ds) == 4
    assert ds.histogram() == {"1": 4, "2": 0, "3": 0, "4+": 0}
    np.testing.assert_array_equal(ds.patches[3], ramp()[32:, 32:])


def test_duplicate_lands_in_same_class():
    img = ramp()
    ds = extract_patches([source(img), source(img.copy(), member=1)], stride=32, scales=(1.0,),
                         rotations=(0,), invert_fraction=0.0)
    assert ds.n_classes == 4 and len(ds) == 8
    assert all(len(c) == 2 for c in ds.classes)


def test_class_purity_and_overlap():
    ds = extract_patches([source(ramp(80, 100))], invert_fraction=1.0, rng=0)
    assert len(set(ds.provenance)) == ds.n_classes
    by_variant = {}
    for gid, s, r, inv, x, y in ds.provenance:
        by_variant.setdefault((gid, s, r, inv), []).append((x, y))
    worst = 0.0
    for pos in by_variant.values():
        for i, (x0, y0) in enumerate(pos):
            for x1, y1 in pos[i + 1:]:
                area = max(0, 32 - abs(x0 - x1)) * max(0, 32 - abs(y0 - y1))
                worst = max(worst, area / 1024)
    assert 0 < worst < 0.5


def test_variants_and_inversion():
    ds = extract_patches([source(ramp())], stride=32, scales=(1.0,), rotations=(0, 90), invert_fraction=1.0)
    provs = set(ds.provenance)
    assert {(p[2], p[3]) for p in provs} == {(0, False), (90, False), (0, True), (90, True)}
    first = ds.provenance.index(("g-000000", 1.0, 0, True, 0, 0))
    np.testing.assert_array_equal(ds.patches[ds.classes[first][0]], 255 - ramp()[:32, :32])
    first = ds.provenance.index(("g-000000", 1.0, 90, False, 0, 0))
    np.testing.assert_array_equal(ds.patches[ds.classes[first][0]], np.rot90(ramp())[:32, :32])


def test_small_variant_is_skipped_with_warning():
    ds = extract_patches([source(ramp(40, 40))], stride=8, scales=(1.0, 0.5), rotations=(0,), invert_fraction=0)
    assert len(ds.warnings) == 1 and "0.5" in ds.warnings[0]
    assert ds.n_classes == 4


def test_bad_arguments():
    with pytest.raises(ValueError):
        extract_patches([source(ramp())], stride=0)
    with pytest.raises(ValueError):
        extract_patches([source(ramp())], scales=())
    with pytest.raises(ValueError):
        extract_patches([source(ramp()), source(ramp(40, 64), member=1)])


def test_window_positions():
    assert window_positions(64, 64, 32) == [(0, 0), (0, 32), (32, 0), (32, 32)]
    assert window_positions(31, 64, 1) == []


def test_mining_deterministic(small_dataset):
    from tinydesc import synth
    images = synth.build_corpus({f: 1 for f in synth.FAMILIES}, seed=3)
    again = extract_patches(images, rng=3)
    assert again.patches.tobytes() == small_dataset.patches.tobytes()
    assert again.provenance == small_dataset.provenance


def test_histogram_shape(small_dataset):
    h = small_dataset.histogram()
    assert sum(h.values()) == small_dataset.n_classes
    assert h["1"] + h["2"] > h["3"] + h["4+"]


def test_subset_classes(small_dataset):
    sub = small_dataset.subset_classes([5, 2])
    assert sub.n_classes == 2
    assert sub.provenance == [small_dataset.provenance[5], small_dataset.provenance[2]]
    np.testing.assert_array_equal(sub.patches[sub.classes[0]], small_dataset.patches[small_dataset.classes[5]])


def test_dataset_roundtrip(tmp_path, small_dataset):
    blob, index = tmp_path / "d.tdpd", tmp_path / "d.idx"
    save_dataset(small_dataset, blob, index)
    back = load_dataset(blob, index)
    assert back.n_classes == small_dataset.n_classes
    assert back.patches.tobytes() == small_dataset.patches.tobytes()
    np.testing.assert_array_equal(back.labels, small_dataset.labels)
    assert back.provenance == small_dataset.provenance


def test_corrupt_files(tmp_path, small_dataset):
    blob, index = tmp_path / "d.tdpd", tmp_path / "d.idx"
    save_dataset(small_dataset, blob, index)
    text = index.read_text().splitlines(keepends=True)
    index.write_text("".join(text[:1] + text[2:]))
    with pytest.raises(DatasetFormatError):
        load_dataset(blob, index)
    save_dataset(small_dataset, blob, index)
    data = bytearray(blob.read_bytes())
    data[100] ^= 1
    blob.write_bytes(bytes(data))
    with pytest.raises(DatasetFormatError):
        load_dataset(blob, index)
    blob.write_bytes(bytes(data[:50]))
    with pytest.raises(DatasetFormatError):
        load_dataset(blob, index)
