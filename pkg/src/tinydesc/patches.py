"""Mining class-labelled 32x32 patches from aligned source-image groups.

Each group is expanded into variants (scale x right-angle rotation x
optional inversion); every variant is tiled with 32x32 windows at a fixed
stride.  A class is one window position in one variant of one group, so
the duplicates of a group contribute one patch each to every class.
"""
from __future__ import annotations

import logging
import struct
import zlib
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .imaging import resize, to_uint8

log = logging.getLogger(__name__)

PATCH = 32
DEFAULT_STRIDE = 24
DEFAULT_SCALES = (1.0, 0.75, 1.5)
DEFAULT_ROTATIONS = (0, 90, 180, 270)
DEFAULT_INVERT_FRACTION = 0.25


@dataclass
class PatchDataset:
    patches: np.ndarray  # (N, 32, 32) uint8
    labels: np.ndarray  # (N,) class id per patch
    provenance: list  # class id -> (group_id, scale, rotation, inverted, x, y)
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.patches = np.asarray(self.patches, dtype=np.uint8).reshape(-1, PATCH, PATCH)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self._classes = None

    def __len__(self):
        return len(self.patches)

    @property
    def n_classes(self):
        return len(self.provenance)

    @property
    def classes(self):
        """class id -> array of patch indices."""
        if self._classes is None:
            order = np.argsort(self.labels, kind="stable")
            bounds = np.searchsorted(self.labels[order], np.arange(self.n_classes + 1))
            self._classes = [order[bounds[c]:bounds[c + 1]] for c in range(self.n_classes)]
        return self._classes

    def class_of(self, index):
        return int(self.labels[index])

    def family_of_class(self, c):
        return self.provenance[c][0].split("-")[0]

    def class_families(self):
        return np.array([self.family_of_class(c) for c in range(self.n_classes)])

    def histogram(self):
        """Number of classes holding 1, 2, 3 and 4+ patches."""
        sizes = np.bincount(self.labels, minlength=self.n_classes)
        return {"1": int(np.sum(sizes == 1)), "2": int(np.sum(sizes == 2)),
                "3": int(np.sum(sizes == 3)), "4+": int(np.sum(sizes >= 4))}

    def subset_classes(self, class_ids):
        """New dataset keeping only ``class_ids`` (renumbered in the given order)."""
        class_ids = list(class_ids)
        remap = {c: k for k, c in enumerate(class_ids)}
        keep = np.concatenate([self.classes[c] for c in class_ids]) if class_ids else np.zeros(0, int)
        keep.sort()
        labels = np.array([remap[c] for c in self.labels[keep]], dtype=np.int64)
        return PatchDataset(self.patches[keep], labels, [self.provenance[c] for c in class_ids])


def variant_image(pixels, scale, rotation, inverted):
    img = pixels
    if scale != 1.0:
        shape = (int(round(img.shape[0] * scale)), int(round(img.shape[1] * scale)))
        if min(shape) < 1:
            return None
        img = to_uint8(resize(img, shape))
    if rotation % 90:
        raise ValueError(f"only right-angle rotations are mined, got {rotation}")
    img = np.rot90(img, k=(rotation // 90) % 4)
    if inverted:
        img = 255 - img
    return np.ascontiguousarray(img)


def window_positions(h, w, stride):
    return [(y, x) for y in range(0, h - PATCH + 1, stride) for x in range(0, w - PATCH + 1, stride)]


def _group_images(sources):
    groups = defaultdict(list)
    for img in sources:
        groups[img.group_id].append(img)
    for gid, members in groups.items():
        shapes = {m.pixels.shape for m in members}
        if len(shapes) != 1:
            raise ValueError(f"group {gid} has members of different sizes: {sorted(shapes)}")
        members.sort(key=lambda m: m.member)
    return groups


def extract_patches(sources, stride=DEFAULT_STRIDE, scales=DEFAULT_SCALES, rotations=DEFAULT_ROTATIONS,
                    invert_fraction=DEFAULT_INVERT_FRACTION, rng=None):
    """Tile every variant of every group; returns a :class:`PatchDataset`.

    ``invert_fraction`` is the probability that a group additionally gets
    intensity-inverted copies of all its variants.  Variants smaller than a
    patch are skipped and listed in ``dataset.warnings``.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if not scales or not rotations:
        raise ValueError("scales and rotations must be non-empty")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    groups = _group_images(sources)
    patches, labels, provenance, warnings = [], [], [], []
    for gid in sorted(groups):
        members = groups[gid]
        inverts = (False, True) if rng.random() < invert_fraction else (False,)
        for inverted in inverts:
            for scale in scales:
                for rotation in rotations:
                    views = [variant_image(m.pixels, scale, rotation, inverted) for m in members]
                    if views[0] is None or min(views[0].shape) < PATCH:
                        shape = None if views[0] is None else views[0].shape
                        msg = f"{gid}: variant scale={scale} rotation={rotation} is {shape}, smaller than {PATCH}x{PATCH}; skipped"
                        log.warning(msg)
                        warnings.append(msg)
                        continue
                    h, w = views[0].shape
                    for y, x in window_positions(h, w, stride):
                        cls = len(provenance)
                        provenance.append((gid, float(scale), int(rotation), bool(inverted), x, y))
                        for v in views:
                            patches.append(v[y:y + PATCH, x:x + PATCH])
                            labels.append(cls)
    arr = np.stack(patches) if patches else np.zeros((0, PATCH, PATCH), np.uint8)
    return PatchDataset(arr, np.asarray(labels, dtype=np.int64), provenance, warnings)


# ---------------------------------------------------------------------------
# dataset files

DATASET_MAGIC = b"TDPD"
DATASET_VERSION = 1


class DatasetFormatError(ValueError):
    pass


def save_dataset(ds, blob_path, index_path, meta=None):
    body = bytearray(DATASET_MAGIC)
    body += struct.pack("<BQ", DATASET_VERSION, len(ds))
    body += np.ascontiguousarray(ds.patches, dtype=np.uint8).tobytes()
    body += struct.pack("<I", zlib.crc32(body))
    with open(blob_path, "wb") as fh:
        fh.write(bytes(body))

    rows = []
    for i, c in enumerate(ds.labels):
        gid, scale, rot, inv, x, y = ds.provenance[c]
        rows.append(f"{i}\t{c}\t{gid}\t{scale!r}\t{rot}\t{int(inv)}\t{x}\t{y}")
    text = "\n".join(rows) + ("\n" if rows else "")
    extra = "".join(f" {k}={v}" for k, v in (meta or {}).items())
    header = (f"# tdpd-index v{DATASET_VERSION} patches={len(ds)} classes={ds.n_classes} "
              f"crc32={zlib.crc32(text.encode()):08x}{extra}\n")
    with open(index_path, "w") as fh:
        fh.write(header + text)


def load_dataset(blob_path, index_path):
    """Load and validate a dataset pair; raises :class:`DatasetFormatError`."""
    with open(blob_path, "rb") as fh:
        data = fh.read()
    if len(data) < 17 or data[:4] != DATASET_MAGIC:
        raise DatasetFormatError(f"{blob_path}: bad magic or truncated")
    version, n = struct.unpack_from("<BQ", data, 4)
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"{blob_path}: format version {version}, expected {DATASET_VERSION}")
    if len(data) != 13 + n * PATCH * PATCH + 4:
        raise DatasetFormatError(f"{blob_path}: size does not match {n} patches")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise DatasetFormatError(f"{blob_path}: checksum mismatch")
    patches = np.frombuffer(data, dtype=np.uint8, count=n * PATCH * PATCH, offset=13).reshape(n, PATCH, PATCH).copy()

    with open(index_path) as fh:
        header = fh.readline()
        text = fh.read()
    try:
        fields = dict(kv.split("=") for kv in header.split()[3:])
        n_idx, n_classes, want_crc = int(fields["patches"]), int(fields["classes"]), int(fields["crc32"], 16)
    except (KeyError, ValueError) as exc:
        raise DatasetFormatError(f"{index_path}: malformed header") from exc
    if not header.startswith("# tdpd-index") or zlib.crc32(text.encode()) != want_crc:
        raise DatasetFormatError(f"{index_path}: index checksum mismatch")
    if n_idx != n:
        raise DatasetFormatError(f"{index_path}: index lists {n_idx} patches, blob holds {n}")

    labels = np.empty(n, dtype=np.int64)
    provenance = [None] * n_classes
    lines = text.splitlines()
    if len(lines) != n:
        raise DatasetFormatError(f"{index_path}: {len(lines)} rows for {n} patches")
    seen = np.zeros(n, dtype=bool)
    try:
        for line in lines:
            i, c, gid, scale, rot, inv, x, y = line.split("\t")
            i, c = int(i), int(c)
            prov = (gid, float(scale), int(rot), bool(int(inv)), int(x), int(y))
            labels[i] = c
            seen[i] = True
            if provenance[c] is None:
                provenance[c] = prov
            elif provenance[c] != prov:
                raise DatasetFormatError(f"{index_path}: class {c} has inconsistent provenance")
    except DatasetFormatError:
        raise
    except (ValueError, IndexError) as exc:
        raise DatasetFormatError(f"{index_path}: malformed row") from exc
    if not seen.all() or any(p is None for p in provenance):
        raise DatasetFormatError(f"{index_path}: some classes have no patches")
    return PatchDataset(patches, labels, provenance)
