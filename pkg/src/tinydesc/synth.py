"""Procedural source images for the five training families.

* ``textline`` - bitmap-font strings printed over noisy backgrounds
* ``texture``  - shaded heightfields, duplicates differ only in light direction
* ``fht``      - blurred dot images passed through the Fast Hough Transform
* ``glyph``    - stroke-built ideograph-like symbols
* ``barcode``  - 1-D bar patterns

Every generator is a pure function of its seed and configuration.  Images in
one group share dimensions and geometry; duplicates only receive global
photometric edits (or a new light direction for textures), so a window at
the same coordinates in every member shows the same content.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .fht import fht
from .imaging import gaussian_blur, read_pgm, rescale_to_uint8, resize, to_uint8, write_pgm

FAMILIES = ("textline", "texture", "fht", "glyph", "barcode")

# classes per family in the reference corpus
REFERENCE_CLASS_COUNTS = {
    "textline": 265384,
    "texture": 38916,
    "fht": 10000,
    "glyph": 7140,
    "barcode": 3736,
}

# share of classes holding 1, 2, 3 and 4 patches in the reference corpus;
# reused as the distribution of group sizes (original + duplicates)
GROUP_SIZE_WEIGHTS = {1: 149164, 2: 138436, 3: 35624, 4: 1952}

DEFAULT_SIZES = {
    "textline": (64, 256),
    "texture": (128, 128),
    "fht": (64, 64),
    "glyph": (64, 192),
    "barcode": (64, 256),
}


@dataclass
class SourceImage:
    pixels: np.ndarray  # (H, W) uint8
    family: str
    group_id: str
    seed: int
    member: int = 0
    config: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.pixels.shape


@dataclass
class FhtPatchConfig:
    canvas_size: int = 64
    n_dots: int = 5
    blur_sigma: float = 2.0

    def __post_init__(self):
        n = self.canvas_size
        if n < 1 or n & (n - 1):
            raise ValueError(f"canvas_size must be a power of two, got {n}")
        if self.n_dots < 0:
            raise ValueError("n_dots must be non-negative")
        if not self.blur_sigma > 0:
            raise ValueError("blur_sigma must be positive")

    @classmethod
    def random(cls, rng, canvas_size=64):
        return cls(canvas_size, int(rng.integers(3, 9)), float(rng.uniform(1.5, 3.0)))


# ---------------------------------------------------------------------------
# FHT family

def gen_fht_patch(config, rng, group_id="fht", seed=0):
    """White canvas, black dots, Gaussian blur, then the vertical-line FHT."""
    n = config.canvas_size
    canvas = np.ones((n, n))
    ys = rng.integers(0, n, size=config.n_dots)
    xs = rng.integers(0, n, size=config.n_dots)
    canvas[ys, xs] = 0.0
    hough = fht(gaussian_blur(canvas, config.blur_sigma), "vertical")
    return SourceImage(rescale_to_uint8(hough), "fht", group_id, seed, config=asdict(config))


# ---------------------------------------------------------------------------
# textures

def value_noise(rng, shape, octaves=4, base_cells=4, persistence=0.5):
    """Multi-octave value noise in roughly [0, 1]."""
    h, w = shape
    out = np.zeros(shape)
    amp, total = 1.0, 0.0
    for o in range(octaves):
        cells = base_cells * 2 ** o
        grid = rng.random((cells + 1, cells + 1))
        out += amp * resize(grid, shape)
        total += amp
        amp *= persistence
    return out / total


def gen_texture(rng, light_direction, shape=(128, 128), relief=6.0, elevation=0.6,
                group_id="texture", seed=0):
    """Lambertian shading of a value-noise heightfield.

    The heightfield depends only on ``rng``; ``light_direction`` is the
    in-plane (x, y) direction the light comes from.
    """
    height = value_noise(rng, shape) * relief
    gy, gx = np.gradient(height)
    normals = np.stack([-gx, -gy, np.ones_like(gx)], axis=-1)
    normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
    lx, ly = np.asarray(light_direction, dtype=np.float64) / np.linalg.norm(light_direction)
    light = np.array([lx, ly, elevation])
    light /= np.linalg.norm(light)
    shade = np.clip(normals @ light, 0.0, 1.0)
    pixels = to_uint8(20 + 225 * shade)
    return SourceImage(pixels, "texture", group_id, seed,
                       config={"light": [float(lx), float(ly)], "shape": list(shape)})


# ---------------------------------------------------------------------------
# text lines

_FONT_5X7 = {
    "A": "01110 10001 10001 11111 10001 10001 10001",
    "B": "11110 10001 10001 11110 10001 10001 11110",
    "C": "01110 10001 10000 10000 10000 10001 01110",
    "D": "11100 10010 10001 10001 10001 10010 11100",
    "E": "11111 10000 10000 11110 10000 10000 11111",
    "F": "11111 10000 10000 11110 10000 10000 10000",
    "G": "01110 10001 10000 10111 10001 10001 01111",
    "H": "10001 10001 10001 11111 10001 10001 10001",
    "I": "01110 00100 00100 00100 00100 00100 01110",
    "J": "00111 00010 00010 00010 00010 10010 01100",
    "K": "10001 10010 10100 11000 10100 10010 10001",
    "L": "10000 10000 10000 10000 10000 10000 11111",
    "M": "10001 11011 10101 10101 10001 10001 10001",
    "N": "10001 10001 11001 10101 10011 10001 10001",
    "O": "01110 10001 10001 10001 10001 10001 01110",
    "P": "11110 10001 10001 11110 10000 10000 10000",
    "Q": "01110 10001 10001 10001 10101 10010 01101",
    "R": "11110 10001 10001 11110 10100 10010 10001",
    "S": "01111 10000 10000 01110 00001 00001 11110",
    "T": "11111 00100 00100 00100 00100 00100 00100",
    "U": "10001 10001 10001 10001 10001 10001 01110",
    "V": "10001 10001 10001 10001 10001 01010 00100",
    "W": "10001 10001 10001 10101 10101 10101 01010",
    "X": "10001 10001 01010 00100 01010 10001 10001",
    "Y": "10001 10001 10001 01010 00100 00100 00100",
    "Z": "11111 00001 00010 00100 01000 10000 11111",
    "0": "01110 10001 10011 10101 11001 10001 01110",
    "1": "00100 01100 00100 00100 00100 00100 01110",
    "2": "01110 10001 00001 00010 00100 01000 11111",
    "3": "11111 00010 00100 00010 00001 10001 01110",
    "4": "00010 00110 01010 10010 11111 00010 00010",
    "5": "11111 10000 11110 00001 00001 10001 01110",
    "6": "00110 01000 10000 11110 10001 10001 01110",
    "7": "11111 00001 00010 00100 01000 01000 01000",
    "8": "01110 10001 10001 01110 10001 10001 01110",
    "9": "01110 10001 10001 01111 00001 00010 01100",
    " ": "00000 00000 00000 00000 00000 00000 00000",
}
FONT = {ch: np.array([[c == "1" for c in row] for row in rows.split()], dtype=bool)
        for ch, rows in _FONT_5X7.items()}
CHARSETS = {
    "latin": "ABCDEFGHIJKLMNOPQRSTUVWXYZ",
    "digits": "0123456789",
}


def gen_background(rng, shape):
    """Smooth noise background in the light half of the grey range."""
    base = value_noise(rng, shape, octaves=3, base_cells=2)
    level = rng.uniform(150, 230)
    spread = rng.uniform(10, 50)
    grain = rng.normal(0, rng.uniform(0, 4), size=shape)
    return to_uint8(level + spread * (base - 0.5) + grain)


def render_text(pixels, text, rng, atlas=None, scale=None):
    """Stamp ``text`` onto a copy of ``pixels``; returns (image, settings)."""
    atlas = FONT if atlas is None else atlas
    glyph_h, glyph_w = next(iter(atlas.values())).shape
    if scale is None:
        scale = int(rng.integers(2, 4))
    h, w = pixels.shape
    char_h = glyph_h * scale
    if h < char_h:
        raise ValueError(f"background height {h} is smaller than one glyph ({char_h} px)")
    out = pixels.astype(np.float64)
    if not text:
        return pixels.copy(), {}
    spacing = scale + int(rng.integers(0, scale + 1))
    top = int(rng.integers(0, h - char_h + 1))
    x = int(rng.integers(0, max(1, w // 8)))
    contrast = rng.uniform(80, 200)
    ink = max(0.0, float(out.mean()) - contrast)
    for ch in text:
        mask = atlas.get(ch, atlas.get(" "))
        if mask is None:
            continue
        big = np.kron(mask, np.ones((scale, scale), dtype=bool))
        cw = min(big.shape[1], w - x)
        if cw <= 0:
            break
        region = out[top:top + char_h, x:x + cw]
        region[big[:, :cw]] = ink
        x += big.shape[1] + spacing
    return to_uint8(out), {"scale": scale, "top": top, "spacing": spacing}


def random_text(rng, charset, length):
    chars = CHARSETS[charset]
    idx = rng.integers(0, len(chars), size=length)
    text = "".join(chars[i] for i in idx)
    # occasional word breaks for the latin set
    if charset == "latin" and length > 4:
        for pos in rng.integers(1, length - 1, size=length // 6):
            text = text[:pos] + " " + text[pos + 1:]
    return text


def gen_textline(rng, charset, background, text=None, atlas=None, group_id="textline", seed=0):
    """Print a random string (or ``text``) over ``background``."""
    bg = background.pixels if isinstance(background, SourceImage) else np.asarray(background)
    glyph_h = next(iter((atlas or FONT).values())).shape[0]
    if bg.shape[0] < glyph_h:
        raise ValueError(f"background height {bg.shape[0]} is smaller than one glyph ({glyph_h} px)")
    if text is None:
        text = random_text(rng, charset, int(rng.integers(bg.shape[1] // 24, bg.shape[1] // 10 + 2)))
    pixels, settings = render_text(bg, text, rng, atlas=atlas)
    return SourceImage(pixels, "textline", group_id, seed,
                       config={"charset": charset, "text": text, **settings})


# ---------------------------------------------------------------------------
# glyphs and barcodes

def draw_line(img, p0, p1, value, thickness=1):
    (y0, x0), (y1, x1) = p0, p1
    n = int(max(abs(y1 - y0), abs(x1 - x0))) * 2 + 1
    h, w = img.shape
    r = thickness // 2
    for s in np.linspace(0.0, 1.0, n):
        y = int(round(y0 + s * (y1 - y0)))
        x = int(round(x0 + s * (x1 - x0)))
        img[max(0, y - r):min(h, y - r + thickness), max(0, x - r):min(w, x - r + thickness)] = value


def random_glyph_mask(rng, size):
    """Random ideograph-like symbol: a few straight strokes on a cell grid."""
    mask = np.zeros((size, size), dtype=bool)
    nodes = np.linspace(2, size - 3, 5).round().astype(int)
    thickness = max(1, size // 12)
    for _ in range(int(rng.integers(3, 8))):
        kind = rng.integers(0, 4)
        a, b = sorted(rng.choice(5, size=2, replace=False))
        c = rng.integers(0, 5)
        if kind == 0:  # horizontal
            p0, p1 = (nodes[c], nodes[a]), (nodes[c], nodes[b])
        elif kind == 1:  # vertical
            p0, p1 = (nodes[a], nodes[c]), (nodes[b], nodes[c])
        else:  # diagonal or hook
            p0 = (nodes[a], nodes[c])
            p1 = (nodes[b], nodes[min(4, max(0, c + (1 if kind == 2 else -1) * (b - a)))])
        draw_line(mask, p0, p1, True, thickness)
    return mask


def gen_glyph_image(rng, shape=(64, 192), atlas=None, group_id="glyph", seed=0):
    """A row of random symbols (or ``atlas`` entries) on a noise background."""
    h, w = shape
    pixels = gen_background(rng, shape).astype(np.float64)
    cell = int(rng.integers(20, min(h, 30) + 1))
    top = int(rng.integers(0, h - cell + 1))
    x = int(rng.integers(0, cell // 2 + 1))
    ink = rng.uniform(0, 80)
    keys = sorted(atlas) if atlas else None
    while x + cell <= w:
        if keys:
            mask = np.asarray(atlas[keys[rng.integers(0, len(keys))]], dtype=bool)
            mask = resize(mask.astype(float), (cell, cell)) > 0.5
        else:
            mask = random_glyph_mask(rng, cell)
        pixels[top:top + cell, x:x + cell][mask] = ink
        x += cell + int(rng.integers(1, cell // 3 + 2))
    return SourceImage(to_uint8(pixels), "glyph", group_id, seed, config={"cell": cell, "top": top})


def gen_barcode(rng, shape=(64, 256), group_id="barcode", seed=0):
    """1-D bars with module widths in {1, 2, 3, 4} at a random scale and position."""
    h, w = shape
    module = int(rng.integers(1, 4))
    sheet = rng.uniform(200, 250)
    ink = rng.uniform(0, 60)
    budget = int(rng.uniform(0.5, 0.9) * w) // module
    widths = []
    for wd in rng.integers(1, 5, size=budget):
        if sum(widths) + wd > budget:
            break
        widths.append(int(wd))
    if len(widths) % 2 == 0:
        widths = widths[:-1]  # start and end on a bar
    total = sum(widths) * module
    x0 = int(rng.integers(0, w - total + 1))
    bar_h = int(rng.integers(h // 2, h + 1))
    y0 = int(rng.integers(0, h - bar_h + 1))
    pixels = np.full(shape, sheet)
    x = x0
    for k, wd in enumerate(widths):
        if k % 2 == 0:
            pixels[y0:y0 + bar_h, x:x + wd * module] = ink
        x += wd * module
    return SourceImage(to_uint8(pixels), "barcode", group_id, seed,
                       config={"module": module, "x0": x0, "y0": y0, "bar_height": bar_h, "widths": widths})


# ---------------------------------------------------------------------------
# duplicates

@dataclass
class EditParams:
    gamma: float = 1.0
    contrast: float = 1.0
    vignette: float = 0.0
    gray_tint: float = 0.0
    noise_sigma: float = 0.0

    @classmethod
    def random(cls, rng):
        return cls(
            gamma=float(rng.uniform(0.7, 1.4)),
            contrast=float(rng.uniform(0.8, 1.2)),
            vignette=float(rng.uniform(0.0, 0.3)),
            gray_tint=float(rng.uniform(0.0, 0.3)),
            noise_sigma=float(rng.uniform(0.0, 3.0)),
        )

    def is_identity(self):
        return self == EditParams()


def duplicate_with_edit(image, rng, edit=None):
    """Photometrically edited copy; geometry and group are untouched."""
    if edit is None:
        edit = EditParams.random(rng)
    src = image.pixels
    if edit.is_identity():
        pixels = src.copy()
    else:
        x = src.astype(np.float64) / 255.0
        x = x ** edit.gamma
        x = 0.5 + edit.contrast * (x - 0.5)
        if edit.vignette:
            h, w = x.shape
            yy, xx = np.mgrid[0:h, 0:w]
            r2 = ((yy - (h - 1) / 2) / (h / 2)) ** 2 + ((xx - (w - 1) / 2) / (w / 2)) ** 2
            x = x * (1.0 - edit.vignette * np.clip(r2 / 2, 0, 1))
        x = (1 - edit.gray_tint) * x + edit.gray_tint * 0.5
        x = 255.0 * x
        if edit.noise_sigma:
            x = x + rng.normal(0, edit.noise_sigma, size=x.shape)
        pixels = to_uint8(x)
    return SourceImage(pixels, image.family, image.group_id, image.seed,
                       member=image.member, config={**image.config, "edit": asdict(edit)})


# ---------------------------------------------------------------------------
# corpus

def group_seed(master_seed, family, index):
    ss = np.random.SeedSequence([int(master_seed), FAMILIES.index(family), int(index)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def draw_group_size(rng):
    sizes = np.array(list(GROUP_SIZE_WEIGHTS))
    weights = np.array(list(GROUP_SIZE_WEIGHTS.values()), dtype=np.float64)
    return int(rng.choice(sizes, p=weights / weights.sum()))


def generate_group(family, seed, group_id, size=None, shape=None):
    """Original plus duplicates for one group, all derived from ``seed``."""
    rng = np.random.default_rng(seed)
    if size is None:
        size = draw_group_size(rng)
    shape = tuple(shape or DEFAULT_SIZES[family])
    if family == "texture":
        angles = rng.uniform(0, 2 * np.pi) + np.arange(size) * 2 * np.pi / max(size, 1)
        height_seed = int(rng.integers(0, 2 ** 32))
        members = []
        for m, ang in enumerate(angles):
            img = gen_texture(np.random.default_rng(height_seed), (np.cos(ang), np.sin(ang)),
                              shape=shape, group_id=group_id, seed=seed)
            img.member = m
            members.append(img)
        return members
    if family == "fht":
        side = 1 << int(np.floor(np.log2(min(shape))))
        original = gen_fht_patch(FhtPatchConfig.random(rng, side), rng, group_id, seed)
    elif family == "textline":
        charset = "latin" if rng.random() < 0.7 else "digits"
        bg = gen_background(rng, shape)
        original = gen_textline(rng, charset, bg, group_id=group_id, seed=seed)
    elif family == "glyph":
        original = gen_glyph_image(rng, shape, group_id=group_id, seed=seed)
    elif family == "barcode":
        original = gen_barcode(rng, shape, group_id=group_id, seed=seed)
    else:
        raise ValueError(f"unknown family {family!r}")
    members = [original]
    for m in range(1, size):
        dup = duplicate_with_edit(original, rng)
        dup.member = m
        members.append(dup)
    return members


def family_targets(scale):
    """Group counts per family, proportional to the reference class counts."""
    return {f: max(1, int(round(n * scale))) for f, n in REFERENCE_CLASS_COUNTS.items()}


def build_corpus(counts, seed=0, shapes=None):
    """Generate ``counts[family]`` groups per family; returns a flat image list."""
    shapes = shapes or {}
    images = []
    for family in FAMILIES:
        for k in range(counts.get(family, 0)):
            gid = f"{family}-{k:06d}"
            images.extend(generate_group(family, group_seed(seed, family, k), gid, shape=shapes.get(family)))
    return images


def build_family_images(family, n_images, seed=0, shape=None):
    """Exactly ``n_images`` images of one family; the last group is cut short if needed."""
    images = []
    k = 0
    while len(images) < n_images:
        gid = f"{family}-{k:06d}"
        images.extend(generate_group(family, group_seed(seed, family, k), gid, shape=shape)[:n_images - len(images)])
        k += 1
    return images


MANIFEST_NAME = "manifest.tsv"


def write_corpus(images, outdir, seed=None):
    """Store images as binary PGM plus a tab-separated manifest."""
    os.makedirs(outdir, exist_ok=True)
    lines = [f"# tinydesc corpus v1 seed={seed}"]
    for img in images:
        fname = f"{img.group_id}_{img.member}.pgm"
        write_pgm(os.path.join(outdir, fname), img.pixels)
        h, w = img.shape
        lines.append("\t".join([img.family, img.group_id, str(img.seed), str(img.member),
                                f"{h}x{w}", fname]))
    with open(os.path.join(outdir, MANIFEST_NAME), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_corpus(indir):
    path = os.path.join(indir, MANIFEST_NAME)
    images = []
    with open(path) as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            family, gid, seed, member, _, fname = line.rstrip("\n").split("\t")
            pixels = read_pgm(os.path.join(indir, fname))
            images.append(SourceImage(pixels, family, gid, int(seed), int(member)))
    return images


def load_user_images(paths, family="texture", group_id=None):
    """Wrap user-supplied grayscale PGM photographs as one aligned group."""
    images = []
    gid = group_id or f"{family}-user"
    for m, p in enumerate(paths):
        images.append(SourceImage(read_pgm(p), family, gid, 0, m, config={"path": str(p)}))
    shapes = {img.shape for img in images}
    if len(shapes) > 1:
        raise ValueError(f"images in one group must share dimensions, got {sorted(shapes)}")
    return images
