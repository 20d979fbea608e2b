"""Synthetic source images, including Hough-transformed dot fields."""
import os
import tempfile

import numpy as np

from tinydesc import synth
from tinydesc.fht import fht

rng = np.random.default_rng(1)

# a single bright pixel lights up exactly one line per drift
img = np.zeros((8, 8), dtype=np.int64)
img[5, 3] = 1
print(fht(img))

# the generator blurs a few dots and transforms the result
src = synth.gen_fht_patch(synth.FhtPatchConfig(64, 5, 2.0), rng)
print("fht source", src.pixels.shape, src.pixels.min(), src.pixels.max())

# one group per family, written out as PGM files you can open in any viewer
images = synth.build_corpus({f: 1 for f in synth.FAMILIES}, seed=7)
out = os.path.join(tempfile.gettempdir(), "tinydesc_demo_corpus")
synth.write_corpus(images, out, seed=7)
for img in images:
    print(f"{img.group_id:18s} member {img.member} {img.shape}")
print("written to", out)

# reference proportions at 1% scale
print(synth.family_targets(0.01))
