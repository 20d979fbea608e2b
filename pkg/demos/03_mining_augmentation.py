"""From source images to labelled patches and augmented triplets."""
import numpy as np

from tinydesc import synth
from tinydesc.augment import AugmentSchedule, plan_augmentation
from tinydesc.patches import extract_patches
from tinydesc.trainer import sample_batch

images = synth.build_corpus({f: 2 for f in synth.FAMILIES}, seed=3)
ds = extract_patches(images, rng=3)
print(len(ds), "patches in", ds.n_classes, "classes")
print("classes by size:", ds.histogram())
print("first class comes from", ds.provenance[0])

# the schedule: shuffle, then position i survives with p0 * decay**i
schedule = AugmentSchedule()
print([round(schedule.probability(i), 4) for i in range(5)])
rng = np.random.default_rng(0)
for _ in range(3):
    print(plan_augmentation(schedule.anchor_transforms, schedule, rng))

# a small batch of triplets; singleton anchors reuse themselves as positives
batch = sample_batch(ds, 8, rng=1, schedule=schedule)
same = batch.anchor_idx == batch.positive_idx
print("anchors:", batch.anchor_idx, "self-positives:", int(same.sum()))
print("mean abs change from augmentation:",
      np.abs(batch.anchors.astype(int) - ds.patches[batch.anchor_idx]).mean().round(2))
