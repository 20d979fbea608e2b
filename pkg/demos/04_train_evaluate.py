"""Short training run followed by verification and retrieval on held-out data.

Takes a minute or two on one core.  Raise ITERATIONS for better numbers.
"""
import time

from tinydesc import evaluation as ev
from tinydesc import synth
from tinydesc.net import build_descriptor_net
from tinydesc.patches import extract_patches
from tinydesc.trainer import TrainConfig, init_rng, train

ITERATIONS = 150

counts = {f: 2 for f in synth.FAMILIES}
train_ds = extract_patches(synth.build_corpus(counts, seed=11), rng=11)
test_ds = extract_patches(synth.build_corpus(counts, seed=12), rng=12)
print("train classes", train_ds.n_classes, "held-out classes", test_ds.n_classes)

config = TrainConfig(batch_size=256, iterations=ITERATIONS, seed=0)
start = time.time()


def progress(k, stats):
    if (k + 1) % 50 == 0:
        print(f"iter {k + 1:4d}  loss {stats.moving_average('loss')[-1]:.3f}  "
              f"solved {stats.moving_average('frac_solved')[-1]:.3f}  {time.time() - start:.0f}s")


net, stats = train(train_ds, config, progress=progress)
untrained = build_descriptor_net(init_rng(config.seed))

for tier in ("easy", "hard", "tough"):
    pairs, rset = ev.make_tiered_benchmark(test_ds, tier, rng=5, n_pairs=200, n_queries=200,
                                           pool_size=500, ladder=(100, 500))
    for name, model in (("untrained", untrained), ("trained", net)):
        v = ev.verify(model, pairs).metrics
        r = ev.retrieve(model, rset).metrics
        print(f"{tier:5s} {name:9s} AP inter {v['inter']:.3f} intra {v['intra']:.3f}  "
              f"mAP@100 {r['100']:.3f} mAP@500 {r['500']:.3f}")
print("chance mAP@100:", round(ev.random_baseline_map(100), 3))
