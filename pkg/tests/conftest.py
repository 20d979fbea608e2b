import numpy as np
import pytest

from tinydesc import synth
from tinydesc.patches import extract_patches


def central_difference(f, x, eps=1e-3, indices=None):
    """Central finite differences of scalar ``f`` w.r.t. array ``x`` (modified in place)."""
    flat = x.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    out = {}
    for i in indices:
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        out[i] = (up - down) / (2 * eps)
    return out


def max_relative_error(analytic, numeric, floor=1e-6):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def _regime(net, batch, alpha):
    """Which clamps are in their linear band and which triplets are active."""
    from tinydesc.net import normalize_patches
    from tinydesc.trainer import triplet_objective

    x = normalize_patches(np.concatenate([batch.anchors, batch.positives, batch.negatives]), net.dtype)
    out, cache = net.forward_float(x, keep_cache=True)
    masks = [np.abs(z) < layer.activation.a for layer, (_, z) in zip(net.layers, cache)
             if layer.activation.kind == "symrelu"]
    b = len(batch)
    losses = triplet_objective(out[:b], out[b:2 * b], out[2 * b:], alpha)[4]
    return masks, losses > 0


def _same_regime(r1, r2):
    return all(np.array_equal(a, b) for a, b in zip(r1[0], r2[0])) and np.array_equal(r1[1], r2[1])


def triplet_gradient_check(net, batch, rng, per_array=12, eps=1e-3, alpha=1.5, max_tries=200):
    """Compare backprop with central differences on the full triplet objective.

    Finite differences are only an oracle where the loss is smooth across
    ``[w - eps, w + eps]``, so entries whose perturbation moves any clamp
    across its saturation point or flips a hinge are skipped and counted.
    Returns ``(max_relative_error, entries compared per array, skipped)``.
    """
    from tinydesc.trainer import batch_loss_and_grads

    _, grads, _, _, _ = batch_loss_and_grads(net, batch, alpha)
    base = _regime(net, batch, alpha)
    worst, compared, skipped = 0.0, [], 0
    for arr, grad in zip(net.parameters(), grads):
        flat = arr.reshape(-1)
        candidates = rng.permutation(flat.size)[:max_tries]
        used = 0
        for i in candidates:
            if used == per_array:
                break
            orig = flat[i]
            flat[i] = orig + eps
            up, r_up = batch_loss_and_grads(net, batch, alpha)[0], _regime(net, batch, alpha)
            flat[i] = orig - eps
            down, r_down = batch_loss_and_grads(net, batch, alpha)[0], _regime(net, batch, alpha)
            flat[i] = orig
            if not (_same_regime(base, r_up) and _same_regime(base, r_down)):
                skipped += 1
                continue
            worst = max(worst, max_relative_error([grad.reshape(-1)[i]], [(up - down) / (2 * eps)]))
            used += 1
        compared.append(used)
    return worst, compared, skipped


@pytest.fixture(scope="session")
def small_dataset():
    images = synth.build_corpus({f: 1 for f in synth.FAMILIES}, seed=3)
    return extract_patches(images, rng=3)


ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


@pytest.fixture
def record(request):
    """``record(number, title, ok, detail)`` logs one acceptance line."""
    lines = request.config.stash[ACCEPTANCE_LINES]

    def _record(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} | {detail}"
        lines.append((number, line))
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
