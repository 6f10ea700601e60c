import math

import numpy as np
import pytest

from pgdlab import harness
from pgdlab.classifier import ClassifierModel
from pgdlab.tensor import Tape, Tensor, softmax_cross_entropy

FD_STEP = 1e-4
REL_TOL = 1e-5
ABS_TOL = 1e-7  # used when the analytic entry is below 1e-3 in magnitude


def gradient_close(analytic: float, numeric: float) -> bool:
    if abs(analytic) < 1e-3 and abs(analytic - numeric) < ABS_TOL:
        return True
    denom = max(abs(analytic), abs(numeric))
    return denom == 0.0 or abs(analytic - numeric) / denom < REL_TOL


def _kink_signature(tape: Tape) -> tuple:
    """Which side of every relu / max-pool decision the forward pass took."""
    sig = []
    for rec in tape.records:
        x = rec.inputs[0].data
        if rec.kind == "relu":
            sig.append((x > 0).tobytes())
        elif rec.kind == "max-pool":
            n, h, w, c = x.shape
            blocks = x[:, : h // 2 * 2, : w // 2 * 2].reshape(n, h // 2, 2, w // 2, 2, c)
            sig.append(blocks.transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4).argmax(-1).tobytes())
    return tuple(sig)


def model_loss(model: ClassifierModel, params: dict, x: np.ndarray, labels) -> tuple[float, tuple]:
    """Cross-entropy and the kink signature of one forward pass."""
    with Tape() as tape:
        pt = {k: Tensor(v) for k, v in params.items()}
        loss = softmax_cross_entropy(model.logits(Tensor(x), pt), labels)
    return loss.item(), _kink_signature(tape)


def central_differences(fn, leaves: dict[str, np.ndarray], h: float = FD_STEP):
    """Numeric gradient of ``fn(leaves) -> (value, signature)`` by central differences.

    Where x +- h lands in a different linear piece than x (relu / max-pool
    decision changes), h is divided by 10 until both sides agree.  Returns the
    gradients and the number of entries that needed a smaller step.
    """
    _, sig0 = fn(leaves)
    grads, fallbacks = {}, 0
    for name, arr in leaves.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            step = h
            while True:
                plus = dict(leaves)
                minus = dict(leaves)
                a = arr.copy()
                a[idx] += step
                plus[name] = a
                b = arr.copy()
                b[idx] -= step
                minus[name] = b
                fp, sp = fn(plus)
                fm, sm = fn(minus)
                if (sp == sig0 and sm == sig0) or step < 1e-9:
                    break
                step /= 10
            if step != h:
                fallbacks += 1
            g[idx] = (fp - fm) / (2 * step)
        grads[name] = g
    return grads, fallbacks


def random_model(rng: np.random.Generator, max_params: int = 10_000) -> tuple[ClassifierModel, np.ndarray, np.ndarray]:
    """A small random architecture from the layer vocabulary, random inputs and labels."""
    while True:
        side = int(rng.choice([6, 8]))
        channels = int(rng.integers(1, 4))
        num_classes = int(rng.integers(2, 5))
        toks = []
        k = int(rng.choice([1, 3]))
        stride = "s2" if rng.random() < 0.3 else ""
        pad = "v" if rng.random() < 0.3 else ""
        toks += [f"conv{k}x{k}x{int(rng.integers(2, 7))}{stride}{pad}", "relu"]
        if rng.random() < 0.6:
            toks.append("pool")
        if rng.random() < 0.5:
            toks += [f"conv3x3x{int(rng.integers(2, 4))}", "relu"]
        toks.append("flatten")
        if rng.random() < 0.7:
            toks += [f"dense{int(rng.integers(3, 17))}", "relu"]
        toks.append(f"dense{num_classes}")
        try:
            model = ClassifierModel.build("-".join(toks), (side, side, channels), num_classes,
                                          seed=int(rng.integers(2**31)))
        except ValueError:
            continue
        if model.num_parameters > max_params:
            continue
        params = {n: (p + rng.normal(0, 0.1, p.shape) if n.endswith(".bias") else p)
                  for n, p in model.params.items()}
        model = model.with_params(params)
        x = rng.uniform(0, 1, size=(2, side, side, channels))
        labels = rng.integers(0, num_classes, size=2)
        return model, x, labels


def sigmoid(z: float) -> float:
    return 1.0 / (1.0 + math.exp(-z))


def logistic_model(w: float, b: float) -> ClassifierModel:
    """Two-class model on a 1-pixel image with P(class 0) = sigmoid(w x + b)."""
    return ClassifierModel("dense2", (1, 1, 1), 2, {
        "dense1.weight": np.array([[w, 0.0]]),
        "dense1.bias": np.array([b, 0.0]),
    })


def logistic_recursion(w, b, x0, lr, eps, steps):
    """Closed-form PGD iterates on the logistic model (project-iterate variant).

    Returns the iterates x_1..x_steps and P(class 0) at each.
    """
    p_target = 0 if w * x0 + b >= 0 else 1
    lo, hi = max(x0 - eps, 0.0), min(x0 + eps, 1.0)
    x, xs, ps = x0, [], []
    for _ in range(steps):
        s = sigmoid(w * x + b)
        slope = s * (1 - s) * w
        grad = slope if p_target == 0 else -slope
        x = min(max(x - lr * grad, lo), hi)
        xs.append(x)
        ps.append(sigmoid(w * x + b))
    return xs, ps


@pytest.fixture(scope="session")
def fixture_config(tmp_path_factory) -> harness.ExperimentConfig:
    """Default seeded shape fixture: 125 images/class, 200 train / 50 validation."""
    return harness.ExperimentConfig(output_dir=str(tmp_path_factory.mktemp("fixture")))


@pytest.fixture(scope="session")
def trained_fixture(fixture_config) -> harness.Prepared:
    return harness.prepare(fixture_config)


def synthetic_traces(rng: np.random.Generator, n: int, max_iter: int = 8):
    """Random traces with exact bin-edge confidences, misclassified and incomplete members mixed in."""
    from pgdlab.attack import AttackConfig, AttackTrace

    cfg = AttackConfig(max_iter=max_iter)
    c = int(rng.integers(2, 5))
    edges = [0.5 + 0.05 * i for i in range(11)] + [0.8, 0.95, 1.0, 0.7, 0.65]
    out = []
    for i in range(n):
        label = int(rng.integers(c))
        r = rng.random()
        if r < 0.3:
            top = float(rng.choice(edges))
        elif r < 0.35:
            top = float(rng.uniform(1.0 / c, 0.5))
        else:
            top = float(rng.uniform(0.5, 1.0))
        rest = rng.dirichlet(np.ones(c - 1)) * (1.0 - top) if c > 1 else np.zeros(0)
        cls = label if rng.random() < 0.8 else int(rng.integers(c))
        probs = np.insert(rest, cls, top)
        rows = rng.dirichlet(np.ones(c) * 0.7, size=max_iter)
        # let some trajectories keep the true label for a few steps
        stay = int(rng.integers(0, max_iter + 1))
        for k in range(stay):
            rows[k] = np.full(c, 0.1 / max(c - 1, 1))
            rows[k, label] = 0.9 if c > 1 else 1.0
        error = None
        if rng.random() < 0.05:
            rows = rows[: int(rng.integers(0, max_iter))]
            error = "synthetic failure"
        out.append(AttackTrace(f"t{i}", label, np.log(probs + 1e-12), probs, np.log(rows + 1e-12), rows, cfg, error))
    return out


def naive_first_argmax(values) -> int:
    best = 0
    for j in range(1, len(values)):
        if values[j] > values[best]:
            best = j
    return best


def naive_recount(traces, at_iteration: int, mode: str):
    """(successful, eligible, per-bin [eligible, successful] x 10, overflow) by explicit loops.

    Bin membership compares the confidence's shortest decimal form to exact
    decimal edges, independent of floating-point edge arithmetic.
    """
    from decimal import Decimal

    edges = [Decimal("0.5") + Decimal("0.05") * i for i in range(11)]
    wins = elig = 0
    bins = [[0, 0] for _ in range(10)]
    over = [0, 0]
    for t in traces:
        if t.error is not None or len(t.per_iteration_probabilities) != t.config.max_iter:
            continue
        if naive_first_argmax(list(t.original_probabilities)) != t.true_label:
            continue
        elig += 1
        hits = [naive_first_argmax(list(t.per_iteration_probabilities[k])) != t.true_label
                for k in range(at_iteration)]
        ok = hits[-1] if mode == "instant" else any(hits)
        wins += ok
        conf = Decimal(repr(float(max(t.original_probabilities))))
        slot = over
        for i in range(10):
            if edges[i] <= conf and (conf < edges[i + 1] or (i == 9 and conf <= edges[10])):
                slot = bins[i]
        slot[0] += 1
        slot[1] += ok
    return wins, elig, bins, over
