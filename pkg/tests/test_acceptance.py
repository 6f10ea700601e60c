"""Acceptance gate: the ten headline properties, each printing one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` or as part of the
full suite (the verdict lines are printed even when output is captured).
"""

import time

import numpy as np
import pytest

from conftest import (
    central_differences,
    gradient_close,
    logistic_model,
    logistic_recursion,
    model_loss,
    naive_recount,
    random_model,
    synthetic_traces,
)
from pgdlab import harness
from pgdlab.analytics import bin_by_confidence, success_by_iteration, success_rate
from pgdlab.attack import AttackConfig, AttackTrace, attack_dataset, attack_image, load_traces
from pgdlab.classifier import checkpoint_digest, load_checkpoint, predict, save_checkpoint
from pgdlab.datagen import Image, load_image, save_image
from pgdlab.tensor import Tape, Tensor, backward, softmax_cross_entropy

pytestmark = pytest.mark.slow


@pytest.fixture
def verdict(capsys):
    def report(number: int, title: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, f"criterion {number} failed: {detail}"

    return report


def test_criterion_01_gradient_correctness(verdict):
    rng = np.random.default_rng(20190101)
    start = time.perf_counter()
    entries = bad = fallbacks = 0
    worst = 0.0
    sizes = []
    for _ in range(20):
        model, x, y = random_model(rng, max_params=10_000)
        sizes.append(model.num_parameters)
        with Tape() as tape:
            pt = {k: Tensor(v) for k, v in model.params.items()}
            xt = Tensor(x)
            loss = softmax_cross_entropy(model.logits(xt, pt), y)
        g = backward(tape, loss)
        analytic = {k: g[t] for k, t in pt.items()} | {"x": g[xt]}
        numeric, fb = central_differences(
            lambda L: model_loss(model, {k: v for k, v in L.items() if k != "x"}, L["x"], y),
            dict(model.params, x=x))
        fallbacks += fb
        for name, arr in numeric.items():
            for a, n in zip(analytic[name].ravel(), arr.ravel()):
                entries += 1
                bad += not gradient_close(a, n)
                if abs(a) >= 1e-3:
                    worst = max(worst, abs(a - n) / max(abs(a), abs(n)))
    elapsed = time.perf_counter() - start
    verdict(1, "gradient correctness", bad == 0 and elapsed < 60 and max(sizes) <= 10_000,
            f"{entries} entries over 20 models ({min(sizes)}..{max(sizes)} params), {bad} mismatches, "
            f"worst rel err {worst:.2e}, {fallbacks} kink fallbacks, {elapsed:.1f}s")


def test_criterion_02_pgd_oracle(verdict):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        w, b, x0 = rng.uniform(-10, 10), rng.uniform(-3, 3), rng.uniform(0, 1)
        lr, eps = rng.uniform(0, 5), rng.uniform(0, 0.5)
        _, ps = logistic_recursion(w, b, x0, lr, eps, 3)
        trace = attack_image(logistic_model(w, b), Image("p", np.full((1, 1, 1), x0), 0),
                             AttackConfig(epsilon=eps, lr=lr, max_iter=3))
        worst = max(worst, float(np.max(np.abs(trace.per_iteration_probabilities[:, 0] - ps))))
    elapsed = time.perf_counter() - start
    verdict(2, "PGD oracle equivalence", worst <= 1e-10 and elapsed < 5,
            f"100 parameterizations x 3 steps, max |diff| {worst:.2e}, {elapsed:.2f}s")


def test_criterion_03_epsilon_ball(verdict, tmp_path):
    cfg = harness.ExperimentConfig(output_dir=str(tmp_path), dataset_n_per_class=500)
    prep = harness.prepare(cfg)
    originals = {im.id: im.pixels for im in prep.split.validation}
    checks = violations = 0
    for eps in cfg.study_epsilons:
        def observe(image_id, k, x, eps=eps):
            nonlocal checks, violations
            checks += 1
            x0 = originals[image_id]
            if np.max(np.abs(x - x0)) > eps + 1e-12 or x.min() < 0.0 or x.max() > 1.0:
                violations += 1

        attack_dataset(prep.model, prep.split.validation, cfg.attack_config(epsilon=eps), observer=observe)
    n_val = len(prep.split.validation)
    expected = len(cfg.study_epsilons) * n_val * cfg.attack_max_iter
    verdict(3, "epsilon-ball invariant", violations == 0 and checks == expected and n_val >= 200,
            f"{len(cfg.study_epsilons)} eps x {n_val} images x {cfg.attack_max_iter} iterations = "
            f"{checks} iterates, {violations} violations")


def test_criterion_04_zero_power(verdict, trained_fixture):
    val = trained_fixture.split.validation
    rates = {}
    for label, cfg in [("eps=0", AttackConfig(epsilon=0.0)), ("lr=0", AttackConfig(lr=0.0)),
                       ("eps=0,clip-gradient", AttackConfig(epsilon=0.0, clip_variant="clip-gradient"))]:
        traces = attack_dataset(trained_fixture.model, val, cfg)
        rates[label] = success_rate(traces, mode="cumulative")
    ok = all(r.successful == 0 for r in rates.values())
    verdict(4, "zero-power attack", ok,
            ", ".join(f"{k}: {r.successful}/{r.eligible}" for k, r in rates.items()))


def test_criterion_05_epsilon_trend(verdict, tmp_path):
    cfg = harness.ExperimentConfig(output_dir=str(tmp_path))
    start = time.perf_counter()
    prep = harness.prepare(cfg)
    res = harness.run_epsilon_sweep(cfg, prep)
    elapsed = time.perf_counter() - start
    acc = prep.train_report.validation_accuracy
    low, high = res.result.points[0], res.result.points[-1]
    ok = (len(prep.split.train), len(prep.split.validation)) == (200, 50) and acc >= 0.9 \
        and high.rate >= low.rate and elapsed < 600
    verdict(5, "success grows with epsilon", ok,
            f"200/50 split, accuracy {acc:.3f}, rate(0.02)={low.rate:.3f} ({low.successful}/{low.eligible}), "
            f"rate(0.20)={high.rate:.3f} ({high.successful}/{high.eligible}), {elapsed:.1f}s")


def test_criterion_06_iteration_asymptote(verdict, trained_fixture, fixture_config):
    traces = attack_dataset(trained_fixture.model, trained_fixture.split.validation, fixture_config.attack_config())
    curve = success_by_iteration(traces, "cumulative")
    r = [0.0] + curve.rates  # rate before any step is 0: eligible images start correctly classified
    monotone = all(b >= a for a, b in zip(r, r[1:]))
    first, last = r[5] - r[0], r[20] - r[15]
    verdict(6, "success by iteration levels off", monotone and last <= first,
            f"eps={fixture_config.attack_epsilon}, non-decreasing={monotone}, first-5 gain {first:.3f}, "
            f"last-5 gain {last:.3f}, final {r[-1]:.3f}")


def test_criterion_07_confidence_bins(verdict, trained_fixture, fixture_config):
    probs = np.array([0.81, 0.19])
    worked = AttackTrace("worked", 0, np.log(probs), probs, np.log(probs)[None], probs[None], AttackConfig(max_iter=1))
    (hit,) = [b for b in bin_by_confidence([worked]).bins if b.eligible]
    example = hit.low, hit.high
    traces = attack_dataset(trained_fixture.model, trained_fixture.split.validation, fixture_config.attack_config())
    report = bin_by_confidence(traces, mode="cumulative")
    top = report.bins[9]
    low_s, low_e = report.pooled(0.5, 0.8)
    low_s += report.overflow.successful
    low_e += report.overflow.eligible
    trend = low_e > 0 and top.eligible > 0 and top.rate <= low_s / low_e
    verdict(7, "confidence binning", example == (0.8, 0.85) and trend,
            f"0.81 -> [{example[0]:.2f}, {example[1]:.2f}], top bin {top.successful}/{top.eligible}, "
            f"bins below 0.80 {low_s}/{low_e}")


def test_criterion_08_dataset_size_machinery(verdict, tmp_path):
    cfg = harness.ExperimentConfig(output_dir=str(tmp_path / "study"))
    out = tmp_path / "study"

    def snapshot():
        return {p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}

    harness.run_dataset_size_study(cfg)
    first = snapshot()
    harness.run_dataset_size_study(cfg)  # rerun in place
    second = snapshot()
    files = sorted(first)
    differing = [str(f) for f in files if first[f] != second.get(f)]
    same_files = sorted(second) == files
    id_sets = {tuple(t.image_id for t in load_traces(p)[0]) for p in sorted((out / "traces").glob("fraction_*"))}
    n_models = len(list(out.glob("model_fraction_*.ckpt")))
    ok = not differing and same_files and len(id_sets) == 1 and n_models == 5
    verdict(8, "dataset-size study determinism", ok,
            f"{len(files)} output files, {len(differing)} differ between reruns, "
            f"{n_models} retrained models, validation id lists across fractions: {len(id_sets)} distinct")


def test_criterion_09_analytics_brute_force(verdict):
    traces = synthetic_traces(np.random.default_rng(9), 1000, max_iter=10)
    mismatches = 0
    comparisons = 0
    for mode in ("instant", "cumulative"):
        curve = success_by_iteration(traces, mode)
        for k in range(1, 11):
            wins, elig, bins, over = naive_recount(traces, k, mode)
            r = success_rate(traces, k, mode)
            rep = bin_by_confidence(traces, k, mode)
            got = [(r.successful, r.eligible), (curve.points[k - 1].successful, curve.points[k - 1].eligible),
                   [[b.eligible, b.successful] for b in rep.bins], [rep.overflow.eligible, rep.overflow.successful]]
            want = [(wins, elig), (wins, elig), bins, over]
            comparisons += 1
            mismatches += got != want
    verdict(9, "analytics brute-force equivalence", mismatches == 0,
            f"1000 traces ({elig} eligible), {comparisons} (mode, iteration) cells, {mismatches} mismatches")


def test_criterion_10_io_round_trips(verdict, trained_fixture, tmp_path):
    model = trained_fixture.model
    save_checkpoint(model, tmp_path / "m.ckpt", {"k": "v"})
    loaded, _ = load_checkpoint(tmp_path / "m.ckpt")
    params_equal = all(loaded.params[k].tobytes() == v.tobytes() for k, v in model.params.items())
    preds_equal = all(predict(loaded, im)[0].tobytes() == predict(model, im)[0].tobytes()
                      for im in trained_fixture.split.validation)
    rng = np.random.default_rng(10)
    worst = 0.0
    for i, shape in enumerate([(32, 32, 1), (17, 9, 3), (1, 1, 1), (64, 48, 3)]):
        im = Image(f"io{i}", rng.uniform(size=shape), 0)
        path = tmp_path / f"io{i}.{'pgm' if shape[2] == 1 else 'ppm'}"
        save_image(im, path)
        worst = max(worst, float(np.max(np.abs(load_image(path).pixels - im.pixels))))
    ok = params_equal and preds_equal and checkpoint_digest(loaded) == checkpoint_digest(model) and worst <= 1 / 65535
    verdict(10, "IO round-trips", ok,
            f"checkpoint params bit-identical={params_equal}, predictions bit-identical={preds_equal}, "
            f"max PGM/PPM error {worst * 65535:.3f}/65535")
