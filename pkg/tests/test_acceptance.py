"""Acceptance criteria 1-9, each at its stated tolerance.

Every test records a one-line ``criterion N: PASS|FAIL`` verdict, shown in
the terminal summary, before asserting.
"""

import time
from fractions import Fraction

import numpy as np
import pytest

from segrc.calibration import cross_entropy, fit_isotonic
from segrc.cli import main
from segrc.evaluation import run_trials
from segrc.methods import MethodSpec, fit, predict
from segrc.risk_quantile import (collect_weighted_scores, grid_search_threshold,
                                 weighted_quantile_threshold)
from segrc.scores import adaptive_set, cra_score, threshold_set
from segrc.synthetic import SynthConfig, generate

ALPHAS = (0.05, 0.10, 0.20)
METHODS = ("crc", "cra", "ccra", "ccra-s")


@pytest.fixture
def verdict(record_property):
    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
        print(line)
        record_property("acceptance", line)
        return ok
    return record


def random_map(rng):
    h, w = rng.integers(1, 33, size=2)
    kind = rng.integers(3)
    if kind == 0:
        p = rng.random((h, w))
    elif kind == 1:
        # heavy ties: a few distinct levels
        p = rng.choice(rng.random(rng.integers(1, 5)), size=(h, w))
    else:
        p = np.round(rng.random((h, w)), 1)
    if p.sum() == 0:
        p[0, 0] = 0.5
    return p


def test_criterion_1_adaptive_set_equals_threshold_set(verdict):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    mismatches = strict_mismatches = 0
    n_maps = 10_000
    for _ in range(n_maps):
        p = random_map(rng)
        a = rng.random()
        adaptive = adaptive_set(p, a)
        s = cra_score(p)
        mismatches += not np.array_equal(adaptive, threshold_set(s, 1 - a))
        strict_mismatches += not np.array_equal(adaptive, s > a)
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 30
    verdict(1, ok, f"adaptive_set == threshold_set(cra, 1-a) failed on {mismatches}/{n_maps} "
                   f"maps in {elapsed:.1f}s (adaptive_set == cra > a failed on "
                   f"{strict_mismatches})")
    assert strict_mismatches == 0
    assert elapsed < 30
    assert mismatches == 0


def test_criterion_2_weighted_quantile_matches_grid(verdict):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    bad = 0
    n_sets = 1000
    for _ in range(n_sets):
        m = int(rng.integers(2, 60))
        images = []
        for _ in range(rng.integers(1, 21)):
            n_pix = int(rng.integers(1, 65))
            s = rng.integers(0, m + 1, size=n_pix) / m
            y = (rng.random(n_pix) < rng.uniform(0.1, 0.9)).astype(np.uint8)
            if rng.random() < 0.1:
                y[:] = 0
            images.append((s, y))
        if not any(y.any() for _, y in images):
            images[0][1][0] = 1
        alpha = rng.uniform(0.01, 0.6)
        values = np.unique(np.concatenate([[0.0, 1.0]] + [s for s, _ in images]))
        step = np.diff(values).min() / 2
        t_wq = weighted_quantile_threshold(collect_weighted_scores(images), alpha=alpha).tau
        t_grid = grid_search_threshold(images, alpha=alpha, grid_step=step).tau
        bad += any(not np.array_equal(threshold_set(s, t_wq), threshold_set(s, t_grid))
                   for s, _ in images)
    elapsed = time.perf_counter() - start
    ok = bad == 0 and elapsed < 60
    verdict(2, ok, f"{bad}/{n_sets} calibration sets with differing prediction sets, "
                   f"{elapsed:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def monte_carlo():
    # 250 validation, 500 calibration and 500 test images per trial
    data = generate(SynthConfig(n_images=1250, height=32, width=32,
                                object_scale_range=(0.01, 0.3), miscalibration="sharpen",
                                gamma=2.0, noise_sd=0.5, seed=2024))
    specs = [MethodSpec(m, a, K=4) for m in METHODS for a in ALPHAS]
    reports = run_trials(data, specs, n_trials=100, cal_frac=0.4, val_frac=0.2, seed=0)
    return {(r.method, r.alpha): r for r in reports}


def test_criterion_3_marginal_risk_control(monte_carlo, verdict):
    worst = []
    ok = True
    for (method, alpha), rep in monte_carlo.items():
        assert rep.n_trials == 100 and rep.n_test == 500
        fnr = 1 - rep.per_trial("marginal_coverage")
        se = fnr.std(ddof=1) / np.sqrt(fnr.size)
        slack = alpha + 3 * se - fnr.mean()
        ok &= bool(slack >= 0)
        worst.append((slack, method, alpha, fnr.mean(), se))
    slack, method, alpha, mean, se = min(worst)
    verdict(3, ok, f"tightest: {method} alpha={alpha} mean FNR {mean:.4f} vs "
                   f"alpha + 3 SE = {alpha + 3 * se:.4f}")
    assert ok


def test_criterion_4_per_stratum_risk_control(monte_carlo, verdict):
    ok = True
    checked = 0
    worst = (np.inf, None)
    for alpha in ALPHAS:
        rep = monte_carlo[("CCRA-S", alpha)]
        for k in range(4):
            f = rep.stratum_fnr(k, min_n=20)
            if f.size < 2:
                continue
            checked += 1
            se = f.std(ddof=1) / np.sqrt(f.size)
            slack = alpha + 3 * se - f.mean()
            ok &= bool(slack >= 0)
            worst = min(worst, (slack, (alpha, k, f.mean(), se, f.size)))
    alpha, k, mean, se, n = worst[1]
    ok &= checked > 0
    verdict(4, ok, f"{checked} (alpha, stratum) cells; tightest alpha={alpha} stratum {k}: "
                   f"mean FNR {mean:.4f} vs {alpha + 3 * se:.4f} over {n} trials")
    assert ok


def test_criterion_5_coverage_gap_improvement(monte_carlo, verdict):
    crc = monte_carlo[("CRC", 0.10)].per_trial("coverage_gap")
    ccra_s = monte_carlo[("CCRA-S", 0.10)].per_trial("coverage_gap")
    d = crc - ccra_s
    se = d.std(ddof=1) / np.sqrt(d.size)
    ok = bool(ccra_s.mean() < crc.mean() and d.mean() > 2 * se)
    verdict(5, ok, f"gap CRC {crc.mean():.4f} vs CCRA-S {ccra_s.mean():.4f}; paired "
                   f"difference {d.mean():.4f} vs 2 SE = {2 * se:.4f}")
    assert ok


def test_criterion_6_isotonic_optimality(verdict):
    rng = np.random.default_rng(6)
    n_fits = 200
    monotone = block_mean = beats = 0
    for _ in range(n_fits):
        n = int(rng.integers(10, 5000))
        raw = np.round(rng.random(n), int(rng.integers(1, 5)))
        truth = raw ** rng.uniform(0.3, 3.0)
        labels = (rng.random(n) < truth).astype(np.uint8)
        n_bins = [None, 10, 100, 1000][rng.integers(4)]
        c = fit_isotonic(raw, labels, n_bins=n_bins)
        monotone += bool(np.all(np.diff(c.knots_cal) >= 0))

        eps = c.clip_epsilon
        starts = np.flatnonzero(np.r_[True, c.knots_cal[1:] != c.knots_cal[:-1]])
        ends = np.r_[starts[1:], c.knots_cal.size]
        exact = True
        for a, b in zip(starts, ends):
            mean = float(Fraction(int(c.label_sums[a:b].sum()), int(c.counts[a:b].sum())))
            exact &= c.knots_cal[a] == min(max(mean, eps), 1 - eps)
        block_mean += exact

        best = cross_entropy(c.knots_cal, c.counts, c.label_sums)
        rand = np.sort(rng.uniform(eps, 1 - eps, size=(1000, c.knots_cal.size)), axis=1)
        others = [cross_entropy(r, c.counts, c.label_sums) for r in rand]
        beats += bool(best <= min(others))
    ok = monotone == block_mean == beats == n_fits
    verdict(6, ok, f"nondecreasing {monotone}/{n_fits}, exact block means "
                   f"{block_mean}/{n_fits}, beats 1000 random step functions {beats}/{n_fits}")
    assert ok


def random_dataset(seed, n_images=60):
    rng = np.random.default_rng(seed)
    mode = ["none", "sharpen", "flatten"][rng.integers(3)]
    h, w = (int(v) for v in rng.integers(4, 24, size=2))
    cfg = SynthConfig(n_images=n_images, height=h, width=w, miscalibration=mode,
                      gamma=float(rng.uniform(1.0, 3.0)), noise_sd=float(rng.uniform(0, 1)),
                      n_blobs=int(rng.integers(1, 3)), seed=seed)
    samples = generate(cfg)
    order = rng.permutation(n_images)
    k = n_images // 3
    pick = lambda idx: [(samples[i].probs, samples[i].mask) for i in idx]
    return pick(order[:k]), pick(order[k:2 * k]), pick(order[2 * k:]), float(rng.uniform(0.05, 0.3))


def test_criterion_7_crc_monotone_invariance(verdict):
    n_sets = 100
    same = 0
    for seed in range(n_sets):
        _, cal, test, alpha = random_dataset(7000 + seed)
        base = fit(MethodSpec("crc", alpha), None, cal)
        ok_set = True
        for transform in (np.square, np.sqrt):
            tcal = [(transform(p.astype(np.float64)), m) for p, m in cal]
            tfit = fit(MethodSpec("crc", alpha), None, tcal)
            ok_set &= all(np.array_equal(predict(base, p),
                                         predict(tfit, transform(p.astype(np.float64))))
                          for p, _ in test)
        same += ok_set
    ok = same == n_sets
    verdict(7, ok, f"identical CRC sets under x^2 and sqrt(x) on {same}/{n_sets} datasets")
    assert ok


def test_criterion_8_eval_deterministic(tmp_path, verdict):
    data = tmp_path / "data"
    assert main(["synth", "--n", "80", "--size", "16x16", "--miscal", "sharpen:2.0",
                 "--noise-sd", "0.5", "--seed", "8", "--out", str(data)]) == 0
    argv = ["eval", "--methods", "crc,cra,ccra,ccra-s", "--alpha", "0.1", "--trials", "3",
            "--k", "2", "--min-stratum-size", "5", "--manifest", str(data / "manifest.csv"),
            "--seed", "3"]
    assert main(argv + ["--out", str(tmp_path / "r1")]) == 0
    assert main(argv + ["--out", str(tmp_path / "r2")]) == 0
    names = sorted(p.name for p in (tmp_path / "r1").iterdir())
    same = [n for n in names
            if (tmp_path / "r1" / n).read_bytes() == (tmp_path / "r2" / n).read_bytes()]
    ok = len(names) == 4 and same == names
    verdict(8, ok, f"{len(same)}/{len(names)} CSVs byte-identical across two eval runs")
    assert ok


def test_criterion_9_single_stratum_equals_ccra(verdict):
    n_sets = 50
    same = 0
    for seed in range(n_sets):
        val, cal, test, alpha = random_dataset(9000 + seed)
        a = fit(MethodSpec("ccra", alpha), val, cal)
        b = fit(MethodSpec("ccra-s", alpha, K=1), val, cal)
        same += all(np.array_equal(predict(a, p), predict(b, p)) for p, _ in test)
    ok = same == n_sets
    verdict(9, ok, f"identical CCRA-S(K=1) and CCRA sets on {same}/{n_sets} datasets")
    assert ok
