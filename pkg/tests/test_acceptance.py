"""End-to-end acceptance checks, one test per criterion.

Each check records a ``criterion N: PASS|FAIL`` line. The lines are printed
as they are produced (visible with ``-s``) and repeated in the terminal
summary. Checks that cannot be met are marked strict xfail: they still run
in full and print FAIL with the measured numbers.
"""

import subprocess
import sys

import numpy as np
import pytest

from _helpers import ACCEPTANCE_LINES
from test_explain import TANGENT_CASES, box, parts_of
from gapforest.benchmarks import gaussian_2d, load_benchmark, mnist_4_9
from gapforest.dataset import impute_mean, inject_mcar, write_csv
from gapforest.embed import classical_mds, prepare_distances, spearman_rho
from gapforest.explain import build_trajectory, estimate_gradients, segment_intersections
from gapforest.forest import ForestParams
from gapforest.gap import (
    clamp_infinite,
    direct_oob_vote,
    gap_proximity,
    oob_predict_via_proximity,
    voting_trees,
)
from gapforest.pipeline import FitOptions, fit_model, gap_scores
from gapforest.score import auc_roc, euclidean_distances

SEEDS = range(5)


def report(n, title, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def fit(d, mode, seed, **kw):
    return fit_model(d, FitOptions(mode, ForestParams(seed=seed, **kw)))


def gaussian_gap(mode, seed):
    d = gaussian_2d(1000, seed)
    return d, gap_scores(fit(d, mode, seed), d, isolated="zero")


@pytest.fixture(scope="module")
def geometry():
    """RF_uni and ExtraTrees GAP results on the five seeded Gaussian constructions."""
    out = []
    for seed in SEEDS:
        d, uni = gaussian_gap("rf_uni", seed)
        _, et = gaussian_gap("extratrees", seed)
        out.append((d, uni, et))
    return out


def test_criterion_1_row_stochastic():
    worst, skipped = 0.0, 0
    for seed in range(10):
        d = gaussian_2d(500, seed)
        for mode in ("rf_uni", "extratrees"):
            f = fit(d, mode, seed, n_trees=200)
            p = gap_proximity(f, d, isolated="zero")
            voting = voting_trees(f, d).any(axis=1)
            skipped += int((~voting).sum())
            worst = max(worst, float(np.abs(p[voting].sum(axis=1) - 1).max()))
    ok = worst < 1e-12
    report(1, "GAP rows sum to 1", ok,
           f"max |row sum - 1| = {worst:.1e} over 20 fits; {skipped} row(s) with no "
           "voting tree have no defined proximity row")
    assert ok


def test_criterion_2_prediction_reconstruction():
    worst, compared = 0.0, 0
    for seed in SEEDS:
        d = gaussian_2d(500, seed)
        f = fit(d, "rf_uni", seed, n_trees=200)
        p = gap_proximity(f, d, isolated="zero")
        a = oob_predict_via_proximity(f, p, d, skip_isolated=True)
        b = direct_oob_vote(f, d, skip_isolated=True)
        assert np.array_equal(np.isnan(a), np.isnan(b))
        ok_rows = ~np.isnan(a)
        compared += int(ok_rows.sum())
        worst = max(worst, float(np.abs(a[ok_rows] - b[ok_rows]).max()))
    ok = worst < 1e-10
    report(2, "proximity-weighted OOB prediction equals direct vote", ok,
           f"max deviation {worst:.1e} over {compared} rows in 5 fits")
    assert ok


def test_criterion_3_spearman(geometry):
    rows, ok = [], True
    for d, uni, et in geometry:
        E = euclidean_distances(d)
        r_uni, r_et = spearman_rho(E, uni.distances), spearman_rho(E, et.distances)
        ok &= r_et >= r_uni + 0.1 and abs(r_et - 0.95) <= 0.1 and abs(r_uni - 0.77) <= 0.1
        rows.append((r_uni, r_et))
    r = np.array(rows)
    report(3, "Spearman rho with Euclidean, ExtraTrees above RF_uni by 0.1", ok,
           "RF_uni " + " ".join(f"{v:.3f}" for v in r[:, 0])
           + "; ExtraTrees " + " ".join(f"{v:.3f}" for v in r[:, 1])
           + f"; means {r[:, 0].mean():.3f} vs {r[:, 1].mean():.3f}, targets 0.77 and 0.95")
    assert ok


@pytest.mark.xfail(strict=True, reason="RF_uni 2-D stress is lower than ExtraTrees stress")
def test_criterion_4_stress_direction(geometry):
    wins, pairs = 0, []
    for _, uni, et in geometry:
        s_uni = classical_mds(prepare_distances(uni.distances)[0], 2).stress_by_dims[2]
        s_et = classical_mds(prepare_distances(et.distances)[0], 2).stress_by_dims[2]
        wins += s_uni > s_et
        pairs.append(f"{s_uni:.2f}/{s_et:.2f}")
    ok = wins == 5
    report(4, "2-D MDS stress of RF_uni above ExtraTrees", ok,
           f"{wins}/5 seeds; RF_uni/ExtraTrees stress " + " ".join(pairs))
    assert ok


def test_criterion_5_outlier_isolation(geometry):
    ok, details = True, []
    for d, uni, _ in geometry:
        s, clamped = clamp_infinite(uni.scores)
        gap = s[d.labels == 1].mean() > s[d.labels == 0].mean()
        auc = auc_roc(uni.scores, d.labels)
        ok &= gap and auc > 0.9
        details.append(f"{auc:.3f}")
    report(5, "outliers score higher and AUCROC > 0.9", ok,
           "AUCROC " + " ".join(details) + "; infinite scores clamped before averaging")
    assert ok


TARGETS = {"breastw": (0.99, 0.05), "wbc": (0.99, 0.05), "wine": (0.93, 0.07),
           "hepatitis": (0.80, 0.10)}


@pytest.fixture(scope="module")
def benchmark_aucs():
    out = {}
    for name in TARGETS:
        d = load_benchmark(name)
        out[name] = {mode: float(np.mean([auc_roc(gap_scores(fit(d, mode, seed), d,
                                                             isolated="zero").scores, d.labels)
                                          for seed in SEEDS]))
                     for mode in ("rf_uni", "extratrees")}
    return out


def within(name, auc):
    target, tol = TARGETS[name]
    return abs(auc - target) <= tol


def test_criterion_6_spot_checks_that_hold(benchmark_aucs):
    for name in ("breastw", "wbc", "wine"):
        assert within(name, benchmark_aucs[name]["rf_uni"])


@pytest.mark.xfail(strict=True, reason="Hepatitis RF_uni AUCROC and the RF_uni >= ExtraTrees "
                                       "direction miss")
def test_criterion_6_benchmarks(benchmark_aucs):
    hits = [n for n in TARGETS if within(n, benchmark_aucs[n]["rf_uni"])]
    wins = [n for n in TARGETS if benchmark_aucs[n]["rf_uni"] >= benchmark_aucs[n]["extratrees"]]
    ok = len(hits) == 4 and len(wins) >= 3
    detail = "; ".join(f"{n} {a['rf_uni']:.3f} (target {TARGETS[n][0]}), ExtraTrees "
                       f"{a['extratrees']:.3f}" for n, a in benchmark_aucs.items())
    report(6, "benchmark AUCROC spot checks and RF_uni >= ExtraTrees on 3/4", ok,
           f"{len(hits)}/4 in range, RF_uni ahead on {len(wins)}/4; {detail}")
    assert ok


@pytest.mark.xfail(strict=True, reason="uniform synthetic pixels are trivially separable from "
                                       "real images; the bundled test split also caps n at 1087")
def test_criterion_7_mnist():
    aucs, rows = [], None
    for seed in SEEDS:
        d = mnist_4_9(seed)
        rows = d.rows
        aucs.append(auc_roc(gap_scores(fit(d, "rf_uni", seed), d, isolated="zero").scores,
                            d.labels))
    mean = float(np.mean(aucs))
    ok = abs(mean - 0.76) <= 0.05 and rows == 2000
    report(7, "MNIST 4s among 9s, RF_uni AUCROC 0.76 +- 0.05 at n=2000", ok,
           f"n={rows}; AUCROC " + " ".join(f"{a:.3f}" for a in aucs) + f"; mean {mean:.3f}")
    assert ok


def test_criterion_8_missing_data():
    d = load_benchmark("breastw")
    ok, pairs = True, []
    for seed in SEEDS:
        base = auc_roc(gap_scores(fit(d, "rf_uni", seed), d, isolated="zero").scores, d.labels)
        holed = impute_mean(inject_mcar(d, 0.4, seed))
        auc = auc_roc(gap_scores(fit(holed, "rf_uni", seed), holed, isolated="zero").scores,
                      d.labels)
        ok &= abs(auc - base) <= 0.10
        pairs.append(f"{base:.3f}->{auc:.3f}")
    report(8, "Breastw AUCROC at 40% MCAR within 0.10 of complete data", ok,
           "per seed " + " ".join(pairs))
    assert ok


def exact_touch(lo, hi, f, a, b):
    """Analytic verdict for one plate: where the segment meets the plane, is it in the box?"""
    if a[f] == b[f]:
        return a[f] == lo[f] and np.all((np.minimum(a, b) <= hi) & (np.maximum(a, b) >= lo))
    t = (lo[f] - a[f]) / (b[f] - a[f])
    if not 0 <= t <= 1:
        return False
    x = a + t * (b - a)
    other = np.arange(a.size) != f
    return bool(np.all((x[other] >= lo[other] - 1e-12) & (x[other] <= hi[other] + 1e-12)))


def sampled_touch(lo, hi, f, a, b, samples=100_000):
    t = np.linspace(0, 1, samples)[:, None]
    pts = a + t * (b - a)
    other = np.arange(a.size) != f
    inside = np.all((pts[:, other] >= lo[other]) & (pts[:, other] <= hi[other]), axis=1)
    side = np.sign(pts[:, f] - lo[f])
    cross = (side[:-1] * side[1:] <= 0) & inside[:-1] & inside[1:]
    return bool(cross.any() or (inside & (side == 0)).any())


def test_criterion_9_liang_barsky():
    rng = np.random.default_rng(2024)
    mismatched, adjudicated, hits = 0, 0, 0
    for _ in range(1000):
        p = int(rng.integers(2, 11))
        lo = rng.uniform(-1, 0.3, p)
        hi = lo + rng.uniform(0.2, 1.5, p)
        f = int(rng.integers(p))
        lo[f] = hi[f] = rng.uniform(-0.5, 0.5)
        a, b = rng.uniform(-1.2, 1.2, (2, p))
        # pull half the segments through the plate so both outcomes are common
        if rng.random() < 0.5:
            centre = rng.uniform(lo, hi)
            a, b = centre + (a - centre) * 0.3, centre - (b - centre) * 0.3
        got = segment_intersections(parts_of(box(lo, hi, f)), a, b).size == 1
        hits += got
        oracle = sampled_touch(lo, hi, f, a, b)
        if got != oracle:
            # sampling can only miss a touch that falls between samples
            adjudicated += 1
            mismatched += got != exact_touch(lo, hi, f, a, b)
    hand_ok = all(
        (segment_intersections(parts_of(box(lo, hi, f)), a, b).size == 1) is expected
        for lo, hi, f, a, b, expected in TANGENT_CASES)
    ok = mismatched == 0 and hand_ok
    report(9, "segment-box intersection matches the sampling oracle", ok,
           f"1000 instances in 2-10 dims, {hits} hits, {adjudicated} oracle disagreement(s) "
           f"settled analytically, {mismatched} wrong; {len(TANGENT_CASES)} tangential hand "
           f"cases {'all correct' if hand_ok else 'not all correct'}")
    assert ok


def test_criterion_10_gradients():
    rng = np.random.default_rng(10)
    affine_err = 0.0
    grid = np.array([[x, y] for x in range(5) for y in range(5)], dtype=float)
    for _ in range(20):
        w, c = rng.normal(size=2) * 5, rng.normal()
        g = estimate_gradients(grid, grid @ w + c, k=8).gradients
        affine_err = max(affine_err, float(np.abs(g - w).max()))
    for p in (3, 5):
        X = rng.normal(size=(200, p))
        w = rng.normal(size=p)
        g = estimate_gradients(X, X @ w, k=3 * p).gradients
        affine_err = max(affine_err, float(np.abs(g - w).max()))
    X = rng.uniform(-1, 1, (2000, 2))
    g = estimate_gradients(X, (X ** 2).sum(axis=1), k=10).gradients
    r = np.linalg.norm(X, axis=1)
    inner = (np.abs(X).max(axis=1) < 0.8) & (r > 0.2)
    rel = (np.linalg.norm(g - 2 * X, axis=1) / (2 * r))[inner]
    ok = affine_err < 1e-9 and np.median(rel) < 0.10 and np.percentile(rel, 90) < 0.10
    report(10, "affine gradients exact, quadratic within 10%", ok,
           f"affine max error {affine_err:.1e}; quadratic relative error median "
           f"{np.median(rel):.3f}, 90th percentile {np.percentile(rel, 90):.3f}, "
           f"max {rel.max():.3f} over {inner.sum()} interior points")
    assert ok


def test_criterion_11_trajectories(geometry):
    ok, lengths = True, []
    for d, uni, _ in geometry:
        grads = estimate_gradients(d, uni.scores)
        t = build_trajectory(d, uni.scores, grads, int(np.argmax(uni.scores)))
        ok &= all(b <= a for a, b in zip(t.scores, t.scores[1:]))
        ok &= t.reason in ("score_non_decreasing", "revisit", "max_steps")
        lengths.append(f"{len(t)}:{t.reason}")
    report(11, "trajectory from the top-scoring row never rises and terminates", ok,
           "length:reason " + " ".join(lengths)
           + "; the top score is +inf and shared with its neighbours")
    assert ok


def cli(*args, cwd):
    res = subprocess.run([sys.executable, "-m", "gapforest.cli", *map(str, args)], cwd=cwd,
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    return res.stdout


SUBCOMMANDS = {
    "synth": (["synth", "--seed", 4], ["out"]),
    "fit": (["fit", "--seed", 4, "--trees", 100], ["out"]),
    "score": (["score", "--seed", 4, "--trees", 100, "--isolated", "zero",
               "--distances", "dist.bin"], ["out", "dist.bin"]),
    "eval": (["eval", "--seed", 4, "--trees", 50, "--repeats", 2, "--isolated", "zero",
              "--mcar-rates", 0, 0.3], ["out"]),
    "explain": (["explain", "--seed", 4, "--trees", 100, "--isolated", "zero",
                 "--top-outliers", 3], ["out"]),
    "embed": (["embed", "--seed", 4, "--trees", 100, "--isolated", "zero"], ["out", "out.json"]),
}


def test_criterion_12_determinism(tmp_path):
    data = tmp_path / "g.csv"
    write_csv(gaussian_2d(300, 7), data)
    differing = []
    for name, (args, files) in SUBCOMMANDS.items():
        outputs = []
        for run, threads in enumerate((1, 1, 4)):
            work = tmp_path / f"{name}{run}"
            work.mkdir()
            # relative paths keep echoed file names identical between runs
            stdout = cli(*args, "--input", data, "--threads", threads, "--output", "out",
                         cwd=work)
            outputs.append([stdout] + [(work / f).read_bytes() for f in files])
        if not outputs[0] == outputs[1] == outputs[2]:
            differing.append(name)
    ok = not differing
    report(12, "seeded subcommands byte-identical across runs and --threads", ok,
           f"{len(SUBCOMMANDS)} subcommands x (threads 1, 1, 4)"
           + (f"; differing: {', '.join(differing)}" if differing else ""))
    assert ok
