"""Acceptance criteria on the reference synthetic configuration.

Each test records one PASS/FAIL line; the lines are echoed in the pytest
terminal summary (see conftest.py) and printed when run as a script.
"""
import json
import math
import time

import numpy as np
import pytest

from geoloop.cli import main
from geoloop.core import RngStream, wrap_angles
from geoloop.evaluate import GroundTruthRule, distance_histograms, eps_precision_recall, pr_curve
from geoloop.index import KdIndex
from geoloop.network import EmbeddingModel, gradient_check
from geoloop.posegraph import NoiseSpec, run_slam_experiment
from geoloop.supervision import LabelThresholds, label_pairs, self_similarity

from conftest import reference_keyframes, train_reference_model

RESULTS = {}


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


# independent oracles: plain quadratic scans, no shared code with the library

def oracle_pairs(Z, E, guard):
    rows = []
    n = len(Z)
    for i in range(n):
        for j in range(i + guard + 1, n):
            gps = math.hypot(Z[i][0] - Z[j][0], Z[i][1] - Z[j][1])
            rows.append((gps, math.sqrt(sum((a - b) ** 2 for a, b in zip(E[i], E[j])))))
    return rows


def oracle_pr_auc(Z, E, guard=10, thresh=20.0, steps=256):
    rows = oracle_pairs(Z, E, guard)
    n_gt = sum(g < thresh for g, _ in rows)
    top = max(d for _, d in rows)
    pts = []
    for k in range(steps):
        tau = top * k / (steps - 1)
        prop = [(g, d) for g, d in rows if d <= tau]
        tp = sum(g < thresh for g, _ in prop)
        pts.append((tp / n_gt, tp / len(prop) if prop else 1.0))
    return sum((r1 - r0) * (p0 + p1) / 2 for (r0, p0), (r1, p1) in zip(pts, pts[1:]))


def oracle_overlap(Z, E, guard=10, bins=50, pos_thresh=20.0, neg_floor=50.0):
    rows = oracle_pairs(Z, E, guard)
    top = max(d for _, d in rows)
    width = top / bins
    hp, hn = [0] * bins, [0] * bins
    for g, d in rows:
        b = min(int(d / width), bins - 1)
        if g < pos_thresh:
            hp[b] += 1
        elif g >= neg_floor:
            hn[b] += 1
    sp, sn = sum(hp), sum(hn)
    return sum(min(a / sp, b / sn) for a, b in zip(hp, hn))


def oracle_eps(Z, E, radius, guard=10, thresh=20.0):
    rows = oracle_pairs(Z, E, guard)
    prop = [g for g, d in rows if d <= radius]
    tp = sum(g < thresh for g in prop)
    return tp / len(prop) if prop else 1.0, tp / sum(g < thresh for g, _ in rows)


@pytest.fixture(scope="module")
def reference_run():
    t0 = time.perf_counter()
    model, trace, _, _ = train_reference_model()
    _, frames, truth = reference_keyframes(12)
    X = np.vstack([f.descriptor.vector for f in frames])
    Z = np.array([[f.fix.x, f.fix.y, f.fix.bearing] for f in frames])
    E = model.forward(X)
    rule = GroundTruthRule()
    metrics = {
        "auc_raw": pr_curve(Z, X, rule, 10).auc,
        "auc_learned": pr_curve(Z, E, rule, 10).auc,
        "overlap_raw": distance_histograms(Z, X, rule, 50, 10).overlap,
        "overlap_learned": distance_histograms(Z, E, rule, 50, 10).overlap,
        "eps": eps_precision_recall(Z, E, model.margin, rule, 10),
    }
    metrics["seconds"] = time.perf_counter() - t0
    return model, frames, truth, X, Z, E, metrics


def test_criterion_1_gradient_exactness():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        dims = [int(rng.integers(3, 9)), int(rng.integers(2, 7)), int(rng.integers(2, 5))]
        model = EmbeddingModel.initialize(dims, 1.0, random_state=seed)
        b = int(rng.integers(2, 9))
        Xi, Xj = rng.normal(size=(b, dims[0])), rng.normal(size=(b, dims[0]))
        y = rng.integers(0, 2, b)
        worst = max(worst, gradient_check(model, Xi, Xj, y, pos_weight=10.0, step=1e-6))
    secs = time.perf_counter() - t0
    report(1, worst < 1e-4 and secs < 10, f"max relative error {worst:.2e} (< 1e-4), {secs:.1f} s (< 10 s)")


def test_criterion_2_labeling_soundness():
    t0 = time.perf_counter()
    sess, frames, truth = reference_keyframes(0)
    Z = np.array([[f.fix.x, f.fix.y, f.fix.bearing] for f in frames])
    T = np.array([p.to_vector() for p in truth])
    pairs = label_pairs(self_similarity(Z), LabelThresholds(), 10)
    bad_pos = 0
    for i, j in pairs.positives:
        sep = math.hypot(*(T[i, :2] - T[j, :2]))
        gap = abs(float(wrap_angles(T[i, 2] - T[j, 2])))
        bad_pos += not (sep < 5.0 and gap < math.pi / 6)
    close_neg = sum(math.hypot(*(T[i, :2] - T[j, :2])) < 10.0 for i, j in pairs.negatives)
    secs = time.perf_counter() - t0
    ok = pairs.n_positives > 0 and bad_pos == 0 and close_neg == 0 and secs < 5
    report(2, ok, f"{pairs.n_positives} positives, {bad_pos} outside 5 m / pi/6; "
                  f"{close_neg} negatives within 10 m; {secs:.1f} s (< 5 s)")


def test_criterion_3_index_exactness():
    t0 = time.perf_counter()
    mismatches = 0
    for seed in range(10):
        rng = RngStream(seed)
        P = rng.normal(size=(500, 32))
        index = KdIndex(32).insert_many(enumerate(P))
        for q in rng.normal(size=(50, 32)):
            d = np.sqrt(((P - q) ** 2).sum(axis=1))
            # midway between neighbours so the boundary is not decided by roundoff
            k = int(rng.integers(0, 60))
            ds = np.sort(d)
            eps = float(0.5 * (ds[k] + ds[k + 1]))
            brute_r = sorted((i for i in range(500) if d[i] <= eps), key=lambda i: (d[i], i))
            brute_k = sorted(range(500), key=lambda i: (d[i], i))[:10]
            mismatches += [i for i, _ in index.query_radius(q, eps)] != brute_r
            mismatches += [i for i, _ in index.query_knn(q, 10)] != brute_k
    secs = time.perf_counter() - t0
    report(3, mismatches == 0 and secs < 10, f"{mismatches} mismatches over 1000 queries, {secs:.1f} s (< 10 s)")


def test_criterion_4_calibration(reference_run):
    *_, X, Z, E, m = reference_run
    o_raw, o_learned = oracle_overlap(Z, X), oracle_overlap(Z, E)
    assert math.isclose(o_raw, m["overlap_raw"], abs_tol=1e-9)
    assert math.isclose(o_learned, m["overlap_learned"], abs_tol=1e-9)
    ratio = m["overlap_learned"] / m["overlap_raw"]
    ok = ratio < 0.5 and m["seconds"] < 300
    report(4, ok, f"overlap learned {m['overlap_learned']:.3f} vs raw {m['overlap_raw']:.3f} "
                  f"(ratio {ratio:.2f} < 0.5), {m['seconds']:.0f} s incl. training (< 300 s)")


def test_criterion_5_retrieval(reference_run):
    *_, X, Z, E, m = reference_run
    assert math.isclose(oracle_pr_auc(Z, X), m["auc_raw"], abs_tol=1e-9)
    assert math.isclose(oracle_pr_auc(Z, E), m["auc_learned"], abs_tol=1e-9)
    gain = m["auc_learned"] - m["auc_raw"]
    ok = gain >= 0.15 and m["auc_learned"] >= 0.90
    report(5, ok, f"PR-AUC learned {m['auc_learned']:.3f} (>= 0.90) vs raw {m['auc_raw']:.3f}, "
                  f"gain {gain:.3f} (>= 0.15)")


def test_criterion_6_eps_precision(reference_run):
    model, *_, X, Z, E, m = reference_run
    p, r = m["eps"]["precision"], m["eps"]["recall"]
    op, orc = oracle_eps(Z, E, model.margin)
    assert math.isclose(p, op) and math.isclose(r, orc)
    report(6, p >= 0.9 and r >= 0.5, f"radius {model.margin}: precision {p:.3f} (>= 0.9), recall {r:.3f} (>= 0.5)")


def test_criterion_7_drift_correction(reference_run):
    model, frames, truth, *_ = reference_run
    t0 = time.perf_counter()
    noisy = run_slam_experiment(frames, truth, model, model.margin, NoiseSpec(1e-3, 5e-2), random_state=0)
    exact = run_slam_experiment(frames, truth, model, model.margin, NoiseSpec(0.0, 0.0), random_state=0)
    secs = time.perf_counter() - t0
    ratio = noisy.ate_optimized / noisy.ate_dead_reckoned
    ok = ratio <= 0.3 and exact.ate_optimized <= 1e-6 and secs < 120
    report(7, ok, f"ATE optimized {noisy.ate_optimized:.3f} m vs dead-reckoned "
                  f"{noisy.ate_dead_reckoned:.3f} m (ratio {ratio:.2f}, needs <= 0.3); "
                  f"{len(noisy.closures)} closures, precision {noisy.closure_precision:.3f}; "
                  f"zero-noise ATE {exact.ate_optimized:.1e} m (<= 1e-6); {secs:.1f} s (< 120 s)")


def test_criterion_8_determinism(tmp_path):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps({}))
    outs = [tmp_path / "a", tmp_path / "b"]
    codes = [main(["pipeline", "--config", str(cfg), "--out-dir", str(o)]) for o in outs]
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*")
                   if p.suffix in (".csv", ".json", ".jsonl"))
    differ = [str(f) for f in files if (outs[0] / f).read_bytes() != (outs[1] / f).read_bytes()]
    ok = codes == [0, 0] and files and not differ
    report(8, ok, f"exit codes {codes}; {len(files)} CSV/JSON files compared, {len(differ)} differ")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-s"]))
