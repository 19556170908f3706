"""Acceptance gates, one test per gate.

Each test prints the quantities it gates on, so a verbose run doubles as a
measurement report. The planted-data gates pin their fixtures (sizes, seeds,
hyperparameter grids) so reruns measure the same thing.
"""

import csv
import json
import math
import os

import numpy as np
import pytest
import scipy.sparse as sp

from alignrec import (
    AlignmentConfig,
    AttributeSpec,
    EaseConfig,
    MslimConfig,
    SolverError,
    align,
    bootstrap_ci,
    build_feature_set,
    evaluate_scenario,
    fit_ease,
    fit_mslim,
    itemknn_scores,
    load_interactions,
    make_cold_split,
    make_warm_split,
    multihot_encode,
    predict,
    run_experiment,
    smoothed_cosine,
)
from alignrec import synthetic
from alignrec.alignment import default_mix, mix_similarities
from alignrec.evaluation import RankedList, hr_at_k, ndcg_at_k, rank_candidates
from alignrec.solvers import popularity_scores, random_scores


def _random_clicks(rng, n_users, n_items, density=0.35):
    x = (rng.random((n_users, n_items)) < density).astype(np.float64)
    empty = np.flatnonzero(x.sum(axis=0) == 0)
    x[rng.integers(0, n_users, size=len(empty)), empty] = 1.0
    return sp.csr_matrix(x)


# gate: closed-form ridge autoencoder vs an independent textbook oracle

def test_ease_matches_textbook_closed_form():
    rng = np.random.default_rng(101)
    worst = 0.0
    worst_diag = 0.0
    for _ in range(20):
        n_items = int(rng.integers(5, 31))
        n_users = int(rng.integers(n_items, 61))
        X = _random_clicks(rng, n_users, n_items)
        lam = float(rng.uniform(0.5, 4.0))
        # a zero-scale alignment term must reduce to the plain solution
        B = align(X, np.eye(n_items), AlignmentConfig(alpha=0.0))
        model = fit_ease(X, EaseConfig(lambda0=0.0, lambda1=lam), B=B)

        g = (X.T @ X).toarray()
        p = np.linalg.inv(g + lam * np.eye(n_items))
        ref = np.eye(n_items) - p / np.diag(p)[None, :]
        np.fill_diagonal(ref, 0.0)

        worst = max(worst, float(np.max(np.abs(model.theta - ref))))
        worst_diag = max(worst_diag, float(np.max(np.abs(np.diag(model.theta)))))
    print(f"max elementwise gap {worst:.3e} (gate 1e-8), "
          f"max diagonal {worst_diag:.3e} (gate 1e-10)")
    assert worst <= 1e-8
    assert worst_diag <= 1e-10


# gate: per-column weighted ridge vs brute-force normal equations

def test_mslim_matches_weighted_ridge_normal_equations():
    rng = np.random.default_rng(202)
    worst = 0.0
    for trial in range(20):
        n_items = int(rng.integers(4, 16))
        n_users = int(rng.integers(n_items, 41))
        X = _random_clicks(rng, n_users, n_items)
        cfg = MslimConfig(w1=float(rng.uniform(0.1, 1.0)),
                          lambda1=float(rng.uniform(0.5, 3.0)),
                          gamma1=float(rng.uniform(0.0, 5.0)))
        B = None
        Bd = None
        if trial % 2 == 1:
            raw = rng.normal(size=(n_items, n_items))
            G = raw @ raw.T / n_items
            d = rng.uniform(0.0, 1.0, size=n_items)
            B = align(X, G, AlignmentConfig(alpha=0.7), d=d)
            Bd = B.materialize()
        model = fit_mslim(X, cfg, B=B)

        Xd = X.toarray()
        ref = np.zeros((n_items, n_items))
        for i in range(n_items):
            w = np.where(Xd[:, i] > 0, cfg.w0, cfg.w1)
            a = Xd.T @ (w[:, None] * Xd)
            if Bd is not None:
                a = a + Xd.T @ (w[:, None] * Bd)
            b = a[:, i].copy()
            a = a + cfg.lambda1 * np.eye(n_items)
            a[i, i] += cfg.gamma1
            ref[:, i] = np.linalg.solve(a, b)

        worst = max(worst, float(np.max(np.abs(model.theta - ref))))
    print(f"max elementwise gap {worst:.3e} (gate 1e-7)")
    assert worst <= 1e-7


# gate: ranking metrics vs a rank-enumeration oracle

def test_ranking_metrics_match_enumeration_oracle():
    rng = np.random.default_rng(303)
    for _ in range(200):
        n_pool = int(rng.integers(3, 40))
        n_items = n_pool + int(rng.integers(0, 20))
        candidates = rng.choice(n_items, size=n_pool, replace=False)
        scores = np.round(rng.random(n_items) * 4.0) / 4.0  # coarse grid forces ties
        n_rel = int(rng.integers(1, n_pool + 1))
        relevant = rng.choice(candidates, size=n_rel, replace=False)
        k = int(rng.integers(1, 15))

        ranked = rank_candidates(scores, candidates)
        oracle_order = sorted(candidates.tolist(), key=lambda c: (-scores[c], c))
        assert ranked.tolist() == oracle_order  # identical tie-break

        rel = set(relevant.tolist())
        hit_ranks = [r for r, c in enumerate(oracle_order, start=1) if c in rel]
        hr_ref = len([r for r in hit_ranks if r <= k]) / min(k, len(rel))
        # enumerate the discount terms independently, then reduce with the
        # same primitive so equality can be exact
        dcg = np.sum(np.array([1.0 / math.log2(1.0 + r) for r in hit_ranks if r <= k]))
        idcg = np.sum(np.array([1.0 / math.log2(1.0 + r)
                                for r in range(1, min(k, len(rel)) + 1)]))

        rl = RankedList(user=0, ranked=ranked, relevant=relevant)
        assert hr_at_k([rl], k).mean == hr_ref
        assert ndcg_at_k([rl], k).mean == dcg / idcg

    pinned = RankedList(user=0, ranked=np.arange(12),
                        relevant=np.array([0, 2]))  # hits at ranks 1 and 3
    value = ndcg_at_k([pinned], 10).mean
    print(f"200 random instances exact; worked example ndcg@10 = {value:.10f}")
    assert round(value, 4) == 0.9197


# gates: cold-start behavior on planted topic structure

@pytest.fixture(scope="module")
def planted_cold():
    dataset, meta = synthetic.planted_dataset(seed=42)  # 2000 x 400, 20 topics
    split = make_cold_split(dataset, seed=42)
    topic = multihot_encode(meta["topic_labels"], name="topic")
    G = smoothed_cosine(topic, delta=0.5)
    return split, G


def _cold_ndcg(split, G, alpha, use):
    B = None
    if alpha > 0:
        B = align(split.train.X, G,
                  AlignmentConfig(delta=0.5, alpha=alpha, beta=20.0))
    model = fit_ease(split.train.X, EaseConfig(lambda0=0.0, lambda1=2.0), B=B)
    report = evaluate_scenario(predict(model, split.train.X), split, "cold",
                               ks=(10,), use=use, with_ci=False)
    return report.metric("ndcg", 10).mean


def test_cold_alignment_lift_on_planted_topics(planted_cold):
    split, G = planted_cold
    grid = (0.0, 0.25, 0.5, 1.0, 2.0, 4.0)
    val = {alpha: _cold_ndcg(split, G, alpha, "val") for alpha in grid}
    best = max(grid, key=lambda alpha: val[alpha])
    aligned = _cold_ndcg(split, G, best, "test")
    baseline = _cold_ndcg(split, G, 0.0, "test")
    lift = aligned / baseline
    print(f"selected alpha={best}; cold ndcg@10 aligned={aligned:.4f} "
          f"baseline={baseline:.4f} lift={lift:.2f}x (gate 1.5x)")
    assert best > 0.0
    assert lift >= 1.5


@pytest.mark.xfail(
    strict=True,
    reason="hr@10 cannot exceed 1 while random ranking already scores about "
           "1/8 on the ~80-item cold pool, capping the ratio near 8x; "
           "measured about 5.6x against the 10x gate",
)
def test_itemknn_beats_random_tenfold_on_cold_items(planted_cold):
    split, G = planted_cold
    knn = evaluate_scenario(itemknn_scores(split.train.X, G), split, "cold",
                            ks=(10,), use="test", with_ci=False).metric("hr", 10).mean
    rnd = evaluate_scenario(
        random_scores(split.train.n_users, split.train.n_items, seed=42),
        split, "cold", ks=(10,), use="test", with_ci=False).metric("hr", 10).mean
    print(f"cold hr@10 itemknn={knn:.4f} random={rnd:.4f} "
          f"ratio={knn / rnd:.2f}x (gate 10x)")
    assert knn >= 10.0 * rnd


# gate: public-dataset reproduction, opt-in via environment variable

HETREC_DIR = os.environ.get("ALIGNREC_HETREC_DIR")


@pytest.mark.skipif(
    not HETREC_DIR,
    reason="set ALIGNREC_HETREC_DIR to a directory holding interactions.csv, "
           "text.csv, and genres.csv to run the public-dataset check",
)
def test_hetrec_cold_hitrate_reproduction():
    dataset = load_interactions(os.path.join(HETREC_DIR, "interactions.csv"))
    split = make_cold_split(dataset, seed=0)
    feats = build_feature_set(
        [AttributeSpec(name="text", kind="text", path="text.csv", vocab_size=1000),
         AttributeSpec(name="genres", kind="categorical", path="genres.csv")],
        dataset.item_index, base_dir=HETREC_DIR)
    blocks = [smoothed_cosine(b, delta=20.0) for b in feats.blocks]
    G = mix_similarities(blocks, default_mix(2))
    B = align(split.train.X, G, AlignmentConfig(delta=20.0, alpha=1.0, beta=100.0))
    model = fit_ease(split.train.X, EaseConfig(lambda1=1.0), B=B)
    hr = evaluate_scenario(predict(model, split.train.X), split, "cold",
                           ks=(10,), use="test", with_ci=False).metric("hr", 10).mean
    print(f"cold hr@10 = {hr:.4f}, accepted band [0.2489, 0.3367]")
    assert 0.2489 <= hr <= 0.3367


# gate: negative down-weighting changes model selection and the
# selected model beats popularity under the sampled-negative protocol

def test_warm_weighting_changes_selection_and_beats_popularity():
    dataset, _ = synthetic.planted_dataset(
        n_users=80, n_items=150, n_topics=6, seed=5,
        clicks=(22, 30), user_topics=(2, 3), p_out=0.25)
    outer = make_warm_split(dataset, min_user_clicks=20, negatives=100, seed=5)
    inner = make_warm_split(outer.train, min_user_clicks=19, negatives=100, seed=6)

    def select(w1):
        best = None
        for lam in (0.25, 2.0, 16.0):
            for gam in (0.0, 8.0, 64.0):
                try:
                    m = fit_mslim(inner.train.X,
                                  MslimConfig(w1=w1, lambda1=lam, gamma1=gam),
                                  workers=4)
                except SolverError:
                    continue
                rep = evaluate_scenario(predict(m, inner.train.X), inner,
                                        "leave_one_out", ks=(10,), with_ci=False)
                key = (rep.metric("ndcg", 10).mean, rep.metric("hr", 10).mean)
                if best is None or key > best[0]:
                    best = (key, (lam, gam))
        return best[1]

    uniform = select(1.0)
    downweighted = select(0.25)
    model = fit_mslim(outer.train.X,
                      MslimConfig(w1=0.25, lambda1=downweighted[0],
                                  gamma1=downweighted[1]),
                      workers=4)
    hr = evaluate_scenario(predict(model, outer.train.X), outer, "leave_one_out",
                           ks=(10,), with_ci=False).metric("hr", 10).mean
    pop = evaluate_scenario(popularity_scores(outer.train.X), outer,
                            "leave_one_out", ks=(10,),
                            with_ci=False).metric("hr", 10).mean
    print(f"selected (lambda1, gamma1): w1=1 -> {uniform}, w1=0.25 -> "
          f"{downweighted}; leave-one-out hr@10 model={hr:.4f} "
          f"popularity={pop:.4f}")
    assert uniform != downweighted
    assert hr > pop


# gate: reruns are byte-identical across runs and worker counts;
# wall-clock timing fields are the sole exemption and are stripped before
# comparing the two files that carry them

def _comparable(path):
    name = os.path.basename(path)
    if name == "grid_trace.csv":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        drop = rows[0].index("wall_time_s")
        return [[c for i, c in enumerate(row) if i != drop] for row in rows]
    if name == "model.bin.json":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        payload.get("diagnostics", {}).pop("wall_time_s", None)
        return json.dumps(payload, sort_keys=True)
    with open(path, "rb") as fh:
        return fh.read()


def _tree(outdir):
    paths = []
    for root, _, files in os.walk(outdir):
        for f in files:
            paths.append(os.path.relpath(os.path.join(root, f), outdir))
    return sorted(paths)


def test_pipeline_reruns_are_byte_identical(planted_config, tmp_path):
    config = planted_config(grid={"lambda1": [0.5, 2.0]})
    out_a = run_experiment(config, output=str(tmp_path / "a"))
    out_b = run_experiment(config, output=str(tmp_path / "b"))
    out_c = run_experiment(config, output=str(tmp_path / "c"), workers=4)

    files = _tree(out_a)
    assert files == _tree(out_b) == _tree(out_c)
    assert "INCOMPLETE" not in files
    differing = [f for f in files
                 if not (_comparable(os.path.join(out_a, f))
                         == _comparable(os.path.join(out_b, f))
                         == _comparable(os.path.join(out_c, f)))]
    print(f"{len(files)} artifacts compared across two reruns and a "
          f"4-worker run; differing: {differing or 'none'}")
    assert differing == []


# gate: bootstrap interval coverage on a known distribution

def test_bootstrap_ci_covers_true_mean():
    rng = np.random.default_rng(909)
    covered = 0
    for trial in range(200):
        values = rng.normal(0.3, 0.1, size=200)
        lo, hi = bootstrap_ci(values, resamples=500, fraction=0.20, seed=trial)
        covered += int(lo <= 0.3 <= hi)
    print(f"95% CI covered the true mean in {covered}/200 trials (gate 180)")
    assert covered >= 180
