import itertools
import math

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import trapezoid

from thermavatar.analysis import (
    EvalReport,
    NoiseSweepReport,
    add_noise,
    exact_u_pvalue,
    fold_ttest,
    loocv,
    mann_whitney_u,
    noise_robustness_sweep,
    roc_auc,
    roc_curve,
    snr,
    wilson_interval,
)
from thermavatar.errors import EmptyRegion, EmptySample, SingleClass, TooFewCases, ZeroNoiseStd
from thermavatar.forest import ForestParams, RandomForest, random_forest_fit, random_forest_predict
from thermavatar.thermal_data import frames_from_arrays


# ---------------------------------------------------------------- Mann-Whitney U

def brute_force_p(a, b):
    """Two-sided p by enumerating every placement of a's ranks among n1+n2."""
    n1, n2 = len(a), len(b)
    pooled = np.concatenate([a, b])
    ranks = stats.rankdata(pooled)
    u_obs = ranks[:n1].sum() - n1 * (n1 + 1) / 2
    us = [sum(c) - n1 * (n1 + 1) / 2 for c in itertools.combinations(range(1, n1 + n2 + 1), n1)]
    lower = sum(u <= u_obs for u in us) / len(us)
    upper = sum(u >= u_obs for u in us) / len(us)
    return u_obs, min(1.0, 2 * min(lower, upper))


def test_mwu_worked_example():
    r = mann_whitney_u([1, 2, 3], [10, 11, 12])
    assert r.u == 0 and r.p_two_sided == pytest.approx(0.1, abs=1e-15) and r.method == "exact"


def test_mwu_identical_samples():
    a = [1.0, 2.0, 2.0, 5.0, 7.0]
    r = mann_whitney_u(a, a)
    assert r.u == len(a) ** 2 / 2 and r.p_two_sided >= 0.9


def test_mwu_exact_matches_enumeration_small():
    rng = np.random.default_rng(0)
    for n1 in range(1, 8):
        for n2 in range(1, 9 - n1 + 1):
            if n1 + n2 > 10:
                continue
            for _ in range(3):
                v = rng.permutation(n1 + n2).astype(float)
                a, b = v[:n1], v[n1:]
                u, p = brute_force_p(a, b)
                r = mann_whitney_u(a, b)
                assert r.u == u and r.p_two_sided == pytest.approx(p, abs=1e-15)


def test_mwu_normal_matches_scipy_with_ties():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a = rng.integers(0, 6, size=12).astype(float)
        b = rng.integers(1, 7, size=15).astype(float)
        r = mann_whitney_u(a, b)
        ref = stats.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic",
                                 use_continuity=True)
        assert r.method == "normal"
        assert r.u == ref.statistic
        assert r.p_two_sided == pytest.approx(ref.pvalue, rel=1e-10)


def test_mwu_exact_matches_scipy_exact():
    rng = np.random.default_rng(2)
    for _ in range(20):
        v = rng.permutation(16).astype(float)
        a, b = v[:7], v[7:]
        ref = stats.mannwhitneyu(a, b, alternative="two-sided", method="exact")
        assert mann_whitney_u(a, b).p_two_sided == pytest.approx(ref.pvalue, rel=1e-12)


def test_mwu_empty():
    with pytest.raises(EmptySample):
        mann_whitney_u([], [1.0])


def test_exact_u_pvalue_symmetry():
    assert exact_u_pvalue(3, 4, 5) == pytest.approx(exact_u_pvalue(17, 4, 5), abs=1e-15)


# ---------------------------------------------------------------- ROC

def test_auc_matches_trapezoid():
    rng = np.random.default_rng(3)
    for _ in range(30):
        scores = rng.permutation(40) + rng.random(40) * 0.1
        labels = rng.integers(0, 2, size=40)
        if labels.min() == labels.max():
            continue
        fpr, tpr = roc_curve(scores, labels)
        assert roc_auc(scores, labels) == pytest.approx(trapezoid(tpr, fpr), abs=1e-12)


def test_auc_edge_cases():
    assert roc_auc([0.3] * 6, [0, 1, 0, 1, 0, 1]) == 0.5
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    with pytest.raises(SingleClass):
        roc_auc([0.1, 0.2], [1, 1])


# ---------------------------------------------------------------- SNR

def _regions():
    sig = np.zeros((4, 4), bool)
    sig[0] = True
    noise = ~sig
    return sig, noise


def test_snr_worked_values():
    sig, noise = _regions()
    img = np.zeros((4, 4))
    img[noise] = np.tile([-1.0, 1.0], 6)  # mean 0, std 1
    img[sig] = 1.0
    assert snr(img, sig, noise) == 0.0
    img[sig] = 10.0
    assert snr(img, sig, noise) == 20.0
    img[noise] = np.tile([-1.0, 3.0], 6)  # mean 1, std 2
    img[sig] = 5.0
    assert snr(img, sig, noise) == pytest.approx(10 * math.log10(4.0), abs=1e-12)
    assert 10 * math.log10(16 / 4) == pytest.approx(6.0206, abs=1e-4)


def test_snr_errors():
    sig, noise = _regions()
    with pytest.raises(ZeroNoiseStd):
        snr(np.ones((4, 4)), sig, noise)
    with pytest.raises(EmptyRegion):
        snr(np.ones((4, 4)), np.zeros((4, 4), bool), noise)


# ---------------------------------------------------------------- intervals and t-test

def test_wilson_interval_reference():
    low, high = wilson_interval(8, 10)
    # textbook value for 8/10 at 95%
    assert low == pytest.approx(0.4902, abs=1e-4) and high == pytest.approx(0.9433, abs=1e-4)
    low, high = wilson_interval(60, 60)
    assert high == 1.0 and low < 1.0


def test_fold_ttest():
    t, p = fold_ttest([1, 1, 0, 1], [0, 1, 0, 0])
    ref = stats.ttest_ind([1, 1, 0, 1], [0, 1, 0, 0])
    assert t == pytest.approx(ref.statistic) and p == pytest.approx(ref.pvalue)
    assert fold_ttest([1, 1], [1, 1]) == (0.0, 1.0)


# ---------------------------------------------------------------- forest and LOOCV

def _separable(n=30, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    x = np.column_stack([y * 3.0 + rng.normal(size=n), rng.normal(size=n)])
    return x, y


def test_forest_basic():
    x, y = _separable()
    model = random_forest_fit(x, y, ForestParams(n_trees=25, seed=1))
    label, score = random_forest_predict(model, [3.0, 0.0])
    assert label == 1 and 0.5 < score <= 1.0
    assert np.array_equal(model.predict_score(x), RandomForest(ForestParams(25, seed=1)).fit(x, y)
                          .predict_score(x))
    with pytest.raises(SingleClass):
        random_forest_fit(x, np.zeros(len(y)))
    with pytest.raises(TooFewCases):
        random_forest_fit(x[:1], y[:1])


def test_loocv_report_invariants():
    x, y = _separable()
    rep = loocv(x, y, ForestParams(n_trees=25, seed=2))
    assert isinstance(rep, EvalReport)
    assert 0 <= rep.accuracy_low <= rep.accuracy <= rep.accuracy_high <= 1
    assert sum(rep.confusion.values()) == rep.n_cases == len(y)
    assert rep.accuracy > 0.8 and 0 <= rep.auc <= 1
    assert set(rep.mwu) == {"f0", "f1"} and rep.mwu["f0"]["p"] < 0.005
    again = loocv(x, y, ForestParams(n_trees=25, seed=2))
    assert again.predictions == rep.predictions


def test_loocv_held_out_label_poisoning():
    x, y = _separable(20, seed=3)
    params = ForestParams(n_trees=15, seed=4)
    base = loocv(x, y, params)
    for i in (0, 7, 15):
        flipped = y.copy()
        flipped[i] = 1 - flipped[i]
        rep = loocv(x, flipped, params)
        assert rep.predictions[i]["score"] == base.predictions[i]["score"]


def test_loocv_chance_level_on_noise():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(200, 3))
    y = rng.integers(0, 2, size=200)
    rep = loocv(x, y, ForestParams(n_trees=15, seed=6))
    assert 0.35 < rep.accuracy < 0.65


def test_loocv_too_few_cases():
    with pytest.raises(TooFewCases):
        loocv(np.zeros((2, 1)), [0, 1])


# ---------------------------------------------------------------- noise sweep

def _sweep_inputs():
    rng = np.random.default_rng(7)
    t = np.linspace(0, 1, 6)[:, None, None]
    base = np.zeros((16, 16))
    base[4:8, 4:8] = 1.0
    frames = 30 + t * (1 + base) + 0.01 * rng.normal(size=(6, 16, 16))
    sig = base.astype(bool)
    noise = np.zeros((16, 16), bool)
    noise[10:, :] = True
    return frames_from_arrays(list(frames)), sig, noise


def test_noise_sweep_grid_and_monotone_input():
    seq, sig, noise = _sweep_inputs()
    levels = [0.03, 0.05, 0.08, 0.11, 0.14, 0.17, 0.20]
    fp = {"k": 2, "layer_sizes": [3, 2], "max_iters": 30, "finetune_iters": 5}
    rep = noise_robustness_sweep(seq, ["pct", "semi_nmf"], levels, seed=1, signal_roi=sig,
                                 noise_roi=noise, factorization_params=fp)
    assert rep.levels == levels
    assert all(len(rep.snr_db[m]) == len(levels) for m in rep.methods)
    assert all(np.isfinite(v) for m in rep.methods for v in rep.snr_db[m])
    assert all(b < a for a, b in zip(rep.input_snr_db, rep.input_snr_db[1:]))
    again = noise_robustness_sweep(seq, ["pct", "semi_nmf"], levels, seed=1, signal_roi=sig,
                                   noise_roi=noise, factorization_params=fp)
    assert again.snr_db == rep.snr_db


def test_noise_sweep_level_zero_is_clean():
    from thermavatar.embedding import embed
    from thermavatar.factorization import pct
    seq, sig, noise = _sweep_inputs()
    rep = noise_robustness_sweep(seq, ["pct"], [0.0], seed=1, signal_roi=sig, noise_roi=noise,
                                 factorization_params={"k": 2})
    clean = embed(pct(seq.frames.reshape(6, -1).T, 2).bases, (16, 16)).image
    assert rep.snr_db["pct"][0] == snr(clean, sig, noise)


def test_noise_report_requires_increasing_levels():
    with pytest.raises(ValueError):
        NoiseSweepReport([0.1, 0.05], ["pct"], {"pct": [1.0, 2.0]}, [1.0, 2.0])


def test_add_noise_scale():
    frames = np.zeros((2, 3, 3))
    frames[1] = 4.0
    z = np.ones_like(frames)
    assert np.all(add_noise(frames, 0.1, z) == frames + 0.4)
