"""Statistics and evaluation: Mann-Whitney U, ROC/AUC, SNR, LOOCV and the noise sweep."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import EmptyRegion, EmptySample, InvalidSequence, SingleClass, TooFewCases, ZeroNoiseStd
from .forest import ForestParams, RandomForest

EXACT_MWU_MAX_N = 16
WILSON_Z = 1.959963984540054
SIGNIFICANCE = 0.005


# --------------------------------------------------------------------------
# Mann-Whitney U
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MannWhitneyResult:
    u: float
    p_two_sided: float
    method: str


@lru_cache(maxsize=256)
def _u_counts(n1: int, n2: int) -> tuple[int, ...]:
    """Number of rank arrangements giving each U = 0..n1*n2 under the null."""
    # f[m][n] as arrays over u; f(m, n, u) = f(m-1, n, u-n) + f(m, n-1, u)
    prev_row = [np.array([1], dtype=object) for _ in range(n2 + 1)]
    for m in range(1, n1 + 1):
        row = [np.array([1], dtype=object)]
        for n in range(1, n2 + 1):
            out = np.zeros(m * n + 1, dtype=object)
            a = prev_row[n]
            out[n:n + a.size] += a
            b = row[n - 1]
            out[:b.size] += b
            row.append(out)
        prev_row = row
    return tuple(int(v) for v in prev_row[n2])


def exact_u_pvalue(u: float, n1: int, n2: int) -> float:
    counts = np.array(_u_counts(n1, n2), dtype=np.float64)
    total = counts.sum()
    k = int(round(u))
    lower = counts[:k + 1].sum() / total
    upper = counts[k:].sum() / total
    return float(min(1.0, 2.0 * min(lower, upper)))


def mann_whitney_u(a, b) -> MannWhitneyResult:
    """Two-sided Mann-Whitney U test; ``u`` is the statistic of sample ``a``.

    Exact enumeration is used for tie-free samples with ``len(a) + len(b) <= 16``,
    otherwise the normal approximation with tie and continuity corrections.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise EmptySample("both samples need at least one value")
    n1, n2 = a.size, b.size
    pooled = np.concatenate([a, b])
    ranks = stats.rankdata(pooled)
    u = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    _, tie_counts = np.unique(pooled, return_counts=True)
    has_ties = np.any(tie_counts > 1)
    if not has_ties and n1 + n2 <= EXACT_MWU_MAX_N:
        return MannWhitneyResult(u, exact_u_pvalue(u, n1, n2), "exact")
    n = n1 + n2
    mu = n1 * n2 / 2.0
    tie_term = float(np.sum(tie_counts ** 3 - tie_counts)) / (n * (n - 1)) if n > 1 else 0.0
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return MannWhitneyResult(u, 1.0, "normal")
    z = max(abs(u - mu) - 0.5, 0.0) / math.sqrt(var)
    return MannWhitneyResult(u, float(min(1.0, math.erfc(z / math.sqrt(2.0)))), "normal")


# --------------------------------------------------------------------------
# ROC
# --------------------------------------------------------------------------

def _split_scores(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    pos, neg = scores[labels == 1], scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise SingleClass("ROC needs both classes")
    return pos, neg


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve as the rank statistic ``U_pos / (n_pos n_neg)``."""
    pos, neg = _split_scores(scores, labels)
    ranks = stats.rankdata(np.concatenate([pos, neg]))
    u = ranks[:pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, tpr) points from (0, 0) to (1, 1), one per distinct score threshold."""
    pos, neg = _split_scores(scores, labels)
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    fpr = [0.0]
    tpr = [0.0]
    for t in thresholds:
        tpr.append(float(np.mean(pos >= t)))
        fpr.append(float(np.mean(neg >= t)))
    return np.array(fpr), np.array(tpr)


# --------------------------------------------------------------------------
# SNR
# --------------------------------------------------------------------------

def snr(image, signal_roi, noise_roi) -> float:
    """``10 log10(|mu_S - mu_N|^2 / sigma_N^2)`` in dB."""
    image = np.asarray(image, dtype=np.float64)
    sig = image[np.asarray(signal_roi, dtype=bool)]
    noise = image[np.asarray(noise_roi, dtype=bool)]
    if sig.size == 0 or noise.size == 0:
        raise EmptyRegion("signal and noise regions must both be nonempty")
    sigma_n = float(noise.std())
    if sigma_n == 0:
        raise ZeroNoiseStd("noise region has zero standard deviation")
    contrast = abs(float(sig.mean()) - float(noise.mean()))
    with np.errstate(divide="ignore"):
        return float(10.0 * np.log10(contrast ** 2 / sigma_n ** 2))


# --------------------------------------------------------------------------
# classification
# --------------------------------------------------------------------------

def wilson_interval(successes: int, n: int, z: float = WILSON_Z) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    # rounding can leave the bound a hair inside p at the 0 / n extremes
    low = 0.0 if successes == 0 else min(p, max(0.0, centre - half))
    high = 1.0 if successes == n else max(p, min(1.0, centre + half))
    return low, high


@dataclass
class EvalReport:
    accuracy: float
    accuracy_low: float
    accuracy_high: float
    auc: float
    confusion: dict
    predictions: list[dict]
    mwu: dict = field(default_factory=dict)
    features: list[str] = field(default_factory=list)
    params: dict = field(default_factory=dict)
    runtime_seconds: float = 0.0
    interval_method: str = "wilson-95"

    @property
    def n_cases(self) -> int:
        return len(self.predictions)

    @property
    def correct(self) -> np.ndarray:
        return np.array([p["label"] == p["predicted"] for p in self.predictions], dtype=float)


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def loocv(values, labels, params: Optional[ForestParams] = None,
          case_ids: Optional[Sequence[str]] = None,
          feature_names: Optional[Sequence[str]] = None) -> EvalReport:
    """Leave-one-out random forest evaluation.

    Fold ``i`` trains on every case except ``i`` with a forest seeded from
    ``(seed, i)`` and scores case ``i`` only.
    """
    start = time.perf_counter()
    params = params or ForestParams()
    x = np.asarray(values, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(labels).astype(np.int64).ravel()
    n = x.shape[0]
    if n < 3:
        raise TooFewCases(f"LOOCV needs at least 3 cases, got {n}")
    if y.size != n:
        raise InvalidSequence(f"{n} rows vs {y.size} labels")
    case_ids = list(case_ids) if case_ids is not None else [str(i) for i in range(n)]
    names = list(feature_names) if feature_names is not None else [f"f{i}" for i in range(x.shape[1])]

    scores = np.zeros(n)
    for i in range(n):
        train = np.arange(n) != i
        fp = ForestParams(params.n_trees, params.max_depth, params.min_samples_leaf,
                          fold_seed(params.seed, i))
        model = RandomForest(fp).fit(x[train], y[train])
        scores[i] = model.predict_score(x[i:i + 1])[0]
    pred = (scores > 0.5).astype(np.int64)
    correct = int(np.sum(pred == y))
    low, high = wilson_interval(correct, n)
    confusion = {
        "tp": int(np.sum((pred == 1) & (y == 1))),
        "fp": int(np.sum((pred == 1) & (y == 0))),
        "tn": int(np.sum((pred == 0) & (y == 0))),
        "fn": int(np.sum((pred == 0) & (y == 1))),
    }
    auc = roc_auc(scores, y) if np.unique(y).size == 2 else float("nan")
    mwu = {}
    if np.unique(y).size == 2:
        for j, name in enumerate(names):
            r = mann_whitney_u(x[y == 1, j], x[y == 0, j])
            mwu[name] = {"U": r.u, "p": r.p_two_sided, "method": r.method}
    predictions = [
        {"case_id": case_ids[i], "label": int(y[i]), "predicted": int(pred[i]),
         "score": float(scores[i])}
        for i in range(n)
    ]
    return EvalReport(
        accuracy=correct / n,
        accuracy_low=low,
        accuracy_high=high,
        auc=auc,
        confusion=confusion,
        predictions=predictions,
        mwu=mwu,
        features=names,
        params={"n_trees": params.n_trees, "max_depth": params.max_depth,
                "min_samples_leaf": params.min_samples_leaf, "seed": params.seed},
        runtime_seconds=time.perf_counter() - start,
    )


def fold_ttest(correct_a, correct_b) -> tuple[float, float]:
    """Two-sample t-test on per-fold 0/1 outcomes of two methods (t, two-sided p)."""
    a = np.asarray(correct_a, dtype=np.float64)
    b = np.asarray(correct_b, dtype=np.float64)
    if np.var(a) == 0 and np.var(b) == 0:
        return (0.0, 1.0) if a.mean() == b.mean() else (float("inf"), 0.0)
    res = stats.ttest_ind(a, b)
    return float(res.statistic), float(res.pvalue)


# --------------------------------------------------------------------------
# noise sweep
# --------------------------------------------------------------------------

DEFAULT_NOISE_LEVELS = (0.03, 0.05, 0.08, 0.11, 0.14, 0.17, 0.20)


@dataclass
class NoiseSweepReport:
    levels: list[float]
    methods: list[str]
    snr_db: dict[str, list[float]]
    input_snr_db: list[float]
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("noise levels must be strictly increasing")


def add_noise(frames: np.ndarray, level: float, base_noise: np.ndarray) -> np.ndarray:
    """``frames + level * range * base_noise`` where range is the global dynamic range."""
    span = float(frames.max() - frames.min())
    return frames + (level * span) * base_noise


def noise_robustness_sweep(seq, methods: Sequence[str], levels: Sequence[float] = DEFAULT_NOISE_LEVELS,
                           seed: int = 0, signal_roi=None, noise_roi=None,
                           factorization_params: Optional[dict] = None) -> NoiseSweepReport:
    """SNR of each method's avatar as Gaussian input noise grows.

    One standard-normal field is drawn per seed and scaled by every level,
    so levels differ only in noise amplitude. ``input_snr_db`` is measured
    on the last noisy frame.
    """
    from .embedding import embed
    from .factorization import factorize

    levels = [float(v) for v in levels]
    if any(v < 0 for v in levels):
        raise ValueError("noise levels must be nonnegative")
    if signal_roi is None or noise_roi is None:
        raise EmptyRegion("noise sweep needs signal and noise regions")
    fparams = dict(factorization_params or {})
    frames = seq.frames
    tau, m, n = frames.shape
    base = np.random.default_rng(seed).standard_normal(frames.shape)
    out = {meth: [] for meth in methods}
    input_snr = []
    for level in levels:
        noisy = add_noise(frames, level, base)
        input_snr.append(snr(noisy[-1], signal_roi, noise_roi))
        x = noisy.reshape(tau, m * n).T
        for meth in methods:
            xm = x
            if meth in ("nmf", "sparse_nmf"):
                # multiplicative solvers need nonnegative input
                xm = x - min(float(x.min()), 0.0)
            f = factorize(xm, meth, **fparams)
            out[meth].append(snr(embed(f.bases, (m, n), meth).image, signal_roi, noise_roi))
    return NoiseSweepReport(levels, list(methods), out, input_snr,
                            params={"seed": seed, "noise_scale": "fraction of global dynamic range",
                                    **fparams})
