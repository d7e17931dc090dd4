"""Block HSIC Lasso feature selection.

Each feature is mapped to a Gaussian-kernel Gram matrix per block of
samples, centered and scaled to unit Frobenius norm. The block HSIC
between two variables is the mean over blocks of ``tr(Kbar @ Cbar)``. The
lasso then solves

    min_{w >= 0}  0.5 w^T Q w - b^T w + lam * sum(w)

with ``b_k = HSIC_b(X_k, labels)`` and ``Q_kl = HSIC_b(X_k, X_l)`` by
cyclic coordinate descent.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    AllFeaturesDegenerate,
    BlockTooSmall,
    DegenerateKernel,
    NegativeLambda,
    NonPositiveBandwidth,
    NotNormalized,
    SizeMismatch,
)

log = logging.getLogger(__name__)

LABEL_KERNELS = ("delta", "rbf")
CD_TOL = 1e-8
CD_MAX_SWEEPS = 10_000
LAMBDA_PATH_POINTS = 20
LAMBDA_PATH_RATIO = 1e-3
_DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class GramMatrix:
    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        k = np.asarray(self.data, dtype=np.float64)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise SizeMismatch(f"Gram matrix must be square, got {k.shape}")
        object.__setattr__(self, "data", k)

    @property
    def size(self) -> int:
        return self.data.shape[0]


@dataclass
class SelectionResult:
    names: list[str]
    weights: np.ndarray
    ranked: list[tuple[str, float]]
    params: dict = field(default_factory=dict)
    objective_trace: list[float] = field(default_factory=list)
    dropped: list[str] = field(default_factory=list)

    def weight_of(self, name: str) -> float:
        return float(self.weights[self.names.index(name)])


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------

def median_bandwidth(x) -> float:
    """Median pairwise distance, or 1.0 when that median is zero."""
    x = np.asarray(x, dtype=np.float64).ravel()
    iu = np.triu_indices(x.size, k=1)
    d = np.abs(x[:, None] - x[None, :])[iu]
    med = float(np.median(d)) if d.size else 0.0
    return med if med > 0 else 1.0


def rbf_gram(x, sigma: float) -> GramMatrix:
    if not sigma > 0:
        raise NonPositiveBandwidth(f"bandwidth must be positive, got {sigma}")
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < 2:
        raise BlockTooSmall("need at least 2 samples for a Gram matrix")
    d2 = (x[:, None] - x[None, :]) ** 2
    return GramMatrix(np.exp(-d2 / (2.0 * sigma ** 2)), normalized=False)


def delta_gram(c) -> GramMatrix:
    """``C_ij = 1`` when labels agree, else 0."""
    c = np.asarray(c).ravel()
    return GramMatrix((c[:, None] == c[None, :]).astype(np.float64), normalized=False)


def _center_normalize_array(k: np.ndarray) -> Optional[np.ndarray]:
    # double centering == Gamma K Gamma with Gamma = I - 11^T / n
    kc = k - k.mean(axis=0, keepdims=True)
    kc = kc - kc.mean(axis=1, keepdims=True)
    norm = np.linalg.norm(kc)
    if norm <= _DEGENERATE_NORM * max(1.0, np.abs(k).max()):
        return None
    return kc / norm


def center_normalize(k: GramMatrix) -> GramMatrix:
    out = _center_normalize_array(k.data)
    if out is None:
        raise DegenerateKernel("centered Gram matrix vanishes (constant variable)")
    return GramMatrix(out, normalized=True)


def hsic_v(kbar: GramMatrix, cbar: GramMatrix) -> float:
    """``tr(Kbar Cbar)`` for two normalized Gram matrices."""
    if kbar.size != cbar.size:
        raise SizeMismatch(f"Gram sizes differ: {kbar.size} vs {cbar.size}")
    if not (kbar.normalized and cbar.normalized):
        raise NotNormalized("hsic_v expects centered, unit-norm Gram matrices")
    return float(np.trace(kbar.data @ cbar.data))


# --------------------------------------------------------------------------
# blocks
# --------------------------------------------------------------------------

def block_partition(n: int, delta: int, seed: Optional[int] = 0) -> list[np.ndarray]:
    """Index sets of ``n // delta`` blocks of ``delta`` samples.

    Samples are shuffled once with ``seed``; the trailing partial block is
    dropped. A single block keeps the original order.
    """
    if delta < 2:
        raise BlockTooSmall(f"block size must be >= 2, got {delta}")
    if delta > n:
        raise BlockTooSmall(f"block size {delta} exceeds sample count {n}")
    n_blocks = n // delta
    order = np.arange(n) if n_blocks == 1 else np.random.default_rng(seed).permutation(n)
    return [order[i * delta:(i + 1) * delta] for i in range(n_blocks)]


def _label_gram(c: np.ndarray, label_kernel: str, sigma: Optional[float]) -> np.ndarray:
    if label_kernel == "delta":
        return delta_gram(c).data
    if label_kernel == "rbf":
        return rbf_gram(c, sigma).data
    raise ValueError(f"unknown label kernel {label_kernel!r}; choose from {LABEL_KERNELS}")


def block_hsic(feature, labels, delta: int, label_kernel: str = "delta",
               seed: Optional[int] = 0, sigma: Optional[float] = None) -> float:
    """Block estimate ``(delta / n) * sum_l HSIC_v`` over the sample blocks.

    ``sigma`` defaults to the median heuristic on the full feature. Blocks
    where either normalized Gram matrix vanishes are skipped and the average
    is taken over the surviving blocks.
    """
    x = np.asarray(feature, dtype=np.float64).ravel()
    c = np.asarray(labels).ravel()
    if x.size != c.size:
        raise SizeMismatch(f"{x.size} feature values vs {c.size} labels")
    sigma = median_bandwidth(x) if sigma is None else sigma
    c_sigma = median_bandwidth(c) if label_kernel == "rbf" else None
    vals = []
    for idx in block_partition(x.size, delta, seed):
        kbar = _center_normalize_array(rbf_gram(x[idx], sigma).data)
        cbar = _center_normalize_array(_label_gram(c[idx], label_kernel, c_sigma))
        if kbar is None or cbar is None:
            continue
        vals.append(float(np.trace(kbar @ cbar)))
    if not vals:
        raise DegenerateKernel("every block is degenerate")
    return float(np.mean(vals))


def _block_vectors(values: np.ndarray, blocks, sigmas):
    """Per block, a ``(d, delta^2)`` matrix of vectorized normalized Grams and an alive mask."""
    out = []
    d = values.shape[1]
    for idx in blocks:
        mat = np.zeros((d, idx.size * idx.size))
        alive = np.zeros(d, dtype=bool)
        for k in range(d):
            kbar = _center_normalize_array(rbf_gram(values[idx, k], sigmas[k]).data)
            if kbar is not None:
                mat[k] = kbar.ravel()
                alive[k] = True
        out.append((mat, alive))
    return out


def hsic_statistics(values: np.ndarray, labels, delta: int, label_kernel: str = "delta",
                    seed: Optional[int] = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(b, Q, usable)``: label relevance, feature redundancy, usable-feature mask."""
    values = np.asarray(values, dtype=np.float64)
    c = np.asarray(labels).ravel()
    n, d = values.shape
    if c.size != n:
        raise SizeMismatch(f"{n} samples vs {c.size} labels")
    blocks = block_partition(n, delta, seed)
    sigmas = [median_bandwidth(values[:, k]) for k in range(d)]
    c_sigma = median_bandwidth(c) if label_kernel == "rbf" else None

    q_sum = np.zeros((d, d))
    q_cnt = np.zeros((d, d))
    b_sum = np.zeros(d)
    b_cnt = np.zeros(d)
    for idx, (mat, alive) in zip(blocks, _block_vectors(values, blocks, sigmas)):
        q_sum += mat @ mat.T
        q_cnt += np.outer(alive, alive)
        cbar = _center_normalize_array(_label_gram(c[idx], label_kernel, c_sigma))
        if cbar is not None:
            b_sum += mat @ cbar.ravel()
            b_cnt += alive
    q = np.divide(q_sum, q_cnt, out=np.zeros_like(q_sum), where=q_cnt > 0)
    b = np.divide(b_sum, b_cnt, out=np.zeros_like(b_sum), where=b_cnt > 0)
    usable = np.diag(q_cnt) > 0
    return b, q, usable


# --------------------------------------------------------------------------
# lasso
# --------------------------------------------------------------------------

def lasso_objective(w: np.ndarray, b: np.ndarray, q: np.ndarray, lam: float) -> float:
    return float(0.5 * w @ q @ w - b @ w + lam * w.sum())


def nonnegative_lasso(b: np.ndarray, q: np.ndarray, lam: float, w0: Optional[np.ndarray] = None,
                      tol: float = CD_TOL, max_sweeps: int = CD_MAX_SWEEPS):
    """Cyclic coordinate descent; returns ``(w, objective_trace)``."""
    d = b.size
    w = np.zeros(d) if w0 is None else np.array(w0, dtype=np.float64)
    grad_part = q @ w
    trace = [lasso_objective(w, b, q, lam)]
    for _ in range(max_sweeps):
        max_step = 0.0
        for k in range(d):
            qkk = q[k, k]
            if qkk <= 0:
                continue
            rest = grad_part[k] - qkk * w[k]
            new = max(0.0, (b[k] - lam - rest) / qkk)
            step = new - w[k]
            if step != 0.0:
                grad_part += step * q[:, k]
                w[k] = new
                max_step = max(max_step, abs(step))
        trace.append(lasso_objective(w, b, q, lam))
        if max_step < tol:
            break
    return w, trace


def _rank(names: Sequence[str], weights: np.ndarray) -> list[tuple[str, float]]:
    top = weights.max() if weights.size else 0.0
    if top <= 0:
        return []
    # stable sort keeps manifest order among equal weights
    order = np.argsort(-weights, kind="stable")
    return [(names[i], float(weights[i] / top)) for i in order if weights[i] > 0]


def block_hsic_lasso(features, labels=None, names: Optional[Sequence[str]] = None,
                     delta: int = 20, lam: Optional[float] = None, label_kernel: str = "delta",
                     seed: Optional[int] = 0, target_count: int = 3) -> SelectionResult:
    """Select features by Block HSIC Lasso.

    ``features`` is a :class:`~thermavatar.thermomics.FeatureMatrix` or an
    ``(n, d)`` array (then ``labels`` and optionally ``names`` are needed).
    With ``lam=None`` a 20-point geometric path from the zero-solution bound
    down by a factor 1000 is scanned and the smallest ``lam`` giving at most
    ``target_count`` nonzero weights is kept.
    """
    if hasattr(features, "values") and hasattr(features, "names"):
        values = np.asarray(features.values, dtype=np.float64)
        names = list(features.names)
        labels = features.labels if labels is None else labels
    else:
        values = np.asarray(features, dtype=np.float64)
        names = list(names) if names is not None else [f"f{i}" for i in range(values.shape[1])]
    if lam is not None and lam < 0:
        raise NegativeLambda(f"lambda must be >= 0, got {lam}")

    constant = np.ptp(values, axis=0) == 0
    b, q, usable = hsic_statistics(values, labels, delta, label_kernel, seed)
    usable &= ~constant
    dropped = [names[i] for i in np.flatnonzero(~usable)]
    if dropped:
        log.warning("dropping %d degenerate feature(s): %s", len(dropped), ", ".join(dropped[:5]))
    keep = np.flatnonzero(usable)
    if keep.size == 0:
        raise AllFeaturesDegenerate("no feature has a usable kernel")
    bk, qk = b[keep], q[np.ix_(keep, keep)]

    lam_max = float(max(bk.max(), 0.0))
    if lam is None:
        path = np.geomspace(lam_max, lam_max * LAMBDA_PATH_RATIO, LAMBDA_PATH_POINTS) \
            if lam_max > 0 else np.zeros(1)
        w_prev = None
        chosen = None
        for lam_j in path:
            w_j, trace_j = nonnegative_lasso(bk, qk, float(lam_j), w0=w_prev)
            w_prev = w_j
            if np.count_nonzero(w_j) <= target_count:
                chosen = (float(lam_j), w_j, trace_j)
        lam_used, wk, trace = chosen
        lam_rule = "path"
    else:
        lam_used = float(lam)
        wk, trace = nonnegative_lasso(bk, qk, lam_used)
        lam_rule = "fixed"

    weights = np.zeros(len(names))
    weights[keep] = wk
    return SelectionResult(
        names=names,
        weights=weights,
        ranked=_rank(names, weights),
        params={"lambda": lam_used, "lambda_rule": lam_rule, "lambda_max": lam_max,
                "delta": delta, "n_samples": values.shape[0], "label_kernel": label_kernel,
                "bandwidth_rule": "median", "seed": seed, "target_count": target_count},
        objective_trace=trace,
        dropped=dropped,
    )


def select_top_k(result: SelectionResult, k: int) -> list[tuple[str, float]]:
    if k < 1:
        raise ValueError("k must be >= 1")
    return result.ranked[:k]
