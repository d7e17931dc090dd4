"""Low-rank factorizations of the heat matrix.

All solvers take an ``(MN, tau)`` matrix (or a :class:`HeatMatrix`) and return
factors ``B`` (``MN x k``) and ``A`` (``k x tau``) such that ``X ~ B @ A``.
Iterative solvers record the cost before the first sweep and after every
sweep in ``objective_trace``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import nnls
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from .errors import BadLayerSizes, NegativeInput, NegativeLambda, RankTooLarge
from .thermal_data import HeatMatrix

METHODS = ("pct", "nmf", "sparse_nmf", "semi_nmf", "deep_semi_nmf")
NMF_SOLVERS = ("mu", "anls")

RIDGE = 1e-12

ArrayLike = Union[np.ndarray, HeatMatrix]


@dataclass
class Factorization:
    bases: np.ndarray
    coeffs: np.ndarray
    objective_trace: list[float]
    method: str
    # column means removed before PCT; added back by reconstruct()
    offset: Optional[np.ndarray] = None
    seed: Optional[int] = None
    params: dict = field(default_factory=dict)

    @property
    def rank(self) -> int:
        return self.bases.shape[1]

    @property
    def iterations(self) -> int:
        return max(len(self.objective_trace) - 1, 0)


@dataclass
class DeepFactorization:
    layers: list[np.ndarray]
    top_coeffs: np.ndarray
    objective_trace: list[float]
    per_layer_coeffs: Optional[list[np.ndarray]] = None
    pretrain_cost: float = float("nan")
    seed: Optional[int] = None
    params: dict = field(default_factory=dict)
    method: str = "deep_semi_nmf"
    # per-layer Semi-NMF cost traces recorded during pretraining
    pretrain_traces: list = field(default_factory=list)

    @property
    def layer_sizes(self) -> list[int]:
        return [b.shape[1] for b in self.layers]

    @property
    def bases(self) -> np.ndarray:
        """Collapsed basis ``B1 @ B2 @ ... @ Bm`` of shape ``(MN, k_m)``."""
        return _chain(self.layers)

    @property
    def coeffs(self) -> np.ndarray:
        return self.top_coeffs

    @property
    def iterations(self) -> int:
        return max(len(self.objective_trace) - 1, 0)


def _as_array(x: ArrayLike) -> np.ndarray:
    if isinstance(x, HeatMatrix):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _chain(mats: Sequence[np.ndarray]) -> np.ndarray:
    out = mats[0]
    for m in mats[1:]:
        out = out @ m
    return out


def _check_rank(x: np.ndarray, k: int) -> None:
    if not 1 <= k <= min(x.shape):
        raise RankTooLarge(f"rank {k} outside [1, {min(x.shape)}] for a {x.shape} matrix")


def _check_nonnegative(x: np.ndarray) -> None:
    if np.any(x < 0):
        raise NegativeInput("input has negative entries; use semi_nmf for mixed-sign data")


def half_sq_error(x: np.ndarray, approx: np.ndarray) -> float:
    r = x - approx
    return 0.5 * float(np.einsum("ij,ij->", r, r))


def _converged(prev: float, cur: float, tol: float) -> bool:
    if prev == 0.0:
        return True
    return abs(prev - cur) <= tol * abs(prev)


def _rng(seed: Optional[int]) -> np.random.Generator:
    return np.random.default_rng(seed)


def _sign_fix(u: np.ndarray, *others: np.ndarray) -> None:
    # make the largest-magnitude entry of each singular vector positive, in place
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    u *= signs
    for o in others:
        o *= signs[:, None]


# --------------------------------------------------------------------------
# PCT
# --------------------------------------------------------------------------

def pct(x: ArrayLike, k: int = 8) -> Factorization:
    """Principal component thermography.

    Each frame (column) is centered by its own mean, then the top-``k`` left
    singular vectors become the bases and the projections the coefficients.
    """
    x = _as_array(x)
    _check_rank(x, k)
    offset = x.mean(axis=0, keepdims=True)
    xc = x - offset
    u, s, vt = np.linalg.svd(xc, full_matrices=False)
    u = u[:, :k].copy()
    vt = vt[:k].copy()
    _sign_fix(u, vt)
    coeffs = u.T @ xc
    cost = half_sq_error(xc, u @ coeffs)
    return Factorization(u, coeffs, [cost], "pct", offset=offset, params={"k": k})


# --------------------------------------------------------------------------
# NMF / sparse NMF
# --------------------------------------------------------------------------

def init_nonnegative(x: np.ndarray, k: int, seed: Optional[int]) -> tuple[np.ndarray, np.ndarray]:
    rng = _rng(seed)
    scale = np.sqrt(max(float(x.mean()), 0.0) / k)
    b = rng.uniform(0.0, 1.0, size=(x.shape[0], k)) * scale
    a = rng.uniform(0.0, 1.0, size=(k, x.shape[1])) * scale
    return b, a


def _mu_coeffs(x, b, a):
    num = b.T @ x
    den = (b.T @ b) @ a
    return a * np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def _mu_bases(x, b, a, lam):
    # Minimizer of the Lee-Seung diagonal majorizer plus lam * sum(B) over B >= 0:
    # the l1 weight shifts the numerator and clips at zero, so entries can hit 0 exactly.
    num = x @ a.T
    if lam > 0:
        num = np.maximum(num - lam, 0.0)
    den = b @ (a @ a.T)
    return b * np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def _nnls_rows(target: np.ndarray, design: np.ndarray) -> np.ndarray:
    # solve min ||design @ w - target[:, j]|| with w >= 0 for every column j
    out = np.empty((design.shape[1], target.shape[1]))
    for j in range(target.shape[1]):
        out[:, j], _ = nnls(design, target[:, j])
    return out


def _sparse_cost(x, b, a, lam):
    return half_sq_error(x, b @ a) + lam * float(b.sum())


def _run_nmf(x, k, lam, max_iters, tol, seed, solver, init):
    if init is None:
        b, a = init_nonnegative(x, k, seed)
    else:
        b, a = (np.array(m, dtype=np.float64) for m in init)
    trace = [_sparse_cost(x, b, a, lam)]
    for _ in range(max_iters):
        if solver == "mu":
            a = _mu_coeffs(x, b, a)
            b = _mu_bases(x, b, a, lam)
        else:
            a = _nnls_rows(x, b)
            b = _nnls_rows(x.T, a.T).T
        trace.append(_sparse_cost(x, b, a, lam))
        if _converged(trace[-2], trace[-1], tol):
            break
    return b, a, trace


def nmf(x: ArrayLike, k: int = 8, max_iters: int = 500, tol: float = 1e-6,
        seed: Optional[int] = 0, solver: str = "mu",
        init: Optional[tuple[np.ndarray, np.ndarray]] = None) -> Factorization:
    """Nonnegative factorization minimizing ``0.5 * ||X - BA||_F^2``.

    ``solver="mu"`` uses Lee-Seung multiplicative updates; ``"anls"`` solves
    each factor exactly by nonnegative least squares in turn.
    """
    x = _as_array(x)
    _check_nonnegative(x)
    _check_rank(x, k)
    if solver not in NMF_SOLVERS:
        raise ValueError(f"unknown NMF solver {solver!r}")
    b, a, trace = _run_nmf(x, k, 0.0, max_iters, tol, seed, solver, init)
    return Factorization(b, a, trace, "nmf", seed=seed,
                         params={"k": k, "solver": solver, "max_iters": max_iters, "tol": tol})


def sparse_nmf(x: ArrayLike, k: int = 8, lam: float = 0.1, max_iters: int = 500,
               tol: float = 1e-6, seed: Optional[int] = 0,
               init: Optional[tuple[np.ndarray, np.ndarray]] = None) -> Factorization:
    """NMF with an l1 penalty on the bases: ``0.5 ||X - BA||^2 + lam * ||B||_1``.

    With ``lam == 0`` the iterates are exactly those of :func:`nmf`.
    """
    x = _as_array(x)
    if lam < 0:
        raise NegativeLambda(f"lambda must be >= 0, got {lam}")
    _check_nonnegative(x)
    _check_rank(x, k)
    b, a, trace = _run_nmf(x, k, float(lam), max_iters, tol, seed, "mu", init)
    return Factorization(b, a, trace, "sparse_nmf", seed=seed,
                         params={"k": k, "lambda": lam, "max_iters": max_iters, "tol": tol})


# --------------------------------------------------------------------------
# Semi-NMF
# --------------------------------------------------------------------------

def _pos(m):
    return (np.abs(m) + m) / 2.0


def _neg(m):
    return (np.abs(m) - m) / 2.0


def ls_bases(x: np.ndarray, a: np.ndarray) -> np.ndarray:
    """``B = X A^T (A A^T + eps I)^{-1}``."""
    gram = a @ a.T
    gram[np.diag_indices_from(gram)] += RIDGE
    return np.linalg.solve(gram, a @ x.T).T


def semi_coeff_update(x: np.ndarray, b: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Multiplicative step on the nonnegative coefficients with sign-split terms."""
    btx = b.T @ x
    btb = b.T @ b
    num = _pos(btx) + _neg(btb) @ a
    den = _neg(btx) + _pos(btb) @ a
    ratio = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return a * np.sqrt(ratio)


def init_semi(x: np.ndarray, k: int, seed: Optional[int]) -> tuple[np.ndarray, np.ndarray]:
    """Cluster-indicator start: k-means over the columns of ``X``.

    Coefficients are the one-hot cluster indicators plus 0.2, bases their
    least-squares fit.
    """
    with warnings.catch_warnings():
        # fewer distinct columns than clusters only degrades the start
        warnings.simplefilter("ignore", ConvergenceWarning)
        labels = KMeans(n_clusters=k, n_init=10, random_state=seed).fit(x.T).labels_
    a = np.full((k, x.shape[1]), 0.2)
    a[labels, np.arange(x.shape[1])] += 1.0
    return ls_bases(x, a), a


def semi_nmf(x: ArrayLike, k: int = 8, max_iters: int = 500, tol: float = 1e-6,
             seed: Optional[int] = 0,
             init: Optional[tuple[np.ndarray, np.ndarray]] = None) -> Factorization:
    """Semi-NMF: unconstrained bases, nonnegative coefficients.

    One sweep is a multiplicative coefficient step followed by the exact
    least-squares basis solve; both steps are non-increasing in cost.
    """
    x = _as_array(x)
    _check_rank(x, k)
    if init is None:
        b, a = init_semi(x, k, seed)
    else:
        b, a = (np.array(m, dtype=np.float64) for m in init)
    trace = [half_sq_error(x, b @ a)]
    for _ in range(max_iters):
        a = semi_coeff_update(x, b, a)
        b = ls_bases(x, a)
        trace.append(half_sq_error(x, b @ a))
        if _converged(trace[-2], trace[-1], tol):
            break
    return Factorization(b, a, trace, "semi_nmf", seed=seed,
                         params={"k": k, "max_iters": max_iters, "tol": tol})


# --------------------------------------------------------------------------
# Deep Semi-NMF
# --------------------------------------------------------------------------

def _check_layers(x: np.ndarray, layer_sizes: Sequence[int]) -> list[int]:
    sizes = [int(s) for s in layer_sizes]
    if not sizes or any(s < 1 for s in sizes):
        raise BadLayerSizes(f"layer sizes must be positive, got {sizes}")
    if any(a < b for a, b in zip(sizes, sizes[1:])):
        raise BadLayerSizes(f"layer sizes must be non-increasing, got {sizes}")
    _check_rank(x, sizes[0])
    return sizes


def _left_solve(psi: np.ndarray, y: np.ndarray) -> np.ndarray:
    gram = psi.T @ psi
    gram[np.diag_indices_from(gram)] += RIDGE
    return np.linalg.solve(gram, psi.T @ y)


def deep_semi_nmf(x: ArrayLike, layer_sizes: Sequence[int] = (12, 8),
                  pretrain_iters: int = 500, finetune_iters: int = 200,
                  tol: float = 1e-6, seed: Optional[int] = 0) -> DeepFactorization:
    """Deep Semi-NMF ``X ~ B1 B2 ... Bm Am`` with layer-wise pretraining.

    Pretraining factorizes ``X ~ B1 A1`` and then each ``A_{i-1} ~ B_i A_i``
    with Semi-NMF, so every intermediate coefficient matrix stays
    nonnegative. Fine-tuning sweeps update ``Am`` multiplicatively and each
    ``B_i`` by least squares with the other factors fixed; a step that would
    raise the cost is discarded, so the trace never increases.
    """
    x = _as_array(x)
    sizes = _check_layers(x, layer_sizes)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes)) if seed is not None else [None] * len(sizes)

    layers: list[np.ndarray] = []
    coeffs: list[np.ndarray] = []
    pre_traces: list[list[float]] = []
    target = x
    for i, k in enumerate(sizes):
        # layer 0 reuses the caller's seed so a one-layer model shares semi_nmf's init
        layer_seed = seed if i == 0 else int(seeds[i].generate_state(1)[0])
        f = semi_nmf(target, k, max_iters=pretrain_iters, tol=tol, seed=layer_seed)
        layers.append(f.bases)
        coeffs.append(f.coeffs)
        pre_traces.append(f.objective_trace)
        target = f.coeffs
    a_top = coeffs[-1]

    cost = half_sq_error(x, _chain(layers) @ a_top)
    trace = [cost]
    m = len(layers)
    for _ in range(finetune_iters):
        prev = cost
        cand = semi_coeff_update(x, _chain(layers), a_top)
        c = half_sq_error(x, _chain(layers) @ cand)
        if c <= cost:
            a_top, cost = cand, c
        for i in range(m):
            right = _chain(layers[i + 1:] + [a_top])
            cand_b = ls_bases(x, right)
            if i > 0:
                cand_b = _left_solve(_chain(layers[:i]), cand_b)
            trial = layers[:i] + [cand_b] + layers[i + 1:]
            c = half_sq_error(x, _chain(trial) @ a_top)
            if c <= cost:
                layers, cost = trial, c
        trace.append(cost)
        if _converged(prev, cost, tol):
            break

    return DeepFactorization(
        layers=layers,
        top_coeffs=a_top,
        objective_trace=trace,
        per_layer_coeffs=coeffs[:-1] or None,
        pretrain_cost=trace[0],
        seed=seed,
        params={"layer_sizes": sizes, "pretrain_iters": pretrain_iters,
                "finetune_iters": finetune_iters, "tol": tol},
        pretrain_traces=pre_traces,
    )


def reconstruct(f: Union[Factorization, DeepFactorization]) -> np.ndarray:
    if isinstance(f, DeepFactorization):
        return _chain(f.layers + [f.top_coeffs])
    out = f.bases @ f.coeffs
    if f.offset is not None:
        out = out + f.offset
    return out


def factorize(x: ArrayLike, method: str, *, k: int = 8, layer_sizes: Sequence[int] = (12, 8),
              max_iters: int = 500, finetune_iters: int = 200, tol: float = 1e-6,
              lam: float = 0.1, seed: Optional[int] = 0,
              solver: str = "mu") -> Union[Factorization, DeepFactorization]:
    """Dispatch on ``method`` with the shared parameter set used by the CLI."""
    if method == "pct":
        return pct(x, k)
    if method == "nmf":
        return nmf(x, k, max_iters=max_iters, tol=tol, seed=seed, solver=solver)
    if method == "sparse_nmf":
        return sparse_nmf(x, k, lam=lam, max_iters=max_iters, tol=tol, seed=seed)
    if method == "semi_nmf":
        return semi_nmf(x, k, max_iters=max_iters, tol=tol, seed=seed)
    if method == "deep_semi_nmf":
        return deep_semi_nmf(x, layer_sizes, pretrain_iters=max_iters,
                             finetune_iters=finetune_iters, tol=tol, seed=seed)
    raise ValueError(f"unknown factorization method {method!r}; choose from {METHODS}")
