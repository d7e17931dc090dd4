"""Sparsity measure and membership embedding of low-rank bases into one avatar image."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import EmptyMatrix, InvalidSequence, MissingReference
from .thermal_data import RoiMask

ZERO_EPS = 1e-12
DEGENERATE_STD = 1e-12
# exp() overflows just above 709
_MAX_EXPONENT = 700.0

WEIGHTINGS = ("basis", "unit")


@dataclass(frozen=True)
class Avatar:
    image: np.ndarray
    source_method: str = ""
    normalization: dict = field(default_factory=dict)

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float64)
        if img.ndim != 2:
            raise InvalidSequence("avatar image must be 2-D")
        if not np.all(np.isfinite(img)):
            raise InvalidSequence("avatar image has non-finite values")
        object.__setattr__(self, "image", img)


def sparsity(q: np.ndarray, zero_eps: float = ZERO_EPS) -> float:
    """Fraction of entries with ``|q| <= zero_eps``."""
    q = np.asarray(q, dtype=np.float64)
    if q.size == 0:
        raise EmptyMatrix("sparsity of an empty matrix is undefined")
    return float(np.count_nonzero(np.abs(q) <= zero_eps)) / q.size


def membership(bases: np.ndarray) -> np.ndarray:
    """Elementwise membership ``exp((beta_i - mu) / sigma_i)`` for every basis column.

    ``mu`` is the grand mean over all bases and ``sigma_i`` the standard
    deviation of basis ``i``. A basis with ``sigma_i < 1e-12`` gets
    membership 1 everywhere.
    """
    bases = np.asarray(bases, dtype=np.float64)
    if bases.ndim == 1:
        bases = bases[:, None]
    mu = bases.mean()
    sigma = bases.std(axis=0)
    eta = np.ones_like(bases)
    live = sigma >= DEGENERATE_STD
    if np.any(live):
        z = (bases[:, live] - mu) / sigma[live]
        eta[:, live] = np.exp(np.clip(z, -_MAX_EXPONENT, _MAX_EXPONENT))
    return eta


def embed(bases: np.ndarray, frame_shape: tuple[int, int], source_method: str = "",
          weighting: str = "basis") -> Avatar:
    """Collapse ``MN x k`` bases into one ``M x N`` avatar.

    With the default ``weighting="basis"`` each membership map is weighted by
    its own basis, ``Phi = sum_i beta_i * eta_i``; ``"unit"`` sums the
    membership maps alone.
    """
    bases = np.asarray(bases, dtype=np.float64)
    if bases.ndim == 1:
        bases = bases[:, None]
    m, n = frame_shape
    if bases.shape[0] != m * n:
        raise InvalidSequence(f"bases have {bases.shape[0]} rows, frame is {m}x{n}")
    if bases.shape[1] < 1:
        raise EmptyMatrix("no bases to embed")
    if not np.all(np.isfinite(bases)):
        raise InvalidSequence("bases contain non-finite values")
    eta = membership(bases)
    if weighting == "basis":
        phi = np.sum(bases * eta, axis=1)
    elif weighting == "unit":
        phi = np.sum(eta, axis=1)
    else:
        raise ValueError(f"unknown weighting {weighting!r}; choose from {WEIGHTINGS}")
    return Avatar(phi.reshape(m, n), source_method=source_method,
                  normalization={"weighting": weighting})


def normalize_by_reference(avatar: Avatar, roi: RoiMask) -> Avatar:
    ref = roi.reference_mask
    if ref is None or not ref.any():
        raise MissingReference("ROI has no reference region to normalize against")
    if ref.shape != avatar.image.shape:
        raise InvalidSequence("reference mask shape differs from avatar")
    values = avatar.image[ref]
    mean = float(values.mean())
    std = float(values.std())
    image = (avatar.image - mean) / (std + 1e-12)
    record = dict(avatar.normalization)
    record.update({"reference_mean": mean, "reference_std": std})
    return Avatar(image, source_method=avatar.source_method, normalization=record)


def avatar_from_factorization(f, frame_shape: tuple[int, int], roi: Optional[RoiMask] = None,
                              weighting: str = "basis") -> Avatar:
    """Embed a factorization's bases and, when a reference region exists, normalize."""
    avatar = embed(f.bases, frame_shape, source_method=f.method, weighting=weighting)
    if roi is not None and roi.reference_mask is not None:
        avatar = normalize_by_reference(avatar, roi)
    return avatar
