"""Thermomic features: first-order statistics, co-occurrence texture, filter-bank statistics.

Every avatar yields exactly 300 named values in the order fixed by the
versioned feature manifest shipped with the package
(``feature_manifest_v1.txt``):

* 11 first-order statistics of the raw ROI values,
* 150 co-occurrence statistics (6 statistics x 5 distances x 5 angles),
* 139 filter-bank statistics over 10 filtered images: the first nine give
  the 11 first-order statistics plus the 5th, 25th and 75th percentiles,
  the last (wavelet HH) gives the 11 plus the 5th and 25th percentiles.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import BadOffset, ImageTooSmall, InvalidMask, NotNormalized, NoValidPairs, TooFewPixels

MANIFEST_VERSION = "v1"
N_FEATURES = 300

STAT_KEYS = ("p10", "p90", "max", "min", "median", "mean", "IQR", "Gray range", "MAD", "std",
             "skewness")
EXTRA_PERCENTILES = (5, 25, 75)

DISTANCES = (1, 2, 3, 4, 5)
ANGLES = (0.0, np.pi / 4, np.pi / 2, 3 * np.pi / 4, np.pi)
ANGLE_LABELS = ("0", "π/4", "π/2", "3π/4", "π")
TEXTURE_STATS = ("Contrast", "Dissimilarity", "Correlation", "Energy", "Homogeneity", "ASM")
LEVELS = 16

LOG_SIGMAS = (1.0, 2.0)
GABOR_ANGLES = ANGLES[:4]
GABOR_WAVELENGTH = 4.0
GABOR_SIGMA = 2.0
WAVELET_BANDS = ("LL", "LH", "HL", "HH")
MIN_FILTER_SIZE = 8

_NORMALIZATION_TOL = 1e-9


@dataclass(frozen=True)
class FeatureVector:
    names: tuple[str, ...]
    values: np.ndarray


@dataclass
class FeatureMatrix:
    names: list[str]
    values: np.ndarray
    case_ids: list[str]
    labels: np.ndarray

    def columns(self, names: Sequence[str]) -> np.ndarray:
        idx = [self.names.index(n) for n in names]
        return self.values[:, idx]


# --------------------------------------------------------------------------
# first-order statistics
# --------------------------------------------------------------------------

def first_order_features(pixels) -> dict[str, float]:
    """The 11 first-order statistics of a pixel sample (population moments)."""
    v = np.asarray(pixels, dtype=np.float64).ravel()
    if v.size < 2:
        raise TooFewPixels(f"need at least 2 pixels, got {v.size}")
    p10, p25, p50, p75, p90 = np.percentile(v, [10, 25, 50, 75, 90])
    mean = v.mean()
    dev = v - mean
    std = np.sqrt(np.mean(dev ** 2))
    # standardize first: std ** 3 underflows for tiny spreads
    skew = float(np.mean((dev / std) ** 3)) if std > 0 else 0.0
    vmin, vmax = v.min(), v.max()
    return {
        "p10": float(p10),
        "p90": float(p90),
        "max": float(vmax),
        "min": float(vmin),
        "median": float(p50),
        "mean": float(mean),
        "IQR": float(p75 - p25),
        "Gray range": float(vmax - vmin),
        "MAD": float(np.mean(np.abs(dev))),
        "std": float(std),
        "skewness": skew,
    }


# --------------------------------------------------------------------------
# co-occurrence
# --------------------------------------------------------------------------

def quantize(image: np.ndarray, mask: np.ndarray, levels: int = LEVELS) -> np.ndarray:
    """Map ROI values linearly onto ``0..levels-1`` over the ROI min-max range."""
    vals = image[mask]
    lo, hi = vals.min(), vals.max()
    q = np.zeros(image.shape, dtype=np.int64)
    if hi > lo:
        scaled = np.floor((image - lo) / (hi - lo) * levels)
        q = np.clip(scaled, 0, levels - 1).astype(np.int64)
    q[~mask] = 0
    return q


def offset(distance: int, angle: float) -> tuple[int, int]:
    """Row/column step for a pixel pair at ``distance`` along ``angle`` (0 = right)."""
    if int(distance) != distance or distance < 1:
        raise BadOffset(f"distance must be a positive integer, got {distance}")
    dr = -int(np.round(distance * np.sin(angle)))
    dc = int(np.round(distance * np.cos(angle)))
    if dr == 0 and dc == 0:
        raise BadOffset(f"offset ({distance}, {angle}) rounds to zero")
    return dr, dc


def _cooccurrence(q: np.ndarray, mask: np.ndarray, dr: int, dc: int, levels: int) -> np.ndarray:
    m, n = q.shape
    r0, r1 = max(0, -dr), min(m, m - dr)
    c0, c1 = max(0, -dc), min(n, n - dc)
    if r0 >= r1 or c0 >= c1:
        return np.zeros((levels, levels))
    a = q[r0:r1, c0:c1]
    b = q[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
    valid = mask[r0:r1, c0:c1] & mask[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
    codes = a[valid] * levels + b[valid]
    counts = np.bincount(codes, minlength=levels * levels).reshape(levels, levels).astype(np.float64)
    return counts + counts.T


def tlcm(image: np.ndarray, roi: Optional[np.ndarray], distance: int, angle: float,
         levels: int = LEVELS) -> np.ndarray:
    """Normalized symmetric co-occurrence matrix of the ROI at one offset.

    Pairs with either pixel outside the ROI (or the image) are skipped.
    """
    image = np.asarray(image, dtype=np.float64)
    mask = np.ones(image.shape, bool) if roi is None else np.asarray(roi, dtype=bool)
    if not mask.any():
        raise InvalidMask("ROI has no pixels")
    dr, dc = offset(distance, angle)
    counts = _cooccurrence(quantize(image, mask, levels), mask, dr, dc, levels)
    total = counts.sum()
    if total == 0:
        raise NoValidPairs(f"no pixel pairs inside the ROI at offset ({distance}, {angle:.4f})")
    return counts / total


def tlcm_features(p: np.ndarray) -> dict[str, float]:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise NotNormalized(f"co-occurrence matrix must be square, got {p.shape}")
    if abs(p.sum() - 1.0) > _NORMALIZATION_TOL or np.any(p < 0):
        raise NotNormalized(f"co-occurrence matrix sums to {p.sum()!r}")
    i, j = np.indices(p.shape)
    diff = i - j
    asm = float(np.sum(p ** 2))
    mu_i = float(np.sum(i * p))
    mu_j = float(np.sum(j * p))
    sd_i = np.sqrt(float(np.sum((i - mu_i) ** 2 * p)))
    sd_j = np.sqrt(float(np.sum((j - mu_j) ** 2 * p)))
    if sd_i * sd_j > 1e-15:
        corr = float(np.sum((i - mu_i) * (j - mu_j) * p) / (sd_i * sd_j))
    else:
        corr = 1.0
    return {
        "Contrast": float(np.sum(diff ** 2 * p)),
        "Dissimilarity": float(np.sum(np.abs(diff) * p)),
        "Correlation": corr,
        "Energy": float(np.sqrt(asm)),
        "Homogeneity": float(np.sum(p / (1.0 + diff ** 2))),
        "ASM": asm,
    }


# --------------------------------------------------------------------------
# filter bank
# --------------------------------------------------------------------------

def log_kernel(sigma: float) -> np.ndarray:
    """Sampled Laplacian-of-Gaussian, radius ``ceil(4 sigma)``, shifted to zero sum."""
    r = int(np.ceil(4 * sigma))
    y, x = np.mgrid[-r:r + 1, -r:r + 1].astype(np.float64)
    s2 = (x ** 2 + y ** 2) / (2 * sigma ** 2)
    k = -1.0 / (np.pi * sigma ** 4) * (1.0 - s2) * np.exp(-s2)
    return k - k.mean()


def gabor_kernel(theta: float, wavelength: float = GABOR_WAVELENGTH,
                 sigma: float = GABOR_SIGMA) -> np.ndarray:
    """Real (even) Gabor kernel, radius ``ceil(3 sigma)``, shifted to zero sum."""
    r = int(np.ceil(3 * sigma))
    y, x = np.mgrid[-r:r + 1, -r:r + 1].astype(np.float64)
    xr = x * np.cos(theta) + y * np.sin(theta)
    yr = -x * np.sin(theta) + y * np.cos(theta)
    k = np.exp(-(xr ** 2 + yr ** 2) / (2 * sigma ** 2)) * np.cos(2 * np.pi * xr / wavelength)
    return k - k.mean()


_HAAR_LO = np.array([1.0, 1.0]) / np.sqrt(2.0)
_HAAR_HI = np.array([1.0, -1.0]) / np.sqrt(2.0)


def _haar_bands(image: np.ndarray) -> dict[str, np.ndarray]:
    # undecimated single-level Haar, so every band keeps the input size
    out = {}
    for name, (vert, horiz) in {"LL": (_HAAR_LO, _HAAR_LO), "LH": (_HAAR_LO, _HAAR_HI),
                                "HL": (_HAAR_HI, _HAAR_LO), "HH": (_HAAR_HI, _HAAR_HI)}.items():
        out[name] = ndimage.correlate(image, np.outer(vert, horiz), mode="reflect")
    return out


def filter_names() -> list[str]:
    return ([f"LOG-{s:g}" for s in LOG_SIGMAS]
            + [f"Gabor-{lab}" for lab in ANGLE_LABELS[:len(GABOR_ANGLES)]]
            + [f"Wavelet-{b}" for b in WAVELET_BANDS])


def filter_bank(image: np.ndarray) -> dict[str, np.ndarray]:
    """Ten same-size filtered images with symmetric boundary extension."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or min(image.shape) < MIN_FILTER_SIZE:
        raise ImageTooSmall(f"filter bank needs at least {MIN_FILTER_SIZE}x{MIN_FILTER_SIZE}, "
                            f"got {image.shape}")
    out = {}
    for s in LOG_SIGMAS:
        out[f"LOG-{s:g}"] = ndimage.convolve(image, log_kernel(s), mode="reflect")
    for theta, lab in zip(GABOR_ANGLES, ANGLE_LABELS):
        out[f"Gabor-{lab}"] = ndimage.convolve(image, gabor_kernel(theta), mode="reflect")
    for band, img in _haar_bands(image).items():
        out[f"Wavelet-{band}"] = img
    return out


# --------------------------------------------------------------------------
# manifest and extraction
# --------------------------------------------------------------------------

def _filter_stat_keys(last: bool) -> list[str]:
    extra = EXTRA_PERCENTILES[:2] if last else EXTRA_PERCENTILES
    return list(STAT_KEYS) + [f"p{p}" for p in extra]


def build_feature_names() -> list[str]:
    names = [f"First order-{k}" for k in STAT_KEYS]
    for stat in TEXTURE_STATS:
        for d in DISTANCES:
            for lab in ANGLE_LABELS:
                names.append(f"{stat} {d}-{lab}")
    fnames = filter_names()
    for i, f in enumerate(fnames):
        for key in _filter_stat_keys(i == len(fnames) - 1):
            names.append(f"{f}-firstorder-{key}")
    return names


@lru_cache(maxsize=None)
def manifest_text() -> str:
    return resources.files(__package__).joinpath(
        f"feature_manifest_{MANIFEST_VERSION}.txt").read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def feature_names() -> tuple[str, ...]:
    """Feature names in manifest order, read from the shipped manifest."""
    lines = [ln for ln in manifest_text().splitlines() if ln and not ln.startswith("#")]
    return tuple(lines)


def manifest_hash() -> str:
    return hashlib.sha256(manifest_text().encode("utf-8")).hexdigest()[:16]


def render_manifest() -> str:
    names = build_feature_names()
    return (f"# thermavatar feature manifest {MANIFEST_VERSION}\n"
            f"# {len(names)} features, one per line, in output column order\n"
            + "\n".join(names) + "\n")


def _texture_block(image: np.ndarray, mask: np.ndarray) -> dict[str, float]:
    q = quantize(image, mask, LEVELS)
    out = {}
    for d in DISTANCES:
        for theta, lab in zip(ANGLES, ANGLE_LABELS):
            dr, dc = offset(d, theta)
            counts = _cooccurrence(q, mask, dr, dc, LEVELS)
            total = counts.sum()
            if total == 0:
                raise NoValidPairs(f"no ROI pixel pairs at distance {d}, angle {lab}")
            for stat, val in tlcm_features(counts / total).items():
                out[f"{stat} {d}-{lab}"] = val
    return out


def _percentile_block(values: np.ndarray, last: bool) -> dict[str, float]:
    stats = first_order_features(values)
    extra = EXTRA_PERCENTILES[:2] if last else EXTRA_PERCENTILES
    for p, v in zip(extra, np.percentile(values, extra)):
        stats[f"p{p}"] = float(v)
    return stats


def extract_thermomics(avatar, roi) -> FeatureVector:
    """Compute the 300 thermomic features of an avatar inside its ROI.

    ``avatar`` may be an :class:`~thermavatar.embedding.Avatar` or a plain
    2-D array; ``roi`` a :class:`~thermavatar.thermal_data.RoiMask` or a
    boolean array. Pixels outside the ROI never influence any feature:
    before filtering they are replaced by the ROI mean.
    """
    image = np.asarray(getattr(avatar, "image", avatar), dtype=np.float64)
    mask = np.asarray(getattr(roi, "mask", roi), dtype=bool)
    if mask.shape != image.shape:
        raise InvalidMask(f"ROI shape {mask.shape} differs from image {image.shape}")
    if not mask.any():
        raise InvalidMask("ROI has no pixels")
    roi_values = image[mask]

    feats: dict[str, float] = {}
    for k, v in first_order_features(roi_values).items():
        feats[f"First order-{k}"] = v
    feats.update(_texture_block(image, mask))

    filled = np.where(mask, image, roi_values.mean())
    bank = filter_bank(filled)
    fnames = filter_names()
    for i, name in enumerate(fnames):
        block = _percentile_block(bank[name][mask], last=i == len(fnames) - 1)
        for k, v in block.items():
            feats[f"{name}-firstorder-{k}"] = v

    names = feature_names()
    values = np.array([feats[n] for n in names], dtype=np.float64)
    return FeatureVector(names, values)


def feature_matrix(vectors: Sequence[FeatureVector], case_ids: Sequence[str],
                   labels: Sequence[int]) -> FeatureMatrix:
    names = list(vectors[0].names)
    return FeatureMatrix(names, np.vstack([v.values for v in vectors]), list(case_ids),
                         np.asarray(labels, dtype=np.int64))
