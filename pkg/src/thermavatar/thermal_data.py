"""Thermal frame sequences, the heat matrix, and ROI masks.

Vectorization is row-major: pixel ``(i, j)`` of an ``M x N`` frame lands on row
``i * N + j`` of the heat matrix, and frame ``t`` becomes column ``t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .errors import (
    DimensionMismatch,
    InvalidMask,
    InvalidSequence,
    MissingFrames,
    ShapeInconsistent,
    UnreadableFile,
)

FORMATS = {
    "csv-frames": (".csv",),
    "pgm16": (".pgm",),
    "png16": (".png",),
}

_U16_MAX = 65535.0


@dataclass(frozen=True)
class ThermalSequence:
    """A stack of ``tau`` frames with shape ``(tau, M, N)``."""

    frames: np.ndarray
    case_id: str = ""
    label: Optional[int] = None
    # raw radiometric values vs [0, 1] normalized; recorded in run metadata
    value_scale: str = "raw"

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3:
            raise InvalidSequence(f"frames must be (tau, M, N), got shape {frames.shape}")
        tau, m, n = frames.shape
        if tau < 2 or m < 2 or n < 2:
            raise InvalidSequence(f"need tau, M, N >= 2, got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise InvalidSequence("frames contain non-finite values")
        if self.label is not None and self.label not in (0, 1):
            raise InvalidSequence(f"label must be 0, 1 or None, got {self.label!r}")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def tau(self) -> int:
        return self.frames.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


@dataclass(frozen=True)
class HeatMatrix:
    data: np.ndarray
    m_rows: int
    n_cols: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ShapeInconsistent(f"heat matrix must be 2-D, got shape {data.shape}")
        if data.shape[0] != self.m_rows * self.n_cols:
            raise ShapeInconsistent(
                f"{data.shape[0]} rows cannot hold {self.m_rows}x{self.n_cols} frames"
            )
        object.__setattr__(self, "data", data)

    @property
    def tau(self) -> int:
        return self.data.shape[1]

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.m_rows, self.n_cols


@dataclass(frozen=True)
class RoiMask:
    mask: np.ndarray
    reference_mask: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise InvalidMask("ROI mask must be 2-D")
        if not mask.any():
            raise InvalidMask("ROI mask has no pixels")
        object.__setattr__(self, "mask", mask)
        if self.reference_mask is not None:
            ref = np.asarray(self.reference_mask, dtype=bool)
            if ref.shape != mask.shape:
                raise InvalidMask("reference mask shape differs from ROI mask")
            if np.any(ref & mask):
                raise InvalidMask("reference mask overlaps the ROI")
            object.__setattr__(self, "reference_mask", ref)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


def stack_vectorize(seq: ThermalSequence) -> HeatMatrix:
    tau, m, n = seq.frames.shape
    # (tau, M, N) -> (tau, M*N) row-major, then transpose to columns
    data = np.ascontiguousarray(seq.frames.reshape(tau, m * n).T)
    return HeatMatrix(data, m, n)


def unstack(x: HeatMatrix, case_id: str = "", label: Optional[int] = None) -> ThermalSequence:
    m, n = x.frame_shape
    frames = x.data.T.reshape(x.tau, m, n).copy()
    return ThermalSequence(frames, case_id=case_id, label=label)


def _read_frame(path: Path, fmt: str) -> np.ndarray:
    try:
        if fmt == "csv-frames":
            arr = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
        else:
            with Image.open(path) as im:
                raw = np.array(im)
            if raw.ndim != 2:
                raise UnreadableFile(f"{path}: expected single-channel image")
            arr = raw.astype(np.float64) / _U16_MAX
    except UnreadableFile:
        raise
    except (OSError, ValueError) as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    return arr


def load_sequence(
    path: str | Path,
    format: str = "csv-frames",
    case_id: Optional[str] = None,
    label: Optional[int] = None,
) -> ThermalSequence:
    """Read every frame file in ``path`` in lexicographic filename order.

    CSV frames are read verbatim; 16-bit images are mapped linearly onto
    ``[0, 1]``.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown frame format {format!r}; choose from {sorted(FORMATS)}")
    directory = Path(path)
    if not directory.is_dir():
        raise MissingFrames(f"{directory} is not a directory")
    suffixes = FORMATS[format]
    files = sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in suffixes)
    if len(files) < 2:
        raise MissingFrames(f"{directory}: found {len(files)} frame file(s), need at least 2")
    frames = [_read_frame(p, format) for p in files]
    shape = frames[0].shape
    for p, f in zip(files, frames):
        if f.shape != shape:
            raise DimensionMismatch(f"{p.name} is {f.shape}, expected {shape}")
    scale = "raw" if format == "csv-frames" else "unit"
    return ThermalSequence(
        np.stack(frames),
        case_id=case_id if case_id is not None else directory.name,
        label=label,
        value_scale=scale,
    )


def save_sequence(seq: ThermalSequence, path: str | Path, format: str = "csv-frames") -> list[Path]:
    """Write frames as ``frame_000.csv`` ... (or 16-bit images) into ``path``."""
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(seq.tau - 1)))
    out = []
    for t, frame in enumerate(seq.frames):
        if format == "csv-frames":
            p = directory / f"frame_{t:0{width}d}.csv"
            np.savetxt(p, frame, delimiter=",", fmt="%.17g")
        elif format in ("pgm16", "png16"):
            p = directory / f"frame_{t:0{width}d}{FORMATS[format][0]}"
            write_u16_image(frame, p, lo=0.0, hi=1.0)
        else:
            raise ValueError(f"unknown frame format {format!r}")
        out.append(p)
    return out


def write_u16_image(image: np.ndarray, path: str | Path, lo: Optional[float] = None,
                    hi: Optional[float] = None) -> None:
    """Save ``image`` as a 16-bit grayscale image, scaling ``[lo, hi]`` to the full range."""
    image = np.asarray(image, dtype=np.float64)
    lo = float(image.min()) if lo is None else lo
    hi = float(image.max()) if hi is None else hi
    span = hi - lo
    scaled = np.zeros_like(image) if span <= 0 else (image - lo) / span
    u16 = np.round(np.clip(scaled, 0.0, 1.0) * _U16_MAX).astype(np.uint16)
    Image.fromarray(u16).save(path)


def load_mask(path: str | Path) -> np.ndarray:
    """Nonzero pixels are inside."""
    try:
        with Image.open(path) as im:
            return np.array(im) != 0
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc


def save_mask(mask: np.ndarray, path: str | Path) -> None:
    Image.fromarray(np.asarray(mask, dtype=np.uint8) * 255).save(path)


def load_roi(mask_path: str | Path, reference_path: Optional[str | Path] = None) -> RoiMask:
    ref = load_mask(reference_path) if reference_path is not None else None
    return RoiMask(load_mask(mask_path), ref)


def frames_from_arrays(frames: Sequence[np.ndarray], **kwargs) -> ThermalSequence:
    shapes = {np.shape(f) for f in frames}
    if len(shapes) > 1:
        raise DimensionMismatch(f"frames have differing shapes {sorted(shapes)}")
    return ThermalSequence(np.stack([np.asarray(f, dtype=np.float64) for f in frames]), **kwargs)
