"""Synthetic thermal sequences from a 2-D Pennes bioheat model.

The explicit scheme is

    T <- T + dt / rho_c * (k_t * lap(T) + omega_b_cb * (T_a - T) + q)

with a 5-point Laplacian on a square grid of spacing ``dx`` and ``q`` the
basal metabolic heat plus any lesion sources. Physical constants are
textbook-range breast-tissue values, not fitted to any measurement.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .errors import LesionOutOfBounds, UnstableTimestep
from .thermal_data import RoiMask, ThermalSequence

BOUNDARIES = ("insulated", "fixed-ambient")
SENSOR_NOISE_STD = 0.04


@dataclass(frozen=True)
class Lesion:
    center: tuple[float, float]  # (row, col) in pixels
    radius: float  # pixels
    extra_q: float  # W/m^3


@dataclass(frozen=True)
class PhantomParams:
    grid: tuple[int, int] = (64, 64)
    dx: float = 2e-3
    dt: float = 1.0
    steps: int = 1200
    n_frames: int = 23
    k_t: float = 0.5
    rho_c: float = 3.8e6
    omega_b_cb: float = 2400.0
    T_a: float = 37.0
    q_m: float = 450.0
    T_init: Union[float, np.ndarray] = 33.0
    lesions: tuple[Lesion, ...] = ()
    boundary: str = "insulated"
    T_ambient: float = 25.0
    sensor_noise: float = SENSOR_NOISE_STD
    seed: Optional[int] = 0

    @property
    def stable_dt(self) -> float:
        """Largest time step allowed by diffusion (``dx^2 rho_c / 4k``) and perfusion."""
        limits = [np.inf]
        if self.k_t > 0:
            limits.append(self.dx ** 2 * self.rho_c / (4.0 * self.k_t))
        if self.omega_b_cb > 0:
            # keeps the perfusion decay factor 1 - dt*omega/rho_c nonnegative
            limits.append(self.rho_c / self.omega_b_cb)
        return float(min(limits))


def validate(params: PhantomParams) -> None:
    m, n = params.grid
    if m < 2 or n < 2:
        raise ValueError(f"grid must be at least 2x2, got {params.grid}")
    if params.dx <= 0 or params.dt <= 0 or params.rho_c <= 0:
        raise ValueError("dx, dt and rho_c must be positive")
    if params.k_t < 0 or params.omega_b_cb < 0 or params.q_m < 0:
        raise ValueError("k_t, omega_b_cb and q_m must be nonnegative")
    if params.boundary not in BOUNDARIES:
        raise ValueError(f"unknown boundary {params.boundary!r}; choose from {BOUNDARIES}")
    if params.n_frames < 2 or params.steps < params.n_frames - 1:
        raise ValueError("need n_frames >= 2 and enough steps to sample them")
    if params.dt > params.stable_dt:
        raise UnstableTimestep(f"dt={params.dt} exceeds the stability limit {params.stable_dt:.4g}")
    for les in params.lesions:
        r, c = les.center
        if les.radius <= 0 or r - les.radius < 0 or c - les.radius < 0 \
                or r + les.radius > m - 1 or c + les.radius > n - 1:
            raise LesionOutOfBounds(f"lesion at {les.center} radius {les.radius} leaves the grid")


def disk(shape: tuple[int, int], center: tuple[float, float], radius: float) -> np.ndarray:
    rr, cc = np.mgrid[:shape[0], :shape[1]]
    return (rr - center[0]) ** 2 + (cc - center[1]) ** 2 <= radius ** 2


def source_map(params: PhantomParams) -> np.ndarray:
    q = np.full(params.grid, float(params.q_m))
    for les in params.lesions:
        q[disk(params.grid, les.center, les.radius)] += les.extra_q
    return q


def laplacian(t: np.ndarray, dx: float, boundary: str = "insulated",
              ambient: float = 0.0) -> np.ndarray:
    if boundary == "insulated":
        p = np.pad(t, 1, mode="edge")
    else:
        p = np.pad(t, 1, mode="constant", constant_values=ambient)
    return (p[2:, 1:-1] + p[:-2, 1:-1] + p[1:-1, 2:] + p[1:-1, :-2] - 4.0 * t) / dx ** 2


def frame_steps(steps: int, n_frames: int) -> np.ndarray:
    return np.round(np.linspace(0, steps, n_frames)).astype(int)


def run(params: PhantomParams) -> np.ndarray:
    """Noise-free temperature fields at the sampled steps, shape ``(n_frames, M, N)``."""
    validate(params)
    t = np.broadcast_to(np.asarray(params.T_init, dtype=np.float64), params.grid).copy()
    q = source_map(params)
    coef = params.dt / params.rho_c
    wanted = frame_steps(params.steps, params.n_frames)
    frames = np.empty((params.n_frames,) + tuple(params.grid))
    slot = 0
    for step in range(params.steps + 1):
        while slot < len(wanted) and wanted[slot] == step:
            frames[slot] = t
            slot += 1
        if step == params.steps:
            break
        flux = params.k_t * laplacian(t, params.dx, params.boundary, params.T_ambient)
        t = t + coef * (flux + params.omega_b_cb * (params.T_a - t) + q)
    return frames


def simulate(params: PhantomParams, case_id: str = "phantom",
             label: Optional[int] = None) -> ThermalSequence:
    """Run the model and add seeded Gaussian sensor noise to every emitted frame."""
    frames = run(params)
    if params.sensor_noise > 0:
        rng = np.random.default_rng(params.seed)
        frames = frames + rng.normal(0.0, params.sensor_noise, size=frames.shape)
    return ThermalSequence(frames, case_id=case_id, label=label)


# --------------------------------------------------------------------------
# cohorts
# --------------------------------------------------------------------------

@dataclass
class CohortCase:
    sequence: ThermalSequence
    roi: RoiMask
    params: PhantomParams
    lesions: tuple[Lesion, ...] = field(default_factory=tuple)

    @property
    def case_id(self) -> str:
        return self.sequence.case_id

    @property
    def label(self) -> int:
        return int(self.sequence.label)


def default_roi(grid: tuple[int, int]) -> RoiMask:
    """Central disk ROI plus a reference strip along the top edge."""
    m, n = grid
    radius = 0.4 * min(m, n)
    mask = disk(grid, ((m - 1) / 2.0, (n - 1) / 2.0), radius)
    ref = np.zeros(grid, dtype=bool)
    ref[:max(2, m // 20), n // 3:max(n // 3 + 2, 2 * n // 3)] = True
    return RoiMask(mask, ref & ~mask)


def _random_lesions(rng: np.random.Generator, grid, count: int) -> tuple[Lesion, ...]:
    m, n = grid
    cy, cx = (m - 1) / 2.0, (n - 1) / 2.0
    roi_r = 0.4 * min(m, n)
    out = []
    for _ in range(count):
        radius = float(rng.uniform(3.0, 6.0)) * min(m, n) / 64.0
        reach = max(roi_r - radius - 2.0, 0.0)
        ang = rng.uniform(0, 2 * np.pi)
        dist = reach * np.sqrt(rng.uniform())
        out.append(Lesion((float(cy + dist * np.sin(ang)), float(cx + dist * np.cos(ang))), radius,
                          float(rng.uniform(5000.0, 15000.0))))
    return tuple(out)


def make_cohort(n_cases: int, lesion_fraction: float = 0.5,
                params_template: Optional[PhantomParams] = None,
                seed: int = 0) -> list[CohortCase]:
    """Labeled synthetic cases: lesion cases (label 1) get one or two hot lesions.

    Every case jitters basal metabolism, perfusion and the starting
    temperature; labels are assigned in a seeded random order.
    """
    if n_cases < 2:
        raise ValueError("a cohort needs at least 2 cases")
    if not 0.0 <= lesion_fraction <= 1.0:
        raise ValueError("lesion_fraction must lie in [0, 1]")
    template = params_template or PhantomParams()
    n_lesion = int(round(n_cases * lesion_fraction))
    labels = np.zeros(n_cases, dtype=int)
    labels[:n_lesion] = 1
    labels = np.random.default_rng(np.random.SeedSequence([seed, 0])).permutation(labels)
    roi = default_roi(template.grid)
    width = max(3, len(str(n_cases - 1)))
    cases = []
    for i in range(n_cases):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1, i]))
        q_m = template.q_m * rng.uniform(0.8, 1.2)
        omega = template.omega_b_cb * rng.uniform(0.9, 1.1)
        t_init = float(np.mean(template.T_init)) + rng.uniform(-0.5, 0.5)
        lesions = _random_lesions(rng, template.grid, int(rng.integers(1, 3))) if labels[i] else ()
        params = replace(template, q_m=q_m, omega_b_cb=omega, T_init=t_init, lesions=lesions,
                         seed=int(rng.integers(0, 2**31 - 1)))
        seq = simulate(params, case_id=f"case_{i:0{width}d}", label=int(labels[i]))
        cases.append(CohortCase(seq, roi, params, lesions))
    return cases


def lesion_mask(grid: tuple[int, int], lesions: Sequence[Lesion]) -> np.ndarray:
    out = np.zeros(grid, dtype=bool)
    for les in lesions:
        out |= disk(grid, les.center, les.radius)
    return out


def sweep_regions(roi: RoiMask, lesions: Sequence[Lesion], margin: float = 3.0):
    """(signal, noise) masks for SNR: lesion pixels vs ROI pixels ``margin`` px clear of any lesion."""
    if not lesions:
        raise ValueError("sweep regions need at least one lesion")
    signal = lesion_mask(roi.shape, lesions)
    grown = lesion_mask(roi.shape, [Lesion(l.center, l.radius + margin, l.extra_q) for l in lesions])
    return signal, roi.mask & ~grown
