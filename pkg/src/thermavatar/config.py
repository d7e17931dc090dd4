"""Pipeline configuration: one YAML file, validated before any stage runs.

Precedence, lowest to highest: built-in defaults, the config file,
``--set section.key=value`` overrides, then the dedicated ``--seed``,
``--out`` and ``--jobs`` flags.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .analysis import DEFAULT_NOISE_LEVELS
from .errors import ConfigInvalid
from .factorization import METHODS, NMF_SOLVERS
from .hsic import LABEL_KERNELS
from .phantom import BOUNDARIES
from .thermal_data import FORMATS
from .thermomics import MANIFEST_VERSION


@dataclass
class PhantomSection:
    n_cases: int = 60
    lesion_fraction: float = 0.5
    grid: list = field(default_factory=lambda: [64, 64])
    dx: float = 2e-3
    dt: float = 1.0
    steps: int = 1200
    n_frames: int = 23
    k_t: float = 0.5
    rho_c: float = 3.8e6
    omega_b_cb: float = 2400.0
    T_a: float = 37.0
    q_m: float = 450.0
    T_init: float = 33.0
    boundary: str = "insulated"
    T_ambient: float = 25.0
    sensor_noise: float = 0.04


@dataclass
class InputSection:
    # existing cohort (manifest.csv + per-case frames/ and masks); None = use the phantom
    cohort_dir: Optional[str] = None
    format: str = "csv-frames"


@dataclass
class FactorizationSection:
    method: str = "deep_semi_nmf"
    k: int = 8
    layer_sizes: list = field(default_factory=lambda: [12, 8])
    max_iters: int = 500
    finetune_iters: int = 200
    tol: float = 1e-6
    lam: float = 0.1
    solver: str = "mu"


@dataclass
class EmbeddingSection:
    weighting: str = "basis"
    normalize: bool = True


@dataclass
class ThermomicsSection:
    manifest_version: str = MANIFEST_VERSION


@dataclass
class SelectionSection:
    delta: int = 20
    lam: Optional[float] = None
    label_kernel: str = "delta"
    top_k: int = 3


@dataclass
class AnalysisSection:
    n_trees: int = 200
    max_depth: Optional[int] = None
    min_samples_leaf: int = 2
    noise_levels: list = field(default_factory=lambda: list(DEFAULT_NOISE_LEVELS))
    sweep_methods: list = field(default_factory=lambda: list(METHODS))
    sweep_case: Optional[str] = None


@dataclass
class PipelineConfig:
    seed: int = 0
    output_dir: str = "thermavatar_out"
    jobs: int = 1
    phantom: PhantomSection = field(default_factory=PhantomSection)
    input: InputSection = field(default_factory=InputSection)
    factorization: FactorizationSection = field(default_factory=FactorizationSection)
    embedding: EmbeddingSection = field(default_factory=EmbeddingSection)
    thermomics: ThermomicsSection = field(default_factory=ThermomicsSection)
    selection: SelectionSection = field(default_factory=SelectionSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        """Hash of everything that can change results (not paths or job count)."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("jobs")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def stage_seed(self, label: str) -> int:
        return derive_seed(self.seed, label)


def derive_seed(root: int, label: str) -> int:
    """Independent 32-bit seed for a named stage or substream."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(label.encode("utf-8"))])
    return int(ss.generate_state(1)[0])


_SECTIONS = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}


def _section_class(name: str):
    return {
        "phantom": PhantomSection,
        "input": InputSection,
        "factorization": FactorizationSection,
        "embedding": EmbeddingSection,
        "thermomics": ThermomicsSection,
        "selection": SelectionSection,
        "analysis": AnalysisSection,
    }.get(name)


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigInvalid(f"{where} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigInvalid(f"unknown key(s) in {where}: {', '.join(unknown)}")
    return cls(**data)


def from_dict(data: Optional[dict]) -> PipelineConfig:
    data = dict(data or {})
    kwargs: dict[str, Any] = {}
    for key in list(data):
        if key not in _SECTIONS:
            raise ConfigInvalid(f"unknown top-level key {key!r}")
        cls = _section_class(key)
        kwargs[key] = _build(cls, data[key] or {}, key) if cls else data[key]
    cfg = PipelineConfig(**kwargs)
    validate(cfg)
    return cfg


def load_config(path: Optional[str | Path] = None, overrides: Optional[list[str]] = None) -> PipelineConfig:
    data: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigInvalid(f"config {path} is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigInvalid("config file must hold a mapping")
    for item in overrides or []:
        apply_override(data, item)
    return from_dict(data)


def apply_override(data: dict, item: str) -> None:
    """Apply ``section.key=value`` (value parsed as YAML) to a raw config mapping."""
    if "=" not in item:
        raise ConfigInvalid(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"cannot parse override value {raw!r}") from exc
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigInvalid(f"override {key!r} descends into a non-mapping")
    node[parts[-1]] = value


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigInvalid(msg)


def validate(cfg: PipelineConfig) -> None:
    try:
        _validate(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"config value has the wrong type: {exc}") from exc


def _validate(cfg: PipelineConfig) -> None:
    _require(isinstance(cfg.seed, int) and cfg.seed >= 0, "seed must be a nonnegative integer")
    _require(isinstance(cfg.jobs, int) and cfg.jobs >= 1, "jobs must be >= 1")
    p = cfg.phantom
    _require(p.n_cases >= 2, "phantom.n_cases must be >= 2")
    _require(0.0 <= p.lesion_fraction <= 1.0, "phantom.lesion_fraction must lie in [0, 1]")
    _require(isinstance(p.grid, (list, tuple)) and len(p.grid) == 2 and min(p.grid) >= 8,
             "phantom.grid must be [M, N] with M, N >= 8")
    _require(p.n_frames >= 2, "phantom.n_frames must be >= 2")
    _require(p.boundary in BOUNDARIES, f"phantom.boundary must be one of {BOUNDARIES}")
    _require(cfg.input.format in FORMATS, f"input.format must be one of {sorted(FORMATS)}")
    f = cfg.factorization
    _require(f.method in METHODS, f"factorization.method must be one of {METHODS}")
    _require(f.solver in NMF_SOLVERS, f"factorization.solver must be one of {NMF_SOLVERS}")
    _require(f.k >= 1, "factorization.k must be >= 1")
    _require(len(f.layer_sizes) >= 1 and all(int(s) >= 1 for s in f.layer_sizes)
             and all(a >= b for a, b in zip(f.layer_sizes, f.layer_sizes[1:])),
             "factorization.layer_sizes must be positive and non-increasing")
    _require(f.lam >= 0, "factorization.lam must be >= 0")
    _require(f.tol >= 0 and f.max_iters >= 0 and f.finetune_iters >= 0,
             "factorization iteration settings must be nonnegative")
    _require(cfg.embedding.weighting in ("basis", "unit"), "embedding.weighting must be basis or unit")
    _require(cfg.thermomics.manifest_version == MANIFEST_VERSION,
             f"only feature manifest {MANIFEST_VERSION} ships with this version")
    s = cfg.selection
    _require(s.delta >= 2, "selection.delta must be >= 2")
    _require(s.lam is None or s.lam >= 0, "selection.lam must be null or >= 0")
    _require(s.label_kernel in LABEL_KERNELS, f"selection.label_kernel must be one of {LABEL_KERNELS}")
    _require(s.top_k >= 1, "selection.top_k must be >= 1")
    a = cfg.analysis
    _require(a.n_trees >= 1 and a.min_samples_leaf >= 1, "analysis forest settings must be positive")
    levels = list(a.noise_levels)
    _require(len(levels) >= 1 and all(v >= 0 for v in levels)
             and all(y > x for x, y in zip(levels, levels[1:])),
             "analysis.noise_levels must be nonnegative and strictly increasing")
    _require(all(m in METHODS for m in a.sweep_methods), f"analysis.sweep_methods must be in {METHODS}")


def dump_default() -> str:
    return yaml.safe_dump(PipelineConfig().to_dict(), sort_keys=False)
