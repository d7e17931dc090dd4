"""Command line front-end: one subcommand per pipeline stage plus ``pipeline``.

Output tree under ``output_dir``::

    cohort/            manifest.csv, <case>/frames/*.csv, <case>/roi.png, <case>/reference.png
    factorizations/    <case>/B*.csv, A*.csv, meta.json
    avatars/           <case>.csv, <case>.png, <case>.json
    features/          features.csv
    selection/         selection.csv, selection_params.json
    classification/    report.csv, report.txt, predictions.csv, mwu.csv, roc.csv
    sweep/             sweep.csv

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from . import artifacts as art
from .analysis import loocv, noise_robustness_sweep, roc_curve
from .config import PipelineConfig, dump_default, from_dict, load_config, validate
from .embedding import embed, normalize_by_reference
from .errors import DataError, MissingUpstreamArtifact, ThermavatarError
from .factorization import factorize
from .forest import ForestParams
from .hsic import block_hsic_lasso, select_top_k
from .phantom import Lesion, PhantomParams, make_cohort, sweep_regions
from .thermal_data import load_roi, load_sequence, save_mask, save_sequence, stack_vectorize
from .thermomics import MANIFEST_VERSION, extract_thermomics, feature_matrix, manifest_hash

log = logging.getLogger("thermavatar")

MANIFEST = "manifest.csv"


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _out(cfg: PipelineConfig) -> Path:
    return Path(cfg.output_dir)


def _meta(cfg: PipelineConfig, stage: str, **extra) -> dict:
    meta = {"stage": stage, "config_hash": cfg.hash(), "root_seed": cfg.seed}
    meta.update(extra)
    return meta


def _cohort_dir(cfg: PipelineConfig) -> Path:
    return Path(cfg.input.cohort_dir) if cfg.input.cohort_dir else _out(cfg) / "cohort"


def _manifest(cfg: PipelineConfig) -> list[tuple[str, int]]:
    _, header, rows = art.read_table(_cohort_dir(cfg) / MANIFEST)
    ci, li = header.index("case_id"), header.index("label")
    return [(r[ci], int(r[li])) for r in rows]


def _case_lesions(cfg: PipelineConfig, case_id: str) -> list[Lesion]:
    """Lesions recorded in a phantom manifest (empty for other cohorts)."""
    _, header, rows = art.read_table(_cohort_dir(cfg) / MANIFEST)
    if "lesions" not in header:
        return []
    row = next(r for r in rows if r[header.index("case_id")] == case_id)
    out = []
    for item in filter(None, row[header.index("lesions")].split(";")):
        r, c, rad, q = (float(v) for v in item.split(":"))
        out.append(Lesion((r, c), rad, q))
    return out


def _load_case(cfg: PipelineConfig, case_id: str, label: int):
    base = _cohort_dir(cfg) / case_id
    if not base.is_dir():
        raise MissingUpstreamArtifact(f"missing case directory {base}")
    seq = load_sequence(base / "frames", cfg.input.format, case_id=case_id, label=label)
    ref = base / "reference.png"
    roi = load_roi(base / "roi.png", ref if ref.exists() else None)
    return seq, roi


def _map(cfg: PipelineConfig, fn: Callable, items: Sequence) -> list:
    """Run ``fn(cfg_dict, item)`` per item, in order; parallel when ``jobs > 1``."""
    payload = cfg.to_dict()
    if cfg.jobs <= 1 or len(items) <= 1:
        return [fn(payload, it) for it in items]
    with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        return list(pool.map(fn, [payload] * len(items), items))


def _phantom_template(cfg: PipelineConfig) -> PhantomParams:
    p = cfg.phantom
    return PhantomParams(grid=tuple(int(v) for v in p.grid), dx=p.dx, dt=p.dt, steps=p.steps,
                         n_frames=p.n_frames, k_t=p.k_t, rho_c=p.rho_c, omega_b_cb=p.omega_b_cb,
                         T_a=p.T_a, q_m=p.q_m, T_init=p.T_init, boundary=p.boundary,
                         T_ambient=p.T_ambient, sensor_noise=p.sensor_noise)


def _fact_kwargs(cfg: PipelineConfig, seed: int) -> dict:
    f = cfg.factorization
    return {"k": f.k, "layer_sizes": list(f.layer_sizes), "max_iters": f.max_iters,
            "finetune_iters": f.finetune_iters, "tol": f.tol, "lam": f.lam, "seed": seed,
            "solver": f.solver}


def _prepare_input(x: np.ndarray, method: str) -> np.ndarray:
    # nonnegative solvers get the data shifted to a zero minimum when needed
    if method in ("nmf", "sparse_nmf") and x.min() < 0:
        return x - x.min()
    return x


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------

def cmd_phantom(cfg: PipelineConfig) -> Path:
    seed = cfg.stage_seed("phantom")
    cases = make_cohort(cfg.phantom.n_cases, cfg.phantom.lesion_fraction,
                        _phantom_template(cfg), seed=seed)
    root = _out(cfg) / "cohort"
    rows = []
    for case in cases:
        d = root / case.case_id
        save_sequence(case.sequence, d / "frames")
        save_mask(case.roi.mask, d / "roi.png")
        save_mask(case.roi.reference_mask, d / "reference.png")
        lesions = ";".join(f"{float(l.center[0])!r}:{float(l.center[1])!r}:{float(l.radius)!r}:{float(l.extra_q)!r}"
                           for l in case.lesions)
        rows.append((case.case_id, case.label, len(case.lesions), lesions))
    art.write_table(root / MANIFEST, ["case_id", "label", "n_lesions", "lesions"], rows,
                    _meta(cfg, "phantom", seed=seed))
    log.info("wrote %d phantom cases to %s", len(cases), root)
    return root


def _factorize_one(payload: dict, item) -> str:
    cfg = from_dict(payload)
    case_id, label = item
    seq, _ = _load_case(cfg, case_id, label)
    seed = cfg.stage_seed(f"factorize/{case_id}")
    method = cfg.factorization.method
    x = _prepare_input(stack_vectorize(seq).data, method)
    f = factorize(x, method, **_fact_kwargs(cfg, seed))
    art.save_factorization(f, _out(cfg) / "factorizations" / case_id,
                           _meta(cfg, "factorize", case_id=case_id, frame_shape=list(seq.shape),
                                 value_scale=seq.value_scale))
    return case_id


def cmd_factorize(cfg: PipelineConfig) -> Path:
    cases = _manifest(cfg)
    _map(cfg, _factorize_one, cases)
    log.info("factorized %d cases with %s", len(cases), cfg.factorization.method)
    return _out(cfg) / "factorizations"


def _embed_one(payload: dict, item) -> str:
    cfg = from_dict(payload)
    case_id, label = item
    fdir = _out(cfg) / "factorizations" / case_id
    info = art.read_json(fdir / "meta.json")
    f = art.load_factorization(fdir)
    base = _cohort_dir(cfg) / case_id
    ref = base / "reference.png"
    roi = load_roi(base / "roi.png", ref if ref.exists() else None)
    avatar = embed(f.bases, tuple(info["frame_shape"]), f.method, cfg.embedding.weighting)
    if cfg.embedding.normalize:
        avatar = normalize_by_reference(avatar, roi)
    art.save_avatar(avatar, _out(cfg) / "avatars" / case_id, _meta(cfg, "embed", case_id=case_id))
    return case_id


def cmd_embed(cfg: PipelineConfig) -> Path:
    cases = _manifest(cfg)
    _map(cfg, _embed_one, cases)
    return _out(cfg) / "avatars"


def _features_one(payload: dict, item):
    cfg = from_dict(payload)
    case_id, _ = item
    avatar = art.load_avatar(_out(cfg) / "avatars" / case_id)
    roi = load_roi(_cohort_dir(cfg) / case_id / "roi.png")
    return extract_thermomics(avatar, roi)


def cmd_features(cfg: PipelineConfig) -> Path:
    cases = _manifest(cfg)
    vectors = _map(cfg, _features_one, cases)
    fm = feature_matrix(vectors, [c for c, _ in cases], [l for _, l in cases])
    path = _out(cfg) / "features" / "features.csv"
    art.write_feature_matrix(path, fm, _meta(cfg, "features", manifest_version=MANIFEST_VERSION,
                                              manifest_hash=manifest_hash(),
                                              method=cfg.factorization.method))
    return path


def cmd_select(cfg: PipelineConfig) -> Path:
    fm, _ = art.read_feature_matrix(_out(cfg) / "features" / "features.csv")
    s = cfg.selection
    seed = cfg.stage_seed("select")
    result = block_hsic_lasso(fm, delta=s.delta, lam=s.lam, label_kernel=s.label_kernel,
                              seed=seed, target_count=s.top_k)
    path = _out(cfg) / "selection" / "selection.csv"
    art.write_selection(path, result, _meta(cfg, "select", seed=seed,
                                            method=cfg.factorization.method))
    for rank, (name, score) in enumerate(select_top_k(result, s.top_k), start=1):
        log.info("selected %d: %s (%.2f)", rank, name, score)
    return path


def cmd_classify(cfg: PipelineConfig) -> Path:
    sel_path = _out(cfg) / "selection" / "selection.csv"
    if not sel_path.exists():
        raise MissingUpstreamArtifact(f"run the select stage first: {sel_path} is missing")
    fm, _ = art.read_feature_matrix(_out(cfg) / "features" / "features.csv")
    top = [name for name, _ in art.read_selection(sel_path)][:cfg.selection.top_k]
    if not top:
        raise DataError("selection kept no features; lower selection.lam")
    a = cfg.analysis
    seed = cfg.stage_seed("classify")
    report = loocv(fm.columns(top), fm.labels,
                   ForestParams(a.n_trees, a.max_depth, a.min_samples_leaf, seed),
                   case_ids=fm.case_ids, feature_names=top)
    scores = np.array([p["score"] for p in report.predictions])
    directory = _out(cfg) / "classification"
    art.write_eval_report(directory, cfg.factorization.method, report,
                          _meta(cfg, "classify", seed=seed), roc_curve(scores, fm.labels))
    log.info("LOOCV accuracy %s, AUC %.3f (%.1f s)", art.format_accuracy(report), report.auc,
             report.runtime_seconds)
    return directory


def cmd_sweep(cfg: PipelineConfig) -> Path:
    cases = _manifest(cfg)
    a = cfg.analysis
    if a.sweep_case is not None:
        match = [c for c in cases if c[0] == a.sweep_case]
        if not match:
            raise DataError(f"sweep_case {a.sweep_case!r} not in the cohort")
        case = match[0]
    else:
        case = next((c for c in cases if c[1] == 1), cases[0])
    seq, roi = _load_case(cfg, *case)
    lesions = _case_lesions(cfg, case[0])
    if lesions:
        signal, noise = sweep_regions(roi, lesions)
    else:
        if roi.reference_mask is None:
            raise DataError(f"case {case[0]} has no reference region to measure noise in")
        signal, noise = roi.mask, roi.reference_mask
    seed = cfg.stage_seed("sweep")
    fk = _fact_kwargs(cfg, seed)
    report = noise_robustness_sweep(seq, a.sweep_methods, a.noise_levels, seed=seed,
                                    signal_roi=signal, noise_roi=noise,
                                    factorization_params=fk)
    path = _out(cfg) / "sweep" / "sweep.csv"
    art.write_sweep(path, report, _meta(cfg, "sweep", seed=seed, case_id=case[0],
                                        noise_scale="fraction of global dynamic range"))
    return path


def cmd_pipeline(cfg: PipelineConfig) -> Path:
    if not cfg.input.cohort_dir:
        cmd_phantom(cfg)
    cmd_factorize(cfg)
    cmd_embed(cfg)
    cmd_features(cfg)
    cmd_select(cfg)
    cmd_classify(cfg)
    cmd_sweep(cfg)
    return _out(cfg)


COMMANDS = {
    "phantom": cmd_phantom,
    "factorize": cmd_factorize,
    "embed": cmd_embed,
    "features": cmd_features,
    "select": cmd_select,
    "classify": cmd_classify,
    "sweep": cmd_sweep,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thermavatar", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"thermavatar {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="YAML config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. --set factorization.method=pct")
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--jobs", type=int, help="parallel workers for per-case stages")
    common.add_argument("-v", "--verbose", action="store_true")
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=f"run the {name} stage")
    sub.add_parser("default-config", help="print the default configuration as YAML")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "default-config":
        sys.stdout.write(dump_default())
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.set)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.output_dir = args.out
        if args.jobs is not None:
            cfg.jobs = args.jobs
        validate(cfg)
        result = COMMANDS[args.command](cfg)
    except ThermavatarError as exc:
        print(f"thermavatar {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"thermavatar {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 4
    print(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
