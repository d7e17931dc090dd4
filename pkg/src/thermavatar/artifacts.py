"""On-disk formats for every stage output.

Tabular outputs are CSV files that open with ``#``-prefixed metadata lines
(``# key: value``); matrices are written with 17 significant digits so they
round-trip exactly. Nothing time-dependent is written, so reruns with the
same inputs, config and seed produce byte-identical files.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .analysis import EvalReport, NoiseSweepReport
from .embedding import Avatar
from .errors import MissingUpstreamArtifact, UnreadableFile
from .factorization import DeepFactorization, Factorization
from .hsic import SelectionResult
from .thermal_data import write_u16_image
from .thermomics import FeatureMatrix


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def metadata_lines(meta: Mapping) -> str:
    base = {"generator": f"thermavatar {__version__}"}
    base.update(meta)
    return "".join(f"# {k}: {_fmt(v)}\n" for k, v in base.items())


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def write_table(path: Path, header: Sequence[str], rows: Iterable[Sequence], meta: Mapping) -> None:
    buf = io.StringIO()
    buf.write(metadata_lines(meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    write_text(path, buf.getvalue())


def read_table(path: Path) -> tuple[dict, list[str], list[list[str]]]:
    """Return (metadata, header, rows) of a table written by :func:`write_table`."""
    if not path.exists():
        raise MissingUpstreamArtifact(f"missing upstream artifact {path}")
    meta = {}
    body = []
    with open(path, encoding="utf-8", newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition(":")
                meta[key.strip()] = val.strip()
            else:
                body.append(line)
    rows = list(csv.reader(body))
    if not rows:
        raise UnreadableFile(f"{path} has no header row")
    return meta, rows[0], rows[1:]


def write_json(path: Path, obj) -> None:
    write_text(path, json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n")


def read_json(path: Path):
    if not path.exists():
        raise MissingUpstreamArtifact(f"missing upstream artifact {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_matrix(path: Path, m: np.ndarray) -> None:
    buf = io.StringIO()
    np.savetxt(buf, np.atleast_2d(m), delimiter=",", fmt="%.17g")
    write_text(path, buf.getvalue())


def read_matrix(path: Path) -> np.ndarray:
    if not path.exists():
        raise MissingUpstreamArtifact(f"missing upstream artifact {path}")
    return np.loadtxt(path, delimiter=",", ndmin=2)


# --------------------------------------------------------------------------
# factorizations
# --------------------------------------------------------------------------

def save_factorization(f, directory: Path, meta: Mapping) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    info = dict(meta)
    info.update({"method": f.method, "seed": f.seed, "iterations": f.iterations,
                 "final_cost": f.objective_trace[-1] if f.objective_trace else None,
                 "params": f.params})
    if isinstance(f, DeepFactorization):
        files = []
        for i, b in enumerate(f.layers, start=1):
            write_matrix(directory / f"B{i}.csv", b)
            files.append(f"B{i}.csv")
        write_matrix(directory / "A.csv", f.top_coeffs)
        for i, a in enumerate(f.per_layer_coeffs or [], start=1):
            write_matrix(directory / f"A{i}.csv", a)
        info.update({"layers": files, "layer_sizes": f.layer_sizes,
                     "pretrain_cost": f.pretrain_cost,
                     "pretrain_traces": [list(t) for t in f.pretrain_traces]})
    else:
        write_matrix(directory / "B.csv", f.bases)
        write_matrix(directory / "A.csv", f.coeffs)
        if f.offset is not None:
            write_matrix(directory / "offset.csv", f.offset)
        info["k"] = f.rank
    info["objective_trace"] = list(f.objective_trace)
    write_json(directory / "meta.json", info)


def load_factorization(directory: Path):
    info = read_json(directory / "meta.json")
    trace = info.get("objective_trace", [])
    if info["method"] == "deep_semi_nmf":
        layers = [read_matrix(directory / name) for name in info["layers"]]
        n_inner = len(layers) - 1
        per_layer = [read_matrix(directory / f"A{i}.csv") for i in range(1, n_inner + 1)] or None
        return DeepFactorization(layers, read_matrix(directory / "A.csv"), trace,
                                 per_layer_coeffs=per_layer, pretrain_cost=info.get("pretrain_cost"),
                                 seed=info.get("seed"), params=info.get("params", {}),
                                 pretrain_traces=info.get("pretrain_traces", []))
    offset_path = directory / "offset.csv"
    offset = read_matrix(offset_path) if offset_path.exists() else None
    return Factorization(read_matrix(directory / "B.csv"), read_matrix(directory / "A.csv"),
                         trace, info["method"], offset=offset, seed=info.get("seed"),
                         params=info.get("params", {}))


# --------------------------------------------------------------------------
# avatars
# --------------------------------------------------------------------------

def save_avatar(avatar: Avatar, stem: Path, meta: Mapping) -> None:
    write_matrix(stem.with_suffix(".csv"), avatar.image)
    write_u16_image(avatar.image, stem.with_suffix(".png"))
    info = dict(meta)
    info.update({"source_method": avatar.source_method, "normalization": avatar.normalization,
                 "shape": list(avatar.image.shape)})
    write_json(stem.with_suffix(".json"), info)


def load_avatar(stem: Path) -> Avatar:
    info = read_json(stem.with_suffix(".json"))
    return Avatar(read_matrix(stem.with_suffix(".csv")), info.get("source_method", ""),
                  info.get("normalization", {}))


# --------------------------------------------------------------------------
# feature matrix
# --------------------------------------------------------------------------

def write_feature_matrix(path: Path, fm: FeatureMatrix, meta: Mapping) -> None:
    rows = []
    for i in range(len(fm.case_ids)):
        rows.append(list(fm.values[i]) + [fm.case_ids[i], int(fm.labels[i])])
    write_table(path, list(fm.names) + ["case_id", "label"], rows, meta)


def read_feature_matrix(path: Path) -> tuple[FeatureMatrix, dict]:
    meta, header, rows = read_table(path)
    if header[-2:] != ["case_id", "label"]:
        raise UnreadableFile(f"{path}: last columns must be case_id,label")
    names = header[:-2]
    values = np.array([[float(v) for v in r[:-2]] for r in rows], dtype=np.float64)
    values = values.reshape(len(rows), len(names))
    return FeatureMatrix(names, values, [r[-2] for r in rows],
                         np.array([int(r[-1]) for r in rows], dtype=np.int64)), meta


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

def write_selection(path: Path, result: SelectionResult, meta: Mapping) -> None:
    rows = [(rank, name, result.weight_of(name), score)
            for rank, (name, score) in enumerate(result.ranked, start=1)]
    write_table(path, ["rank", "feature", "weight", "relatedness_score"], rows, meta)
    params = dict(meta)
    params.update(result.params)
    params["dropped_features"] = result.dropped
    write_json(path.with_name(path.stem + "_params.json"), params)


def read_selection(path: Path) -> list[tuple[str, float]]:
    _, header, rows = read_table(path)
    col = header.index("feature")
    score = header.index("relatedness_score")
    return [(r[col], float(r[score])) for r in rows]


def format_accuracy(report: EvalReport) -> str:
    return (f"{100 * report.accuracy:.1f} "
            f"({100 * report.accuracy_low:.1f}-{100 * report.accuracy_high:.1f})")


def render_eval_table(reports: Mapping[str, EvalReport], reference: Optional[str] = None,
                      ttests: Optional[Mapping[str, tuple[float, float]]] = None) -> str:
    """Human-readable table: method, accuracy (low-high), AUC, fold t-test vs reference."""
    lines = ["Multivariate binary classification, random forest, leave-one-out",
             f"{'Method':<16}{'Accuracy % (Wilson 95%)':<28}{'AUC':>7}  t-statistic, two-tailed p"]
    for name, rep in reports.items():
        if ttests and name in ttests and name != reference:
            t, p = ttests[name]
            tt = f"{t:.2f}, {p:.4f}"
        else:
            tt = "-"
        lines.append(f"{name:<16}{format_accuracy(rep):<28}{rep.auc:>7.3f}  {tt}")
    return "\n".join(lines) + "\n"


def write_eval_report(directory: Path, name: str, report: EvalReport, meta: Mapping,
                      roc: tuple[np.ndarray, np.ndarray]) -> None:
    summary = [
        ("method", name),
        ("n_cases", report.n_cases),
        ("accuracy", report.accuracy),
        ("accuracy_low", report.accuracy_low),
        ("accuracy_high", report.accuracy_high),
        ("interval", report.interval_method),
        ("auc", report.auc),
        ("tp", report.confusion["tp"]),
        ("fp", report.confusion["fp"]),
        ("tn", report.confusion["tn"]),
        ("fn", report.confusion["fn"]),
        ("features", ";".join(report.features)),
    ]
    write_table(directory / "report.csv", ["key", "value"], summary, meta)
    write_table(directory / "predictions.csv", ["case_id", "label", "predicted", "score"],
                [(p["case_id"], p["label"], p["predicted"], p["score"]) for p in report.predictions],
                meta)
    write_table(directory / "mwu.csv", ["feature", "U", "p_two_sided", "method", "significant"],
                [(f, r["U"], r["p"], r["method"], int(r["p"] < 0.005)) for f, r in report.mwu.items()],
                meta)
    fpr, tpr = roc
    write_table(directory / "roc.csv", ["fpr", "tpr"], zip(fpr, tpr), meta)
    write_text(directory / "report.txt", metadata_lines(meta) + render_eval_table({name: report}))


def write_sweep(path: Path, report: NoiseSweepReport, meta: Mapping) -> None:
    header = ["noise_level", "input"] + list(report.methods)
    rows = []
    for i, level in enumerate(report.levels):
        rows.append([level, report.input_snr_db[i]] + [report.snr_db[m][i] for m in report.methods])
    write_table(path, header, rows, meta)
