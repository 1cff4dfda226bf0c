"""Evaluation protocol: run mitigation methods over a test split and aggregate metrics."""
from __future__ import annotations

import csv
import io
import json
import logging
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import ccnn, classical, dsp, metrics, sim
from .train import Predictor

log = logging.getLogger(__name__)

CLASSICAL = ("zeroing", "ramp", "imat")
METHOD_ORDER = ccnn.NN_METHODS + CLASSICAL + ("none",)


class MissingCheckpointError(KeyError):
    pass


def order_methods(methods: Sequence[str]) -> list[str]:
    unknown = set(methods) - set(METHOD_ORDER)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    return [m for m in METHOD_ORDER if m in methods]


def mitigate(method: str, rda: np.ndarray, predictors: Mapping[str, Predictor]) -> tuple[np.ndarray, str]:
    """Apply ``method`` to an interfered RDA map; returns ``(map, kind)``."""
    if method == "none":
        return rda, "rda"
    if method in CLASSICAL:
        cube = dsp.rda_to_time(rda)
        if method == "ramp":
            out = classical.ramp_filter(cube)
        else:
            mask = classical.detect_interference(cube)
            out = classical.zeroing(cube, mask) if method == "zeroing" else classical.imat(cube, mask)
        return dsp.time_to_rda(out), "rda"
    if method not in predictors:
        raise MissingCheckpointError(f"no checkpoint given for method {method!r}")
    return predictors[method](rda)


def evaluate(manifest: dict, methods: Sequence[str], checkpoints: Mapping[str, str] = {},
             cfar: Optional[metrics.CfarConfig] = None, tol: int = 1,
             split: str = "test") -> dict[str, list[dict]]:
    """Per-sample metric dicts for every method, keyed by method name."""
    methods = order_methods(methods)
    records = manifest["splits"].get(split, [])
    if not records:
        raise ValueError(f"split {split!r} is empty")
    if cfar is None:
        cfar = metrics.CfarConfig(**manifest["cfar"]) if "cfar" in manifest else metrics.CfarConfig()
    predictors = {}
    for m in methods:
        if m in ccnn.NN_METHODS:
            if m not in checkpoints:
                raise MissingCheckpointError(f"no checkpoint given for method {m!r}")
            predictors[m] = checkpoints[m]
    job = (manifest, methods, predictors, cfar, tol)
    workers = sim.worker_count()
    if workers > 1 and len(records) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=job) as pool:
            per_sample = list(pool.map(_evaluate_record, records))
    else:
        _init_worker(*job)
        per_sample = [_evaluate_record(rec) for rec in records]
    # ordered aggregation: results follow the manifest order whatever the worker count
    return {m: [row[m] for row in per_sample] for m in methods}


_STATE: dict = {}


def _init_worker(manifest, methods, checkpoints, cfar, tol) -> None:
    _STATE.update(manifest=manifest, methods=methods, cfar=cfar, tol=tol,
                  predictors={m: Predictor.from_checkpoint(p) for m, p in checkpoints.items()})


def _evaluate_record(rec: dict) -> dict[str, dict]:
    st = _STATE
    sample = sim.load_sample(st["manifest"], rec)
    row = {}
    for m in st["methods"]:
        out, kind = mitigate(m, sample.interfered_rda, st["predictors"])
        rep = metrics.evaluate_sample(sample.peaks, sample.clean_rda, out, kind, st["cfar"], st["tol"])
        row[m] = {"id": rec["id"], "method": m, **rep.to_dict()}
    return row


def aggregate(results: Mapping[str, list[dict]]) -> list[dict]:
    rows = []
    for m in order_methods(list(results)):
        per = results[m]
        rows.append({
            "method": m,
            "F1": float(np.mean([r["f1"] for r in per])),
            "EVM": float(np.mean([r["evm"] for r in per])),
            "PPMSE": float(np.mean([r["ppmse"] for r in per])),
            "n": len(per),
        })
    return rows


def rows_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "F1", "EVM", "PPMSE"])
    for r in rows:
        w.writerow([r["method"], f"{r['F1']:.6f}", f"{r['EVM']:.6f}", f"{r['PPMSE']:.6f}"])
    return buf.getvalue()


def read_rows_csv(path) -> list[dict]:
    with open(path, newline="") as fp:
        return [{"method": r["method"], "F1": float(r["F1"]), "EVM": float(r["EVM"]),
                 "PPMSE": float(r["PPMSE"])} for r in csv.DictReader(fp)]


def write_results(results: Mapping[str, list[dict]], out_dir, name: str = "table2") -> list[dict]:
    """Write ``<name>.csv``, ``<name>_samples.json`` and return the aggregate rows."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = aggregate(results)
    (out / f"{name}.csv").write_text(rows_csv(rows))
    per = [r for m in order_methods(list(results)) for r in results[m]]
    (out / f"{name}_samples.json").write_text(json.dumps(per, indent=1, sort_keys=True) + "\n")
    return rows
