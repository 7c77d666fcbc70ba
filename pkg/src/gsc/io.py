"""Instance bundles and report documents on disk.

An instance bundle is a directory of comma-separated tables plus a
``manifest.json``.  Floats are written with ``repr`` so a write/read round
trip is exact.  Reports are a JSON document (with provenance) and a CSV
table laid out like the usual bounds-per-level summary.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .coarsening import CoarsePlan, UpperBoundStats
from .driver import BoundReport, format_gap, gap
from .milp import SolveResult, SolverParams
from .model import (
    Allocation,
    Consumer,
    NodeSite,
    Product,
    Supplier,
    SupplyChainInstance,
    Technology,
    TransportEdge,
    validate_instance,
)
from .sampling import LowerBoundStats

FORMAT_VERSION = 1
INSTANCE_FORMAT = "gsc-instance"
REPORT_FORMAT = "gsc-report"

TABLES = {
    "nodes": ("id", "x", "y", "name"),
    "products": ("id", "name"),
    "suppliers": ("id", "node", "product", "capacity", "cost"),
    "consumers": ("id", "node", "product", "capacity", "value"),
    "technologies": ("id", "node", "ref_product", "unit_capacity", "max_facilities", "op_cost", "install_cost"),
    "yields": ("tech", "product", "gamma"),
    "edges": ("id", "src", "dst", "product", "capacity", "cost"),
}
_INT_COLS = {"id", "node", "product", "ref_product", "max_facilities", "tech", "src", "dst"}
_STR_COLS = {"name"}


class BundleError(ValueError):
    pass


def _num(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_table(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, str) else _num(v) for v in r])


def write_instance(inst: SupplyChainInstance, directory: str | Path) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    rows = {
        "nodes": [(n.id, n.coord[0], n.coord[1], n.name) for n in inst.nodes],
        "products": [(p.id, p.name) for p in inst.products],
        "suppliers": [(s.id, s.node, s.product, s.capacity, s.cost) for s in inst.suppliers],
        "consumers": [(c.id, c.node, c.product, c.capacity, c.value) for c in inst.consumers],
        "technologies": [(t.id, t.node, t.ref_product, t.unit_capacity, t.max_facilities, t.op_cost, t.install_cost)
                         for t in inst.technologies],
        "yields": [(t.id, p, g) for t in inst.technologies for p, g in sorted(t.yields.items())],
        "edges": [(e.id, e.src, e.dst, e.product, e.capacity, e.cost) for e in inst.edges],
    }
    for name, header in TABLES.items():
        _write_table(out / f"{name}.csv", header, rows[name])
    manifest = {
        "format": INSTANCE_FORMAT,
        "version": FORMAT_VERSION,
        "name": inst.name,
        "unique_edges": inst.unique_edges,
        "allow_self_loops": inst.allow_self_loops,
        "tables": sorted(TABLES),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def _read_table(path: Path, header) -> list[dict]:
    if not path.exists():
        raise BundleError(f"missing table {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != tuple(header):
            raise BundleError(f"{path}: expected columns {','.join(header)}, got {reader.fieldnames}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append({
                    k: (v if k in _STR_COLS else int(v) if k in _INT_COLS else float(v))
                    for k, v in row.items()
                })
            except (TypeError, ValueError) as exc:
                raise BundleError(f"{path}:{lineno}: {exc}") from None
    return out


def read_instance(directory: str | Path, validate: bool = True) -> SupplyChainInstance:
    src = Path(directory)
    if not src.is_dir():
        raise FileNotFoundError(f"instance bundle {src} not found")
    manifest_path = src / "manifest.json"
    if not manifest_path.exists():
        raise BundleError(f"{src} has no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != INSTANCE_FORMAT:
        raise BundleError(f"{manifest_path}: not an instance bundle")
    if manifest.get("version") != FORMAT_VERSION:
        raise BundleError(f"{manifest_path}: unsupported format version {manifest.get('version')}")
    t = {name: _read_table(src / f"{name}.csv", header) for name, header in TABLES.items()}

    yields: dict[int, dict[int, float]] = {}
    for r in t["yields"]:
        yields.setdefault(r["tech"], {})[r["product"]] = r["gamma"]
    inst = SupplyChainInstance(
        products=[Product(r["id"], r["name"]) for r in t["products"]],
        nodes=[NodeSite(r["id"], (r["x"], r["y"]), r["name"]) for r in t["nodes"]],
        suppliers=[Supplier(**r) for r in t["suppliers"]],
        consumers=[Consumer(**r) for r in t["consumers"]],
        technologies=[Technology(yields=yields.get(r["id"], {}), **r) for r in t["technologies"]],
        edges=[TransportEdge(**r) for r in t["edges"]],
        unique_edges=bool(manifest.get("unique_edges", False)),
        allow_self_loops=bool(manifest.get("allow_self_loops", False)),
        name=manifest.get("name", ""),
    )
    if validate:
        bad = validate_instance(inst)
        if bad:
            raise BundleError(f"{src}: invalid instance: " + "; ".join(map(str, bad[:5])))
    return inst


def bundle_digest(directory: str | Path) -> str:
    """SHA-256 over the bundle's files, in name order."""
    h = hashlib.sha256()
    for p in sorted(Path(directory).iterdir()):
        if p.is_file():
            h.update(p.name.encode())
            h.update(p.read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------- results


def _clean(v: Any) -> Any:
    """JSON-safe value: NaN/inf become None, numpy scalars become Python."""
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_clean(x) for x in v.tolist()]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def solution_document(inst: SupplyChainInstance, result: SolveResult, alloc: Allocation | None) -> dict:
    doc = {
        "instance": inst.name,
        "status": result.status.value,
        "objective": result.objective,
        "bound": result.bound,
        "mip_gap": result.mip_gap,
        "backend": result.backend,
        "solve_seconds": result.wall_time,
        "peak_memory_bytes": result.peak_memory,
    }
    if alloc is not None:
        doc.update(welfare=alloc.welfare, s=alloc.s, d=alloc.d, f=alloc.f, xi=alloc.xi, y=alloc.y)
    return _clean(doc)


def read_allocation(path: str | Path, inst: SupplyChainInstance) -> Allocation:
    doc = json.loads(Path(path).read_text())
    try:
        alloc = Allocation(
            s=np.asarray(doc["s"], float), d=np.asarray(doc["d"], float), f=np.asarray(doc["f"], float),
            xi=np.asarray(doc["xi"], float), y=np.asarray(doc["y"], dtype=np.int64),
            welfare=float(doc.get("welfare") or 0.0),
        )
    except KeyError as exc:
        raise BundleError(f"{path}: solution has no field {exc}") from None
    return alloc


def params_dict(params: SolverParams, backend: str) -> dict:
    return {"backend": backend, "time_limit": params.time_limit, "mip_gap": params.mip_gap,
            "threads": params.threads, "seed": params.seed}


def lower_stats_dict(lb: LowerBoundStats) -> dict:
    return _clean({
        "edges": lb.edges, "best": lb.best, "mean": lb.mean, "sd": lb.sd, "ci95": lb.ci95,
        "best_draw": lb.best_draw, "avg_solve_seconds": lb.avg_solve_seconds,
        "draws": [{"index": d.draw_index, "seed": d.seed, "status": d.status, "welfare": d.welfare,
                   "n_vars": d.n_vars, "solve_seconds": d.solve_seconds, "message": d.message}
                  for d in lb.draws],
    })


def upper_stats_dict(ub: UpperBoundStats) -> dict:
    return _clean({
        "partitions": ub.partitions, "best": ub.best, "mean": ub.mean, "sd": ub.sd, "ci95": ub.ci95,
        "best_trial": ub.best_trial, "avg_solve_seconds": ub.avg_solve_seconds,
        "trials": [{"index": t.trial_index, "seed": t.seed, "status": t.status, "welfare": t.welfare,
                    "n_vars": t.n_vars, "n_agg_edges": t.n_agg_edges, "solve_seconds": t.solve_seconds,
                    "message": t.message}
                   for t in ub.trials],
    })


def report_document(report: BoundReport, provenance: dict | None = None) -> dict:
    prov = {
        "format_version": FORMAT_VERSION,
        "package_version": __version__,
        "levels": ",".join(str(lv.spec) for lv in report.levels),
        "seed": report.seed,
        "gap_tol": report.gap_tol,
        "sampling_mode": report.sampling_mode,
        "solver": params_dict(report.params, report.backend),
        "instance_name": report.instance,
    }
    prov.update(provenance or {})
    levels = []
    for lv in report.levels:
        levels.append({
            "level": lv.level,
            "edges": lv.spec.edges,
            "partitions": lv.spec.partitions,
            "draws": lv.spec.draws,
            "lb_seed": lv.lb_seed,
            "ub_seed": lv.ub_seed,
            "best_lb": lv.best_lb,
            "best_ub": lv.best_ub,
            "gap_pct": lv.gap,
            "gap": format_gap(lv.gap),
            "level_gap_pct": lv.level_gap,
            "lb_seconds": lv.lb_seconds,
            "ub_seconds": lv.ub_seconds,
            "lower": lower_stats_dict(lv.lower),
            "upper": upper_stats_dict(lv.upper),
        })
    return _clean({
        "format": REPORT_FORMAT,
        "version": FORMAT_VERSION,
        "provenance": prov,
        "levels": levels,
        "summary": {"best_lb": report.best_lb, "best_ub": report.best_ub, "gap_pct": report.final_gap,
                    "gap": format_gap(report.final_gap), "stopped_early": report.stopped_early},
        "timing": report.wall_time,
    })


REPORT_COLUMNS = ("level", "edges", "avg_lb_seconds", "best_lb", "sd_lb", "partitions",
                  "avg_ub_seconds", "best_ub", "sd_ub", "gap_pct")


def report_rows(report: BoundReport) -> list[tuple]:
    return [
        (lv.level, lv.spec.edges, lv.lower.avg_solve_seconds, lv.best_lb, lv.lower.sd,
         lv.spec.partitions, lv.upper.avg_solve_seconds, lv.best_ub, lv.upper.sd, lv.gap)
        for lv in report.levels
    ]


def write_report(report: BoundReport, directory: str | Path, provenance: dict | None = None) -> dict[str, Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    doc = report_document(report, provenance)
    paths = {"json": out / "report.json", "csv": out / "report.csv", "draws": out / "draws.csv"}
    paths["json"].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _write_table(paths["csv"], REPORT_COLUMNS, report_rows(report))
    draw_rows = []
    for lv in report.levels:
        for d in lv.lower.draws:
            draw_rows.append((lv.level, "lower", d.draw_index, d.seed, d.status,
                              "" if d.welfare is None else d.welfare, d.solve_seconds))
        for t in lv.upper.trials:
            draw_rows.append((lv.level, "upper", t.trial_index, t.seed, t.status,
                              "" if t.welfare is None else t.welfare, t.solve_seconds))
    _write_table(paths["draws"], ("level", "phase", "index", "seed", "status", "welfare", "solve_seconds"), draw_rows)
    return paths


def read_report_table(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: float(v) if k not in ("level", "edges", "partitions") else int(v) for k, v in r.items()} for r in rows]


def check_report_table(rows: list[dict], tol: float = 1e-9) -> list[str]:
    """Recompute each row's gap from its bounds; return mismatches."""
    bad = []
    for r in rows:
        g = gap(r["best_lb"], r["best_ub"], tol=1e-6)
        if abs(g - r["gap_pct"]) > tol * (1 + abs(g)):
            bad.append(f"level {r['level']}: gap {r['gap_pct']} != recomputed {g}")
    return bad


TIMING_KEYS = {"timing", "peak_memory_bytes"}


def strip_timing(doc: Any) -> Any:
    """Drop wall-clock fields so two runs can be compared exactly."""
    if isinstance(doc, dict):
        return {k: strip_timing(v) for k, v in doc.items()
                if k not in TIMING_KEYS and not k.endswith("_seconds")}
    if isinstance(doc, list):
        return [strip_timing(v) for v in doc]
    return doc


def plan_document(plan: CoarsePlan) -> dict:
    return _clean({
        "pivots": list(plan.pivots),
        "seed": plan.seed,
        "partition_of": plan.partition_of,
        "n_local_edges": len(plan.local_edges),
        "n_global_edges": len(plan.global_edges),
        "agg_edges": [
            {"k": e.k, "src_part": e.src_part, "dst_part": e.dst_part, "product": e.product,
             "capacity": e.capacity, "cost": e.cost, "members": list(e.members)}
            for e in plan.agg_edges
        ],
    })


def write_json(doc: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")
    return path
