"""File formats: JSON records and the CSV layouts used by the command line.

CSV layouts
-----------
path      ``time,v1,...,vm``
ensemble  ``path_id,time,price``
quotes    ``payoff_id,kind,params_json,price`` plus an optional ``split``
backtest  ``path_id,time,position,cash,pnl``

Floats are written with ``repr``, the shortest decimal string that reads
back to the same double, so repeated runs produce identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .errors import InputError
from .implied import Quote, QuoteSet
from .market import PathEnsemble
from .payoffs import PayoffSpec
from .signature_core import DiscretePath


def _clean(obj):
    """Convert numpy scalars/arrays and non-finite floats to JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj, indent: int | None = 1) -> str:
    return json.dumps(_clean(obj), indent=indent, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise InputError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from exc


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _fmt(x: float) -> str:
    return repr(float(x))


def _open_csv(path):
    try:
        return open(path, newline="")
    except FileNotFoundError as exc:
        raise InputError(f"file not found: {path}") from exc


# paths -------------------------------------------------------------------


def write_path_csv(path, p: DiscretePath) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"v{j + 1}" for j in range(p.dim)])
        for t, row in zip(p.times, p.values):
            w.writerow([_fmt(t)] + [_fmt(v) for v in row])


def read_path_csv(path) -> DiscretePath:
    with _open_csv(path) as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "time" or len(rows[0]) < 2:
        raise InputError("path CSV must start with a 'time,v1,...' header")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as exc:
        raise InputError(f"non-numeric entry in path CSV: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != len(rows[0]):
        raise InputError("ragged path CSV")
    return DiscretePath(data[:, 0], data[:, 1:])


# ensembles ---------------------------------------------------------------


def write_ensemble_csv(path, ens: PathEnsemble) -> None:
    times = [_fmt(t) for t in ens.times]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "time", "price"])
        for i in range(ens.n_paths):
            for t, x in zip(times, ens.prices[i]):
                w.writerow([i, t, _fmt(x)])


def read_ensemble_csv(path) -> PathEnsemble:
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["path_id", "time", "price"]:
            raise InputError("ensemble CSV must have header 'path_id,time,price'")
        paths: dict = {}
        try:
            for row in reader:
                if not row:
                    continue
                pid, t, x = row
                paths.setdefault(int(pid), []).append((float(t), float(x)))
        except ValueError as exc:
            raise InputError(f"malformed ensemble row: {exc}") from exc
    if not paths:
        raise InputError("ensemble CSV has no rows")
    ids = sorted(paths)
    times = np.array([t for t, _ in paths[ids[0]]])
    prices = np.empty((len(ids), times.size))
    for k, pid in enumerate(ids):
        rec = paths[pid]
        if len(rec) != times.size or not np.array_equal([t for t, _ in rec], times):
            raise InputError(f"path {pid} is not on the shared time grid")
        prices[k] = [x for _, x in rec]
    return PathEnsemble(times, prices)


# quotes ------------------------------------------------------------------


def read_quotes_csv(path, T: float = 1.0) -> QuoteSet:
    with _open_csv(path) as fh:
        reader = csv.DictReader(fh)
        need = {"payoff_id", "kind", "params_json", "price"}
        if reader.fieldnames is None or not need.issubset(reader.fieldnames):
            raise InputError("quotes CSV needs columns payoff_id,kind,params_json,price")
        quotes = []
        for row in reader:
            try:
                params = json.loads(row["params_json"]) if row["params_json"] else {}
                price = float(row["price"])
            except (ValueError, json.JSONDecodeError) as exc:
                raise InputError(f"malformed quote {row.get('payoff_id')}: {exc}") from exc
            quotes.append(Quote(PayoffSpec(row["kind"], params), price, row["payoff_id"],
                                (row.get("split") or "train").strip()))
    return QuoteSet(tuple(quotes), T)


def write_quotes_csv(path, quotes: QuoteSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["payoff_id", "kind", "params_json", "price", "split"])
        for q in quotes.quotes:
            params = json.dumps(q.payoff.to_dict()["params"], sort_keys=True)
            w.writerow([q.payoff_id, q.payoff.kind, params, _fmt(q.price), q.split])


# backtests ---------------------------------------------------------------


def write_backtest_csv(path, report) -> None:
    times = [_fmt(t) for t in report.times]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "time", "position", "cash", "pnl"])
        for i in range(report.pnl.shape[0]):
            for k, t in enumerate(times):
                w.writerow([i, t, _fmt(report.positions[i, k]), _fmt(report.cash[i, k]),
                            _fmt(report.pnl[i, k])])
