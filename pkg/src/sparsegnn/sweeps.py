"""Grid sweeps over (epsilon, zeta, mode) cells, with CSV emission.

Cells run in a deterministic order (mode, then epsilon, then zeta), each via
multi_seed_run. Results stream to a CSV whose rows append in cell order, so
an interrupted sweep resumes by skipping every cell already present and the
final file is identical to a single uninterrupted run. Run logs land under
<out>/runs/<dataset>/<model>/<mode>/eps<e>_zeta<z>/seed<n>.log, and the
report helper rebuilds the same CSV from those logs alone.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .graphs import GraphDataset
from .training import TrainConfig, multi_seed_run

CSV_HEADER = ["dataset", "model", "mode", "epsilon", "zeta", "acc_mean",
              "acc_std", "params_active", "n_seeds"]
PARAM_HEADER = ["dataset", "model", "epsilon", "params_active"]

DEFAULT_EPS_GRID = (0.0, 0.1, 0.3, 0.5, 0.7, 0.9)
DEFAULT_ZETA_GRID = (0.0, 0.1, 0.3, 0.5, 0.7)
MARGINAL_EPS = (0.1, 0.3, 0.5, 0.7)


def fnum(x) -> str:
    """Canonical text form for floats in file names and CSV cells."""
    return repr(float(x))


@dataclass
class SweepSpec:
    model: str
    modes: tuple = ("sparse",)
    eps_grid: tuple = DEFAULT_EPS_GRID
    zeta_grid: tuple = DEFAULT_ZETA_GRID
    n_seeds: int = 5
    base: TrainConfig = field(default_factory=TrainConfig)

    def validate(self):
        if not self.eps_grid or not self.zeta_grid or not self.modes:
            raise ValueError("grids and modes must be non-empty")
        for v in list(self.eps_grid) + list(self.zeta_grid):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"grid value {v} outside [0, 1]")
        return self

    def cells(self):
        for mode in self.modes:
            for eps in self.eps_grid:
                for zeta in self.zeta_grid:
                    yield mode, eps, zeta


@dataclass
class SweepRecord:
    dataset: str
    model: str
    mode: str
    epsilon: float
    zeta: float
    acc_mean: float
    acc_std: float
    params_active: float
    n_seeds: int

    def row(self):
        return [self.dataset, self.model, self.mode, fnum(self.epsilon),
                fnum(self.zeta), fnum(self.acc_mean), fnum(self.acc_std),
                fnum(self.params_active), str(self.n_seeds)]

    @property
    def key(self):
        return (self.dataset, self.model, self.mode, fnum(self.epsilon), fnum(self.zeta))

    @property
    def sort_key(self):
        return (self.dataset, self.model, self.mode, self.epsilon, self.zeta)


def run_log_path(out_dir, dataset, model, mode, eps, zeta, seed):
    return os.path.join(out_dir, "runs", dataset, model, mode,
                        f"eps{fnum(eps)}_zeta{fnum(zeta)}", f"seed{seed}.log")


def _run_cell(args):
    spec, dataset, mode, eps, zeta, out_dir = args
    cfg = replace(spec.base, model=spec.model, mode=mode, epsilon=eps, zeta=zeta)
    log_for = None
    if out_dir:
        def log_for(seed):
            path = run_log_path(out_dir, dataset.name, spec.model, mode, eps, zeta, seed)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            return path
    agg = multi_seed_run(cfg, dataset, spec.n_seeds, log_path_for=log_for)
    return SweepRecord(dataset=dataset.name, model=spec.model, mode=mode,
                       epsilon=eps, zeta=zeta, acc_mean=agg.acc_mean,
                       acc_std=agg.acc_std, params_active=agg.params_active_mean,
                       n_seeds=agg.n_seeds)


def run_sweep(spec: SweepSpec, dataset: GraphDataset, csv_path=None, out_dir=None,
              jobs=1, progress=None):
    """Run every grid cell not already present in csv_path.

    Returns the full record list in canonical order. The CSV is rewritten in
    that order after every completed cell, so interrupting and resuming a
    sweep yields the same final file as one uninterrupted run.
    """
    spec.validate()
    completed = {}
    if csv_path and os.path.exists(csv_path):
        for rec in read_csv(csv_path):
            completed[rec.key] = rec

    pending = []
    for mode, eps, zeta in spec.cells():
        key = (dataset.name, spec.model, mode, fnum(eps), fnum(zeta))
        if key not in completed:
            pending.append((spec, dataset, mode, eps, zeta, out_dir))

    def flush(rec):
        completed[rec.key] = rec
        if csv_path:
            emit_csv(sorted(completed.values(), key=lambda r: r.sort_key), csv_path)
        if progress:
            progress(rec)

    if jobs > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for rec in pool.map(_run_cell, pending):
                flush(rec)
    else:
        for args in pending:
            flush(_run_cell(args))

    return sorted(completed.values(), key=lambda r: r.sort_key)


# ---------------------------------------------------------------------------
# CSV emission / ingestion
# ---------------------------------------------------------------------------


def emit_csv(records, path):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for rec in records:
            writer.writerow(rec.row())


def read_csv(path):
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        for row in reader:
            records.append(SweepRecord(
                dataset=row[0], model=row[1], mode=row[2], epsilon=float(row[3]),
                zeta=float(row[4]), acc_mean=float(row[5]), acc_std=float(row[6]),
                params_active=float(row[7]), n_seeds=int(row[8])))
    return records


def marginalize_zeta(records, eps_values=MARGINAL_EPS):
    """Per-zeta accuracy averaged over the mid-range sparsity levels.

    For each (dataset, model, mode) group and each zeta present, averages
    acc_mean over eps_values; a missing (eps, zeta) cell is an error naming
    the cell.
    """
    groups = {}
    for rec in records:
        groups.setdefault((rec.dataset, rec.model, rec.mode), []).append(rec)
    rows = []
    for (dataset, model, mode), recs in sorted(groups.items()):
        by_cell = {(fnum(r.epsilon), fnum(r.zeta)): r for r in recs}
        zetas = sorted({r.zeta for r in recs})
        for zeta in zetas:
            vals = []
            for eps in eps_values:
                cell = by_cell.get((fnum(eps), fnum(zeta)))
                if cell is None:
                    raise ValueError(f"missing cell eps={fnum(eps)} zeta={fnum(zeta)} "
                                     f"for {dataset}/{model}/{mode}")
                vals.append(cell.acc_mean)
            rows.append({"dataset": dataset, "model": model, "mode": mode,
                         "zeta": zeta, "acc_mean": float(np.mean(vals))})
    return rows


def emit_marginal_csv(rows, path):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "model", "mode", "zeta", "acc_mean"])
        for r in rows:
            writer.writerow([r["dataset"], r["model"], r["mode"], fnum(r["zeta"]),
                             fnum(r["acc_mean"])])


def emit_param_table(dataset: GraphDataset, models, eps_grid, path, draws=20, seed=0,
                     base: TrainConfig | None = None):
    """Mean active-parameter count per (model, epsilon) over repeated mask draws."""
    from .training import build_model
    from .sparsity import count_params

    base = base or TrainConfig()
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PARAM_HEADER)
        for model_name in models:
            for eps in eps_grid:
                cfg = replace(base, model=model_name, mode="sparse", epsilon=eps)
                counts = []
                for d in range(draws):
                    rng = np.random.default_rng([seed, d])
                    model = build_model(replace(cfg, seed=seed + d), dataset, rng)
                    counts.append(count_params(model).active)
                writer.writerow([dataset.name, model_name, fnum(eps),
                                 fnum(float(np.mean(counts)))])


# ---------------------------------------------------------------------------
# report: rebuild the sweep CSV from run logs
# ---------------------------------------------------------------------------


def collect_run_results(out_dir):
    """Read every result record under <out>/runs, keyed by sweep cell."""
    root = os.path.join(out_dir, "runs")
    cells = {}
    if not os.path.isdir(root):
        raise FileNotFoundError(f"no run logs under {root}")
    for dirpath, _dirnames, filenames in os.walk(root):
        for fname in sorted(filenames):
            if not fname.endswith(".log"):
                continue
            with open(os.path.join(dirpath, fname)) as fh:
                for line in fh:
                    rec = json.loads(line)
                    if rec.get("record") == "result":
                        key = (rec["dataset"], rec["model"], rec["mode"],
                               fnum(rec["epsilon"]), fnum(rec["zeta"]))
                        cells.setdefault(key, []).append(rec)
    return cells


def report_from_logs(out_dir):
    """Aggregate per-seed run logs into SweepRecords (sorted by cell key)."""
    cells = collect_run_results(out_dir)
    records = []
    for key in sorted(cells, key=lambda k: (k[0], k[1], k[2], float(k[3]), float(k[4]))):
        runs = sorted(cells[key], key=lambda r: r["seed"])
        accs = np.array([r["test_acc"] for r in runs])
        actives = np.array([r["params_active"] for r in runs], dtype=np.float64)
        dataset, model, mode, eps, zeta = key
        records.append(SweepRecord(
            dataset=dataset, model=model, mode=mode, epsilon=float(eps),
            zeta=float(zeta), acc_mean=float(accs.mean()), acc_std=float(accs.std()),
            params_active=float(actives.mean()), n_seeds=len(runs)))
    return records
