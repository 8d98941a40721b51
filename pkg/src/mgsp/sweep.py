"""Parameter sweeps over the power-allocation benchmark.

Each (grid point, repetition) trains an MGNN on its own seeded instance,
evaluates it and the requested baselines, and appends CSV rows. A JSON
manifest captures every seed and config plus the recorded rows, so a sweep
can be replayed to byte-identical output (metric values are recomputed and
must match exactly; wall-clock times come from the manifest, since timing
is not reproducible).
"""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .model import TrainConfig, build_model, train
from .tasks import (
    TaskSpec,
    independent_graphs_basis,
    make_power_allocation,
    model_allocation_rate,
    single_graph_basis,
    uniform_allocation_rate,
)
from .words import enumerate_monomials

MANIFEST_VERSION = 1
CSV_HEADER = "sweep_param,value,rep,model,metric_name,metric_value,wall_ms"
SWEEP_PARAMETERS = ("power_budget", "noise")
BASELINES = ("uniform", "single_graph", "independent")
METRIC_NAME = "sum_rate_nats"


@dataclass
class SweepSpec:
    parameter: str
    grid: list
    repetitions: int
    task: TaskSpec
    baselines: list = field(default_factory=lambda: ["uniform"])
    depth: int = 2
    nonlinearity: str = "tanh"
    learning_rate: float = 0.02
    epochs: int = 60
    batch_size: int = 16
    optimizer: str = "adam"
    master_seed: int = 0

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ValueError(f"unknown sweep parameter {self.parameter!r}")
        if not self.grid:
            raise ValueError("sweep grid must be non-empty")
        diffs = [b - a for a, b in zip(self.grid, self.grid[1:])]
        if not (all(d > 0 for d in diffs) or all(d < 0 for d in diffs)):
            raise ValueError("sweep grid must be strictly monotone")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        for b in self.baselines:
            if b not in BASELINES:
                raise ValueError(f"unknown baseline {b!r}")
        if self.task.kind != "power_allocation":
            raise ValueError("sweeps run on the power_allocation task")

    def to_dict(self):
        return {
            "parameter": self.parameter,
            "grid": list(self.grid),
            "repetitions": self.repetitions,
            "task": self.task.to_dict(),
            "baselines": list(self.baselines),
            "depth": self.depth,
            "nonlinearity": self.nonlinearity,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "optimizer": self.optimizer,
            "master_seed": self.master_seed,
        }

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        doc["task"] = TaskSpec.from_dict(doc["task"])
        return cls(**doc)


def _point_seed(master_seed, point_index, rep):
    return master_seed + 1009 * point_index + rep


def _budget_noise(spec, value):
    budget = float(spec.task.knobs.get("budget", 50e-3))
    noise = float(spec.task.knobs.get("noise", 1e-3))
    if spec.parameter == "power_budget":
        budget = float(value)
    else:
        noise = float(value)
    return budget, noise


def _basis_for(model_name, num_generators, depth):
    if model_name == "mgnn":
        return enumerate_monomials(num_generators, depth)
    if model_name == "single_graph":
        return single_graph_basis(num_generators, depth)
    if model_name == "independent":
        return independent_graphs_basis(num_generators, depth)
    raise ValueError(model_name)


def evaluate_point(spec, value, rep):
    """Train the MGNN (and trainable baselines) at one grid point.

    Returns a list of (model_name, metric_value) pairs.
    """
    budget, noise = _budget_noise(spec, value)
    seed = _point_seed(spec.master_seed, spec.grid.index(value), rep)
    task = TaskSpec.from_dict({**spec.task.to_dict(), "seed": seed})
    graph, objective, train_set, val_set, test_set = make_power_allocation(
        task, budget=budget, noise=noise
    )
    config = TrainConfig(
        loss="mse",
        learning_rate=spec.learning_rate,
        epochs=spec.epochs,
        batch_size=spec.batch_size,
        seed=seed,
        optimizer=spec.optimizer,
    )
    results = []
    trainable = ["mgnn"] + [b for b in spec.baselines if b != "uniform"]
    for name in trainable:
        basis = _basis_for(name, graph.num_shifts, spec.depth)
        model = build_model(graph, [basis], [graph.num_shifts, 1],
                            nonlinearity=spec.nonlinearity, seed=seed)
        best, _ = train(model, train_set, config, val_set=val_set,
                        objective=objective)
        results.append((name, model_allocation_rate(best, test_set, budget, noise)))
    if "uniform" in spec.baselines:
        results.append(("uniform", uniform_allocation_rate(test_set, budget, noise)))
    return results


def _format_row(parameter, value, rep, model, metric_value, wall_ms):
    return (
        f"{parameter},{value!r},{rep},{model},{METRIC_NAME},"
        f"{metric_value!r},{wall_ms}"
    )


def run_sweep(spec, out_dir, render_figure=True):
    """Run every grid point × repetition; emit CSV, manifest, and a figure.

    Training failures are recorded as rows with metric_name "failed" and the
    sweep continues. Returns the path of the results CSV.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    records = []
    for value in spec.grid:
        for rep in range(spec.repetitions):
            start = time.perf_counter()
            try:
                results = evaluate_point(spec, value, rep)
            except RuntimeError as exc:
                wall_ms = int((time.perf_counter() - start) * 1000)
                rows.append(f"{spec.parameter},{value!r},{rep},mgnn,failed,nan,{wall_ms}")
                records.append({"value": value, "rep": rep, "model": "mgnn",
                                "metric": None, "error": str(exc),
                                "wall_ms": wall_ms})
                continue
            wall_ms = int((time.perf_counter() - start) * 1000)
            for name, metric in results:
                rows.append(_format_row(spec.parameter, value, rep, name,
                                        metric, wall_ms))
                records.append({"value": value, "rep": rep, "model": name,
                                "metric": metric, "wall_ms": wall_ms})
    csv_path = out_dir / "results.csv"
    csv_path.write_text(CSV_HEADER + "\n" + "\n".join(rows) + "\n")
    manifest = {
        "version": MANIFEST_VERSION,
        "spec": spec.to_dict(),
        "records": records,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    if render_figure:
        from .report import plot_sweep

        plot_sweep(csv_path, out_dir / f"sweep_{spec.parameter}.png")
    return csv_path


def replay_sweep(manifest_path, out_dir, render_figure=True):
    """Re-run a sweep from its manifest and reproduce the CSV byte-for-byte.

    Metric values are recomputed and must equal the recorded ones exactly;
    wall-clock columns are taken from the manifest.
    """
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {manifest.get('version')!r}")
    spec = SweepSpec.from_dict(manifest["spec"])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = manifest["records"]
    rows = []
    cursor = 0
    for value in spec.grid:
        for rep in range(spec.repetitions):
            recorded = []
            while cursor < len(records) and records[cursor]["value"] == value \
                    and records[cursor]["rep"] == rep:
                recorded.append(records[cursor])
                cursor += 1
            if any(r["metric"] is None for r in recorded):
                r = recorded[0]
                rows.append(f"{spec.parameter},{value!r},{rep},mgnn,failed,nan,"
                            f"{r['wall_ms']}")
                continue
            results = dict(evaluate_point(spec, value, rep))
            for r in recorded:
                fresh = results[r["model"]]
                if fresh != r["metric"]:
                    raise RuntimeError(
                        f"replay mismatch at {spec.parameter}={value} rep={rep} "
                        f"model={r['model']}: {fresh!r} != {r['metric']!r}"
                    )
                rows.append(_format_row(spec.parameter, value, rep, r["model"],
                                        fresh, r["wall_ms"]))
    csv_path = out_dir / "results.csv"
    csv_path.write_text(CSV_HEADER + "\n" + "\n".join(rows) + "\n")
    if render_figure:
        from .report import plot_sweep

        plot_sweep(csv_path, out_dir / f"sweep_{spec.parameter}.png")
    return csv_path
