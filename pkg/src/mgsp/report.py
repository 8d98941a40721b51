"""Figure rendering for sweep results: one PNG next to each results CSV."""

import csv
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

AXIS_LABELS = {
    "power_budget": "power budget (mW)",
    "noise": "channel noise (mW)",
}


def read_results(csv_path):
    """Parse a sweep CSV into {model: {value: [metrics…]}}."""
    table = defaultdict(lambda: defaultdict(list))
    parameter = None
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["metric_name"] == "failed":
                continue
            parameter = row["sweep_param"]
            table[row["model"]][float(row["value"])].append(
                float(row["metric_value"])
            )
    return parameter, table


def plot_sweep(csv_path, out_path):
    """Mean ± std of the metric per model across the sweep grid."""
    parameter, table = read_results(csv_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for model in sorted(table):
        values = sorted(table[model])
        means = np.array([np.mean(table[model][v]) for v in values])
        stds = np.array([np.std(table[model][v]) for v in values])
        scale = 1e3 if parameter in ("power_budget", "noise") else 1.0
        xs = np.array(values) * scale
        ax.plot(xs, means, marker="o", label=model)
        ax.fill_between(xs, means - stds, means + stds, alpha=0.2)
    ax.set_xlabel(AXIS_LABELS.get(parameter, parameter or "value"))
    ax.set_ylabel("sum rate (nats)")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
