"""Command-line front end: generate, train, eval, sweep, check.

Exit codes: 0 success, 2 validation error (bad flags/configs), 3 runtime
failure (divergence, non-convergence, replay mismatch).
"""

import json
import sys

import click
import numpy as np

from .model import (
    MgnnModel,
    TrainConfig,
    build_model,
    check_equivariance,
    evaluate_loss,
    loss_and_gradients,
    train,
)
from .multigraph import (
    Multigraph,
    MultigraphError,
    Permutation,
    build_multigraph,
    save_multigraph,
)
from .filters import MultigraphFilter, apply_filter, filter_adjoint_apply
from .sampling import build_plan, neighborhoods, sample_shift
from .sweep import BASELINES, SweepSpec, replay_sweep, run_sweep
from .tasks import (
    TaskSpec,
    generate_multigraph,
    make_planted_filter,
    make_power_allocation,
    make_source_localization,
    model_allocation_rate,
    single_graph_basis,
    uniform_allocation_rate,
)
from .words import check_pruning_bound, enumerate_monomials, prune_basis

EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


class _Failure(click.ClickException):
    exit_code = EXIT_RUNTIME


def _run(fn):
    """Map library exceptions onto the CLI exit-code contract."""
    try:
        return fn()
    except (MultigraphError, ValueError) as exc:
        raise click.UsageError(str(exc))
    except RuntimeError as exc:
        raise _Failure(str(exc))


@click.group()
def main():
    """Multigraph signal processing and MGNN experiments."""


@main.command()
@click.option("--nodes", type=int, required=True, help="Number of nodes N.")
@click.option("--edge-model", "edge_models", multiple=True, required=True,
              help="Per-layer edge model, e.g. erdos_renyi:0.3, "
                   "ring_plus_random:2,0.1, geometric:0.4. Repeat per layer.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--near-commuting-eps", type=float, default=None,
              help="Rebuild layer 2 as a near-commuting partner of layer 1 "
                   "with this target commutator norm.")
@click.option("--require-connected", is_flag=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def generate(nodes, edge_models, seed, near_commuting_eps, require_connected, out):
    """Generate a multigraph JSON file."""

    def go():
        graph = generate_multigraph(
            nodes, list(edge_models), seed,
            require_connected=require_connected,
            near_commuting_eps=near_commuting_eps,
        )
        save_multigraph(graph, out)
        click.echo(f"wrote {graph.num_shifts}-layer multigraph on {nodes} nodes to {out}")

    _run(go)


def _load_task(path):
    try:
        return TaskSpec.load(path)
    except FileNotFoundError:
        raise click.UsageError(f"dataset spec not found: {path}")


def _make_datasets(task, budget=None, noise=None):
    if task.kind == "source_localization":
        graph, _, tr, va, te = make_source_localization(task)
        return graph, None, tr, va, te
    if task.kind == "planted_filter":
        graph, _, tr, va, te = make_planted_filter(task)
        return graph, None, tr, va, te
    graph, objective, tr, va, te = make_power_allocation(task, budget=budget,
                                                         noise=noise)
    return graph, objective, tr, va, te


def _build_task_model(task, graph, depth, features, readout, nonlinearity,
                      seed, prune_eps, pool_counts, pool_radii, centrality,
                      aggregation):
    basis = enumerate_monomials(graph.num_shifts, depth)
    if prune_eps is not None:
        basis = prune_basis(basis, list(graph.shifts), prune_eps)
    plan = None
    if pool_counts:
        counts = [int(v) for v in pool_counts.split(",")]
        radii = [int(v) for v in pool_radii.split(",")] if pool_radii \
            else [1] * (len(counts) - 1)
        plan, _, _ = build_plan(graph, counts, radii, method=centrality,
                                aggregation=aggregation)
    feature_sizes = [int(v) for v in features.split(",")]
    readout_dims = [int(v) for v in readout.split(",")] if readout else []
    num_layers = len(feature_sizes) - 1
    if num_layers < 1:
        raise click.UsageError("--features needs at least two comma-separated sizes")
    return build_model(graph, [basis] * num_layers, feature_sizes,
                       nonlinearity=nonlinearity, readout_dims=readout_dims,
                       plan=plan, seed=seed)


@main.command(name="train")
@click.option("--dataset", type=click.Path(dir_okay=False), required=True,
              help="Task spec JSON defining the dataset.")
@click.option("--out", type=click.Path(dir_okay=False), required=True,
              help="Checkpoint output path.")
@click.option("--depth", type=int, default=2, show_default=True)
@click.option("--features", default=None,
              help="Comma-separated feature sizes F_0,…,F_L.")
@click.option("--readout", default=None, help="Comma-separated readout sizes.")
@click.option("--nonlinearity", type=click.Choice(["relu", "tanh", "identity"]),
              default="relu", show_default=True)
@click.option("--loss", type=click.Choice(["mse", "cross_entropy"]), default=None)
@click.option("--learning-rate", type=float, default=5e-3, show_default=True)
@click.option("--epochs", type=int, default=100, show_default=True)
@click.option("--batch-size", type=int, default=16, show_default=True)
@click.option("--optimizer", type=click.Choice(["sgd", "adam"]), default="adam",
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--prune-eps", type=float, default=None,
              help="Prune the basis at this commutator threshold.")
@click.option("--pool-counts", default=None,
              help="Comma-separated per-layer node counts N_0,…,N_L.")
@click.option("--pool-radii", default=None,
              help="Comma-separated pooling radii α_1,…,α_L.")
@click.option("--centrality", type=click.Choice(["degree", "pagerank"]),
              default="degree", show_default=True)
@click.option("--aggregation", type=click.Choice(["mean", "median", "max"]),
              default="max", show_default=True)
def train_command(dataset, out, depth, features, readout, nonlinearity, loss,
                  learning_rate, epochs, batch_size, optimizer, seed, prune_eps,
                  pool_counts, pool_radii, centrality, aggregation):
    """Train an MGNN on a task spec and write a checkpoint."""

    def go():
        task = _load_task(dataset)
        graph, objective, tr, va, _ = _make_datasets(task)
        nonlocal features, readout, loss
        if features is None:
            if task.kind == "source_localization":
                features = "1,8,8"
            elif task.kind == "power_allocation":
                features = f"{graph.num_shifts},1"
            else:
                features = "1,1"
        if readout is None and task.kind == "source_localization":
            readout = str(task.knobs.get("num_communities", 4))
        if loss is None:
            loss = "cross_entropy" if task.kind == "source_localization" else "mse"
        activation = nonlinearity
        if task.kind == "planted_filter":
            activation = "identity"
        elif task.kind == "power_allocation" and nonlinearity == "relu":
            activation = "tanh"
        model = _build_task_model(task, graph, depth, features, readout,
                                  activation, seed, prune_eps, pool_counts,
                                  pool_radii, centrality, aggregation)
        config = TrainConfig(loss=loss, learning_rate=learning_rate,
                             epochs=epochs, batch_size=batch_size, seed=seed,
                             optimizer=optimizer)
        best, history = train(model, tr, config, val_set=va, objective=objective)
        best.save(out, train_config=config)
        click.echo(
            f"trained {epochs} epochs; best val loss "
            f"{min(h['val_loss'] for h in history) if history else float('nan'):.6g}; "
            f"checkpoint at {out}"
        )

    _run(go)


@main.command(name="eval")
@click.option("--model", "model_path", type=click.Path(dir_okay=False),
              required=True)
@click.option("--dataset", type=click.Path(dir_okay=False), required=True)
@click.option("--split", type=click.Choice(["train", "val", "test"]),
              default="test", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Optional metrics JSON output path.")
def eval_command(model_path, dataset, split, out):
    """Evaluate a checkpoint on a dataset split."""

    def go():
        task = _load_task(dataset)
        model = MgnnModel.load(model_path)
        graph, objective, tr, va, te = _make_datasets(task)
        data = {"train": tr, "val": va, "test": te}[split]
        metrics = {"task": task.kind, "split": split, "size": len(data)}
        if task.kind == "source_localization":
            hits = 0
            for x, y in data:
                pred, _ = model.forward(np.asarray(x, dtype=float))
                hits += int(np.argmax(pred) == int(y))
            metrics["accuracy"] = hits / len(data)
            metrics["cross_entropy"] = evaluate_loss(model, data, "cross_entropy")
        elif task.kind == "planted_filter":
            metrics["mse"] = evaluate_loss(model, data, "mse")
        else:
            budget = objective.budget
            noise = objective.noise
            metrics["sum_rate_nats"] = model_allocation_rate(model, data, budget, noise)
            metrics["uniform_sum_rate_nats"] = uniform_allocation_rate(data, budget, noise)
        text = json.dumps(metrics, indent=2)
        if out:
            with open(out, "w") as fh:
                fh.write(text + "\n")
        click.echo(text)

    _run(go)


@main.command(name="sweep")
@click.option("--dataset", type=click.Path(dir_okay=False), default=None,
              help="Power-allocation task spec JSON.")
@click.option("--param", type=click.Choice(["power_budget", "noise"]),
              default="power_budget", show_default=True)
@click.option("--grid", default=None, help="Comma-separated grid values.")
@click.option("--reps", type=int, default=3, show_default=True)
@click.option("--baseline", "baselines", multiple=True,
              type=click.Choice(BASELINES), default=("uniform",),
              show_default=True)
@click.option("--epochs", type=int, default=60, show_default=True)
@click.option("--learning-rate", type=float, default=0.02, show_default=True)
@click.option("--depth", type=int, default=2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
@click.option("--replay", type=click.Path(dir_okay=False), default=None,
              help="Replay a sweep from its manifest instead of configuring one.")
def sweep_command(dataset, param, grid, reps, baselines, epochs, learning_rate,
                  depth, seed, out_dir, replay):
    """Run (or replay) a parameter sweep; writes CSV, manifest, and figure."""

    def go():
        if replay:
            csv_path = replay_sweep(replay, out_dir)
            click.echo(f"replayed sweep to {csv_path}")
            return
        if dataset is None or grid is None:
            missing = "dataset" if dataset is None else "grid"
            raise click.UsageError(f"missing required option --{missing}")
        task = _load_task(dataset)
        spec = SweepSpec(
            parameter=param,
            grid=[float(v) for v in grid.split(",")],
            repetitions=reps,
            task=task,
            baselines=list(baselines),
            depth=depth,
            epochs=epochs,
            learning_rate=learning_rate,
            master_seed=seed,
        )
        csv_path = run_sweep(spec, out_dir)
        click.echo(f"sweep results at {csv_path}")

    _run(go)


# -- property suites -------------------------------------------------------------


def _random_multigraph(n, m, rng, density=0.4):
    lists = []
    for _ in range(m):
        edges = [(i, j, float(rng.standard_normal()))
                 for i in range(n) for j in range(n)
                 if i != j and rng.random() < density]
        if not edges:
            edges = [(0, 1 % n, 1.0)]
        lists.append(edges)
    return build_multigraph(lists, n)


def _dense_word_operator(shifts, word):
    op = np.eye(shifts[0].num_nodes)
    for g in word:
        op = op @ shifts[g - 1].to_dense()
    return op


def check_oracle_equivalence(trials=20, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(4, 13))
        m = int(rng.integers(1, 4))
        depth = int(rng.integers(0, 4))
        graph = _random_multigraph(n, m, rng)
        basis = enumerate_monomials(m, depth)
        filt = MultigraphFilter.random(basis, 2, 3, rng)
        x = rng.standard_normal((n, 2))
        fast = apply_filter(filt, graph, x)
        dense = np.zeros((n, 3))
        for w in basis.words:
            dense += _dense_word_operator(graph.shifts, w) @ x @ filt.coefficients[w]
        scale = max(np.max(np.abs(dense)), 1.0)
        worst = max(worst, float(np.max(np.abs(fast - dense))) / scale)
        u = rng.standard_normal((n, 3))
        lhs = float(np.sum(fast * u))
        rhs = float(np.sum(x * filter_adjoint_apply(filt, graph, u)))
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1.0))
    return worst


def check_equivariance_sweep(trials=25, seed=0, tolerance=1e-9):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(5, 13))
        m = int(rng.integers(1, 4))
        layers = int(rng.integers(1, 4))
        graph = _random_multigraph(n, m, rng)
        basis = enumerate_monomials(m, 2)
        model = build_model(graph, [basis] * layers, [1] + [3] * layers,
                            nonlinearity="relu", seed=int(rng.integers(1 << 31)))
        x = rng.standard_normal((n, 1))
        perm = Permutation.random(n, rng)
        _, deviation = check_equivariance(model, x, perm, tolerance)
        worst = max(worst, deviation)
    return worst


def check_gradients(seed=0):
    rng = np.random.default_rng(seed)
    n = 6
    graph = _random_multigraph(n, 2, rng)
    basis = enumerate_monomials(2, 2)
    plan, _, _ = build_plan(graph, [n, n, 3], [1, 1], "degree", "max")
    model = build_model(graph, [basis] * 2, [1, 3, 2], nonlinearity="tanh",
                        readout_dims=(4, 2), plan=plan, seed=11)
    batch = [(rng.standard_normal((n, 1)), rng.standard_normal(2))
             for _ in range(2)]
    _, grads = loss_and_gradients(model, batch, "mse")
    arrays = model.parameter_arrays()
    h = 1e-5
    worst = 0.0
    for k, a in enumerate(arrays):
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = a[idx]
            a[idx] = orig + h
            model.set_parameter_arrays(arrays)
            lp, _ = loss_and_gradients(model, batch, "mse")
            a[idx] = orig - h
            model.set_parameter_arrays(arrays)
            lm, _ = loss_and_gradients(model, batch, "mse")
            a[idx] = orig
            model.set_parameter_arrays(arrays)
            fd = (lp - lm) / (2 * h)
            an = grads[k][idx]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    return worst


def check_pruning(seed=0, trials=100):
    graph = generate_multigraph(12, ["erdos_renyi:0.4", "erdos_renyi:0.4"],
                                seed=seed, near_commuting_eps=0.05)
    from .multigraph import commutator_norm

    eps = commutator_norm(graph.shifts[0], graph.shifts[1])
    bound = check_pruning_bound(list(graph.shifts), 1, 2, trials=trials,
                                depth=3, seed=seed)
    return bound - eps


def check_sampling_algebra(trials=10, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(5, 16))
        graph = _random_multigraph(n, 2, rng)
        counts = [n, max(1, n - int(rng.integers(0, n // 2 + 1))), max(1, n // 3)]
        counts[2] = min(counts[1], counts[2])
        plan, mats, _ = build_plan(graph, counts, [1, 2], "degree", "max")
        from .sampling import relabel_multigraph

        relabeled = relabel_multigraph(graph, plan)
        prev = relabeled.shifts[0]
        for layer in (1, 2):
            d = mats.d(layer)
            sandwich = d @ prev.to_dense() @ d.T
            sampled = sample_shift(plan, layer, prev)
            worst = max(worst, float(np.max(np.abs(sampled.to_dense() - sandwich))))
            prev = sampled
        for layer in (1, 2):
            alpha = plan.radii[layer - 1]
            e_cur = mats.e(layer)
            e_prev = mats.e(layer - 1)
            for g in range(relabeled.num_shifts):
                pattern = np.zeros((n, n), dtype=bool)
                power = np.eye(n, dtype=bool)
                adj = np.abs(relabeled.shifts[g].to_dense()) > 0
                for _ in range(alpha + 1):
                    pattern |= power
                    power = power @ adj
                restricted = (e_cur @ pattern @ e_prev.T) != 0
                bfs = neighborhoods(relabeled, plan, layer, g)
                for i, members in enumerate(bfs):
                    oracle = set(np.nonzero(restricted[i])[0].tolist())
                    if oracle != set(members.tolist()):
                        worst = max(worst, 1.0)
    return worst


@main.command()
@click.option("--quick/--full", default=True, show_default=True,
              help="Quick runs smaller property sweeps.")
def check(quick):
    """Run the property suites: equivariance, pruning bound, gradients, oracles."""
    scale = 1 if quick else 5
    suites = [
        ("oracle equivalence (dense filter + adjoint)",
         lambda: check_oracle_equivalence(trials=20 * scale), 1e-10),
        ("permutation equivariance",
         lambda: check_equivariance_sweep(trials=25 * scale), 1e-9),
        ("gradient finite differences", check_gradients, 1e-5),
        ("pruning bound slack (≤ tolerance over measured ε)",
         lambda: check_pruning(trials=100 * scale), 1e-6),
        ("sampling algebra (D S Dᵀ and BFS neighborhoods)",
         lambda: check_sampling_algebra(trials=10 * scale), 1e-12),
    ]
    failed = False
    for name, fn, tolerance in suites:
        value = _run(fn)
        ok = value <= tolerance
        failed |= not ok
        click.echo(f"{'PASS' if ok else 'FAIL'}  {name}: {value:.3e} "
                   f"(tolerance {tolerance:.0e})")
    if failed:
        raise _Failure("one or more property suites failed")
    click.echo("all property suites passed")


if __name__ == "__main__":
    main()
