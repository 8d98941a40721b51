"""Multigraph perceptron stacks with hand-derived gradients.

A model is L perceptron layers (filter + pointwise nonlinearity + optional
pooling step from a sampling plan) followed by fully connected readout maps.
Gradients are computed by reverse accumulation through exactly this
architecture; no general-purpose autodiff is involved.
"""

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from .filters import MultigraphFilter, adjoint_words, apply_filter, diffusion_table
from .multigraph import (
    Multigraph,
    MultigraphError,
    SparseShift,
    permute_multigraph,
    permute_signal,
)
from .sampling import (
    SamplingPlan,
    multigraph_neighborhood,
    neighborhoods,
    pool_backward,
    pool_forward,
    relabel_multigraph,
    sample_shift,
)
from .words import MonomialBasis

CHECKPOINT_VERSION = 1


def _relu(a):
    return np.maximum(a, 0.0)


def _relu_grad(a):
    # Subgradient at 0 is 0.
    return (a > 0.0).astype(float)


ACTIVATIONS = {
    "relu": (_relu, _relu_grad),
    "tanh": (np.tanh, lambda a: 1.0 - np.tanh(a) ** 2),
    "identity": (lambda a: a, lambda a: np.ones_like(a)),
}


@dataclass
class PerceptronLayer:
    """One multigraph perceptron: filter followed by a pointwise nonlinearity."""

    filter: MultigraphFilter
    nonlinearity: str = "relu"

    def __post_init__(self):
        if self.nonlinearity not in ACTIVATIONS:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")


@dataclass
class TrainConfig:
    loss: str = "mse"              # mse | cross_entropy
    learning_rate: float = 1e-2
    epochs: int = 100
    batch_size: int = 8
    seed: int = 0
    optimizer: str = "adam"        # sgd | adam

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self):
        return {
            "loss": self.loss,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "optimizer": self.optimizer,
        }


class MgnnModel:
    """Multigraph convolutional neural network.

    ``readout`` is a list of (W, b) affine maps on the flattened final layer
    output; relu between stacked maps, identity on the last. With a sampling
    plan, the model works on the plan-relabeled multigraph internally and
    permutes incoming signals accordingly.
    """

    def __init__(self, multigraph, layers, readout=(), plan=None):
        self.multigraph = multigraph
        self.layers = list(layers)
        self.readout = [(np.asarray(w, dtype=float), np.asarray(b, dtype=float))
                        for w, b in readout]
        self.plan = plan
        for a, b in zip(self.layers, self.layers[1:]):
            if a.filter.f_out != b.filter.f_in:
                raise MultigraphError("adjacent layers disagree on feature counts")
        if plan is not None:
            if plan.num_layers != len(self.layers):
                raise MultigraphError("sampling plan must cover every layer")
            if plan.node_counts[0] != multigraph.num_nodes:
                raise MultigraphError("sampling plan size does not match multigraph")
        self._prepare()

    def _prepare(self):
        """Precompute relabeled shifts per layer size and pooling neighborhoods."""
        if self.plan is None:
            base = self.multigraph
            self._layer_shifts = [base.shifts] * len(self.layers)
            self._pool_sets = [None] * len(self.layers)
            return
        relabeled = relabel_multigraph(self.multigraph, self.plan)
        self._relabeled = relabeled
        shifts = list(relabeled.shifts)
        self._layer_shifts = []
        self._pool_sets = []
        for layer_idx in range(len(self.layers)):
            self._layer_shifts.append(tuple(shifts))
            per_graph = [
                neighborhoods(relabeled, self.plan, layer_idx + 1, g)
                for g in range(relabeled.num_shifts)
            ]
            self._pool_sets.append(multigraph_neighborhood(per_graph))
            shifts = [sample_shift(self.plan, layer_idx + 1, s) for s in shifts]

    # -- parameter plumbing -------------------------------------------------

    def parameter_arrays(self):
        """All trainable arrays in canonical order (layers by word order, then readout)."""
        arrays = []
        for layer in self.layers:
            for w in layer.filter.basis.words:
                arrays.append(layer.filter.coefficients[w])
        for w, b in self.readout:
            arrays.extend((w, b))
        return arrays

    def set_parameter_arrays(self, arrays):
        arrays = list(arrays)
        k = 0
        for layer in self.layers:
            for w in layer.filter.basis.words:
                layer.filter.coefficients[w] = np.asarray(arrays[k], dtype=float)
                k += 1
        new_readout = []
        for _ in self.readout:
            new_readout.append((np.asarray(arrays[k], dtype=float),
                                np.asarray(arrays[k + 1], dtype=float)))
            k += 2
        self.readout = new_readout

    def num_parameters(self):
        return sum(a.size for a in self.parameter_arrays())

    def copy(self):
        model = MgnnModel.__new__(MgnnModel)
        model.multigraph = self.multigraph
        model.layers = [PerceptronLayer(layer.filter.copy(), layer.nonlinearity)
                        for layer in self.layers]
        model.readout = [(w.copy(), b.copy()) for w, b in self.readout]
        model.plan = self.plan
        model._layer_shifts = self._layer_shifts
        model._pool_sets = self._pool_sets
        if self.plan is not None:
            model._relabeled = self._relabeled
        return model

    # -- forward / backward -------------------------------------------------

    @property
    def f_in(self):
        return self.layers[0].filter.f_in

    def output_nodes(self):
        return self.plan.node_counts[-1] if self.plan else self.multigraph.num_nodes

    def forward(self, x):
        """Run the network on one signal; returns (output, trace).

        The trace keeps every per-layer intermediate needed for backprop.
        """
        out, trace = self._forward_batch(np.asarray(x, dtype=float)[None])
        return out[0], trace

    def forward_batch(self, xs):
        out, _ = self._forward_batch(np.stack([np.asarray(x, dtype=float) for x in xs]))
        return out

    def _forward_batch(self, x):
        if x.ndim != 3 or x.shape[2] != self.f_in:
            raise MultigraphError(
                f"input must be (B, N, {self.f_in}), got shape {x.shape}"
            )
        if x.shape[1] != self.multigraph.num_nodes:
            raise MultigraphError(
                f"input has {x.shape[1]} nodes, multigraph has {self.multigraph.num_nodes}"
            )
        trace = {"layers": [], "readout": []}
        if self.plan is not None:
            x = x[:, np.asarray(self.plan.relabel), :]
        for idx, layer in enumerate(self.layers):
            shifts = self._layer_shifts[idx]
            if x.shape[1] != shifts[0].num_nodes:
                raise MultigraphError(f"dimension mismatch entering layer {idx + 1}")
            table = diffusion_table(shifts, x, layer.filter.basis.words)
            preact = np.zeros((x.shape[0], x.shape[1], layer.filter.f_out))
            for w in layer.filter.basis.words:
                preact += table[w] @ layer.filter.coefficients[w]
            act_fn, _ = ACTIVATIONS[layer.nonlinearity]
            out = act_fn(preact)
            record = {"input": x, "table": table, "preact": preact, "shifts": shifts}
            if self._pool_sets[idx] is not None:
                pooled, cache = pool_forward(out, self._pool_sets[idx],
                                             self.plan.aggregation)
                record["pool_cache"] = cache
                record["pool_in_nodes"] = out.shape[1]
                x = pooled
            else:
                x = out
            trace["layers"].append(record)
        final = x
        trace["conv_output_shape"] = final.shape
        h = final.reshape(final.shape[0], -1)
        for k, (w, b) in enumerate(self.readout):
            trace["readout"].append(h)
            s = h @ w + b
            h = _relu(s) if k < len(self.readout) - 1 else s
            trace["readout_preact" if k == len(self.readout) - 1 else f"_s{k}"] = s
        if self.readout:
            return h, trace
        return final, trace

    def _backward_batch(self, trace, grad_out):
        """Reverse accumulation; returns gradient arrays in canonical order."""
        readout_grads = []
        if self.readout:
            h_states = trace["readout"]
            delta = np.asarray(grad_out, dtype=float)
            for k in range(len(self.readout) - 1, -1, -1):
                w, _ = self.readout[k]
                h = h_states[k]
                if k < len(self.readout) - 1:
                    delta = delta * _relu_grad(trace[f"_s{k}"])
                readout_grads.append((h.T @ delta, delta.sum(axis=0)))
                delta = delta @ w.T
            readout_grads.reverse()
            delta = delta.reshape(trace["conv_output_shape"])
        else:
            delta = np.asarray(grad_out, dtype=float)
        layer_grads = [None] * len(self.layers)
        for idx in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[idx]
            record = trace["layers"][idx]
            if "pool_cache" in record:
                delta = pool_backward(delta, record["pool_cache"], record["pool_in_nodes"])
            _, grad_fn = ACTIVATIONS[layer.nonlinearity]
            delta = delta * grad_fn(record["preact"])
            grads = {}
            for w in layer.filter.basis.words:
                grads[w] = np.einsum("bnf,bng->fg", record["table"][w], delta)
            layer_grads[idx] = grads
            if idx > 0:
                delta = self._adjoint_batch(layer, record["shifts"], delta)
        arrays = []
        for idx, layer in enumerate(self.layers):
            for w in layer.filter.basis.words:
                arrays.append(layer_grads[idx][w])
        for gw, gb in readout_grads:
            arrays.extend((gw, gb))
        return arrays

    @staticmethod
    def _adjoint_batch(layer, shifts, delta):
        transposed = [s.transpose() for s in shifts]
        table = diffusion_table(transposed, delta, adjoint_words(layer.filter.basis))
        out = np.zeros((delta.shape[0], delta.shape[1], layer.filter.f_in))
        for w in layer.filter.basis.words:
            out += table[tuple(reversed(w))] @ layer.filter.coefficients[w].T
        return out

    # -- checkpointing --------------------------------------------------------

    def save(self, path, train_config=None):
        doc = {
            "version": CHECKPOINT_VERSION,
            "multigraph": {
                "num_nodes": self.multigraph.num_nodes,
                "layers": [
                    {"name": name, "edges": [[r, c, w] for r, c, w in shift.entries()]}
                    for name, shift in zip(self.multigraph.layer_names,
                                           self.multigraph.shifts)
                ],
            },
            "layers": [
                {
                    "nonlinearity": layer.nonlinearity,
                    "basis": {
                        "num_generators": layer.filter.basis.num_generators,
                        "depth": layer.filter.basis.depth,
                        "words": [list(w) for w in layer.filter.basis.words],
                        "pruned_pairs": [list(p) for p in layer.filter.basis.pruned_pairs],
                    },
                    "f_in": layer.filter.f_in,
                    "f_out": layer.filter.f_out,
                    "coefficients": [
                        layer.filter.coefficients[w].tolist()
                        for w in layer.filter.basis.words
                    ],
                }
                for layer in self.layers
            ],
            "readout": [{"weight": w.tolist(), "bias": b.tolist()}
                        for w, b in self.readout],
            "plan": self.plan.to_dict() if self.plan else None,
            "train_config": train_config.to_dict() if train_config else None,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("version") != CHECKPOINT_VERSION:
            raise MultigraphError(
                f"unsupported checkpoint version {doc.get('version')!r}"
            )
        g = doc["multigraph"]
        graph = Multigraph(
            [SparseShift.from_entries(g["num_nodes"], layer["edges"])
             for layer in g["layers"]],
            layer_names=[layer["name"] for layer in g["layers"]],
        )
        layers = []
        for spec in doc["layers"]:
            basis = MonomialBasis(
                spec["basis"]["num_generators"],
                spec["basis"]["depth"],
                tuple(tuple(w) for w in spec["basis"]["words"]),
                tuple(tuple(p) for p in spec["basis"]["pruned_pairs"]),
            )
            coeffs = {
                w: np.asarray(block, dtype=float)
                for w, block in zip(basis.words, spec["coefficients"])
            }
            layers.append(PerceptronLayer(MultigraphFilter(basis, coeffs),
                                          spec["nonlinearity"]))
        readout = [(np.asarray(r["weight"], dtype=float),
                    np.asarray(r["bias"], dtype=float)) for r in doc["readout"]]
        plan = SamplingPlan.from_dict(doc["plan"]) if doc["plan"] else None
        return cls(graph, layers, readout=readout, plan=plan)


def build_model(multigraph, basis_per_layer, feature_sizes, nonlinearity="relu",
                readout_dims=(), plan=None, seed=0):
    """Randomly initialized MGNN.

    ``feature_sizes`` is (F_0, …, F_L); ``readout_dims`` are the output sizes
    of the fully connected maps stacked on the flattened final layer.
    """
    rng = np.random.default_rng(seed)
    layers = []
    for idx, basis in enumerate(basis_per_layer):
        f_in, f_out = feature_sizes[idx], feature_sizes[idx + 1]
        layers.append(PerceptronLayer(MultigraphFilter.random(basis, f_in, f_out, rng),
                                      nonlinearity))
    n_last = plan.node_counts[-1] if plan else multigraph.num_nodes
    dim = n_last * feature_sizes[-1]
    readout = []
    for out_dim in readout_dims:
        bound = 1.0 / np.sqrt(dim)
        readout.append((rng.uniform(-bound, bound, size=(dim, out_dim)),
                        np.zeros(out_dim)))
        dim = out_dim
    return MgnnModel(multigraph, layers, readout=readout, plan=plan)


# -- losses -------------------------------------------------------------------


class MseLoss:
    """J(y, ŷ) = ‖ŷ − y‖² (sum of squared entries)."""

    def value_and_grad(self, pred, target):
        diff = pred - np.asarray(target, dtype=float)
        return float(np.sum(diff * diff)), 2.0 * diff


class CrossEntropyLoss:
    """Softmax cross-entropy on a logits vector; target is a class index."""

    def value_and_grad(self, logits, target):
        logits = np.asarray(logits, dtype=float).ravel()
        shifted = logits - logits.max()
        exp = np.exp(shifted)
        probs = exp / exp.sum()
        target = int(target)
        loss = -float(np.log(probs[target]))
        grad = probs.copy()
        grad[target] -= 1.0
        return loss, grad


def make_loss(kind):
    if kind == "mse":
        return MseLoss()
    if kind == "cross_entropy":
        return CrossEntropyLoss()
    raise ValueError(f"unknown loss {kind!r}")


def loss_and_gradients(model, batch, loss):
    """Mean loss over the batch plus gradients for every parameter array.

    ``loss`` is a loss kind string or any object with
    ``value_and_grad(pred, target) -> (scalar, grad_wrt_pred)``.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    if isinstance(loss, str):
        loss = make_loss(loss)
    xs = np.stack([np.asarray(x, dtype=float) for x, _ in batch])
    out, trace = model._forward_batch(xs)
    total = 0.0
    grad_out = np.zeros_like(out)
    for k, (_, target) in enumerate(batch):
        value, grad = loss.value_and_grad(out[k], target)
        total += value
        grad_out[k] = np.asarray(grad, dtype=float).reshape(out[k].shape)
    scale = 1.0 / len(batch)
    total *= scale
    if not np.isfinite(total):
        raise RuntimeError("non-finite loss (training diverged)")
    grads = model._backward_batch(trace, grad_out * scale)
    return total, grads


def evaluate_loss(model, dataset, loss):
    if isinstance(loss, str):
        loss = make_loss(loss)
    total = 0.0
    for x, target in dataset:
        out, _ = model.forward(np.asarray(x, dtype=float))
        value, _ = loss.value_and_grad(out, target)
        total += value
    return total / len(dataset)


class _Sgd:
    def __init__(self, lr, arrays):
        self.lr = lr

    def step(self, arrays, grads):
        return [a - self.lr * g for a, g in zip(arrays, grads)]


class _Adam:
    def __init__(self, lr, arrays, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays, grads):
        self.t += 1
        out = []
        for k, (a, g) in enumerate(zip(arrays, grads)):
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            m_hat = self.m[k] / (1 - self.beta1 ** self.t)
            v_hat = self.v[k] / (1 - self.beta2 ** self.t)
            out.append(a - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return out


def train(model, train_set, config, val_set=None, objective=None):
    """Minibatch gradient descent on the empirical risk; fully seeded.

    Returns (best-validation snapshot, per-epoch history). ``objective``
    overrides the configured loss kind with a custom value_and_grad object.
    """
    loss = objective if objective is not None else make_loss(config.loss)
    rng = np.random.default_rng(config.seed)
    arrays = [a.copy() for a in model.parameter_arrays()]
    model.set_parameter_arrays(arrays)
    optimizer = (_Adam if config.optimizer == "adam" else _Sgd)(
        config.learning_rate, arrays
    )
    history = []
    eval_set = val_set if val_set is not None else train_set
    best_val = evaluate_loss(model, eval_set, loss)
    best_model = model.copy()
    indices = np.arange(len(train_set))
    for epoch in range(config.epochs):
        rng.shuffle(indices)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(indices), config.batch_size):
            batch = [train_set[i] for i in indices[start:start + config.batch_size]]
            try:
                value, grads = loss_and_gradients(model, batch, loss)
            except RuntimeError as exc:
                raise RuntimeError(f"epoch {epoch + 1}: {exc}") from exc
            arrays = optimizer.step(model.parameter_arrays(), grads)
            model.set_parameter_arrays(arrays)
            epoch_loss += value
            n_batches += 1
        val_loss = evaluate_loss(model, eval_set, loss)
        if not np.isfinite(val_loss):
            raise RuntimeError(f"epoch {epoch + 1}: non-finite validation loss")
        history.append({"epoch": epoch + 1,
                        "train_loss": epoch_loss / n_batches,
                        "val_loss": val_loss})
        if val_loss < best_val:
            best_val = val_loss
            best_model = model.copy()
    return best_model, history


def check_equivariance(model, x, permutation, tolerance=1e-9):
    """Verify that relabeling inputs and shifts relabels every layer output.

    Only meaningful for pure perceptron stacks: models with a sampling plan
    or readout are rejected.
    """
    if model.plan is not None or model.readout:
        raise MultigraphError(
            "equivariance check covers perceptron stacks only "
            "(no sampling plan, no readout)"
        )
    x = np.asarray(x, dtype=float)
    out, _ = model.forward(x)
    permuted_model = MgnnModel(
        permute_multigraph(permutation, model.multigraph),
        model.layers,
    )
    out_hat, _ = permuted_model.forward(permute_signal(permutation, x))
    deviation = float(np.max(np.abs(out_hat - permute_signal(permutation, out))))
    return deviation <= tolerance, deviation
