import numpy as np
import pytest

from mgsp import (
    MgnnModel,
    MultigraphError,
    MultigraphFilter,
    PerceptronLayer,
    Permutation,
    TrainConfig,
    build_multigraph,
    build_plan,
    check_equivariance,
    enumerate_monomials,
    loss_and_gradients,
    train,
)
from mgsp.model import build_model, evaluate_loss


def random_multigraph(n, m, rng, density=0.4):
    lists = []
    for _ in range(m):
        edges = [(i, j, float(rng.standard_normal()))
                 for i in range(n) for j in range(n)
                 if i != j and rng.random() < density]
        if not edges:
            edges = [(0, 1 % n, 1.0)]
        lists.append(edges)
    return build_multigraph(lists, n)


def identity_filter_model(graph, nonlinearity="identity", scale=1.0):
    basis = enumerate_monomials(graph.num_shifts, 1)
    filt = MultigraphFilter.from_scalars(basis, {(): scale})
    return MgnnModel(graph, [PerceptronLayer(filt, nonlinearity)])


class TestForward:
    def test_identity_layer_passthrough(self):
        rng = np.random.default_rng(0)
        graph = random_multigraph(5, 2, rng)
        model = identity_filter_model(graph)
        x = rng.standard_normal((5, 1))
        out, _ = model.forward(x)
        np.testing.assert_array_equal(out, x)

    def test_relu_kills_negated_input(self):
        rng = np.random.default_rng(1)
        graph = random_multigraph(5, 1, rng)
        model = identity_filter_model(graph, nonlinearity="relu", scale=-1.0)
        x = np.abs(rng.standard_normal((5, 1)))
        out, _ = model.forward(x)
        np.testing.assert_array_equal(out, np.zeros((5, 1)))

    def test_linear_in_input_with_identity_activation(self):
        rng = np.random.default_rng(2)
        graph = random_multigraph(6, 2, rng)
        basis = enumerate_monomials(2, 2)
        model = MgnnModel(graph, [PerceptronLayer(
            MultigraphFilter.random(basis, 2, 3, rng), "identity")])
        x1, x2 = rng.standard_normal((6, 2)), rng.standard_normal((6, 2))
        a, b = 0.3, -1.2
        lhs, _ = model.forward(a * x1 + b * x2)
        o1, _ = model.forward(x1)
        o2, _ = model.forward(x2)
        assert np.max(np.abs(lhs - (a * o1 + b * o2))) < 1e-10

    def test_matches_straight_line_reimplementation(self):
        # Independent dense evaluation of the layer equations, written out
        # with explicit word-operator matrix products.
        rng = np.random.default_rng(3)
        n = 8
        graph = random_multigraph(n, 2, rng)
        basis = enumerate_monomials(2, 2)
        model = build_model(graph, [basis] * 2, [1, 3, 2], nonlinearity="relu",
                            readout_dims=(4,), seed=17)
        x = rng.standard_normal((n, 1))
        out, _ = model.forward(x)

        def word_matrix(word):
            op = np.eye(n)
            for g in word:
                op = op @ graph.shifts[g - 1].to_dense()
            return op

        h = x
        for layer in model.layers:
            pre = np.zeros((n, layer.filter.f_out))
            for w in basis.words:
                pre += word_matrix(w) @ h @ layer.filter.coefficients[w]
            h = np.maximum(pre, 0.0)
        flat = h.reshape(-1)
        w0, b0 = model.readout[0]
        expected = flat @ w0 + b0
        assert np.max(np.abs(out - expected)) < 1e-10

    def test_dimension_mismatch_reported(self):
        rng = np.random.default_rng(4)
        graph = random_multigraph(5, 1, rng)
        model = identity_filter_model(graph)
        with pytest.raises(MultigraphError):
            model.forward(np.zeros((4, 1)))


class TestGradients:
    def make_model(self, rng, n=6):
        graph = random_multigraph(n, 2, rng)
        basis = enumerate_monomials(2, 2)
        plan, _, _ = build_plan(graph, [n, n, 3], [1, 1], aggregation="max")
        return build_model(graph, [basis] * 2, [1, 3, 2], nonlinearity="tanh",
                           readout_dims=(4, 2), plan=plan, seed=5)

    def test_zero_learning_signal(self):
        rng = np.random.default_rng(5)
        model = self.make_model(rng)
        x = rng.standard_normal((6, 1))
        out, _ = model.forward(x)
        _, grads = loss_and_gradients(model, [(x, out)], "mse")
        for g in grads:
            np.testing.assert_array_equal(g, np.zeros_like(g))

    def test_finite_differences_every_parameter(self):
        rng = np.random.default_rng(6)
        model = self.make_model(rng)
        batch = [(rng.standard_normal((6, 1)), rng.standard_normal(2))
                 for _ in range(3)]
        _, grads = loss_and_gradients(model, batch, "mse")
        arrays = model.parameter_arrays()
        h = 1e-5
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
                assert abs(fd - an) / max(abs(fd), abs(an), 1e-6) < 1e-5

    def test_cross_entropy_finite_differences(self):
        rng = np.random.default_rng(7)
        graph = random_multigraph(5, 2, rng)
        basis = enumerate_monomials(2, 1)
        model = build_model(graph, [basis], [1, 2], nonlinearity="relu",
                            readout_dims=(3,), seed=9)
        batch = [(rng.standard_normal((5, 1)), int(rng.integers(3)))
                 for _ in range(4)]
        _, grads = loss_and_gradients(model, batch, "cross_entropy")
        arrays = model.parameter_arrays()
        h = 1e-5
        for k, a in enumerate(arrays):
            it = np.nditer(a, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = a[idx]
                a[idx] = orig + h
                model.set_parameter_arrays(arrays)
                lp, _ = loss_and_gradients(model, batch, "cross_entropy")
                a[idx] = orig - h
                model.set_parameter_arrays(arrays)
                lm, _ = loss_and_gradients(model, batch, "cross_entropy")
                a[idx] = orig
                model.set_parameter_arrays(arrays)
                fd = (lp - lm) / (2 * h)
                assert abs(fd - grads[k][idx]) / max(abs(fd), abs(grads[k][idx]),
                                                     1e-6) < 1e-5

    def test_linear_layer_closed_form(self):
        # Single identity-activation scalar layer, one sample: the coefficient
        # gradient is 2 (S_w x)ᵀ (ŷ − y).
        rng = np.random.default_rng(8)
        graph = random_multigraph(6, 2, rng)
        basis = enumerate_monomials(2, 2)
        filt = MultigraphFilter.random(basis, 1, 1, rng)
        model = MgnnModel(graph, [PerceptronLayer(filt, "identity")])
        x = rng.standard_normal((6, 1))
        y = rng.standard_normal((6, 1))
        pred, _ = model.forward(x)
        _, grads = loss_and_gradients(model, [(x, y)], "mse")
        from mgsp.filters import diffusion_table

        table = diffusion_table(graph.shifts, x[None], basis.words)
        for k, w in enumerate(basis.words):
            closed = 2.0 * (table[w][0].T @ (pred - y)).item()
            assert abs(grads[k][0, 0] - closed) < 1e-12

    def test_empty_batch_rejected(self):
        rng = np.random.default_rng(9)
        model = identity_filter_model(random_multigraph(4, 1, rng))
        with pytest.raises(ValueError):
            loss_and_gradients(model, [], "mse")


class TestTrain:
    def planted_setup(self, seed=0):
        rng = np.random.default_rng(seed)
        graph = random_multigraph(8, 2, rng)
        # Normalize shifts so diffusion stays bounded.
        planted = {(1,): 0.5, (2, 1): 0.25}
        basis = enumerate_monomials(2, 2)
        target_filter = MultigraphFilter.from_scalars(basis, planted)
        from mgsp import apply_filter

        data = []
        for _ in range(48):
            x = rng.standard_normal((8, 1))
            data.append((x, apply_filter(target_filter, graph, x)))
        model = build_model(graph, [basis], [1, 1], nonlinearity="identity",
                            seed=1)
        return graph, planted, basis, data, model

    def test_planted_coefficient_recovery(self):
        _, planted, basis, data, model = self.planted_setup()
        config = TrainConfig(loss="mse", learning_rate=0.05, epochs=300,
                             batch_size=48, seed=2, optimizer="adam")
        best, history = train(model, data, config)
        for w in basis.words:
            target = planted.get(w, 0.0)
            assert abs(best.layers[0].filter.coefficients[w][0, 0] - target) < 1e-3
        assert history[-1]["train_loss"] < 1e-4 * max(history[0]["train_loss"], 1.0)

    def test_zero_epochs_returns_initialization(self):
        _, _, _, data, model = self.planted_setup()
        before = [a.copy() for a in model.parameter_arrays()]
        config = TrainConfig(loss="mse", epochs=0, seed=0)
        best, history = train(model, data, config)
        assert history == []
        for a, b in zip(best.parameter_arrays(), before):
            np.testing.assert_array_equal(a, b)

    def test_determinism_bitwise(self):
        results = []
        for _ in range(2):
            _, _, _, data, model = self.planted_setup()
            config = TrainConfig(loss="mse", learning_rate=0.05, epochs=20,
                                 batch_size=16, seed=7, optimizer="adam")
            best, history = train(model, data, config)
            results.append((history, [a.copy() for a in best.parameter_arrays()]))
        assert results[0][0] == results[1][0]
        for a, b in zip(results[0][1], results[1][1]):
            np.testing.assert_array_equal(a, b)

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_divergence_reports_epoch(self):
        _, _, _, data, model = self.planted_setup()
        config = TrainConfig(loss="mse", learning_rate=1e150, epochs=5,
                             batch_size=48, seed=0, optimizer="sgd")
        with pytest.raises(RuntimeError, match="epoch"):
            train(model, data, config)

    def test_best_validation_snapshot(self):
        _, _, _, data, model = self.planted_setup()
        config = TrainConfig(loss="mse", learning_rate=0.05, epochs=30,
                             batch_size=16, seed=3, optimizer="adam")
        best, history = train(model, data[:32], config, val_set=data[32:])
        best_val = min(h["val_loss"] for h in history)
        assert evaluate_loss(best, data[32:], "mse") <= best_val + 1e-12

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(optimizer="lbfgs")


class TestCheckpoint:
    def test_roundtrip_is_bit_identical(self, tmp_path):
        rng = np.random.default_rng(10)
        graph = random_multigraph(6, 2, rng)
        basis = enumerate_monomials(2, 2)
        plan, _, _ = build_plan(graph, [6, 6, 3], [1, 1], aggregation="median")
        model = build_model(graph, [basis] * 2, [1, 3, 2], nonlinearity="tanh",
                            readout_dims=(4,), plan=plan, seed=21)
        path = tmp_path / "model.json"
        model.save(path, train_config=TrainConfig())
        loaded = MgnnModel.load(path)
        x = rng.standard_normal((6, 1))
        out1, _ = model.forward(x)
        out2, _ = loaded.forward(x)
        np.testing.assert_array_equal(out1, out2)
        # Saving the loaded model reproduces the original file exactly.
        path2 = tmp_path / "model2.json"
        loaded.save(path2, train_config=TrainConfig())
        assert path.read_bytes() == path2.read_bytes()

    def test_unknown_version_rejected(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text('{"version": 42}')
        with pytest.raises(MultigraphError):
            MgnnModel.load(path)


class TestEquivariance:
    def test_identity_permutation_zero_deviation(self):
        rng = np.random.default_rng(11)
        graph = random_multigraph(6, 2, rng)
        basis = enumerate_monomials(2, 2)
        model = build_model(graph, [basis], [1, 3], nonlinearity="relu", seed=0)
        x = rng.standard_normal((6, 1))
        ok, deviation = check_equivariance(model, x, Permutation.identity(6))
        assert ok and deviation == 0.0

    def test_random_three_layer_model(self):
        rng = np.random.default_rng(12)
        graph = random_multigraph(10, 3, rng)
        basis = enumerate_monomials(3, 2)
        model = build_model(graph, [basis] * 3, [1, 3, 3, 2],
                            nonlinearity="relu", seed=1)
        x = rng.standard_normal((10, 1))
        perm = Permutation.random(10, rng)
        ok, deviation = check_equivariance(model, x, perm, tolerance=1e-10)
        assert ok, deviation

    def test_rejects_readout_and_plan(self):
        rng = np.random.default_rng(13)
        graph = random_multigraph(6, 2, rng)
        basis = enumerate_monomials(2, 1)
        with_readout = build_model(graph, [basis], [1, 2], readout_dims=(3,))
        x = rng.standard_normal((6, 1))
        with pytest.raises(MultigraphError):
            check_equivariance(with_readout, x, Permutation.identity(6))
        plan, _, _ = build_plan(graph, [6, 3], [1])
        with_plan = build_model(graph, [basis], [1, 2], plan=plan)
        with pytest.raises(MultigraphError):
            check_equivariance(with_plan, x, Permutation.identity(6))
