import numpy as np
import pytest
from scipy.stats import binom

from sparsegnn.graphs import batch_graphs
from sparsegnn.models import GnnModel
from sparsegnn.sparsity import apply_sparsity, count_params, make_er_mask

from conftest import make_toy_dataset


def fresh_model(variant="gine", seed=0, hidden=8, blocks=2, edge_dim=2):
    return GnnModel(variant, 2, edge_dim, 2, hidden_dim=hidden, num_blocks=blocks,
                    rng=np.random.default_rng(seed))


class TestErMask:
    def test_eps_zero_is_dense(self):
        mask = make_er_mask(5, 7, 0.0, np.random.default_rng(0))
        np.testing.assert_array_equal(mask, np.ones((5, 7)))

    def test_eps_one_is_empty(self):
        mask = make_er_mask(5, 7, 1.0, np.random.default_rng(0))
        np.testing.assert_array_equal(mask, np.zeros((5, 7)))

    def test_eps_out_of_range(self):
        with pytest.raises(ValueError):
            make_er_mask(3, 3, 1.5, np.random.default_rng(0))

    def test_half_eps_within_binomial_interval(self):
        # oracle: central 99.9% interval of Binomial(10000, 0.5)
        lo = binom.ppf(0.0005, 10000, 0.5)
        hi = binom.ppf(0.9995, 10000, 0.5)
        mask = make_er_mask(100, 100, 0.5, np.random.default_rng(42))
        active = mask.sum()
        assert lo <= active <= hi

    @pytest.mark.parametrize("eps", [0.1, 0.5, 0.9])
    def test_density_estimator_converges(self, eps):
        rng = np.random.default_rng(7)
        densities = [make_er_mask(50, 50, eps, rng).mean() for _ in range(150)]
        se = np.sqrt(eps * (1 - eps) / (2500 * len(densities)))
        assert abs(np.mean(densities) - (1 - eps)) <= 3 * se

    def test_active_counts_decrease_with_eps(self):
        rng = np.random.default_rng(1)
        means = []
        for eps in (0.1, 0.3, 0.5, 0.7, 0.9):
            means.append(np.mean([make_er_mask(30, 30, eps, rng).sum() for _ in range(100)]))
        assert all(a > b for a, b in zip(means, means[1:]))


class TestApplySparsity:
    def test_eps_zero_forward_unchanged(self, toy_dataset):
        batch = batch_graphs(toy_dataset.graphs[:4])
        plain = fresh_model(seed=3)
        masked = fresh_model(seed=3)
        apply_sparsity(masked, 0.0, np.random.default_rng(0))
        np.testing.assert_array_equal(plain.forward(batch, training=False).data,
                                      masked.forward(batch, training=False).data)

    def test_eps_one_severs_feature_dependence(self, toy_dataset):
        # with every block weight masked out, logits cannot depend on the
        # node/edge features, only on biases and graph size
        model = fresh_model(seed=5)
        apply_sparsity(model, 1.0, np.random.default_rng(0))
        target = toy_dataset.graphs[0].num_nodes
        same_size = [g for g in toy_dataset.graphs if g.num_nodes == target]
        assert len(same_size) >= 2
        a = model.forward(batch_graphs([same_size[0]]), training=False).data
        b = model.forward(batch_graphs([same_size[1]]), training=False).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    @pytest.mark.parametrize("eps", [0.3, 0.7])
    def test_forward_equals_explicit_mask_multiply(self, toy_dataset, eps):
        # definitional oracle: multiply W by B before a plain matmul
        model = fresh_model(seed=9)
        apply_sparsity(model, eps, np.random.default_rng(2))
        for name, layer in model.masked_layers():
            x = np.random.default_rng(0).normal(size=(5, layer.in_dim))
            expected = x @ (layer.W.data * layer.mask).T
            if layer.b is not None:
                expected = expected + layer.b.data
            from sparsegnn.tensor import Tensor
            np.testing.assert_allclose(layer.forward(Tensor(x)).data, expected)

    def test_masks_cover_block_layers_only_by_default(self):
        model = fresh_model()
        apply_sparsity(model, 0.5, np.random.default_rng(0))
        masked_names = {n for n, _ in model.masked_layers()}
        assert all(n.startswith("block") for n in masked_names)
        assert model.node_embed.lin1.mask is None
        assert model.head.lin1.mask is None

    def test_mask_all_extends_to_embeddings_and_head(self):
        model = fresh_model()
        apply_sparsity(model, 0.5, np.random.default_rng(0), mask_all=True)
        assert model.node_embed.lin1.mask is not None
        assert model.head.lin1.mask is not None

    def test_weights_zeroed_at_masked_positions(self):
        model = fresh_model()
        apply_sparsity(model, 0.6, np.random.default_rng(1))
        for _, layer in model.masked_layers():
            assert (layer.W.data[layer.mask == 0.0] == 0.0).all()


class TestCountParams:
    def test_dense_active_equals_total(self):
        model = fresh_model()
        apply_sparsity(model, 0.0, np.random.default_rng(0))
        report = count_params(model)
        assert report.active == report.total
        assert report.masked_layer_active == report.masked_layer_total

    @pytest.mark.parametrize("eps,frac", [(0.1, 0.9), (0.9, 0.1)])
    def test_proportionality_over_draws(self, eps, frac):
        # active weight fraction tracks 1 - eps, like the reported model sizes
        ratios = []
        for draw in range(20):
            model = fresh_model(hidden=16, blocks=3)
            apply_sparsity(model, eps, np.random.default_rng(draw))
            report = count_params(model)
            ratios.append(report.masked_layer_active / report.masked_layer_total)
        assert abs(np.mean(ratios) - frac) < 0.02

    def test_per_layer_accounting(self):
        model = fresh_model()
        apply_sparsity(model, 0.4, np.random.default_rng(3))
        report = count_params(model)
        for layer in report.layers:
            assert layer.active + layer.masked == layer.total
        total_params = sum(p.data.size for _, p in model.named_parameters())
        assert report.total == total_params

    def test_masks_unchanged_by_training(self):
        # sparse mode: optimizer steps may change weights but never the mask
        from sparsegnn.training import TrainConfig, run_training
        ds = make_toy_dataset(40)
        config = TrainConfig(model="gine", mode="sparse", epsilon=0.5, seed=1,
                             hidden_dim=8, num_blocks=2, max_epochs=3, lr=1e-3)
        seen = []

        def capture(epoch, model, ctrl, events):
            seen.append({n: l.mask.copy() for n, l in model.masked_layers()})

        run_training(config, ds, epoch_callback=capture)
        assert len(seen) == 3
        for snapshot in seen[1:]:
            for name, mask in seen[0].items():
                np.testing.assert_array_equal(mask, snapshot[name])
