import unittest

import numpy as np
import pytest

from mesh_sar.config import default_config
from mesh_sar.eval import positive_mode_fraction, sign_agreement, w2_distance
from mesh_sar.exceptions import MissingPrerequisiteError, NumericalError, ValidationError
from mesh_sar.hierarchy import ScaleHierarchy, build_hierarchy
from mesh_sar.meshgraph import (
    Dataset,
    System,
    build_mesh_graph,
    gen_bimodal,
    gen_quasiperiodic,
    grid_mesh,
    normalize,
)
from mesh_sar.meshgraph.generators import envelope
from mesh_sar.numcore import ParamGroup, Tensor, functional as F, training_arrays
from mesh_sar.numcore.gradcheck import gradient_errors
from mesh_sar.sar import (
    DenoisingSchedule,
    SarModel,
    ar_step,
    draw_training_items,
    encode_conditions,
    euler_integrate,
    fm_loss,
    generate,
    generate_many,
    geometry_inputs,
    probability_path,
    sample_scale,
    sampler_velocity,
    train_sar,
    velocity_loss,
)
from mesh_sar.utils import seed_stream

SMALL_MODEL = {
    "model.f_model": 8,
    "model.f_emb": 8,
    "model.num_heads": 2,
    "model.num_slices": 4,
    "model.l_cond": 1,
    "model.l_ar": 1,
    "model.l_sampler": 1,
    "model.latent_mode": False,
}


def small_config(**overrides):
    values = dict(SMALL_MODEL)
    values.update(overrides)
    return default_config(3, **values)


def randomize(module, rng, scale=0.3):
    for p in module.parameters().values():
        p.data[...] = scale * rng.standard_normal(p.shape)


def permuted(graph, hierarchy, perm):
    """Graph and hierarchy with node i of the result being node perm[i] of the input."""
    relabel = np.argsort(perm)
    graph_p = build_mesh_graph(graph.positions[perm], relabel[graph.undirected_edges()], graph.node_conditions[perm])
    scales = hierarchy.scales[perm]
    partitions = [np.flatnonzero(scales == k) for k in range(1, hierarchy.num_scales + 1)]
    return graph_p, ScaleHierarchy(scales, partitions, [], [])


class TestDenoisingSchedule(unittest.TestCase):
    def test_cost(self):
        sizes = [8, 24, 72]
        self.assertEqual(DenoisingSchedule((10, 6, 1)).cost(sizes), 296)
        self.assertEqual(DenoisingSchedule((10, 10, 10)).cost(sizes), 1040)
        self.assertEqual(DenoisingSchedule((10, 6, 1)).breakdown(sizes), [80, 144, 72])

    def test_invalid(self):
        with self.assertRaises(ValidationError):
            DenoisingSchedule((3, 0, 1))
        with self.assertRaises(ValidationError):
            DenoisingSchedule(())
        with self.assertRaises(ValidationError):
            DenoisingSchedule((3, 3)).cost([1, 2, 3])


class TestSarModel(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)
        self.config = small_config()
        self.graph = grid_mesh(4, 3, [0.5])
        self.hierarchy = build_hierarchy(self.graph, 3)
        self.model = SarModel(self.config.model, 1, 2, 1, seed=3)

    def test_structure(self):
        self.assertEqual(self.model.ar.scale_embeddings.shape, (3, 8))
        self.assertEqual(self.model.ar.mask_embedding.shape, (8,))
        self.assertEqual(len(self.model.encoder.blocks), 1)
        self.assertEqual(self.model.sampler.head.weight.shape, (8, 1))

    def test_scale_embeddings_have_model_width(self):
        config = small_config(**{"model.f_emb": 4})
        model = SarModel(config.model, 1, 2, 1, seed=3)
        self.assertEqual(model.ar.scale_embeddings.shape, (3, 8))
        self.assertEqual(model.sampler.embedding_width, 4)
        values = self.rng.standard_normal((2, self.graph.num_nodes, 1))
        for k in (1, 2, 3):
            self.assertTrue(np.isfinite(fm_loss(model, self.graph, self.hierarchy, values, k, 0).item()))
        state, _ = generate(model, self.graph, self.hierarchy, DenoisingSchedule((2, 1, 1)), seed=0)
        self.assertTrue(np.all(np.isfinite(state.values)))

    def test_no_condition_encoder(self):
        config = small_config(**{"model.cond_encoder": False})
        model = SarModel(config.model, 1, 2, 1, seed=3)
        self.assertEqual(model.encoder.blocks, [])
        y = encode_conditions(model, self.graph, self.hierarchy)
        self.assertEqual(y.shape, (1, self.graph.num_nodes, 8))

    def test_nodewise_sampler_has_no_attention(self):
        config = small_config(**{"model.nodewise_sampler": True})
        model = SarModel(config.model, 1, 2, 1, seed=3)
        self.assertIsNone(model.sampler.blocks[0].attention)
        self.assertIsNotNone(model.ar.blocks[0].attention)

    def test_same_seed_same_parameters(self):
        other = SarModel(self.config.model, 1, 2, 1, seed=3)
        for name, p in self.model.parameters().items():
            np.testing.assert_array_equal(p.data, other.parameters()[name].data)

    def test_condition_encoding_is_deterministic(self):
        a = encode_conditions(self.model, self.graph, self.hierarchy).data
        b = encode_conditions(self.model, self.graph, self.hierarchy).data
        np.testing.assert_array_equal(a, b)

    def test_condition_encoding_equivariance(self):
        y = encode_conditions(self.model, self.graph, self.hierarchy).data
        perm = self.rng.permutation(self.graph.num_nodes)
        graph_p, hierarchy_p = permuted(self.graph, self.hierarchy, perm)
        y_p = encode_conditions(self.model, graph_p, hierarchy_p).data
        np.testing.assert_allclose(y_p, y[:, perm], atol=1e-10)

    def test_hierarchy_mismatch(self):
        with self.assertRaises(ValidationError):
            encode_conditions(self.model, self.graph, build_hierarchy(self.graph, 2))


class TestArStep(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(1)
        self.graph = grid_mesh(4, 4, [1.0])
        self.hierarchy = build_hierarchy(self.graph, 3)
        self.model = SarModel(small_config().model, 1, 2, 1, seed=3)
        randomize(self.model, self.rng)
        self.y = encode_conditions(self.model, self.graph, self.hierarchy)

    def coarser(self, k, batch=1):
        return self.rng.standard_normal((batch, len(self.hierarchy.prefix(k - 1)), 1))

    def test_rows_per_scale(self):
        for k, size in enumerate(self.hierarchy.sizes(), start=1):
            z = ar_step(self.model, k, self.y, self.hierarchy, self.coarser(k, 2) if k > 1 else None)
            self.assertEqual(z.shape, (1 if k == 1 else 2, size, 8))

    def test_first_scale_ignores_values(self):
        a = ar_step(self.model, 1, self.y, self.hierarchy)
        b = ar_step(self.model, 1, self.y, self.hierarchy, self.coarser(2))
        np.testing.assert_array_equal(a.data, b.data)

    def test_invalid_inputs(self):
        with self.assertRaises(ValidationError):
            ar_step(self.model, 0, self.y, self.hierarchy)
        with self.assertRaises(ValidationError):
            ar_step(self.model, 4, self.y, self.hierarchy, self.coarser(4))
        with self.assertRaises(ValidationError):
            ar_step(self.model, 2, self.y, self.hierarchy)
        with self.assertRaises(ValidationError):
            ar_step(self.model, 3, self.y, self.hierarchy, self.coarser(2))

    def test_sensitive_to_coarser_values(self):
        values = self.coarser(3)
        base = ar_step(self.model, 3, self.y, self.hierarchy, values).data
        changed = values.copy()
        changed[0, 0, 0] += 1.0
        out = ar_step(self.model, 3, self.y, self.hierarchy, changed).data
        self.assertGreater(np.abs(out - base).max(), 0.0)


class TestSampler(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(2)
        self.graph = grid_mesh(3, 3, [1.0])
        self.hierarchy = build_hierarchy(self.graph, 2)
        config = small_config(**{"model.num_scales": 2, "sampling.steps_per_scale": "2,1"})
        self.model = SarModel(config.model, 1, 2, 1, seed=3)
        self.y = encode_conditions(self.model, self.graph, self.hierarchy)
        self.nodes = len(self.hierarchy.partitions[1])

    def test_blocks_are_identity_at_init(self):
        s = Tensor(self.rng.standard_normal((2, self.nodes, 1)))
        z = ar_step(self.model, 2, self.y, self.hierarchy, self.rng.standard_normal((2, len(self.hierarchy.partitions[0]), 1)))
        y_k = F.row_select(self.y, self.hierarchy.partitions[1])
        h, embedding = self.model.sampler.lifted_inputs(
            s, np.array([0.2, 0.7]), geometry_inputs(self.graph, self.hierarchy, 2), y_k, z
        )
        for block in self.model.sampler.blocks + self.model.ar.blocks:
            np.testing.assert_allclose(block(h, embedding).data, h.data, atol=1e-12)

    def test_single_step_formula_at_init(self):
        z = ar_step(self.model, 1, self.y, self.hierarchy)
        nodes = len(self.hierarchy.partitions[0])
        out = sample_scale(self.model, self.graph, self.hierarchy, 1, self.y, None, 1, [np.random.default_rng(5)])

        eps = np.random.default_rng(5).standard_normal((1, nodes, 1))
        y_k = F.row_select(self.y, self.hierarchy.partitions[0])
        h, _ = self.model.sampler.lifted_inputs(
            Tensor(eps), np.zeros(1), geometry_inputs(self.graph, self.hierarchy, 1), y_k, z
        )
        u = self.model.sampler.head(self.model.sampler.norm(h)).data
        np.testing.assert_allclose(out, eps + u, atol=1e-12)

    def test_velocity_is_deterministic(self):
        randomize(self.model, self.rng)
        s = self.rng.standard_normal((1, self.nodes, 1))
        z = Tensor(self.rng.standard_normal((1, self.nodes, 8)))
        a = sampler_velocity(self.model, Tensor(s), 0.3, self.graph, self.hierarchy, 2, self.y, z)
        b = sampler_velocity(self.model, Tensor(s), 0.3, self.graph, self.hierarchy, 2, self.y, z)
        np.testing.assert_array_equal(a.data, b.data)
        self.assertEqual(a.shape, (1, self.nodes, 1))

    def test_velocity_gradient(self):
        randomize(self.model, self.rng)
        s = Tensor(self.rng.standard_normal((1, self.nodes, 1)), requires_grad=True)
        z = Tensor(self.rng.standard_normal((1, self.nodes, 8)))
        y = Tensor(self.y.data)
        weights = self.rng.standard_normal((1, self.nodes, 1))

        def loss():
            u = sampler_velocity(self.model, s, 0.4, self.graph, self.hierarchy, 2, y, z)
            return F.sum(F.mul(u, weights))

        for error in gradient_errors(loss, [s, self.model.sampler.blocks[0].attention.query.weight]):
            self.assertLess(error, 1e-5)

    def test_equivariance_over_scale_nodes(self):
        randomize(self.model, self.rng)
        s = self.rng.standard_normal((1, self.nodes, 1))
        z = self.rng.standard_normal((1, self.nodes, 8))
        y_k = F.row_select(self.y, self.hierarchy.partitions[1]).data
        geometry = geometry_inputs(self.graph, self.hierarchy, 2)
        r = np.array([0.6])
        out = self.model.sampler(Tensor(s), r, geometry, Tensor(y_k), Tensor(z)).data

        perm = self.rng.permutation(self.nodes)
        out_p = self.model.sampler(Tensor(s[:, perm]), r, geometry[perm], Tensor(y_k[:, perm]), Tensor(z[:, perm])).data
        np.testing.assert_allclose(out_p, out[:, perm], atol=1e-10)

    def test_time_outside_unit_interval(self):
        s = Tensor(np.zeros((1, self.nodes, 1)))
        z = Tensor(np.zeros((1, self.nodes, 8)))
        with self.assertRaises(ValidationError):
            sampler_velocity(self.model, s, 1.5, self.graph, self.hierarchy, 2, self.y, z)


class TestFlowMatchingLoss(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(3)
        self.graph = grid_mesh(3, 4, [1.0])
        self.hierarchy = build_hierarchy(self.graph, 3)
        self.model = SarModel(small_config().model, 1, 2, 1, seed=3)
        randomize(self.model, self.rng)
        self.values = self.rng.standard_normal((2, self.graph.num_nodes, 1))

    def test_probability_path_midpoint(self):
        s1, eps = np.array([[[2.0]]]), np.array([[[-1.0]]])
        s_r, w = probability_path(s1, eps, np.array([0.5]))
        self.assertEqual(s_r.item(), 0.5)
        self.assertEqual(w.item(), 3.0)

    def test_exact_velocity_has_zero_loss(self):
        w = self.rng.standard_normal((4, 5, 1))
        self.assertEqual(velocity_loss(Tensor(w), w).item(), 0.0)

    def test_finer_scales_are_not_read(self):
        for k in (1, 2):
            changed = self.values.copy()
            finer = np.concatenate(self.hierarchy.partitions[k:])
            changed[:, finer] += 10.0
            a = fm_loss(self.model, self.graph, self.hierarchy, self.values, k, 7).item()
            b = fm_loss(self.model, self.graph, self.hierarchy, changed, k, 7).item()
            self.assertEqual(a, b)

    def test_coarser_scales_are_read(self):
        changed = self.values.copy()
        changed[:, self.hierarchy.partitions[0]] += 1.0
        a = fm_loss(self.model, self.graph, self.hierarchy, self.values, 3, 7).item()
        b = fm_loss(self.model, self.graph, self.hierarchy, changed, 3, 7).item()
        self.assertNotEqual(a, b)

    def test_same_seed_same_loss(self):
        a = fm_loss(self.model, self.graph, self.hierarchy, self.values, 2, 11).item()
        b = fm_loss(self.model, self.graph, self.hierarchy, self.values, 2, 11).item()
        self.assertEqual(a, b)
        self.assertTrue(np.isfinite(a))

    def test_parameter_gradients(self):
        params = self.model.parameters()
        inputs = [
            params["encoder.lift.weight"],
            params["ar.scale_embeddings"],
            params["ar.mask_embedding"],
            params["sampler.head.weight"],
            params["sampler.blocks.0.mlp_modulation.mlp.fc2.weight"],
        ]
        errors = gradient_errors(lambda: fm_loss(self.model, self.graph, self.hierarchy, self.values, 2, 5), inputs)
        for error in errors:
            self.assertLess(error, 1e-5)


class TestSampling(unittest.TestCase):
    def setUp(self):
        self.graph = grid_mesh(4, 3, [1.0])
        self.hierarchy = build_hierarchy(self.graph, 3)
        self.model = SarModel(small_config().model, 1, 2, 1, seed=3)
        randomize(self.model, np.random.default_rng(4), 0.2)
        self.schedule = DenoisingSchedule((3, 2, 1))

    def test_euler_point_mass_is_exact(self):
        target = np.array([[1.5], [-0.25]])

        def velocity(s, r):
            return (target - s) / (1.0 - r)

        for n_steps in (1, 3, 10):
            out = euler_integrate(velocity, np.array([[0.3], [2.0]]), n_steps)
            np.testing.assert_allclose(out, target, atol=1e-12)

    def test_euler_needs_a_step(self):
        with self.assertRaises(ValidationError):
            euler_integrate(lambda s, r: s, np.zeros(2), 0)

    def test_same_seed_same_sample(self):
        a, cost = generate(self.model, self.graph, self.hierarchy, self.schedule, seed=9)
        b, _ = generate(self.model, self.graph, self.hierarchy, self.schedule, seed=9)
        c, _ = generate(self.model, self.graph, self.hierarchy, self.schedule, seed=10)
        np.testing.assert_array_equal(a.values, b.values)
        self.assertFalse(np.array_equal(a.values, c.values))
        self.assertEqual(a.values.shape, (self.graph.num_nodes, 1))
        self.assertEqual(cost, self.schedule.cost(self.hierarchy.sizes()))

    def test_cached_conditions(self):
        y = encode_conditions(self.model, self.graph, self.hierarchy)
        cached, _ = generate(self.model, self.graph, self.hierarchy, self.schedule, seed=4, y_cache=y)
        fresh, _ = generate(self.model, self.graph, self.hierarchy, self.schedule, seed=4)
        np.testing.assert_array_equal(cached.values, fresh.values)

    def test_generate_many(self):
        seeds = list(range(5))
        serial, cost = generate_many(self.model, self.graph, self.hierarchy, self.schedule, seeds, batch_size=2)
        threaded, _ = generate_many(
            self.model, self.graph, self.hierarchy, self.schedule, seeds, threads=3, batch_size=2
        )
        self.assertEqual(serial.shape, (5, self.graph.num_nodes, 1))
        self.assertEqual(cost, 5 * self.schedule.cost(self.hierarchy.sizes()))
        np.testing.assert_allclose(threaded, serial, rtol=0, atol=1e-12)
        single, _ = generate(self.model, self.graph, self.hierarchy, self.schedule, seed=3)
        np.testing.assert_allclose(serial[3], single.values, rtol=0, atol=1e-10)

    def test_schedule_mismatch(self):
        with self.assertRaises(ValidationError):
            generate(self.model, self.graph, self.hierarchy, DenoisingSchedule((3, 3)), seed=0)

    def test_latent_model_needs_vae(self):
        model = SarModel(small_config(**{"model.latent_mode": True}).model, 1, 2, 1, seed=3)
        with self.assertRaises(MissingPrerequisiteError):
            generate(model, self.graph, self.hierarchy, self.schedule, seed=0)

    def test_single_scale_baseline(self):
        config = small_config(**{"model.num_scales": 1, "sampling.steps_per_scale": "4"})
        model = SarModel(config.model, 1, 2, 1, seed=3)
        hierarchy = build_hierarchy(self.graph, 1)
        state, cost = generate(model, self.graph, hierarchy, DenoisingSchedule((4,)), seed=0)
        self.assertEqual(state.values.shape, (self.graph.num_nodes, 1))
        self.assertEqual(cost, 4 * self.graph.num_nodes)


class TestFirstScaleBatches(unittest.TestCase):
    """Scale 1 has no coarser values, so its batch size comes from the caller."""

    def setUp(self):
        self.rng = np.random.default_rng(6)
        self.graph = grid_mesh(4, 3, [1.0])
        self.hierarchy = build_hierarchy(self.graph, 3)
        self.model = SarModel(small_config().model, 1, 2, 1, seed=3)
        randomize(self.model, self.rng, 0.2)
        self.y = encode_conditions(self.model, self.graph, self.hierarchy)

    def test_ar_step_repeats_rows(self):
        single = ar_step(self.model, 1, self.y, self.hierarchy).data
        z = ar_step(self.model, 1, self.y, self.hierarchy, batch=3).data
        self.assertEqual(z.shape, (3, len(self.hierarchy.partitions[0]), 8))
        for row in z:
            np.testing.assert_array_equal(row, single[0])

    def test_loss_with_several_snapshots(self):
        values = self.rng.standard_normal((3, self.graph.num_nodes, 1))
        for r_draws in (1, 2):
            loss = fm_loss(self.model, self.graph, self.hierarchy, values, 1, 7, r_draws=r_draws).item()
            self.assertTrue(np.isfinite(loss))

    def test_loss_gradient_with_several_snapshots(self):
        values = self.rng.standard_normal((3, self.graph.num_nodes, 1))
        inputs = [self.model.parameters()["ar.scale_embeddings"], self.model.parameters()["ar.head.weight"]]
        errors = gradient_errors(lambda: fm_loss(self.model, self.graph, self.hierarchy, values, 1, 5), inputs)
        for error in errors:
            self.assertLess(error, 1e-5)

    def test_first_scale_sample_does_not_depend_on_batch(self):
        y = encode_conditions(self.model, self.graph, self.hierarchy)
        rngs = [seed_stream(seed, "sample") for seed in range(3)]
        batched = sample_scale(self.model, self.graph, self.hierarchy, 1, y, None, 2, rngs)
        for b, seed in enumerate(range(3)):
            alone = sample_scale(self.model, self.graph, self.hierarchy, 1, y, None, 2, [seed_stream(seed, "sample")])
            np.testing.assert_allclose(batched[b], alone[0], rtol=0, atol=1e-10)

    def test_generation_does_not_depend_on_batch_size(self):
        schedule = DenoisingSchedule((3, 2, 1))
        seeds = range(5)
        one, _ = generate_many(self.model, self.graph, self.hierarchy, schedule, seeds, batch_size=1)
        for batch_size in (2, 5):
            many, cost = generate_many(self.model, self.graph, self.hierarchy, schedule, seeds, batch_size=batch_size)
            self.assertEqual(many.shape, (5, self.graph.num_nodes, 1))
            self.assertEqual(cost, 5 * schedule.cost(self.hierarchy.sizes()))
            np.testing.assert_allclose(many, one, rtol=0, atol=1e-10)

    def test_mismatched_conditioning_batch(self):
        nodes = len(self.hierarchy.partitions[0])
        s = Tensor(np.zeros((3, nodes, 1)))
        z = Tensor(np.zeros((2, nodes, 8)))
        with self.assertRaises(ValidationError):
            sampler_velocity(self.model, s, 0.5, self.graph, self.hierarchy, 1, self.y, z)


class TestTraining(unittest.TestCase):
    def setUp(self):
        self.dataset = normalize(gen_quasiperiodic(3, 3, 1.0, 6, seed=0))
        self.hierarchies = [build_hierarchy(s.graph, 3) for s in self.dataset.systems]

    def config(self, **overrides):
        values = {"sar.batch_size": 3, "sar.steps_per_epoch": 2, "sar.max_epochs": 2}
        values.update(overrides)
        return small_config(**values)

    def test_uniform_scale_draws(self):
        items = draw_training_items(seed_stream(0, "test"), [5, 7], 3, 10_000)
        self.assertTrue(np.all((items[:, 0] == 0) | (items[:, 0] == 1)))
        self.assertTrue(np.all(items[items[:, 0] == 0, 1] < 5))
        self.assertTrue(np.all(items[items[:, 0] == 1, 1] < 7))
        sigma = np.sqrt((1 / 3) * (2 / 3) / 10_000)
        for k in (1, 2, 3):
            self.assertLess(abs(np.mean(items[:, 2] == k) - 1 / 3), 3 * sigma)

    def test_short_run_and_resume(self):
        config = self.config()
        model = SarModel(config.model, 1, 2, 1, config.seed)
        result = train_sar(model, self.dataset, self.hierarchies, config)
        history = result["history"]
        self.assertEqual(list(history.columns), ["epoch", "step", "loss", "lr"])
        self.assertEqual(history["lr"].iloc[0], 1e-3)
        self.assertEqual(history["step"].tolist(), [2, 4])
        self.assertTrue(np.all(np.isfinite(history["loss"])))

        resume = {
            "arrays": training_arrays(result["model"], result["group"]),
            "metadata": {"adam_step": result["group"].step_count, "history": history.to_dict("records")},
        }
        config = self.config(**{"sar.max_epochs": 3})
        restored = SarModel.from_metadata(config.model, model.metadata(), config.seed)
        resumed = train_sar(restored, self.dataset, self.hierarchies, config, resume=resume)
        self.assertEqual(resumed["history"]["epoch"].tolist(), [1, 2, 3])
        self.assertEqual(resumed["group"].step_count, 6)

    def test_rejects_wrong_space(self):
        config = self.config(**{"model.latent_mode": True})
        model = SarModel(config.model, 1, 2, 1, config.seed)
        with self.assertRaises(ValidationError):
            train_sar(model, self.dataset, self.hierarchies, config)

    def test_divergence_aborts(self):
        config = self.config()
        model = SarModel(config.model, 1, 2, 1, config.seed)
        arrays = training_arrays(model, ParamGroup(model.parameters()))
        arrays["param/sampler.head.bias"] = np.full(1, np.nan)
        resume = {"arrays": arrays, "metadata": {"adam_step": 0, "history": []}}
        with self.assertRaises(NumericalError):
            train_sar(model, self.dataset, self.hierarchies, config, resume=resume)


def train_and_sample(dataset, config, num_samples=200):
    from mesh_sar.vae import encode_dataset, train_vae

    graph = dataset.systems[0].graph
    hierarchies = [build_hierarchy(s.graph, config.model.num_scales) for s in dataset.systems]
    vae = None
    train_set = dataset
    if config.model.latent_mode:
        vae = train_vae(dataset, config)["model"]
        train_set = encode_dataset(vae, dataset)
    model = SarModel(config.model, train_set.num_channels, graph.dim, graph.node_conditions.shape[1], config.seed)
    train_sar(model, train_set, hierarchies, config)
    schedule = DenoisingSchedule(config.sampling.steps_per_scale)
    samples, _ = generate_many(model, graph, hierarchies[0], schedule, range(num_samples), vae=vae)
    return samples


@pytest.mark.slow
class TestPointMass(unittest.TestCase):
    def test_learned_velocity(self):
        graph = build_mesh_graph([[0.0, 0.0]], [])
        dataset = Dataset([System(graph, np.full((16, 1, 1), 2.0))], normalized=True)
        config = small_config(
            **{
                "model.f_model": 16,
                "model.f_emb": 16,
                "model.num_scales": 1,
                "sampling.steps_per_scale": "8",
                "sar.batch_size": 16,
                "sar.steps_per_epoch": 50,
                "sar.max_epochs": 60,
            }
        )
        model = SarModel(config.model, 1, 2, 0, config.seed)
        hierarchy = build_hierarchy(graph, 1)
        train_sar(model, dataset, [hierarchy], config)

        # standardized target is 0, so the optimal velocity at r = 0.5 is -2 s
        y = encode_conditions(model, graph, hierarchy)
        z = ar_step(model, 1, y, hierarchy)
        for s in (-0.4, 0.3):
            u = sampler_velocity(model, Tensor([[[s]]]), 0.5, graph, hierarchy, 1, y, z).item()
            self.assertAlmostEqual(u, -2 * s, delta=0.1 * abs(2 * s))


@pytest.mark.slow
class TestLossDecreases(unittest.TestCase):
    def test_bimodal_loss_slope(self):
        dataset = normalize(gen_bimodal(4, 4, 1.0, 0.05, 64, seed=0))
        config = small_config(
            **{"model.f_model": 16, "model.f_emb": 16, "sar.steps_per_epoch": 20, "sar.max_epochs": 10}
        )
        model = SarModel(config.model, 1, 2, 1, config.seed)
        history = train_sar(model, dataset, [build_hierarchy(dataset.systems[0].graph, 3)], config)["history"]
        self.assertLess(history["loss"].iloc[-1], history["loss"].iloc[0])


ACCEPTANCE_MODEL = {
    "model.f_model": 32,
    "model.f_emb": 32,
    "model.f_vae": 64,
    "model.num_heads": 4,
    "model.num_slices": 8,
    "vae.batch_size": 16,
    "vae.patience_epochs": 5,
    "vae.max_epochs": 200,
    "sar.batch_size": 16,
    "sar.steps_per_epoch": 50,
    "sar.patience_epochs": 5,
    "sar.max_epochs": 200,
}


def quasiperiodic_acceptance(test, **overrides):
    data = gen_quasiperiodic(8, 8, 1.0, 912, seed=0)
    dataset = normalize(data)
    std = float(dataset.channel_stats.std[0])
    train = Dataset([System(dataset.systems[0].graph, dataset.systems[0].snapshots[:512])], dataset.channel_stats, True)
    held = dataset.systems[0].snapshots[512:712]
    other = dataset.systems[0].snapshots[712:912]

    values = dict(ACCEPTANCE_MODEL)
    values.update(overrides)
    config = default_config(0, **values)
    samples = train_and_sample(train, config)

    graph = dataset.systems[0].graph
    expected_std = envelope(graph.positions) / np.sqrt(2.0) / std
    top = np.argsort(expected_std)[-20:]
    np.testing.assert_array_less(np.abs(samples[:, top, 0].mean(axis=0)), 0.05)
    ratio = samples[:, top, 0].std(axis=0, ddof=1) / expected_std[top]
    np.testing.assert_array_less(np.abs(ratio - 1.0), 0.1)

    generated_w2 = w2_distance(samples, held)
    baseline_w2 = w2_distance(other, held)
    test.assertLessEqual(generated_w2, 2.0 * baseline_w2)


@pytest.mark.slow
class TestDistributionRecovery(unittest.TestCase):
    def test_latent_sar(self):
        quasiperiodic_acceptance(self)

    def test_single_scale_baseline(self):
        quasiperiodic_acceptance(self, **{"model.num_scales": 1, "sampling.steps_per_scale": "20"})


@pytest.mark.slow
class TestJointCoherence(unittest.TestCase):
    def setUp(self):
        self.dataset = normalize(gen_bimodal(8, 8, 1.0, 0.05, 512, seed=0))
        self.strong = np.abs(self.dataset.systems[0].snapshots[0, :, 0]) > 0.5

    def test_sar_keeps_modes_coherent(self):
        samples = train_and_sample(self.dataset, default_config(0, **ACCEPTANCE_MODEL))
        self.assertGreaterEqual(sign_agreement(samples, self.strong), 0.95)
        self.assertTrue(0.35 <= positive_mode_fraction(samples) <= 0.65)

    def test_nodewise_sampler_loses_coherence(self):
        config = default_config(0, **ACCEPTANCE_MODEL, **{"model.nodewise_sampler": True})
        samples = train_and_sample(self.dataset, config)
        self.assertLess(sign_agreement(samples, self.strong), 0.8)


if __name__ == "__main__":
    unittest.main()
