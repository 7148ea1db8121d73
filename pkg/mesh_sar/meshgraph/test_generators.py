import unittest

import numpy as np

from mesh_sar.eval import positive_mode_fraction, sign_agreement
from mesh_sar.exceptions import ValidationError
from mesh_sar.meshgraph.generators import envelope, gen_bimodal, gen_quasiperiodic, grid_mesh


def quasiperiodic_std(graph, amplitude_a):
    return amplitude_a * envelope(graph.positions) / np.sqrt(2.0)


class TestGridMesh(unittest.TestCase):
    def test_counts(self):
        g = grid_mesh(4, 3)
        self.assertEqual(g.num_nodes, 12)
        # 3*3 horizontal + 4*2 vertical + 3*2 diagonal
        self.assertEqual(g.num_edges, 2 * (9 + 8 + 6))

    def test_degenerate(self):
        with self.assertRaises(ValidationError):
            grid_mesh(1, 5)

    def test_envelope_peaks_at_center(self):
        g = grid_mesh(3, 3)
        self.assertAlmostEqual(envelope(g.positions)[4], 1.0)


class TestQuasiperiodic(unittest.TestCase):
    def test_zero_amplitude(self):
        ds = gen_quasiperiodic(3, 3, 0.0, 5, seed=0)
        self.assertTrue(np.all(ds.systems[0].snapshots == 0.0))

    def test_center_std(self):
        g = grid_mesh(3, 3)
        self.assertAlmostEqual(quasiperiodic_std(g, 2.0)[4], 2.0 / np.sqrt(2.0))

    def test_monte_carlo_statistics(self):
        ds = gen_quasiperiodic(8, 8, 1.0, 10_000, seed=11)
        system = ds.systems[0]
        values = system.snapshots[:, :, 0]
        expected = quasiperiodic_std(system.graph, 1.0)
        np.testing.assert_allclose(values.std(axis=0), expected, rtol=0.03)
        self.assertLess(np.max(np.abs(values.mean(axis=0))), 0.05)

    def test_conditions_broadcast(self):
        ds = gen_quasiperiodic(3, 2, 0.7, 2, seed=0)
        np.testing.assert_allclose(ds.systems[0].graph.node_conditions, 0.7)

    def test_deterministic(self):
        a = gen_quasiperiodic(4, 4, 1.0, 20, seed=5)
        b = gen_quasiperiodic(4, 4, 1.0, 20, seed=5)
        np.testing.assert_array_equal(a.systems[0].snapshots, b.systems[0].snapshots)

    def test_negative_amplitude(self):
        with self.assertRaises(ValidationError):
            gen_quasiperiodic(3, 3, -1.0, 5, seed=0)


class TestBimodal(unittest.TestCase):
    def test_noiseless_modes(self):
        ds = gen_bimodal(5, 5, 2.0, 0.0, 50, seed=3)
        system = ds.systems[0]
        g = envelope(system.graph.positions)
        values = system.snapshots[:, :, 0]
        for snapshot in values:
            self.assertTrue(
                np.allclose(snapshot, 2.0 * g) or np.allclose(snapshot, -2.0 * g)
            )
        self.assertEqual(sign_agreement(values), 1.0)

    def test_symmetric_mixture(self):
        ds = gen_bimodal(3, 3, 1.0, 0.1, 20_000, seed=4)
        values = ds.systems[0].snapshots[:, :, 0]
        self.assertLess(np.max(np.abs(values.mean(axis=0))), 0.05)
        self.assertAlmostEqual(positive_mode_fraction(values), 0.5, delta=0.02)

    def test_preconditions(self):
        with self.assertRaises(ValidationError):
            gen_bimodal(3, 3, 0.0, 0.1, 5, seed=0)
        with self.assertRaises(ValidationError):
            gen_bimodal(3, 3, 1.0, -0.1, 5, seed=0)

    def test_independent_signs_halve_agreement(self):
        rng = np.random.default_rng(0)
        values = rng.choice([-1.0, 1.0], size=(2000, 40))
        self.assertAlmostEqual(sign_agreement(values), 0.5, delta=0.02)
