import os
import tempfile
import unittest
import json

import numpy as np
from scipy.spatial import Delaunay

from mesh_sar.exceptions import MissingPrerequisiteError, ValidationError
from mesh_sar.hierarchy import (
    build_hierarchy,
    coarsen_edges,
    guillard_mask,
    load_hierarchy,
    save_hierarchy,
    scale_onehot,
)
from mesh_sar.meshgraph import build_mesh_graph
from mesh_sar.meshgraph.generators import grid_mesh


def path_edges(n):
    pairs = [(i, i + 1) for i in range(n - 1)]
    return np.array([e for a, b in pairs for e in ((a, b), (b, a))])


def complete_edges(n):
    return np.array([(i, j) for i in range(n) for j in range(n) if i != j])


def random_mesh(rng):
    n = int(rng.integers(16, 401))
    points = rng.random((n, 2))
    simplices = Delaunay(points).simplices
    pairs = set()
    for tri in simplices:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            pairs.add((min(a, b), max(a, b)))
    return build_mesh_graph(points, sorted(pairs))


class TestGuillardMask(unittest.TestCase):
    def test_path(self):
        self.assertEqual(np.flatnonzero(guillard_mask(path_edges(4), 4)).tolist(), [0, 2])

    def test_single_node(self):
        self.assertEqual(guillard_mask(np.zeros((0, 2), dtype=int), 1).tolist(), [True])

    def test_complete_graph(self):
        self.assertEqual(np.flatnonzero(guillard_mask(complete_edges(3), 3)).tolist(), [0])

    def test_empty(self):
        with self.assertRaises(ValidationError):
            guillard_mask(np.zeros((0, 2), dtype=int), 0)


class TestCoarsenEdges(unittest.TestCase):
    def test_path_two_hop(self):
        edges = coarsen_edges(path_edges(4), guillard_mask(path_edges(4), 4))
        self.assertEqual(edges.tolist(), [[0, 1], [1, 0]])

    def test_far_nodes_disconnected(self):
        kept = np.array([True, False, False, True])
        self.assertEqual(len(coarsen_edges(path_edges(4), kept)), 0)

    def test_complete_graph(self):
        kept = guillard_mask(complete_edges(3), 3)
        self.assertEqual(coarsen_edges(complete_edges(3), kept).shape, (0, 2))


class TestBuildHierarchy(unittest.TestCase):
    def test_single_scale(self):
        h = build_hierarchy(grid_mesh(3, 3), 1)
        self.assertEqual(h.sizes(), [9])
        self.assertTrue(np.all(h.scales == 1))

    def test_path_two_scales(self):
        g = build_mesh_graph([[float(i), 0.0] for i in range(4)], [[0, 1], [1, 2], [2, 3]])
        with self.assertRaises(ValidationError):
            build_hierarchy(g, 2)
        h = build_hierarchy(g, 2, allow_ties=True)
        self.assertEqual(h.partitions[0].tolist(), [0, 2])
        self.assertEqual(h.partitions[1].tolist(), [1, 3])

    def test_grid_three_scales(self):
        h = build_hierarchy(grid_mesh(8, 8), 3)
        sizes = h.sizes()
        self.assertEqual(sum(sizes), 64)
        self.assertLess(sizes[0], sizes[1])
        self.assertLess(sizes[1], sizes[2])

    def test_coarse_scale_larger_than_fine(self):
        # path 0-1-2 keeps {0, 2} and drops {1}
        g = build_mesh_graph([[float(i), 0.0] for i in range(3)], [[0, 1], [1, 2]])
        for allow_ties in (False, True):
            with self.assertRaises(ValidationError):
                build_hierarchy(g, 2, allow_ties=allow_ties)

    def test_small_grids(self):
        for (nx, ny), num_scales, sizes in (
            ((3, 3), 2, [4, 5]),
            ((3, 3), 3, [1, 3, 5]),
            ((4, 3), 3, [1, 3, 8]),
            ((4, 4), 2, [4, 12]),
            ((5, 4), 3, [2, 4, 14]),
        ):
            self.assertEqual(build_hierarchy(grid_mesh(nx, ny), num_scales).sizes(), sizes)

    def test_too_many_scales(self):
        g = build_mesh_graph([[0.0, 0.0], [1.0, 0.0]], [[0, 1]])
        with self.assertRaises(ValidationError):
            build_hierarchy(g, 3)

    def test_random_meshes(self):
        rng = np.random.default_rng(2024)
        accepted = 0
        for _ in range(100):
            graph = random_mesh(rng)
            self.check_invariants(graph, build_hierarchy(graph, 1))
            for num_scales in (2, 3):
                try:
                    h = build_hierarchy(graph, num_scales)
                except ValidationError:
                    continue
                accepted += 1
                self.check_invariants(graph, h)
                again = build_hierarchy(graph, num_scales)
                np.testing.assert_array_equal(h.scales, again.scales)
        self.assertGreater(accepted, 150)

    def check_invariants(self, graph, h):
        covered = np.concatenate(h.partitions)
        self.assertEqual(len(covered), graph.num_nodes)
        self.assertEqual(len(np.unique(covered)), graph.num_nodes)
        sizes = h.sizes()
        self.assertTrue(all(a < b for a, b in zip(sizes, sizes[1:])), sizes)
        # the survivors of the last round form S_1
        np.testing.assert_array_equal(np.sort(h.level_nodes[-1]), h.partitions[0])

        for level in range(h.num_scales - 1):
            edges = h.level_edges[level]
            kept = np.isin(h.level_nodes[level], h.level_nodes[level + 1])
            both_kept = kept[edges[:, 0]] & kept[edges[:, 1]]
            self.assertFalse(np.any(both_kept), "kept nodes must be independent")
            dominated = np.zeros_like(kept)
            dominated[edges[kept[edges[:, 0]], 1]] = True
            self.assertTrue(np.all(dominated[~kept]), "every dropped node needs a kept neighbour")

    def test_onehot(self):
        h = build_hierarchy(grid_mesh(6, 6), 3)
        onehot = scale_onehot(h)
        np.testing.assert_array_equal(onehot.sum(axis=1), 1.0)
        i = int(h.partitions[0][0])
        self.assertEqual(onehot[i].tolist(), [1.0, 0.0, 0.0])
        self.assertTrue(np.all(scale_onehot(build_hierarchy(grid_mesh(3, 3), 1)) == 1.0))

    def test_export(self):
        h = build_hierarchy(grid_mesh(4, 4), 2)
        with tempfile.TemporaryDirectory() as tmp:
            path = save_hierarchy(h, os.path.join(tmp, "h.json"))
            with open(path) as f:
                data = json.load(f)
        self.assertEqual(data["scales"], h.scales.tolist())
        self.assertEqual(len(data["level_edges"]), 2)

    def test_load(self):
        h = build_hierarchy(grid_mesh(5, 4), 3)
        with tempfile.TemporaryDirectory() as tmp:
            loaded = load_hierarchy(save_hierarchy(h, os.path.join(tmp, "h.json")))
            with self.assertRaises(MissingPrerequisiteError):
                load_hierarchy(os.path.join(tmp, "missing.json"))
        np.testing.assert_array_equal(loaded.scales, h.scales)
        for a, b in zip(loaded.partitions, h.partitions):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(loaded.level_edges[-1], h.level_edges[-1])
