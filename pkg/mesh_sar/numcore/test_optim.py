import os
import tempfile
import unittest

import numpy as np

from mesh_sar.exceptions import MissingPrerequisiteError, ValidationError
from mesh_sar.numcore import (
    MLP,
    ParamGroup,
    PlateauSchedule,
    Tensor,
    adam_step,
    functional as F,
    load_checkpoint,
    plateau_update,
    save_checkpoint,
)


def make_group(value, grad):
    p = Tensor(np.array(value, dtype=float), requires_grad=True)
    group = ParamGroup({"p": p})
    p.grad = np.array(grad, dtype=float)
    return p, group


class TestAdam(unittest.TestCase):
    def test_zero_gradient_keeps_parameters(self):
        p, group = make_group([1.0, -2.0], [0.0, 0.0])
        for _ in range(5):
            adam_step(group, 1e-3)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_constant_gradient_steps_by_lr(self):
        p, group = make_group([0.0, 0.0], [0.5, -2.0])
        for _ in range(100):
            adam_step(group, 1e-3)
        np.testing.assert_allclose(p.data, [-0.1, 0.1], rtol=1e-6)

    def test_missing_gradient(self):
        p, group = make_group([1.0], [0.0])
        p.grad = None
        with self.assertRaises(ValidationError):
            adam_step(group, 1e-3)

    def test_identical_runs_are_bitwise_equal(self):
        results = []
        for _ in range(2):
            rng = np.random.default_rng(42)
            mlp = MLP(3, 8, 1, rng)
            group = ParamGroup(mlp.parameters())
            x = Tensor(rng.standard_normal((16, 3)))
            for _ in range(10):
                group.zero_grad()
                F.mean(F.square(mlp(x))).backward()
                adam_step(group, 1e-2)
            results.append(np.concatenate([p.data.ravel() for p in mlp.parameters().values()]))
        np.testing.assert_array_equal(results[0], results[1])


class TestPlateau(unittest.TestCase):
    def test_decreasing_loss_keeps_lr(self):
        schedule = PlateauSchedule(initial_lr=1e-3, patience_epochs=2)
        self.assertEqual(plateau_update(schedule, [5.0, 4.0, 3.0, 2.0, 1.0]), 1e-3)

    def test_flat_loss_divides_lr_by_ten(self):
        schedule = PlateauSchedule(initial_lr=1e-4, patience_epochs=3)
        self.assertAlmostEqual(plateau_update(schedule, [1.0] * 4), 1e-5, delta=1e-18)
        self.assertEqual(plateau_update(schedule, [1.0] * 3), 1e-4)

    def test_improvement_below_tolerance_counts_as_flat(self):
        schedule = PlateauSchedule(initial_lr=1e-4, patience_epochs=1)
        self.assertAlmostEqual(plateau_update(schedule, [1.0, 1.0 - 1e-6]), 1e-5, delta=1e-18)

    def test_stop_signal(self):
        schedule = PlateauSchedule(initial_lr=1e-4, patience_epochs=1)
        lr = plateau_update(schedule, [1.0] * 3)
        self.assertFalse(schedule.should_stop(lr))
        lr = plateau_update(schedule, [1.0] * 4)
        self.assertTrue(schedule.should_stop(lr))

    def test_invalid_schedules(self):
        with self.assertRaises(ValidationError):
            PlateauSchedule(initial_lr=1e-7, patience_epochs=1)
        with self.assertRaises(ValidationError):
            PlateauSchedule(initial_lr=1e-3, patience_epochs=1, reduction_factor=1.0)
        with self.assertRaises(ValidationError):
            plateau_update(PlateauSchedule(initial_lr=1e-3, patience_epochs=1), [])


class TestCheckpoint(unittest.TestCase):
    def test_save_and_load(self):
        rng = np.random.default_rng(0)
        mlp = MLP(2, 4, 3, rng)
        arrays = {name: p.data for name, p in mlp.parameters().items()}
        with tempfile.TemporaryDirectory() as tmp:
            prefix = os.path.join(tmp, "ckpt", "model")
            save_checkpoint(prefix, arrays, {"config_hash": "abc"})
            loaded, metadata = load_checkpoint(prefix)

        self.assertEqual(metadata, {"config_hash": "abc"})
        self.assertEqual(list(loaded), list(arrays))
        other = MLP(2, 4, 3, np.random.default_rng(1))
        other.load_arrays(loaded)
        for name, p in other.parameters().items():
            np.testing.assert_array_equal(p.data, arrays[name])

    def test_missing_checkpoint(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(MissingPrerequisiteError):
                load_checkpoint(os.path.join(tmp, "nothing"))

    def test_optimizer_state_round_trip(self):
        p, group = make_group([1.0, 2.0], [0.3, -0.1])
        adam_step(group, 1e-2)
        _, restored = make_group([1.0, 2.0], [0.0, 0.0])
        restored.load_state_arrays(group.state_arrays(), group.step_count)
        self.assertEqual(restored.step_count, 1)
        np.testing.assert_array_equal(restored.first_moment["p"], group.first_moment["p"])


if __name__ == "__main__":
    unittest.main()
