import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np

from langcl.core.checkpoint import Checkpoint, restore, snapshot
from langcl.core.errors import CheckpointError, ConfigError, ShapeError
from langcl.core.optim import OptimState, clip_grad_norm, optim_step, plateau_decay
from langcl.core.params import ParamStore


def store_with_grads():
    params = ParamStore()
    params.add("w", np.array([1.0, -2.0]))
    params.add("b", np.array([0.5]))
    params.add("frozen", np.array([3.0]), frozen=True)
    params["w"].grad = np.array([3.0, 4.0])
    params["b"].grad = np.array([0.0])
    return params


class TestAdamW(unittest.TestCase):
    def test_first_step_moves_by_lr_times_sign(self):
        """With bias correction the first Adam step is lr * g / (|g| + eps)."""
        params = store_with_grads()
        optim_step(params, OptimState(lr=0.1))
        np.testing.assert_allclose(params["w"].data, [0.9, -2.1], atol=1e-6)
        np.testing.assert_allclose(params["b"].data, [0.5])
        np.testing.assert_allclose(params["frozen"].data, [3.0])
        self.assertIsNone(params["w"].grad)

    def test_lr_scale_by_prefix(self):
        """A parameter's lr scale is looked up by name prefix."""
        params = store_with_grads()
        params["b"].grad = np.array([1.0])
        optim_step(params, OptimState(lr=0.1, lr_scales={"b": 0.5}))
        np.testing.assert_allclose(params["b"].data, [0.45], atol=1e-6)

    def test_weight_decay_shrinks_towards_zero(self):
        """Decoupled decay shrinks weights even without gradients."""
        params = ParamStore()
        params.add("w", np.array([2.0]))
        optim_step(params, OptimState(lr=0.1, weight_decay=0.5))
        np.testing.assert_allclose(params["w"].data, [1.9])

    def test_non_positive_lr_rejected(self):
        """A zero learning rate is refused."""
        with self.assertRaises(ConfigError):
            OptimState(lr=0.0)


class TestClipAndDecay(unittest.TestCase):
    def test_clip_rescales_global_norm(self):
        """Gradients above the limit are scaled to unit global norm."""
        params = store_with_grads()
        before = clip_grad_norm(params, 1.0)
        self.assertAlmostEqual(before, 5.0)
        self.assertAlmostEqual(float(np.linalg.norm(params["w"].grad)), 1.0)

    def test_small_norm_left_alone(self):
        """Gradients under the limit are left untouched."""
        params = store_with_grads()
        clip_grad_norm(params, 10.0)
        np.testing.assert_allclose(params["w"].grad, [3.0, 4.0])

    def test_clip_twice_equals_clip_once(self):
        """A second clip never touches gradients the first one already scaled."""
        rng = np.random.default_rng(0)
        for _ in range(1000):
            params = ParamStore()
            for k in range(3):
                params.add(f"p{k}", np.zeros(4))
                params[f"p{k}"].grad = rng.normal(scale=rng.uniform(0.1, 10.0), size=4)
            clip_grad_norm(params, 1.0)
            once = [params[f"p{k}"].grad.copy() for k in range(3)]
            clip_grad_norm(params, 1.0)
            for k in range(3):
                np.testing.assert_array_equal(params[f"p{k}"].grad, once[k])

    def test_norm_equal_to_max_is_unchanged(self):
        """Gradients [3, 4] against max_norm 5 sit on the boundary."""
        params = store_with_grads()
        self.assertEqual(clip_grad_norm(params, 5.0), 5.0)
        np.testing.assert_array_equal(params["w"].grad, [3.0, 4.0])

    def test_plateau_decays_on_tie_and_regression(self):
        """Ties and regressions decay the rate; improvements reset the best."""
        state = OptimState(lr=1.0)
        self.assertEqual(plateau_decay(state, 0.5, 0.8), 1.0)
        self.assertAlmostEqual(plateau_decay(state, 0.5, 0.8), 0.8)
        self.assertAlmostEqual(plateau_decay(state, 0.7, 0.8), 0.64)
        self.assertAlmostEqual(plateau_decay(state, 0.3, 0.8), 0.64)
        self.assertEqual(state.best, 0.3)

    def test_plateau_factor_range(self):
        """A decay factor of 1 is refused."""
        with self.assertRaises(ConfigError):
            plateau_decay(OptimState(), 1.0, 1.0)


class TestParamStore(unittest.TestCase):
    def test_flat_grad_round_trip(self):
        """Flattened gradients unpack into the right parameters, missing grads as zeros."""
        params = store_with_grads()
        names = ["w", "b"]
        flat = params.flat_grad(names)
        np.testing.assert_allclose(flat, [3.0, 4.0, 0.0])
        params.set_flat_grad(names, flat * 2)
        np.testing.assert_allclose(params["w"].grad, [6.0, 8.0])
        with self.assertRaises(ShapeError):
            params.set_flat_grad(names, np.zeros(4))

    def test_freezing_drops_gradient(self):
        """Frozen parameters leave the trainable list and lose their grad."""
        params = store_with_grads()
        params.set_frozen(["w"])
        self.assertEqual(params.trainable(), ["b"])
        self.assertIsNone(params["w"].grad)
        self.assertFalse(params["w"].requires_grad)
        self.assertEqual(params.num_values(), 4)


class TestCheckpoint(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.path = Path(self.temp_dir) / "model.ckpt"

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_save_and_load_preserves_values_flags_and_meta(self):
        """Values, frozen flags, raw byte arrays and meta survive a checkpoint."""
        params = store_with_grads()
        ckpt = snapshot(params, {"regime": "shared"})
        ckpt.arrays["bits"] = np.array([1, 0, 255], dtype=np.uint8)
        ckpt.save(self.path)

        loaded = Checkpoint.load(self.path)
        self.assertEqual(loaded.meta, {"regime": "shared"})
        self.assertEqual(loaded.frozen, {"frozen"})
        self.assertEqual(loaded.arrays["bits"].dtype, np.uint8)
        rebuilt = restore(loaded)
        self.assertEqual(sorted(rebuilt), ["b", "frozen", "w"])
        self.assertTrue(rebuilt.is_frozen("frozen"))
        np.testing.assert_array_equal(rebuilt["w"].data, [1.0, -2.0])

    def test_restore_into_checks_shapes(self):
        """Restoring into a store with different shapes raises."""
        ckpt = snapshot(store_with_grads())
        other = ParamStore()
        other.add("w", np.zeros(3))
        other.add("b", np.zeros(1))
        other.add("frozen", np.zeros(1))
        with self.assertRaises(CheckpointError):
            restore(ckpt, other)

    def test_bad_magic_and_truncation(self):
        """Foreign files and truncated payloads are refused."""
        self.path.write_bytes(b"not a checkpoint")
        with self.assertRaises(CheckpointError):
            Checkpoint.load(self.path)
        payload = snapshot(store_with_grads()).to_bytes()
        with self.assertRaises(CheckpointError):
            Checkpoint.from_bytes(payload[:-4])

    def test_missing_file(self):
        """Loading a missing checkpoint raises CheckpointError."""
        with self.assertRaises(CheckpointError):
            Checkpoint.load(self.path)

    def test_serialisation_is_deterministic(self):
        """The same parameters serialise to the same bytes."""
        a = snapshot(store_with_grads(), {"k": 1}).to_bytes()
        b = snapshot(store_with_grads(), {"k": 1}).to_bytes()
        self.assertEqual(a, b)


if __name__ == "__main__":
    unittest.main()
