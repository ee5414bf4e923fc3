import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np

from langcl.core import ops
from langcl.core.adapters import PiggybackMask, PnnColumn, PromptEntry
from langcl.core.checkpoint import Checkpoint
from langcl.core.ctc import BLANK, ctc_loss
from langcl.core.errors import AdapterError, ShapeError, VocabularyError
from langcl.core.gradcheck import gradcheck
from langcl.core.model import PER_LANGUAGE, SHARED, EncoderConfig, SeqModel
from langcl.core.tensor import no_grad


def small_model(regime=SHARED, seed=0):
    config = EncoderConfig(d_in=3, vocab_size=7, d_model=4, n_layers=2, context=2, regime=regime)
    return SeqModel(config, seed)


def features(frames=5, batch=None, seed=0):
    shape = (frames, 3) if batch is None else (batch, frames, 3)
    return np.random.default_rng(seed).normal(size=shape)


class TestSharedRegime(unittest.TestCase):
    def test_output_shapes(self):
        """Hidden states and logits have the expected batch, time and width."""
        model = small_model()
        model.register_language("aa", [2, 3])
        out = model.forward(features(batch=2), "aa")
        self.assertEqual(out.hidden.shape, (2, 5, 4))
        self.assertEqual(out.logits.shape, (2, 5, 7))

    def test_language_row_conditions_the_output(self):
        """Different language rows give different logits for the same input."""
        model = small_model()
        model.register_language("aa", [2])
        model.register_language("bb", [3])
        x = features()
        a = model.forward(x, "aa").logits.data
        b = model.forward(x, "bb").logits.data
        self.assertFalse(np.allclose(a, b))
        self.assertTrue(model.knows("aa"))
        self.assertFalse(model.knows("cc"))

    def test_causal_encoder(self):
        """Changing a late frame leaves earlier outputs untouched."""
        model = small_model()
        x = features(frames=6)
        y = x.copy()
        y[4:] += 1.0
        a = model.forward(x, None).logits.data
        b = model.forward(y, None).logits.data
        np.testing.assert_allclose(a[:4], b[:4])
        self.assertFalse(np.allclose(a[4:], b[4:]))

    def test_bad_input_shape(self):
        """Wrong feature width and empty input raise ShapeError."""
        with self.assertRaises(ShapeError):
            small_model().encode(np.zeros((5, 2)))
        with self.assertRaises(ShapeError):
            small_model().forward(np.zeros((0, 3)), None)

    def test_gradient_through_the_whole_model(self):
        """Encoder, head and language row gradients match finite differences."""
        model = small_model()
        model.register_language("aa", [2, 3])
        x = features(frames=4)
        names = ["enc.0.wa", "enc.1.bb", "head.shared.w", "lang.aa"]

        def fn():
            logits = model.forward(x, "aa").logits
            return ctc_loss(ops.log_softmax(logits), (2, 3))

        self.assertLess(gradcheck(fn, [model.params[n] for n in names]), 1e-4)


class TestPerLanguageRegime(unittest.TestCase):
    def test_heads_map_between_local_and_global_ids(self):
        """A per-language head maps its local ids to suite ids and back."""
        model = small_model(PER_LANGUAGE)
        model.register_language("aa", [5, 2, 2])
        head = model.head_for("aa")
        self.assertEqual(head.token_ids, (BLANK, 2, 5))
        self.assertEqual(head.to_local([5, 2]), [2, 1])
        self.assertEqual(head.to_global((1, 2)), (2, 5))
        with self.assertRaises(VocabularyError):
            head.to_local([6])

    def test_unknown_head(self):
        """Asking for a head that was never registered raises."""
        with self.assertRaises(VocabularyError):
            small_model(PER_LANGUAGE).head_for("zz")

    def test_unknown_task_is_rejected_in_both_entry_points(self):
        """Neither forward nor encode silently falls back to the plain model."""
        model = small_model()
        model.register_language("aa", [2])
        with self.assertRaises(VocabularyError):
            model.forward(features(), "zz")
        with self.assertRaises(AdapterError):
            model.encode(features(), "zz")
        with self.assertRaises(AdapterError):
            model.encode(features(), "aa")

    def test_transcript_uses_global_ids(self):
        """Transcripts from a per-language head use suite token ids."""
        model = small_model(PER_LANGUAGE)
        model.register_language("aa", [4, 6])
        hyp = model.transcribe(features(), "aa")
        self.assertTrue(set(hyp.tokens) <= {4, 6})


class TestAdapters(unittest.TestCase):
    def test_duplicate_adapter(self):
        """A second adapter for the same language is refused."""
        model = small_model()
        model.register_language("aa", [2])
        model.add_adapter(PromptEntry("aa"))
        with self.assertRaises(AdapterError):
            model.add_adapter(PromptEntry("aa"))
        with self.assertRaises(AdapterError):
            model.encode(features(), adapter="bb")

    def test_identity_adapters_leave_outputs_unchanged(self):
        """An identity prompt and an all-ones mask reproduce the plain model bitwise."""
        model = small_model()
        model.register_language("aa", [2])
        model.register_language("bb", [3])
        x = features()
        with no_grad():
            plain = {t: model.forward(x, t).logits.data.copy() for t in ("aa", "bb")}
        model.add_adapter(PromptEntry("aa"), noise=0.0)
        model.add_adapter(PiggybackMask("bb", 0.005, model.piggyback_targets("bb")), pb_init=0.01)
        with no_grad():
            for task in ("aa", "bb"):
                np.testing.assert_array_equal(model.forward(x, task).logits.data, plain[task])

    def test_zero_model_gives_uniform_softmax(self):
        """All-zero weights give a uniform distribution over the vocabulary."""
        model = small_model()
        for name in model.params.names():
            model.params[name].data[...] = 0.0
        probs = ops.softmax(model.forward(features(), None).logits).data
        np.testing.assert_allclose(probs, np.full((5, 7), 1 / 7))

    def test_pnn_column_has_its_own_projection(self):
        """A language with a column decodes through the column's head."""
        model = small_model(PER_LANGUAGE)
        model.register_language("aa", [2, 3])
        model.add_adapter(PnnColumn("aa"))
        out = model.forward(features(), "aa")
        self.assertEqual(out.head.weight, "pnn.aa.w")
        self.assertEqual(out.logits.shape, (5, 3))

    def test_piggyback_finalize_keeps_outputs(self):
        """Packing the masks leaves outputs unchanged."""
        model = small_model()
        model.register_language("aa", [2])
        mask = PiggybackMask("aa", 0.005, model.piggyback_targets("aa"))
        model.add_adapter(mask, pb_init=0.01)
        real = model.params[mask.real_name("enc.1.wa")]
        real.data[0, :] = -1.0
        x = features()
        with no_grad():
            before = model.forward(x, "aa").logits.data.copy()
        mask.finalize(model.params)
        self.assertNotIn(mask.real_name("enc.1.wa"), model.params)
        self.assertEqual(mask.param_names(), [])
        with no_grad():
            after = model.forward(x, "aa").logits.data
        np.testing.assert_allclose(before, after)
        np.testing.assert_array_equal(mask.unpack("enc.1.wa")[0], np.zeros(4))


class TestPersistence(unittest.TestCase):
    def test_copy_reproduces_outputs_with_adapters(self):
        """A copy carries its adapters and gives identical logits."""
        model = small_model()
        model.register_language("aa", [2])
        model.register_language("bb", [3])
        model.add_adapter(PromptEntry("aa"))
        mask = PiggybackMask("bb", 0.005, model.piggyback_targets("bb"))
        model.add_adapter(mask)
        mask.finalize(model.params)
        clone = SeqModel.from_checkpoint(Checkpoint.from_bytes(model.snapshot().to_bytes()))
        x = features()
        for task in ("aa", "bb"):
            np.testing.assert_array_equal(
                model.forward(x, task).logits.data, clone.forward(x, task).logits.data
            )

    def test_save_and_load(self):
        """A saved model with a column loads back and gives identical logits."""
        model = small_model(PER_LANGUAGE)
        model.register_language("aa", [2, 3])
        model.add_adapter(PnnColumn("aa"))
        tmp = Path(tempfile.mkdtemp())
        try:
            model.save(tmp / "model.ckpt")
            loaded = SeqModel.load(tmp / "model.ckpt")
        finally:
            shutil.rmtree(tmp)
        x = features()
        np.testing.assert_array_equal(model.forward(x, "aa").logits.data, loaded.forward(x, "aa").logits.data)
        self.assertEqual(loaded.heads["aa"].token_ids, model.heads["aa"].token_ids)

    def test_same_seed_same_initialisation(self):
        """Initial weights depend only on the seed."""
        a, b = small_model(seed=3), small_model(seed=3)
        np.testing.assert_array_equal(a.params["enc.0.wa"].data, b.params["enc.0.wa"].data)
        self.assertFalse(
            np.array_equal(a.params["enc.0.wa"].data, small_model(seed=4).params["enc.0.wa"].data)
        )


if __name__ == "__main__":
    unittest.main()
