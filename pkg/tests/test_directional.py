"""Qualitative orderings between strategies on the synthetic suite.

These train for real and take minutes, so they only run with LANGCL_SLOW=1.
"""

import os
import shutil
import tempfile
import unittest
from pathlib import Path

from langcl.core.config import from_dict
from langcl.core.harness import run_sequence
from langcl.core.studies import imbalance_study, ordering_study

SLOW = os.environ.get("LANGCL_SLOW") == "1"
SEEDS = (0, 1, 2)


def suite_config(cache: Path, **training):
    """Toy-sized utterances with the default model width and five new languages."""
    return from_dict(
        {
            "model": {"d_model": 64},
            "data": {"n_new": 5},
            "training": training,
            "experiment": {"cache_dir": str(cache)},
        },
        "toy",
    )


class DirectionalTestCase(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.temp_dir = tempfile.mkdtemp()
        cls.cache = Path(cls.temp_dir) / "cache"

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.temp_dir)


@unittest.skipUnless(SLOW, "set LANGCL_SLOW=1 to run end-to-end orderings")
class TestForgettingAndReplay(DirectionalTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        base = suite_config(cls.cache)
        cls.records = {
            (kind, seed): run_sequence(base.with_seed(seed).with_strategy(kind))
            for seed in SEEDS
            for kind in ("FT", "ER", "PNN")
        }

    def test_replay_beats_fine_tuning_in_every_seed(self):
        """Final AWER is lower and final BWT higher under ER than under FT."""
        for seed in SEEDS:
            with self.subTest(seed=seed):
                ft, er = self.records["FT", seed], self.records["ER", seed]
                self.assertLess(er.final("awer"), ft.final("awer"))
                self.assertGreater(er.final("bwt"), ft.final("bwt"))

    def test_fine_tuning_forgets_the_base_task(self):
        """FT loses more than five WER points on the base task at the first new stage."""
        for seed in SEEDS:
            with self.subTest(seed=seed):
                self.assertLess(self.records["FT", seed].metrics["bwt"][2], -0.05)

    def test_columns_do_not_forget(self):
        """Progressive columns keep backward transfer at exactly zero."""
        for seed in SEEDS:
            with self.subTest(seed=seed):
                bwt = self.records["PNN", seed].metrics["bwt"]
                self.assertEqual(set(bwt.values()), {0.0})


@unittest.skipUnless(SLOW, "set LANGCL_SLOW=1 to run end-to-end orderings")
class TestOrderingSensitivity(DirectionalTestCase):
    def test_replay_is_less_sensitive_to_order(self):
        """Spread of final AWER over ten orders is smaller under ER than under FT."""
        base = suite_config(self.cache)
        spread = {}
        for kind in ("FT", "ER"):
            summary = ordering_study(base.with_strategy(kind), n_orders=10)
            spread[kind] = summary.std["awer"][max(summary.std["awer"])]
        self.assertLess(spread["ER"], spread["FT"])


@unittest.skipUnless(SLOW, "set LANGCL_SLOW=1 to run end-to-end orderings")
class TestPretrainingImbalance(DirectionalTestCase):
    def test_imbalance_drives_first_stage_forgetting(self):
        """Imbalanced FT forgets more than balanced FT; ER forgets less than FT in both."""
        config = suite_config(self.cache, base_epochs=20, epochs_per_task=2)
        drops = {(r.variant, r.strategy): r.drop for r in imbalance_study(config)}
        self.assertGreater(drops["imbalanced", "FT"], drops["balanced", "FT"])
        for variant in ("imbalanced", "balanced"):
            with self.subTest(variant=variant):
                self.assertLess(drops[variant, "ER"], drops[variant, "FT"])


if __name__ == "__main__":
    unittest.main()
