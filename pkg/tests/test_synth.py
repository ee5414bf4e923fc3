import shutil
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

import numpy as np

from langcl.core.config import DataConfig, from_dict
from langcl.core.ctc import BLANK, min_frames
from langcl.core.errors import GenerationError, ManifestError
from langcl.core.manifest import read_manifest, read_suite, write_manifest, write_suite
from langcl.core.synth import (
    BOUNDARY,
    build_suite_data,
    gen_language,
    gen_suite,
    make_splits,
    oracle_transcribe,
    suite_vocab_size,
)


def toy_data(**changes):
    return replace(from_dict({}, "toy").data, **changes)


class TestGenerator(unittest.TestCase):
    def test_same_seed_same_language(self):
        """Languages are a function of the seed."""
        a = gen_language(toy_data(), 42, "xx")
        b = gen_language(toy_data(), 42, "xx")
        self.assertEqual(a.fingerprint(), b.fingerprint())
        self.assertNotEqual(a.fingerprint(), gen_language(toy_data(), 43, "xx").fingerprint())

    def test_overlap_controls_shared_tokens(self):
        """Overlap sets how many tokens come from the shared pool."""
        for overlap, shared in ((0.0, 0), (0.5, 3), (1.0, 6)):
            with self.subTest(overlap=overlap):
                spec = gen_language(toy_data(overlap=overlap), 1, "xx")
                self.assertEqual(spec.shared_count, shared)
                self.assertEqual(spec.private_count, 6 - shared)

    def test_pool_too_small(self):
        """A shared pool smaller than the overlap needs is refused."""
        with self.assertRaises(GenerationError):
            gen_language(toy_data(pool_size=2, overlap=1.0), 1, "xx")

    def test_suite_ids_do_not_collide(self):
        """Private tokens are unique across the suite and fill the vocabulary."""
        config = toy_data()
        base, new = gen_suite(config)
        private = [t for spec in (*base, *new) for t in spec.private_tokens]
        self.assertEqual(len(private), len(set(private)))
        self.assertEqual(max(private) + 1, suite_vocab_size(config))
        for spec in (*base, *new):
            self.assertNotIn(BLANK, spec.token_ids)
            self.assertEqual(spec.boundary, BOUNDARY)

    def test_char_languages_have_no_boundary(self):
        """Char-flagged languages have no boundary token."""
        config = toy_data(char_languages=("n01",))
        _, new = gen_suite(config)
        self.assertIsNone(new[1].boundary)
        self.assertEqual(new[1].granularity, "char")

    def test_splits_are_disjoint(self):
        """No utterance id appears in more than one split."""
        data = make_splits(gen_language(toy_data(), 6, "xx"))
        ids = [{u.id for u in data.split(s)} for s in ("train", "val", "test")]
        self.assertEqual(sum(len(s) for s in ids), len(set.union(*ids)))
        self.assertEqual(len(ids[0]), 120)

    def test_utterances_are_feasible_and_in_vocabulary(self):
        """Split sizes, frame counts and tokens respect the language."""
        spec = gen_language(toy_data(), 5, "xx")
        data = make_splits(spec)
        self.assertEqual([len(data.split(s)) for s in ("train", "val", "test")], [120, 30, 30])
        for utt in data.train:
            self.assertGreaterEqual(utt.frames, min_frames(utt.tokens))
            self.assertLessEqual(utt.frames, spec.max_frames)
            self.assertTrue(set(utt.tokens) <= set(spec.token_ids))
            self.assertNotEqual(utt.tokens[-1], BOUNDARY)

    def test_noise_free_oracle_recovers_transcript(self):
        """Consecutive tokens differ, so nearest-prototype runs give the transcript back."""
        spec = gen_language(toy_data(noise=0.0), 9, "xx")
        data = make_splits(spec)
        for utt in data.test[:10]:
            self.assertEqual(oracle_transcribe(spec, utt.features).tokens, utt.tokens)


class TestManifests(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.temp_path = Path(self.temp_dir)

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_suite_survives_a_trip_through_disk(self):
        """A written suite reads back with the same languages."""
        config = toy_data(splits=(4, 2, 2))
        suite = build_suite_data(config)
        write_suite(self.temp_path / "suite", suite)
        loaded = read_suite(self.temp_path / "suite")
        self.assertEqual(loaded.vocab_size, suite.vocab_size)
        self.assertEqual([d.lang for d in loaded.new], [d.lang for d in suite.new])
        for a, b in zip(suite.base[0].train, loaded.base[0].train, strict=True):
            self.assertEqual(a.id, b.id)
            self.assertEqual(a.tokens, b.tokens)
            np.testing.assert_array_equal(a.features, b.features)

    def test_inline_features(self):
        """Features stored inline in the manifest read back exactly."""
        utt = build_suite_data(toy_data(splits=(2, 1, 1))).new[0].train[0]
        path = self.temp_path / "m.jsonl"
        write_manifest(path, [utt])
        (back,) = read_manifest(path)
        np.testing.assert_array_equal(back.features, utt.features)

    def test_errors_carry_line_numbers(self):
        """Manifest errors name the offending line."""
        path = self.temp_path / "bad.jsonl"
        path.write_text('\n{"id": "a"}\n', encoding="utf-8")
        with self.assertRaises(ManifestError) as ctx:
            read_manifest(path)
        self.assertIn(":2:", str(ctx.exception))

    def test_out_of_vocabulary_and_frame_mismatch(self):
        """Tokens outside the language and a wrong frame count are rejected."""
        path = self.temp_path / "bad.jsonl"
        record = '{"id":"a","lang":"xx","feats":[[0.0],[1.0]],"tokens":[7],"frames":2}\n'
        path.write_text(record, encoding="utf-8")
        with self.assertRaises(ManifestError):
            read_manifest(path, {"xx": frozenset({2, 3})})
        path.write_text(record.replace('"frames":2', '"frames":3'), encoding="utf-8")
        with self.assertRaises(ManifestError):
            read_manifest(path)

    def test_blank_token_is_a_manifest_error(self):
        """A blank id in a transcript is reported with its manifest line."""
        path = self.temp_path / "bad.jsonl"
        record = '{"id":"a","lang":"xx","feats":[[0.0],[1.0]],"tokens":[2,0],"frames":2}\n'
        path.write_text("\n" + record, encoding="utf-8")
        with self.assertRaises(ManifestError) as ctx:
            read_manifest(path)
        self.assertIn(":2:", str(ctx.exception))
        self.assertIn("blank", str(ctx.exception))

    def test_truncated_feature_file(self):
        """A feature file shorter than the frame count is an error."""
        (self.temp_path / "f.bin").write_bytes(b"\x01\x00")
        path = self.temp_path / "m.jsonl"
        path.write_text(
            '{"id":"a","lang":"xx","feats":"f.bin","tokens":[2],"frames":1}\n', encoding="utf-8"
        )
        with self.assertRaises(ManifestError):
            read_manifest(path)


if __name__ == "__main__":
    unittest.main()
