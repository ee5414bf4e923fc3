"""Line-delimited JSON manifests and raw feature files.

One record per line::

    {"id": "...", "lang": "...", "feats": "feats/x.bin" | [[...], ...],
     "tokens": [..], "frames": N}

Feature files hold a little-endian ``<u4 d_in><u4 frames>`` header followed by
``frames * d_in`` ``<f8`` values in row-major order.
"""

from __future__ import annotations

import json
import logging
import struct
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from langcl.core.checkpoint import atomic_write_bytes, atomic_write_text
from langcl.core.ctc import BLANK
from langcl.core.errors import ManifestError
from langcl.core.synth import SPLITS, LanguageData, SuiteData, Utterance

logger = logging.getLogger(__name__)

_HEADER = struct.Struct("<II")
_FIELDS = ("id", "lang", "feats", "tokens", "frames")


@dataclass(frozen=True)
class LanguageInfo:
    lang: str
    token_ids: tuple[int, ...]
    boundary: int | None
    granularity: str


def write_features(path: Path, features: np.ndarray) -> None:
    frames, d_in = features.shape
    payload = _HEADER.pack(d_in, frames) + np.ascontiguousarray(features, dtype="<f8").tobytes()
    atomic_write_bytes(path, payload)


def read_features(path: Path) -> np.ndarray:
    try:
        payload = Path(path).read_bytes()
    except OSError as e:
        raise ManifestError(f"cannot read features {path}: {e}") from e
    if len(payload) < _HEADER.size:
        raise ManifestError(f"{path}: truncated feature header")
    d_in, frames = _HEADER.unpack_from(payload)
    body = payload[_HEADER.size :]
    if len(body) != d_in * frames * 8:
        raise ManifestError(
            f"{path}: header says {frames}x{d_in} values, file holds {len(body) // 8}"
        )
    return np.frombuffer(body, dtype="<f8").reshape(frames, d_in).copy()


def write_manifest(
    path: Path,
    utterances: Iterable[Utterance],
    feats_dir: Path | None = None,
) -> None:
    """Write a manifest; features go to ``feats_dir`` files or inline arrays."""
    path = Path(path)
    lines = []
    for utt in utterances:
        if feats_dir is not None:
            feat_path = Path(feats_dir) / f"{utt.id}.bin"
            write_features(feat_path, utt.features)
            try:
                feats: object = str(feat_path.relative_to(path.parent))
            except ValueError:
                feats = str(feat_path)
        else:
            feats = utt.features.tolist()
        record = {
            "id": utt.id,
            "lang": utt.lang,
            "feats": feats,
            "tokens": list(utt.tokens),
            "frames": utt.frames,
        }
        lines.append(json.dumps(record, separators=(",", ":")))
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_manifest(
    path: Path,
    vocabularies: dict[str, frozenset[int]] | None = None,
    max_frames: int | None = None,
    d_in: int | None = None,
) -> list[Utterance]:
    """Read and validate a manifest. Blank lines are skipped."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from e

    utterances = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue

        def bad(detail: str, number: int = number) -> ManifestError:
            return ManifestError(f"{path}:{number}: {detail}")

        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise bad(f"malformed JSON ({e.msg})") from e
        if not isinstance(record, dict):
            raise bad("record is not an object")
        missing = [f for f in _FIELDS if f not in record]
        if missing:
            raise bad(f"missing field(s) {', '.join(missing)}")

        feats = record["feats"]
        try:
            if isinstance(feats, str):
                features = read_features(path.parent / feats)
            else:
                features = np.asarray(feats, dtype=np.float64)
        except ValueError as e:
            raise bad(f"unreadable features: {e}") from e
        if features.ndim != 2:
            raise bad(f"features must be a (frames, d_in) matrix, got shape {features.shape}")

        tokens = record["tokens"]
        if not isinstance(tokens, list) or not all(isinstance(t, int) for t in tokens):
            raise bad("tokens must be a list of integers")
        if any(t <= BLANK for t in tokens):
            raise bad("tokens must be positive ids; 0 is the blank")
        frames = record["frames"]
        if frames != features.shape[0]:
            raise bad(f"frames={frames} but features have {features.shape[0]} rows")
        if max_frames is not None and frames > max_frames:
            raise bad(f"{frames} frames exceeds the limit of {max_frames}")
        if d_in is not None and features.shape[1] != d_in:
            raise bad(f"feature dimension {features.shape[1]}, expected {d_in}")
        lang = str(record["lang"])
        if vocabularies is not None:
            vocab = vocabularies.get(lang)
            if vocab is None:
                raise bad(f"unknown language '{lang}'")
            oov = sorted(set(tokens) - vocab)
            if oov:
                raise bad(f"token id(s) {oov} outside the vocabulary of '{lang}'")
        utterances.append(Utterance(str(record["id"]), lang, features, tuple(tokens)))
    return utterances


def write_suite(root: Path, suite: SuiteData, inline: bool = False) -> list[Path]:
    """Write every language split as ``<root>/<lang>/<split>.jsonl``."""
    root = Path(root)
    written = []
    infos = []
    for data in (*suite.base, *suite.new):
        infos.append(
            {
                "lang": data.lang,
                "token_ids": list(data.token_ids),
                "boundary": data.boundary,
                "granularity": data.granularity,
                "role": "base" if data in suite.base else "new",
            }
        )
        for split in SPLITS:
            target = root / data.lang / f"{split}.jsonl"
            feats_dir = None if inline else root / data.lang / "feats"
            write_manifest(target, data.split(split), feats_dir)
            written.append(target)
    index = {"vocab_size": suite.vocab_size, "languages": infos}
    atomic_write_text(root / "languages.json", json.dumps(index, indent=2) + "\n")
    logger.info(f"wrote {len(written)} manifests under {root}")
    return written


def read_suite(root: Path, max_frames: int | None = None) -> SuiteData:
    root = Path(root)
    try:
        index = json.loads((root / "languages.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"cannot read {root / 'languages.json'}: {e}") from e

    base: list[LanguageData] = []
    new: list[LanguageData] = []
    for entry in index["languages"]:
        info = LanguageInfo(
            entry["lang"], tuple(entry["token_ids"]), entry["boundary"], entry["granularity"]
        )
        vocab = {info.lang: frozenset(info.token_ids)}
        data = LanguageData(info.lang, info.token_ids, info.boundary, info.granularity)
        for split in SPLITS:
            data.split(split).extend(
                read_manifest(root / info.lang / f"{split}.jsonl", vocab, max_frames)
            )
        (base if entry.get("role") == "base" else new).append(data)
    return SuiteData(base, new, int(index["vocab_size"]))
