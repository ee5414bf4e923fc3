"""Batching, the per-stage training loop and WER evaluation."""

from __future__ import annotations

import logging
import math
import time
from collections import defaultdict
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from langcl.core import ops
from langcl.core.config import TrainingConfig
from langcl.core.ctc import TokenSeq, ctc_loss_batch, greedy_decode
from langcl.core.errors import DivergenceError
from langcl.core.model import ModelOutput, SeqModel
from langcl.core.optim import OptimState, clip_grad_norm, optim_step, plateau_decay
from langcl.core.scoring import WerScore, aggregate, score
from langcl.core.synth import LanguageData, Utterance
from langcl.core.tensor import Tape, Tensor, no_grad

if TYPE_CHECKING:
    from langcl.strategies.base import Strategy, TrainPlan

logger = logging.getLogger(__name__)

EVAL_BATCH = 32


@dataclass
class Batch:
    """A language-homogeneous batch, padded to its longest utterance."""

    task_id: str
    utterances: list[Utterance]
    features: np.ndarray
    lengths: list[int]
    output: ModelOutput | None = None

    @property
    def mask(self) -> np.ndarray:
        """(batch, time) indicator of valid frames."""
        frames = np.arange(self.features.shape[1])
        return (frames[None, :] < np.asarray(self.lengths)[:, None]).astype(np.float64)


@dataclass
class EpochLog:
    epoch: int
    loss: float
    val_wer: float
    lr: float


@dataclass
class StageLog:
    stage: str
    epochs: list[EpochLog] = field(default_factory=list)
    seconds: float = 0.0
    steps: int = 0


def collate(utterances: Sequence[Utterance]) -> tuple[np.ndarray, list[int]]:
    lengths = [u.frames for u in utterances]
    d_in = utterances[0].features.shape[1]
    features = np.zeros((len(utterances), max(lengths), d_in))
    for i, utt in enumerate(utterances):
        features[i, : utt.frames] = utt.features
    return features, lengths


def make_batches(
    utterances: Sequence[Utterance], batch_size: int, rng: np.random.Generator
) -> list[list[Utterance]]:
    """Shuffle within each language, chunk, then shuffle the chunk order."""
    by_lang: dict[str, list[Utterance]] = defaultdict(list)
    for utt in utterances:
        by_lang[utt.lang].append(utt)
    chunks: list[list[Utterance]] = []
    for lang in sorted(by_lang):
        items = by_lang[lang]
        order = rng.permutation(len(items))
        for start in range(0, len(items), batch_size):
            chunks.append([items[i] for i in order[start : start + batch_size]])
    return [chunks[i] for i in rng.permutation(len(chunks))]


def batch_loss(model: SeqModel, utterances: Sequence[Utterance]) -> tuple[Tensor, Batch]:
    """Mean CTC loss of one language-homogeneous batch."""
    lang = utterances[0].lang
    features, lengths = collate(utterances)
    batch = Batch(lang, list(utterances), features, lengths)
    batch.output = model.forward(features, lang)
    log_probs = ops.log_softmax(batch.output.logits)
    targets = [batch.output.head.to_local(u.tokens) for u in utterances]
    return ctc_loss_batch(log_probs, targets, lengths), batch


def mixed_batch_loss(model: SeqModel, utterances: Sequence[Utterance]) -> Tensor:
    """Mean CTC loss over utterances of several languages, one forward per language."""
    groups: dict[str, list[Utterance]] = defaultdict(list)
    for utt in utterances:
        groups[utt.lang].append(utt)
    total: Tensor | None = None
    for lang in sorted(groups):
        loss, _ = batch_loss(model, groups[lang])
        weighted = ops.scale(loss, len(groups[lang]) / len(utterances))
        total = weighted if total is None else ops.add(total, weighted)
    assert total is not None
    return total


def evaluate(
    model: SeqModel, utterances: Sequence[Utterance], language: LanguageData
) -> WerScore:
    """Corpus-level error rate of greedy transcripts for one language."""
    scores = []
    with no_grad():
        for start in range(0, len(utterances), EVAL_BATCH):
            chunk = utterances[start : start + EVAL_BATCH]
            features, lengths = collate(chunk)
            out = model.forward(features, language.lang)
            for i, utt in enumerate(chunk):
                local = greedy_decode(out.logits.data[i, : lengths[i]])
                hyp = TokenSeq(out.head.to_global(local.tokens), language.lang)
                granularity = "word" if language.granularity == "word" else "char"
                scores.append(score(utt.transcript, hyp, granularity, language.boundary))
    return aggregate(scores)


def evaluate_split(model: SeqModel, language: LanguageData, split: str = "test") -> float:
    return evaluate(model, language.split(split), language).rate


def evaluate_base(model: SeqModel, base: Sequence[LanguageData], split: str = "test") -> float:
    """Unweighted mean of per-language error rates over the base languages."""
    return float(np.mean([evaluate_split(model, lang, split) for lang in base]))


def validation_wer(
    model: SeqModel,
    utterances: Sequence[Utterance],
    languages: Mapping[str, LanguageData],
) -> float:
    groups: dict[str, list[Utterance]] = defaultdict(list)
    for utt in utterances:
        groups[utt.lang].append(utt)
    scores = [evaluate(model, groups[lang], languages[lang]) for lang in sorted(groups)]
    return aggregate(scores).rate


def new_optimizer(config: TrainingConfig, lr_scales: dict[str, float] | None = None) -> OptimState:
    return OptimState(
        lr=config.lr,
        weight_decay=config.weight_decay,
        betas=tuple(config.betas),  # type: ignore[arg-type]
        eps=config.eps,
        lr_scales=dict(lr_scales or {}),
    )


def train_stage(
    model: SeqModel,
    strategy: Strategy,
    plan: TrainPlan,
    config: TrainingConfig,
    epochs: int,
    rng: np.random.Generator,
    languages: Mapping[str, LanguageData],
    stage: str,
) -> StageLog:
    """Train on ``plan`` for ``epochs`` epochs with a fresh optimizer."""
    log = StageLog(stage)
    state = new_optimizer(config, strategy.lr_scales())
    started = time.perf_counter()
    logger.info(f"[{stage}] {len(plan.train)} training utterances, {epochs} epoch(s)")

    for epoch in range(1, epochs + 1):
        losses = []
        for step, utterances in enumerate(make_batches(plan.train, config.batch_size, rng), 1):
            with Tape() as tape:
                loss, batch = batch_loss(model, utterances)
                loss = strategy.loss_hook(loss, batch, model)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(stage, epoch, step, value)
            tape.backward(loss)
            strategy.grad_hook(model, batch)
            clip_grad_norm(model.params, config.clip_norm)
            optim_step(model.params, state)
            losses.append(value)
            log.steps += 1

        val = validation_wer(model, plan.val, languages) if plan.val else float("nan")
        if plan.val:
            plateau_decay(state, val, config.plateau_factor)
        mean_loss = float(np.mean(losses)) if losses else float("nan")
        log.epochs.append(EpochLog(epoch, mean_loss, val, state.lr))
        logger.info(
            f"[{stage}] epoch {epoch}/{epochs} loss {mean_loss:.4f} "
            f"val WER {100 * val:.2f}% lr {state.lr:.3g}"
        )

    log.seconds = time.perf_counter() - started
    return log
