"""The sequential protocol: base pretraining, one stage per new language, references.

Every run starts from the same cached base model, keyed by the inputs that
determine it. Each stage draws its batches from a stream keyed by (seed,
language id), so a language's first sequential stage under fine-tuning and
its solo reference run see identical batches.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

from langcl.core.checkpoint import atomic_write_text
from langcl.core.config import (
    ExperimentConfig,
    StrategyConfig,
    base_hash,
    config_hash,
    reference_hash,
    to_dict,
)
from langcl.core.errors import CheckpointError, ConfigError
from langcl.core.manifest import read_suite
from langcl.core.metrics import ReferenceWers, WerMatrix
from langcl.core.model import EncoderConfig, SeqModel
from langcl.core.records import ExperimentRecord
from langcl.core.seeds import stream
from langcl.core.synth import LanguageData, SuiteData, Utterance, build_suite_data
from langcl.core.trainer import evaluate_base, evaluate_split, train_stage
from langcl.strategies import Strategy, TrainPlan, build_strategy
from langcl.strategies.finetune import FineTune
from langcl.strategies.state_io import load_state, save_state

logger = logging.getLogger(__name__)

BASE_TASK = "base"


def load_suite(config: ExperimentConfig) -> SuiteData:
    """Read manifests when ``data.manifest_dir`` is set, otherwise generate."""
    if config.data.manifest_dir:
        return read_suite(Path(config.data.manifest_dir), config.data.max_frames)
    return build_suite_data(config.data)


def select_new(config: ExperimentConfig, suite: SuiteData) -> list[LanguageData]:
    """The new languages in learning order, truncated to ``max_new``."""
    by_id = {d.lang: d for d in suite.new}
    order = config.experiment.order
    if order is None:
        chosen = list(suite.new)
    else:
        unknown = [lang for lang in order if lang not in by_id]
        if unknown:
            raise ConfigError(f"[experiment] order: unknown new language(s) {unknown}")
        if len(set(order)) != len(order):
            raise ConfigError("[experiment] order: languages repeat")
        chosen = [by_id[lang] for lang in order]
    if config.experiment.max_new is not None:
        chosen = chosen[: config.experiment.max_new]
    return chosen


def encoder_config(config: ExperimentConfig, suite: SuiteData) -> EncoderConfig:
    d_in = suite.base[0].train[0].features.shape[1] if suite.base[0].train else config.data.d_in
    return EncoderConfig(
        d_in=d_in,
        vocab_size=suite.vocab_size,
        d_model=config.model.d_model,
        n_layers=config.model.n_layers,
        context=config.model.context,
        regime=config.model.regime,
        init_scale=config.model.init_scale,
    )


def language_map(suite: SuiteData) -> dict[str, LanguageData]:
    return {d.lang: d for d in (*suite.base, *suite.new)}


def utterance_resolver(suite: SuiteData) -> dict[str, Utterance]:
    return {
        u.id: u
        for d in (*suite.base, *suite.new)
        for split in ("train", "val", "test")
        for u in d.split(split)
    }


def cache_dir(config: ExperimentConfig) -> Path:
    return Path(config.experiment.cache_dir)


def base_model(config: ExperimentConfig, suite: SuiteData) -> tuple[SeqModel, float]:
    """The jointly pretrained base model and the seconds spent training it (0 on a cache hit).

    The returned model is always rebuilt from its checkpoint, so fresh and
    cached runs continue from identical state.
    """
    path = cache_dir(config) / f"base-{base_hash(config)}.ckpt"
    if path.exists():
        logger.info(f"base model cache hit: {path}")
        return SeqModel.load(path), 0.0

    logger.info(f"base model cache miss, training {path.name}")
    seed = config.experiment.seed
    model = SeqModel(encoder_config(config, suite), seed=seed)
    for data in suite.base:
        model.register_language(data.lang, data.token_ids)
    plan = TrainPlan(
        BASE_TASK,
        [u for d in suite.base for u in d.train],
        [u for d in suite.base for u in d.val],
    )
    log = train_stage(
        model,
        FineTune(StrategyConfig(), seed),
        plan,
        config.training,
        config.training.base_epochs,
        stream(seed, "stage", BASE_TASK),
        language_map(suite),
        BASE_TASK,
    )
    checkpoint = model.snapshot()
    checkpoint.meta["base_hash"] = base_hash(config)
    checkpoint.save(path)
    return SeqModel.from_checkpoint(checkpoint), log.seconds


def evaluate_row(
    model: SeqModel, base: Sequence[LanguageData], learned: Sequence[LanguageData]
) -> list[float]:
    """WER on the joint base task followed by every learned language, in order."""
    return [evaluate_base(model, base), *(evaluate_split(model, d) for d in learned)]


def train_language(
    model: SeqModel,
    strategy: Strategy,
    task: LanguageData,
    history: Sequence[LanguageData],
    config: ExperimentConfig,
    languages: Mapping[str, LanguageData],
    stage: str | None = None,
) -> float:
    """One stage of the protocol; returns its wall-clock seconds."""
    model.register_language(task.lang, task.token_ids)
    plan = strategy.prepare_task(model, task, history)
    log = train_stage(
        model,
        strategy,
        plan,
        config.training,
        config.training.epochs_per_task,
        stream(config.experiment.seed, "stage", task.lang),
        languages,
        stage or task.lang,
    )
    strategy.finalize_task(model, task, history)
    return log.seconds


# stage checkpoints


def _stage_paths(out: Path, t: int) -> tuple[Path, Path]:
    stages = out / "stages"
    return stages / f"stage-{t:02d}.ckpt", stages / f"stage-{t:02d}.state"


def save_stage(
    out: Path,
    t: int,
    model: SeqModel,
    strategy: Strategy,
    matrix: WerMatrix,
    seconds: Mapping[str, float],
    chash: str,
) -> None:
    model_path, state_path = _stage_paths(out, t)
    model.save(model_path)
    save_state(strategy.state_dict(), state_path)
    progress = {
        "config_hash": chash,
        "stage": t,
        "wer_matrix": matrix.to_dict(),
        "stage_seconds": dict(seconds),
    }
    atomic_write_text(out / "stages" / "progress.json", json.dumps(progress, indent=2) + "\n")
    logger.debug(f"stage {t} checkpointed under {out / 'stages'}")


@dataclass
class ResumePoint:
    stage: int
    model: SeqModel
    matrix: WerMatrix
    seconds: dict[str, float]


def load_progress(
    out: Path, chash: str, strategy: Strategy, suite: SuiteData
) -> ResumePoint | None:
    progress_path = out / "stages" / "progress.json"
    if not progress_path.exists():
        return None
    progress = json.loads(progress_path.read_text(encoding="utf-8"))
    if progress.get("config_hash") != chash:
        raise CheckpointError(
            f"{progress_path} belongs to config {progress.get('config_hash')}, not {chash}"
        )
    t = int(progress["stage"])
    model_path, state_path = _stage_paths(out, t)
    model = SeqModel.load(model_path)
    state = load_state(state_path)
    if state.kind != strategy.kind:
        raise CheckpointError(f"{state_path} holds {state.kind} state, expected {strategy.kind}")
    utterances = utterance_resolver(suite)

    def resolve(utt_id: str) -> Utterance:
        try:
            return utterances[utt_id]
        except KeyError:
            raise CheckpointError(f"{state_path} refers to unknown utterance '{utt_id}'") from None

    strategy.load_state_dict(state, model, resolve)
    logger.info(f"resuming after stage {t} from {out / 'stages'}")
    return ResumePoint(
        t,
        model,
        WerMatrix.from_dict(progress["wer_matrix"]),
        {k: float(v) for k, v in progress.get("stage_seconds", {}).items()},
    )


# references


@dataclass
class ReferenceRuns:
    """Reference WERs keyed by language id, so any learning order can use them."""

    joint: dict[str, float] = field(default_factory=dict)
    solo: dict[str, float] = field(default_factory=dict)
    budget: dict[str, Any] = field(default_factory=dict)

    def for_tasks(self, tasks: Sequence[str]) -> ReferenceWers:
        refs = ReferenceWers()
        for t, lang in enumerate(tasks, 1):
            if lang in self.joint:
                refs.joint[t] = self.joint[lang]
            if t > 1 and lang in self.solo:
                refs.solo[t] = self.solo[lang]
        return refs

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> ReferenceRuns:
        return cls(
            joint={k: float(v) for k, v in raw["joint"].items()},
            solo={k: float(v) for k, v in raw["solo"].items()},
            budget=dict(raw.get("budget", {})),
        )


def run_references(
    config: ExperimentConfig, suite: SuiteData | None = None
) -> ReferenceRuns:
    """Joint training on every language and one solo fine-tune per new language.

    Both start from the base model and use the per-language epoch budget and
    optimizer of the main run. Results are cached by ``reference_hash``.
    """
    path = cache_dir(config) / f"refs-{reference_hash(config)}.json"
    if path.exists():
        logger.info(f"reference cache hit: {path}")
        return ReferenceRuns.from_dict(json.loads(path.read_text(encoding="utf-8")))

    suite = suite or load_suite(config)
    languages = language_map(suite)
    seed = config.experiment.seed
    runs = ReferenceRuns(
        budget={
            "init": "base",
            "epochs": config.training.epochs_per_task,
            "joint_languages": [d.lang for d in suite.new],
            "optimizer": "adamw",
            "lr": config.training.lr,
        }
    )

    model, _ = base_model(config, suite)
    for data in suite.new:
        model.register_language(data.lang, data.token_ids)
    everything = (*suite.base, *suite.new)
    plan = TrainPlan(
        "joint",
        [u for d in everything for u in d.train],
        [u for d in everything for u in d.val],
    )
    log = train_stage(
        model,
        FineTune(StrategyConfig(), seed),
        plan,
        config.training,
        config.training.epochs_per_task,
        stream(seed, "stage", "joint"),
        languages,
        "joint",
    )
    runs.joint[BASE_TASK] = evaluate_base(model, suite.base)
    for data in suite.new:
        runs.joint[data.lang] = evaluate_split(model, data)
    runs.budget["joint_seconds"] = log.seconds

    for data in suite.new:
        solo, _ = base_model(config, suite)
        train_language(
            solo, FineTune(StrategyConfig(), seed), data, [], config, languages, f"solo-{data.lang}"
        )
        runs.solo[data.lang] = evaluate_split(solo, data)

    atomic_write_text(path, json.dumps(runs.to_dict(), indent=2) + "\n")
    return runs


def budget_warnings(runs: ReferenceRuns, order: Sequence[str]) -> list[str]:
    warnings = []
    joint_langs = set(runs.budget.get("joint_languages", []))
    if joint_langs and joint_langs != set(order):
        warnings.append(
            f"joint reference trained on {len(joint_langs)} new languages, "
            f"this run learned {len(order)}"
        )
    missing = [lang for lang in order if lang not in runs.solo]
    if missing:
        warnings.append(f"no solo reference for {', '.join(missing)}")
    return warnings


# the sequence


def run_sequence(
    config: ExperimentConfig,
    out: Path | None = None,
    resume: bool = False,
    suite: SuiteData | None = None,
    references: ReferenceRuns | None = None,
) -> ExperimentRecord:
    """Base pretraining, then prepare/train/finalize/evaluate for every new language."""
    suite = suite or load_suite(config)
    new = select_new(config, suite)
    languages = language_map(suite)
    seed = config.experiment.seed
    chash = config_hash(config)
    tasks = [BASE_TASK, *(d.lang for d in new)]
    strategy = build_strategy(config.strategy, seed)
    logger.info(f"{strategy.kind}: {len(new)} new language(s), order {tasks[1:]}")

    resumed = None
    if resume and out is not None:
        resumed = load_progress(Path(out), chash, strategy, suite)

    if resumed is not None:
        model, matrix, seconds, start = (
            resumed.model,
            resumed.matrix,
            resumed.seconds,
            resumed.stage + 1,
        )
    else:
        model, base_seconds = base_model(config, suite)
        strategy.on_base_trained(model, suite.base)
        matrix = WerMatrix(tasks)
        matrix.set_row(1, evaluate_row(model, suite.base, []))
        seconds = {BASE_TASK: base_seconds}
        start = 2

    history: list[LanguageData] = list(new[: start - 2])
    for t in range(start, len(tasks) + 1):
        task = new[t - 2]
        logger.info(f"stage {t}/{len(tasks)}: {task.lang}")
        seconds[task.lang] = train_language(model, strategy, task, history, config, languages)
        history.append(task)
        matrix.set_row(t, evaluate_row(model, suite.base, history))
        logger.info(
            f"stage {t} done in {seconds[task.lang]:.1f}s, "
            f"WER on {task.lang} {100 * matrix.get(t, t):.2f}%"
        )
        if out is not None:
            save_stage(Path(out), t, model, strategy, matrix, seconds, chash)

    if references is None:
        references = run_references(config, suite)
    record = ExperimentRecord(
        config_hash=chash,
        reference_hash=reference_hash(config),
        strategy=strategy.kind,
        regime=config.model.regime,
        seed=seed,
        order=tasks[1:],
        matrix=matrix,
        references=references.for_tasks(tasks),
        stage_seconds=seconds,
        warnings=budget_warnings(references, tasks[1:]),
        reference_budget=references.budget,
        config=to_dict(config),
    )
    record.refresh_metrics()
    for warning in record.warnings:
        logger.warning(warning)
    return record


def with_max_new(config: ExperimentConfig, max_new: int | None) -> ExperimentConfig:
    return replace(config, experiment=replace(config.experiment, max_new=max_new))
