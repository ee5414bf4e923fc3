"""Learning without forgetting: distil from a frozen copy of the previous model."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from langcl.core import ops
from langcl.core.checkpoint import Checkpoint
from langcl.core.config import StrategyConfig
from langcl.core.errors import StrategyError
from langcl.core.model import PER_LANGUAGE, SeqModel
from langcl.core.synth import LanguageData
from langcl.core.tensor import Tensor, no_grad
from langcl.core.trainer import Batch
from langcl.strategies.base import Resolver, Strategy, TrainPlan
from langcl.strategies.state_io import StrategyState, split_prefixed


def softened(logits: np.ndarray, temperature: float) -> np.ndarray:
    z = logits / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def distillation_loss(
    student_logits: Tensor,
    teacher_logits: np.ndarray,
    temperature: float,
    mask: np.ndarray,
) -> Tensor:
    """Per-frame cross-entropy between temperature-softened teacher and student.

    Averaged over the frames where ``mask`` is 1. When student and teacher
    agree this equals the teacher's entropy, its minimum over students.
    """
    frames = float(mask.sum())
    p = softened(teacher_logits, temperature) * mask[..., None]
    log_q = ops.log_softmax(ops.scale(student_logits, 1.0 / temperature))
    return ops.scale(ops.sum_(ops.mul(log_q, ops.constant(p))), -1.0 / max(frames, 1.0))


class LwF(Strategy):
    kind = "LwF"

    def __init__(self, config: StrategyConfig, seed: int = 0) -> None:
        super().__init__(config, seed)
        self.teacher: SeqModel | None = None

    def on_base_trained(self, model: SeqModel, base: Sequence[LanguageData]) -> None:
        self.teacher = model.copy()

    def prepare_task(
        self, model: SeqModel, task: LanguageData, history: Sequence[LanguageData]
    ) -> TrainPlan:
        if self.teacher is None:
            self.teacher = model.copy()
        return TrainPlan(task.lang, list(task.train), list(task.val))

    def loss_hook(self, base_loss: Tensor, batch: Batch, model: SeqModel) -> Tensor:
        if self.teacher is None:
            raise StrategyError("LwF needs a teacher snapshot; call prepare_task first")
        if batch.output is None:
            return base_loss
        teacher, mask, temperature = self.teacher, batch.mask, self.config.lwf_T

        with no_grad():
            hidden = teacher.encode(batch.features)
        if model.regime == PER_LANGUAGE:
            # Average over every head the teacher can decode with.
            terms = []
            for task_id in teacher.heads:
                with no_grad():
                    target = teacher.logits(hidden, teacher.head_for(task_id)).data
                student = model.logits(batch.output.hidden, model.head_for(task_id))
                terms.append(distillation_loss(student, target, temperature, mask))
            kd = terms[0]
            for term in terms[1:]:
                kd = ops.add(kd, term)
            kd = ops.scale(kd, 1.0 / len(terms))
        else:
            condition = batch.task_id if teacher.knows(batch.task_id) else None
            with no_grad():
                target = teacher.logits(hidden, teacher.head_for(condition)).data
            kd = distillation_loss(batch.output.logits, target, temperature, mask)
        return ops.add(base_loss, ops.scale(kd, self.config.lwf_lambda))

    def finalize_task(
        self, model: SeqModel, task: LanguageData, history: Sequence[LanguageData]
    ) -> StrategyState:
        self.teacher = model.copy()
        return self.state_dict()

    def state_dict(self) -> StrategyState:
        if self.teacher is None:
            return StrategyState(self.kind)
        checkpoint = self.teacher.snapshot()
        return StrategyState(
            self.kind,
            {"teacher": checkpoint.meta, "frozen": sorted(checkpoint.frozen)},
            {f"teacher/{k}": v for k, v in checkpoint.arrays.items()},
        )

    def load_state_dict(self, state: StrategyState, model: SeqModel, resolve: Resolver) -> None:
        if "teacher" not in state.meta:
            self.teacher = None
            return
        checkpoint = Checkpoint(
            arrays=split_prefixed(state.arrays, "teacher/"),
            frozen=set(state.meta.get("frozen", [])),
            meta=state.meta["teacher"],
        )
        self.teacher = SeqModel.from_checkpoint(checkpoint)
