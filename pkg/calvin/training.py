"""Imitation training of the planners.

Each optimizer step takes one batch of :class:`~calvin.expert.TrainingSample`.
Samples that share a trajectory and observation time share one planner
forward pass; gradients of the groups are summed in sorted group order, so a
run is reproducible bit for bit from its seed.

Usage overview
--------------

1. Build a :class:`TrainConfig`.
2. Generate or read trajectories and call :func:`train`, or drive a
   :class:`Trainer` directly with :meth:`Trainer.run_steps` /
   :meth:`Trainer.run_epoch` when training must be paused and resumed.
3. Persist :meth:`Trainer.state_dict` with :mod:`calvin.checkpoint`.
"""
from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .backbones import trajectory_snapshots
from .errors import ConfigError, NonFiniteError, TrainingDivergedError
from .expert import Trajectory, TrainingSample, derive_seed, expand_partial, split_dataset
from .losses import LossReport, loss_a, loss_p, loss_q
from .maze import get_motion
from .model import PlanningModel, build_model
from .optim import AdamState, adam_step
from .rollout import PlannerPolicy, run_rollouts
from .tensor import Tensor, add, backward, scale

logger = logging.getLogger(__name__)

LEARNING_RATES = (0.01, 0.005, 0.001)
BETAS = (0.1, 0.25, 0.5, 0.75, 1.0)
ITERATION_COUNTS = (20, 40, 60, 80, 100)
HIDDEN_WIDTHS = (40, 80, 150)
MAX_EPOCHS = 30
METRIC_COLUMNS = ("epoch", "L_Q", "L_P", "L_A", "val_loss", "val_success")


@dataclass(frozen=True)
class TrainConfig:
    planner: str = "calvin"
    motion: str = "positional"
    backbone: str = "oracle"
    observability: str = "full"
    lr: float = 0.01
    beta: float = 1.0
    k: int = 60
    kernel_size: int = 3
    hidden: int = 150
    vin_hidden_actions: Optional[int] = 40
    lpn_hidden: int = 32
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    gamma: float = 0.99
    sample_cap: Optional[int] = 4
    validation_fraction: float = 0.1
    loss_q_coef: float = 1.0
    loss_p_coef: float = 1.0
    loss_a_coef: float = 1.0
    lattice_n: int = 7
    trajectories: int = 1000
    max_steps: Optional[int] = None
    workers: int = 1
    strict_grids: bool = False

    def __post_init__(self) -> None:
        if self.planner not in ("calvin", "vin"):
            raise ConfigError(f"planner must be 'calvin' or 'vin', got '{self.planner}'")
        if self.backbone not in ("oracle", "lpn"):
            raise ConfigError(f"backbone must be 'oracle' or 'lpn', got '{self.backbone}'")
        if self.observability not in ("full", "partial"):
            raise ConfigError(f"observability must be 'full' or 'partial', got '{self.observability}'")
        try:
            get_motion(self.motion)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0.0 < self.beta <= 1.0:
            raise ConfigError("beta must lie in (0, 1]")
        if self.k < 0:
            raise ConfigError("k must be non-negative")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be a positive odd integer")
        if not 0 <= self.epochs <= MAX_EPOCHS:
            raise ConfigError(f"epochs must lie in [0, {MAX_EPOCHS}]")
        if self.batch_size < 1 or self.hidden < 1 or self.lpn_hidden < 1:
            raise ConfigError("batch_size, hidden and lpn_hidden must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must lie in (0, 1)")
        if self.sample_cap is not None and self.sample_cap < 1:
            raise ConfigError("sample_cap must be positive")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in [0, 1)")
        if min(self.loss_q_coef, self.loss_p_coef, self.loss_a_coef) < 0:
            raise ConfigError("loss coefficients must be non-negative")
        if self.lattice_n < 1 or self.trajectories < 1:
            raise ConfigError("lattice_n and trajectories must be positive")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigError("max_steps must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        if self.strict_grids:
            self._check_grids()

    def _check_grids(self) -> None:
        for name, value, grid in (
            ("lr", self.lr, LEARNING_RATES),
            ("beta", self.beta, BETAS),
            ("k", self.k, ITERATION_COUNTS),
            ("hidden", self.hidden, HIDDEN_WIDTHS),
        ):
            if value not in grid:
                raise ConfigError(f"{name}={value} is outside the grid {grid}")

    @property
    def partial(self) -> bool:
        return self.observability == "partial"

    @property
    def step_limit(self) -> int:
        if self.max_steps is not None:
            return self.max_steps
        return 500 if self.partial else 200

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    @classmethod
    def from_mapping(cls, values: Mapping[str, object]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})


def model_for(config: TrainConfig) -> PlanningModel:
    return build_model(
        planner=config.planner,
        motion=config.motion,
        backbone=config.backbone,
        partial=config.partial,
        k=config.k,
        hidden=config.hidden,
        kernel_size=config.kernel_size,
        gamma=config.gamma,
        vin_hidden_actions=config.vin_hidden_actions,
        lpn_hidden=config.lpn_hidden,
        seed=config.seed,
    )


def expand_dataset(
    trajectories: Sequence[Trajectory], config: TrainConfig
) -> List[TrainingSample]:
    samples: List[TrainingSample] = []
    for index, trajectory in enumerate(trajectories):
        cap = None if config.sample_cap is None else config.sample_cap * len(trajectory)
        samples.extend(expand_partial(trajectory, cap, config.beta, config.partial, index))
    return samples


@dataclass
class EpochRecord:
    epoch: int
    l_q: float
    l_p: float
    l_a: float
    val_loss: float
    val_success: float

    def as_row(self) -> Dict[str, float]:
        return {
            "epoch": self.epoch,
            "L_Q": self.l_q,
            "L_P": self.l_p,
            "L_A": self.l_a,
            "val_loss": self.val_loss,
            "val_success": self.val_success,
        }


class Trainer:
    """Resumable optimisation loop over a fixed training set."""

    def __init__(
        self,
        config: TrainConfig,
        train_set: Sequence[Trajectory],
        val_set: Sequence[Trajectory] = (),
        model: Optional[PlanningModel] = None,
    ) -> None:
        if not train_set:
            raise ConfigError("Training needs at least one trajectory")
        self.config = config
        self.train_set = list(train_set)
        self.val_set = list(val_set)
        self.model = model or model_for(config)
        self.samples = expand_dataset(self.train_set, config)
        self.adam = AdamState(lr=config.lr)
        self.epoch = 0
        self.cursor = 0

    # Batching

    def _order(self, epoch: int) -> np.ndarray:
        return np.random.default_rng(derive_seed(self.config.seed, epoch)).permutation(len(self.samples))

    def _next_batch(self) -> List[TrainingSample]:
        order = self._order(self.epoch)
        batch = [self.samples[i] for i in order[self.cursor:self.cursor + self.config.batch_size]]
        self.cursor += len(batch)
        if self.cursor >= len(self.samples):
            self.epoch += 1
            self.cursor = 0
        return batch

    @property
    def steps_per_epoch(self) -> int:
        return -(-len(self.samples) // self.config.batch_size)

    # Losses

    def batch_loss(
        self,
        trajectories: Sequence[Trajectory],
        batch: Sequence[TrainingSample],
        params: Mapping[str, Tensor],
        with_grads: bool,
    ) -> Tuple[LossReport, Dict[str, np.ndarray]]:
        """Loss components of ``batch`` and, when asked, gradients summed in group order."""
        config, model = self.config, self.model
        names = {id(leaf): name for name, leaf in params.items()}
        grads: Dict[str, np.ndarray] = {}

        def accumulate(loss: Tensor) -> None:
            if not with_grads or not loss.requires_grad:
                return
            for leaf, grad in backward(loss).items():
                name = names[id(leaf)]
                grads[name] = grads[name] + grad if name in grads else grad

        groups: "OrderedDict[Tuple[int, int], List[TrainingSample]]" = OrderedDict()
        for sample in sorted(batch, key=lambda s: (s.trajectory, s.t_obs, s.t)):
            groups.setdefault((sample.trajectory, sample.t_obs), []).append(sample)

        snapshots: Dict[int, List[np.ndarray]] = {}
        for (index, t_obs), members in groups.items():
            if index not in snapshots:
                trajectory = trajectories[index]
                upto = max(t for (i, t) in groups if i == index)
                snapshots[index] = _snapshots(model, trajectory, upto)
        total_q = total_a = 0.0
        count = len(batch)
        # Per trajectory L_Q is sum_t w_t CE / |T|; the batch averages it over its trajectories.
        lengths = {index: len(trajectories[index]) for index in {s.trajectory for s in batch}}
        is_calvin = model.kind == "calvin"

        for (index, t_obs), members in groups.items():
            out = model.plan(snapshots[index][t_obs], params)
            states = [s.state for s in members]
            actions = [s.action for s in members]
            weights = [s.weight / lengths[s.trajectory] for s in members]
            lq = loss_q(out.q, states, actions, weights, normaliser=len(lengths))
            total_q += lq.item()
            group_loss = scale(lq, config.loss_q_coef)
            if is_calvin and config.loss_a_coef > 0:
                la = loss_a(out.a_valid, states, actions, normaliser=count)
                total_a += la.item()
                group_loss = add(group_loss, scale(la, config.loss_a_coef))
            accumulate(group_loss)

        total_p = 0.0
        if is_calvin and config.loss_p_coef > 0:
            transitions = [
                move
                for index in sorted({s.trajectory for s in batch})
                for move in trajectories[index].transitions()
            ]
            lp = loss_p(params[f"{model.planner.prefix}.P_logits"], transitions, model.motion)
            total_p = lp.item()
            accumulate(scale(lp, config.loss_p_coef))

        report = LossReport(l_q=total_q, l_p=total_p, l_a=total_a, samples=count)
        return report, grads

    def evaluate_loss(self, trajectories: Sequence[Trajectory]) -> LossReport:
        if not trajectories:
            return LossReport(0.0, 0.0, 0.0, 0)
        samples = expand_dataset(trajectories, self.config)
        report, _ = self.batch_loss(trajectories, samples, self.model.constants(), with_grads=False)
        return report

    # Optimisation

    def run_steps(self, count: int) -> List[LossReport]:
        reports = []
        for _ in range(count):
            reports.append(self._step())
        return reports

    def _step(self) -> LossReport:
        epoch, cursor = self.epoch, self.cursor
        batch = self._next_batch()
        params = self.model.store.leaves()
        try:
            report, grads = self.batch_loss(self.train_set, batch, params, with_grads=True)
        except NonFiniteError as exc:
            diagnostics = {
                "epoch": epoch,
                "cursor": cursor,
                "adam_step": self.adam.step,
                "op": exc.op,
                "batch": [(s.trajectory, s.t_obs, s.t) for s in batch],
            }
            logger.error(
                "Training diverged",
                extra={"event": "training_diverged", **{k: v for k, v in diagnostics.items() if k != "batch"}},
            )
            raise TrainingDivergedError(f"Non-finite values in '{exc.op}' at epoch {epoch}", diagnostics) from exc
        if not np.isfinite(report.total):
            raise TrainingDivergedError(
                f"Non-finite loss at epoch {epoch}", {"epoch": epoch, "cursor": cursor, "loss": report.total}
            )
        updated = adam_step(self.model.store.state_dict(), grads, self.adam)
        self.model.store.assign(updated)
        return report

    def run_epoch(self) -> EpochRecord:
        """Finish the current epoch, then validate."""
        epoch = self.epoch
        reports: List[LossReport] = []
        while self.epoch == epoch:
            reports.append(self._step())
        weights = np.array([r.samples for r in reports], dtype=np.float64)
        mean = lambda values: float(np.dot(values, weights) / weights.sum())  # noqa: E731
        val = self.evaluate_loss(self.val_set)
        record = EpochRecord(
            epoch=epoch + 1,
            l_q=mean([r.l_q for r in reports]),
            l_p=mean([r.l_p for r in reports]),
            l_a=mean([r.l_a for r in reports]),
            val_loss=val.total,
            val_success=self.validation_success(),
        )
        logger.info("Epoch completed", extra={"event": "epoch_completed", **record.as_row()})
        return record

    def validation_success(self) -> float:
        if not self.val_set:
            return 0.0
        tasks = [(t.maze, t.states[0]) for t in self.val_set]
        results = run_rollouts(
            tasks,
            lambda: PlannerPolicy(self.model),
            self.model.backbone,
            self.model.motion,
            self.config.step_limit,
            workers=self.config.workers,
        )
        return float(np.mean([r.success for r in results]))

    # Persistence

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = self.model.store.state_dict()
        for name in self.model.store:
            if name in self.adam.m:
                state[f"adam.m.{name}"] = self.adam.m[name].copy()
                state[f"adam.v.{name}"] = self.adam.v[name].copy()
        state["adam.step"] = np.array([self.adam.step], dtype=np.float32)
        state["train.epoch"] = np.array([self.epoch], dtype=np.float32)
        state["train.cursor"] = np.array([self.cursor], dtype=np.float32)
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        self.model.load_state(state)
        self.adam.m = {k[len("adam.m."):]: np.array(v) for k, v in state.items() if k.startswith("adam.m.")}
        self.adam.v = {k[len("adam.v."):]: np.array(v) for k, v in state.items() if k.startswith("adam.v.")}
        self.adam.step = int(np.asarray(state.get("adam.step", [0]))[0])
        self.epoch = int(np.asarray(state.get("train.epoch", [0]))[0])
        self.cursor = int(np.asarray(state.get("train.cursor", [0]))[0])


def _snapshots(model: PlanningModel, trajectory: Trajectory, upto: int) -> List[np.ndarray]:
    return trajectory_snapshots(model.backbone, trajectory.maze, trajectory.states, upto)


@dataclass
class TrainResult:
    best_state: "OrderedDict[str, np.ndarray]"
    best_epoch: int
    history: List[EpochRecord] = field(default_factory=list)
    model: Optional[PlanningModel] = None


def train(config: TrainConfig, dataset: Sequence[Trajectory]) -> TrainResult:
    """Train for ``config.epochs`` and keep the parameters of the lowest validation loss."""
    if not dataset:
        raise ConfigError("Training needs a non-empty dataset")
    train_set, val_set = split_dataset(dataset, config.validation_fraction)
    trainer = Trainer(config, train_set, val_set)
    best_state = trainer.model.state_dict()
    best_epoch, best_loss = 0, np.inf
    history: List[EpochRecord] = []
    for _ in range(config.epochs):
        record = trainer.run_epoch()
        history.append(record)
        if record.val_loss < best_loss:
            best_loss, best_epoch = record.val_loss, record.epoch
            best_state = trainer.model.state_dict()
    trainer.model.store.load_state(best_state)
    return TrainResult(best_state=best_state, best_epoch=best_epoch, history=history, model=trainer.model)


ABLATIONS: Tuple[Tuple[str, Dict[str, float]], ...] = (
    ("full", {}),
    ("no_L_A", {"loss_a_coef": 0.0}),
    ("no_L_P", {"loss_p_coef": 0.0}),
)


def ablation_configs(config: TrainConfig) -> List[Tuple[str, TrainConfig]]:
    """The full loss and the variants with the availability or motion loss removed."""
    return [(name, replace(config, **changes)) for name, changes in ABLATIONS]
