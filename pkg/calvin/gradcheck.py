"""Finite-difference verification of the differentiation engine.

Every checked function maps a dictionary of named parameters to a scalar
loss. The analytic gradients from :func:`~calvin.tensor.backward` are compared
with central differences at perturbation ``1e-3``; a coordinate fails when the
two disagree by more than ``max(atol, rtol * |fd|)``. Coordinates that sit on a
kink (relu at zero, a tie inside a max) are detected from the one-sided
differences and skipped.

Suites
------

``ops``
    every op of :mod:`calvin.tensor` on random inputs.
``calvin``
    the full imitation loss (``L_Q + L_A + L_P``) of a small CALVIN on a 5x5
    maze, positional and embodied.
``vin``
    the imitation loss of a small VIN on the same maze.
``lpn``
    synthetic scans, pooling, the map encoder and CALVIN, end to end.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .expert import Trajectory, derive_seed, make_trajectory
from .losses import loss_a, loss_p, loss_q
from .maze import Maze, generate_maze
from .model import PlanningModel, build_model
from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    channel_max,
    concat,
    conv2d,
    gather_cells,
    index_rows,
    log_softmax,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    sub,
    tensor_sum,
)

logger = logging.getLogger(__name__)

EPSILON = 1e-3
ATOL = 1e-3
RTOL = 1e-3
DEFAULT_SEEDS = tuple(range(20))
SUITES = ("ops", "calvin", "vin", "lpn")

LossFn = Callable[[Mapping[str, Tensor]], Tensor]
Case = Tuple[Dict[str, np.ndarray], LossFn]


@dataclass
class GradCheckResult:
    name: str
    seed: int
    checked: int = 0
    skipped: int = 0
    max_error: float = 0.0
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures and self.checked > 0


@dataclass
class GradCheckReport:
    results: List[GradCheckResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self) -> List[GradCheckResult]:
        return [r for r in self.results if not r.passed]

    def to_dict(self) -> Dict[str, object]:
        return {
            "passed": self.passed,
            "checks": len(self.results),
            "failed": [asdict(r) for r in self.failures],
            "max_error": max((r.max_error for r in self.results), default=0.0),
        }


def _loss_value(fn: LossFn, values: Mapping[str, np.ndarray]) -> float:
    return float(np.float64(fn({name: as_tensor(v) for name, v in values.items()}).item()))


def check_gradients(
    name: str,
    fn: LossFn,
    values: Mapping[str, np.ndarray],
    seed: int = 0,
    max_coords: Optional[int] = None,
    eps: float = EPSILON,
    atol: float = ATOL,
    rtol: float = RTOL,
) -> GradCheckResult:
    """Compare analytic gradients of ``fn`` at ``values`` with central differences.

    With ``max_coords`` only that many randomly chosen coordinates of each
    parameter are checked.
    """
    values = {key: np.array(v, dtype=np.float32) for key, v in values.items()}
    leaves = {key: Tensor.parameter(v, name=key) for key, v in values.items()}
    grads = backward(fn(leaves), leaves.values())
    result = GradCheckResult(name=name, seed=seed)
    rng = np.random.default_rng(derive_seed(seed, len(values)))
    base = _loss_value(fn, values)

    for key, value in values.items():
        analytic = np.asarray(grads[leaves[key]], dtype=np.float64)
        coords = np.arange(value.size)
        if max_coords is not None and value.size > max_coords:
            coords = np.sort(rng.choice(value.size, size=max_coords, replace=False))
        for flat in coords:
            index = np.unravel_index(int(flat), value.shape)
            plus, minus = dict(values), dict(values)
            plus[key], minus[key] = value.copy(), value.copy()
            plus[key][index] = value[index] + np.float32(eps)
            minus[key][index] = value[index] - np.float32(eps)
            up, down = float(plus[key][index]) - float(value[index]), float(value[index]) - float(minus[key][index])
            f_plus, f_minus = _loss_value(fn, plus), _loss_value(fn, minus)
            central = (f_plus - f_minus) / (up + down)
            tol = max(atol, rtol * abs(central))
            if abs((f_plus - base) / up - (base - f_minus) / down) > 2 * tol:
                result.skipped += 1
                continue
            error = abs(analytic[index] - central)
            result.checked += 1
            result.max_error = max(result.max_error, error)
            if error > tol:
                result.failures.append(f"{key}{list(index)}: analytic {analytic[index]:.6g} vs fd {central:.6g}")
    return result


# Op suite


def _weighted(out: Tensor, weights: np.ndarray) -> Tensor:
    return tensor_sum(mul(out, weights))


def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.05) -> np.ndarray:
    x = rng.uniform(margin, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return x.astype(np.float32)


def op_cases(rng: np.random.Generator) -> Dict[str, Case]:
    normal = lambda *shape: rng.normal(size=shape).astype(np.float32)  # noqa: E731
    w34 = normal(3, 4)
    cells = np.array([[0, 1], [2, 3], [0, 1]])
    targets = rng.integers(5, size=4)
    ce_weights = rng.uniform(0.0, 2.0, size=4)

    return {
        "add": ({"a": normal(3, 4), "b": normal(1, 4)}, lambda p: _weighted(add(p["a"], p["b"]), w34)),
        "sub": ({"a": normal(3, 4), "b": normal(3, 1)}, lambda p: _weighted(sub(p["a"], p["b"]), w34)),
        "mul": ({"a": normal(3, 4), "b": normal(3, 4)}, lambda p: _weighted(mul(p["a"], p["b"]), w34)),
        "scale": ({"a": normal(3, 4)}, lambda p: _weighted(scale(p["a"], -1.7), w34)),
        "relu": ({"a": _away_from_zero(rng, (3, 4))}, lambda p: _weighted(relu(p["a"]), w34)),
        "sigmoid": ({"a": normal(3, 4)}, lambda p: _weighted(sigmoid(p["a"]), w34)),
        "reshape": ({"a": normal(2, 6)}, lambda p: _weighted(reshape(p["a"], (3, 4)), w34)),
        "sum": ({"a": normal(3, 4, 2)}, lambda p: _weighted(tensor_sum(p["a"], axis=2), w34)),
        "index_rows": ({"a": normal(4, 4)}, lambda p: _weighted(index_rows(p["a"], [3, 0, 3]), w34)),
        "gather_cells": (
            {"q": normal(4, 3, 4)},
            lambda p: _weighted(gather_cells(p["q"], cells), w34),
        ),
        "concat": (
            {"a": normal(1, 4), "b": normal(2, 4)},
            lambda p: _weighted(concat([p["a"], p["b"]], axis=0), w34),
        ),
        "softmax": ({"a": normal(3, 4)}, lambda p: _weighted(softmax(p["a"], axis=1), w34)),
        "log_softmax": ({"a": normal(3, 4)}, lambda p: _weighted(log_softmax(p["a"], axis=0), w34)),
        "channel_max": (
            {"q": (rng.permutation(24).reshape(3, 2, 4) * 0.1).astype(np.float32)},
            lambda p: _weighted(channel_max(p["q"])[0], w34[:2]),
        ),
        "softmax_cross_entropy": (
            {"logits": normal(4, 5)},
            lambda p: softmax_cross_entropy(p["logits"], targets, ce_weights),
        ),
        "conv2d": (
            {"x": normal(2, 5, 5), "kernel": normal(3, 2, 3, 3)},
            lambda p: _weighted(conv2d(p["x"], p["kernel"]), np.ones((3, 5, 5), dtype=np.float32) * 0.3),
        ),
    }


# End-to-end suites


def _imitation_loss(model: PlanningModel, trajectory: Trajectory, snapshot: np.ndarray) -> LossFn:
    states, actions = list(trajectory.states), list(trajectory.actions)
    weights = np.linspace(0.5, 1.0, len(actions))
    transitions = trajectory.transitions()
    prefix = model.planner.prefix  # type: ignore[attr-defined]

    def fn(params: Mapping[str, Tensor]) -> Tensor:
        out = model.plan(snapshot, params)
        loss = loss_q(out.q, states, actions, weights)
        if model.kind == "calvin":
            loss = add(loss, loss_a(out.a_valid, states, actions))
            loss = add(loss, loss_p(params[f"{prefix}.P_logits"], transitions, model.motion))
        return loss

    return fn


def _jitter(model: PlanningModel, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    """Parameters with the zero-initialised motion and reward kernels moved off their start."""
    values = dict(model.state_dict())
    for name, value in values.items():
        if name.endswith(("P_logits", "R_hat")):
            values[name] = (value + rng.normal(scale=0.5, size=value.shape)).astype(np.float32)
    return values


def small_maze(seed: int) -> Maze:
    """A 5x5 maze with its task between the first and last free cells.

    Lattice 2 mazes are too short for the distance rule of task placement.
    """
    maze = generate_maze(2, derive_seed(seed, 5))
    free = maze.free_cells()
    return maze.with_task(free[0], free[-1])


def model_case(kind: str, seed: int, motion: str = "positional", backbone: str = "oracle") -> Case:
    maze = small_maze(seed)
    model = build_model(kind, motion, backbone, partial=False, k=5, hidden=8, lpn_hidden=8, seed=seed)
    episode = model.backbone.start(maze)  # type: ignore[attr-defined]
    trajectory = make_trajectory(maze, seed, model.motion)
    for state in trajectory.states[:3]:
        episode.observe(state)
    fn = _imitation_loss(model, trajectory, episode.snapshot())
    return _jitter(model, np.random.default_rng(seed)), fn


def suite_cases(suite: str, seed: int) -> Dict[str, Case]:
    if suite == "ops":
        return op_cases(np.random.default_rng(derive_seed(seed, 1)))
    if suite == "calvin":
        return {
            "calvin-positional": model_case("calvin", seed),
            "calvin-embodied": model_case("calvin", seed, motion="embodied"),
        }
    if suite == "vin":
        return {"vin-positional": model_case("vin", seed)}
    if suite == "lpn":
        return {"lpn-calvin": model_case("calvin", seed, backbone="lpn")}
    raise ValueError(f"Unknown gradcheck suite '{suite}'; expected one of {SUITES}")


def run_gradcheck(
    seeds: Iterable[int] = DEFAULT_SEEDS,
    suites: Sequence[str] = SUITES,
    max_coords: Optional[int] = 6,
) -> GradCheckReport:
    """Run the selected suites for every seed; model suites check ``max_coords`` entries per parameter."""
    results: List[GradCheckResult] = []
    for seed in seeds:
        for suite in suites:
            limit = None if suite == "ops" else max_coords
            for name, (values, fn) in suite_cases(suite, seed).items():
                result = check_gradients(name, fn, values, seed=seed, max_coords=limit)
                if not result.passed:
                    logger.warning(
                        "Gradient check failed",
                        extra={
                            "event": "gradcheck_failed",
                            "check": name,
                            "seed": seed,
                            "failures": result.failures[:5],
                        },
                    )
                results.append(result)
    report = GradCheckReport(results)
    logger.info(
        "Gradient checks finished",
        extra={"event": "gradcheck_finished", "checks": len(results), "passed": report.passed},
    )
    return report
