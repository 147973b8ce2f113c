"""A planner, its perception backbone and their parameters, bundled for training and rollout."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional

import numpy as np

from . import checkpoint
from .backbones import build_backbone
from .maze import Motion, get_motion
from .nn import ParameterStore
from .planners import PlannerOutput, build_planner
from .tensor import Tensor, as_tensor


@dataclass
class PlanningModel:
    planner: object
    backbone: object
    store: ParameterStore
    motion: Motion
    k: int

    @property
    def kind(self) -> str:
        return self.planner.kind  # type: ignore[attr-defined]

    def constants(self) -> Dict[str, Tensor]:
        """Parameters as non-trainable tensors, for planning without a gradient graph."""
        return {name: as_tensor(self.store[name]) for name in self.store}

    def plan(
        self,
        snapshot: np.ndarray,
        params: Optional[Mapping[str, Tensor]] = None,
        v_init: Optional[Tensor] = None,
        k: Optional[int] = None,
    ) -> PlannerOutput:
        params = self.constants() if params is None else params
        obs = self.backbone.encode(snapshot, params)  # type: ignore[attr-defined]
        return self.planner.forward(obs, params, self.k if k is None else k, v_init)  # type: ignore[attr-defined]

    def state_dict(self):
        return self.store.state_dict()

    def load_state(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        """Load parameters, ignoring optimizer and trainer entries of a training checkpoint."""
        params = {name: value for name, value in state.items() if not name.startswith(("adam.", "train."))}
        self.store.load_state(params, strict=strict)

    def save(self, path: str) -> None:
        checkpoint.save(path, self.store.state_dict())

    def load(self, path: str) -> None:
        self.load_state(checkpoint.load(path))


def build_model(
    planner: str = "calvin",
    motion: str = "positional",
    backbone: str = "oracle",
    partial: bool = True,
    k: int = 60,
    hidden: int = 150,
    kernel_size: int = 3,
    gamma: float = 0.99,
    vin_hidden_actions: Optional[int] = 40,
    lpn_hidden: int = 32,
    seed: int = 0,
) -> PlanningModel:
    motion_model = get_motion(motion)
    perception = build_backbone(backbone, partial=partial, hidden=lpn_hidden)
    net = build_planner(
        planner,
        motion_model,
        perception.channels,
        hidden=hidden,
        kernel_size=kernel_size,
        gamma=gamma,
        hidden_actions=vin_hidden_actions,
    )
    store = ParameterStore(seed)
    perception.init_params(store)
    net.init_params(store)
    return PlanningModel(planner=net, backbone=perception, store=store, motion=motion_model, k=k)
