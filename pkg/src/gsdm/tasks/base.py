"""Shared task-instance container and helpers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..diffusion import Codec
from ..graph import GraphicalModel


@dataclass
class BuiltTask:
    """One task configuration: graphical model, codec, and generator metadata."""

    name: str
    variant: str
    dims: tuple[int, ...]
    model: GraphicalModel
    codec: Codec
    meta: dict = field(default_factory=dict)


@dataclass
class TaskInstance:
    """One data point: per-array values plus the default observation mask."""

    values: dict[str, np.ndarray]
    obs_mask: np.ndarray  # (n,) bool, task-default partition
    dims: tuple[int, ...]
