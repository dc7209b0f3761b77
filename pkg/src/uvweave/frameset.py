"""In-memory sequence container shared by the generator and the pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import Field2
from .relocate import Correspondence
from .warpmap import UVMap


@dataclass
class FrameRecord:
    index: int
    image: Field2
    mask: np.ndarray                      # full (uncorrupted) silhouette
    uv_gt: UVMap | None = None
    corr_gt: Correspondence | None = None
    uv_raw: UVMap | None = None           # corrupted input to the pipeline
    mask_raw: np.ndarray | None = None


@dataclass
class FrameSet:
    config: object
    texture: Field2                       # the constant ground-truth texture
    frames: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.frames)
