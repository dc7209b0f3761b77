"""Directory-backed sequence manifest tying the pipeline stages together.

A sequence lives in one directory with a ``manifest.json`` naming every
per-frame artifact by a relative path.  Stages record a provenance tag
(name plus config snapshot) when they run; later stages refuse to start
until their prerequisites are tagged.  All JSON is written with sorted
keys and no timestamps so re-running a stage on unchanged inputs is
byte-identical.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .fields import Field2
from .formats import read_pfm, read_ppm, write_pfm, write_ppm
from .relocate import Correspondence
from .warpmap import UVMap

MANIFEST_NAME = "manifest.json"
STAGE_ORDER = ["gen", "corrupt", "extend", "optimize", "relocate", "synth", "metrics"]


def config_dict(cfg) -> dict:
    if dataclasses.is_dataclass(cfg):
        return {k: config_dict(v) if dataclasses.is_dataclass(v) else v
                for k, v in dataclasses.asdict(cfg).items()}
    return dict(cfg)


class Manifest:
    def __init__(self, root, data: dict):
        self.root = Path(root)
        self.data = data

    @classmethod
    def create(cls, root, image_size, texture_size, n_frames: int) -> "Manifest":
        root = Path(root)
        (root / "frames").mkdir(parents=True, exist_ok=True)
        data = {
            "version": 1,
            "image_size": list(image_size),
            "texture_size": list(texture_size),
            "frames": [{"index": i} for i in range(n_frames)],
            "stages": {},
        }
        return cls(root, data)

    @classmethod
    def load(cls, root) -> "Manifest":
        root = Path(root)
        path = root / MANIFEST_NAME
        if not path.is_file():
            raise ValidationError(f"no manifest at {path}")
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as e:
                raise ValidationError(f"malformed manifest: {e}")
        for key in ("version", "image_size", "texture_size", "frames", "stages"):
            if key not in data:
                raise ValidationError(f"manifest missing key {key!r}")
        for i, fr in enumerate(data["frames"]):
            if fr.get("index") != i:
                raise ValidationError("manifest frame indices must be contiguous from 0")
        m = cls(root, data)
        for fr in data["frames"]:
            for key, rel in fr.items():
                if key == "index":
                    continue
                if not (root / rel).is_file():
                    raise ValidationError(f"manifest references missing file {rel}")
        return m

    def save(self):
        with open(self.root / MANIFEST_NAME, "w") as fh:
            json.dump(self.data, fh, sort_keys=True, indent=2)
            fh.write("\n")

    @property
    def n_frames(self) -> int:
        return len(self.data["frames"])

    @property
    def image_size(self):
        return tuple(self.data["image_size"])

    @property
    def texture_size(self):
        return tuple(self.data["texture_size"])

    def mark_stage(self, name: str, cfg: dict | None = None):
        self.data["stages"][name] = {"config": cfg or {}}

    def require_stage(self, name: str):
        if name not in self.data["stages"]:
            raise ValidationError(f"stage '{name}' must run before this one")

    # -- artifact helpers ---------------------------------------------------

    def path(self, rel: str) -> Path:
        return self.root / rel

    def set_item(self, key: str, rel: str):
        self.data[key] = rel

    def set_frame_item(self, index: int, key: str, rel: str):
        self.data["frames"][index][key] = rel

    def frame_item(self, index: int, key: str, required: bool = True):
        rel = self.data["frames"][index].get(key)
        if rel is None:
            if required:
                raise ValidationError(f"frame {index} has no {key!r} artifact")
            return None
        return self.root / rel

    def item(self, key: str, required: bool = True):
        rel = self.data.get(key)
        if rel is None:
            if required:
                raise ValidationError(f"manifest has no {key!r} artifact")
            return None
        return self.root / rel

    # -- typed readers/writers ----------------------------------------------

    def write_uv(self, index: int, key: str, P: UVMap):
        rel = f"frames/f{index:04d}_{key}.pfm"
        packed = np.concatenate([
            P.uv.data,
            (P.part if P.part is not None else P.silhouette.astype(np.int64))
            [..., None].astype(np.float64),
        ], axis=2)
        write_pfm(self.root / rel, packed)
        self.set_frame_item(index, key, rel)

    def read_uv(self, index: int, key: str, has_parts: bool | None = None) -> UVMap:
        packed = read_pfm(self.frame_item(index, key))
        part = np.rint(packed[..., 2]).astype(np.int64)
        sil = part > 0
        if has_parts is None:
            has_parts = bool(self.data.get("has_parts", False))
        return UVMap(packed[..., :2], sil, part if has_parts else None)

    def write_mask(self, index: int, key: str, mask: np.ndarray):
        rel = f"frames/f{index:04d}_{key}.pfm"
        write_pfm(self.root / rel, mask.astype(np.float64))
        self.set_frame_item(index, key, rel)

    def read_mask(self, index: int, key: str) -> np.ndarray:
        return read_pfm(self.frame_item(index, key))[..., 0] > 0.5

    def write_image(self, index: int, key: str, img: Field2):
        rel = f"frames/f{index:04d}_{key}.ppm"
        write_ppm(self.root / rel, img.data)
        self.set_frame_item(index, key, rel)

    def read_image(self, index: int, key: str, valid: np.ndarray | None = None) -> Field2:
        return Field2(read_ppm(self.frame_item(index, key)), valid=valid)

    def write_texture(self, key: str, T: Field2, frame: int | None = None):
        rel = f"{key}.pfm" if frame is None else f"frames/f{frame:04d}_{key}.pfm"
        write_pfm(self.root / rel, T.data)
        if frame is None:
            self.set_item(key, rel)
        else:
            self.set_frame_item(frame, key, rel)

    def read_texture(self, key: str, frame: int | None = None,
                     valid: np.ndarray | None = None) -> Field2:
        path = self.item(key) if frame is None else self.frame_item(frame, key)
        return Field2(read_pfm(path), valid=valid)

    def write_corr(self, key: str, Q: Correspondence, frame: int | None = None):
        rel = f"{key}.pfm" if frame is None else f"frames/f{frame:04d}_{key}.pfm"
        packed = np.concatenate([Q.target.data, Q.valid[..., None].astype(np.float64)],
                                axis=2)
        write_pfm(self.root / rel, packed)
        if frame is None:
            self.set_item(key, rel)
        else:
            self.set_frame_item(frame, key, rel)

    def read_corr(self, key: str, frame: int | None = None) -> Correspondence:
        path = self.item(key) if frame is None else self.frame_item(frame, key)
        packed = read_pfm(path)
        return Correspondence(Field2(packed[..., :2]), packed[..., 2] > 0.5)
