"""Observations of a motion: 3D joints, 2D detections with a camera, point clouds."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

OBS_KINDS = ("joints3d", "joints2d", "pointcloud")


@dataclass(frozen=True)
class PinholeCamera:
    fx: float = 1.0
    fy: float = 1.0
    cx: float = 0.0
    cy: float = 0.0
    rotation: np.ndarray = None
    translation: np.ndarray = None

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        object.__setattr__(self, "rotation", np.eye(3) if self.rotation is None else np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.zeros(3) if self.translation is None else np.asarray(self.translation, dtype=float))

    def to_camera(self, pts):
        return pts @ self.rotation.T + self.translation

    def project(self, pts):
        """Pixel coordinates ``(..., 2)`` and a mask of points in front of the camera."""
        pc = self.to_camera(np.asarray(pts, dtype=float))
        z = pc[..., 2]
        front = z > 1e-6
        zs = np.where(front, z, 1.0)
        uv = np.stack([self.fx * pc[..., 0] / zs + self.cx, self.fy * pc[..., 1] / zs + self.cy], axis=-1)
        return uv, front

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d) -> "PinholeCamera":
        return cls(d["fx"], d["fy"], d.get("cx", 0.0), d.get("cy", 0.0), d.get("rotation"), d.get("translation"))


@dataclass
class Observation:
    """Per-frame observations.

    ``points`` is ``(T, K, 3)`` for joints3d, ``(T, K, 2)`` pixels for
    joints2d, or a list of ``(M_t, 3)`` arrays for point clouds. ``mask``
    ``(T, K)`` marks visible joints; ``conf`` ``(T, K)`` holds 2D confidences.
    """

    kind: str
    points: object
    mask: Optional[np.ndarray] = None
    conf: Optional[np.ndarray] = None
    camera: Optional[PinholeCamera] = None
    fps: float = 30.0

    def __post_init__(self):
        if self.kind not in OBS_KINDS:
            raise ValueError(f"unknown observation kind {self.kind!r}")
        if self.kind == "pointcloud":
            self.points = [np.asarray(p, dtype=float).reshape(-1, 3) for p in self.points]
            return
        pts = np.asarray(self.points, dtype=float)
        dim = 3 if self.kind == "joints3d" else 2
        if pts.ndim != 3 or pts.shape[-1] != dim:
            raise ValueError(f"{self.kind} points must have shape (T, K, {dim})")
        self.points = pts
        self.mask = np.ones(pts.shape[:2], dtype=bool) if self.mask is None else np.asarray(self.mask, dtype=bool)
        if self.mask.shape != pts.shape[:2]:
            raise ValueError("mask must have shape (T, K)")
        if self.kind == "joints2d":
            if self.camera is None:
                raise ValueError("joints2d observations need a camera")
            self.conf = np.ones(pts.shape[:2]) if self.conf is None else np.asarray(self.conf, dtype=float)
            if self.conf.shape != pts.shape[:2] or np.any(self.conf < 0) or np.any(self.conf > 1):
                raise ValueError("confidences must be (T, K) values in [0, 1]")

    @property
    def n_frames(self) -> int:
        return len(self.points)

    def to_dict(self) -> dict:
        d = {"version": 1, "kind": self.kind, "fps": self.fps}
        if self.kind == "pointcloud":
            d["clouds"] = [p.tolist() for p in self.points]
        else:
            d["points"] = self.points.tolist()
            d["mask"] = self.mask.astype(int).tolist()
        if self.conf is not None:
            d["conf"] = self.conf.tolist()
        if self.camera is not None:
            d["camera"] = self.camera.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Observation":
        try:
            kind = d["kind"]
            cam = PinholeCamera.from_dict(d["camera"]) if d.get("camera") else None
            pts = d["clouds"] if kind == "pointcloud" else d["points"]
            return cls(kind, pts, d.get("mask"), d.get("conf"), cam, float(d.get("fps", 30.0)))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed observation: {exc}") from exc


def write_observation(path, obs: Observation) -> None:
    Path(path).write_text(json.dumps(obs.to_dict()))


def read_observation(path) -> Observation:
    try:
        return Observation.from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read observation {path}: {exc}") from exc
