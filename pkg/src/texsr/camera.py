"""Spherical camera rigs and pinhole projection math.

Rigs are deterministic: positions depend only on the preset constants, so
two runs (or two machines) build identical camera lists.
"""
from __future__ import annotations

import dataclasses
import json
import math

import numpy as np

RIG_DISTANCE = 3.25
RIG_FOV_Y_DEG = 10.0
NEAR = 0.1
FAR = 100.0

# elevation rings x azimuths per ring
PRESETS = {
    "train": (15, 50),
    "eval": (6, 40),
}


@dataclasses.dataclass(frozen=True)
class Camera:
    position: np.ndarray   # (3,)
    look_at: np.ndarray    # (3,)
    up: np.ndarray         # (3,)
    fov_y_deg: float
    width: int
    height: int

    def __post_init__(self):
        for name in ("position", "look_at", "up"):
            v = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.float64))
            v.flags.writeable = False
            object.__setattr__(self, name, v)

    def to_dict(self) -> dict:
        return {
            "position": [float(x) for x in self.position],
            "look_at": [float(x) for x in self.look_at],
            "up": [float(x) for x in self.up],
            "fov_y_deg": float(self.fov_y_deg),
            "width": int(self.width),
            "height": int(self.height),
        }


@dataclasses.dataclass(frozen=True)
class CameraRig:
    cameras: tuple[Camera, ...]
    preset: str

    def __len__(self) -> int:
        return len(self.cameras)

    def dump_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump([c.to_dict() for c in self.cameras], fh, indent=1)


def _spherical_position(elev_deg: float, azim_deg: float, distance: float) -> np.ndarray:
    e = math.radians(elev_deg)
    a = math.radians(azim_deg)
    return np.array([
        distance * math.cos(e) * math.sin(a),
        distance * math.sin(e),
        distance * math.cos(e) * math.cos(a),
    ])


def build_rig(
    preset: str,
    resolution: int = 256,
    elev_min: float = -75.0,
    elev_max: float = 75.0,
) -> CameraRig:
    """Build the train (15x50) or eval (6x40) rig.

    Elevations span [elev_min, elev_max] inclusive. Azimuth rings are
    staggered by a per-ring phase of ring_index * 360 / (2 * azimuths);
    the eval preset shifts its phase by an extra half step so the two rigs
    never share a camera at the shared endpoint elevations. Ordering is
    row-major: elevation ring first, azimuth second.
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown rig preset {preset!r}; choose from {sorted(PRESETS)}")
    if resolution < 16:
        raise ValueError(f"resolution must be >= 16, got {resolution}")
    if not -90.0 < elev_min < elev_max < 90.0:
        raise ValueError("elevations must satisfy -90 < min < max < 90")
    n_elev, n_azim = PRESETS[preset]
    phase_shift = 0.5 if preset == "eval" else 0.0
    cams = []
    elevations = np.linspace(elev_min, elev_max, n_elev)
    for i, elev in enumerate(elevations):
        phase = (i + phase_shift) * 360.0 / (2 * n_azim)
        for j in range(n_azim):
            azim = (phase + j * 360.0 / n_azim) % 360.0
            cams.append(Camera(
                position=_spherical_position(float(elev), float(azim), RIG_DISTANCE),
                look_at=np.zeros(3),
                up=np.array([0.0, 1.0, 0.0]),
                fov_y_deg=RIG_FOV_Y_DEG,
                width=resolution,
                height=resolution,
            ))
    return CameraRig(cameras=tuple(cams), preset=preset)


def look_at_matrix(position: np.ndarray, target: np.ndarray, up: np.ndarray) -> np.ndarray:
    """Right-handed world-to-view transform (camera looks down -z)."""
    fwd = np.asarray(target, dtype=np.float64) - np.asarray(position, dtype=np.float64)
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    nr = np.linalg.norm(right)
    if nr < 1e-12:
        raise ValueError("view direction parallel to up vector")
    right = right / nr
    true_up = np.cross(right, fwd)
    view = np.eye(4)
    view[0, :3] = right
    view[1, :3] = true_up
    view[2, :3] = -fwd
    view[:3, 3] = -view[:3, :3] @ np.asarray(position, dtype=np.float64)
    return view


def perspective_matrix(fov_y_deg: float, aspect: float, near: float = NEAR, far: float = FAR) -> np.ndarray:
    """Perspective projection with NDC z in [-1, 1] (z = -1 at the near plane)."""
    f = 1.0 / math.tan(math.radians(fov_y_deg) * 0.5)
    proj = np.zeros((4, 4))
    proj[0, 0] = f / aspect
    proj[1, 1] = f
    proj[2, 2] = -(far + near) / (far - near)
    proj[2, 3] = -2.0 * far * near / (far - near)
    proj[3, 2] = -1.0
    return proj


def view_proj(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    view = look_at_matrix(camera.position, camera.look_at, camera.up)
    proj = perspective_matrix(camera.fov_y_deg, camera.width / camera.height)
    return view, proj
