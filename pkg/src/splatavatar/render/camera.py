"""Pinhole camera: x_cam = R @ x_world + t, +z forward, +y down in the image."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray
    t: np.ndarray
    width: int
    height: int
    near: float = 0.01

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        self.validate()

    def validate(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if np.abs(self.R @ self.R.T - np.eye(3)).max() > 1e-6:
            raise ValueError("camera rotation must be orthonormal")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def scaled(self, focal_factor: float) -> "Camera":
        return Camera(self.fx * focal_factor, self.fy * focal_factor, self.cx, self.cy, self.R, self.t,
                      self.width, self.height, self.near)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.fx, self.fy, self.cx, self.cy], self.R.reshape(-1), self.t,
                               [self.width, self.height, self.near]])

    @classmethod
    def from_vector(cls, v) -> "Camera":
        v = np.asarray(v, dtype=np.float64)
        return cls(v[0], v[1], v[2], v[3], v[4:13].reshape(3, 3), v[13:16], int(v[16]), int(v[17]), float(v[18]))

    @classmethod
    def look_at(cls, eye, target, focal: float, width: int, height: int, up=(0.0, 1.0, 0.0), near: float = 0.01):
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        return cls(focal, focal, width / 2.0, height / 2.0, R, -R @ eye, width, height, near)

    @classmethod
    def orbit(cls, azimuth: float, elevation: float, distance: float, focal: float, width: int, height: int,
              target=(0.0, 0.0, 0.0)):
        """Camera on a sphere around ``target``; azimuth 0 looks at the face (+z side)."""
        target = np.asarray(target, dtype=np.float64)
        eye = target + distance * np.array(
            [np.sin(azimuth) * np.cos(elevation), np.sin(elevation), np.cos(azimuth) * np.cos(elevation)]
        )
        return cls.look_at(eye, target, focal, width, height)
