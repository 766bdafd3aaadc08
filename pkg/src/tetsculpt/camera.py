"""Perspective cameras and the global/local view sampler.

World frame is y-up; azimuth 0 looks at the body's front (+z side),
angles in degrees. Cameras orbit a look-at target which always projects to
the image center. The sampler mixes full-body views with close-ups of the
head / upper body / lower body at the configured probability.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Camera:
    azimuth: float
    elevation: float
    distance: float
    fov: float = 40.0
    target: tuple = (0.0, 0.0, 0.0)
    size: int = 64

    def __post_init__(self):
        if not -90.0 < self.elevation < 90.0:
            raise ValueError(f"elevation must be in (-90, 90), "
                             f"got {self.elevation}")
        if self.distance <= 0:
            raise ValueError("distance must be positive")

    def position(self):
        az = np.deg2rad(self.azimuth)
        el = np.deg2rad(self.elevation)
        d = np.array([np.sin(az) * np.cos(el), np.sin(el),
                      np.cos(az) * np.cos(el)])
        return np.asarray(self.target, np.float64) + self.distance * d

    def basis(self):
        """Right-handed (right, up, forward) world-space unit vectors."""
        pos = self.position()
        fwd = np.asarray(self.target, np.float64) - pos
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        return right, up, fwd

    def view_matrix(self):
        """3x3 world-to-camera rotation; camera looks along -z."""
        right, up, fwd = self.basis()
        return np.stack([right, up, -fwd]).astype(np.float32)

    def focal_px(self):
        return 0.5 * self.size / np.tan(0.5 * np.deg2rad(self.fov))

    def key(self):
        """Hashable identity used for template/camera matching."""
        return (round(self.azimuth, 4), round(self.elevation, 4),
                round(self.distance, 5), round(self.fov, 4),
                tuple(round(t, 5) for t in self.target), self.size)

    def to_dict(self):
        return {"azimuth": self.azimuth, "elevation": self.elevation,
                "distance": self.distance, "fov": self.fov,
                "target": list(self.target), "size": self.size}

    @staticmethod
    def from_dict(d):
        return Camera(azimuth=float(d["azimuth"]),
                      elevation=float(d["elevation"]),
                      distance=float(d["distance"]), fov=float(d["fov"]),
                      target=tuple(float(x) for x in d["target"]),
                      size=int(d["size"]))


def ring_cameras(n, elevation=0.0, distance=2.4, fov=40.0,
                 target=(0.0, 0.0, 0.0), size=64, offset=0.0):
    """n cameras at uniform azimuths offset + k*360/n."""
    return [Camera(azimuth=offset + 360.0 * k / n, elevation=elevation,
                   distance=distance, fov=fov, target=target, size=size)
            for k in range(n)]


REGIONS = ("head", "upper", "lower")


@dataclass
class CameraSampler:
    """0.7 / 0.3 split between full-body orbits and local close-ups; the
    three local regions are equiprobable."""

    p_global: float = 0.7
    targets: dict = field(default_factory=lambda: {
        "center": (0.0, -0.05, 0.0),
        "head": (0.0, 0.55, 0.0),
        "upper": (0.0, 0.07, 0.0),
        "lower": (0.0, -0.47, 0.0),
    })
    distance: float = 2.4
    local_distance: float = 1.2
    elevation_range: tuple = (-10.0, 20.0)
    fov: float = 40.0
    size: int = 64

    def __post_init__(self):
        if not 0.0 <= self.p_global <= 1.0:
            raise ValueError("p_global must be in [0, 1]")

    @property
    def p_local(self):
        return 1.0 - self.p_global

    @staticmethod
    def for_shape(shape, p_global=0.7, size=64, distance=2.4,
                  local_distance=1.2):
        marks = shape.landmarks()
        return CameraSampler(p_global=p_global, targets=dict(marks),
                             distance=distance, local_distance=local_distance,
                             size=size)

    def sample(self, rng):
        """Draw (camera, region); `rng` may be a seed or a Generator."""
        rng = np.random.default_rng(rng) if not isinstance(
            rng, np.random.Generator) else rng
        az = rng.uniform(0.0, 360.0)
        el = rng.uniform(*self.elevation_range)
        if rng.random() < self.p_global:
            return Camera(az, el, self.distance, self.fov,
                          tuple(self.targets["center"]), self.size), "global"
        region = REGIONS[rng.integers(0, len(REGIONS))]
        return Camera(az, el, self.local_distance, self.fov,
                      tuple(self.targets[region]), self.size), region

    def sample_local(self, rng):
        """Local-only draw (texture stage uses close-ups exclusively)."""
        rng = np.random.default_rng(rng) if not isinstance(
            rng, np.random.Generator) else rng
        az = rng.uniform(0.0, 360.0)
        el = rng.uniform(*self.elevation_range)
        region = REGIONS[rng.integers(0, len(REGIONS))]
        return Camera(az, el, self.local_distance, self.fov,
                      tuple(self.targets[region]), self.size), region
