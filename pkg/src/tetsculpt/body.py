"""Analytic capsule-union body shapes.

The initial surface for sculpting is an A-pose figure built from six
capsules (torso, head, two arms, two legs). A capsule union has an exact
signed distance (min over parts, 1-Lipschitz), which doubles as the oracle
for initialization-fit tests. Parts carry stable names and colors so the
same shape drives the pose-condition renders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# fixed palette for pose-condition renders, one entry per part
PART_COLORS = {
    "torso": (0.9, 0.2, 0.2),
    "head": (0.2, 0.9, 0.2),
    "arm_l": (0.2, 0.2, 0.9),
    "arm_r": (0.9, 0.9, 0.2),
    "leg_l": (0.9, 0.2, 0.9),
    "leg_r": (0.2, 0.9, 0.9),
}


@dataclass(frozen=True)
class Capsule:
    a: tuple
    b: tuple
    radius: float
    part: str

    def sdf(self, p):
        p = np.atleast_2d(np.asarray(p, dtype=np.float64))
        a = np.asarray(self.a, dtype=np.float64)
        ab = np.asarray(self.b, dtype=np.float64) - a
        ap = p - a
        denom = float(ab @ ab)
        t = np.clip(ap @ ab / denom, 0.0, 1.0)[:, None] if denom > 0 else 0.0
        d = np.linalg.norm(ap - t * ab, axis=1) - self.radius
        return float(d[0]) if d.size == 1 else d

    def volume(self):
        L = float(np.linalg.norm(np.asarray(self.b) - np.asarray(self.a)))
        r = self.radius
        return np.pi * r * r * L + 4.0 / 3.0 * np.pi * r ** 3

    def area(self):
        L = float(np.linalg.norm(np.asarray(self.b) - np.asarray(self.a)))
        r = self.radius
        return 2.0 * np.pi * r * L + 4.0 * np.pi * r * r


class CapsuleShape:
    """Union of capsules with an exact SDF; negative inside."""

    def __init__(self, capsules):
        self.capsules = list(capsules)

    def sdf(self, points):
        points = np.asarray(points, dtype=np.float64)
        single = points.ndim == 1
        pts = points[None] if single else points
        d = np.full(len(pts), np.inf)
        for c in self.capsules:
            a = np.asarray(c.a)
            ab = np.asarray(c.b) - a
            ap = pts - a
            denom = float(ab @ ab)
            t = np.clip(ap @ ab / denom, 0.0, 1.0)[:, None] if denom > 0 else 0.0
            d = np.minimum(d, np.linalg.norm(ap - t * ab, axis=1) - c.radius)
        return float(d[0]) if single else d.astype(np.float32)

    def part_of(self, points):
        """Index of the nearest capsule per point."""
        pts = np.asarray(points, dtype=np.float64)
        best = np.full(len(pts), np.inf)
        idx = np.zeros(len(pts), dtype=np.int64)
        for i, c in enumerate(self.capsules):
            a = np.asarray(c.a)
            ab = np.asarray(c.b) - a
            ap = pts - a
            denom = float(ab @ ab)
            t = np.clip(ap @ ab / denom, 0.0, 1.0)[:, None] if denom > 0 else 0.0
            d = np.linalg.norm(ap - t * ab, axis=1) - c.radius
            take = d < best
            best[take] = d[take]
            idx[take] = i
        return idx

    def surface_samples(self, n, rng):
        """Random points on per-capsule surfaces (area-weighted).

        Points may fall inside a neighboring capsule; callers pair them with
        the exact union SDF, so that is fine.
        """
        areas = np.array([c.area() for c in self.capsules])
        counts = rng.multinomial(n, areas / areas.sum())
        out = []
        for c, k in zip(self.capsules, counts):
            if k == 0:
                continue
            a = np.asarray(c.a, dtype=np.float64)
            b = np.asarray(c.b, dtype=np.float64)
            L = np.linalg.norm(b - a)
            side = 2.0 * np.pi * c.radius * L
            cap = 4.0 * np.pi * c.radius ** 2
            on_side = rng.random(k) < side / (side + cap)
            axis = (b - a) / max(L, 1e-12)
            # orthonormal frame around the axis
            helper = np.array([1.0, 0.0, 0.0])
            if abs(axis @ helper) > 0.9:
                helper = np.array([0.0, 0.0, 1.0])
            u = np.cross(axis, helper)
            u /= np.linalg.norm(u)
            v = np.cross(axis, u)
            t = rng.random(k)
            phi = rng.random(k) * 2.0 * np.pi
            ring = (np.cos(phi)[:, None] * u + np.sin(phi)[:, None] * v) * c.radius
            pts_side = a + t[:, None] * (b - a) + ring
            sph = rng.standard_normal((k, 3))
            sph /= np.linalg.norm(sph, axis=1, keepdims=True)
            at_a = rng.random(k) < 0.5
            # reflect into the outward hemisphere of the chosen end cap
            along = sph @ axis
            flip = np.where(at_a, along > 0, along < 0)
            sph[flip] -= 2.0 * along[flip, None] * axis
            pts_cap = np.where(at_a[:, None], a, b) + sph * c.radius
            out.append(np.where(on_side[:, None], pts_side, pts_cap))
        return np.concatenate(out).astype(np.float32)

    def bounds(self):
        lo = np.full(3, np.inf)
        hi = np.full(3, -np.inf)
        for c in self.capsules:
            for e in (c.a, c.b):
                e = np.asarray(e)
                lo = np.minimum(lo, e - c.radius)
                hi = np.maximum(hi, e + c.radius)
        return lo, hi

    def volume_quadrature(self, res=192):
        """Union volume by midpoint occupancy quadrature over the bounds."""
        lo, hi = self.bounds()
        lo -= 1e-3
        hi += 1e-3
        axes = [np.linspace(lo[i] + (hi[i] - lo[i]) / (2 * res),
                            hi[i] - (hi[i] - lo[i]) / (2 * res), res)
                for i in range(3)]
        cell = np.prod((hi - lo) / res)
        total = 0.0
        # slab at a time to bound memory
        yy, zz = np.meshgrid(axes[1], axes[2], indexing="ij")
        for x in axes[0]:
            pts = np.column_stack([np.full(yy.size, x), yy.ravel(), zz.ravel()])
            total += float(np.count_nonzero(self.sdf(pts) < 0.0)) * cell
        return total

    # camera anchor points, used by the local-view sampler
    def landmarks(self):
        lo, hi = self.bounds()
        center = (lo + hi) / 2.0
        return {
            "center": tuple(center),
            "head": self._part_center("head"),
            "upper": self._part_center("torso"),
            "lower": tuple((np.asarray(self._part_center("leg_l")) +
                            np.asarray(self._part_center("leg_r"))) / 2.0),
        }

    def _part_center(self, part):
        for c in self.capsules:
            if c.part == part:
                return tuple((np.asarray(c.a) + np.asarray(c.b)) / 2.0)
        raise KeyError(part)


def humanoid(inflate=1.0, skirt=False):
    """A-pose capsule figure in the [-1, 1]^3 box, y up, facing +z.

    `inflate` scales all radii (a bulkier target body for experiments);
    `skirt` adds a wide hip capsule so silhouettes differ clearly from the
    base figure.
    """
    f = float(inflate)
    caps = [
        Capsule((0.0, -0.18, 0.0), (0.0, 0.32, 0.0), 0.17 * f, "torso"),
        Capsule((0.0, 0.50, 0.0), (0.0, 0.60, 0.0), 0.13 * f, "head"),
        Capsule((-0.13, 0.30, 0.0), (-0.45, -0.02, 0.0), 0.072 * f, "arm_l"),
        Capsule((0.13, 0.30, 0.0), (0.45, -0.02, 0.0), 0.072 * f, "arm_r"),
        Capsule((-0.09, -0.22, 0.0), (-0.14, -0.72, 0.0), 0.082 * f, "leg_l"),
        Capsule((0.09, -0.22, 0.0), (0.14, -0.72, 0.0), 0.082 * f, "leg_r"),
    ]
    if skirt:
        caps.append(Capsule((0.0, -0.24, 0.0), (0.0, -0.42, 0.0), 0.19, "torso"))
    return CapsuleShape(caps)
