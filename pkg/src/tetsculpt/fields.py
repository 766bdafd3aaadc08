"""Coordinate MLPs for geometry (sdf + vertex offsets) and albedo.

Both fields share the same body: sinusoidal positional encoding followed by
a small ReLU MLP. The geometry head starts at exactly zero (zero weights and
bias) so the initial surface is the encoder's zero level set and offsets
start at zero; offsets are tanh-bounded to half a grid cell so tetrahedra
cannot invert.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def positional_encoding(p, n_freqs):
    """[x, sin(2^k pi x), cos(2^k pi x)] for k < n_freqs, per coordinate."""
    parts = [p]
    for k in range(n_freqs):
        w = float((2.0 ** k) * np.pi)
        parts.append((p * w).sin())
        parts.append((p * w).cos())
    return ad.concat(parts, axis=1)


def _he_init(rng, fan_in, fan_out):
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal((fan_in, fan_out)) * std).astype(np.float32)


class MLP:
    """Plain fully-connected ReLU network over encoded 3D points."""

    def __init__(self, out_dim, hidden=64, depth=3, n_freqs=6, rng=None,
                 zero_head=True):
        rng = rng or np.random.default_rng(0)
        self.n_freqs = n_freqs
        in_dim = 3 * (1 + 2 * n_freqs)
        dims = [in_dim] + [hidden] * depth + [out_dim]
        self.weights = []
        self.biases = []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            last = i == len(dims) - 2
            w = np.zeros((a, b), dtype=np.float32) if (zero_head and last) \
                else _he_init(rng, a, b)
            self.weights.append(Tensor(w, requires_grad=True, name=f"w{i}"))
            self.biases.append(Tensor(np.zeros(b, dtype=np.float32),
                                      requires_grad=True, name=f"b{i}"))

    def parameters(self):
        return self.weights + self.biases

    def __call__(self, points):
        x = positional_encoding(points, self.n_freqs)
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = ad.matmul(x, w) + b
            if i < n - 1:
                x = x.relu()
        return x

    def named_tensors(self, prefix=""):
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}w{i}"] = w.data
            out[f"{prefix}b{i}"] = b.data
        return out

    def load_named(self, tensors, prefix=""):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            w.data = np.array(tensors[f"{prefix}w{i}"], dtype=np.float32)
            b.data = np.array(tensors[f"{prefix}b{i}"], dtype=np.float32)


def _check_points(points):
    if isinstance(points, Tensor):
        data = points.data
    else:
        data = np.asarray(points, dtype=np.float32)
        points = Tensor(data)
    if data.ndim != 2 or data.shape[1] != 3:
        raise ValueError(f"expected N x 3 points, got shape {data.shape}")
    bad = ~np.isfinite(data)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ValueError(f"non-finite input point at index ({i}, {j}): "
                         f"{data[i, j]!r}")
    return points


class GeometryField:
    """3D position -> (signed distance, bounded 3D deformation offset).

    `deform_scale` is half the grid cell edge; raw offsets pass through tanh
    and are scaled by it, so deformed vertices stay inside their cell
    neighborhood.
    """

    def __init__(self, deform_scale, hidden=64, depth=3, n_freqs=6, rng=None):
        # stored in checkpoints as f32; round now so save/load is exact
        self.deform_scale = float(np.float32(deform_scale))
        self.mlp = MLP(4, hidden=hidden, depth=depth, n_freqs=n_freqs, rng=rng)

    def parameters(self):
        return self.mlp.parameters()

    def __call__(self, points):
        """Returns (sdf Tensor[N], offset Tensor[N,3])."""
        points = _check_points(points)
        out = self.mlp(points)
        sdf = out[:, 0]
        offset = out[:, 1:4].tanh() * self.deform_scale
        return sdf, offset

    def sdf_values(self, points):
        """Plain ndarray SDF evaluation (no graph)."""
        s, _ = self(Tensor(np.asarray(points, dtype=np.float32)))
        return s.data

    def state_dict(self):
        d = self.mlp.named_tensors("geom/")
        d["geom/deform_scale"] = np.array([self.deform_scale], dtype=np.float32)
        return d

    def load_state_dict(self, d):
        self.deform_scale = float(d["geom/deform_scale"][0])
        self.mlp.load_named(d, "geom/")


class TextureField:
    """3D position -> albedo in [0,1]^3 (sigmoid head)."""

    def __init__(self, hidden=64, depth=3, n_freqs=6, rng=None):
        self.mlp = MLP(3, hidden=hidden, depth=depth, n_freqs=n_freqs, rng=rng)

    def parameters(self):
        return self.mlp.parameters()

    def __call__(self, points):
        points = _check_points(points)
        return self.mlp(points).sigmoid()

    def state_dict(self):
        return self.mlp.named_tensors("tex/")

    def load_state_dict(self, d):
        self.mlp.load_named(d, "tex/")
