"""Tetrahedral lattice, differentiable marching tetrahedra, mesh utilities.

The lattice splits each cube of a regular grid over [-1, 1]^3 into six
tetrahedra around the main diagonal (Kuhn subdivision), which is
face-compatible across neighboring cubes. Surface extraction walks the
16-case sign table per tet and places one crossing vertex per sign-changing
lattice edge, so the result is watertight whenever the SDF sign is uniform
on the grid boundary. Crossing positions are built from autodiff ops and
therefore carry gradients back into the geometry field through both the
SDF values and the per-vertex deformation offsets.
"""

from __future__ import annotations

import logging

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

log = logging.getLogger("tetsculpt.tetgrid")

# six monotone vertex paths 0 -> 7 through the cube corner lattice;
# corner bits are (x, y, z)
_CUBE_TETS = [
    (0, 1, 3, 7),
    (0, 1, 5, 7),
    (0, 2, 3, 7),
    (0, 2, 6, 7),
    (0, 4, 5, 7),
    (0, 4, 6, 7),
]

# local tet edges in a fixed order
_TET_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
                      dtype=np.int64)

# triangle emission per occupancy code (bit k set = vertex k outside);
# entries index into _TET_EDGES, -1 padding. Winding is outward: triangle
# normals point from negative (inside) to positive (outside) SDF.
_TRI_TABLE = np.array([
    [-1, -1, -1, -1, -1, -1],
    [0, 2, 1, -1, -1, -1],
    [0, 3, 4, -1, -1, -1],
    [1, 3, 4, 1, 4, 2],
    [1, 5, 3, -1, -1, -1],
    [0, 5, 3, 0, 2, 5],
    [0, 1, 5, 0, 5, 4],
    [2, 5, 4, -1, -1, -1],
    [2, 4, 5, -1, -1, -1],
    [0, 4, 5, 0, 5, 1],
    [0, 5, 2, 0, 3, 5],
    [1, 3, 5, -1, -1, -1],
    [1, 2, 4, 1, 4, 3],
    [0, 4, 3, -1, -1, -1],
    [0, 1, 2, -1, -1, -1],
    [-1, -1, -1, -1, -1, -1],
], dtype=np.int64)

_NUM_TRIS = np.array([0, 1, 1, 2, 1, 2, 2, 1, 1, 2, 2, 1, 2, 1, 1, 0],
                     dtype=np.int64)


class TetGrid:
    """Regular tetrahedral lattice over [-1, 1]^3."""

    def __init__(self, vertices, tets, resolution):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float32)
        self.tets = np.ascontiguousarray(tets, dtype=np.int64)
        self.resolution = int(resolution)
        # unique undirected lattice edges, sorted lexicographically
        e = self.tets[:, _TET_EDGES].reshape(-1, 2)
        e.sort(axis=1)
        self.edges = np.unique(e, axis=0)

    @property
    def cell_edge(self):
        return 2.0 / self.resolution

    @property
    def deform_scale(self):
        # half a cell edge keeps deformed tets from inverting
        return 1.0 / self.resolution


def build_grid(resolution=48):
    """Six-tets-per-cube lattice; (res+1)^3 vertices, 6*res^3 tets."""
    res = int(resolution)
    if res < 2:
        raise ValueError(f"grid resolution must be >= 2, got {resolution}")
    n = res + 1
    lin = np.linspace(-1.0, 1.0, n, dtype=np.float32)
    gx, gy, gz = np.meshgrid(lin, lin, lin, indexing="ij")
    verts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)

    def vid(i, j, k):
        return (i * n + j) * n + k

    ii, jj, kk = np.meshgrid(np.arange(res), np.arange(res), np.arange(res),
                             indexing="ij")
    ii, jj, kk = ii.ravel(), jj.ravel(), kk.ravel()
    corner = np.empty((ii.size, 8), dtype=np.int64)
    for c in range(8):
        bx, by, bz = c & 1, (c >> 1) & 1, (c >> 2) & 1
        corner[:, c] = vid(ii + bx, jj + by, kk + bz)

    tets = np.empty((ii.size * 6, 4), dtype=np.int64)
    for t, quad in enumerate(_CUBE_TETS):
        tets[t::6] = corner[:, list(quad)]

    # canonical order: positive signed volume
    v = verts[tets]
    vol = np.einsum("ij,ij->i", v[:, 1] - v[:, 0],
                    np.cross(v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]))
    flip = vol < 0
    tets[flip] = tets[flip][:, [0, 1, 3, 2]]
    return TetGrid(verts, tets, res)


class Mesh:
    """Triangle surface with graph-connected vertex positions."""

    def __init__(self, vertices, faces):
        self.vertices = vertices if isinstance(vertices, Tensor) \
            else Tensor(np.asarray(vertices, dtype=np.float32))
        self.faces = np.ascontiguousarray(faces, dtype=np.int64).reshape(-1, 3)
        self._vnormals = None

    @property
    def n_faces(self):
        return len(self.faces)

    def is_empty(self):
        return len(self.faces) == 0

    def face_corner_positions(self):
        v = self.vertices
        return (ad.take0(v, self.faces[:, 0]),
                ad.take0(v, self.faces[:, 1]),
                ad.take0(v, self.faces[:, 2]))

    def face_normals_raw(self):
        """Unnormalized (area-weighted) face normals as a Tensor[F,3]."""
        a, b, c = self.face_corner_positions()
        e1 = b - a
        e2 = c - a
        return _cross(e1, e2)

    def vertex_normals(self):
        """Unit per-vertex normals, area weighted; cached per mesh."""
        if self._vnormals is None:
            fn = self.face_normals_raw()
            acc = Tensor(np.zeros_like(self.vertices.data))
            for k in range(3):
                acc = acc + ad.scatter_add0(fn, self.faces[:, k],
                                            len(self.vertices.data))
            self._vnormals = _normalize_rows(acc)
        return self._vnormals

    def is_watertight(self):
        if self.is_empty():
            return False
        e = self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        e.sort(axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(counts == 2))


def _cross(a, b):
    ax, ay, az = a[:, 0], a[:, 1], a[:, 2]
    bx, by, bz = b[:, 0], b[:, 1], b[:, 2]
    cx = ay * bz - az * by
    cy = az * bx - ax * bz
    cz = ax * by - ay * bx
    return ad.concat([cx.reshape(-1, 1), cy.reshape(-1, 1),
                      cz.reshape(-1, 1)], axis=1)


def _normalize_rows(x, eps=1e-12):
    n2 = (x * x).sum(axis=1, keepdims=True)
    return x / (n2 + eps).sqrt()


def marching_tets(grid, field):
    """Extract the zero surface of `field` over `grid` as a Mesh.

    `field` maps Tensor[N,3] positions to (sdf Tensor[N], offset Tensor[N,3]).
    Crossing vertices are (v_a*s_b - v_b*s_a) / (s_b - s_a) on deformed
    positions; exact-zero SDF samples are nudged to +1e-6 (treated as
    outside) to keep the sign table free of degenerate cases.
    """
    base = Tensor(grid.vertices)
    sdf, offset = field(base)
    if not np.isfinite(sdf.data).all() or not np.isfinite(offset.data).all():
        raise ValueError("geometry field produced non-finite values on the grid")
    zero_mask = (sdf.data == 0.0).astype(np.float32)
    if zero_mask.any():
        sdf = sdf + Tensor(zero_mask * 1e-6)
    deformed = base + offset

    s = sdf.data
    occ = (s > 0).astype(np.int64)
    occ_t = occ[grid.tets]
    occ_sum = occ_t.sum(axis=1)
    valid = (occ_sum > 0) & (occ_sum < 4)
    if not valid.any():
        return Mesh(Tensor(np.zeros((0, 3), np.float32)),
                    np.zeros((0, 3), np.int64))

    tets = grid.tets[valid]
    code = (occ_t[valid] * (1 << np.arange(4))).sum(axis=1)

    # global crossing-edge ids: unique sorted lattice edges with a sign change
    local = tets[:, _TET_EDGES]                      # [T, 6, 2]
    flat = local.reshape(-1, 2).copy()
    flat.sort(axis=1)
    uniq, inv = np.unique(flat, axis=0, return_inverse=True)
    crossing = occ[uniq[:, 0]] != occ[uniq[:, 1]]
    vert_id = np.full(len(uniq), -1, dtype=np.int64)
    vert_id[crossing] = np.arange(int(crossing.sum()))
    edge_vert = vert_id[inv].reshape(-1, 6)          # [T, 6]

    ce = uniq[crossing]
    sa = ad.take0(sdf, ce[:, 0]).reshape(-1, 1)
    sb = ad.take0(sdf, ce[:, 1]).reshape(-1, 1)
    va = ad.take0(deformed, ce[:, 0])
    vb = ad.take0(deformed, ce[:, 1])
    verts = (va * sb - vb * sa) / (sb - sa)

    ntri = _NUM_TRIS[code]
    rows = _TRI_TABLE[code]                          # [T, 6] edge slots
    faces = []
    for k, sl in ((1, slice(0, 3)), (2, slice(0, 6))):
        pick = ntri == k
        if pick.any():
            f = np.take_along_axis(edge_vert[pick], rows[pick][:, sl],
                                   axis=1).reshape(-1, 3)
            faces.append(f)
    faces = np.concatenate(faces) if faces else np.zeros((0, 3), np.int64)
    return Mesh(verts, faces)


def sample_init_points(shape, n_points, rng, jitter=0.05, uniform_frac=0.1):
    """Fit points for the SDF warm start: surface samples with isotropic
    Gaussian jitter plus a slice of uniform box samples to pin the far
    field's sign."""
    n_uni = int(round(n_points * uniform_frac))
    n_surf = n_points - n_uni
    parts = []
    if n_surf > 0:
        p = shape.surface_samples(n_surf, rng).astype(np.float64)
        if jitter > 0:
            p = p + rng.standard_normal(p.shape) * jitter
        parts.append(p)
    if n_uni > 0:
        parts.append(rng.uniform(-1.0, 1.0, (n_uni, 3)))
    pts = np.concatenate(parts).astype(np.float32)
    return np.clip(pts, -1.0, 1.0)


def init_loss(field, shape, n_points, rng, jitter=0.05, uniform_frac=0.1):
    """Sum of squared SDF residuals on fresh fit points (differentiable in
    the geometry parameters)."""
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    pts = sample_init_points(shape, n_points, rng, jitter, uniform_frac)
    target = np.asarray(shape.sdf(pts), dtype=np.float32)
    s, _ = field(Tensor(pts))
    r = s - Tensor(target)
    return (r * r).sum()


def mesh_area_volume(mesh):
    """(surface area, signed volume). Volume trusts outward winding and is
    logged as unreliable when the mesh is not watertight."""
    if mesh.is_empty():
        return 0.0, 0.0
    v = mesh.vertices.data.astype(np.float64)
    a, b, c = v[mesh.faces[:, 0]], v[mesh.faces[:, 1]], v[mesh.faces[:, 2]]
    cross = np.cross(b - a, c - a)
    area = float(0.5 * np.linalg.norm(cross, axis=1).sum())
    vol = float(np.einsum("ij,ij->", a, cross) / 6.0)
    if not mesh.is_watertight():
        log.warning("volume of a non-watertight mesh is unreliable")
    return area, vol


# ----------------------------------------------------------------------
# OBJ interchange
# ----------------------------------------------------------------------

def save_obj(path, mesh, normals=None):
    """ASCII OBJ with v/vn/f records, 1-based indices."""
    v = mesh.vertices.data
    lines = []
    for p in v:
        lines.append(f"v {p[0]:.6f} {p[1]:.6f} {p[2]:.6f}")
    if normals is not None:
        for nrm in normals:
            lines.append(f"vn {nrm[0]:.6f} {nrm[1]:.6f} {nrm[2]:.6f}")
        for f in mesh.faces:
            i, j, k = f + 1
            lines.append(f"f {i}//{i} {j}//{j} {k}//{k}")
    else:
        for f in mesh.faces:
            i, j, k = f + 1
            lines.append(f"f {i} {j} {k}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_obj(path):
    """Read v/f records. Polygons are fan-triangulated; normals ignored."""
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    if not verts:
        raise ValueError(f"{path}: no vertices found")
    return Mesh(np.asarray(verts, np.float32), np.asarray(faces, np.int64))


class MeshSDF:
    """Signed distance to a watertight triangle soup.

    Distance is exact (closest point per triangle); the sign comes from the
    angle-weighted pseudonormal of the nearest feature, which is robust for
    watertight inputs.
    """

    def __init__(self, mesh):
        if not mesh.is_watertight():
            raise ValueError("mesh SDF requires a watertight mesh")
        self.v = mesh.vertices.data.astype(np.float64)
        self.f = mesh.faces
        a, b, c = self.v[self.f[:, 0]], self.v[self.f[:, 1]], self.v[self.f[:, 2]]
        self.a, self.ab, self.ac = a, b - a, c - a
        fn = np.cross(self.ab, self.ac)
        norm = np.linalg.norm(fn, axis=1, keepdims=True)
        self.fn = fn / np.maximum(norm, 1e-18)
        # angle-weighted vertex pseudonormals
        vn = np.zeros_like(self.v)
        for k in range(3):
            p0 = self.v[self.f[:, k]]
            p1 = self.v[self.f[:, (k + 1) % 3]]
            p2 = self.v[self.f[:, (k + 2) % 3]]
            e1 = p1 - p0
            e2 = p2 - p0
            cosang = np.einsum("ij,ij->i", e1, e2) / np.maximum(
                np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1), 1e-18)
            ang = np.arccos(np.clip(cosang, -1.0, 1.0))
            np.add.at(vn, self.f[:, k], self.fn * ang[:, None])
        self.vn = vn
        # edge pseudonormals: sum of the two adjacent face normals
        edges = self.f[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        skey = np.sort(edges, axis=1)
        uniq, inv = np.unique(skey, axis=0, return_inverse=True)
        en = np.zeros((len(uniq), 3))
        np.add.at(en, inv, np.repeat(self.fn, 3, axis=0))
        self.edge_key = uniq
        self.edge_normal = en

    def __call__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.empty(len(pts), dtype=np.float64)
        for i, p in enumerate(pts):
            out[i] = self._one(p)
        return out.astype(np.float32) if out.size > 1 else float(out[0])

    def _one(self, p):
        # closest point on every triangle (Ericson's region test)
        a, ab, ac = self.a, self.ab, self.ac
        ap = p - a
        d1 = np.einsum("ij,ij->i", ab, ap)
        d2 = np.einsum("ij,ij->i", ac, ap)
        bp = ap - ab
        d3 = np.einsum("ij,ij->i", ab, bp)
        d4 = np.einsum("ij,ij->i", ac, bp)
        cp = ap - ac
        d5 = np.einsum("ij,ij->i", ab, cp)
        d6 = np.einsum("ij,ij->i", ac, cp)
        va = d3 * d6 - d5 * d4
        vb = d5 * d2 - d1 * d6
        vc = d1 * d4 - d3 * d2
        denom = np.maximum(va + vb + vc, 1e-30)
        v = vb / denom
        w = vc / denom
        closest = a + v[:, None] * ab + w[:, None] * ac
        # clamp into the triangle by the standard case analysis
        t_ab = np.clip(d1 / np.maximum(d1 - d3, 1e-30), 0.0, 1.0)
        t_ac = np.clip(d2 / np.maximum(d2 - d6, 1e-30), 0.0, 1.0)
        bc_num = d4 - d3
        t_bc = np.clip(bc_num / np.maximum(bc_num + (d5 - d6), 1e-30), 0.0, 1.0)
        cand_ab = a + t_ab[:, None] * ab
        cand_ac = a + t_ac[:, None] * ac
        cand_bc = a + ab + t_bc[:, None] * (ac - ab)
        inside = (v >= 0) & (w >= 0) & (v + w <= 1)
        closest = np.where(inside[:, None], closest, cand_ab)
        alt = np.linalg.norm(p - cand_ac, axis=1) < np.linalg.norm(
            p - closest, axis=1)
        closest = np.where(alt[:, None], cand_ac, closest)
        alt = np.linalg.norm(p - cand_bc, axis=1) < np.linalg.norm(
            p - closest, axis=1)
        closest = np.where(alt[:, None], cand_bc, closest)

        d = np.linalg.norm(p - closest, axis=1)
        i = int(np.argmin(d))
        delta = p - closest[i]
        # pick the pseudonormal of the nearest feature
        nrm = self._feature_normal(i, closest[i])
        sign = 1.0 if delta @ nrm >= 0 else -1.0
        return sign * d[i]

    def _feature_normal(self, face, point):
        tol = 1e-9
        ids = self.f[face]
        corners = self.v[ids]
        dv = np.linalg.norm(corners - point, axis=1)
        if dv.min() < tol:
            return self.vn[ids[int(np.argmin(dv))]]
        for k in range(3):
            p0, p1 = corners[k], corners[(k + 1) % 3]
            e = p1 - p0
            t = np.clip((point - p0) @ e / max(e @ e, 1e-30), 0.0, 1.0)
            if np.linalg.norm(p0 + t * e - point) < tol:
                key = tuple(sorted((ids[k], ids[(k + 1) % 3])))
                row = np.nonzero((self.edge_key == key).all(axis=1))[0]
                if len(row):
                    return self.edge_normal[row[0]]
        return self.fn[face]


class MeshShape:
    """InitShape adapter around a watertight OBJ (SDF + surface samples)."""

    def __init__(self, mesh):
        self.mesh = mesh
        self._sdf = MeshSDF(mesh)

    def sdf(self, points):
        return self._sdf(points)

    def surface_samples(self, n, rng):
        v = self.mesh.vertices.data.astype(np.float64)
        a, b, c = (v[self.mesh.faces[:, k]] for k in range(3))
        areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
        probs = areas / areas.sum()
        pick = rng.choice(len(areas), size=n, p=probs)
        r1 = np.sqrt(rng.random(n))[:, None]
        r2 = rng.random(n)[:, None]
        pts = (1 - r1) * a[pick] + r1 * (1 - r2) * b[pick] + r1 * r2 * c[pick]
        return pts.astype(np.float32)

    def bounds(self):
        v = self.mesh.vertices.data
        return v.min(axis=0).astype(np.float64), v.max(axis=0).astype(np.float64)
