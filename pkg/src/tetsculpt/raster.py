"""Differentiable z-buffer rasterizer with a soft silhouette.

Coverage and depth come from a classic per-triangle scan (numba kernels);
interpolated attributes (camera-space normals, world positions for texture
lookups) are rebuilt from autodiff gathers so gradients reach mesh vertices
and the albedo field. Silhouette gradients come from a separate soft mask:
per pixel, sigmoid(d / tau) of the signed screen-space distance to the
nearest covering triangle's boundary (positive inside, negative outside,
max over triangles). Pixels beyond `band` pixels from every triangle stay
at exactly zero.

Kernels are single-threaded on purpose: outputs must be bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from . import autodiff as ad
from .autodiff import Tensor
from .body import PART_COLORS

NORMAL_BG = (0.5, 0.5, 1.0)  # encodes the camera-facing unit normal
MIN_DEPTH = 0.05


# ----------------------------------------------------------------------
# numba kernels
# ----------------------------------------------------------------------

@njit(cache=True)
def _hard_raster(sx, sy, depth, faces, H, W):
    face_id = np.full((H, W), -1, np.int32)
    zbuf = np.full((H, W), 1e30, np.float64)
    bary = np.zeros((H, W, 3), np.float64)
    for f in range(faces.shape[0]):
        i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
        ax, ay, az = sx[i0], sy[i0], depth[i0]
        bx, by, bz = sx[i1], sy[i1], depth[i1]
        cx, cy, cz = sx[i2], sy[i2], depth[i2]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area == 0.0:
            continue
        xmin = max(int(np.floor(min(ax, bx, cx))), 0)
        xmax = min(int(np.ceil(max(ax, bx, cx))), W - 1)
        ymin = max(int(np.floor(min(ay, by, cy))), 0)
        ymax = min(int(np.ceil(max(ay, by, cy))), H - 1)
        if xmin > xmax or ymin > ymax:
            continue
        inv = 1.0 / area
        for py in range(ymin, ymax + 1):
            for px in range(xmin, xmax + 1):
                w0 = ((bx - px) * (cy - py) - (by - py) * (cx - px)) * inv
                w1 = ((cx - px) * (ay - py) - (cy - py) * (ax - px)) * inv
                w2 = 1.0 - w0 - w1
                if w0 >= 0.0 and w1 >= 0.0 and w2 >= 0.0:
                    q0 = w0 / az
                    q1 = w1 / bz
                    q2 = w2 / cz
                    z = 1.0 / (q0 + q1 + q2)  # perspective-correct depth
                    if z < zbuf[py, px]:
                        zbuf[py, px] = z
                        face_id[py, px] = f
                        bary[py, px, 0] = q0 * z
                        bary[py, px, 1] = q1 * z
                        bary[py, px, 2] = q2 * z
    return face_id, bary


@njit(cache=True)
def _tri_signed_dist(px, py, x0, y0, x1, y1, x2, y2, o):
    """Signed distance to a 2D triangle: positive inside (distance to the
    nearest edge line), negative outside (distance to the boundary)."""
    c0 = ((x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)) * o
    c1 = ((x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)) * o
    c2 = ((x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)) * o
    l0 = np.sqrt((x1 - x0) ** 2 + (y1 - y0) ** 2)
    l1 = np.sqrt((x2 - x1) ** 2 + (y2 - y1) ** 2)
    l2 = np.sqrt((x0 - x2) ** 2 + (y0 - y2) ** 2)
    d0 = c0 / l0
    d1 = c1 / l1
    d2 = c2 / l2
    m = min(d0, min(d1, d2))
    if m >= 0.0:
        return m
    # outside: distance to the nearest boundary segment
    best = 1e30
    for (ux, uy, vx, vy) in ((x0, y0, x1, y1), (x1, y1, x2, y2),
                             (x2, y2, x0, y0)):
        ex = vx - ux
        ey = vy - uy
        ll = ex * ex + ey * ey
        t = ((px - ux) * ex + (py - uy) * ey) / ll
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        qx = ux + t * ex
        qy = uy + t * ey
        dist = np.sqrt((px - qx) ** 2 + (py - qy) ** 2)
        if dist < best:
            best = dist
    return -best


@njit(cache=True)
def _soft_forward(sx, sy, faces, H, W, band):
    dbuf = np.full((H, W), -1e30, np.float64)
    arg = np.full((H, W), -1, np.int32)
    for f in range(faces.shape[0]):
        i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
        x0, y0 = sx[i0], sy[i0]
        x1, y1 = sx[i1], sy[i1]
        x2, y2 = sx[i2], sy[i2]
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area == 0.0:
            continue
        o = 1.0 if area > 0.0 else -1.0
        xmin = max(int(np.floor(min(x0, x1, x2) - band)), 0)
        xmax = min(int(np.ceil(max(x0, x1, x2) + band)), W - 1)
        ymin = max(int(np.floor(min(y0, y1, y2) - band)), 0)
        ymax = min(int(np.ceil(max(y0, y1, y2) + band)), H - 1)
        for py in range(ymin, ymax + 1):
            for px in range(xmin, xmax + 1):
                d = _tri_signed_dist(float(px), float(py),
                                     x0, y0, x1, y1, x2, y2, o)
                if d > dbuf[py, px]:
                    dbuf[py, px] = d
                    arg[py, px] = f
    return dbuf, arg


@njit(cache=True)
def _soft_backward(gmask, dbuf, arg, sx, sy, faces, tau):
    """Accumulate d(loss)/d(screen xy) through the argmax triangle of each
    touched pixel. The nearest-feature case is recomputed per pixel."""
    M = sx.shape[0]
    gx = np.zeros(M, np.float64)
    gy = np.zeros(M, np.float64)
    H, W = gmask.shape
    for py in range(H):
        for px in range(W):
            f = arg[py, px]
            if f < 0:
                continue
            g = gmask[py, px]
            if g == 0.0:
                continue
            d = dbuf[py, px]
            e = np.exp(-abs(d) / tau)
            s = e / (1.0 + e)          # sigmoid(-|d|/tau), stable
            gd = g * s * (1.0 - s) / tau
            if gd == 0.0:
                continue
            i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
            x0, y0 = sx[i0], sy[i0]
            x1, y1 = sx[i1], sy[i1]
            x2, y2 = sx[i2], sy[i2]
            area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
            o = 1.0 if area > 0.0 else -1.0
            ids = (i0, i1, i2)
            xs = (x0, x1, x2)
            ys = (y0, y1, y2)
            if d >= 0.0:
                # inside: d = o*C/L of the closest edge line
                bestk = 0
                bestd = 1e30
                for k in range(3):
                    ux, uy = xs[k], ys[k]
                    vx, vy = xs[(k + 1) % 3], ys[(k + 1) % 3]
                    C = (vx - ux) * (py - uy) - (vy - uy) * (px - ux)
                    L = np.sqrt((vx - ux) ** 2 + (vy - uy) ** 2)
                    dd = o * C / L
                    if dd < bestd:
                        bestd = dd
                        bestk = k
                k = bestk
                iu, iv = ids[k], ids[(k + 1) % 3]
                ux, uy = xs[k], ys[k]
                vx, vy = xs[(k + 1) % 3], ys[(k + 1) % 3]
                C = (vx - ux) * (py - uy) - (vy - uy) * (px - ux)
                L = np.sqrt((vx - ux) ** 2 + (vy - uy) ** 2)
                L2 = L * L
                ex = vx - ux
                ey = vy - uy
                dC_ux = vy - py
                dC_uy = px - vx
                dC_vx = py - uy
                dC_vy = ux - px
                coef = o * gd / L2
                gx[iu] += coef * (dC_ux * L + C * ex / L)
                gy[iu] += coef * (dC_uy * L + C * ey / L)
                gx[iv] += coef * (dC_vx * L - C * ex / L)
                gy[iv] += coef * (dC_vy * L - C * ey / L)
            else:
                # outside: d = -distance to the closest boundary segment
                bestk = 0
                bestdist = 1e30
                bestt = 0.0
                for k in range(3):
                    ux, uy = xs[k], ys[k]
                    vx, vy = xs[(k + 1) % 3], ys[(k + 1) % 3]
                    ex = vx - ux
                    ey = vy - uy
                    ll = ex * ex + ey * ey
                    t = ((px - ux) * ex + (py - uy) * ey) / ll
                    if t < 0.0:
                        t = 0.0
                    elif t > 1.0:
                        t = 1.0
                    qx = ux + t * ex
                    qy = uy + t * ey
                    dist = np.sqrt((px - qx) ** 2 + (py - qy) ** 2)
                    if dist < bestdist:
                        bestdist = dist
                        bestk = k
                        bestt = t
                if bestdist < 1e-12:
                    continue
                k = bestk
                iu, iv = ids[k], ids[(k + 1) % 3]
                ux, uy = xs[k], ys[k]
                vx, vy = xs[(k + 1) % 3], ys[(k + 1) % 3]
                if bestt <= 0.0:
                    gx[iu] += gd * (px - ux) / bestdist
                    gy[iu] += gd * (py - uy) / bestdist
                elif bestt >= 1.0:
                    gx[iv] += gd * (px - vx) / bestdist
                    gy[iv] += gd * (py - vy) / bestdist
                else:
                    # interior projection: distance to the edge line
                    C = (vx - ux) * (py - uy) - (vy - uy) * (px - ux)
                    L = np.sqrt((vx - ux) ** 2 + (vy - uy) ** 2)
                    L2 = L * L
                    sg = 1.0 if C > 0.0 else -1.0
                    ex = vx - ux
                    ey = vy - uy
                    coef = -sg * gd / L2  # d = -|C|/L
                    gx[iu] += coef * ((vy - py) * L + C * ex / L)
                    gy[iu] += coef * ((px - vx) * L + C * ey / L)
                    gx[iv] += coef * ((py - uy) * L - C * ex / L)
                    gy[iv] += coef * ((ux - px) * L - C * ey / L)
    return gx, gy


# ----------------------------------------------------------------------
# autodiff-level pieces
# ----------------------------------------------------------------------

def project(vertices, camera):
    """World -> (screen xy Tensor[M,2], depth Tensor[M,1], cam z of normals).

    Screen coordinates are pixel units with pixel centers at integers; the
    look-at target lands exactly on the image center.
    """
    R = camera.view_matrix()
    pos = camera.position().astype(np.float32)
    pc = ad.matmul(vertices - Tensor(pos), Tensor(R.T))
    depth = (-pc[:, 2:3]).maximum(MIN_DEPTH)
    f = float(camera.focal_px())
    cx = (camera.size - 1) / 2.0
    cy = (camera.size - 1) / 2.0
    sx = pc[:, 0:1] / depth * f + cx
    sy = pc[:, 1:2] / depth * (-f) + cy
    return ad.concat([sx, sy], axis=1), depth


def soft_silhouette(sxy, faces, H, W, tau=1.0, band=None):
    """Soft coverage mask as a Tensor[H, W] with gradients into `sxy`."""
    if band is None:
        band = max(1.0, 6.0 * tau)  # sigmoid(-6) ~ 2.5e-3 tail cut
    sx = np.ascontiguousarray(sxy.data[:, 0], np.float64)
    sy = np.ascontiguousarray(sxy.data[:, 1], np.float64)
    faces = np.ascontiguousarray(faces, np.int64)
    dbuf, arg = _soft_forward(sx, sy, faces, H, W, float(band))
    touched = arg >= 0
    mask = np.zeros((H, W), np.float64)
    dt = dbuf[touched] / tau
    mask[touched] = np.where(
        dt >= 0,
        1.0 / (1.0 + np.exp(-np.minimum(dt, 50.0))),
        np.exp(np.maximum(dt, -50.0)) / (1.0 + np.exp(np.maximum(dt, -50.0))))
    out = Tensor(mask.astype(np.float32), requires_grad=sxy.requires_grad,
                 _parents=(sxy,) if sxy.requires_grad else ())
    if out.requires_grad:
        def bw(g):
            gx, gy = _soft_backward(np.asarray(g, np.float64), dbuf, arg,
                                    sx, sy, faces, float(tau))
            return (np.stack([gx, gy], axis=1).astype(np.float32),)
        out._bw = bw
    return out


@dataclass
class RenderOutput:
    mask: Tensor
    normal: Tensor
    rgb: Tensor
    coverage: np.ndarray          # hard per-pixel hit map (bool, no grad)
    camera: object = None


def _interp(attr, faces, fid, w):
    """Barycentric combination of per-vertex attributes at covered pixels."""
    acc = None
    for k in range(3):
        part = ad.take0(attr, faces[fid, k]) * w[:, k:k + 1]
        acc = part if acc is None else acc + part
    return acc


def rasterize(mesh, texture, camera, tau=1.0, background=(0.0, 0.0, 0.0),
              channels=("mask", "normal", "rgb"), band=None):
    """Render a mesh into mask / normal / RGB images (64 px default).

    Normals are camera space, encoded (n+1)/2 over a (0.5, 0.5, 1)
    background. RGB is albedo * (0.3 + 0.7 * max(0, n.l)) with a headlight
    along the view direction over a constant background color.
    """
    H = W = camera.size
    bg = np.asarray(background, np.float32)
    if mesh.is_empty():
        nbg = np.tile(np.asarray(NORMAL_BG, np.float32), (H, W, 1))
        rgbbg = np.tile(bg, (H, W, 1))
        return RenderOutput(mask=ad.zeros((H, W)),
                            normal=Tensor(nbg), rgb=Tensor(rgbbg),
                            coverage=np.zeros((H, W), bool), camera=camera)
    if not np.isfinite(mesh.vertices.data).all():
        bad = np.argwhere(~np.isfinite(mesh.vertices.data))[0]
        raise ValueError(f"mesh vertex {bad[0]} has non-finite coordinate "
                         f"{bad[1]}")

    sxy, depth = project(mesh.vertices, camera)
    sx = np.ascontiguousarray(sxy.data[:, 0], np.float64)
    sy = np.ascontiguousarray(sxy.data[:, 1], np.float64)
    dz = np.ascontiguousarray(depth.data[:, 0], np.float64)
    faces = mesh.faces
    face_id, bary = _hard_raster(sx, sy, dz, faces, H, W)
    coverage = face_id >= 0
    pix = np.nonzero(coverage.ravel())[0]
    fid = face_id.ravel()[pix]
    w = bary.reshape(-1, 3)[pix].astype(np.float32)

    mask = normal_img = rgb_img = None
    need_normals = "normal" in channels or "rgb" in channels
    if need_normals and len(pix):
        vn = mesh.vertex_normals()
        R = camera.view_matrix()
        vn_cam = ad.matmul(vn, Tensor(R.T))
        n_pix = _interp(vn_cam, faces, fid, w)
        n2 = (n_pix * n_pix).sum(axis=1, keepdims=True)
        n_unit = n_pix / (n2 + 1e-12).sqrt()

    if "mask" in channels:
        mask = soft_silhouette(sxy, faces, H, W, tau=tau, band=band)
    if "normal" in channels:
        if len(pix):
            enc = n_unit * 0.5 + 0.5
            flat = ad.scatter_rows(enc, pix, H * W,
                                   fill=np.asarray(NORMAL_BG, np.float32))
            normal_img = flat.reshape(H, W, 3)
        else:
            normal_img = Tensor(np.tile(np.asarray(NORMAL_BG, np.float32),
                                        (H, W, 1)))
    if "rgb" in channels:
        if len(pix) and texture is not None:
            p_pix = _interp(mesh.vertices, faces, fid, w)
            albedo = texture(p_pix)
            shade = n_unit[:, 2:3].maximum(0.0) * 0.7 + 0.3
            flat = ad.scatter_rows(albedo * shade, pix, H * W, fill=bg)
            rgb_img = flat.reshape(H, W, 3)
        else:
            rgb_img = Tensor(np.tile(bg, (H, W, 1)))

    return RenderOutput(mask=mask, normal=normal_img, rgb=rgb_img,
                        coverage=coverage, camera=camera)


def decode_normals(img):
    """Inverse of the (n+1)/2 encoding; plain ndarray helper."""
    return np.asarray(img, np.float32) * 2.0 - 1.0


# ----------------------------------------------------------------------
# pose condition image
# ----------------------------------------------------------------------

def render_pose_image(shape, camera):
    """Part-colored capsule render used as the pose condition channel.

    Analytic ray-capsule intersection per part, nearest hit wins; black
    background. Not differentiable (it is an input, never optimized).
    """
    H = W = camera.size
    pos = camera.position()
    right, up, fwd = camera.basis()
    f = camera.focal_px()
    cx = (W - 1) / 2.0
    cy = (H - 1) / 2.0
    px, py = np.meshgrid(np.arange(W), np.arange(H))
    dirs = ((px - cx)[..., None] * right + (cy - py)[..., None] * up
            + f * fwd)
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    dirs = dirs.reshape(-1, 3)

    best_t = np.full(len(dirs), np.inf)
    color = np.zeros((len(dirs), 3), np.float32)
    for cap in shape.capsules:
        t = _ray_capsule(pos, dirs, np.asarray(cap.a, np.float64),
                         np.asarray(cap.b, np.float64), cap.radius)
        hit = t < best_t
        best_t[hit] = t[hit]
        color[hit] = PART_COLORS[cap.part]
    return color.reshape(H, W, 3)


def _ray_capsule(origin, dirs, a, b, radius):
    """Smallest positive hit parameter per ray (inf on miss)."""
    t_best = np.full(len(dirs), np.inf)
    axis = b - a
    L = np.linalg.norm(axis)
    m = origin - a
    if L > 0:
        u = axis / L
        # infinite cylinder reduced to the plane orthogonal to u
        w = dirs - (dirs @ u)[:, None] * u
        q = m - (m @ u) * u
        A = np.einsum("ij,ij->i", w, w)
        B = 2.0 * (w @ q)
        C = q @ q - radius * radius
        disc = B * B - 4 * A * C
        ok = (disc >= 0) & (A > 1e-14)
        t = np.full(len(dirs), np.inf)
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = (-B - sq) / (2 * A + 1e-30)
        s = (m + t0[:, None] * dirs) @ u  # axial coordinate of the hit
        valid = ok & (t0 > 0) & (s >= 0) & (s <= L)
        t[valid] = t0[valid]
        t_best = np.minimum(t_best, t)
    for center in (a, b):
        mc = origin - center
        B = 2.0 * (dirs @ mc)
        C = mc @ mc - radius * radius
        disc = B * B - 4 * C
        ok = disc >= 0
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = (-B - sq) / 2.0
        valid = ok & (t0 > 0)
        t = np.where(valid, t0, np.inf)
        t_best = np.minimum(t_best, t)
    return t_best
