import numpy as np
import pytest

from tetsculpt.autodiff import Tensor
from tetsculpt.fields import GeometryField, TextureField, MLP

from conftest import finite_diff, rel_err


def test_zero_head_gives_constant_output(rng):
    f = GeometryField(deform_scale=1.0 / 32, rng=rng)
    pts = rng.uniform(-1, 1, (5, 3)).astype(np.float32)
    s, off = f(Tensor(pts))
    assert np.allclose(s.data, 0.0)
    assert np.allclose(off.data, 0.0)


def test_determinism_identical_points(rng):
    f = GeometryField(deform_scale=1.0 / 32, rng=rng)
    # give the head nonzero weights
    f.mlp.weights[-1].data[:] = rng.standard_normal(
        f.mlp.weights[-1].data.shape).astype(np.float32) * 0.1
    p = rng.uniform(-1, 1, (1, 3)).astype(np.float32)
    pts = np.vstack([p, p])
    s, off = f(Tensor(pts))
    assert np.array_equal(s.data[0], s.data[1])
    assert np.array_equal(off.data[0], off.data[1])


def test_offset_bounded_by_half_cell(rng):
    scale = 1.0 / 16
    f = GeometryField(deform_scale=scale, rng=rng)
    f.mlp.weights[-1].data[:] = 50.0  # saturate tanh
    pts = rng.uniform(-1, 1, (64, 3)).astype(np.float32)
    _, off = f(Tensor(pts))
    assert np.all(np.abs(off.data) <= scale + 1e-6)


def test_rejects_non_finite_points(rng):
    f = GeometryField(deform_scale=1.0 / 32, rng=rng)
    pts = np.zeros((3, 3), np.float32)
    pts[1, 2] = np.nan
    with pytest.raises(ValueError, match=r"\(1, 2\)"):
        f(Tensor(pts))


def test_texture_field_range_and_gradient(rng):
    f = TextureField(hidden=16, depth=2, rng=rng)
    f.mlp.weights[-1].data[:] = rng.standard_normal(
        f.mlp.weights[-1].data.shape).astype(np.float32)
    pts = rng.uniform(-1, 1, (32, 3)).astype(np.float32)
    alb = f(Tensor(pts))
    assert np.all(alb.data > 0.0) and np.all(alb.data < 1.0)
    alb.sum().backward()
    # sigmoid keeps gradients alive strictly inside (0, 1)
    assert any(np.abs(p.grad).max() > 0 for p in f.parameters())


def test_gradient_matches_finite_differences(rng):
    # small layout so the exhaustive per-parameter sweep stays fast
    f = GeometryField(deform_scale=0.05, hidden=8, depth=2, n_freqs=2, rng=rng)
    for w in f.mlp.weights:
        w.data[:] = rng.standard_normal(w.data.shape).astype(np.float32) * 0.4
    for b in f.mlp.biases:
        b.data[:] = rng.standard_normal(b.data.shape).astype(np.float32) * 0.1
    pts = rng.uniform(-0.9, 0.9, (7, 3)).astype(np.float32)

    s, off = f(Tensor(pts))
    loss = s.sum() + off.sum()
    loss.backward()

    def value():
        s2, off2 = f(Tensor(pts))
        return float((s2.sum() + off2.sum()).data)

    for p in f.parameters():
        fd = finite_diff(value, p.data, step=1e-3)
        assert rel_err(p.grad, fd) < 1e-2, p.name


def test_state_dict_roundtrip(rng):
    f = GeometryField(deform_scale=1.0 / 48, rng=rng)
    f.mlp.weights[0].data += 1.0
    d = f.state_dict()
    g = GeometryField(deform_scale=1.0 / 32, rng=np.random.default_rng(9))
    g.load_state_dict(d)
    assert g.deform_scale == f.deform_scale
    pts = rng.uniform(-1, 1, (4, 3)).astype(np.float32)
    s1, _ = f(Tensor(pts))
    s2, _ = g(Tensor(pts))
    assert np.array_equal(s1.data, s2.data)
