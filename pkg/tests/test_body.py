import numpy as np

from tetsculpt.body import Capsule, humanoid, PART_COLORS


def test_capsule_sdf_values():
    c = Capsule((0, 0, 0), (0, 1, 0), 0.25, "torso")
    assert c.sdf([0.0, 0.5, 0.0]) == -0.25
    assert c.sdf([0.5, 0.5, 0.0]) == 0.25
    assert abs(c.sdf([0.0, 1.25, 0.0])) < 1e-12


def test_union_sdf_sign_and_lipschitz(rng):
    shape = humanoid()
    p = rng.uniform(-1, 1, (400, 3))
    q = p + rng.standard_normal((400, 3)) * 0.05
    dp = np.asarray(shape.sdf(p), np.float64)
    dq = np.asarray(shape.sdf(q), np.float64)
    step = np.linalg.norm(p - q, axis=1)
    assert np.all(np.abs(dp - dq) <= step + 1e-5)
    assert shape.sdf([0.0, 0.0, 0.0]) < 0       # inside torso
    assert shape.sdf([0.9, 0.9, 0.9]) > 0       # far corner


def test_surface_samples_lie_on_some_capsule(rng):
    shape = humanoid()
    pts = shape.surface_samples(500, rng)
    d_each = np.stack([np.abs(np.atleast_1d(c.sdf(pts)))
                       for c in shape.capsules])
    assert np.max(d_each.min(axis=0)) < 1e-6


def test_bounds_inside_unit_box():
    lo, hi = humanoid().bounds()
    assert np.all(lo > -1.0) and np.all(hi < 1.0)


def test_volume_quadrature_close_to_part_sum():
    shape = humanoid()
    union = shape.volume_quadrature(res=128)
    total = sum(c.volume() for c in shape.capsules)
    # parts barely overlap, so the union is a bit below the plain sum
    assert union < total
    assert union > 0.75 * total


def test_landmarks_and_palette():
    marks = humanoid().landmarks()
    assert set(marks) == {"center", "head", "upper", "lower"}
    assert marks["head"][1] > marks["upper"][1] > marks["lower"][1]
    parts = {c.part for c in humanoid().capsules}
    assert parts <= set(PART_COLORS)


def test_skirt_variant_changes_silhouette():
    base, skirted = humanoid(), humanoid(skirt=True)
    p = np.array([[0.0, -0.35, 0.17]])
    assert base.sdf(p)[0] > 0 and skirted.sdf(p)[0] < 0
