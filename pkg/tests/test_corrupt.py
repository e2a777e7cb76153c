import numpy as np
import pytest

from lidarwx.corrupt import (TOY_SEVERITIES, CorruptionSpec, Kind, apply_corruption,
                             apply_geom_perturb, apply_intensity_distort, apply_occlusion,
                             apply_point_drop, intensity_noise, occlusion_mask)
from lidarwx.errors import InvalidSpecError
from lidarwx.pointcloud import LabelArray, PointCloud

from conftest import random_cloud


def tagged(cloud):
    """Labels whose instance id is the original point index, to track survivors."""
    return LabelArray(np.arange(cloud.n) % 5, np.arange(cloud.n))


def test_toy_severities_match_experiments():
    assert TOY_SEVERITIES[Kind.POINT_DROP] == {"soft": 0.5, "hard": 0.9}
    assert TOY_SEVERITIES[Kind.OCCLUSION] == {"soft": 0.5, "hard": 0.9}
    assert TOY_SEVERITIES[Kind.GEOM_PERTURB] == {"soft": 0.05, "hard": 0.25}
    assert TOY_SEVERITIES[Kind.INTENSITY_DISTORT] == {"soft": 0.05, "hard": 0.25}


@pytest.mark.parametrize("mode", ["bernoulli", "exact"])
def test_drop_ratio_zero_is_identity(labelled_cloud, mode):
    cloud, labels = labelled_cloud
    out, lab = apply_point_drop(cloud, labels, 0.0, mode, seed=1)
    assert out.equals(cloud) and lab.equals(labels)


def test_drop_all_exact(labelled_cloud):
    cloud, labels = labelled_cloud
    out, lab = apply_point_drop(cloud, labels, 1.0, "exact", seed=1)
    assert out.n == 0 and len(lab) == 0


@pytest.mark.parametrize("ratio", [0.1, 0.5, 0.9, 0.333])
def test_drop_exact_count_and_alignment(rng, ratio):
    cloud = random_cloud(rng, 1001)
    labels = tagged(cloud)
    out, lab = apply_point_drop(cloud, labels, ratio, "exact", seed=5)
    assert cloud.n - out.n == round(1001 * ratio)
    idx = lab.instance.astype(int)
    assert np.all(np.diff(idx) > 0)  # survivor order preserved
    assert out.equals(cloud.take(idx))
    assert np.array_equal(lab.semantic, labels.semantic[idx])


def test_drop_bernoulli_binomial_bound(rng):
    cloud = random_cloud(rng, 10_000)
    labels = tagged(cloud)
    bound = 3 * np.sqrt(10_000 * 0.9 * 0.1)
    for seed in range(50):
        out, _ = apply_point_drop(cloud, labels, 0.9, "bernoulli", seed=seed)
        assert abs(out.n - 1000) <= bound


def test_occlusion_identity_and_example():
    cloud = PointCloud.from_xyz([[10.0, 0.0, 0.0]], [0.7])
    assert apply_occlusion(cloud, 0.0, seed=3).equals(cloud)
    out = apply_occlusion(cloud, 1.0, seed=3)
    assert (out.x[0], out.y[0], out.z[0], out.intensity[0]) == (1.0, 0.0, 0.0, 0.7)


def test_occlusion_half(rng):
    cloud = random_cloud(rng, 2001)
    out = apply_occlusion(cloud, 0.5, seed=11)
    r_old, r_new = cloud.ranges, out.ranges
    scaled = np.isclose(r_new, 0.1 * r_old, rtol=1e-6, atol=0)
    untouched = ((out.x == cloud.x) & (out.y == cloud.y) & (out.z == cloud.z))
    assert scaled.sum() == round(2001 / 2)
    assert np.all(untouched == ~scaled)
    assert np.array_equal(out.intensity, cloud.intensity)
    u_old = cloud.xyz / r_old[:, None]
    u_new = out.xyz / r_new[:, None]
    np.testing.assert_allclose(u_new, u_old, rtol=1e-6, atol=1e-12)
    assert np.array_equal(scaled, occlusion_mask(2001, 0.5, 11))


def test_geom_perturb_moments(rng):
    cloud = random_cloud(rng, 100_000)
    assert apply_geom_perturb(cloud, 0.0, seed=2).equals(cloud)
    out = apply_geom_perturb(cloud, 0.25, seed=2)
    for axis in ("x", "y", "z"):
        d = getattr(out, axis) - getattr(cloud, axis)
        assert abs(d.mean()) <= 0.005
        assert abs(d.std() - 0.25) <= 0.01
    assert np.array_equal(out.intensity, cloud.intensity)


def test_intensity_signed_moments():
    n = 100_000
    cloud = PointCloud.from_xyz(np.ones((n, 3)), np.full(n, 0.5))
    noise = intensity_noise(n, 0.05, True, 4)
    assert abs(noise.std() - 0.05) <= 0.002
    out = apply_intensity_distort(cloud, 0.05, True, seed=4)
    np.testing.assert_array_equal(out.intensity, np.clip(0.5 - noise, 0, 1))
    assert np.array_equal(out.xyz, cloud.xyz)


def test_intensity_attenuate_only_reduces(rng):
    cloud = random_cloud(rng, 5000)
    out = apply_intensity_distort(cloud, 0.25, signed=False, seed=8)
    assert np.all(out.intensity <= cloud.intensity)
    assert np.all(out.intensity >= 0)


def test_intensity_sigma_zero(rng):
    cloud = random_cloud(rng, 100)
    assert apply_intensity_distort(cloud, 0.0, seed=1).equals(cloud)


def test_intensity_hard_is_clamped(rng):
    cloud = random_cloud(rng, 5000)
    out = apply_intensity_distort(cloud, 0.25, seed=1)
    assert out.intensity.min() >= 0 and out.intensity.max() <= 1


@pytest.mark.parametrize("kind,level", [(k, lv) for k in Kind for lv in ("soft", "hard")])
def test_dispatch_matches_direct_call(labelled_cloud, kind, level):
    cloud, labels = labelled_cloud
    spec = CorruptionSpec.toy(kind, level, seed=21)
    out, lab = apply_corruption(cloud, labels, spec)
    sev = spec.severity
    if kind is Kind.POINT_DROP:
        ref, ref_lab = apply_point_drop(cloud, labels, sev, "bernoulli", 21)
        assert lab.equals(ref_lab)
    else:
        ref = {Kind.OCCLUSION: lambda: apply_occlusion(cloud, sev, 21),
               Kind.GEOM_PERTURB: lambda: apply_geom_perturb(cloud, sev, 21),
               Kind.INTENSITY_DISTORT: lambda: apply_intensity_distort(cloud, sev, True, 21)}[kind]()
        assert lab is labels and out.n == cloud.n
    assert out.equals(ref)


def test_d1_hard_spec():
    spec = CorruptionSpec(Kind.POINT_DROP, 0.9, "exact", seed=1)
    cloud = PointCloud.from_xyz(np.zeros((100, 3)))
    out, _ = apply_corruption(cloud, LabelArray.from_semantic(np.zeros(100)), spec)
    assert out.n == 10


def test_corruptions_are_pure(labelled_cloud):
    cloud, labels = labelled_cloud
    for kind in Kind:
        spec = CorruptionSpec.toy(kind, "hard", seed=99)
        a = apply_corruption(cloud, labels, spec)
        b = apply_corruption(cloud, labels, spec)
        assert a[0].equals(b[0]) and a[1].equals(b[1])


@pytest.mark.parametrize("kwargs", [
    dict(kind="point_drop", severity=1.5),
    dict(kind="occlusion", severity=-0.1),
    dict(kind="geom_perturb", severity=-1),
    dict(kind="fog", severity=0.1),
    dict(kind="point_drop", severity=0.5, mode="gaussian"),
])
def test_invalid_specs(kwargs):
    with pytest.raises(InvalidSpecError):
        CorruptionSpec(**kwargs)


def test_dispatch_rejects_non_spec(labelled_cloud):
    with pytest.raises(InvalidSpecError):
        apply_corruption(*labelled_cloud, {"kind": "point_drop"})
