import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lidarwx.errors import CorruptValueError, MalformedLabelError, MalformedScanError
from lidarwx.pointcloud import (LabelArray, PointCloud, SphericalView, decode_labels, decode_scan,
                                encode_labels, encode_scan, from_spherical, normalize_intensity,
                                to_spherical)
from lidarwx.scene import CLASS_NAMES, SceneSpec, generate_scene

from conftest import random_cloud, small_spec


def test_decode_single_point():
    cloud = decode_scan(struct.pack("<4f", 1.0, 0.0, 0.0, 0.5))
    assert cloud.n == 1
    assert (cloud.x[0], cloud.y[0], cloud.z[0], cloud.intensity[0]) == (1.0, 0.0, 0.0, 0.5)


def test_empty_scan_roundtrip():
    assert decode_scan(b"").n == 0
    assert encode_scan(PointCloud.empty()) == b""


def test_zero_point_encodes_to_zero_bytes():
    assert encode_scan(PointCloud.from_xyz([[0, 0, 0]], [0.0])) == bytes(16)


def test_random_byte_blocks_roundtrip(rng):
    for _ in range(1000):
        n = int(rng.integers(0, 40))
        block = rng.normal(0, 50, n * 4).astype("<f4").tobytes()
        assert encode_scan(decode_scan(block)) == block


def test_random_clouds_roundtrip(rng):
    for _ in range(50):
        cloud = random_cloud(rng, int(rng.integers(0, 300)))
        assert decode_scan(encode_scan(cloud)).equals(cloud)


def test_negative_zero_survives():
    block = struct.pack("<4f", -0.0, 1.0, -0.0, 0.0)
    assert encode_scan(decode_scan(block)) == block


@pytest.mark.parametrize("length", [1, 15, 17, 33])
def test_malformed_scan_length(length):
    with pytest.raises(MalformedScanError):
        decode_scan(bytes(length))


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_reports_point_index(bad):
    block = struct.pack("<8f", 0, 0, 0, 0, 1, bad, 0, 0)
    with pytest.raises(CorruptValueError) as exc:
        decode_scan(block)
    assert exc.value.index == 1


def test_label_bitfields():
    labels = decode_labels(struct.pack("<2I", 0x00010009, 0))
    assert labels.semantic.tolist() == [9, 0]
    assert labels.instance.tolist() == [1, 0]


def test_label_roundtrip(rng):
    for _ in range(200):
        rec = rng.integers(0, 2**32, int(rng.integers(0, 50)), dtype=np.uint64).astype("<u4")
        assert encode_labels(decode_labels(rec.tobytes())) == rec.tobytes()


def test_malformed_labels():
    with pytest.raises(MalformedLabelError):
        decode_labels(bytes(6))


def test_label_validation():
    labels = LabelArray.from_semantic([0, 4, 255, 7], ignore_label=255)
    with pytest.raises(CorruptValueError) as exc:
        labels.validate(5)
    assert exc.value.index == 3
    LabelArray.from_semantic([0, 4, 255]).validate(5, 3)


def test_normalize_intensity_records_scale():
    cloud = PointCloud.from_xyz(np.zeros((3, 3)), [0.0, 127.5, 255.0])
    out = normalize_intensity(cloud)
    assert out.meta["intensity_scale"] == 255.0
    assert out.intensity.tolist() == [0.0, 0.5, 1.0]
    same = normalize_intensity(PointCloud.from_xyz(np.zeros((1, 3)), [0.3]))
    assert same.meta["intensity_scale"] == 1.0 and same.intensity[0] == 0.3


@pytest.mark.parametrize("xyz,expected", [
    ((1, 0, 0), (1, 0, 0)),
    ((0, 1, 0), (1, math.pi / 2, 0)),
    ((0, 0, 0), (0, 0, 0)),
    ((-1, 0, 0), (1, math.pi, 0)),
    ((0, 0, -2), (2, 0, -math.pi / 2)),
])
def test_spherical_cases(xyz, expected):
    v = to_spherical(PointCloud.from_xyz([xyz]))
    assert (v.r[0], v.azimuth[0], v.inclination[0]) == pytest.approx(expected, abs=1e-15)


def test_azimuth_range_excludes_minus_pi():
    cloud = PointCloud.from_xyz([[-1.0, -0.0, 0.0], [-1.0, 0.0, 0.0]])
    theta = to_spherical(cloud).azimuth
    assert np.all(theta > -math.pi) and np.all(theta <= math.pi)


finite = st.floats(-1e4, 1e4, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(finite, finite, finite), min_size=1, max_size=20))
def test_spherical_roundtrip(points):
    cloud = PointCloud.from_xyz(points)
    v = to_spherical(cloud)
    r2 = cloud.x ** 2 + cloud.y ** 2 + cloud.z ** 2
    pos = v.r > 0
    np.testing.assert_allclose(v.r[pos] ** 2, r2[pos], rtol=1e-9)
    # inclination agrees with asin(z / r)
    np.testing.assert_allclose(v.inclination[pos], np.arcsin(np.clip(cloud.z[pos] / v.r[pos], -1, 1)),
                               atol=1e-7)
    back = from_spherical(v)
    err = np.abs(back - cloud.xyz).max(axis=1)
    assert np.all(err[pos] <= 1e-9 * v.r[pos])
    assert np.all((v.azimuth > -math.pi) & (v.azimuth <= math.pi))
    assert np.all(np.abs(v.inclination) <= math.pi / 2)


def test_ground_only_scene():
    spec = SceneSpec(n_ground=5000, n_wall=0, n_pole=0, n_vehicle=0, n_clutter=0,
                     ground_z=0.0, ground_noise=0.02, seed=3)
    cloud, labels = generate_scene(spec)
    assert cloud.n == 5000
    assert np.all(labels.semantic == 0)
    assert np.all(np.abs(cloud.z) <= 0.02)


def test_scene_is_deterministic():
    a = generate_scene(small_spec(seed=9))
    b = generate_scene(small_spec(seed=9))
    assert a[0].equals(b[0]) and a[1].equals(b[1])
    c = generate_scene(small_spec(seed=10))
    assert not a[0].equals(c[0])


@pytest.mark.parametrize("seed", range(5))
def test_scene_counts_and_extents(seed):
    spec = SceneSpec(seed=seed)
    cloud, labels = generate_scene(spec)
    hist = np.bincount(labels.semantic, minlength=len(CLASS_NAMES))
    assert hist.tolist() == list(spec.counts)
    assert cloud.ranges.max() <= spec.max_range
    assert np.all((cloud.intensity >= 0) & (cloud.intensity <= 1))
    for cls, (mean, spread) in spec.intensity.items():
        vals = cloud.intensity[labels.semantic == cls]
        assert vals.min() >= max(mean - spread, 0) and vals.max() <= min(mean + spread, 1)
    # objects carry instance ids, stuff classes do not
    assert np.all(labels.instance[labels.semantic == 0] == 0)
    assert np.all(labels.instance[labels.semantic == 3] > 0)


def test_scene_spec_validation():
    from lidarwx.errors import InvalidSpecError
    with pytest.raises(InvalidSpecError):
        SceneSpec(n_ground=-1)
    with pytest.raises(InvalidSpecError):
        SceneSpec(max_range=0.0)
    with pytest.raises(InvalidSpecError):
        SceneSpec(walls=0)
