import json
import math

import numpy as np
import pytest

from torquelab import (Track, TrackSchemaError, TrackValidationError,
                       load_track, save_track, generate_circuit,
                       generate_oval, generate_paper_scale, generate_straight,
                       TrackError)


# ---------------------------------------------------------------------------
# load / save
# ---------------------------------------------------------------------------

def test_load_straight_file(tmp_path):
    doc = {"name": "strip", "closed": False,
           "points": [{"x": float(x), "y": 0.0, "half_width": 5.0}
                      for x in (0.0, 30.0, 70.0, 100.0)]}
    path = tmp_path / "strip.json"
    path.write_text(json.dumps(doc))
    track = load_track(path)
    assert track.total_length == pytest.approx(100.0, abs=1e-12)
    assert not track.closed
    assert track.cumulative_s[0] == 0.0
    assert np.all(np.diff(track.cumulative_s) > 0)


def test_load_zero_width_rejected(tmp_path):
    doc = {"name": "bad", "closed": False,
           "points": [{"x": 0.0, "y": 0.0, "half_width": 0.0},
                      {"x": 10.0, "y": 0.0, "half_width": 5.0}]}
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(TrackValidationError, match="half_width"):
        load_track(path)


@pytest.mark.parametrize("mutate, field", [
    (lambda d: d.pop("name"), "name"),
    (lambda d: d.pop("closed"), "closed"),
    (lambda d: d.pop("points"), "points"),
    (lambda d: d["points"][1].pop("half_width"), "half_width"),
    (lambda d: d["points"].__setitem__(0, {"x": "a", "y": 0, "half_width": 1}),
     "points"),
])
def test_load_schema_errors_name_field(tmp_path, mutate, field):
    doc = {"name": "t", "closed": False,
           "points": [{"x": 0.0, "y": 0.0, "half_width": 5.0},
                      {"x": 10.0, "y": 0.0, "half_width": 5.0}]}
    mutate(doc)
    path = tmp_path / "t.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(TrackSchemaError, match=field):
        load_track(path)


def test_self_intersecting_closed_track_rejected():
    # bow-tie
    pts = np.array([[0, 0, 3], [10, 10, 3], [10, 0, 3], [0, 10, 3]], dtype=float)
    with pytest.raises(TrackValidationError, match="self-intersect"):
        Track("bow", True, pts)


def test_roundtrip_identity(tmp_path):
    for track in (generate_oval(100, 30, 10), generate_straight(50, 8),
                  generate_paper_scale()):
        path = tmp_path / f"{track.name}.json"
        save_track(track, path)
        again = load_track(path)
        assert again == track
        assert again.total_length == track.total_length
        assert np.array_equal(again.cumulative_s, track.cumulative_s)


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def test_oval_length_is_stadium_perimeter():
    track = generate_oval(100.0, 30.0, 10.0)
    assert track.closed
    assert track.total_length == pytest.approx(2 * 100 + 2 * math.pi * 30, abs=0.05)


def test_paper_scale_length_and_corner_mix():
    track = generate_paper_scale()
    assert track.closed
    assert track.total_length >= 3900.0
    k = track.curvature()
    assert (k > 1 / 25).any()                      # hairpin
    assert ((k > 1 / 70) & (k < 1 / 30)).any()     # medium corners
    assert ((k > 1 / 200) & (k < 1 / 100)).any()   # fast sweeper


@pytest.mark.parametrize("kwargs", [
    {"straight_length": -1.0}, {"corner_radius": 0.0}, {"width": -2.0},
])
def test_oval_rejects_nonpositive_dimensions(kwargs):
    args = {"straight_length": 100.0, "corner_radius": 30.0, "width": 10.0}
    args.update(kwargs)
    with pytest.raises(TrackError):
        generate_circuit("oval", **args)


def test_generate_circuit_unknown_kind():
    with pytest.raises(TrackError):
        generate_circuit("moebius")


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def test_project_straight_perpendicular(straight_track):
    s, offset = straight_track.project((10.0, 2.5))
    assert s == pytest.approx(10.0, abs=1e-12)
    assert offset == pytest.approx(0.5, abs=1e-12)  # left positive
    s, offset = straight_track.project((10.0, -2.5))
    assert offset == pytest.approx(-0.5, abs=1e-12)


def test_project_on_centerline_zero_offset(oval_track, rng):
    for _ in range(50):
        s = rng.uniform(0, oval_track.total_length)
        p = oval_track.point_at(s)
        s2, offset = oval_track.project(p)
        assert abs(offset) < 1e-9
        ds = abs(s2 - s)
        assert min(ds, oval_track.total_length - ds) < 1e-9


def _dense_projection_oracle(track, point, n=10_000):
    """Independent nearest-point search over the same polyline densified to
    >= n samples by collinear subdivision (vectorized point-segment
    projection over every densified segment)."""
    pts = track.points[:, :2]
    k = int(np.ceil(n / (pts.shape[0] - 1)))
    frac = np.arange(k) / k
    a_all, d_all, s_all = [], [], []
    for i in range(pts.shape[0] - 1):
        seg = pts[i + 1] - pts[i]
        sub = pts[i] + frac[:, None] * seg
        a_all.append(sub)
        d_all.append(np.tile(seg / k, (k, 1)))
        seg_len = track.cumulative_s[i + 1] - track.cumulative_s[i]
        s_all.append(track.cumulative_s[i] + frac * seg_len)
    a = np.vstack(a_all)
    d = np.vstack(d_all)
    s0 = np.concatenate(s_all)
    len2 = np.sum(d * d, axis=1)
    tt = np.clip(np.sum((point - a) * d, axis=1) / np.maximum(len2, 1e-30), 0, 1)
    proj = a + d * tt[:, None]
    dist2 = np.sum((proj - point) ** 2, axis=1)
    i = int(np.argmin(dist2))
    seg_len_i = np.sqrt(len2[i])
    return s0[i] + tt[i] * seg_len_i


def test_project_matches_dense_oracle_on_arc(rng):
    # circular-arc track (single 270-degree arc)
    theta = np.linspace(0, 1.5 * np.pi, 400)
    radius = 50.0
    pts = np.column_stack([radius * np.cos(theta), radius * np.sin(theta),
                           np.full_like(theta, 4.0)])
    track = Track("arc", False, pts)
    for _ in range(1000):
        point = rng.uniform(-80, 80, size=2)
        s, _ = track.project(point)
        s_oracle = _dense_projection_oracle(track, point)
        ds = abs(s - s_oracle)
        assert ds < 1e-6, (point, s, s_oracle)


def test_project_centerline_roundtrip_property(oval_track, straight_track, rng):
    for track in (oval_track, straight_track):
        for _ in range(200):
            s = rng.uniform(0, track.total_length * 0.999)
            p = track.point_at(s)
            s2, offset = track.project(p)
            ds = abs(s2 - s)
            if track.closed:
                ds = min(ds, track.total_length - ds)
            assert ds < 1e-9
            assert abs(offset) < 1e-9


def test_arc_length_additivity_along_path(oval_track):
    # unwrapped increments along a sampled on-track path telescope exactly
    L = oval_track.total_length
    s_values = np.linspace(0, 2 * L, 4001)  # two laps
    prev = 0.0
    total = 0.0
    for s in s_values[1:]:
        p = oval_track.point_at(s % L)
        s_raw, _ = oval_track.project(p)
        ds = s_raw - prev
        ds = (ds + L / 2) % L - L / 2
        total += ds
        prev = s_raw
    assert total == pytest.approx(2 * L, abs=1e-6)


def test_mirror_symmetry_negates_offset_and_heading(oval_track, rng):
    mirrored = Track("mirror", True,
                     oval_track.points[:-1] * np.array([1.0, -1.0, 1.0]))
    for _ in range(100):
        p = rng.uniform(-50, 150, 2)
        heading = rng.uniform(-np.pi, np.pi)
        f = oval_track.frame(p, heading)
        g = mirrored.frame((p[0], -p[1]), -heading)
        assert g.s == pytest.approx(f.s, abs=1e-9)
        assert g.lateral_offset == pytest.approx(-f.lateral_offset, abs=1e-9)
        assert g.heading_error == pytest.approx(-f.heading_error, abs=1e-9)


# ---------------------------------------------------------------------------
# raycast
# ---------------------------------------------------------------------------

def test_raycast_half_width_left(straight_track):
    d = straight_track.raycast((20.0, 0.0), 0.0, [math.pi / 2], 300.0)
    assert d[0] == pytest.approx(5.0, abs=1e-9)


def test_raycast_clamps_to_max_range():
    track = generate_straight(1000.0, 10.0)
    d = track.raycast((10.0, 0.0), 0.0, [0.0], 300.0)
    assert d[0] == pytest.approx(300.0)


def test_raycast_outside_track_returns_zero(straight_track):
    d = straight_track.raycast((20.0, 7.0), 0.0, [0.0, 1.0], 300.0)
    assert np.all(d == 0.0)


def _ray_segment_oracle(origin, direction, segments, max_range):
    """Plain python ray/segment intersection sweep."""
    best = max_range
    ox, oy = origin
    dx, dy = direction
    for (ax, ay), (bx, by) in segments:
        ex, ey = bx - ax, by - ay
        den = dx * ey - dy * ex
        if abs(den) < 1e-15:
            continue
        wx, wy = ax - ox, ay - oy
        t = (wx * ey - wy * ex) / den
        u = (wx * dy - wy * dx) / den
        if 0.0 <= t < best and 0.0 <= u <= 1.0:
            best = t
    return best


def test_raycast_l_shape_matches_segment_oracle(rng):
    # L-shaped corridor: straight then a 90-degree elbow
    pts = np.array([[0, 0, 4], [30, 0, 4], [34, 4, 4], [34, 30, 4]], dtype=float)
    track = Track("elbow", False, pts)
    segments = []
    for poly in (track.left_boundary, track.right_boundary):
        segments.extend(list(zip(poly[:-1], poly[1:])))
    segments.append((track.left_boundary[0], track.right_boundary[0]))
    segments.append((track.left_boundary[-1], track.right_boundary[-1]))
    for _ in range(300):
        s = rng.uniform(1, track.total_length - 1)
        base = track.point_at(s)
        heading = rng.uniform(-np.pi, np.pi)
        angles = rng.uniform(-np.pi, np.pi, size=5)
        d = track.raycast(base, heading, angles, 300.0)
        for ang, dist in zip(angles, d):
            direction = (math.cos(heading + ang), math.sin(heading + ang))
            oracle = _ray_segment_oracle(base, direction, segments, 300.0)
            assert dist == pytest.approx(oracle, abs=1e-9)


def test_raycast_grid_equals_brute(rng):
    track = generate_paper_scale()
    angles = np.linspace(-np.pi / 2, np.pi / 2, 17)
    for _ in range(150):
        s = rng.uniform(0, track.total_length)
        off = rng.uniform(-0.9, 0.9)
        tang = track.tangent_at(s)
        base = track.point_at(s)
        normal = np.array([-math.sin(tang), math.cos(tang)])
        pos = base + normal * off * track.half_width_at(s)
        heading = tang + rng.uniform(-np.pi, np.pi)
        grid = track.raycast(pos, heading, angles, 300.0)
        brute = track.raycast(pos, heading, angles, 300.0, brute=True)
        np.testing.assert_allclose(grid, brute, atol=1e-9)


def test_raycast_monotone_in_half_width(rng):
    wide = generate_oval(60, 20, 12.0)
    narrow = generate_oval(60, 20, 8.0)
    angles = np.linspace(-np.pi / 2, np.pi / 2, 17)
    for _ in range(60):
        s = rng.uniform(0, wide.total_length)
        pos = wide.point_at(s)  # centerline: inside both variants
        heading = wide.tangent_at(s) + rng.uniform(-0.5, 0.5)
        d_wide = wide.raycast(pos, heading, angles, 300.0)
        d_narrow = narrow.raycast(pos, heading, angles, 300.0)
        assert np.all(d_narrow <= d_wide + 1e-9)
