import numpy as np
import pytest

from cathnav.forces import (ForceHeatmap, ForceSample, accumulate_heatmap,
                            episode_force_stats, export_heatmap,
                            force_magnitude, heatmap_conservation,
                            read_force_log, write_force_log)
from cathnav.geometry import AortaModel, ConvexHull, sample_surface_points


def sample(mag_xyz, pos=(0, 0, 0), t=0.0, link=0, hull=0):
    return ForceSample(t, *mag_xyz, np.asarray(pos, float), link, hull)


def flat_model(points):
    """Model whose surface points are exactly the given array."""
    h = ConvexHull(np.array([[x, y, z] for x in (-1, 1)
                             for y in (-1, 1) for z in (-1, 1)], float) * 10)
    m = AortaModel([h], {"start": np.zeros(3), "bca_target": np.zeros(3),
                         "lcca_target": np.zeros(3)},
                   np.array([0, 1.0, 0]), "external")
    m.surface_points = np.asarray(points, float).reshape(-1, 3)
    return m


class TestMagnitude:
    def test_zero(self):
        assert force_magnitude(0, 0, 0) == 0.0

    def test_pythagorean(self):
        assert force_magnitude(3, 4, 0) == pytest.approx(5.0, abs=1e-15)

    def test_122_triple(self):
        assert force_magnitude(0.1, -0.2, 0.2) == pytest.approx(0.3, abs=1e-15)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            v = rng.normal(size=3)
            # random rotation via QR
            Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
            w = Q @ v
            assert abs(force_magnitude(*w) - force_magnitude(*v)) < 1e-12

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            force_magnitude(np.nan, 0, 0)


class TestEpisodeStats:
    def test_basic(self):
        s = [sample((1, 0, 0)), sample((2, 0, 0)), sample((3, 0, 0))]
        assert episode_force_stats(s) == (3.0, 2.0)

    def test_empty(self):
        assert episode_force_stats([]) == (0.0, 0.0)

    def test_recomputation_oracle(self):
        rng = np.random.default_rng(11)
        vals = rng.uniform(0, 5, 10000)
        samples = [sample((v, 0, 0)) for v in vals]
        f_max, f_mean = episode_force_stats(samples)
        # single-pass independent re-summation
        m = 0.0
        acc = 0.0
        for v in vals:
            m = v if v > m else m
            acc += v
        assert abs(f_max - m) <= 1e-12 * max(1.0, m)
        assert abs(f_mean - acc / len(vals)) <= 1e-12 * max(1.0, acc)

    def test_mean_le_max(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            samples = [sample(tuple(rng.normal(size=3)))
                       for _ in range(rng.integers(1, 40))]
            f_max, f_mean = episode_force_stats(samples)
            assert f_mean <= f_max + 1e-15


class TestHeatmap:
    def test_single_sample_on_point(self):
        m = flat_model([[0, 0, 0], [1, 0, 0], [2, 0, 0]])
        hm = accumulate_heatmap([sample((2, 0, 0), pos=(0, 0, 0))], m, 0.5)
        np.testing.assert_array_equal(hm.values, [2.0, 0.0, 0.0])

    def test_mean_of_two(self):
        m = flat_model([[0, 0, 0], [5, 0, 0]])
        s = [sample((1, 0, 0), pos=(0.01, 0, 0)),
             sample((3, 0, 0), pos=(-0.01, 0, 0))]
        hm = accumulate_heatmap(s, m, 0.5)
        assert hm.values[0] == pytest.approx(2.0)
        assert hm.values[1] == 0.0

    def test_matches_bruteforce_exactly(self):
        rng = np.random.default_rng(17)
        pts = rng.uniform(-1, 1, (400, 3))
        m = flat_model(pts)
        samples = [sample(tuple(rng.normal(size=3)), pos=rng.uniform(-1, 1, 3))
                   for _ in range(2000)]
        radius = 0.25
        hm = accumulate_heatmap(samples, m, radius)
        # brute force O(S*P), accumulated point-major in sample order
        want = np.zeros(len(pts))
        for p_idx in range(len(pts)):
            tot = 0.0
            cnt = 0
            for s in samples:
                d = pts[p_idx] - s.position
                if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= radius * radius:
                    tot += s.magnitude
                    cnt += 1
            if cnt:
                want[p_idx] = tot / cnt
        np.testing.assert_array_equal(hm.values, want)

    def test_values_nonnegative_and_zero_far(self):
        m = flat_model([[0, 0, 0], [10, 0, 0]])
        s = [sample((1, 1, 1), pos=(0, 0, 0))]
        hm = accumulate_heatmap(s, m, 0.1)
        assert np.all(hm.values >= 0)
        assert hm.values[1] == 0.0

    def test_conservation(self):
        rng = np.random.default_rng(23)
        pts = rng.uniform(-1, 1, (100, 3))
        m = flat_model(pts)
        samples = [sample(tuple(rng.normal(size=3)), pos=rng.uniform(-1, 1, 3))
                   for _ in range(500)]
        lhs, rhs = heatmap_conservation(samples, m, 0.3)
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_bad_radius(self):
        m = flat_model([[0, 0, 0]])
        with pytest.raises(ValueError):
            accumulate_heatmap([], m, 0.0)

    def test_export(self, tmp_path):
        rng = np.random.default_rng(2)
        pts = rng.uniform(-0.05, 0.05, (200, 3))
        m = flat_model(pts)
        hm = ForceHeatmap(rng.uniform(0, 0.5, 200), 0.002)
        sidecar = export_heatmap(hm, m, tmp_path / "heat")
        pgm = (tmp_path / "heat.pgm").read_bytes()
        assert pgm.startswith(b"P5\n256 256\n65535\n")
        assert len(pgm.split(b"65535\n", 1)[1]) == 256 * 256 * 2
        assert sidecar["max_value_N"] == pytest.approx(hm.values.max())
        csv = (tmp_path / "heat.csv").read_text().splitlines()
        assert csv[0] == "px,py,pz,value"
        assert len(csv) == 201


class TestForceLog:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(9)
        samples = [sample(tuple(rng.normal(size=3)), pos=rng.normal(size=3),
                          t=0.004 * k, link=k % 30, hull=k % 7)
                   for k in range(50)]
        path = tmp_path / "log.csv"
        write_force_log(samples, path)
        loaded, warnings = read_force_log(path)
        assert warnings == []
        assert len(loaded) == 50
        for a, b in zip(samples, loaded):
            assert a.time == b.time
            assert a.magnitude == b.magnitude
            np.testing.assert_array_equal(a.position, b.position)

    def test_inconsistent_ft_warns(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time_s,f_x,f_y,f_z,f_t,px,py,pz,link_id,hull_id\n"
                        "0.0,3.0,4.0,0.0,9.9,0,0,0,0,0\n")
        _, warnings = read_force_log(path)
        assert len(warnings) == 1 and "line 2" in warnings[0]

    def test_malformed_row_names_line(self, tmp_path):
        path = tmp_path / "bad2.csv"
        path.write_text("time_s,f_x,f_y,f_z,f_t,px,py,pz,link_id,hull_id\n"
                        "0.0,1.0,0.0\n")
        with pytest.raises(ValueError, match="line 2"):
            read_force_log(path)

    def test_empty_log_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(ValueError):
            read_force_log(path)

    def test_ft_column_optional(self, tmp_path):
        path = tmp_path / "noft.csv"
        path.write_text("time_s,f_x,f_y,f_z,px,py,pz,link_id,hull_id\n"
                        "0.0,3.0,4.0,0.0,0,0,0,0,0\n")
        samples, warnings = read_force_log(path)
        assert warnings == []
        assert samples[0].magnitude == pytest.approx(5.0)
