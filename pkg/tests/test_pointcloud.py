"""Plot I/O, validation, normalization, sampling and upsampling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vegstrata.errors import ContractError, FormatError, ParseError, ValidationError
from vegstrata.pointcloud import (
    CSV_HEADER,
    NormalizedPlot,
    Plot,
    load_labels,
    load_plot,
    load_plots,
    local_ground_heights,
    normalize,
    sample_points,
    save_labels,
    save_plots,
    upsample_predictions,
)


def make_plot(xy, z, plot_id="p", center=(0.0, 0.0), radius=10.0, **feat):
    n = xy.shape[0]
    pts = np.zeros((n, 9))
    pts[:, 0] = xy[:, 0] + center[0]
    pts[:, 1] = xy[:, 1] + center[1]
    pts[:, 2] = z
    pts[:, 3:7] = feat.get("rgbn", 128.0)
    pts[:, 7] = feat.get("intensity", 500.0)
    pts[:, 8] = feat.get("rn", 1.0)
    return Plot(id=plot_id, points=pts, radius=radius, center=center,
                labels=feat.get("labels"))


class TestPlotValidation:
    def test_rejects_wrong_width(self):
        with pytest.raises(ValidationError):
            Plot(id="p", points=np.zeros((4, 8)))

    def test_rejects_nonfinite(self):
        pts = np.zeros((2, 9))
        pts[:, 8] = 1
        pts[1, 2] = np.nan
        with pytest.raises(ValidationError):
            Plot(id="p", points=pts, center=(0, 0))

    def test_rejects_point_outside_radius(self):
        xy = np.array([[0.0, 0.0], [11.0, 0.0]])
        with pytest.raises(ValidationError):
            make_plot(xy, np.zeros(2))

    def test_rejects_bad_labels(self):
        xy = np.zeros((1, 2))
        with pytest.raises(ValidationError):
            make_plot(xy, np.zeros(1), labels=(0.5, 1.2, 0.0))

    def test_center_recovered_from_boundary(self):
        theta = np.linspace(0, 2 * np.pi, 12, endpoint=False)
        xy = 10.0 * np.column_stack([np.cos(theta), np.sin(theta)])
        pts = np.zeros((12, 9))
        pts[:, 0] = 3.5 + xy[:, 0]
        pts[:, 1] = -2.0 + xy[:, 1]
        pts[:, 8] = 1
        plot = Plot(id="p", points=pts)
        assert plot.center[0] == pytest.approx(3.5, abs=1e-6)
        assert plot.center[1] == pytest.approx(-2.0, abs=1e-6)


class TestNormalization:
    def test_xy_mapped_to_unit_square(self):
        xy = np.array([[10.0, 0.0], [-10.0, 0.0], [0.0, 5.0]])
        norm = normalize(make_plot(xy, np.zeros(3)))
        np.testing.assert_allclose(norm.features[:, 0], [1.0, -1.0, 0.0])
        np.testing.assert_allclose(norm.features[:, 1], [0.0, 0.0, 0.5])

    def test_flat_plane_heights_are_zero(self):
        rng = np.random.default_rng(1)
        xy = rng.uniform(-5, 5, size=(200, 2))
        norm = normalize(make_plot(xy, np.full(200, 42.0)))
        np.testing.assert_allclose(norm.heights, 0.0, atol=1e-12)

    def test_heights_against_brute_force(self):
        rng = np.random.default_rng(2)
        xy = rng.uniform(-5, 5, size=(150, 2))
        z = rng.uniform(0, 3, size=150) + 0.1 * xy[:, 0]  # tilted terrain
        heights = local_ground_heights(xy, z)
        # O(N^2) oracle.
        for i in range(150):
            d = np.hypot(xy[:, 0] - xy[i, 0], xy[:, 1] - xy[i, 1])
            expected = z[i] - z[d <= 0.5].min()
            assert heights[i] == pytest.approx(expected, abs=1e-12)

    def test_isolated_point_is_its_own_ground(self):
        xy = np.array([[0.0, 0.0], [5.0, 5.0]])
        heights = local_ground_heights(xy, np.array([3.0, 7.0]))
        np.testing.assert_allclose(heights, 0.0)

    def test_radiometry_scaling(self):
        xy = np.zeros((2, 2))
        pts = np.zeros((2, 9))
        pts[:, 3:7] = [[255, 0, 51, 102], [255, 0, 51, 102]]
        pts[:, 7] = [100.0, 300.0]
        pts[:, 8] = [1, 2]
        norm = normalize(Plot(id="p", points=pts, center=(0, 0)))
        np.testing.assert_allclose(norm.features[0, 3:7], [1.0, 0.0, 0.2, 0.4])
        np.testing.assert_allclose(norm.features[:, 7], [0.0, 1.0])
        np.testing.assert_allclose(norm.features[:, 8], [0.5, 1.0])

    def test_constant_intensity_maps_to_zero(self):
        norm = normalize(make_plot(np.zeros((3, 2)), np.zeros(3)))
        np.testing.assert_array_equal(norm.features[:, 7], 0.0)


class TestSampling:
    def test_subset_when_enough_points(self):
        plot = normalize(make_plot(np.random.default_rng(0).uniform(-5, 5, (100, 2)),
                                   np.zeros(100)))
        feats, idx = sample_points(plot, 40, seed=3)
        assert feats.shape == (40, 9)
        assert len(set(idx.tolist())) == 40  # distinct
        np.testing.assert_array_equal(feats, plot.features[idx])

    def test_duplication_when_short(self):
        plot = normalize(make_plot(np.random.default_rng(0).uniform(-5, 5, (10, 2)),
                                   np.zeros(10)))
        feats, idx = sample_points(plot, 25, seed=3)
        assert feats.shape == (25, 9)
        # Every original point appears at least once.
        assert set(idx.tolist()) == set(range(10))

    def test_deterministic_per_seed(self):
        plot = normalize(make_plot(np.random.default_rng(0).uniform(-5, 5, (50, 2)),
                                   np.zeros(50)))
        _, a = sample_points(plot, 20, seed=11)
        _, b = sample_points(plot, 20, seed=11)
        _, c = sample_points(plot, 20, seed=12)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_rejects_nonpositive_m(self):
        plot = normalize(make_plot(np.zeros((3, 2)), np.zeros(3)))
        with pytest.raises(ContractError):
            sample_points(plot, 0, seed=0)


class TestUpsampling:
    def test_identity_when_all_sampled(self):
        probs = np.arange(12.0).reshape(3, 4)
        out = upsample_predictions(probs, np.array([2, 0, 1]), 3)
        np.testing.assert_array_equal(out[2], probs[0])
        np.testing.assert_array_equal(out[0], probs[1])
        np.testing.assert_array_equal(out[1], probs[2])

    def test_first_copy_wins_on_duplicates(self):
        probs = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])
        out = upsample_predictions(probs, np.array([0, 0]), 1)
        np.testing.assert_array_equal(out[0], probs[0])

    def test_nearest_neighbor_against_exhaustive(self):
        rng = np.random.default_rng(7)
        coords = rng.uniform(-1, 1, size=(40, 3))
        src = rng.choice(40, size=15, replace=False)
        probs = rng.dirichlet(np.ones(4), size=15)
        out = upsample_predictions(probs, src, 40, coords=coords)
        for i in range(40):
            if i in src:
                j = np.nonzero(src == i)[0][0]
                np.testing.assert_array_equal(out[i], probs[j])
            else:
                d = np.linalg.norm(coords[src] - coords[i], axis=1)
                np.testing.assert_array_equal(out[i], probs[int(d.argmin())])

    def test_requires_coords_when_points_missed(self):
        with pytest.raises(ContractError):
            upsample_predictions(np.ones((1, 4)), np.array([0]), 2)


class TestIO:
    def test_round_trip(self, tmp_path, small_corpus):
        plots = [s.plot for s in small_corpus[:3]]
        path = tmp_path / "plots.csv"
        save_plots(path, plots)
        loaded = load_plots(path)
        assert [p.id for p in loaded] == [p.id for p in plots]
        for a, b in zip(loaded, plots):
            np.testing.assert_array_equal(a.points, b.points)

    def test_single_row_plot(self, tmp_path):
        path = tmp_path / "one.csv"
        path.write_text(
            ",".join(CSV_HEADER) + "\n"
            "p1,1.0,2.0,3.0,10,20,30,40,500,1\n"
        )
        plot = load_plot(path)
        assert plot.n_points == 1
        assert plot.point(0).z == 3.0
        assert plot.point(0).return_number == 1

    def test_missing_column_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("plot_id,x,y,z,r,g,b,intensity,return_number\n")
        with pytest.raises(FormatError, match="nir"):
            load_plots(path)

    def test_non_numeric_value(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(
            ",".join(CSV_HEADER) + "\np1,1,2,oops,0,0,0,0,1,1\n"
        )
        with pytest.raises(ParseError):
            load_plots(path)

    def test_labels_round_trip(self, tmp_path):
        labels = {"a": (0.1, 0.2, 0.3), "b": (1.0, 0.0, 0.5)}
        path = tmp_path / "labels.csv"
        save_labels(path, labels)
        assert load_labels(path) == labels

    def test_labels_out_of_range(self, tmp_path):
        path = tmp_path / "labels.csv"
        path.write_text("plot_id,o_low,o_medium,o_high\na,0.5,1.5,0.0\n")
        with pytest.raises(ValidationError):
            load_labels(path)
