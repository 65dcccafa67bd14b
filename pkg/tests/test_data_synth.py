import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapetok.config import DataConfig
from shapetok.data_synth import (
    ShapeSpec,
    build_dataset,
    dataset_views,
    generate_shape,
    load_manifest,
    read_ply,
    read_png,
    render_silhouette,
    shape_scale,
    write_ply,
    write_png,
)
from shapetok.errors import SpecificationError


class TestGenerateShape:
    def test_sphere_points_at_constant_radius(self):
        shape = generate_shape(ShapeSpec("sphere", (1.0,), 0), 256)
        radii = np.linalg.norm(shape.points, axis=1)
        np.testing.assert_allclose(radii, 0.9, atol=1e-12)

    def test_box_faces_and_axis_extent(self):
        shape = generate_shape(ShapeSpec("box", (0.5, 0.5, 0.5), 1), 64)
        on_face = np.isclose(np.abs(shape.points), 0.9).any(axis=1)
        assert on_face.all()
        assert np.abs(shape.points).max(axis=0) == pytest.approx([0.9] * 3, abs=1e-12)

    def test_torus_points_on_analytic_surface(self):
        spec = ShapeSpec("torus", (0.8, 0.3), 7)
        shape = generate_shape(spec, 512)
        s = shape_scale(spec)
        q = shape.points
        ring = np.sqrt(q[:, 0] ** 2 + q[:, 1] ** 2)
        resid = np.abs(np.sqrt((ring - s * 0.8) ** 2 + q[:, 2] ** 2) - s * 0.3)
        assert resid.max() < 1e-6

    def test_regeneration_is_bit_exact(self):
        spec = ShapeSpec("cone", (0.7, 0.4), 12345)
        a = generate_shape(spec, 128)
        b = generate_shape(spec, 128)
        assert np.array_equal(a.points, b.points)

    @pytest.mark.parametrize(
        "family,params",
        [
            ("sphere", (0.6,)),
            ("box", (0.3, 0.9, 0.5)),
            ("cylinder", (0.4, 0.8)),
            ("torus", (0.7, 0.25)),
            ("cone", (0.5, 0.9)),
        ],
    )
    def test_coordinates_inside_scaled_cube(self, family, params):
        shape = generate_shape(ShapeSpec(family, params, 5), 256)
        assert np.abs(shape.points).max() <= 0.9 + 1e-12

    @pytest.mark.parametrize("family,params", [("sphere", (0.8,)), ("box", (0.5, 0.7, 0.9)), ("torus", (0.8, 0.3))])
    def test_symmetric_families_centered(self, family, params):
        shape = generate_shape(ShapeSpec(family, params, 3), 1024)
        assert np.linalg.norm(shape.points.mean(axis=0)) < 0.05

    def test_rejects_bad_specs(self):
        with pytest.raises(SpecificationError):
            ShapeSpec("pyramid", (0.5,), 0)
        with pytest.raises(SpecificationError):
            ShapeSpec("sphere", (0.5, 0.5), 0)
        with pytest.raises(SpecificationError):
            ShapeSpec("sphere", (1.5,), 0)
        with pytest.raises(SpecificationError):
            generate_shape(ShapeSpec("sphere", (0.5,), 0), 4)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(["sphere", "cylinder", "torus"]))
    def test_determinism_property(self, seed, family):
        params = {"sphere": (0.5,), "cylinder": (0.4, 0.6), "torus": (0.6, 0.2)}[family]
        spec = ShapeSpec(family, params, seed)
        assert np.array_equal(generate_shape(spec, 64).points, generate_shape(spec, 64).points)


class TestRenderSilhouette:
    def test_single_point_disk_at_center(self):
        from shapetok.data_synth import PointCloudShape, SPLAT_RADIUS_PX, VIEW_HALF_EXTENT

        shape = PointCloudShape(points=np.zeros((1, 3)))
        img = render_silhouette(shape, (0.3, 0.2), 32).pixels
        px = 2 * VIEW_HALF_EXTENT / 32
        centers = (np.arange(32) + 0.5) * px - VIEW_HALF_EXTENT
        expected = (
            centers[None, :] ** 2 + centers[::-1][:, None] ** 2
        ) <= (SPLAT_RADIUS_PX * px) ** 2
        assert np.array_equal(img > 0, expected)
        assert img.sum() > 0

    def test_opposite_azimuths_mirror_exactly(self):
        shape = generate_shape(ShapeSpec("torus", (0.8, 0.3), 2), 256)
        a = render_silhouette(shape, (0.0, 0.0), 32).pixels
        b = render_silhouette(shape, (math.pi, 0.0), 32).pixels
        assert np.array_equal(np.flip(a, axis=1), b)

    def test_sphere_views_nearly_identical(self):
        shape = generate_shape(ShapeSpec("sphere", (0.8,), 4), 512)
        a = render_silhouette(shape, (0.0, 0.0), 32).pixels
        b = render_silhouette(shape, (1.1, 0.4), 32).pixels
        assert np.abs(a - b).sum() < 0.05 * a.sum()

    def test_resolution_validated(self):
        shape = generate_shape(ShapeSpec("sphere", (0.5,), 0), 32)
        with pytest.raises(Exception):
            render_silhouette(shape, (0.0, 0.0), 4)


class TestDatasetBuild:
    def test_counts_views_and_splits(self, tmp_path):
        cfg = DataConfig(
            families=("sphere", "box", "cylinder", "torus"),
            shapes_per_family=2,
            n_points=64,
            views_per_shape=6,
            test_fraction=0.25,
            seed=11,
        )
        manifest = build_dataset(cfg, tmp_path / "ds")
        assert len(manifest.entries) == 8
        assert sum(len(e.views) for e in manifest.entries) == 48
        azimuths = sorted(v.azimuth for v in manifest.entries[0].views)
        expected = [2 * math.pi * k / 6 for k in range(6)]
        np.testing.assert_allclose(azimuths, expected, atol=1e-15)
        train = {e.shape_id for e in manifest.by_split("train")}
        test = {e.shape_id for e in manifest.by_split("test")}
        assert train.isdisjoint(test)
        assert len(test) == 2
        for e in manifest.entries:
            assert (tmp_path / "ds" / e.ply_path).exists()
            for v in e.views:
                assert (tmp_path / "ds" / v.png_path).exists()

    def test_rebuild_is_byte_identical(self, tmp_path):
        cfg = DataConfig(families=("torus",), shapes_per_family=2, n_points=32, seed=3)
        build_dataset(cfg, tmp_path / "a")
        build_dataset(cfg, tmp_path / "b")
        ma = (tmp_path / "a" / "manifest.jsonl").read_bytes()
        mb = (tmp_path / "b" / "manifest.jsonl").read_bytes()
        assert ma == mb
        pa = (tmp_path / "a" / "shapes" / "torus000.ply").read_bytes()
        pb = (tmp_path / "b" / "shapes" / "torus000.ply").read_bytes()
        assert pa == pb

    def test_manifest_round_trip(self, tmp_path):
        cfg = DataConfig(families=("sphere", "cone"), shapes_per_family=1, n_points=32, seed=9)
        manifest = build_dataset(cfg, tmp_path / "ds")
        loaded = load_manifest(tmp_path / "ds" / "manifest.jsonl")
        assert [e.shape_id for e in loaded.entries] == [e.shape_id for e in manifest.entries]
        assert loaded.entries[0].spec == manifest.entries[0].spec


class TestFileFormats:
    def test_ply_round_trip_float32_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-0.9, 0.9, size=(50, 3))
        write_ply(tmp_path / "x.ply", pts)
        back = read_ply(tmp_path / "x.ply")
        assert np.array_equal(back, pts.astype(np.float32).astype(np.float64))

    def test_png_round_trip_binary(self, tmp_path):
        img = (np.random.default_rng(1).uniform(size=(32, 32)) > 0.5).astype(np.float64)
        write_png(tmp_path / "x.png", img)
        back = read_png(tmp_path / "x.png")
        assert np.array_equal(back, img)

    def test_dataset_views_six_azimuths(self):
        views = dataset_views(6, 0.3)
        assert [v[0] for v in views] == [2 * math.pi * k / 6 for k in range(6)]
        assert all(v[1] == 0.3 for v in views)
