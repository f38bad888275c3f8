import numpy as np
import pytest

from usnav.errors import (
    EmptySegmentError,
    ParseError,
    RangeError,
    SeedConflictError,
)
from usnav.geometry import FrameId
from usnav.segment import (
    EditOp,
    LabelKind,
    LabelMask,
    RegionGrowSegmenter,
    SeedSet,
    SurfaceMesh,
    ThresholdVesselSegmenter,
    centroid,
    distance_field,
    expand_margin,
    extract_surface,
    load_mesh,
    manual_edit,
    mask_from_volume,
    mask_to_volume,
    region_grow,
    save_mesh,
    vessel_baseline,
)
from usnav.usrecon import VoxelVolume, load_volume, save_volume


def make_volume(scalars, spacing=0.5, origin=(0.0, 0.0, 0.0), weight=None):
    return VoxelVolume(np.array(origin, dtype=float), spacing,
                       np.asarray(scalars, dtype=np.float32), weight)


def sphere_scene(n=71, r=15.0, spacing=0.5, inside=200.0, outside=50.0):
    """Uniform-intensity sphere on a symmetric grid, plus the analytic mask."""
    ax = np.arange(n) * spacing
    c = (n - 1) / 2 * spacing
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    rho2 = (X - c) ** 2 + (Y - c) ** 2 + (Z - c) ** 2
    analytic = rho2 <= r * r
    scal = np.where(analytic, inside, outside)
    return make_volume(scal, spacing), analytic, np.array([c, c, c])


def dice(a, b):
    return 2.0 * np.logical_and(a, b).sum() / (a.sum() + b.sum())


def brute_force_signed(voxels, spacing):
    """All-pairs signed center-to-center distance; oracle for distance_field."""
    idx_in = np.argwhere(voxels)
    idx_out = np.argwhere(~voxels)

    def min_sq(points, targets):
        out = np.empty(len(points), dtype=np.int64)
        for i, p in enumerate(points):
            d = targets - p
            out[i] = np.einsum("ij,ij->i", d, d).min()
        return out

    signed = np.zeros(voxels.shape)
    if len(idx_out) and len(idx_in):
        signed[tuple(idx_out.T)] = np.sqrt(min_sq(idx_out, idx_in)) * spacing
        signed[tuple(idx_in.T)] = -np.sqrt(min_sq(idx_in, idx_out)) * spacing
    return signed


def count_components_26(voxels):
    """Flood-fill component count, independent of any labeling library."""
    seen = np.zeros(voxels.shape, dtype=bool)
    offs = [(dx, dy, dz)
            for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
            if (dx, dy, dz) != (0, 0, 0)]
    count = 0
    for start in map(tuple, np.argwhere(voxels)):
        if seen[start]:
            continue
        count += 1
        seen[start] = True
        stack = [start]
        while stack:
            x, y, z = stack.pop()
            for dx, dy, dz in offs:
                n = (x + dx, y + dy, z + dz)
                if (0 <= n[0] < voxels.shape[0]
                        and 0 <= n[1] < voxels.shape[1]
                        and 0 <= n[2] < voxels.shape[2]
                        and voxels[n] and not seen[n]):
                    seen[n] = True
                    stack.append(n)
    return count


class TestSeedSet:
    def test_conflict_raises(self):
        with pytest.raises(SeedConflictError):
            SeedSet(inside=[[1, 2, 3]], outside=[[1, 2, 3], [0, 0, 0]])

    def test_empty_inside_rejected(self):
        with pytest.raises(ValueError):
            SeedSet(inside=np.zeros((0, 3), dtype=np.int64))

    def test_duplicates_collapse(self):
        s = SeedSet(inside=[[1, 1, 1], [1, 1, 1], [2, 2, 2]])
        assert s.inside.shape == (2, 3)


class TestRegionGrow:
    def test_uniform_sphere_recovered_exactly(self):
        v, analytic, c = sphere_scene()
        center_idx = np.array(v.world_to_index(c).round(), dtype=np.int64)
        mask = region_grow(v, SeedSet(inside=[center_idx]), tol=30.0)
        assert mask.kind is LabelKind.TUMOR
        assert dice(mask.voxels, analytic) >= 0.99
        assert np.array_equal(mask.voxels, analytic)

    def test_background_seed_tol_zero_excludes_sphere(self):
        v, analytic, _ = sphere_scene(n=41, r=6.0)
        mask = region_grow(v, SeedSet(inside=[[0, 0, 0]]), tol=0.0)
        assert not mask.voxels[analytic].any()
        assert np.array_equal(mask.voxels, ~analytic)

    def test_infinite_tol_floods_non_holes(self):
        rng = np.random.default_rng(7)
        scal = rng.uniform(0, 255, (12, 12, 12))
        weight = np.ones((12, 12, 12), dtype=np.uint32)
        for hole in [(3, 3, 3), (8, 2, 9), (5, 10, 1), (11, 11, 11)]:
            weight[hole] = 0
        v = make_volume(scal, weight=weight)
        mask = region_grow(v, SeedSet(inside=[[0, 0, 0]]), tol=np.inf)
        assert np.array_equal(mask.voxels, ~v.holes)

    def test_hole_plane_blocks_growth(self):
        scal = np.full((9, 9, 9), 100.0)
        weight = np.ones((9, 9, 9), dtype=np.uint32)
        weight[4, :, :] = 0
        v = make_volume(scal, weight=weight)
        mask = region_grow(v, SeedSet(inside=[[1, 4, 4]]), tol=np.inf)
        assert mask.voxels[:4].all()
        assert not mask.voxels[4:].any()

    def test_contested_voxels_split_by_step_count_ties_outside(self):
        v = make_volume(np.full((11, 1, 1), 100.0))
        seeds = SeedSet(inside=[[2, 0, 0]], outside=[[8, 0, 0]])
        mask = region_grow(v, seeds, tol=np.inf)
        # meeting voxel x=5 is 3 steps from both seeds -> outside wins
        expected = np.zeros((11, 1, 1), dtype=bool)
        expected[:5] = True
        assert np.array_equal(mask.voxels, expected)

    def test_seed_order_invariance(self):
        rng = np.random.default_rng(3)
        scal = rng.normal(128.0, 20.0, (20, 20, 20))
        v = make_volume(scal)
        inside = [[10, 10, 10], [9, 10, 10], [10, 11, 10], [11, 9, 10]]
        outside = [[0, 0, 0], [19, 19, 19], [0, 19, 0], [19, 0, 19]]
        a = region_grow(v, SeedSet(inside=inside, outside=outside), tol=25.0)
        b = region_grow(v, SeedSet(inside=inside[::-1], outside=outside[::-1]),
                        tol=25.0)
        assert np.array_equal(a.voxels, b.voxels)

    def test_outside_barrier_limits_bright_region(self):
        v, analytic, c = sphere_scene(n=41, r=6.0)
        center_idx = np.array(v.world_to_index(c).round(), dtype=np.int64)
        # outside seeds in the background; inside region must still be exact
        seeds = SeedSet(inside=[center_idx],
                        outside=[[0, 0, 0], [40, 40, 40]])
        mask = region_grow(v, seeds, tol=30.0)
        assert np.array_equal(mask.voxels, analytic)

    def test_seed_out_of_bounds(self):
        v = make_volume(np.zeros((4, 4, 4)))
        with pytest.raises(RangeError):
            region_grow(v, SeedSet(inside=[[4, 0, 0]]), tol=1.0)

    def test_seed_in_hole(self):
        weight = np.ones((4, 4, 4), dtype=np.uint32)
        weight[1, 1, 1] = 0
        v = make_volume(np.zeros((4, 4, 4)), weight=weight)
        with pytest.raises(RangeError):
            region_grow(v, SeedSet(inside=[[1, 1, 1]]), tol=1.0)

    def test_bad_tol(self):
        v = make_volume(np.zeros((4, 4, 4)))
        with pytest.raises(ValueError):
            region_grow(v, SeedSet(inside=[[0, 0, 0]]), tol=-1.0)

    def test_segmenter_plugin(self):
        v, analytic, c = sphere_scene(n=41, r=6.0)
        center_idx = np.array(v.world_to_index(c).round(), dtype=np.int64)
        seg = RegionGrowSegmenter(SeedSet(inside=[center_idx]), tol=30.0)
        mask = seg.segment(v)
        assert np.array_equal(mask.voxels, analytic)


class TestVesselBaseline:
    def tube_volume(self, n=(60, 24, 24), r=3.0, spacing=0.5,
                    center=(6.0, 6.0), dark=10.0, bright=200.0):
        ax = [np.arange(d) * spacing for d in n]
        Y, Z = np.meshgrid(ax[1], ax[2], indexing="ij")
        disk = (Y - center[0]) ** 2 + (Z - center[1]) ** 2 <= r * r
        scal = np.full(n, bright)
        scal[:, disk] = dark
        return make_volume(scal, spacing), disk

    def test_single_tube_volume_matches_cylinder(self):
        v, disk = self.tube_volume()
        mask = vessel_baseline(v, threshold=50.0)
        assert mask.kind is LabelKind.VESSEL
        length = v.dims[0] * v.spacing
        analytic = np.pi * 3.0 ** 2 * length
        assert abs(mask.volume_mm3 - analytic) / analytic <= 0.10

    def test_uniform_bright_volume_empty(self):
        v = make_volume(np.full((16, 16, 16), 200.0))
        mask = vessel_baseline(v, threshold=50.0)
        assert mask.voxel_count == 0

    def test_min_volume_filter_drops_smaller_tube(self):
        spacing = 0.5
        scal = np.full((40, 24, 24), 200.0)
        ax = np.arange(24) * spacing
        Y, Z = np.meshgrid(ax, ax, indexing="ij")
        big = (Y - 4.0) ** 2 + (Z - 4.0) ** 2 <= 3.0 ** 2
        small = (Y - 8.5) ** 2 + (Z - 8.5) ** 2 <= 1.5 ** 2
        scal[:, big] = 10.0
        scal[:, small] = 10.0
        v = make_volume(scal, spacing)

        both = vessel_baseline(v, threshold=50.0)
        assert count_components_26(both.voxels) == 2

        length = 40 * spacing
        small_vol = np.pi * 1.5 ** 2 * length
        kept = vessel_baseline(v, threshold=50.0,
                               min_component_mm3=small_vol * 1.5)
        assert count_components_26(kept.voxels) == 1
        assert kept.voxels[:, big].sum() == kept.voxel_count

    def test_holes_not_vessels(self):
        scal = np.full((8, 8, 8), 10.0)
        weight = np.ones((8, 8, 8), dtype=np.uint32)
        weight[:4] = 0
        v = make_volume(scal, weight=weight)
        mask = vessel_baseline(v, threshold=50.0)
        assert not mask.voxels[:4].any()
        assert mask.voxels[4:].all()

    def test_plugin_interface(self):
        v, _ = self.tube_volume()
        seg = ThresholdVesselSegmenter(threshold=50.0)
        assert seg.segment(v).voxel_count == vessel_baseline(v, 50.0).voxel_count


class TestDistanceField:
    def test_matches_brute_force_on_random_masks(self):
        rng = np.random.default_rng(11)
        shapes = [(9, 9, 9), (12, 7, 10), (16, 16, 16)]
        for shape in shapes:
            voxels = rng.random(shape) < 0.4
            if not voxels.any() or voxels.all():
                voxels[tuple(s // 2 for s in shape)] = True
            m = LabelMask(np.zeros(3), 0.5, voxels, LabelKind.TUMOR)
            sd = distance_field(m)
            oracle = brute_force_signed(voxels, 0.5)
            assert np.abs(sd.scalars.astype(np.float64) - oracle).max() <= 1e-6

    def test_matches_brute_force_on_sphere(self):
        ax = np.arange(16) * 0.5
        X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
        voxels = (X - 3.75) ** 2 + (Y - 3.75) ** 2 + (Z - 3.75) ** 2 <= 9.0
        m = LabelMask(np.zeros(3), 0.5, voxels, LabelKind.TUMOR)
        sd = distance_field(m)
        oracle = brute_force_signed(voxels, 0.5)
        assert np.abs(sd.scalars.astype(np.float64) - oracle).max() <= 1e-6

    def test_single_voxel_distances(self):
        voxels = np.zeros((17, 17, 17), dtype=bool)
        voxels[8, 8, 8] = True
        m = LabelMask(np.zeros(3), 0.5, voxels, LabelKind.TUMOR)
        sd = distance_field(m).scalars.astype(np.float64)
        idx = np.argwhere(np.ones_like(voxels))
        d_center = np.linalg.norm((idx - 8) * 0.5, axis=1).reshape(voxels.shape)
        # within one voxel of the half-voxel-offset surface distance
        err = np.abs(sd - (d_center - 0.25))
        err[8, 8, 8] = 0.0
        assert err.max() <= 0.5

    def test_signs(self):
        voxels = np.zeros((8, 8, 8), dtype=bool)
        voxels[3:5, 3:5, 3:5] = True
        m = LabelMask(np.zeros(3), 1.0, voxels, LabelKind.TUMOR)
        sd = distance_field(m).scalars
        assert (sd[voxels] < 0).all()
        assert (sd[~voxels] > 0).all()

    def test_full_grid_all_non_positive(self):
        m = LabelMask(np.zeros(3), 1.0, np.ones((5, 5, 5), dtype=bool),
                      LabelKind.TUMOR)
        assert (distance_field(m).scalars <= 0).all()

    def test_empty_mask(self):
        m = LabelMask(np.zeros(3), 1.0, np.zeros((5, 5, 5), dtype=bool),
                      LabelKind.TUMOR)
        with pytest.raises(EmptySegmentError):
            distance_field(m)

    def test_grid_geometry_preserved(self):
        voxels = np.zeros((6, 6, 6), dtype=bool)
        voxels[2, 2, 2] = True
        m = LabelMask(np.array([1.0, -2.0, 3.5]), 0.25, voxels, LabelKind.TUMOR)
        sd = distance_field(m)
        assert np.array_equal(sd.origin, m.origin)
        assert sd.spacing == m.spacing
        assert sd.frame is m.frame


def sphere_mask(n, r, spacing=0.5):
    ax = np.arange(n) * spacing
    c = (n - 1) / 2 * spacing
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    voxels = (X - c) ** 2 + (Y - c) ** 2 + (Z - c) ** 2 <= r * r
    return LabelMask(np.zeros(3), spacing, voxels, LabelKind.TUMOR), c


class TestExpandMargin:
    def test_sphere_margin_volume(self):
        m, _ = sphere_mask(71, 10.0)
        grown = expand_margin(m, 5.0)
        assert grown.kind is LabelKind.MARGIN
        analytic = 4.0 / 3.0 * np.pi * 15.0 ** 3
        assert abs(grown.volume_mm3 - analytic) / analytic <= 0.05

    def test_superset(self):
        m, _ = sphere_mask(51, 7.0)
        grown = expand_margin(m, 5.0)
        assert grown.voxels[m.voxels].all()

    def test_tiny_margin_is_identity(self):
        m, _ = sphere_mask(41, 6.0)
        grown = expand_margin(m, 1e-9)
        assert np.array_equal(grown.voxels, m.voxels)

    def test_composition_is_contained_and_close(self):
        m, _ = sphere_mask(91, 10.0)
        single = expand_margin(m, 10.0)
        double = expand_margin(expand_margin(m, 5.0), 5.0)
        assert not (double.voxels & ~single.voxels).any()
        diff = (single.voxels & ~double.voxels).sum()
        assert diff / single.voxels.sum() <= 0.02

    def test_clipped_flag(self):
        m, _ = sphere_mask(41, 6.0)  # grid half-extent 10 mm
        assert not expand_margin(m, 2.0).clipped
        assert expand_margin(m, 7.0).clipped

    def test_preset_margins_accepted(self):
        m, _ = sphere_mask(71, 10.0)
        for margin in (5.0, 7.0, 10.0):
            grown = expand_margin(m, margin)
            assert grown.voxel_count > m.voxel_count

    def test_nonpositive_margin_rejected(self):
        m, _ = sphere_mask(21, 3.0)
        with pytest.raises(ValueError):
            expand_margin(m, 0.0)


class TestExtractSurface:
    def test_sphere_area_and_volume(self):
        m, c = sphere_mask(71, 15.0)
        mesh = extract_surface(m)
        area = mesh.area()
        vol = mesh.enclosed_volume()
        assert abs(area - 4.0 * np.pi * 15.0 ** 2) / (4.0 * np.pi * 15.0 ** 2) <= 0.05
        assert abs(vol - 4.0 / 3.0 * np.pi * 15.0 ** 3) / (4.0 / 3.0 * np.pi * 15.0 ** 3) <= 0.05
        assert mesh.euler_characteristic() == 2
        assert mesh.is_watertight()
        assert vol > 0  # outward orientation
        radial = np.linalg.norm(mesh.vertices - c, axis=1)
        assert abs(np.median(radial) - 15.0) <= 0.5

    def test_single_voxel_closed_surface(self):
        voxels = np.zeros((9, 9, 9), dtype=bool)
        voxels[4, 4, 4] = True
        m = LabelMask(np.zeros(3), 0.5, voxels, LabelKind.TUMOR)
        mesh = extract_surface(m)
        assert mesh.area() > 0
        assert mesh.euler_characteristic() == 2
        assert mesh.is_watertight()
        assert mesh.enclosed_volume() > 0

    def test_boundary_touching_mask_still_closed(self):
        voxels = np.zeros((12, 12, 12), dtype=bool)
        voxels[:5] = True
        m = LabelMask(np.zeros(3), 1.0, voxels, LabelKind.MARGIN)
        mesh = extract_surface(m)
        assert mesh.is_watertight()
        assert mesh.euler_characteristic() == 2
        assert mesh.kind is LabelKind.MARGIN

    def test_vertices_in_world_mm(self):
        voxels = np.zeros((11, 11, 11), dtype=bool)
        voxels[5, 5, 5] = True
        origin = np.array([10.0, -20.0, 5.0])
        m = LabelMask(origin, 2.0, voxels, LabelKind.TUMOR)
        mesh = extract_surface(m)
        center = origin + 5 * 2.0
        assert np.linalg.norm(mesh.vertices.mean(axis=0) - center) <= 1.0

    def test_empty_mask(self):
        m = LabelMask(np.zeros(3), 1.0, np.zeros((4, 4, 4), dtype=bool),
                      LabelKind.TUMOR)
        with pytest.raises(EmptySegmentError):
            extract_surface(m)


class TestCentroid:
    def test_sphere_centroid_exact_by_symmetry(self):
        m, c = sphere_mask(41, 6.0)
        assert np.allclose(centroid(m), [c, c, c], atol=1e-12)

    def test_single_voxel(self):
        voxels = np.zeros((5, 5, 5), dtype=bool)
        voxels[1, 2, 3] = True
        m = LabelMask(np.array([1.0, 1.0, 1.0]), 0.5, voxels, LabelKind.TUMOR)
        assert np.allclose(centroid(m), [1.5, 2.0, 2.5])

    def test_two_voxels_midpoint(self):
        voxels = np.zeros((5, 5, 5), dtype=bool)
        voxels[0, 0, 0] = True
        voxels[4, 0, 0] = True
        m = LabelMask(np.zeros(3), 1.0, voxels, LabelKind.TUMOR)
        assert np.allclose(centroid(m), [2.0, 0.0, 0.0])

    def test_empty(self):
        m = LabelMask(np.zeros(3), 1.0, np.zeros((3, 3, 3), dtype=bool),
                      LabelKind.TUMOR)
        with pytest.raises(EmptySegmentError):
            centroid(m)


class TestManualEdit:
    def empty_mask(self, n=64, spacing=0.5):
        return LabelMask(np.zeros(3), spacing,
                         np.zeros((n, n, n), dtype=bool), LabelKind.TUMOR)

    def test_add_sphere_volume(self):
        m = self.empty_mask()
        c = (63 / 2 * 0.5,) * 3
        edited = manual_edit(m, EditOp.ADD, c, 5.0)
        analytic = 4.0 / 3.0 * np.pi * 5.0 ** 3
        assert abs(edited.volume_mm3 - analytic) / analytic <= 0.05

    def test_erase_everything(self):
        m, c = sphere_mask(41, 6.0)
        edited = manual_edit(m, EditOp.ERASE, [c, c, c], 50.0)
        assert edited.voxel_count == 0

    def test_add_then_erase_is_identity_on_empty(self):
        m = self.empty_mask(32)
        c = (8.0, 8.0, 8.0)
        added = manual_edit(m, EditOp.ADD, c, 4.0)
        assert added.voxel_count > 0
        reverted = manual_edit(added, EditOp.ERASE, c, 4.0)
        assert reverted.voxel_count == 0

    def test_brush_outside_grid_is_noop(self):
        m, c = sphere_mask(21, 3.0)
        edited = manual_edit(m, EditOp.ERASE, [1000.0, 0.0, 0.0], 5.0)
        assert np.array_equal(edited.voxels, m.voxels)

    def test_partial_brush_at_edge(self):
        m = self.empty_mask(16)
        edited = manual_edit(m, EditOp.ADD, [0.0, 0.0, 0.0], 2.0)
        assert edited.voxel_count > 0
        assert edited.voxels[0, 0, 0]

    def test_string_op_accepted(self):
        m = self.empty_mask(16)
        edited = manual_edit(m, "ADD", [2.0, 2.0, 2.0], 1.0)
        assert edited.voxel_count > 0

    def test_bad_radius(self):
        m = self.empty_mask(8)
        with pytest.raises(ValueError):
            manual_edit(m, EditOp.ADD, [1.0, 1.0, 1.0], 0.0)

    def test_kind_and_flags_preserved(self):
        m, c = sphere_mask(21, 3.0)
        m.kind = LabelKind.VESSEL
        m.clipped = True
        edited = manual_edit(m, EditOp.ADD, [c, c, c], 1.0)
        assert edited.kind is LabelKind.VESSEL
        assert edited.clipped


class TestMeshIO:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(5)
        verts = rng.normal(0.0, 37.123, (50, 3))
        faces = rng.integers(0, 50, (80, 3))
        mesh = SurfaceMesh(verts, faces, LabelKind.VESSEL,
                           FrameId.REFERENCE)
        p = save_mesh(mesh, tmp_path / "vessel.mesh")
        back = load_mesh(p)
        assert back.vertices.tobytes() == mesh.vertices.tobytes()
        assert np.array_equal(back.faces, mesh.faces)
        assert back.kind is LabelKind.VESSEL
        assert back.frame is FrameId.REFERENCE

    def test_extracted_surface_round_trip(self, tmp_path):
        m, _ = sphere_mask(31, 4.0)
        mesh = extract_surface(m)
        back = load_mesh(save_mesh(mesh, tmp_path / "tumor.mesh"))
        assert back.vertices.tobytes() == mesh.vertices.tobytes()
        assert np.array_equal(back.faces, mesh.faces)
        assert back.is_watertight()

    def test_unknown_line_rejected(self, tmp_path):
        p = tmp_path / "bad.mesh"
        p.write_text("v 0 0 0\nx 1 2 3\n")
        with pytest.raises(ParseError) as exc:
            load_mesh(p)
        assert exc.value.line == 2

    def test_bad_vertex(self, tmp_path):
        p = tmp_path / "bad.mesh"
        p.write_text("v 0 zero 0\n")
        with pytest.raises(ParseError):
            load_mesh(p)

    def test_face_index_zero_rejected(self, tmp_path):
        p = tmp_path / "bad.mesh"
        p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n")
        with pytest.raises(ParseError):
            load_mesh(p)

    def test_face_missing_vertex_rejected(self, tmp_path):
        p = tmp_path / "bad.mesh"
        p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n")
        with pytest.raises(ParseError):
            load_mesh(p)

    def test_default_kind_for_plain_files(self, tmp_path):
        p = tmp_path / "plain.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        mesh = load_mesh(p, default_kind=LabelKind.LIVER)
        assert mesh.kind is LabelKind.LIVER
        assert len(mesh.faces) == 1


class TestMaskFileRoundTrip:
    def test_via_volume_format(self, tmp_path):
        m, _ = sphere_mask(31, 5.0)
        m.origin = np.array([0.1, -2.7, 3.14159])
        v = mask_to_volume(m)
        save_volume(v, tmp_path / "tumor_mask.vol")
        back = mask_from_volume(load_volume(tmp_path / "tumor_mask.vol"),
                                LabelKind.TUMOR)
        assert np.array_equal(back.voxels, m.voxels)
        assert np.array_equal(back.origin, m.origin)
        assert back.spacing == m.spacing

    def test_distance_field_via_volume_format(self, tmp_path):
        m, _ = sphere_mask(21, 3.0)
        sd = distance_field(m)
        save_volume(sd, tmp_path / "dist.vol")
        back = load_volume(tmp_path / "dist.vol")
        assert np.array_equal(back.scalars, sd.scalars)
