import json
import math

import numpy as np
import pytest

from dqdcap.constants import NM
from dqdcap.geometry import (
    DeviceError,
    PanelMesh,
    concat_meshes,
    dumps_device,
    export_panels,
    import_panels,
    loads_device,
    mesh_device,
    plate_pair_mesh,
    sphere_mesh,
    transform_dots,
)
from dqdcap.reference import build_reference_device

MINIMAL = json.dumps({
    "boxes": [
        {"name": "dot1", "group": "d1", "role": "d1",
         "min_nm": [-70, -20, -30], "dims_nm": [40, 40, 10]},
        {"name": "dot2", "group": "d2", "role": "d2",
         "min_nm": [30, -20, -30], "dims_nm": [40, 40, 10]},
    ],
})


def box_area_nm2(dims):
    a, b, c = dims
    return 2.0 * (a * b + b * c + a * c)


class TestLoadDevice:
    def test_minimal_two_dot_config(self):
        spec = loads_device(MINIMAL)
        assert spec.groups == ("d1", "d2")
        assert spec.epsilon_r == 6.0
        assert spec.air_gap_nm == 0.0
        c1 = spec.boxes[0].center_nm
        c2 = spec.boxes[1].center_nm
        assert math.hypot(c2[0] - c1[0], c2[1] - c1[1]) == 100.0

    def test_empty_box_list_rejected(self):
        with pytest.raises(DeviceError):
            loads_device(json.dumps({"boxes": []}))

    def test_parse_error(self):
        with pytest.raises(DeviceError):
            loads_device("{not json")

    def test_missing_dot_role_rejected(self):
        cfg = json.loads(MINIMAL)
        cfg["boxes"][1]["role"] = "other"
        with pytest.raises(DeviceError, match="d2"):
            loads_device(json.dumps(cfg))

    def test_overlap_rejected(self):
        cfg = json.loads(MINIMAL)
        cfg["boxes"][1]["min_nm"] = [-50, -20, -30]
        with pytest.raises(DeviceError, match="overlap"):
            loads_device(json.dumps(cfg))

    def test_zero_clearance_contact_rejected(self):
        cfg = json.loads(MINIMAL)
        cfg["boxes"][1]["min_nm"] = [-30, -20, -30]  # face contact at x=-30
        with pytest.raises(DeviceError):
            loads_device(json.dumps(cfg))

    def test_reference_device_has_nine_conductors(self):
        spec = build_reference_device()
        assert len(spec.groups) == 9
        assert set(spec.roles.values()) == {"d1", "d2", "B", "SL", "SR", "g1", "g2", "i1", "i2"}

    def test_roundtrip_dump_load(self):
        spec = build_reference_device()
        again = loads_device(dumps_device(spec))
        assert again.groups == spec.groups
        assert again.boxes == spec.boxes


class TestTransformDots:
    def test_identity_transform(self):
        spec = loads_device(MINIMAL)
        assert transform_dots(spec, 0.0, 0.0, 40.0) is spec

    def test_default_r_reproduces_40x40x10(self):
        spec = transform_dots(loads_device(MINIMAL), 0.0, 0.0, 40.0)
        for b in spec.boxes:
            assert b.dims_nm == (40.0, 40.0, 10.0)

    def test_r10_gives_10x10x2p5(self):
        spec = transform_dots(loads_device(MINIMAL), 0.0, 0.0, 10.0)
        d1 = spec.boxes[0]
        assert d1.dims_nm == (10.0, 10.0, 2.5)
        # centers stay fixed under resizing
        assert d1.center_nm == loads_device(MINIMAL).boxes[0].center_nm

    def test_pure_translation(self):
        base = loads_device(MINIMAL)
        moved = transform_dots(base, -50.0, 0.0, 40.0)
        for b0, b1 in zip(base.boxes, moved.boxes):
            assert b1.center_nm[0] == b0.center_nm[0] - 50.0
            assert b1.center_nm[1] == b0.center_nm[1]
            assert b1.center_nm[2] == b0.center_nm[2]

    def test_overlap_after_transform_rejected(self):
        cfg = json.loads(MINIMAL)
        cfg["boxes"].append({"name": "gate", "group": "G", "role": "other",
                             "min_nm": [-150, -20, -30], "dims_nm": [40, 40, 10]})
        spec = loads_device(json.dumps(cfg))
        with pytest.raises(DeviceError):
            transform_dots(spec, -50.0, 0.0, 40.0)

    def test_sweep_bounds_enforced(self):
        spec = loads_device(MINIMAL)
        with pytest.raises(DeviceError):
            transform_dots(spec, 500.0, 0.0, 40.0)

    def test_nonpositive_r_rejected(self):
        with pytest.raises(DeviceError):
            transform_dots(loads_device(MINIMAL), 0.0, 0.0, 0.0)


class TestMeshDevice:
    def test_single_box_count(self):
        cfg = {"boxes": [
            {"name": "a", "group": "d1", "role": "d1", "min_nm": [0, 0, 0], "dims_nm": [40, 40, 10]},
            {"name": "b", "group": "d2", "role": "d2", "min_nm": [500, 0, 0], "dims_nm": [40, 40, 10]},
        ]}
        mesh = mesh_device(loads_device(json.dumps(cfg)), 10.0)
        counts = mesh.panel_count()
        assert counts["d1"] == 2 * (4 * 4) + 4 * (4 * 1)

    def test_halving_h_quadruples_face_counts(self):
        spec = loads_device(MINIMAL)
        n1 = mesh_device(spec, 10.0).n_panels
        n2 = mesh_device(spec, 5.0).n_panels
        assert n2 == 4 * n1

    def test_meshed_area_matches_analytic(self):
        spec = build_reference_device()
        for h in (7.0, 10.0, 13.0):
            mesh = mesh_device(spec, h)
            for cid, group in enumerate(mesh.conductor_names):
                analytic = sum(box_area_nm2(b.dims_nm) for b in spec.boxes
                               if b.group == group) * NM * NM
                meshed = mesh.conductor_area(cid)
                assert abs(meshed - analytic) <= 1e-9 * analytic

    def test_deterministic(self):
        spec = build_reference_device()
        m1 = mesh_device(spec, 10.0)
        m2 = mesh_device(spec, 10.0)
        assert np.array_equal(m1.corners, m2.corners)
        assert np.array_equal(m1.cond_ids, m2.cond_ids)

    def test_reference_panel_count_frozen(self):
        # recorded once from the implementation; meshing must stay stable
        assert mesh_device(build_reference_device(), 10.0).n_panels == 2316

    def test_air_gap_lifts_surface_metal_only(self):
        spec = build_reference_device()
        lifted = mesh_device(spec.with_air_gap(5.0), 10.0)
        base = mesh_device(spec, 10.0)
        dz = (lifted.corners[:, :, 2] - base.corners[:, :, 2]) / NM
        buried = base.corners[:, :, 2].max(axis=1) < 0
        assert np.allclose(dz[buried], 0.0)
        assert np.allclose(dz[~buried], 5.0)

    def test_panels_are_rectangles(self):
        mesh = mesh_device(build_reference_device(), 10.0)
        dots = np.einsum("ij,ij->i", mesh.edge_u, mesh.edge_v)
        assert np.abs(dots).max() <= 1e-9 * (mesh.areas.max())


class TestFastcapFormat:
    def test_line_count(self):
        cfg = {"boxes": [
            {"name": "a", "group": "d1", "role": "d1", "min_nm": [0, 0, 0], "dims_nm": [40, 40, 10]},
            {"name": "b", "group": "d2", "role": "d2", "min_nm": [500, 0, 0], "dims_nm": [40, 40, 10]},
        ]}
        mesh = mesh_device(loads_device(json.dumps(cfg)), 10.0)
        lines = export_panels(mesh).splitlines()
        assert lines[0].startswith("0")
        assert len(lines) == 1 + mesh.n_panels
        assert all(ln.startswith("Q ") for ln in lines[1:])

    def test_empty_mesh_header_only(self):
        mesh = PanelMesh(np.zeros((0, 4, 3)), np.zeros(0, dtype=np.int64), [])
        assert export_panels(mesh) == "0 dqdcap panels\n"

    def test_roundtrip_byte_identical(self):
        mesh = mesh_device(build_reference_device(), 13.0)
        text = export_panels(mesh)
        again = export_panels(import_panels(text))
        assert text == again

    def test_roundtrip_preserves_coordinates_exactly(self):
        mesh = mesh_device(build_reference_device(), 13.0)
        back = import_panels(export_panels(mesh))
        assert np.array_equal(back.corners, mesh.corners)
        assert back.conductor_names == mesh.conductor_names
        assert np.array_equal(back.cond_ids, mesh.cond_ids)

    def test_bad_record_rejected(self):
        with pytest.raises(DeviceError):
            import_panels("T name 0 0 0 1 0 0 1 1 0\n")


class TestValidationMeshes:
    def test_sphere_area_exact(self):
        mesh = sphere_mesh(10.0, 8)
        assert mesh.n_panels == 6 * 64
        exact = 4.0 * math.pi * (10.0 * NM) ** 2
        assert abs(mesh.areas.sum() - exact) <= 1e-9 * exact

    def test_plate_pair(self):
        mesh = plate_pair_mesh(100.0, 5.0, 10.0)
        assert mesh.n_panels == 2 * 100
        assert mesh.panel_count() == {"P1": 100, "P2": 100}

    def test_concat_reindexes(self):
        m = concat_meshes([sphere_mesh(5.0, 2, name="A"),
                           sphere_mesh(5.0, 2, center_nm=(50, 0, 0), name="B")])
        assert m.conductor_names == ["A", "B"]
        assert set(np.unique(m.cond_ids)) == {0, 1}
