import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cvrspline.basis import build_basis
from cvrspline.fitting import (
    FunctionData,
    SingularSystem,
    TriangleLocator,
    TriangulationData,
    TriMesh,
    UnsupportedSurface,
    cell_errors,
    collocate_and_solve,
    fit_adaptive,
    franke,
    grid_points,
    parametrize,
    read_obj,
    refine_effectively,
    sample_surface,
    signed_areas,
    solve_collocation,
    write_obj,
)
from cvrspline.cvr import dim_space
from cvrspline.mesh import HierarchicalTMesh


def biquadratic(x, y):
    return np.column_stack([x, y, 1 + x - 2 * y + 3 * x * y - x * x * y * y + 0.5 * y * y])


class TestTriMesh:
    def test_boundary_loop_of_grid(self):
        t = TriMesh.grid(lambda x, y: 0 * x, 5)
        loop = t.boundary_loop()
        assert len(loop) == 16 and len(set(loop)) == 16

    def test_closed_surface_rejected(self):
        tet = TriMesh(np.eye(4, 3), np.array([[0, 1, 2], [0, 3, 1], [1, 3, 2], [2, 3, 0]]))
        with pytest.raises(UnsupportedSurface):
            tet.boundary_loop()

    def test_obj_roundtrip(self, tmp_path):
        t = TriMesh.grid(franke, 6)
        write_obj(tmp_path / "s.obj", t.vertices, t.triangles)
        back = read_obj(tmp_path / "s.obj")
        assert np.array_equal(back.vertices, t.vertices)
        assert np.array_equal(back.triangles, t.triangles)


class TestParametrization:
    def test_flat_grid_is_identity_like(self):
        t = TriMesh.grid(lambda x, y: 0 * x, 9)
        uv = parametrize(t)
        assert np.allclose(uv, t.vertices[:, :2], atol=1e-9)

    def test_franke_has_no_flips(self):
        t = TriMesh.grid(franke, 30)
        uv = parametrize(t)
        assert uv.min() >= -1e-12 and uv.max() <= 1 + 1e-12
        assert np.all(signed_areas(uv, t.triangles) > 0)

    def test_mirrored_input(self):
        t = TriMesh.grid(franke, 10)
        flipped = TriMesh(t.vertices, t.triangles[:, ::-1])
        assert np.all(signed_areas(parametrize(flipped), flipped.triangles) > 0)


class TestLocator:
    @settings(max_examples=20)
    @given(st.floats(0, 1), st.floats(0, 1))
    def test_barycentric_reproduces_point(self, u, v):
        t = TriMesh.grid(lambda x, y: 0 * x, 7)
        loc = TriangleLocator(t.vertices[:, :2], t.triangles)
        tri, w = loc.locate(np.array([u, v]))
        assert w.min() >= -1e-12 and w.sum() == pytest.approx(1)
        assert w @ t.vertices[t.triangles[tri], :2] == pytest.approx([u, v], abs=1e-12)

    def test_outside_snaps(self):
        t = TriMesh.grid(lambda x, y: 0 * x, 4)
        loc = TriangleLocator(t.vertices[:, :2], t.triangles)
        tri, w = loc.locate(np.array([1.5, 0.5]))
        assert w @ t.vertices[t.triangles[tri], :2] == pytest.approx([1.0, 0.5])


def test_solver_paths_agree(rng):
    C = rng.standard_normal((30, 30)) + 30 * np.eye(30)
    b = rng.standard_normal((30, 3))
    assert np.allclose(C @ solve_collocation(C, b), b)
    with pytest.raises(SingularSystem):
        solve_collocation(np.zeros((3, 3)), np.ones((3, 1)))
    with pytest.raises(SingularSystem):
        solve_collocation(np.ones((3, 2)), np.ones((3, 1)))


def test_biquadratic_data_in_one_iteration():
    data = FunctionData(biquadratic, grid_points(40))
    model = fit_adaptive(data, tol=1e-9, max_iter=3)
    assert model.converged and len(model.log) == 1
    assert model.log[0].max_error <= 1e-9


def test_biquadratic_from_triangulation():
    t = TriMesh.grid(lambda x, y: 0 * x, 12)
    V = biquadratic(t.vertices[:, 0], t.vertices[:, 1])
    # with the grid itself as parametrization the data is the polynomial at the vertices
    data = TriangulationData(TriMesh(V, t.triangles), uv=t.vertices[:, :2])
    m = HierarchicalTMesh.tensor(np.linspace(0, 1, 3), np.linspace(0, 1, 3))
    basis = build_basis(m, hbc=False)
    P, C = collocate_and_solve(basis, FunctionData(biquadratic, data.points))
    errs, emax = cell_errors(m, basis, P, data)
    assert emax < 1e-9
    assert set(errs) == set(m.cells)


def test_report_schema_and_sampling():
    data = FunctionData(lambda x, y: np.column_stack([x, y, franke(x, y)]), grid_points(30))
    model = fit_adaptive(data, tol=1e-2, max_iter=3)
    rep = model.report()
    for row in rep["iterations"]:
        assert {"n", "dim", "max_error", "seconds"} <= set(row)
    V, T = sample_surface(model, 7)
    assert V.shape == (49, 3) and T.shape == (72, 3)
    assert np.allclose(V[:, 2], model(V[:, 0], V[:, 1])[:, 2])


def test_cells_without_data_are_not_refined():
    pts = np.column_stack([np.linspace(0.01, 0.2, 20), np.linspace(0.01, 0.2, 20)])
    data = FunctionData(lambda x, y: np.column_stack([np.sin(9 * x), np.cos(7 * y)]), pts)
    model = fit_adaptive(data, tol=1e-12, max_iter=2)
    assert set(model.cell_error) <= {c for c in model.mesh.cells}
    far = [c for c in model.mesh.cells if model.mesh.real_rect(c)[0] >= 0.5]
    assert all(model.mesh.cells[c].level == 0 for c in far)


def test_refinement_always_enlarges_the_space():
    m = HierarchicalTMesh.tensor(np.linspace(0, 1, 5), np.linspace(0, 1, 5))
    d0 = dim_space(m, hbc=False)
    plain = m.subdivide("L0:(1,1)")
    assert dim_space(plain, hbc=False) == d0  # isolated split is removed by simplification
    wider = refine_effectively(m, ["L0:(1,1)"])
    assert dim_space(wider, hbc=False) > d0
    assert "L0:(1,1)/q0" in wider.cells
