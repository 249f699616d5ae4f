import numpy as np
import pytest
from hypothesis import given, strategies as st

from cvrspline.basis import init_weights, support_domain
from cvrspline.cvr import build_cvr, working_mesh
from cvrspline.oracle import random_hierarchical_mesh
from cvrspline.tstructure import (
    BilinearFunc,
    DegenerateNodes,
    Node,
    PropagationConflict,
    PropagationState,
    bilinear_from_nodes,
    branch_for,
    find_t_structures,
    init_state,
    order_branch,
    split_components,
    sweep,
)


class TestFig5Structures:
    def test_one_per_c_edge(self, fig5):
        S = find_t_structures(fig5)
        assert len(S) == len(fig5.c_edges) == 8
        assert all(s.level == 0 for s in S)
        # the c-edge on x = 1, y in [2, 3] has cell 4 as its mother and cells 1, 2 as sub-cells
        s = [s for s in S if s.mother_cell == "L0:(0,2)"][0]
        assert s.orientation == "vertical"
        assert set(s.sub_cells) == {"L0:(1,2)/q0", "L0:(1,2)/q2"}
        assert [fig5.real_point(p) for p in s.end_points] == [(1.0, 2.0), (1.0, 3.0)]

    def test_branch_covers_connection(self, fig5):
        S = find_t_structures(fig5)
        for g in build_cvr(fig5).gcells:
            if g.kind != "T":
                continue
            br = branch_for(fig5, g, S)
            covered = {c for s in br.structures for c in s.sub_cells + (s.mother_cell,)}
            assert set(g.cells) <= covered
            assert len(split_components(br)) == 1
            ordered = order_branch(br)
            assert sorted(s.id for s in ordered.structures) == sorted(s.id for s in br.structures)


class TestBilinear:
    @given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=4, max_size=4))
    def test_reproduces_bilinear(self, c):
        f = BilinearFunc(*c, origin=(1.0, 2.0))
        pts = [(0.0, 0.0), (3.0, 0.5), (0.5, 2.0), (2.0, 3.0)]
        g = bilinear_from_nodes([Node(p, f(*p), "weight") for p in pts], origin=(1.0, 2.0))
        for x, y in [(0.3, 0.7), (5.0, -1.0)]:
            assert g(x, y) == pytest.approx(f(x, y), abs=1e-8 * (1 + max(map(abs, c))))

    def test_degenerate(self):
        pts = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 1.0)]
        with pytest.raises(DegenerateNodes):
            bilinear_from_nodes([Node(p, 0.0, "weight") for p in pts])
        with pytest.raises(DegenerateNodes):
            bilinear_from_nodes([Node((0.0, 0.0), 0.0, "weight")])

    def test_float_and_array_paths_agree(self):
        f = BilinearFunc(1.0, 2.0, 3.0, 4.0)
        assert f(0.5, 0.25) == pytest.approx(float(f(np.array(0.5), np.array(0.25))))


class TestPropagation:
    def test_conflict_outside_support(self, fig5):
        cvr = build_cvr(fig5)
        st_ = PropagationState(fig5, cvr, {}, {"L0:(2,1)"})
        st_.set("L0:(0,0)", 1, 1, 0.0, "computed")  # zero outside is fine
        with pytest.raises(PropagationConflict):
            st_.set("L0:(0,0)", 1, 1, 1.0, "computed")
        st_.set("L0:(2,1)", 1, 1, 1.0, "weight")
        with pytest.raises(PropagationConflict):
            st_.set("L0:(2,1)", 1, 1, 2.0, "computed")
        assert st_.count_known() == 1

    @given(seed=st.integers(0, 5000))
    def test_sweep_is_consistent(self, seed):
        """Everything the stages derive is consistent (no conflict on a valid support)."""
        w = working_mesh(random_hierarchical_mesh(seed, 4, 2, 0.5), True)
        cvr = build_cvr(w)
        if not cvr.gcells:
            return
        g = cvr.gcells[seed % len(cvr.gcells)]
        cells, _ = support_domain(w, cvr, g.id, rings=len(w.cells))
        state = PropagationState(w, cvr, init_weights(cvr, g.id), set(cells) & set(w.cells))
        init_state(state)
        before = state.count_known()
        sweep(state)
        assert state.count_known() >= before
