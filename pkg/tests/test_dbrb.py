import math

import numpy as np
import pytest

from compbeam import cones, dbrb
from compbeam.dbrb import (AtomBox, Node, binary_search_feasible, bound, branch,
                           make_incumbent, point_in_S, power_control, reduce,
                           root_heuristic, select_box, solve_dbrb, write_trace_csv)
from compbeam.problem import Box, check_feasible, compute_root_box, rates

from conftest import make_instance, single_link_instance


def node(upper, created, index):
    return Node(Box([0.0], [1.0], 0), upper, created, index)


class TestSelect:
    def test_largest_upper(self):
        assert select_box([node(1, 0, 0), node(3, 5, 1), node(2, 0, 2)]).upper == 3

    def test_tie_prefers_older(self):
        assert select_box([node(3, 4, 0), node(3, 2, 1)]).created == 2

    def test_tie_prefers_lower_index(self):
        assert select_box([node(3, 2, 7), node(3, 2, 1)]).index == 1

    def test_empty(self):
        with pytest.raises(IndexError):
            select_box([])


class TestBranch:
    def test_continuous_midpoint(self):
        a, b = branch(Box([0.0, 0.69], [1.0, 2.0], 1))
        assert a.q[1] == pytest.approx(1.345) and b.p[1] == pytest.approx(1.345)
        np.testing.assert_array_equal(a.p, [0.0, 0.69])
        np.testing.assert_array_equal(b.q, [1.0, 2.0])

    def test_boolean_split(self):
        a, b = branch(Box([0.0, 0.0, 1.0], [1.0, 1.0, 1.5], 2))
        np.testing.assert_array_equal(a.q[:2], [0.0, 1.0])
        np.testing.assert_array_equal(b.p[:2], [1.0, 0.0])
        np.testing.assert_array_equal(a.q[2:], [1.5])

    def test_children_cover_parent(self, rng):
        box = Box([0, 0, 0.5, 0.2], [1, 1, 3.0, 0.9], 2)
        a, b = branch(box)
        for _ in range(100):
            x = rng.integers(0, 2, 2).astype(float)
            pt = np.r_[x, rng.uniform(box.pz, box.qz)]
            assert a.contains(pt) or b.contains(pt)

    def test_atom(self):
        with pytest.raises(AtomBox):
            branch(Box([1.0, 0.5], [1.0, 0.5], 1))


class TestPointInS:
    def test_examples(self, tiny):
        ln2 = np.full(2, np.log(2))
        assert point_in_S(np.ones(4), ln2, tiny)
        assert not point_in_S(np.ones(4), np.full(2, 40.0), tiny)
        assert not point_in_S(np.array([1.0, 0, 1, 0]), ln2, tiny)

    def test_backhaul_screen(self, tiny):
        # 3 nats on both users overloads a 5-nat backhaul when both BSs serve both
        assert not point_in_S(np.ones(4), np.full(2, 3.0), tiny)

    def test_monotone(self, tiny, rng):
        for _ in range(20):
            z = rng.uniform(0.7, 3.0, 2)
            if point_in_S(np.ones(4), z, tiny):
                assert point_in_S(np.ones(4), np.maximum(np.log(2), z - 0.2), tiny)


class TestReduce:
    def test_point_at_top_corner(self, tiny):
        root = compute_root_box(tiny.params, tiny.channels)
        assert reduce(root, root.upper_objective(), tiny) is None

    def test_feasible_box_unchanged(self, tiny):
        x = np.ones(4)
        lo = np.full(2, np.log(2))
        hi = lo + 0.01
        assert point_in_S(x, hi, tiny)
        box = Box(np.r_[x, lo], np.r_[x, hi], 4)
        red = reduce(box, lo.sum(), tiny)
        np.testing.assert_array_equal(red.p, box.p)
        np.testing.assert_array_equal(red.q, box.q)

    def test_shrinks_root(self, tiny):
        root = compute_root_box(tiny.params, tiny.channels)
        red = reduce(root, 2 * np.log(2), tiny)
        assert np.all(red.p >= root.p) and np.all(red.q <= root.q)


class TestBound:
    def test_prune(self, tiny):
        root = compute_root_box(tiny.params, tiny.channels)
        assert bound(root, root.upper_objective() + 1.0, tiny) == (None, None)

    def test_atom_box(self, tiny):
        x, z = np.ones(4), np.array([1.0, 1.1])
        assert point_in_S(x, z, tiny)
        upper, inc = bound(Box(np.r_[x, z], np.r_[x, z], 4), 0.0, tiny)
        assert upper == pytest.approx(z.sum(), abs=1e-7)
        assert inc is not None and inc.objective >= z.sum() - 1e-6

    def test_upper_dominates_incumbent(self, tiny):
        root = compute_root_box(tiny.params, tiny.channels)
        upper, inc = bound(root, 2 * np.log(2), tiny)
        assert inc is not None
        assert upper >= inc.objective - 1e-9
        assert not check_feasible(inc.w, inc.x, inc.u, tiny.params, tiny.channels)


class TestBinarySearch:
    def probe(self, monkeypatch, feasible_upto):
        seen = []

        def fake(x_sel, z_floor, inst, stats=None):
            seen.append(int(x_sel.sum()))
            ok = x_sel.sum() <= feasible_upto
            return (cones.OPTIMAL if ok else cones.INFEASIBLE), None

        monkeypatch.setattr(dbrb, "solve_feasibility", fake)
        monkeypatch.setattr(dbrb, "make_incumbent", lambda *a, **k: None)
        return seen

    def test_probe_sequence(self, monkeypatch):
        inst = make_instance(3, 1, 6)
        seen = self.probe(monkeypatch, 6)
        root = compute_root_box(inst.params, inst.channels)
        binary_search_feasible(np.linspace(1, 0, 18), root, inst)
        assert seen[0] == 12
        assert seen == [12, 8, 6, 7]

    def test_full_support(self, monkeypatch):
        inst = make_instance(3, 1, 6)
        seen = self.probe(monkeypatch, 18)
        binary_search_feasible(np.ones(18), compute_root_box(inst.params, inst.channels), inst)
        assert seen == [12, 15, 17, 18]

    def test_ties_go_to_smaller_index(self, monkeypatch):
        inst = make_instance(2, 1, 2)
        chosen = []

        def fake(x_sel, z_floor, inst, stats=None):
            chosen.append(x_sel.copy())
            return cones.INFEASIBLE, None

        monkeypatch.setattr(dbrb, "solve_feasibility", fake)
        binary_search_feasible(np.array([0.5, 0.9, 0.5, 0.5]),
                               compute_root_box(inst.params, inst.channels), inst)
        np.testing.assert_array_equal(chosen[0], [1, 1, 1, 0])


class TestIncumbentRepair:
    def test_power_control_hits_targets(self, tiny, rng):
        w = rng.normal(size=(4, 2)) + 1j * rng.normal(size=(4, 2))
        w *= np.sqrt(tiny.params.power_budget) / 4
        r = rates(tiny.h, w, tiny.params.noise_power)
        target = 0.5 * r
        w2 = power_control(tiny.h, w, target, tiny.params.noise_power)
        np.testing.assert_allclose(rates(tiny.h, w2, tiny.params.noise_power), target,
                                   rtol=1e-9)

    def test_power_control_rejects_higher_targets(self, tiny, rng):
        w = rng.normal(size=(4, 2)) + 1j * rng.normal(size=(4, 2))
        r = rates(tiny.h, w, tiny.params.noise_power)
        assert power_control(tiny.h, w, r + 1.0, tiny.params.noise_power) is None

    def test_make_incumbent_respects_backhaul(self):
        inst = make_instance(2, 2, 2, seed=1, backhaul_cap=2.0)
        status, w = dbrb.solve_feasibility(np.ones(4), np.full(2, np.log(2)), inst)
        assert status == cones.OPTIMAL
        w = w * 50  # overload power and backhaul on purpose
        inc = make_incumbent(w, np.ones(4), inst)
        assert inc is not None
        assert not check_feasible(inc.w, inc.x, inc.u, inst.params, inst.channels)


@pytest.mark.parametrize("power, cap", [(1.0, 100.0), (1.0, 1.5), (0.3, 2.5)])
def test_single_link_closed_form(power, cap):
    h = np.array([[0.8 + 0.6j, -0.2j, 0.5]])
    inst = single_link_instance(h, power=power, noise=0.01, cap=cap)
    expected = min(cap, math.log1p(power * np.sum(np.abs(h) ** 2) / 0.01))
    res = solve_dbrb(inst, eps_rel=0, eps_abs=1e-6)
    assert res.status == "optimal"
    assert res.lower == pytest.approx(expected, abs=1e-5)
    assert res.upper >= expected - 1e-6


def test_infeasible_instance():
    inst = make_instance(2, 2, 2, seed=0, sinr_target=1e30)
    res = solve_dbrb(inst)
    assert res.status == "infeasible" and res.incumbent is None


def test_backhaul_too_small_for_qos():
    inst = make_instance(2, 2, 2, seed=0, backhaul_cap=0.5)
    assert solve_dbrb(inst).status == "infeasible"


class TestSolve:
    def test_trace_monotone(self, tiny):
        res = solve_dbrb(tiny)
        assert res.status == "optimal"
        for a, b in zip(res.trace, res.trace[1:]):
            assert b.ub <= a.ub and b.lb >= a.lb
        assert all(r.lb <= r.ub + 1e-9 for r in res.trace)
        assert res.trace[-1].ub == res.upper

    def test_incumbent_feasible(self, tiny):
        seen = []
        res = solve_dbrb(tiny, on_incumbent=seen.append)
        assert seen and seen[-1] is res.incumbent
        for inc in seen:
            assert not check_feasible(inc.w, inc.x, inc.u, tiny.params,
                                      tiny.channels, tol=1e-6)
        assert res.lower == pytest.approx(res.incumbent.objective)

    def test_deterministic(self, tiny):
        a, b = solve_dbrb(tiny), solve_dbrb(tiny)
        assert [(r.ub, r.lb, r.live_boxes) for r in a.trace] == \
            [(r.ub, r.lb, r.live_boxes) for r in b.trace]

    def test_iteration_limit(self):
        inst = make_instance(2, 2, 2, seed=1, backhaul_cap=20.0)
        res = solve_dbrb(inst, eps_rel=0, eps_abs=0, max_iter=3)
        assert res.status == "iteration-limit" and res.iterations == 3

    def test_initial_incumbent(self, tiny):
        heur = root_heuristic(tiny)
        res = solve_dbrb(tiny, initial=heur)
        assert res.lower >= heur.objective

    def test_bogus_initial_ignored(self, tiny):
        heur = root_heuristic(tiny)
        heur.w = heur.w * 100
        res = solve_dbrb(tiny, max_iter=0)
        res2 = solve_dbrb(tiny, initial=heur, max_iter=0)
        assert res2.lower == res.lower

    def test_monotone_in_backhaul(self):
        vals = []
        for cap in (3.0, 6.0, 12.0):
            res = solve_dbrb(make_instance(2, 2, 2, seed=2, backhaul_cap=cap),
                             eps_rel=0, eps_abs=1e-3)
            vals.append(res.lower)
        assert vals[0] <= vals[1] + 1e-3 and vals[1] <= vals[2] + 1e-3


def test_trace_csv(tmp_path, tiny):
    res = solve_dbrb(tiny)
    path = tmp_path / "t.csv"
    write_trace_csv(res.trace, path, "seed=0")
    lines = path.read_text().splitlines()
    assert lines[0] == "# seed=0"
    assert lines[1] == "iter,ub,lb,live_boxes,socp_solves,feas_solves,elapsed_ms"
    assert len(lines) == len(res.trace) + 2
