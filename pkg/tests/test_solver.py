import numpy as np
import pytest

from trimarket.model import InventoryParams, TradeCaps, assemble_qp, recover_plan
from trimarket.qp import (
    INFEASIBLE,
    ITERATION_LIMIT,
    OPTIMAL,
    SolverSettings,
    diagnose_infeasibility,
    kkt_residuals,
    solve_qp,
)

from _instances import build, hand_case, random_instance, solve


@pytest.fixture(scope="module")
def solved():
    cfg, data = hand_case()
    _, p, sol = solve(cfg, data)
    return p, sol


class TestHandInstance:
    def test_optimal_objective(self, solved):
        _, sol = solved
        assert sol.status == OPTIMAL
        assert sol.objective == pytest.approx(2810.0, abs=1e-6)

    def test_primal_point(self, solved):
        p, sol = solved
        plan = recover_plan(sol.x, p.layout)
        # coverage costs 0.9 * 30 = 27 per MWh, so the unit is under water
        # (100 < 80 + 27) and stays off
        assert plan.g[0] == pytest.approx(0.0, abs=1e-7)
        assert plan.G[0] == pytest.approx(5.0, abs=1e-7)
        # retire half the load, sell the rest of the RES output
        assert plan.r0[0] == pytest.approx(2.5, abs=1e-7)
        assert plan.R[0] == pytest.approx(7.5, abs=1e-7)
        # with no emissions the full 72-unit quota is drawn and sold
        assert plan.c0[0] == pytest.approx(72.0, abs=1e-7)
        assert plan.C[0] == pytest.approx(72.0, abs=1e-7)

    def test_balance_prices(self, solved):
        p, sol = solved
        lam = {p.eq_row_name(i): sol.eq_duals[i] for i in range(p.m_eq)}
        assert lam["elec_bal[1]"] == pytest.approx(-100.0, abs=1e-6)
        assert lam["rec_bal[1]"] == pytest.approx(-20.0, abs=1e-6)
        assert lam["cer_bal[1]"] == pytest.approx(30.0, abs=1e-6)
        # the storage row price is only pinned to a range here: the ESS is
        # idle and degenerate, any value in [-110, -100] closes the KKT system
        assert -110.0 - 1e-6 <= lam["ess_dyn[1]"] <= -100.0 + 1e-6

    def test_coupling_multipliers(self, solved):
        _, sol = solved
        mu, delta = sol.ineq_duals.coupling
        assert mu == pytest.approx(20.0, abs=1e-6)
        assert delta == pytest.approx(30.0, abs=1e-6)

    def test_reported_residuals_match_recomputation(self, solved):
        p, sol = solved
        res = kkt_residuals(p, sol)
        assert res.primal_inf <= 1e-8
        assert res.dual_inf <= 1e-6
        assert res.comp_gap <= 1e-6


class TestSolverBehaviour:
    def test_deterministic_repeat(self):
        cfg, data = random_instance(21, horizon=3)
        _, p = build(cfg, data)
        a = solve_qp(p)
        b = solve_qp(p)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.eq_duals, b.eq_duals)

    def test_iteration_limit_status(self):
        cfg, data = random_instance(5, horizon=3)
        _, p = build(cfg, data)
        sol = solve_qp(p, SolverSettings(max_iter=1, polish=False))
        assert sol.status == ITERATION_LIMIT

    def test_settings_validated(self):
        with pytest.raises(ValueError, match="tol_primal"):
            SolverSettings(tol_primal=0.0)
        with pytest.raises(ValueError, match="max_iter"):
            SolverSettings(max_iter=0)

    def test_multipliers_signed_correctly(self):
        for seed in range(12):
            cfg, data = random_instance(seed)
            _, p, sol = solve(cfg, data)
            if sol.status != OPTIMAL:
                continue
            assert np.all(sol.ineq_duals.lower >= -1e-9)
            assert np.all(sol.ineq_duals.upper >= -1e-9)
            assert np.all(sol.ineq_duals.coupling >= -1e-9)

    def test_pinned_variables_respected(self):
        # zero-size ESS pins three roles per hour via lb == ub
        cfg, data = hand_case()
        cfg = type(cfg)(**{**cfg.__dict__, "ess": type(cfg.ess)(0.0, 0.0, 0.0)})
        _, p, sol = solve(cfg, data)
        assert sol.status == OPTIMAL
        for role in ("p_c", "p_d", "q"):
            np.testing.assert_allclose(p.layout.gather(sol.x, role), 0.0, atol=1e-12)

    def test_degenerate_coupling_rows(self):
        # r = 0 and alpha = 0 zero out both coupling rows
        cfg, data = hand_case()
        _, p, sol = solve(cfg.with_policy(r=0.0, alpha=0.0), data)
        assert sol.status == OPTIMAL
        res = kkt_residuals(p, sol)
        assert max(res.primal_inf, res.dual_inf, res.comp_gap) <= 1e-6


class TestInfeasibility:
    def _rec_starved(self):
        # full retirement demanded, certificate market closed, no inventory
        cfg, data = hand_case()
        cfg = type(cfg)(
            **{
                **cfg.__dict__,
                "rec_inventory": InventoryParams.disabled(),
                "caps": TradeCaps(r_cap=0.0),
            }
        )
        cfg = cfg.with_policy(r=1.0)
        data = type(data)(**{**data.__dict__, "e": np.array([1.0])})
        return cfg, data

    def test_rec_floor_infeasible(self):
        cfg, data = self._rec_starved()
        _, p, sol = solve(cfg, data)
        assert sol.status == INFEASIBLE
        assert "retirement floor" in sol.message

    def test_quota_infeasible(self):
        # forced emissions, no quota, certificate market closed
        cfg, data = hand_case()
        cfg = type(cfg)(
            **{
                **cfg.__dict__,
                "tg": type(cfg.tg)(a=1.0, b=80.0, g_min=50.0, g_max=80.0, k=0.9),
                "cer_inventory": InventoryParams.disabled(),
                "caps": TradeCaps(c_cap=0.0),
            }
        ).with_policy(alpha=0.0)
        _, p, sol = solve(cfg, data)
        assert sol.status == INFEASIBLE
        assert "quota" in sol.message

    def test_diagnose_on_feasible_problem(self):
        cfg, data = hand_case()
        _, p = build(cfg, data)
        assert diagnose_infeasibility(p) == "problem is feasible"
