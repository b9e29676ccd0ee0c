"""Solver loops and certificates.

The exact loop is checked against hand-stepped iterations and saddle-point
fixed points; certificates are exercised on healthy runs, on a synthetic
record engineered to trip the negative-radicand flags, and on records they
must refuse (sampled, PID, multi-step).
"""

import numpy as np
import pytest

from apdual.cmdp import SamplingConfig
from apdual.duals import PidGains
from apdual.envs import GridworldSpec, default_hazard_gridworld, make_gridworld
from apdual.lagrangian import ConstraintSpec, Multiplier
from apdual.policy import TabularSoftmax, init_params
from apdual.quadprog import quad_default, quad_kkt_solve, quad_make
from apdual.schedules import LrSchedule, SmoothnessConstants
from apdual.solver import (
    RunRecord,
    SolverConfig,
    apd_run,
    dual_asymptotic_term,
    feasibility_check,
    papd_run,
    verify_bounds,
)

ZETA = 0.05


def exact_cfg(variant="invlin-exact", iterations=300, **kw):
    return SolverConfig(
        iterations=iterations,
        schedule=LrSchedule(variant),
        dual_variant="ascent",
        zeta=ZETA,
        **kw,
    )


class TestApdRun:
    def test_single_step_hand_computed(self):
        prog = quad_default()
        cfg = exact_cfg(iterations=1)
        rec = apd_run(prog, cfg)
        # theta_0 = 0, lambda_0 = 0, L(0) = 1 -> eta = 1/2
        assert rec.etas[0] == pytest.approx(0.5)
        np.testing.assert_array_equal(rec.thetas[0], [0.0, 0.0])
        np.testing.assert_array_equal(rec.lambdas[0], [0.0])
        # theta_1 = theta - eta (Q theta - b) = 0.5 * b
        np.testing.assert_allclose(rec.thetas[1], [0.5, 0.5], rtol=1e-15)
        # J values at theta_1
        assert rec.returns[0] == pytest.approx(prog.j_r([0.5, 0.5]), rel=1e-15)
        assert rec.costs[0, 0] == pytest.approx(0.25, rel=1e-15)
        # lambda_1 = [0 + zeta (0.25 - 0.5)]_+ = 0
        assert rec.lambdas[1, 0] == 0.0

    def test_saddle_point_is_fixed(self):
        prog = quad_default()
        sol = quad_kkt_solve(prog)
        cfg = exact_cfg(
            iterations=100, theta0=sol.theta_star, lambda0=np.array([sol.lambda_star])
        )
        rec = apd_run(prog, cfg)
        np.testing.assert_allclose(rec.final_theta, sol.theta_star, atol=1e-9)
        assert rec.final_lambda[0] == pytest.approx(sol.lambda_star, abs=1e-9)

    def test_vanishing_zeta_recovers_unconstrained_optimum(self):
        prog = quad_default()
        cfg = SolverConfig(
            iterations=200,
            schedule=LrSchedule("invlin-exact"),
            dual_variant="ascent",
            zeta=1e-12,
        )
        rec = apd_run(prog, cfg)
        # with the dual frozen near zero the primal descends J_R alone
        np.testing.assert_allclose(rec.final_theta, [1.0, 1.0], atol=1e-6)
        assert rec.final_lambda[0] < 1e-8

    def test_deterministic(self):
        prog = quad_default()
        a = apd_run(prog, exact_cfg())
        b = apd_run(prog, exact_cfg())
        np.testing.assert_array_equal(a.thetas, b.thetas)
        np.testing.assert_array_equal(a.lambdas, b.lambdas)

    def test_converges_to_kkt_both_schedules(self):
        prog = quad_default()
        sol = quad_kkt_solve(prog)
        for variant in ("invlin-exact", "invqua-exact"):
            rec = apd_run(prog, exact_cfg(variant, iterations=3000))
            assert abs(rec.final_lambda[0] - sol.lambda_star) < 1e-3
            assert np.linalg.norm(rec.final_theta - sol.theta_star) < 1e-3

    def test_meta_best_dual_consistent(self):
        prog = quad_default()
        rec = apd_run(prog, exact_cfg(iterations=50))
        from apdual.quadprog import dual_values_batch

        d_vals, _, _ = dual_values_batch(prog, rec.lambdas[:, 0])
        assert rec.meta["dual_best"] == pytest.approx(float(d_vals.max()), rel=1e-12)

    def test_schedule_constants_mismatch_rejected(self):
        prog = quad_default()
        wrong = SmoothnessConstants(l_r=3.0, l_c=np.array([1.0]), mu=1.0)
        cfg = SolverConfig(
            iterations=5,
            schedule=LrSchedule("invlin-exact", constants=wrong),
            dual_variant="ascent",
            zeta=ZETA,
        )
        with pytest.raises(ValueError, match="disagree"):
            apd_run(prog, cfg)

    def test_record_shapes(self):
        rec = apd_run(quad_default(), exact_cfg(iterations=7))
        assert rec.iterations == 7
        assert rec.thetas.shape == (8, 2)
        assert rec.lambdas.shape == (8, 1)
        assert rec.etas.shape == (7,)
        assert rec.costs.shape == (7, 1)

    def test_pid_dual_variant_runs(self):
        cfg = SolverConfig(
            iterations=50,
            schedule=LrSchedule("invlin-exact"),
            dual_variant="pid",
            gains=PidGains(0.5, 0.01, 0.1),
        )
        rec = apd_run(quad_default(), cfg)
        assert rec.meta["dual"] == "pid"
        assert np.all(rec.lambdas >= 0.0)


class TestRunRecordValidation:
    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            RunRecord(
                thetas=np.zeros((3, 2)),
                lambdas=np.zeros((2, 1)),
                etas=np.zeros(2),
                returns=np.zeros(2),
                costs=np.zeros((2, 1)),
                meta={},
            )

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            RunRecord(
                thetas=np.zeros((3, 2)),
                lambdas=np.full((3, 1), -1.0),
                etas=np.zeros(2),
                returns=np.zeros(2),
                costs=np.zeros((2, 1)),
                meta={},
            )


class TestBoundCertificates:
    @pytest.mark.parametrize("variant", ["invlin-exact", "invqua-exact"])
    def test_certificate_passes_on_healthy_run(self, variant):
        prog = quad_default()
        rec = apd_run(prog, exact_cfg(variant, iterations=400))
        cert = verify_bounds(rec, prog)
        assert cert.passed
        assert all(flag.sum() == 0 for flag in cert.flags.values())
        # primal errors are true suboptimalities, hence nonnegative
        assert np.all(cert.eps >= -1e-9)
        assert cert.slacks["dual-gap"].min() >= -1e-9
        assert cert.slacks["rate"].min() >= -1e-9
        assert cert.d_star == pytest.approx(0.5 - np.sqrt(2.0), abs=1e-9)

    def test_optimality_check_nontrivial(self):
        # away from convergence the optimizer strictly beats 2x and 0.5x
        prog = quad_default()
        rec = apd_run(prog, exact_cfg(iterations=30))
        cert = verify_bounds(rec, prog)
        assert np.nanmax(cert.slacks["opt-invlin"]) > 0.0
        assert np.nanmax(cert.slacks["opt-invqua"]) > 0.0

    def test_optimized_step_bound_needs_matching_eta(self):
        prog = quad_default()
        rec = apd_run(prog, exact_cfg("invlin-exact", iterations=60))
        cert = verify_bounds(rec, prog)
        lin = cert.slacks["eps-opt-invlin"]
        # invlin run: eta matches the invlin optimizer everywhere
        assert not np.isnan(lin).any()
        qua = cert.slacks["eps-opt-invqua"]
        # and matches the invqua optimizer only where lambda = 0 (L = mu)
        lam_zero = rec.lambdas[:-1, 0] == 0.0
        assert np.isnan(qua[~lam_zero]).all()
        assert not np.isnan(qua[lam_zero]).any()

    def test_negative_radicand_flagged_not_failed(self):
        # feeding the checker understated smoothness constants makes the
        # invlin radicand negative wherever delta > 0; those iterations must
        # be flagged and excluded, not scored
        prog = quad_default()
        rec = apd_run(prog, exact_cfg("invlin-exact", iterations=40))
        lied = SmoothnessConstants(l_r=0.3, l_c=np.array([0.3]), mu=0.3)
        cert = verify_bounds(rec, prog, constants=lied)
        n_flagged = int(cert.flags["eps-invlin"].sum())
        assert n_flagged > 0
        flagged = cert.flags["eps-invlin"]
        assert np.isnan(cert.slacks["eps-invlin"][flagged]).all()
        assert cert.to_dict()["flagged_iterations"]["eps-invlin"] == n_flagged

    def test_rejects_non_exact_records(self):
        prog = quad_default()
        rec = apd_run(prog, exact_cfg(iterations=5))
        rec.meta["kind"] = "papd"
        with pytest.raises(ValueError, match="exact"):
            verify_bounds(rec, prog)

    def test_rejects_pid_records(self):
        cfg = SolverConfig(
            iterations=5,
            schedule=LrSchedule("invlin-exact"),
            dual_variant="pid",
            gains=PidGains(),
        )
        rec = apd_run(quad_default(), cfg)
        with pytest.raises(ValueError, match="ascent"):
            verify_bounds(rec, quad_default())

    def test_rejects_multi_step_records(self):
        rec = apd_run(quad_default(), exact_cfg(iterations=5, inner_steps=3))
        with pytest.raises(ValueError, match="one primal step"):
            verify_bounds(rec, quad_default())

    def test_certificate_serializable(self):
        import json

        prog = quad_default()
        rec = apd_run(prog, exact_cfg(iterations=20))
        cert = verify_bounds(rec, prog)
        text = json.dumps(cert.to_dict())
        assert json.loads(text)["passed"] is True


class TestFeasibility:
    def test_running_average_settles_below_limit(self):
        prog = quad_default()
        rec = apd_run(prog, exact_cfg(iterations=2000))
        report = feasibility_check(rec, prog.constraint_spec())
        assert report.passed
        assert report.full_avg[0] <= 0.5 + 1e-2
        assert report.envelope_ok

    def test_envelope_exact_while_unclipped(self):
        # while lambda never hits the projection boundary the transient
        # envelope is an identity: avg g = (lambda_K' - lambda_0)/(zeta K')
        prog = quad_default()
        cfg = exact_cfg(iterations=50, theta0=np.array([2.0, 2.0]))
        rec = apd_run(prog, cfg)
        report = feasibility_check(rec, prog.constraint_spec())
        ascending = rec.lambdas[1:, 0] > 0.0
        first = np.flatnonzero(~ascending)
        upto = int(first[0]) if first.size else rec.iterations
        np.testing.assert_allclose(
            report.envelope_slack[:upto], 0.0, atol=1e-12
        )

    def test_pass_fail_tolerance(self):
        thetas = np.zeros((4, 1))
        lambdas = np.zeros((4, 1))
        etas = np.zeros(3)
        returns = np.zeros(3)
        spec = ConstraintSpec(np.array([1.0]))
        high = RunRecord(
            thetas, lambdas, etas, returns, np.full((3, 1), 1.05), {"kind": "x"}
        )
        low = RunRecord(
            thetas, lambdas, etas, returns, np.full((3, 1), 1.005), {"kind": "x"}
        )
        assert not feasibility_check(high, spec).passed
        assert feasibility_check(low, spec).passed

    def test_window_validation(self):
        prog = quad_default()
        rec = apd_run(prog, exact_cfg(iterations=10))
        with pytest.raises(ValueError):
            feasibility_check(rec, prog.constraint_spec(), window=0.0)

    def test_asymptotic_term_worked_value(self):
        # zeta (B + (1-gamma)||d||)^2 / (2 (1-gamma)^2)
        val = dual_asymptotic_term(2.0, 0.9, np.array([1.0]), 0.05)
        assert val == pytest.approx(11.025, rel=1e-12)


def papd_cfg(iterations=40, algorithm="reinforce", seed=0, **kw):
    grid_cells = kw.pop("n_cells", 15)
    return SolverConfig(
        iterations=iterations,
        schedule=LrSchedule("invlin-practical", h1=0.003, h2=3.0),
        dual_variant="pid",
        gains=PidGains(0.05, 0.0005, 0.1),
        theta0=init_params(TabularSoftmax(grid_cells, 4)),
        sampling=SamplingConfig(n_traj=8, horizon=20),
        seed=seed,
        algorithm=algorithm,
        **kw,
    )


class TestPapdRun:
    def setup_method(self):
        self.spec_grid = default_hazard_gridworld()
        self.cmdp = make_gridworld(self.spec_grid)
        self.constraint = ConstraintSpec(np.array([10.0]))

    def test_deterministic(self):
        a = papd_run(self.cmdp, self.constraint, papd_cfg())
        b = papd_run(self.cmdp, self.constraint, papd_cfg())
        np.testing.assert_array_equal(a.thetas, b.thetas)
        np.testing.assert_array_equal(a.returns, b.returns)
        np.testing.assert_array_equal(a.lambdas, b.lambdas)

    def test_seed_changes_run(self):
        a = papd_run(self.cmdp, self.constraint, papd_cfg(seed=0))
        b = papd_run(self.cmdp, self.constraint, papd_cfg(seed=1))
        assert not np.array_equal(a.returns, b.returns)

    def test_record_semantics(self):
        rec = papd_run(self.cmdp, self.constraint, papd_cfg(iterations=10))
        assert rec.meta["kind"] == "papd"
        np.testing.assert_array_equal(rec.lambdas[0], [0.0])
        # at lambda = 0 the practical invlin rate is H1/H2
        assert rec.etas[0] == pytest.approx(0.003 / 3.0)
        assert np.all(rec.lambdas >= 0.0)

    def test_learning_progress_without_hazards(self):
        # no hazards: the dual stays at zero and the primal is pure ascent
        safe = GridworldSpec(
            width=5, height=3, start_cell=5, goal_cell=9, hazard_cells=()
        )
        cmdp = make_gridworld(safe)
        rec = papd_run(cmdp, ConstraintSpec(np.array([10.0])), papd_cfg(iterations=150))
        assert np.all(rec.lambdas == 0.0)
        assert rec.returns[-20:].mean() > rec.returns[:20].mean()

    def test_pid_reacts_to_violation(self):
        rec = papd_run(self.cmdp, self.constraint, papd_cfg(iterations=60))
        assert rec.lambdas[:, 0].max() > 0.0

    def test_ppol_runs_and_deterministic(self):
        a = papd_run(
            self.cmdp, self.constraint, papd_cfg(iterations=8, algorithm="ppol")
        )
        b = papd_run(
            self.cmdp, self.constraint, papd_cfg(iterations=8, algorithm="ppol")
        )
        np.testing.assert_array_equal(a.thetas, b.thetas)
        assert a.meta["algorithm"] == "ppol"

    def test_fresh_dual_batch_changes_cost_stream(self):
        base = papd_run(self.cmdp, self.constraint, papd_cfg(iterations=12))
        fresh = papd_run(
            self.cmdp, self.constraint, papd_cfg(iterations=12, fresh_dual_batch=True)
        )
        assert not np.array_equal(base.costs, fresh.costs)
        again = papd_run(
            self.cmdp, self.constraint, papd_cfg(iterations=12, fresh_dual_batch=True)
        )
        np.testing.assert_array_equal(fresh.costs, again.costs)

    def test_validation(self):
        with pytest.raises(ValueError, match="PID"):
            papd_run(
                self.cmdp,
                self.constraint,
                SolverConfig(
                    iterations=5,
                    schedule=LrSchedule("constant", eta=1e-3),
                    dual_variant="ascent",
                    zeta=0.1,
                    theta0=init_params(TabularSoftmax(15, 4)),
                    sampling=SamplingConfig(4, 10),
                ),
            )
        with pytest.raises(ValueError, match="sampling"):
            papd_run(
                self.cmdp,
                self.constraint,
                SolverConfig(
                    iterations=5,
                    schedule=LrSchedule("constant", eta=1e-3),
                    dual_variant="pid",
                    theta0=init_params(TabularSoftmax(15, 4)),
                ),
            )
        with pytest.raises(ValueError, match="PolicyParams"):
            papd_run(
                self.cmdp,
                self.constraint,
                SolverConfig(
                    iterations=5,
                    schedule=LrSchedule("constant", eta=1e-3),
                    dual_variant="pid",
                    theta0=np.zeros(60),
                    sampling=SamplingConfig(4, 10),
                ),
            )
        with pytest.raises(ValueError, match="practical or constant"):
            papd_run(
                self.cmdp,
                self.constraint,
                SolverConfig(
                    iterations=5,
                    schedule=LrSchedule("invlin-exact"),
                    dual_variant="pid",
                    theta0=init_params(TabularSoftmax(15, 4)),
                    sampling=SamplingConfig(4, 10),
                ),
            )
        with pytest.raises(ValueError, match="single-constraint"):
            papd_run(
                self.cmdp,
                ConstraintSpec(np.array([1.0, 2.0])),
                papd_cfg(iterations=5),
            )


class TestSolverConfigValidation:
    def test_bad_fields(self):
        sched = LrSchedule("constant", eta=1e-3)
        with pytest.raises(ValueError):
            SolverConfig(iterations=0, schedule=sched, zeta=0.1)
        with pytest.raises(ValueError):
            SolverConfig(iterations=5, schedule=sched, dual_variant="newton")
        with pytest.raises(ValueError):
            SolverConfig(iterations=5, schedule=sched, dual_variant="ascent")
        with pytest.raises(ValueError):
            SolverConfig(
                iterations=5, schedule=sched, zeta=0.1, algorithm="trpo"
            )
