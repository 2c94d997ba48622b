"""Constrained trajectory optimizer: DDP inner loop, augmented-Lagrangian outer loop.

One solve alternates two phases until tolerances or iteration caps are hit:

* inner phase: backward pass building a quadratic model of the cost-to-go
  (value Hessian A_k, gradient b_k) step by step from the terminal cost,
  extracting an affine feedback law u(x) = u_ref + h_k (x - x_ref) + j_k,
  then a forward rollout of the true nonlinear dynamics with a backtracking
  line search on the feedforward term;
* outer phase: slack, multiplier, and penalty updates for the inequality
  constraints, after which the inner phase resumes on the reshaped cost.

The backward pass keeps the second-order dynamics terms (the value-gradient
contractions against the step Jacobian derivatives); ``use_second_order``
switches them off for a Gauss-Newton (iLQR-style) pass. The control Hessian
is made positive definite with a Levenberg shift that grows on failure.

A solve is single-threaded and deterministic; independent solves may run
concurrently since all mutable state is owned per call.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import constraints as cons
from . import costs
from .errors import BackwardPassError, ConfigError
from .platoon import ControlTrajectory, PlatoonConfig, PlatoonState
from .terrain import SlopeProfile, grade_at


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances, caps, and schedules of the solver; all deterministic."""

    max_inner: int = 50
    max_outer: int = 8
    tol_cost_rel: float = 1e-6
    tol_violation: float = 1e-3
    reg_init: float = 1e-6
    reg_factor: float = 10.0
    reg_max: float = 1e6
    alpha_min: float = 1e-4
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    use_second_order: bool = True  # False drops the dynamics curvature terms (iLQR mode)
    rho_init: float = 10.0
    rho_factor: float = 10.0


@dataclass
class ValueModel:
    """Quadratic cost-to-go model at one step: 0.5 dx'A dx + b'dx + c."""

    hessian: np.ndarray
    gradient: np.ndarray
    constant: float


@dataclass
class FeedbackLaw:
    """Affine control update du = gain @ dx + feedforward."""

    gain: np.ndarray  # (N, 2N)
    feedforward: np.ndarray  # (N,)


@dataclass
class IterationRecord:
    """One accepted inner iteration."""

    outer: int
    cost: float
    aug_cost: float
    max_violation: float
    step_length: float
    regularization: float
    expected_decrease: float
    actual_decrease: float


@dataclass
class SolveReport:
    """Solver output: converged plan plus diagnostics."""

    states: PlatoonState
    controls: ControlTrajectory
    cost: costs.CostBreakdown
    iterations: list
    wall_time: float
    converged: bool
    max_violation: float
    targets: np.ndarray
    value_gradient0: np.ndarray = field(default=None, repr=False)

    @property
    def n_iterations(self) -> int:
        return len(self.iterations)


@dataclass
class BackwardPassResult:
    gains: np.ndarray  # (K, N, 2N)
    feedforward: np.ndarray  # (K, N)
    d1: float  # sum_k j'Q_u
    d2: float  # sum_k j'Q_uu j
    value0: ValueModel

    def expected_decrease(self, alpha: float) -> float:
        return -(alpha * self.d1 + 0.5 * alpha**2 * self.d2)

    def law(self, k: int) -> FeedbackLaw:
        return FeedbackLaw(gain=self.gains[k], feedforward=self.feedforward[k])


def _dynamics_coeffs(pi_traj: np.ndarray, accels: np.ndarray, ds: float):
    """Per-(step, vehicle) dynamics derivatives along a trajectory.

    pi_traj is (N, K+1); accels is (N, K). Returns (K, N) arrays:
    g = d pi'/d pi, fu = d pi'/d a, cxx = d2 pi'/d pi2, cux = d2 pi'/d a d pi.
    """
    pi = pi_traj[:, :-1].T  # (K, N)
    a = accels.T
    g = 1.0 - 3.0 * a * pi**2 * ds
    fu = -(pi**3) * ds
    cxx = -6.0 * a * pi * ds
    cux = -3.0 * pi**2 * ds
    return g, fu, cxx, cux


def backward_pass(
    states: PlatoonState,
    controls: ControlTrajectory,
    thetas: np.ndarray,
    config: PlatoonConfig,
    weights: costs.CostWeights,
    cset: cons.ConstraintSet,
    al: cons.ALState,
    targets: np.ndarray,
    regularization: float,
    use_second_order: bool = True,
) -> BackwardPassResult:
    """Build feedback laws for every step, sweeping the value model backward.

    Raises BackwardPassError when the shifted control Hessian fails its
    Cholesky factorization; the caller retries with a larger shift.
    """
    t_traj = states.arrival_times
    pi_traj = states.slownesses
    accels = controls.accels
    n = config.n_vehicles
    dim = 2 * n
    k_steps = accels.shape[1]
    ds = config.ds

    stage = costs.stage_derivatives_batch(
        t_traj[:, :-1], pi_traj[:, :-1], accels, thetas, config, weights
    )
    al_lx, al_lu, al_lxx, al_luu, al_lux = cons.al_derivative_batch(
        cset, al, pi_traj[:, :-1], accels, active_set=True
    )
    lx = stage["lx"] + al_lx
    lu = stage["lu"] + al_lu
    lxx = stage["lxx"] + al_lxx
    luu = stage["luu"] + al_luu
    lux = stage["lux"] + al_lux

    g, fu_c, cxx, cux = _dynamics_coeffs(pi_traj, accels, ds)
    ti = np.arange(n) * 2
    pj = ti + 1
    ai = np.arange(n)

    f_x = np.zeros((k_steps, dim, dim))
    f_x[:, ti, ti] = 1.0
    f_x[:, ti, pj] = ds
    f_x[:, pj, pj] = g
    f_u = np.zeros((k_steps, dim, n))
    f_u[:, pj, ai] = fu_c

    lf_x, lf_xx = costs.terminal_derivatives(
        t_traj[:, -1], config, weights, targets, pi_final=pi_traj[:, -1]
    )
    a_val = lf_xx.copy()
    b_val = lf_x.copy()
    c_val = 0.0

    gains = np.empty((k_steps, n, dim))
    ff = np.empty((k_steps, n))
    d1 = 0.0
    d2 = 0.0
    eye_n = np.eye(n)

    for k in range(k_steps - 1, -1, -1):
        fx = f_x[k]
        fu = f_u[k]
        a_fx = a_val @ fx
        q_x = lx[k] + fx.T @ b_val
        q_u = lu[k] + fu.T @ b_val
        q_xx = lxx[k] + fx.T @ a_fx
        q_uu = luu[k] + fu.T @ (a_val @ fu)
        q_ux = lux[k] + fu.T @ a_fx
        if use_second_order:
            # Value-gradient contractions with the dynamics curvature; the
            # only nonzero second derivatives sit on the slowness updates.
            q_xx[pj, pj] += b_val[pj] * cxx[k]
            q_ux[ai, pj] += b_val[pj] * cux[k]

        q_uu = 0.5 * (q_uu + q_uu.T) + regularization * eye_n
        try:
            np.linalg.cholesky(q_uu)
        except np.linalg.LinAlgError:
            raise BackwardPassError(
                f"control Hessian not positive definite at step {k} "
                f"with shift {regularization:g}"
            )
        h_k = -np.linalg.solve(q_uu, q_ux)
        j_k = -np.linalg.solve(q_uu, q_u)
        gains[k] = h_k
        ff[k] = j_k

        d1 += float(j_k @ q_u)
        d2 += float(j_k @ q_uu @ j_k)

        hq = h_k.T @ q_uu
        a_val = q_xx + hq @ h_k + q_ux.T @ h_k + h_k.T @ q_ux
        a_val = 0.5 * (a_val + a_val.T)
        b_val = q_x + hq @ j_k + q_ux.T @ j_k + h_k.T @ q_u
        c_val += 0.5 * float(j_k @ q_uu @ j_k) + float(j_k @ q_u)

    return BackwardPassResult(
        gains=gains,
        feedforward=ff,
        d1=d1,
        d2=d2,
        value0=ValueModel(hessian=a_val, gradient=b_val, constant=c_val),
    )


def forward_pass(
    states: PlatoonState,
    controls: ControlTrajectory,
    bp: BackwardPassResult,
    step_length: float,
    ds: float,
):
    """Roll the nonlinear dynamics under the affine law with feedforward scale alpha.

    Returns (new_times, new_slownesses, new_accels) or None when the rollout
    leaves the positive-slowness domain (the caller shrinks alpha).
    """
    t_ref = states.arrival_times
    pi_ref = states.slownesses
    a_ref = controls.accels
    n, k_steps = a_ref.shape
    t_new = np.empty_like(t_ref)
    pi_new = np.empty_like(pi_ref)
    a_new = np.empty_like(a_ref)
    t_new[:, 0] = t_ref[:, 0]
    pi_new[:, 0] = pi_ref[:, 0]
    dx = np.empty(2 * n)
    # overly aggressive trial steps can overflow the cubic term; those
    # rollouts are rejected by the finiteness check, so silence the warning
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(k_steps):
            dx[0::2] = t_new[:, k] - t_ref[:, k]
            dx[1::2] = pi_new[:, k] - pi_ref[:, k]
            u = a_ref[:, k] + bp.gains[k] @ dx + step_length * bp.feedforward[k]
            pi_k = pi_new[:, k]
            pi_next = pi_k - u * pi_k**3 * ds
            if not np.all(np.isfinite(pi_next)) or np.any(pi_next <= 0.0):
                return None
            a_new[:, k] = u
            t_new[:, k + 1] = t_new[:, k] + pi_k * ds
            pi_new[:, k + 1] = pi_next
    return t_new, pi_new, a_new


def solve(
    config: PlatoonConfig,
    weights: costs.CostWeights,
    profile: SlopeProfile,
    t0,
    pi0,
    options: SolverOptions = SolverOptions(),
    targets=None,
    initial_controls=None,
    start_position: float = 0.0,
) -> SolveReport:
    """Plan the platoon over ``config.horizon_steps`` spatial steps.

    ``t0``/``pi0`` are per-vehicle entry times and slownesses at the start
    position. ``targets`` overrides the per-vehicle terminal arrival targets
    (default: entry-anchored schedule at the target speed). The report flags
    convergence honestly; a non-converged solve still returns the best
    trajectory found plus its iteration history.
    """
    start = time.perf_counter()
    t0 = np.asarray(t0, dtype=float)
    pi0 = np.asarray(pi0, dtype=float)
    n = config.n_vehicles
    if t0.shape != (n,) or pi0.shape != (n,):
        raise ConfigError(f"initial state must have shape ({n},)")
    if np.any(pi0 <= 0):
        raise ConfigError("initial slowness must be positive")
    k_steps = config.horizon_steps
    ds = config.ds

    grid = start_position + ds * np.arange(k_steps)
    thetas = grade_at(profile, np.minimum(grid, profile.total_length))
    if targets is None:
        targets = costs.schedule_targets(config, t0)
    targets = np.asarray(targets, dtype=float)

    if initial_controls is None:
        accels = np.zeros((n, k_steps))
    else:
        accels = np.array(initial_controls, dtype=float)
        if accels.shape != (n, k_steps):
            raise ConfigError(f"initial controls must have shape ({n}, {k_steps})")

    cset = cons.ConstraintSet.from_config(config)
    al = cons.ALState.initial(k_steps, cset.n_constraints, options.rho_init)

    # Reference rollout under the initial controls.
    times = np.empty((n, k_steps + 1))
    slows = np.empty((n, k_steps + 1))
    times[:, 0] = t0
    slows[:, 0] = pi0
    for k in range(k_steps):
        pi_k = slows[:, k]
        times[:, k + 1] = times[:, k] + pi_k * ds
        pi_next = pi_k - accels[:, k] * pi_k**3 * ds
        if np.any(pi_next <= 0):
            raise ConfigError("initial controls are infeasible (slowness left the domain)")
        slows[:, k + 1] = pi_next

    def eval_true(t_arr, pi_arr, a_arr):
        true_cost, breakdown = costs.trajectory_cost(
            t_arr, pi_arr, a_arr, thetas, config, weights, targets
        )
        e = cons.evaluate(cset, pi_arr[:, :-1], a_arr)
        return true_cost, breakdown, e

    def penalty_of(e, al_state):
        c = e + al_state.slack
        return float(np.sum(al_state.lam * c) + 0.5 * np.sum(al_state.rho * c * c))

    true_cost, breakdown, e_vals = eval_true(times, slows, accels)
    # Slacks track the trajectory: s = max(0, -lam/rho - e) zeroes the penalty
    # on satisfied constraints, so only violations shape the inner problem.
    al = cons.update_slack(al, e_vals)
    aug_cost = true_cost + penalty_of(e_vals, al)

    iterations: list = []
    reg = options.reg_init
    converged = False
    value0 = None

    for outer in range(options.max_outer):
        inner_converged = False
        inner_count = 0
        while inner_count < options.max_inner:
            state_obj = PlatoonState(arrival_times=times, slownesses=slows)
            ctrl_obj = ControlTrajectory(accels=accels)
            bp = None
            while True:
                try:
                    bp = backward_pass(
                        state_obj,
                        ctrl_obj,
                        thetas,
                        config,
                        weights,
                        cset,
                        al,
                        targets,
                        reg,
                        options.use_second_order,
                    )
                    break
                except BackwardPassError:
                    reg = reg * options.reg_factor if reg > 0 else options.reg_init
                    if reg > options.reg_max:
                        bp = None
                        break
            if bp is None:
                break
            value0 = bp.value0

            expected_full = bp.expected_decrease(1.0)
            scale = max(1.0, abs(aug_cost))
            if expected_full <= options.tol_cost_rel * scale:
                inner_converged = True
                break

            alpha = 1.0
            accepted = False
            while alpha >= options.alpha_min:
                result = forward_pass(state_obj, ctrl_obj, bp, alpha, ds)
                if result is not None:
                    t_new, pi_new, a_new = result
                    new_true, new_breakdown, new_e = eval_true(t_new, pi_new, a_new)
                    new_aug = new_true + penalty_of(new_e, al)
                    expected = bp.expected_decrease(alpha)
                    actual = aug_cost - new_aug
                    if actual < options.armijo_c * max(expected, 0.0) or actual <= 0.0:
                        # Fit the measured decrease with a parabola through the
                        # origin slope and jump near its maximizer instead of
                        # halving blindly; the plain backtrack is the fallback.
                        slope = -bp.d1
                        curv = 2.0 * (slope * alpha - actual) / alpha**2
                        if curv > 0.0 and slope > 0.0:
                            alpha_star = slope / curv
                            if (
                                options.alpha_min <= alpha_star < 0.9 * alpha
                                and alpha_star > alpha * options.backtrack_factor
                            ):
                                alpha = alpha_star
                                continue
                    if actual >= options.armijo_c * max(expected, 0.0) and actual > 0.0:
                        times, slows, accels = t_new, pi_new, a_new
                        true_cost, breakdown, e_vals = new_true, new_breakdown, new_e
                        al = cons.update_slack(al, e_vals)
                        aug_cost = true_cost + penalty_of(e_vals, al)
                        iterations.append(
                            IterationRecord(
                                outer=outer,
                                cost=true_cost,
                                aug_cost=aug_cost,
                                max_violation=cons.max_violation(e_vals),
                                step_length=alpha,
                                regularization=reg,
                                expected_decrease=expected,
                                actual_decrease=actual,
                            )
                        )
                        accepted = True
                        break
                alpha *= options.backtrack_factor
            if accepted:
                inner_count += 1
                reg = max(options.reg_init, reg / options.reg_factor)
                if iterations[-1].actual_decrease <= options.tol_cost_rel * max(
                    1.0, abs(aug_cost)
                ):
                    inner_converged = True
                    break
            else:
                reg = reg * options.reg_factor if reg > 0 else options.reg_init
                if reg > options.reg_max:
                    inner_converged = bp.expected_decrease(1.0) <= 10 * options.tol_cost_rel * scale
                    break

        violation = cons.max_violation(e_vals)
        if inner_converged and violation <= options.tol_violation:
            converged = True
            break

        al = cons.update_slack(al, e_vals)
        al = cons.update_multipliers(al, e_vals)
        al = cons.escalate_penalty(al, e_vals, options.rho_factor, options.tol_violation)
        al = cons.update_slack(al, e_vals)
        aug_cost = true_cost + penalty_of(e_vals, al)

    wall = time.perf_counter() - start
    return SolveReport(
        states=PlatoonState(arrival_times=times, slownesses=slows),
        controls=ControlTrajectory(accels=accels),
        cost=breakdown,
        iterations=iterations,
        wall_time=wall,
        converged=converged,
        max_violation=cons.max_violation(e_vals),
        targets=targets,
        value_gradient0=None if value0 is None else value0.gradient,
    )


@dataclass
class RecedingRun:
    """Stitched output of a receding-horizon execution."""

    states: PlatoonState
    controls: ControlTrajectory
    exec_times: list  # seconds per window solve
    windows: list  # (start_position, window_length) per execution
    all_converged: bool


def receding_horizon_run(
    config: PlatoonConfig,
    weights: costs.CostWeights,
    profile: SlopeProfile,
    t0,
    pi0,
    options: SolverOptions,
    window_m: float,
    replan_m: float,
    route_length: float | None = None,
    max_executions: int | None = None,
    state_hook=None,
) -> RecedingRun:
    """Repeatedly solve a sliding window and execute its first segment.

    The platoon advances ``replan_m`` meters per execution; each window is
    planned against the entry-anchored arrival schedule so lateness is never
    silently forgiven. ``state_hook(position, t, pi) -> (t, pi)`` lets a
    caller inject boundary perturbations between executions. Per-execution
    wall time covers the window solve only.
    """
    if replan_m > window_m:
        raise ConfigError("replan interval cannot exceed the window length")
    ds = config.ds
    route_length = config.route_length if route_length is None else float(route_length)
    t_cur = np.asarray(t0, dtype=float).copy()
    pi_cur = np.asarray(pi0, dtype=float).copy()
    entry_times = t_cur.copy()
    n = config.n_vehicles

    exec_times = []
    windows = []
    all_converged = True
    times_out = [t_cur.copy()]
    slows_out = [pi_cur.copy()]
    accel_cols = []
    warm = None
    s0 = 0.0
    while s0 < route_length - 1e-9:
        w_eff = min(window_m, route_length - s0)
        kw = max(1, int(round(w_eff / ds)))
        w_eff = kw * ds
        if state_hook is not None:
            t_cur, pi_cur = state_hook(s0, t_cur, pi_cur)
        win_cfg = PlatoonConfig(
            vehicles=config.vehicles,
            headway=config.headway,
            target_speed=config.target_speed,
            speed_limit=config.speed_limit,
            gravity=config.gravity,
            rolling_coeff=config.rolling_coeff,
            drag_coeff=config.drag_coeff,
            ds=ds,
            horizon_steps=kw,
            speed_floor=config.speed_floor,
        )
        targets = entry_times + (s0 + w_eff) / config.target_speed
        if warm is not None and warm.shape[1] >= kw:
            init = warm[:, :kw]
        elif warm is not None:
            init = np.concatenate(
                [warm, np.zeros((n, kw - warm.shape[1]))], axis=1
            )
        else:
            init = None
        tic = time.perf_counter()
        report = solve(
            win_cfg,
            weights,
            profile,
            t_cur,
            pi_cur,
            options,
            targets=targets,
            initial_controls=init,
            start_position=s0,
        )
        exec_times.append(time.perf_counter() - tic)
        windows.append((s0, w_eff))
        all_converged = all_converged and report.converged

        exec_steps = kw if s0 + w_eff >= route_length - 1e-9 else min(
            kw, max(1, int(round(replan_m / ds)))
        )
        accels = report.controls.accels
        accel_cols.append(accels[:, :exec_steps])
        times_exec = report.states.arrival_times[:, 1 : exec_steps + 1]
        slows_exec = report.states.slownesses[:, 1 : exec_steps + 1]
        times_out.append(times_exec)
        slows_out.append(slows_exec)
        t_cur = times_exec[:, -1].copy()
        pi_cur = slows_exec[:, -1].copy()
        warm = accels[:, exec_steps:]
        s0 += exec_steps * ds
        if max_executions is not None and len(exec_times) >= max_executions:
            break

    times = np.column_stack([times_out[0][:, None]] + times_out[1:])
    slows = np.column_stack([slows_out[0][:, None]] + slows_out[1:])
    accels = np.column_stack(accel_cols) if accel_cols else np.zeros((n, 0))
    return RecedingRun(
        states=PlatoonState(arrival_times=times, slownesses=slows),
        controls=ControlTrajectory(accels=accels),
        exec_times=exec_times,
        windows=windows,
        all_converged=all_converged,
    )
