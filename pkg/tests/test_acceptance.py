"""End-to-end acceptance criteria.

Each test prints one ``criterion N: PASS|FAIL`` line; the lines are repeated in
the terminal summary.  Run alone with ``pytest tests/test_acceptance.py -s``.
"""
import functools
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from qkinetic.collision import CollisionWorkspace
from qkinetic.core import ModelParams, SpatialGrid, SphereQuadrature, VelocityGrid
from qkinetic.diagnostics import defect_moments, e_functional, entropy_H, taylor_defect
from qkinetic.solver import SolverConfig, perturbation, solve_window, suggest_horizon, time_march
from qkinetic.verifier import (
    check_annihilation, check_contraction, check_decomposition, check_delta_zero_limit,
    check_gamma_estimate, check_lemma_2_3, check_lemma_2_5, check_splitting, make_rng,
    random_admissible_perturbation,
)

pytestmark = pytest.mark.acceptance

SPHERE = SphereQuadrature.product_rule(4, 8)
V_MAX = 6.0
HOMOG = SpatialGrid()
DELTAS = (0.0, 0.5, 1.0)
RHOS = (0.5, 1.0, 2.0)


def report(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


def criterion(number):
    """Record a FAIL line when the body raises before reporting."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            before = len(ACCEPTANCE_LINES)
            try:
                return fn(*args, **kwargs)
            except Exception as exc:
                if len(ACCEPTANCE_LINES) == before:
                    report(number, False, f"raised {type(exc).__name__}: {exc}")
                raise

        return run

    return wrap


def bump(ws, amplitude=0.3, center=(1.0, 0.0, 0.0)):
    """mu (1 + a exp(-|v - c|^2)), inside the Pauli cap for a <= 1 at rho = 1."""
    v = ws.vgrid.nodes
    return ws.tables.mu * (1 + amplitude * np.exp(-np.sum((v - np.array(center)) ** 2, axis=1)))


@pytest.fixture(scope="module")
def ws13():
    return CollisionWorkspace(VelocityGrid(V_MAX, 13), SPHERE, ModelParams(delta=1.0))


# ---------------------------------------------------------------- 1

@criterion(1)
def test_criterion_1_equilibrium_annihilation():
    start = time.perf_counter()
    base = CollisionWorkspace(VelocityGrid(V_MAX, 13), SPHERE, ModelParams())
    worst = 0.0
    ok = True
    for d in DELTAS:
        for r in RHOS:
            rep = check_annihilation(base.with_params(ModelParams(delta=d, rho=r)), tol=5e-13)
            worst = max(worst, rep.worst_ratio)
            ok &= rep.passed
    elapsed = time.perf_counter() - start
    passed = ok and elapsed <= 60.0
    report(1, passed, f"worst |C(mu)|/scale = {worst:.2e} (tol 5e-13), {elapsed:.1f} s (limit 60 s)")
    assert passed


# ---------------------------------------------------------------- 2

@criterion(2)
def test_criterion_2_decomposition_identity(ws13):
    start = time.perf_counter()
    worst = {}
    for d in (0.0, 1.0):
        rep = check_decomposition(ws13.with_params(ModelParams(delta=d)), count=20, seed=0,
                                  tol=1e-10)
        worst[d] = rep.worst_ratio
    elapsed = time.perf_counter() - start
    passed = max(worst.values()) <= 1e-10 and elapsed <= 300.0
    report(2, passed, f"worst residual {max(worst.values()):.2e} (tol 1e-10) on 20 fields x "
                      f"delta 0, 1 at n=13, {elapsed:.1f} s (limit 300 s)")
    assert passed


# ---------------------------------------------------------------- 3

@criterion(3)
def test_criterion_3_pointwise_bounds():
    start = time.perf_counter()
    violations = 0
    worst = 0.0
    for d in DELTAS:
        for r in RHOS:
            rep = check_lemma_2_3(ModelParams(delta=d, rho=r), samples=100_000, seed=0, rtol=1e-12)
            violations += sum(v for k, v in rep.details["violations"].items()
                              if k != "second_literal")
            worst = max(worst, rep.worst_ratio)
    elapsed = time.perf_counter() - start
    passed = violations == 0 and elapsed <= 60.0
    report(3, passed, f"{violations} violations over 9 x 1e5 triples, worst ratio {worst:.6f}, "
                      f"{elapsed:.1f} s (limit 60 s)")
    assert passed


# ---------------------------------------------------------------- 4

@criterion(4)
def test_criterion_4_splitting(ws13):
    worst = 0.0
    low = np.inf
    for d in DELTAS:
        rep = check_splitting(ws13.with_params(ModelParams(delta=d)), count=3, seed=0, tol=1e-12)
        worst = max(worst, rep.worst_ratio)
        low = min(low, rep.details["min_part"])
    passed = worst <= 1e-12 and low >= 0.0
    report(4, passed, f"worst nodewise residual {worst:.2e} (tol 1e-12), smallest part {low:.2e}")
    assert passed


# ---------------------------------------------------------------- 5, 6, 7 (projection on)

@pytest.fixture(scope="module")
def trajectory(ws13):
    F0 = bump(ws13)[None]
    nodes = []

    def on_window(t, F, rep, rec):
        nodes.append(rep.iterations * cfg.substeps * F.values.size)

    cfg = SolverConfig(n_windows=10, conservative=True)
    start = time.perf_counter()
    traj = time_march(F0, ws13, None, cfg, on_window=on_window)
    return {"traj": traj, "elapsed": time.perf_counter() - start, "nodes": sum(nodes),
            "cfg": cfg}


@criterion(5)
def test_criterion_5_positivity(trajectory):
    traj = trajectory["traj"]
    events = traj[-1][1].clamp_events
    inside = all(F.values.min() >= 0.0 and F.values.max() <= 1.0 for _, F, _ in traj)
    frac = events / trajectory["nodes"]
    elapsed = trajectory["elapsed"]
    passed = inside and frac <= 1e-3 and elapsed <= 900.0
    report(5, passed, f"{events} clamp events over {trajectory['nodes']} iterate nodes "
                      f"({frac:.1e}, limit 1e-3), {len(traj) - 1} windows in {elapsed:.1f} s "
                      f"(limit 900 s)")
    assert passed


@criterion(6)
def test_criterion_6_entropy(ws13, trajectory):
    t = ws13.tables
    grids = (ws13.vgrid, HOMOG)
    fields = [F.values for _, F, _ in trajectory["traj"]]
    e0 = e_functional(fields[0], t, grids)
    H = [entropy_H(F, t, grids) for F in fields]
    rises = np.diff(H)
    taylor = max(taylor_defect(F, t, grids) for F in fields)
    passed = bool(np.all(rises <= 1e-8 * e0)) and taylor <= e0
    report(6, passed, f"largest window change of H {rises.max():.2e} (allowed {1e-8 * e0:.2e}), "
                      f"total drop {H[0] - H[-1]:.2e}, max taylor defect {taylor:.3e} <= "
                      f"E(F0) = {e0:.3e}")
    assert passed


def _moments(F, ws):
    M, J, E = defect_moments(np.atleast_2d(F), ws.tables, (ws.vgrid, HOMOG))
    return np.concatenate([[M], J, [E]])


@criterion(7)
def test_criterion_7_conservation(ws13, trajectory):
    m = np.array([_moments(F.values, ws13) for _, F, _ in trajectory["traj"]])
    on_worst = float(np.max(np.abs(np.diff(m, axis=0))))

    # projection off: one window of fixed length below every suggested horizon
    dt = 1e-6
    cfg = SolverConfig(dt=dt)
    sizes = (9, 13, 17)
    defects = []
    for n in sizes:
        ws = CollisionWorkspace(VelocityGrid(V_MAX, n), SPHERE, ModelParams(delta=1.0))
        F0 = bump(ws)[None]
        final, _, _ = solve_window(F0, dt, ws, None, cfg)
        defects.append(np.abs(_moments(final.values, ws) - _moments(F0, ws)))
    defects = np.array(defects)
    h = np.array([2 * V_MAX / (n - 1) for n in sizes])
    # components already at the conserving tolerance carry no order information
    live = np.all(defects > 1e-12, axis=0)
    orders = [float(np.polyfit(np.log(h), np.log(defects[:, k]), 1)[0])
              for k in np.flatnonzero(live)]
    names = np.array(["M", "Jx", "Jy", "Jz", "E"])[live]
    decreasing = bool(np.all(np.diff(defects[:, live], axis=0) < 0))
    off_ok = bool(orders) and min(orders) >= 1.0 and decreasing
    passed = on_worst <= 1e-12 and off_ok
    order_txt = ", ".join(f"{k} {o:.2f}" for k, o in zip(names, orders))
    report(7, passed, f"projection on: max per-window |dM|,|dJ|,|dE| {on_worst:.1e} (tol 1e-12); "
                      f"projection off orders over n=9,13,17: {order_txt}")
    assert passed


# ---------------------------------------------------------------- 8

@criterion(8)
def test_criterion_8_contraction():
    base = CollisionWorkspace(VelocityGrid(V_MAX, 9), SPHERE, ModelParams())
    rng = make_rng(0, 33)
    results = {}
    for d in (0.0, 1.0):
        ws = base.with_params(ModelParams(delta=d))
        seeds = [ws.tables.mu + ws.tables.mu_bar_sqrt * random_admissible_perturbation(ws, rng),
                 bump(ws)]
        runs = {1.0: [], 0.5: [], 0.25: []}
        for F0 in seeds:
            H = suggest_horizon(perturbation(F0, ws.tables), ws.params, ws.vgrid, 1.0 / 16.0)
            for factor in runs:
                runs[factor].append(solve_window(F0[None], H * factor, ws)[1])
        results[d] = check_contraction(runs)
    passed = all(r.passed for r in results.values())
    detail = "; ".join(
        f"delta {d}: max ratio {r.worst_ratio:.2e}, medians "
        + "/".join(f"{r.details['medians'][f]:.2e}" for f in (1.0, 0.5, 0.25))
        for d, r in results.items())
    report(8, passed, detail)
    assert passed


# ---------------------------------------------------------------- 9

@criterion(9)
def test_criterion_9_classical_limit():
    rep = check_delta_zero_limit(VelocityGrid(V_MAX, 13), SPHERE, ModelParams())
    slopes = [f["slope"] for f in rep.details["fields"]]
    report(9, rep.passed, "log-log slopes " + ", ".join(f"{s:.3f}" for s in slopes)
           + " (range 0.8 to 1.2) at n=13")
    assert rep.passed


# ---------------------------------------------------------------- 10

@criterion(10)
def test_criterion_10_fitted_constant_stability():
    parts = []
    ok = True
    for d in (0.0, 1.0):
        p = ModelParams(delta=d)
        g = check_gamma_estimate(p, SPHERE, p=2.0, count=4, seed=0, n_base=9, n_fine=17,
                                 v_max=V_MAX)
        lin = check_lemma_2_5(p, SPHERE, n_base=9, n_fine=17, v_max=V_MAX)
        ok &= g.passed and lin.passed
        ch = lin.details["relative_change"]
        parts.append(f"delta {d}: nonlinear grid {g.details['grid_change']:.1%} samples "
                     f"{g.details['sample_change']:.1%}, nu {ch['nu']:.1%}, K^m {ch['km']:.1%}")
    report(10, ok, "; ".join(parts) + " (limit 20%)")
    assert ok
