"""Periodic orbits by single shooting: location, Floquet stability,
pseudo-arclength continuation, and period-doubling branch switching.

A cycle is anchored on the Poincare section V(0) = V_anchor with dV/dt > 0
and found by Newton iteration on the shooting residual
[flow_T(x0) - x0; V(0) - V_anchor].  The flow-map Jacobian (monodromy
matrix) and its parameter sensitivity are integrated alongside the state
via the variational equations, using the same stiff solver and the model's
analytic Jacobian.  Multiplier test functions along a continuation branch
detect period doubling (a real multiplier through -1, sign change of
det(M + I)) and folds of cycles (multiplier near +1 at a parameter fold of
the branch).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.integrate import solve_ivp

from .continuation import BifurcationPoint, ContinuationError, V_SCALE
from .integrator import SolverConfig, find_crossings, integrate


class CycleError(RuntimeError):
    """Shooting failure, degenerate period, or variational breakdown."""


@dataclass(frozen=True)
class ShootingSettings:
    tol: float = 1e-8          # scaled residual tolerance
    max_newton: int = 30
    rtol: float = 1e-10        # variational integration tolerance
    atol: float = 1e-12
    min_period: float = 1.0    # ms; below this the cycle is degenerate


@dataclass(frozen=True)
class CycleContinuationSettings:
    ds0: float = 1e-3
    ds_min: float = 1e-9
    ds_max: float = 5e-3
    max_steps: int = 2000
    param_tol: float = 1e-7
    shooting: ShootingSettings = field(default_factory=ShootingSettings)


@dataclass(frozen=True)
class LimitCycle:
    param_name: str
    param_value: float
    period: float                    # ms
    anchor: np.ndarray               # cycle state on the section
    multipliers: np.ndarray          # complex Floquet multipliers
    stability: str                   # stable | unstable
    residual: float                  # scaled shooting residual
    condition: float                 # monodromy condition number
    mesh_times: np.ndarray = field(default=None, repr=False)
    mesh_states: np.ndarray = field(default=None, repr=False)

    @property
    def max_nontrivial(self):
        """Largest |mu| after removing the trivial multiplier."""
        mags = np.abs(self.multipliers)
        i = int(np.argmin(np.abs(self.multipliers - 1.0)))
        return float(np.max(np.delete(mags, i))) if len(mags) > 1 else 0.0

    @property
    def V_range(self):
        V = self.mesh_states[0]
        return float(V.min()), float(V.max())


def _scales(dim):
    s = np.ones(dim)
    s[0] = V_SCALE
    return s


def _flow(model, pvals, x0, T, settings, with_param=None):
    """Flow map with sensitivities via the variational equations.

    Returns (xT, M, dxT_dp): state after time T, monodromy d(xT)/d(x0),
    and, when ``with_param`` names a parameter, d(xT)/dp (else None).
    """
    dim = model.dim
    rhs = model._rhs_scalar_fn
    jac = model._jac_scalar_fn
    dp_fn = None
    if with_param is not None:
        if with_param not in model._dv_dparam_fns:
            # compile via the public API at a guaranteed-valid state
            model.drhs_dparam(model.steady_state(-80.0), None, with_param)
        dp_fn = model._dv_dparam_fns[with_param]

    n_aug = dim + dim * dim + (dim if dp_fn else 0)

    def f(t, z):
        x = z[:dim]
        J = np.array(jac(*x, *pvals, 0.0)).reshape(dim, dim)
        out = np.empty(n_aug)
        out[:dim] = rhs(*x, *pvals, 0.0)
        Y = z[dim:dim + dim * dim].reshape(dim, dim)
        out[dim:dim + dim * dim] = (J @ Y).ravel()
        if dp_fn:
            xi = z[dim + dim * dim:]
            out[dim + dim * dim:] = J @ xi + np.array(dp_fn(*x, *pvals, 0.0))
        return out

    z0 = np.concatenate([x0, np.eye(dim).ravel(),
                         np.zeros(dim if dp_fn else 0)])
    atol = np.full(n_aug, max(settings.atol, 1e-12))
    atol[0] = settings.atol
    sol = solve_ivp(f, (0.0, T), z0, method="LSODA", rtol=settings.rtol,
                    atol=atol, dense_output=False)
    if sol.status != 0 or not np.all(np.isfinite(sol.y[:, -1])):
        raise CycleError(f"variational integration failed: {sol.message}")
    zT = sol.y[:, -1]
    xT = zT[:dim]
    M = zT[dim:dim + dim * dim].reshape(dim, dim)
    dxT_dp = zT[dim + dim * dim:] if dp_fn else None
    return xT, M, dxT_dp


def _classify(multipliers):
    mags = np.abs(multipliers)
    i = int(np.argmin(np.abs(multipliers - 1.0)))
    nontrivial = np.delete(mags, i)
    return "stable" if np.all(nontrivial < 1.0) else "unstable"


def find_limit_cycle(model, params, state_guess, period_guess,
                     settings=None, param_name="", param_value=float("nan"),
                     _pvals=None):
    """Newton shooting from (state_guess, period_guess); see module doc."""
    settings = settings or ShootingSettings()
    if _pvals is None:
        p = model.merge_params(params)
        pvals = tuple(p[k] for k in model.param_names)
    else:
        pvals = tuple(_pvals)
    dim = model.dim
    x0 = np.asarray(state_guess, dtype=float).copy()
    T = float(period_guess)
    if T < settings.min_period:
        raise CycleError(f"degenerate period guess {T} ms")
    # anchor on an upward crossing: nudge the guess until dV/dt > 0
    if model._rhs_scalar_fn(*x0, *pvals, 0.0)[0] <= 0:
        raise CycleError("anchor must sit on an upward V crossing "
                         "(dV/dt > 0 at the guess)")
    V_anchor = x0[0]
    s = _scales(dim)
    best = np.inf
    xT = M = None
    for _ in range(settings.max_newton):
        xT, M, _ = _flow(model, pvals, x0, T, settings)
        fT = np.array(model._rhs_scalar_fn(*xT, *pvals, 0.0))
        r = np.concatenate([xT - x0, [x0[0] - V_anchor]])
        res = float(np.max(np.abs(r) / np.concatenate([s, [s[0]]])))
        best = min(best, res)
        if res < settings.tol:
            break
        A = np.zeros((dim + 1, dim + 1))
        A[:dim, :dim] = M - np.eye(dim)
        A[:dim, dim] = fT
        A[dim, 0] = 1.0
        try:
            step = np.linalg.solve(A, r)
        except np.linalg.LinAlgError as err:
            raise CycleError(f"singular shooting system: {err}") from err
        # damp wild steps to keep the iteration in the basin
        scale = max(np.max(np.abs(step[:dim]) / s), abs(step[dim]) / T)
        if scale > 0.5:
            step *= 0.5 / scale
        x0 = x0 - step[:dim]
        T = T - step[dim]
        if T < settings.min_period:
            raise CycleError(f"period collapsed to {T:.3g} ms")
    else:
        raise CycleError(f"shooting Newton stagnated; best residual {best:.3e}")

    multipliers = np.linalg.eigvals(M)
    mesh = _sample_cycle(model, pvals, x0, T, settings)
    return LimitCycle(
        param_name=param_name, param_value=param_value, period=T,
        anchor=x0, multipliers=multipliers,
        stability=_classify(multipliers), residual=res,
        condition=float(np.linalg.cond(M)),
        mesh_times=mesh[0], mesh_states=mesh[1])


def _sample_cycle(model, pvals, x0, T, settings, n=400):
    ts = np.linspace(0.0, T, n)
    rhs = model._rhs_scalar_fn
    jac = model._jac_scalar_fn
    dim = model.dim
    sol = solve_ivp(lambda t, y: rhs(*y, *pvals, 0.0), (0.0, T), x0,
                    method="LSODA",
                    jac=lambda t, y: np.array(jac(*y, *pvals, 0.0)
                                              ).reshape(dim, dim),
                    rtol=settings.rtol, atol=settings.atol, t_eval=ts)
    if sol.status != 0:
        raise CycleError(f"cycle sampling failed: {sol.message}")
    return ts, sol.y


def monodromy(model, params, lc, settings=None):
    """Recompute the Floquet multipliers of a converged cycle."""
    settings = settings or ShootingSettings()
    p = model.merge_params(params)
    pvals = tuple(p[k] for k in model.param_names)
    _, M, _ = _flow(model, pvals, lc.anchor, lc.period, settings)
    return np.linalg.eigvals(M), float(np.linalg.cond(M))


def cycle_guess_from_trajectory(traj, discard=0.5):
    """(state, period) guess from the settled tail of a trajectory.

    Uses upward crossings of the mid-range voltage level in the last
    (1 - discard) fraction of the run.
    """
    t0 = traj.times[0] + discard * (traj.times[-1] - traj.times[0])
    V = traj.states[0]
    level = 0.5 * (V.min() + V.max())
    ups = [u for u in find_crossings(traj, level, "up") if u > t0]
    if len(ups) < 2:
        raise CycleError("trajectory has fewer than 2 settled upstrokes")
    period = ups[-1] - ups[-2]
    return traj.sample(ups[-2]), period


@dataclass
class CycleBranch:
    param_name: str
    cycles: list
    bifurcations: list
    settings: CycleContinuationSettings
    truncated: bool = False

    def to_json(self, path):
        doc = {
            "format": "cardiodyn-cycle-branch/1",
            "param": self.param_name,
            "truncated": self.truncated,
            "points": [
                {
                    "param": lc.param_value,
                    "period": lc.period,
                    "stability": lc.stability,
                    "max_multiplier": lc.max_nontrivial,
                    "anchor": [float(v) for v in lc.anchor],
                }
                for lc in self.cycles
            ],
            "bifurcations": [
                {
                    "kind": b.kind,
                    "param": b.param_value,
                    "test_residual": b.test_residual,
                    "auxiliary": b.auxiliary,
                }
                for b in self.bifurcations
            ],
        }
        with open(path, "w") as f:
            json.dump(doc, f, indent=1, sort_keys=True)
            f.write("\n")

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["param", "V_min", "V_max", "T", "stability"])
            for lc in self.cycles:
                vmin, vmax = lc.V_range
                w.writerow([repr(lc.param_value), repr(vmin), repr(vmax),
                            repr(lc.period), lc.stability])


def _pd_test(lc):
    """det(M + I): changes sign when a real multiplier crosses -1."""
    return float(np.real(np.prod(lc.multipliers + 1.0)))


def _correct_cycle(model, pvals_of, bif_param, x_pred, T_pred, p_pred,
                   tangent, ds, z_ref, settings, sh):
    """Newton on [shooting residual; phase; arclength] in (x0, T, p)."""
    dim = model.dim
    s = _scales(dim)
    w = np.concatenate([s, [max(T_pred, 1.0), 1.0]])  # z scaling
    x0, T, p = x_pred.copy(), float(T_pred), float(p_pred)
    V_anchor = x_pred[0]
    best = np.inf
    stalled = 0
    for _ in range(sh.max_newton):
        pv = pvals_of(p)
        xT, M, dxdp = _flow(model, pv, x0, T, sh, with_param=bif_param)
        fT = np.array(model._rhs_scalar_fn(*xT, *pv, 0.0))
        z = np.concatenate([x0, [T, p]])
        r = np.concatenate([
            xT - x0,
            [x0[0] - V_anchor],
            [np.dot((z - z_ref) / w, tangent) - ds],
        ])
        res = float(np.max(np.abs(r[:dim]) / s))
        if res < sh.tol and abs(r[dim]) < sh.tol * s[0] \
                and abs(r[dim + 1]) < 1e-10:
            return x0, T, p, M
        if res < 0.9 * best:
            best, stalled = res, 0
        else:
            stalled += 1
            if stalled >= 5:
                return None
        A = np.zeros((dim + 2, dim + 2))
        A[:dim, :dim] = M - np.eye(dim)
        A[:dim, dim] = fT
        A[:dim, dim + 1] = dxdp
        A[dim, 0] = 1.0
        A[dim + 1, :] = tangent / w
        try:
            step = np.linalg.solve(A, r)
        except np.linalg.LinAlgError:
            return None
        # damp wild corrector steps (state, period, and parameter)
        scale = max(np.max(np.abs(step[:dim]) / s), abs(step[dim]) / T,
                    abs(step[dim + 1]) / max(abs(p_pred), 1e-3))
        if scale > 0.5:
            step *= 0.5 / scale
        x0 = x0 - step[:dim]
        T = T - step[dim]
        p = p - step[dim + 1]
        if T < sh.min_period or not np.all(np.isfinite(x0)):
            return None
    return None


def continue_limit_cycles(model, bif_param, p_range, start, params=None,
                          settings=None, direction=None):
    """Trace a cycle branch from a converged ``start`` cycle over p_range.

    Secant predictor in z = (x0, T, p) with pseudo-arclength corrector.
    Detects PD (det(M + I) sign change) and LPC (parameter fold with a
    multiplier near +1).  Returns a :class:`CycleBranch`.
    """
    settings = settings or CycleContinuationSettings()
    sh = settings.shooting
    base = model.merge_params(params)
    idx = model.param_names.index(bif_param)
    pv0 = [base[k] for k in model.param_names]

    def pvals_of(p):
        pv = list(pv0)
        pv[idx] = p
        return tuple(pv)

    p_lo, p_hi = sorted(map(float, p_range))
    dim = model.dim
    s = _scales(dim)

    def as_cycle(x0, T, p, M):
        mus = np.linalg.eigvals(M)
        mesh = _sample_cycle(model, pvals_of(p), x0, T, sh)
        return LimitCycle(
            param_name=bif_param, param_value=p, period=T, anchor=x0,
            multipliers=mus, stability=_classify(mus), residual=0.0,
            condition=float(np.linalg.cond(M)),
            mesh_times=mesh[0], mesh_states=mesh[1])

    p0 = float(start.param_value)
    if not p_lo <= p0 <= p_hi:
        raise ValueError("start cycle outside p_range")
    lc0 = find_limit_cycle(model, None, start.anchor, start.period,
                           settings=sh, param_name=bif_param, param_value=p0,
                           _pvals=pvals_of(p0))
    # second point for the secant direction: small parameter step toward
    # the far end of the range
    dp = 1e-4 * max(abs(p0), 1.0)
    if direction is None:
        direction = 1.0 if (p_hi - p0) >= (p0 - p_lo) else -1.0
    p1 = p0 + float(direction) * dp
    lc1 = find_limit_cycle(model, None, lc0.anchor, lc0.period, settings=sh,
                           param_name=bif_param, param_value=p1,
                           _pvals=pvals_of(p1))

    def zvec(lc):
        return np.concatenate([lc.anchor, [lc.period, lc.param_value]])

    cycles = [lc0, lc1]
    bifs = []
    truncated = False
    ds = settings.ds0
    monodromies = {0: None, 1: None}

    def weights(T):
        return np.concatenate([s, [max(T, 1.0), 1.0]])

    prev_M = None
    for _ in range(settings.max_steps):
        a, b = cycles[-2], cycles[-1]
        w = weights(b.period)
        tangent = (zvec(b) - zvec(a)) / w
        norm = np.linalg.norm(tangent)
        if norm == 0:
            truncated = True
            break
        tangent /= norm
        accepted = None
        while True:
            z_pred = zvec(b) + ds * tangent * w
            got = _correct_cycle(model, pvals_of, bif_param, z_pred[:dim],
                                 z_pred[dim], z_pred[dim + 1], tangent, ds,
                                 zvec(b), settings, sh)
            if got is not None:
                accepted = got
                break
            ds *= 0.5
            if ds < settings.ds_min:
                break
        if accepted is None:
            truncated = True
            break
        x0, T, p, M = accepted
        new = as_cycle(x0, T, p, M)
        # PD: det(M + I) sign change across the last segment
        if _pd_test(cycles[-1]) * _pd_test(new) < 0:
            bifs.append(_localize_cycle_bif(
                model, pvals_of, bif_param, cycles[-1], new, "PD", _pd_test,
                settings, sh, zvec))
        # LPC: the parameter direction reverses between consecutive segments
        dp1 = cycles[-1].param_value - cycles[-2].param_value
        dp2 = p - cycles[-1].param_value
        if dp1 * dp2 < 0:
            bifs.append(_localize_lpc(model, pvals_of, bif_param,
                                      cycles[-2], new, dp1 > 0, settings,
                                      sh, zvec))
        cycles.append(new)
        ds = min(ds * 1.3, settings.ds_max)
        if not p_lo <= p <= p_hi:
            break
    else:
        truncated = True

    return CycleBranch(param_name=bif_param, cycles=cycles,
                       bifurcations=bifs, settings=settings,
                       truncated=truncated)


def _localize_lpc(model, pvals_of, bif_param, a, c, maximum, settings, sh,
                  zvec):
    """Refine a parameter fold between cycles a, c.

    The branch is parameterized by arclength theta along the secant from a
    to c; the parameter p(theta) is smooth through the fold with an interior
    extremum, which Brent's method locates.  Each evaluation is a standard
    pseudo-arclength corrector solve anchored at a, which stays well posed
    at the fold (unlike a parameter-pinned solve).
    """
    from scipy.optimize import minimize_scalar

    dim = model.dim
    s = _scales(dim)
    za, zc = zvec(a), zvec(c)
    w = np.concatenate([s, [max(za[dim], 1.0), 1.0]])
    sec = (zc - za) / w
    arclen = float(np.linalg.norm(sec))
    sec /= arclen
    cache = {}

    def point(theta):
        if theta not in cache:
            z_pred = za + theta * sec * w
            got = _correct_cycle(model, pvals_of, bif_param, z_pred[:dim],
                                 z_pred[dim], z_pred[dim + 1], sec, theta,
                                 za, settings, sh)
            if got is None:
                raise ContinuationError("LPC localization corrector failed")
            cache[theta] = got
        return cache[theta]

    sign = -1.0 if maximum else 1.0
    res = minimize_scalar(lambda t: sign * point(t)[2],
                          bounds=(0.0, arclen), method="bounded",
                          options={"xatol": 1e-3 * arclen})
    x0, T, p, M = point(float(res.x))
    mus = np.linalg.eigvals(M)
    # at the fold a nontrivial multiplier merges with the trivial +1;
    # report the second-closest-to-one multiplier as the critical one
    order = np.argsort(np.abs(mus - 1.0))
    crit = mus[order[1]] if len(order) > 1 else mus[order[0]]
    return BifurcationPoint(
        kind="LPC", param_name=bif_param, param_value=p,
        state=np.asarray(x0), test_residual=abs(np.real(crit) - 1.0),
        auxiliary={"period": float(T),
                   "critical_multiplier": complex(crit).real})


def _localize_cycle_bif(model, pvals_of, bif_param, a, b, kind, tf,
                        settings, sh, zvec):
    """Bisection on a multiplier test function between cycles a and b."""
    dim = model.dim
    s = _scales(dim)

    def cycle_at(theta):
        za, zb = zvec(a), zvec(b)
        z = za + theta * (zb - za)
        w = np.concatenate([s, [max(z[dim], 1.0), 1.0]])
        sec = (zb - za) / w
        sec /= np.linalg.norm(sec)
        got = _correct_cycle(model, pvals_of, bif_param, z[:dim], z[dim],
                             z[dim + 1], sec, 0.0, z, settings, sh)
        if got is None:
            raise ContinuationError(f"{kind} localization corrector failed")
        x0, T, p, M = got
        mus = np.linalg.eigvals(M)
        return x0, T, p, M, mus

    flo = tf(a)
    lo, hi = 0.0, 1.0
    out = None
    while (hi - lo) * abs(b.param_value - a.param_value) > settings.param_tol:
        mid = 0.5 * (lo + hi)
        x0, T, p, M, mus = cycle_at(mid)
        fake = LimitCycle(param_name=bif_param, param_value=p, period=T,
                          anchor=x0, multipliers=mus, stability="",
                          residual=0.0, condition=0.0)
        fm = tf(fake)
        out = (x0, T, p, mus, fm)
        if flo * fm <= 0:
            hi = mid
        else:
            lo, flo = mid, fm
    if out is None:
        x0, T, p, M, mus = cycle_at(0.5)
        out = (x0, T, p, mus, tf(LimitCycle(
            param_name=bif_param, param_value=p, period=T, anchor=x0,
            multipliers=mus, stability="", residual=0.0, condition=0.0)))
    x0, T, p, mus, fval = out
    target = -1.0 if kind == "PD" else 1.0
    crit = mus[np.argmin(np.abs(mus - target))]
    return BifurcationPoint(
        kind=kind, param_name=bif_param, param_value=p,
        state=np.asarray(x0), test_residual=abs(fval),
        auxiliary={"period": float(T),
                   "critical_multiplier": complex(crit).real})


def branch_switch_pd(model, params, pd, perturbation=1e-3, settings=None):
    """Initial (state, period) guess for the doubled-period branch at a PD.

    Perturbs the PD anchor along the eigenvector of the multiplier near -1
    and doubles the period; feed the result to :func:`find_limit_cycle`.
    """
    mu = pd.auxiliary.get("critical_multiplier")
    if pd.kind != "PD" or mu is None or abs(mu + 1.0) > 1e-3 * max(
            1.0, abs(mu)):
        raise CycleError("branch_switch_pd needs a PD point with a real "
                         "multiplier within 1e-3 of -1")
    settings = settings or ShootingSettings()
    p = model.merge_params(params)
    p = dict(p, **{pd.param_name: pd.param_value})
    pvals = tuple(p[k] for k in model.param_names)
    x0 = np.asarray(pd.state, dtype=float)
    T = float(pd.auxiliary["period"])
    _, M, _ = _flow(model, pvals, x0, T, settings)
    lam, vecs = np.linalg.eig(M)
    i = int(np.argmin(np.abs(lam + 1.0)))
    v = np.real(vecs[:, i])
    nv = np.linalg.norm(v / _scales(model.dim))
    if nv < 1e-12:
        raise CycleError("ill-conditioned -1 eigenvector")
    v = v / nv
    guess = x0 + perturbation * v
    if model._rhs_scalar_fn(*guess, *pvals, 0.0)[0] <= 0:
        guess = x0 - perturbation * v
    return guess, 2.0 * T


def _doubled_newton(model, pvals_of, param_name, u, x0, x1, T, p, eps,
                    V_anchor, settings):
    """Newton on the amplitude-pinned two-point shooting system.

    Unknowns (x0, x1, T_half, p); residuals [flow(x0) - x1; flow(x1) - x0;
    V(x0) - V_anchor; <(x1 - x0)/s, u> - eps].  Returns
    (x0, x1, T, p, M0, M1) or raises CycleError.
    """
    dim = model.dim
    s = _scales(dim)
    ss = np.concatenate([s, s])
    for _ in range(settings.max_newton):
        pv = pvals_of(p)
        y0, M0, dp0 = _flow(model, pv, x0, T, settings,
                            with_param=param_name)
        y1, M1, dp1 = _flow(model, pv, x1, T, settings,
                            with_param=param_name)
        f0 = np.array(model._rhs_scalar_fn(*y0, *pv, 0.0))
        f1 = np.array(model._rhs_scalar_fn(*y1, *pv, 0.0))
        r = np.concatenate([
            y0 - x1, y1 - x0,
            [x0[0] - V_anchor],
            [np.dot((x1 - x0) / s, u) - eps],
        ])
        res = float(np.max(np.abs(r[:2 * dim]) / ss))
        if res < settings.tol and abs(r[2 * dim]) < settings.tol * s[0] \
                and abs(r[2 * dim + 1]) < settings.tol:
            return x0, x1, T, p, M0, M1
        A = np.zeros((2 * dim + 2, 2 * dim + 2))
        A[:dim, :dim] = M0
        A[:dim, dim:2 * dim] = -np.eye(dim)
        A[:dim, 2 * dim] = f0
        A[:dim, 2 * dim + 1] = dp0
        A[dim:2 * dim, :dim] = -np.eye(dim)
        A[dim:2 * dim, dim:2 * dim] = M1
        A[dim:2 * dim, 2 * dim] = f1
        A[dim:2 * dim, 2 * dim + 1] = dp1
        A[2 * dim, 0] = 1.0
        A[2 * dim + 1, :dim] = -u / s
        A[2 * dim + 1, dim:2 * dim] = u / s
        try:
            step = np.linalg.solve(A, r)
        except np.linalg.LinAlgError as err:
            raise CycleError(f"singular doubled-shooting system: {err}") \
                from err
        scale = max(np.max(np.abs(step[:2 * dim]) / ss),
                    abs(step[2 * dim]) / T,
                    abs(step[2 * dim + 1]) / max(abs(p), 1e-3))
        if scale > 0.5:
            step *= 0.5 / scale
        x0 = x0 - step[:dim]
        x1 = x1 - step[dim:2 * dim]
        T = T - step[2 * dim]
        p = p - step[2 * dim + 1]
        if T < settings.min_period or not np.all(np.isfinite(x0)):
            raise CycleError("doubled-cycle Newton left the feasible region")
    raise CycleError("doubled-cycle Newton stagnated")


def find_doubled_cycle(model, params, pd, eps=0.05, eps0=2e-3,
                       settings=None):
    """Converge onto the period-doubled branch emerging at a PD point.

    At the PD parameter the doubled cycle coincides with the original cycle
    traversed twice, and just off it the original is only weakly unstable,
    so plain shooting (and relaxation by simulation) collapses back onto
    the original orbit.  Instead the doubled branch is parameterized by its
    own amplitude: a two-point shooting system with the anti-phase
    separation pinned to a given value and the parameter left free is
    solved by Newton, starting at separation ``eps0`` (where the PD point
    itself seeds the iteration) and ramping up to ``eps`` (scaled
    voltage/gate units), reseeding from the previous solution.  Returns the
    doubled :class:`LimitCycle` at the final amplitude, at whatever
    parameter value the branch attains there.
    """
    settings = settings or ShootingSettings()
    mu = pd.auxiliary.get("critical_multiplier")
    if pd.kind != "PD" or mu is None or abs(mu + 1.0) > 1e-3 * max(
            1.0, abs(mu)):
        raise CycleError("find_doubled_cycle needs a PD point with a real "
                         "multiplier within 1e-3 of -1")
    base = model.merge_params(params)
    base = dict(base, **{pd.param_name: pd.param_value})
    idx = model.param_names.index(pd.param_name)
    pv0 = [base[k] for k in model.param_names]

    def pvals_of(p):
        pv = list(pv0)
        pv[idx] = p
        return tuple(pv)

    dim = model.dim
    s = _scales(dim)
    anchor = np.asarray(pd.state, dtype=float)
    Th = float(pd.auxiliary["period"])     # half the doubled period
    _, M, _ = _flow(model, pvals_of(pd.param_value), anchor, Th, settings)
    lam, vecs = np.linalg.eig(M)
    i = int(np.argmin(np.abs(lam + 1.0)))
    u = np.real(vecs[:, i]) / s
    u /= np.linalg.norm(u)

    e = min(eps0, eps)
    x0 = anchor + 0.5 * e * u * s
    x1 = anchor - 0.5 * e * u * s
    T, p = Th, float(pd.param_value)
    V_anchor = anchor[0]
    while True:
        x0, x1, T, p, M0, M1 = _doubled_newton(
            model, pvals_of, pd.param_name, u, x0, x1, T, p, e, V_anchor,
            settings)
        if e >= eps:
            break
        e = min(1.5 * e, eps)
    pv = pvals_of(p)
    mus = np.linalg.eigvals(M1 @ M0)
    mesh = _sample_cycle(model, pv, x0, 2.0 * T, settings)
    return LimitCycle(
        param_name=pd.param_name, param_value=p, period=2.0 * T,
        anchor=x0, multipliers=mus, stability=_classify(mus),
        residual=0.0, condition=float(np.linalg.cond(M1 @ M0)),
        mesh_times=mesh[0], mesh_states=mesh[1])


def _correct_doubled(model, pvals_of, param_name, z_pred, tangent, ds,
                     z_ref, sh):
    """Newton on [flow(x0)-x1; flow(x1)-x0; phase; arclength] in
    (x0, x1, T_half, p).  Returns (x0, x1, T, p, M0, M1) or None."""
    dim = model.dim
    s = _scales(dim)
    ss = np.concatenate([s, s])
    w = np.concatenate([ss, [max(z_pred[2 * dim], 1.0), 1.0]])
    x0 = z_pred[:dim].copy()
    x1 = z_pred[dim:2 * dim].copy()
    T, p = float(z_pred[2 * dim]), float(z_pred[2 * dim + 1])
    V_anchor = x0[0]
    best = np.inf
    stalled = 0
    for _ in range(sh.max_newton):
        pv = pvals_of(p)
        try:
            y0, M0, dp0 = _flow(model, pv, x0, T, sh, with_param=param_name)
            y1, M1, dp1 = _flow(model, pv, x1, T, sh, with_param=param_name)
        except CycleError:
            return None
        f0 = np.array(model._rhs_scalar_fn(*y0, *pv, 0.0))
        f1 = np.array(model._rhs_scalar_fn(*y1, *pv, 0.0))
        z = np.concatenate([x0, x1, [T, p]])
        r = np.concatenate([
            y0 - x1, y1 - x0,
            [x0[0] - V_anchor],
            [np.dot((z - z_ref) / w, tangent) - ds],
        ])
        res = float(np.max(np.abs(r[:2 * dim]) / ss))
        if res < sh.tol and abs(r[2 * dim]) < sh.tol * s[0] \
                and abs(r[2 * dim + 1]) < 1e-10:
            return x0, x1, T, p, M0, M1
        if res < 0.9 * best:
            best, stalled = res, 0
        else:
            stalled += 1
            if stalled >= 5:
                return None
        A = np.zeros((2 * dim + 2, 2 * dim + 2))
        A[:dim, :dim] = M0
        A[:dim, dim:2 * dim] = -np.eye(dim)
        A[:dim, 2 * dim] = f0
        A[:dim, 2 * dim + 1] = dp0
        A[dim:2 * dim, :dim] = -np.eye(dim)
        A[dim:2 * dim, dim:2 * dim] = M1
        A[dim:2 * dim, 2 * dim] = f1
        A[dim:2 * dim, 2 * dim + 1] = dp1
        A[2 * dim, 0] = 1.0
        A[2 * dim + 1, :] = tangent / w
        try:
            step = np.linalg.solve(A, r)
        except np.linalg.LinAlgError:
            return None
        scale = max(np.max(np.abs(step[:2 * dim]) / ss),
                    abs(step[2 * dim]) / T,
                    abs(step[2 * dim + 1]) / max(abs(p), 1e-3))
        if scale > 0.5:
            step *= 0.5 / scale
        x0 = x0 - step[:dim]
        x1 = x1 - step[dim:2 * dim]
        T = T - step[2 * dim]
        p = p - step[2 * dim + 1]
        if T < sh.min_period or not np.all(np.isfinite(x0)):
            return None
    return None


def continue_doubled_cycles(model, bif_param, p_range, pd, params=None,
                            settings=None, eps0=2e-3):
    """Trace the period-doubled branch born at a PD point.

    Continues the amplitude-pinned two-point shooting system of
    :func:`find_doubled_cycle` by pseudo-arclength over the full unknown
    vector (x0, x1, T_half, p).  This tracks the doubled branch from zero
    amplitude at the PD without ever collapsing onto the original cycle
    (the arclength tangent carries the growing anti-phase separation) and
    through any folds of the amplitude parametrization.  Detects the
    branch's own period doublings via det(M + I) on the full monodromy.
    Returns a :class:`CycleBranch` of doubled cycles.
    """
    settings = settings or CycleContinuationSettings()
    sh = settings.shooting
    if pd.kind != "PD" or pd.param_name != bif_param:
        raise CycleError("continue_doubled_cycles needs a PD point in the "
                         "continuation parameter")
    base = model.merge_params(params)
    base = dict(base, **{bif_param: pd.param_value})
    idx = model.param_names.index(bif_param)
    pv0 = [base[k] for k in model.param_names]

    def pvals_of(p):
        pv = list(pv0)
        pv[idx] = p
        return tuple(pv)

    p_lo, p_hi = sorted(map(float, p_range))
    dim = model.dim
    s = _scales(dim)
    ss = np.concatenate([s, s])
    anchor = np.asarray(pd.state, dtype=float)
    Th = float(pd.auxiliary["period"])
    _, M, _ = _flow(model, pvals_of(pd.param_value), anchor, Th, sh)
    lam, vecs = np.linalg.eig(M)
    i = int(np.argmin(np.abs(lam + 1.0)))
    u = np.real(vecs[:, i]) / s
    u /= np.linalg.norm(u)

    # two amplitude-pinned seed solutions for the initial secant
    seeds = []
    x0 = anchor + 0.5 * eps0 * u * s
    x1 = anchor - 0.5 * eps0 * u * s
    T, p = Th, float(pd.param_value)
    for e in (eps0, 1.4 * eps0):
        x0, x1, T, p, M0, M1 = _doubled_newton(
            model, pvals_of, bif_param, u, x0, x1, T, p, e, anchor[0], sh)
        seeds.append((x0.copy(), x1.copy(), T, p, M0, M1))

    def as_cycle(x0, x1, T, p, M0, M1):
        mus = np.linalg.eigvals(M1 @ M0)
        mesh = _sample_cycle(model, pvals_of(p), x0, 2.0 * T, sh)
        return LimitCycle(
            param_name=bif_param, param_value=p, period=2.0 * T, anchor=x0,
            multipliers=mus, stability=_classify(mus), residual=0.0,
            condition=float(np.linalg.cond(M1 @ M0)),
            mesh_times=mesh[0], mesh_states=mesh[1])

    def zvec_of(entry):
        x0, x1, T, p = entry[0], entry[1], entry[2], entry[3]
        return np.concatenate([x0, x1, [T, p]])

    entries = list(seeds)
    cycles = [as_cycle(*e) for e in seeds]
    bifs = []
    truncated = False
    ds = settings.ds0
    for _ in range(settings.max_steps):
        za, zb = zvec_of(entries[-2]), zvec_of(entries[-1])
        w = np.concatenate([ss, [max(zb[2 * dim], 1.0), 1.0]])
        tangent = (zb - za) / w
        norm = np.linalg.norm(tangent)
        if norm == 0:
            truncated = True
            break
        tangent /= norm
        accepted = None
        while True:
            z_pred = zb + ds * tangent * w
            got = _correct_doubled(model, pvals_of, bif_param, z_pred,
                                   tangent, ds, zb, sh)
            if got is not None:
                accepted = got
                break
            ds *= 0.5
            if ds < settings.ds_min:
                break
        if accepted is None:
            truncated = True
            break
        new = as_cycle(*accepted)
        if _pd_test(cycles[-1]) * _pd_test(new) < 0:
            bifs.append(_localize_doubled_pd(
                model, pvals_of, bif_param, entries[-1], accepted, sh,
                settings))
        entries.append(accepted)
        cycles.append(new)
        ds = min(ds * 1.3, settings.ds_max)
        if not p_lo <= new.param_value <= p_hi:
            break
    else:
        truncated = True

    return CycleBranch(param_name=bif_param, cycles=cycles,
                       bifurcations=bifs, settings=settings,
                       truncated=truncated)


def _localize_doubled_pd(model, pvals_of, bif_param, ea, eb, sh, settings):
    """Bisection for det(M + I) = 0 between doubled-branch entries."""
    dim = model.dim
    s = _scales(dim)
    ss = np.concatenate([s, s])
    za, zb = (np.concatenate([e[0], e[1], [e[2], e[3]]]) for e in (ea, eb))

    def tf_of(entry):
        mus = np.linalg.eigvals(entry[5] @ entry[4])
        return float(np.real(np.prod(mus + 1.0)))

    def entry_at(theta):
        z = za + theta * (zb - za)
        w = np.concatenate([ss, [max(z[2 * dim], 1.0), 1.0]])
        sec = (zb - za) / w
        sec /= np.linalg.norm(sec)
        got = _correct_doubled(model, pvals_of, bif_param, z, sec, 0.0, z,
                               sh)
        if got is None:
            raise ContinuationError("doubled-PD localization corrector "
                                    "failed")
        return got

    flo = tf_of(ea)
    lo, hi = 0.0, 1.0
    out = eb
    while (hi - lo) * abs(eb[3] - ea[3]) > settings.param_tol:
        mid = 0.5 * (lo + hi)
        got = entry_at(mid)
        fm = tf_of(got)
        out = got
        if flo * fm <= 0:
            hi = mid
        else:
            lo, flo = mid, fm
    x0, x1, T, p, M0, M1 = out
    mus = np.linalg.eigvals(M1 @ M0)
    i = int(np.argmin(np.abs(mus + 1.0)))
    return BifurcationPoint(
        kind="PD", param_name=bif_param, param_value=p,
        state=np.asarray(x0), test_residual=abs(np.real(mus[i]) + 1.0),
        auxiliary={"period": 2.0 * float(T),
                   "critical_multiplier": float(np.real(mus[i]))})
