"""Pseudo-arclength continuation of equilibrium branches.

Equilibria of a cell model satisfy the scalar reduced equation
F(V, p) = 0 (gates eliminated via their steady-state curves), so a branch
lives in the (V, p) plane and is traced with a tangent predictor and a
Newton corrector on the extended system [F = 0; arclength constraint].
Voltage is normalized by 100 mV so that arclength steps weigh the two
coordinates comparably.  At every accepted point the full-dimension
linearization is analyzed; sign changes of the Hopf test function (largest
real part over complex eigenvalue pairs) or of the fold quantity a_n
trigger bisection localization along the branch.  Criticality of a Hopf
point is classified empirically by probing the flow on the unstable side.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import equilibria as eq
from .integrator import SolverConfig, integrate

V_SCALE = 100.0  # mV; normalizes voltage against parameter arclength


class ContinuationError(RuntimeError):
    """Corrector failure that step reduction could not rescue."""


@dataclass(frozen=True)
class ContinuationSettings:
    ds0: float = 1e-3        # initial arclength step
    ds_min: float = 1e-8
    ds_max: float = 1e-2
    corrector_tol: float = 1e-12
    max_corrector: int = 12
    max_steps: int = 20000
    param_tol: float = 1e-7  # localization tolerance in the parameter

    def __post_init__(self):
        if not (0 < self.ds_min <= self.ds0 <= self.ds_max):
            raise ValueError("need 0 < ds_min <= ds0 <= ds_max")


@dataclass(frozen=True)
class BifurcationPoint:
    kind: str                 # "Hopf" | "LP" | "PD" | "LPC"
    param_name: str
    param_value: float
    state: np.ndarray
    test_residual: float
    criticality: str = ""     # Hopf only: supercritical|subcritical|undetermined
    auxiliary: dict = field(default_factory=dict)  # omega0, multiplier, ...


@dataclass
class Branch:
    param_name: str
    points: list                      # EquilibriumPoint, in arclength order
    bifurcations: list                # BifurcationPoint
    settings: ContinuationSettings
    truncated: bool = False           # corrector failed before leaving range

    def to_json(self, path):
        doc = {
            "format": "cardiodyn-branch/1",
            "param": self.param_name,
            "truncated": self.truncated,
            "settings": asdict(self.settings),
            "points": [
                {
                    "param": pt.param_value,
                    "state": [float(v) for v in pt.state],
                    "stability": pt.stability,
                    "max_re_lambda": pt.max_re,
                    "hopf_test": _hopf_tf(pt),
                    "fold_test": eq.fold_test(pt.char_coeffs),
                }
                for pt in self.points
            ],
            "bifurcations": [
                {
                    "kind": b.kind,
                    "param": b.param_value,
                    "state": [float(v) for v in b.state],
                    "test_residual": b.test_residual,
                    "criticality": b.criticality,
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
            w.writerow(["param", "V_inf", "stability"])
            for pt in self.points:
                w.writerow([repr(pt.param_value), repr(pt.V), pt.stability])


def _hopf_tf(point):
    """Largest real part over complex eigenvalue pairs; None if all real."""
    lam = point.eigenvalues
    pairs = lam[np.abs(lam.imag) > 1e-9]
    if pairs.size == 0:
        return None
    return float(pairs.real.max())


def _reduced(model, bif_param, base_params):
    """Reduced residual F(V, p), its V-derivative (Schur complement of the
    full Jacobian), and its parameter derivative.

    Uses the compiled low-level functions directly so that predictor steps
    may momentarily leave the physical parameter region (e.g. a conductance
    slightly below zero near a range boundary); the validated public API
    would reject those.
    """
    idx = model.param_names.index(bif_param)
    pv0 = [base_params[k] for k in model.param_names]
    dim = model.dim
    # derivative of the V-equation with respect to the parameter
    model.drhs_dparam(model.steady_state(-80.0), base_params, bif_param)
    dp_fn = model._dv_dparam_fns[bif_param]

    def _pv(p):
        pv = list(pv0)
        pv[idx] = p
        return pv

    def F(V, p):
        x = model.steady_state(V)
        return float(model._rhs_scalar_fn(*x, *_pv(p), 0.0)[0])

    def dF_dV(V, p):
        x = model.steady_state(V)
        J = np.array(model._jac_scalar_fn(*x, *_pv(p), 0.0)).reshape(dim, dim)
        # along the steady-state manifold dy_i/dV = -J[i,0]/J[i,i]
        return float(J[0, 0] - sum(J[0, i] * J[i, 0] / J[i, i]
                                   for i in range(1, dim)))

    def dF_dp(V, p):
        x = model.steady_state(V)
        return float(dp_fn(*x, *_pv(p), 0.0)[0])

    return F, dF_dV, dF_dp


def _corrector(F, dF_dV, dF_dp, v, p, tv, tp, ds, v0, p0, settings):
    """Newton on [F=0; arclength constraint]; (v, V/V_SCALE, p) coordinates.

    Constraint: (v - v0)*tv + (p - p0)*tp - ds = 0 with unit tangent (tv,tp).
    Returns (v, p) or None on failure.
    """
    for _ in range(settings.max_corrector):
        V = v * V_SCALE
        r1 = F(V, p)
        r2 = (v - v0) * tv + (p - p0) * tp - ds
        a = dF_dV(V, p) * V_SCALE
        b = dF_dp(V, p)
        det = a * tp - b * tv
        if det == 0.0 or not np.isfinite(det):
            return None
        dv = (r1 * tp - b * r2) / det
        dp = (a * r2 - r1 * tv) / det
        v, p = v - dv, p - dp
        if not (np.isfinite(v) and np.isfinite(p)):
            return None
        if abs(r1) < settings.corrector_tol and abs(r2) < 1e-12:
            return v, p
    return None


def _tangent(dv_prev, dp_prev, a, b):
    """Unit tangent (tv, tp) to F=0 from the reduced derivatives (a, b) =
    (dF/dv, dF/dp), oriented to continue the previous direction."""
    tv, tp = b, -a
    norm = np.hypot(tv, tp)
    if norm == 0.0:
        return None
    tv, tp = tv / norm, tp / norm
    if tv * dv_prev + tp * dp_prev < 0:
        tv, tp = -tv, -tp
    return tv, tp


def continue_equilibria(model, bif_param, p_range, params=None, V_start=None,
                        param_start=None, settings=None,
                        classify_criticality=True):
    """Trace the equilibrium branch of ``bif_param`` over ``p_range``.

    Starts from an equilibrium at ``param_start`` (default: range start),
    located from ``V_start`` (Newton seed) or by scanning [-100, 0] mV for a
    sign change.  Returns a :class:`Branch` with detected Hopf and limit
    points localized to ``settings.param_tol``.
    """
    settings = settings or ContinuationSettings()
    base = model.merge_params(params)
    p_lo, p_hi = sorted(map(float, p_range))
    p0 = float(param_start) if param_start is not None else p_lo
    if not p_lo <= p0 <= p_hi:
        raise ValueError("param_start outside p_range")
    F, dF_dV, dF_dp = _reduced(model, bif_param, base)

    if V_start is not None:
        start = eq.find_equilibrium(model, dict(base, **{bif_param: p0}),
                                    V_seed=V_start)
    else:
        start = _scan_equilibrium(model, dict(base, **{bif_param: p0}))
    ppt = dict(param_name=bif_param)

    def analyzed(V, p):
        # The corrector already put (V, p) on the branch; near folds a fresh
        # scalar Newton would stall (dF/dV -> 0), so analyze the state as is.
        prm = dict(base, **{bif_param: p})
        pt = eq.analyze_state(model, model.steady_state(V), prm,
                              param_name=bif_param, param_value=p)
        if pt.residual > 1e-9:
            raise ContinuationError(
                f"accepted point residual {pt.residual:.2e} at "
                f"{bif_param}={p:.8g}")
        return pt

    points = [analyzed(start.V, p0)]
    bifs = []
    truncated = False

    # initial direction: toward the far end of the range
    dv_prev, dp_prev = 0.0, 1.0 if (p_hi - p0) >= (p0 - p_lo) else -1.0
    if param_start is not None and p0 == p_hi:
        dv_prev, dp_prev = 0.0, -1.0
    ds = settings.ds0
    v, p = points[0].V / V_SCALE, p0

    for _ in range(settings.max_steps):
        t = _tangent(dv_prev, dp_prev, dF_dV(v * V_SCALE, p) * V_SCALE,
                     dF_dp(v * V_SCALE, p))
        if t is None:
            truncated = True
            break
        tv, tp = t
        accepted = None
        while True:
            pred_v, pred_p = v + ds * tv, p + ds * tp
            sol = _corrector(F, dF_dV, dF_dp, pred_v, pred_p, tv, tp, ds,
                             v, p, settings)
            if sol is not None:
                accepted = sol
                break
            ds *= 0.5
            if ds < settings.ds_min:
                break
        if accepted is None:
            truncated = True
            break
        v_new, p_new = accepted
        # clamp at range boundary
        left_range = not (p_lo <= p_new <= p_hi)
        if left_range:
            p_new = min(max(p_new, p_lo), p_hi)
            root = eq.find_equilibrium(model, dict(base, **{bif_param: p_new}),
                                       V_seed=v_new * V_SCALE)
            v_new = root.V / V_SCALE
        new_pt = analyzed(v_new * V_SCALE, p_new)
        _detect(model, base, bif_param, points[-1], new_pt, bifs, settings,
                F, dF_dV, dF_dp)
        points.append(new_pt)
        dv_prev, dp_prev = v_new - v, p_new - p
        v, p = v_new, p_new
        ds = min(ds * 1.3, settings.ds_max)
        if left_range:
            break
    else:
        truncated = True

    if classify_criticality:
        for i, b in enumerate(bifs):
            if b.kind == "Hopf":
                crit = classify_hopf(model, base, bif_param, b)
                bifs[i] = BifurcationPoint(
                    kind=b.kind, param_name=b.param_name,
                    param_value=b.param_value, state=b.state,
                    test_residual=b.test_residual, criticality=crit,
                    auxiliary=b.auxiliary)
    return Branch(param_name=bif_param, points=points, bifurcations=bifs,
                  settings=settings, truncated=truncated)


def _scan_equilibrium(model, params, V_range=(-100.0, 0.0), n=200):
    """First bracketed root of the reduced residual on a V grid."""
    Vs = np.linspace(*V_range, n)
    g = [model.rhs(model.steady_state(V), params)[0] for V in Vs]
    for i in range(n - 1):
        if g[i] == 0.0 or g[i] * g[i + 1] < 0:
            return eq.find_equilibrium(model, params,
                                       V_bracket=(Vs[i], Vs[i + 1]))
    raise eq.EquilibriumError("no equilibrium found in the scan range")


def _detect(model, base, bif_param, a, b, bifs, settings, F, dF_dV, dF_dp):
    """Check the (a, b) branch segment for Hopf / LP sign changes."""
    ha, hb = _hopf_tf(a), _hopf_tf(b)
    if ha is not None and hb is not None and ha * hb < 0:
        bifs.append(_localize(model, base, bif_param, a, b, "Hopf",
                              _hopf_tf, settings, F, dF_dV, dF_dp))
    fa = eq.fold_test(a.char_coeffs)
    fb = eq.fold_test(b.char_coeffs)
    if fa * fb < 0:
        bifs.append(_localize(
            model, base, bif_param, a, b, "LP",
            lambda pt: eq.fold_test(pt.char_coeffs),
            settings, F, dF_dV, dF_dp))


def _localize(model, base, bif_param, a, b, kind, tf, settings,
              F, dF_dV, dF_dp):
    """Bisection on the test function along the secant between points a, b."""
    def point_at(theta):
        V = a.V + theta * (b.V - a.V)
        p = a.param_value + theta * (b.param_value - a.param_value)
        # correct back onto the branch in the plane orthogonal to the secant
        sv = (b.V - a.V) / V_SCALE
        sp = b.param_value - a.param_value
        norm = np.hypot(sv, sp)
        sv, sp = sv / norm, sp / norm
        sol = _corrector(F, dF_dV, dF_dp, V / V_SCALE, p, sv, sp, 0.0,
                         V / V_SCALE, p, settings)
        if sol is None:
            raise ContinuationError(f"{kind} localization corrector failed")
        v, p = sol
        prm = dict(base, **{bif_param: p})
        return eq.analyze_state(model, model.steady_state(v * V_SCALE), prm,
                                param_name=bif_param, param_value=p)

    lo, hi = 0.0, 1.0
    flo = tf(a)
    pt = None
    while True:
        mid = 0.5 * (lo + hi)
        pt = point_at(mid)
        fm = tf(pt)
        if flo * fm <= 0:
            hi = mid
        else:
            lo, flo = mid, fm
        if (hi - lo) * abs(b.param_value - a.param_value) < settings.param_tol:
            break
    pt = point_at(0.5 * (lo + hi))
    aux = {}
    if kind == "Hopf":
        lam = pt.eigenvalues
        pair = lam[np.abs(lam.imag) > 1e-9]
        i = np.argmin(np.abs(pair.real))
        aux["omega0"] = float(abs(pair[i].imag))
    else:
        lam = pt.eigenvalues
        aux["critical_eigenvalue"] = float(
            lam[np.argmin(np.abs(lam))].real)
    return BifurcationPoint(
        kind=kind, param_name=bif_param, param_value=pt.param_value,
        state=pt.state, test_residual=abs(tf(pt)), auxiliary=aux)


def locate_bifurcation(model, bif_param, point_a, point_b, kind,
                       params=None, settings=None):
    """Localize a Hopf or LP between two branch points bracketing a sign
    change of the corresponding test function."""
    settings = settings or ContinuationSettings()
    base = model.merge_params(params)
    if kind == "Hopf":
        tf = _hopf_tf
    elif kind == "LP":
        tf = lambda pt: eq.fold_test(pt.char_coeffs)
    else:
        raise ValueError(f"unsupported kind {kind!r}")
    fa, fb = tf(point_a), tf(point_b)
    if fa is None or fb is None or fa * fb >= 0:
        raise ContinuationError(
            f"no {kind} test-function sign change between "
            f"{bif_param}={point_a.param_value:.8g} and "
            f"{point_b.param_value:.8g}")
    F, dF_dV, dF_dp = _reduced(model, bif_param, base)
    return _localize(model, base, bif_param, point_a, point_b, kind, tf,
                     settings, F, dF_dV, dF_dp)


def classify_hopf(model, base_params, bif_param, hopf, probe_offset=None,
                  rel_perturb=1e-3):
    """Empirical Hopf criticality from the flow on the unstable side.

    A small perturbation of the unstable equilibrium just past the Hopf
    point either saturates on a nearby small limit cycle (supercritical) or
    escapes the local neighborhood toward a distant attractor
    (subcritical).  Returns 'supercritical', 'subcritical', or
    'undetermined'.
    """
    p_star = hopf.param_value
    offset = probe_offset if probe_offset is not None else 1e-3 * abs(p_star)
    omega0 = hopf.auxiliary.get("omega0", 0.0)
    if omega0 <= 0:
        return "undetermined"

    def probe(p):
        prm = dict(base_params, **{bif_param: p})
        try:
            pt = eq.find_equilibrium(model, prm, V_seed=hopf.state[0])
        except eq.EquilibriumError:
            return None
        if pt.stability != "unstable":
            return None
        ic = pt.state.copy()
        ic[0] += rel_perturb * V_SCALE
        # long enough for the linear instability to amplify the probe well
        # past any small emergent cycle, but at least 40 rotations
        horizon = max(40.0 * 2.0 * np.pi / omega0, 12.0 / pt.max_re)
        try:
            traj = integrate(model, ic, prm, t_span=(0.0, horizon),
                             config=SolverConfig(rtol=1e-8, atol_V=1e-10,
                                                 atol_gates=1e-12))
        except Exception:
            return None
        tail = traj.states[0][traj.times > 0.75 * horizon]
        amp = float(np.max(np.abs(tail - pt.V)))
        return amp

    for p in (p_star + offset, p_star - offset):
        amp = probe(p)
        if amp is None:
            continue
        # near-Hopf cycle amplitude scales like sqrt(offset); 10 mV
        # separates a local cycle from escape to a distant attractor
        return "supercritical" if amp < 10.0 else "subcritical"
    return "undetermined"
