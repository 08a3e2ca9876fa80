"""Equilibrium location and linear stability analysis.

An equilibrium of a cell model satisfies rhs(X) = 0; because every gate
equation is dy/dt = (y_inf(V) - y)/tau(V), the gates can be eliminated and
the problem reduces to a scalar root-find in V.  The Jacobian at an
equilibrium is an arrowhead matrix (full first row, full first column,
diagonal), so for four-dimensional models the characteristic-polynomial
coefficients a1..a4 and the Routh-Hurwitz minors D1..D4 have short closed
forms; these provide the Hopf (D4 = 0) and fold (a_n = 0) test functions
used by the continuation module.  The primary stability classifier is the
dense eigensolver, which works for any dimension.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

#: eigenvalue real parts closer to zero than this are neither stable nor
#: unstable; the point sits numerically on a bifurcation.
MARGINAL_BAND = 1e-8


class EquilibriumError(RuntimeError):
    """No equilibrium found in the requested bracket."""


@dataclass(frozen=True)
class EquilibriumPoint:
    """An equilibrium with its linearization summary."""

    state: np.ndarray                  # gates at steady state
    eigenvalues: np.ndarray            # complex spectrum of the Jacobian
    char_coeffs: tuple                 # (a1..a_dim), monic convention
    hurwitz: tuple                     # (D1..D_dim)
    stability: str                     # stable | unstable | marginal
    residual: float                    # ||rhs(state)||_inf
    param_name: str = ""               # bifurcation-parameter tag, if any
    param_value: float = float("nan")
    polished: bool = True              # False if the Newton polish failed

    @property
    def V(self):
        return float(self.state[0])

    @property
    def max_re(self):
        return float(np.max(self.eigenvalues.real))


def classify(eigenvalues, band=MARGINAL_BAND):
    """stable/unstable/marginal from the spectrum's largest real part."""
    m = float(np.max(np.asarray(eigenvalues).real))
    if abs(m) < band:
        return "marginal"
    return "stable" if m < 0 else "unstable"


def eigenvalues(J):
    """Full spectrum of a square matrix (dense QR iteration)."""
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise ValueError("eigenvalues expects a square matrix")
    if not np.all(np.isfinite(J)):
        raise ValueError("non-finite Jacobian")
    return np.linalg.eigvals(J)


def char_coeffs(J):
    """Coefficients (a1..an) of det(lambda*I - J), monic convention.

    Built by expanding the product of (lambda - lambda_i) over the computed
    spectrum: trace-recursion schemes (Faddeev-LeVerrier) lose all accuracy
    in the trailing coefficients when the eigenvalue magnitudes span several
    decades, as they do for the ten-dimensional ventricular model.
    """
    J = np.asarray(J, dtype=float)
    return tuple(float(a) for a in np.poly(J)[1:])


def char_coeffs_4d(J):
    """(a1, a2, a3, a4) from the arrowhead structure of a 4D cell Jacobian.

    Entries are read as F_V = J[0,0], gate decay rates b_i = -J[i,i], and
    coupling products c_i = J[i,0]*J[0,i].  For dimensions other than 4 the
    generic path (:func:`char_coeffs`) is used.
    """
    J = np.asarray(J, dtype=float)
    if J.shape != (4, 4):
        return char_coeffs(J)
    fv = J[0, 0]
    b = [-J[i, i] for i in (1, 2, 3)]
    c = [J[i, 0] * J[0, i] for i in (1, 2, 3)]
    b1, b2, b3 = b
    c1, c2, c3 = c
    e1 = b1 + b2 + b3
    e2 = b1 * b2 + b2 * b3 + b3 * b1
    e3 = b1 * b2 * b3
    a1 = e1 - fv
    a2 = e2 - (c1 + c2 + c3) - e1 * fv
    a3 = e3 - e2 * fv - (b2 + b3) * c1 - (b1 + b3) * c2 - (b1 + b2) * c3
    a4 = -(b2 * b3 * c1 + b1 * b3 * c2 + b1 * b2 * c3 + e3 * fv)
    return (a1, a2, a3, a4)


def hurwitz_minors(coeffs):
    """Leading principal minors (D1..Dn) of the Hurwitz matrix.

    For n = 4 the closed forms D1 = a1, D2 = a1 a2 - a3,
    D3 = a3 D2 - a1^2 a4, D4 = a4 D3 are used; other orders build the
    Hurwitz matrix and take determinants.  All Di > 0 iff every root has
    negative real part (Routh-Hurwitz).  Beware a frequently printed
    shortcut chain that takes D3 = a3 D2 and calls our D3 "D4": it drops
    the a4 > 0 condition and is blind to a single positive real root.
    """
    a = tuple(float(x) for x in coeffs)
    n = len(a)
    if n == 4:
        a1, a2, a3, a4 = a
        d1 = a1
        d2 = a1 * a2 - a3
        d3 = a3 * d2 - a1 * a1 * a4
        d4 = a4 * d3
        return (d1, d2, d3, d4)
    full = (1.0,) + a
    H = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            k = 2 * (j + 1) - (i + 1)
            if 0 <= k <= n:
                H[i, j] = full[k]
    return tuple(float(np.linalg.det(H[: m, : m])) for m in range(1, n + 1))


def fold_test(coeffs):
    """Constant coefficient a_n; zero iff the Jacobian is singular."""
    return float(coeffs[-1])


def hopf_test(coeffs):
    """Penultimate Hurwitz minor D_{n-1}; zero on a Hopf boundary (with the
    remaining minors and a_n positive)."""
    return hurwitz_minors(coeffs)[-2]


def analyze_state(model, state, params=None, **tags):
    """EquilibriumPoint record for a state assumed to be an equilibrium."""
    state = np.asarray(state, dtype=float)
    J = model.jacobian(state, params)
    a = char_coeffs_4d(J) if model.dim == 4 else char_coeffs(J)
    lam = eigenvalues(J)
    res = float(np.max(np.abs(model.rhs(state, params))))
    return EquilibriumPoint(
        state=state,
        eigenvalues=lam,
        char_coeffs=tuple(float(x) for x in a),
        hurwitz=hurwitz_minors(a),
        stability=classify(lam),
        residual=res,
        **tags,
    )


def scalar_residual(model, V, params=None):
    """dV/dt with every gate at its steady value for voltage V."""
    p = model.merge_params(params)
    return float(model.rhs(model.steady_state(V), p)[0])


def find_equilibrium(model, params=None, V_bracket=None, V_seed=None,
                     newton_tol=1e-13, max_newton=50):
    """Locate an equilibrium by scalar reduction, then full Newton polish.

    Give either ``V_bracket`` (endpoints with opposite signs of the reduced
    residual) or ``V_seed`` for a local Newton start.  The returned point
    satisfies ||rhs||_inf < 1e-10; if the full-dimension polish fails to
    converge, the scalar root is returned with ``polished=False``.
    """
    p = model.merge_params(params)
    g = lambda V: model.rhs(model.steady_state(V), p)[0]
    if V_bracket is not None:
        a, b = map(float, V_bracket)
        ga, gb = g(a), g(b)
        if ga == 0.0:
            V = a
        elif gb == 0.0:
            V = b
        elif ga * gb > 0:
            raise EquilibriumError(
                f"no sign change of the reduced residual on [{a}, {b}] "
                f"(g(a)={ga:.3e}, g(b)={gb:.3e})")
        else:
            V = brentq(g, a, b, xtol=1e-13, rtol=1e-15)
    elif V_seed is not None:
        V = float(V_seed)
        for _ in range(max_newton):
            r = g(V)
            dV = 1e-7 * max(1.0, abs(V))
            slope = (g(V + dV) - g(V - dV)) / (2 * dV)
            if slope == 0.0:
                break
            step = r / slope
            V -= step
            if abs(step) < 1e-12 * max(1.0, abs(V)):
                break
        else:
            raise EquilibriumError(f"scalar Newton stalled near V={V:.6g}")
    else:
        raise EquilibriumError("give V_bracket or V_seed")

    # Full-dimension Newton polish with the analytic Jacobian.
    x = model.steady_state(V)
    polished = True
    for _ in range(max_newton):
        r = model.rhs(x, p)
        if np.max(np.abs(r)) < newton_tol:
            break
        try:
            step = np.linalg.solve(model.jacobian(x, p), r)
        except np.linalg.LinAlgError:
            polished = False
            break
        if not np.all(np.isfinite(step)) or np.max(np.abs(step)) > 100.0:
            polished = False
            break
        x = x - step
    else:
        polished = False
    if not polished:
        x = model.steady_state(V)

    point = analyze_state(model, x, p, polished=polished)
    if point.residual > 1e-10:
        raise EquilibriumError(
            f"equilibrium residual {point.residual:.3e} exceeds 1e-10")
    return point


def write_report(points, path, gate_names=()):
    """CSV report: param,V_inf,<gates>,max_re_lambda,stability,a1..,delta1.."""
    points = list(points)
    if points and not gate_names:
        gate_names = tuple(f"y{i}" for i in range(1, len(points[0].state)))
    n = len(points[0].char_coeffs) if points else 4
    header = (["param", "V_inf"] + list(gate_names)
              + ["max_re_lambda", "stability"]
              + [f"a{i}" for i in range(1, n + 1)]
              + [f"delta{i}" for i in range(1, n + 1)])
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for pt in points:
            w.writerow([repr(pt.param_value), repr(pt.V)]
                       + [repr(float(v)) for v in pt.state[1:]]
                       + [repr(pt.max_re), pt.stability]
                       + [repr(v) for v in pt.char_coeffs]
                       + [repr(v) for v in pt.hurwitz])
