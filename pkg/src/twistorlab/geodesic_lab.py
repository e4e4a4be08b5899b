"""Geodesics of the reconstructed connection and incidence sets of the disk family.

Two independent descriptions of the same curves live here.  The first
integrates the geodesic spray of a sampled (or closed-form) connection.  The
second solves incidence conditions directly on the disk family:

* C_p   (p off N):  all x whose disk contains p in its interior (time-like);
* C_pv  (p on N, v tangent): all x whose boundary passes p with tangent
  positively parallel to v (null);
* S_p   (p on N): the union of the C_pv over directions v (a null surface);
* C_pq  (p, q on N): all x whose boundary passes both points (space-like,
  closed).

Every incidence root find is a Newton iteration whose Jacobian comes from
``node_geometry``: the x-derivatives W of the disk maps in the frame of the
current iterate, together with z-derivatives of the holomorphic extensions.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import minimize_scalar

from .cp1_geometry import CHART_SWITCH, MoebiusMap, PointCP1, PointZ, chordal_distance, stereographic, tau
from .disk_solver import (
    EmbeddingN,
    NodeGeometry,
    SolverConfig,
    format_number,
    holomorphic_derivative,
    node_geometry,
)
from .errors import FoliationFailure, LeftDomain, NoConvergence, TwistorLabError, ZeroVector
from .ew_reconstruct import FLAT_METRIC, MetricConnectionField, fit_null_cone
from .standard_model import (
    StandardDiskParams,
    std_adapted_disk,
    std_adapted_through,
    std_christoffel,
    std_leaf_through,
    std_metric,
)

log = logging.getLogger(__name__)

CLASSIFY_BAND = 1e-10
CLOSURE_TOL = 1e-5
INCIDENCE_TOL = 1e-10


# ---------------------------------------------------------------------------
# Causal character
# ---------------------------------------------------------------------------


def causal_value(g: np.ndarray, v) -> float:
    """g(v, v) / |v|^2."""
    v = np.asarray(v, dtype=float)
    n2 = float(v @ v)
    if n2 == 0.0:
        raise ZeroVector("causal type of the zero vector is undefined")
    return float(v @ g @ v) / n2


def classify(g: np.ndarray, v, band: float = CLASSIFY_BAND) -> str:
    """'timelike', 'spacelike' or 'null' for v with respect to g."""
    c = causal_value(g, v)
    if abs(c) < band:
        return "null"
    return "timelike" if c < 0 else "spacelike"


# ---------------------------------------------------------------------------
# Connections to integrate
# ---------------------------------------------------------------------------


class Connection(Protocol):
    def christoffel(self, x) -> np.ndarray: ...

    def metric(self, x) -> np.ndarray: ...

    def contains(self, x) -> bool: ...


class FieldInterpolator:
    """Trilinear interpolation of a sampled field over its valid nodes."""

    def __init__(self, fld: MetricConnectionField):
        self.field = fld
        self.axes = fld.grid.axes()
        valid = fld.valid
        idx = np.argwhere(valid)
        if idx.size == 0:
            raise ValueError("field has no node with a connection")
        self.lo_idx = idx.min(axis=0)
        self.hi_idx = idx.max(axis=0)
        self.lo = np.array([self.axes[d][self.lo_idx[d]] for d in range(3)])
        self.hi = np.array([self.axes[d][self.hi_idx[d]] for d in range(3)])

    def contains(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lo - 1e-12) and np.all(x <= self.hi + 1e-12))

    def _weights(self, x):
        idx, w = [], []
        for d in range(3):
            ax = self.axes[d]
            i = int(np.clip(np.searchsorted(ax, x[d]) - 1, self.lo_idx[d], max(self.lo_idx[d], self.hi_idx[d] - 1)))
            step = ax[i + 1] - ax[i] if i + 1 < len(ax) else 1.0
            idx.append(i)
            w.append(float(np.clip((x[d] - ax[i]) / step, 0.0, 1.0)))
        return idx, w

    def _interp(self, arr, x):
        (i, j, k), (a, b, c) = self._weights(np.asarray(x, dtype=float))
        out = 0.0
        for di, wi in ((0, 1 - a), (1, a)):
            for dj, wj in ((0, 1 - b), (1, b)):
                for dk, wk in ((0, 1 - c), (1, c)):
                    w = wi * wj * wk
                    if w:
                        out = out + w * arr[i + di, j + dj, k + dk]
        return out

    def christoffel(self, x) -> np.ndarray:
        return self._interp(self.field.Gamma, x)

    def metric(self, x) -> np.ndarray:
        return self._interp(self.field.g, x)


@dataclass
class AnalyticConnection:
    """Closed-form connection on a coordinate box (used for oracles and controls)."""

    gamma_fn: object
    metric_fn: object
    lo: np.ndarray
    hi: np.ndarray

    def christoffel(self, x) -> np.ndarray:
        return self.gamma_fn(x)

    def metric(self, x) -> np.ndarray:
        return self.metric_fn(x)

    def contains(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))


def standard_connection(lam_extent: float = 2.0, t_extent: float = 3.0) -> AnalyticConnection:
    lo = np.array([-lam_extent, -lam_extent, -t_extent])
    return AnalyticConnection(std_christoffel, std_metric, lo, -lo)


def flat_connection(extent: float = 10.0) -> AnalyticConnection:
    return AnalyticConnection(
        lambda x: np.zeros((3, 3, 3)), lambda x: FLAT_METRIC, -extent * np.ones(3), extent * np.ones(3)
    )


def as_connection(obj) -> Connection:
    if isinstance(obj, MetricConnectionField):
        return FieldInterpolator(obj)
    return obj


# ---------------------------------------------------------------------------
# Geodesic integration
# ---------------------------------------------------------------------------


@dataclass
class GeodesicTrace:
    s: np.ndarray
    x: np.ndarray
    v: np.ndarray
    causal_type: str
    causal_values: np.ndarray
    accepted_steps: int
    rejected_steps: int
    complete: bool
    exit_point: np.ndarray | None = None

    def length(self) -> float:
        return float(self.s[-1] - self.s[0]) if len(self.s) else 0.0

    def causal_drift(self) -> float:
        return float(np.max(np.abs(self.causal_values - self.causal_values[0])))

    def to_csv(self, path) -> None:
        write_polyline_csv(path, self.s, self.x, [self.causal_type] * len(self.s))


def _spray(conn: Connection, y: np.ndarray) -> np.ndarray:
    x, v = y[:3], y[3:]
    G = conn.christoffel(x)
    return np.concatenate([v, -np.einsum("abc,b,c->a", G, v, v)])


def _rk4(conn, y, h):
    k1 = _spray(conn, y)
    k2 = _spray(conn, y + 0.5 * h * k1)
    k3 = _spray(conn, y + 0.5 * h * k2)
    k4 = _spray(conn, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_geodesic(
    conn,
    x0,
    v0,
    length: float,
    step: float = 0.01,
    tol: float = 1e-10,
    min_step: float = 1e-7,
    on_exit: str = "raise",
    band: float = CLASSIFY_BAND,
) -> GeodesicTrace:
    """Integrate x'' = -Gamma(x', x') with RK4 and step-doubling error control.

    ``length`` may be negative to integrate backwards.  On leaving the region
    where the connection is available, ``on_exit='raise'`` raises LeftDomain
    (carrying the exit point and the partial trace), ``'stop'`` returns the
    partial trace with ``complete=False``.
    """
    conn = as_connection(conn)
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    if not conn.contains(x0):
        raise LeftDomain("start point lies outside the connection domain", exit_point=x0)
    g0 = conn.metric(x0)
    ctype = classify(g0, v0, band)
    sign = 1.0 if length >= 0 else -1.0
    total = abs(length)
    y = np.concatenate([x0, v0])
    s = 0.0
    h = min(step, total) if total > 0 else step
    S, X, V, C = [0.0], [x0.copy()], [v0.copy()], [causal_value(g0, v0)]
    acc = rej = 0
    exit_point = None
    while s < total - 1e-15:
        h = min(h, total - s)
        try:
            full = _rk4(conn, y, sign * h)
            half = _rk4(conn, _rk4(conn, y, sign * h / 2), sign * h / 2)
            inside = conn.contains(half[:3]) and conn.contains(full[:3])
        except (IndexError, ValueError):
            inside = False
        if not inside:
            if h > min_step:
                h /= 2
                rej += 1
                continue
            exit_point = y[:3].copy()
            break
        err = np.max(np.abs(half - full)) / 15.0
        if err > tol and h > min_step:
            h /= 2
            rej += 1
            continue
        y = half + (half - full) / 15.0
        s += h
        acc += 1
        S.append(sign * s)
        X.append(y[:3].copy())
        V.append(y[3:].copy())
        C.append(causal_value(conn.metric(y[:3]), y[3:]))
        if err < tol / 64:
            h = min(2 * h, step)
    trace = GeodesicTrace(np.array(S), np.array(X), np.array(V), ctype, np.array(C), acc, rej, exit_point is None, exit_point)
    if exit_point is not None and on_exit == "raise":
        err = LeftDomain(f"geodesic left the connection domain near {exit_point}", exit_point=exit_point)
        err.trace = trace
        raise err
    return trace


def closest_return(trace: GeodesicTrace, skip: float = 0.5) -> tuple[float, float]:
    """Parameter and distance of the closest approach to the start after ``skip``.

    The trace is interpolated by cubic Hermite segments (positions and
    velocities are both stored), so the estimate is accurate to the
    integrator tolerance rather than the sample spacing.
    """
    mask = np.flatnonzero(np.abs(trace.s) > skip)
    if mask.size < 2:
        return float("nan"), float("inf")
    d = np.linalg.norm(trace.x[mask] - trace.x[0], axis=1)
    k = int(mask[np.argmin(d)])
    best = (float(trace.s[k]), float(np.linalg.norm(trace.x[k] - trace.x[0])))
    for i in (k - 1, k):
        if i < mask[0] or i + 1 >= len(trace.s):
            continue
        spline = CubicHermiteSpline(trace.s[i : i + 2], trace.x[i : i + 2], trace.v[i : i + 2])
        res = minimize_scalar(
            lambda u: float(np.linalg.norm(spline(u) - trace.x[0])),
            bounds=tuple(sorted(trace.s[i : i + 2])),
            method="bounded",
            options={"xatol": 1e-13},
        )
        if res.fun < best[1]:
            best = (float(res.x), float(res.fun))
    return best


# ---------------------------------------------------------------------------
# Incidence sets
# ---------------------------------------------------------------------------


@dataclass
class IncidenceSet:
    kind: str
    anchor: dict
    params: np.ndarray  # t for C_p / C_pv, psi for C_pq, (psi, t) for S_p
    points: np.ndarray  # (n, 3) coordinates in the chart listed in ``charts``
    charts: np.ndarray
    tangents: np.ndarray
    residuals: np.ndarray
    closed: bool = False
    gap: float = float("nan")
    causal: list = field(default_factory=list)
    causal_values: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def sphere_points(self) -> np.ndarray:
        """(S^2 point, t) for each sample, independent of the chart."""
        out = np.zeros((len(self.points), 4))
        for i, (x, ch) in enumerate(zip(self.points.reshape(-1, 3), self.charts.ravel())):
            out[i, :3] = stereographic(PointCP1(int(ch), complex(x[0], x[1])))
            out[i, 3] = x[2]
        return out

    def chart0_points(self) -> np.ndarray:
        pts = self.points.reshape(-1, 3).copy()
        for i, ch in enumerate(self.charts.ravel()):
            if ch == 1:
                lam = PointCP1(1, complex(pts[i, 0], pts[i, 1])).converted()
                pts[i, :2] = (lam.value.real, lam.value.imag)
        return pts

    def to_csv(self, path) -> None:
        pts = self.chart0_points()
        causal = self.causal or [""] * len(pts)
        write_polyline_csv(path, np.arange(len(pts), dtype=float), pts, causal)

    def report(self) -> dict:
        return {
            "kind": self.kind,
            "anchor": self.anchor,
            "n_points": int(len(self.points.reshape(-1, 3))),
            "closed": bool(self.closed),
            "gap": float(self.gap),
            "max_residual": float(np.max(self.residuals)) if self.residuals.size else 0.0,
            "causal_types": sorted(set(self.causal)),
            **{k: v for k, v in self.extra.items() if isinstance(v, (int, float, str, bool))},
        }


def write_polyline_csv(path, s, pts, causal) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "lambda_re", "lambda_im", "t", "causal_type"])
        for si, p, c in zip(s, pts, causal):
            w.writerow([format_number(si), format_number(p[0]), format_number(p[1]), format_number(p[2]), c])


def _inverse_chart(chart: int) -> MoebiusMap:
    """Map from a chart coordinate to the chart-0 coordinate."""
    return MoebiusMap.identity() if chart == 0 else MoebiusMap(0, 1, 1, 0)


def _frame_point(M: MoebiusMap, p: PointCP1) -> complex:
    q = M.apply_point(p)
    if q.chart != 0:
        raise TwistorLabError("incidence point maps to infinity in the disk frame")
    return complex(q.value)


def _frame_tangent(M: MoebiusMap, p: PointCP1, v: complex) -> complex:
    """Push a chart tangent vector v at p through M (to frame coordinates)."""
    return complex((M @ _inverse_chart(p.chart)).derivative(p.value) * v)


def _second_derivative(coeffs, z):
    l = np.arange(1, len(coeffs))
    return holomorphic_derivative(l * coeffs[1:], z)


def _boundary_terms(geom: NodeGeometry, theta: float):
    """F1, dF1/dtheta, d2F1/dtheta2 and W1, dW1/dtheta at e^{i theta}."""
    w = np.exp(1j * theta)
    f1 = geom.F1_at(w)
    d1 = geom.dF1(w)
    d2 = _second_derivative(geom.F1, w)
    ft = 1j * w * d1
    ftt = -w * d1 - w * w * d2
    W = geom.W1_at(w)
    Wt = 1j * w * geom.dW1(w)
    return f1, ft, ftt, W, Wt


class IncidenceSolver:
    """Root finds on the disk family of one embedding."""

    def __init__(self, N: EmbeddingN, config: SolverConfig = SolverConfig(), tol: float = INCIDENCE_TOL, max_iter: int = 25):
        self.N = N
        self.config = config
        self.tol = tol
        self.max_iter = max_iter
        self._u = {}

    # -- disk access -------------------------------------------------------

    def geometry(self, x, chart: int = 0) -> NodeGeometry:
        geom = node_geometry(self.N, x, self.config, chart=chart, u0=self._u.get(chart))
        self._u[chart] = geom.sol.u
        return geom

    def metric_at(self, geom: NodeGeometry) -> np.ndarray:
        return np.linalg.inv(fit_null_cone(geom).quadratic_form)

    @staticmethod
    def _normalize_chart(x, chart):
        lam = complex(x[0], x[1])
        if abs(lam) > CHART_SWITCH:
            p = PointCP1(chart, lam).converted()
            return np.array([p.value.real, p.value.imag, x[2]]), p.chart, True
        return np.asarray(x, dtype=float), chart, False

    @staticmethod
    def _seed_from_params(params: StandardDiskParams):
        lam = params.lam
        if lam.chart == 0 and abs(lam.value) > CHART_SWITCH:
            lam = lam.converted()
        return np.array([lam.value.real, lam.value.imag, params.t]), lam.chart

    def _newton(self, unknowns, chart, system, label):
        """Generic damped Newton: system(unknowns, chart) -> (r, J, geom)."""
        u = np.array(unknowns, dtype=float)
        last = np.inf
        for it in range(self.max_iter):
            x3 = system.x_of(u)
            x3n, chart, switched = self._normalize_chart(x3, chart)
            if switched:
                u = system.rechart(u, x3n, chart)
            r, J, geom = system(u, chart)
            nr = float(np.max(np.abs(r)))
            if nr < self.tol:
                return u, chart, geom, nr
            delta = np.linalg.lstsq(J, -r, rcond=None)[0]
            scale = 1.0
            if np.max(np.abs(delta[:2])) > 0.25:
                scale = 0.25 / np.max(np.abs(delta[:2]))
            u = u + scale * delta
            if it > 8 and nr > 0.5 * last:
                break
            last = nr
        raise FoliationFailure(f"{label}: incidence Newton did not converge (residual {nr:.3g})")

    # -- C_p --------------------------------------------------------------

    def locate_interior(self, p: PointZ, t: float, seed=None):
        """The (lam, z) with p = disk(lam, t)(z), |z| < 1."""
        if seed is None:
            x3, chart = self._seed_from_params(std_leaf_through(p, t))
            sysm = _InteriorSystem(self, p, t)
            u0 = sysm.rechart(None, x3, chart)
        else:
            u0, chart = seed
            sysm = _InteriorSystem(self, p, t)
        u, chart, geom, res = self._newton(u0, chart, sysm, f"C_p at t={t:g}")
        z = complex(u[2], u[3])
        if abs(z) >= 1:
            raise FoliationFailure(f"C_p at t={t:g}: the incidence point is not interior (|z|={abs(z):.3g})")
        return u, chart, geom, res, sysm

    def incidence_C_p(self, p: PointZ, ts, margin: float = 10 * INCIDENCE_TOL, check_unique: bool = False) -> IncidenceSet:
        if off_N_distance(self.N, p) < margin:
            raise FoliationFailure("p is on (or too close to) N; C_p needs p off N")
        ts = np.asarray(ts, dtype=float)
        pts, charts, tans, res, causal, cvals = [], [], [], [], [], []
        seed = None
        for t in ts:
            u, chart, geom, r, sysm = self.locate_interior(p, t, seed)
            if check_unique:
                u2, chart2, *_ = self.locate_interior(p, t, None)
                if _label_distance(np.array([u[0], u[1], t]), chart, np.array([u2[0], u2[1], t]), chart2) > 1e-6:
                    raise FoliationFailure(f"C_p at t={t:g}: two different disks contain p")
            seed = (u, chart)
            tan = sysm.tangent(u, chart, geom)
            g = self.metric_at(geom)
            pts.append([u[0], u[1], t])
            charts.append(chart)
            tans.append(tan)
            res.append(r)
            cvals.append(causal_value(g, tan))
            causal.append(classify(g, tan, 1e-6))
        return IncidenceSet(
            "C_p", {"p": _point_repr(p)}, ts, np.array(pts), np.array(charts), np.array(tans), np.array(res),
            causal=causal, causal_values=np.array(cvals),
        )

    # -- C_pv -------------------------------------------------------------

    def locate_adapted(self, p: PointZ, v: complex, t: float, seed=None):
        if seed is None:
            x3, chart = self._seed_from_params(std_adapted_disk(p.first, v, t))
            sysm = _AdaptedSystem(self, p, v, t)
            u0 = sysm.rechart(None, x3, chart)
        else:
            u0, chart = seed
            sysm = _AdaptedSystem(self, p, v, t)
        u, chart, geom, r = self._newton(u0, chart, sysm, f"C_pv at t={t:g}")
        if not sysm.oriented(u, geom):
            raise FoliationFailure(f"C_pv at t={t:g}: converged to the disk with the opposite orientation")
        return u, chart, geom, r, sysm

    def incidence_C_pv(self, p: PointZ, v: complex, ts) -> IncidenceSet:
        self._check_on_N(p)
        if v == 0:
            raise ZeroVector("direction v must be nonzero")
        ts = np.asarray(ts, dtype=float)
        pts, charts, tans, res, causal, cvals, thetas = [], [], [], [], [], [], []
        seed = None
        for t in ts:
            u, chart, geom, r, sysm = self.locate_adapted(p, v, t, seed)
            seed = (u, chart)
            tan = sysm.tangent_t(u, geom)
            g = self.metric_at(geom)
            pts.append([u[0], u[1], t])
            charts.append(chart)
            tans.append(tan)
            res.append(r)
            thetas.append(u[2])
            cvals.append(causal_value(g, tan))
            causal.append(classify(g, tan, 1e-4))
        return IncidenceSet(
            "C_pv", {"p": _point_repr(p), "v": [v.real, v.imag]}, ts, np.array(pts), np.array(charts),
            np.array(tans), np.array(res), causal=causal, causal_values=np.array(cvals), extra={"theta": np.array(thetas)},
        )

    # -- S_p --------------------------------------------------------------

    def incidence_S_p(self, p: PointZ, ts, n_psi: int = 16) -> IncidenceSet:
        """Mesh of the null surface through directions psi and heights t.

        Each mesh vertex carries the induced 2x2 form of g on the tangent
        plane spanned by d/dt and d/dpsi (unit vectors); its determinant
        vanishes exactly when the plane is null.
        """
        self._check_on_N(p)
        ts = np.asarray(ts, dtype=float)
        psis = 2 * np.pi * np.arange(n_psi) / n_psi
        pts = np.zeros((n_psi, len(ts), 3))
        charts = np.zeros((n_psi, len(ts)), dtype=int)
        dets = np.zeros((n_psi, len(ts)))
        res = np.zeros((n_psi, len(ts)))
        tans = np.zeros((n_psi, len(ts), 2, 3))
        for a, psi in enumerate(psis):
            v = np.exp(1j * psi)
            seed = None
            for b, t in enumerate(ts):
                u, chart, geom, r, sysm = self.locate_adapted(p, v, t, seed)
                seed = (u, chart)
                Tt = sysm.tangent_t(u, geom)
                Tpsi = sysm.tangent_psi(u, geom)
                g = self.metric_at(geom)
                dets[a, b] = induced_determinant(g, Tt, Tpsi)
                pts[a, b] = (u[0], u[1], t)
                charts[a, b] = chart
                res[a, b] = r
                tans[a, b] = (Tt, Tpsi)
        return IncidenceSet(
            "S_p", {"p": _point_repr(p)}, np.stack(np.meshgrid(psis, ts, indexing="ij"), axis=-1), pts, charts, tans, res,
            extra={"max_induced_det": float(np.max(np.abs(dets))), "induced_det": dets},
        )

    # -- C_pq -------------------------------------------------------------

    def incidence_C_pq(self, p: PointZ, q: PointZ, n_psi: int = 32, closure_tol: float = CLOSURE_TOL, psi0: float = 0.0) -> IncidenceSet:
        self._check_on_N(p)
        self._check_on_N(q)
        if p.first.chordal_distance(q.first) < 1e-8:
            raise ValueError("p and q must be distinct")
        psis = psi0 + 2 * np.pi * np.arange(n_psi + 1) / n_psi
        pts, charts, tans, res, causal, cvals = [], [], [], [], [], []
        seed = None
        for psi in psis:
            v = np.exp(1j * psi)
            sysm = _TwoPointSystem(self, p, q, v)
            if seed is None:
                x3, chart = self._seed_from_params(std_adapted_through(p.first, v, q.first))
                u0 = sysm.rechart(None, x3, chart)
            else:
                u0, chart = seed
            u, chart, geom, r = self._newton(u0, chart, sysm, f"C_pq at psi={psi:g}")
            if not sysm.oriented(u, geom):
                raise FoliationFailure(f"C_pq at psi={psi:g}: wrong boundary orientation at p")
            seed = (u, chart)
            tan = sysm.tangent_psi(u, geom)
            g = self.metric_at(geom)
            pts.append(u[:3].copy())
            charts.append(chart)
            tans.append(tan)
            res.append(r)
            cvals.append(causal_value(g, tan))
            causal.append(classify(g, tan, 1e-6))
        pts, charts = np.array(pts), np.array(charts)
        gap = _label_distance(pts[0], charts[0], pts[-1], charts[-1])
        return IncidenceSet(
            "C_pq", {"p": _point_repr(p), "q": _point_repr(q)}, psis, pts, charts, np.array(tans), np.array(res),
            closed=bool(gap < closure_tol), gap=float(gap), causal=causal, causal_values=np.array(cvals),
        )

    # -- helpers ------------------------------------------------------------

    def _check_on_N(self, p: PointZ, tol: float = 1e-9):
        if off_N_distance(self.N, p) > tol:
            raise ValueError("point is not on N")

    def boundary_point(self, x, theta: float, chart: int = 0) -> PointZ:
        """Point of N on the boundary of the disk at x (chart-aware)."""
        geom = self.geometry(x, chart)
        f1 = geom.F1_at(np.exp(1j * theta))
        P = geom.sol.frame.P
        first = P.inverse().apply_point(PointCP1.from_complex(f1))
        return PointZ(first, tau(self.N.phi_point(first)))

    def interior_point(self, x, z: complex, chart: int = 0) -> PointZ:
        geom = self.geometry(x, chart)
        sol = geom.sol
        f1, f2 = sol.frame_point(z)
        return PointZ(sol.frame.P.inverse().apply_point(PointCP1.from_complex(f1)), sol.frame.S.inverse().apply_point(PointCP1.from_complex(f2)))


def induced_determinant(g: np.ndarray, a, b) -> float:
    """det of g restricted to span(a, b) with both vectors Euclidean-normalized."""
    a = np.asarray(a) / np.linalg.norm(a)
    b = np.asarray(b) / np.linalg.norm(b)
    G = np.array([[a @ g @ a, a @ g @ b], [a @ g @ b, b @ g @ b]])
    return float(np.linalg.det(G))


def off_N_distance(N: EmbeddingN, p: PointZ) -> float:
    """Chordal distance of the second coordinate from the graph value over the first."""
    return p.second.chordal_distance(tau(N.phi_point(p.first)))


def _point_repr(p: PointZ) -> list:
    return [[p.first.chart, p.first.value.real, p.first.value.imag], [p.second.chart, p.second.value.real, p.second.value.imag]]


def _label_distance(x1, c1, x2, c2) -> float:
    s1 = stereographic(PointCP1(int(c1), complex(x1[0], x1[1])))
    s2 = stereographic(PointCP1(int(c2), complex(x2[0], x2[1])))
    return float(np.linalg.norm(s1 - s2) + abs(x1[2] - x2[2]))


def _reseed_theta(geom: NodeGeometry, target: complex) -> float:
    """Boundary angle whose frame value is closest to target (after a chart switch)."""
    n = 256
    th = 2 * np.pi * np.arange(n) / n
    vals = geom.F1_at(np.exp(1j * th))
    return float(th[np.argmin(np.abs(vals - target))])


class _InteriorSystem:
    def __init__(self, solver: IncidenceSolver, p: PointZ, t: float):
        self.s, self.p, self.t = solver, p, t

    def x_of(self, u):
        return np.array([u[0], u[1], self.t])

    def rechart(self, u, x3, chart):
        # the interior parameter is re-found from the new disk
        geom = self.s.geometry(x3, chart)
        target = _frame_point(geom.sol.frame.P, self.p.first)
        zs = np.linspace(-0.95, 0.95, 39)
        Z = zs[:, None] + 1j * zs[None, :]
        Z = Z[np.abs(Z) < 1]
        z = Z[np.argmin(np.abs(geom.F1_at(Z) - target))]
        return np.array([x3[0], x3[1], z.real, z.imag])

    def residual_jacobian(self, u, geom):
        z = complex(u[2], u[3])
        P, S = geom.sol.frame.P, geom.sol.frame.S
        p1 = _frame_point(P, self.p.first)
        p2 = _frame_point(S, self.p.second)
        r1 = geom.F1_at(z) - p1
        r2 = geom.F2_at(z) - p2
        W1, W2 = geom.W1_at(z), geom.W2_at(z)
        d1, d2 = geom.dF1(z), geom.dF2(z)
        cols1 = [W1[0], W1[1], d1, 1j * d1]
        cols2 = [W2[0], W2[1], d2, 1j * d2]
        r = np.array([r1.real, r1.imag, r2.real, r2.imag])
        J = np.array([[c.real for c in cols1], [c.imag for c in cols1], [c.real for c in cols2], [c.imag for c in cols2]])
        return r, J

    def __call__(self, u, chart):
        geom = self.s.geometry(self.x_of(u), chart)
        r, J = self.residual_jacobian(u, geom)
        return r, J, geom

    def tangent(self, u, chart, geom):
        z = complex(u[2], u[3])
        _, J = self.residual_jacobian(u, geom)
        Wt1, Wt2 = geom.W1_at(z)[2], geom.W2_at(z)[2]
        rhs = -np.array([Wt1.real, Wt1.imag, Wt2.real, Wt2.imag])
        d = np.linalg.solve(J, rhs)
        return np.array([d[0], d[1], 1.0])


class _AdaptedSystem:
    """Unknowns (Re lam, Im lam, theta) at fixed t."""

    def __init__(self, solver: IncidenceSolver, p: PointZ, v: complex, t: float):
        self.s, self.p, self.v, self.t = solver, p, complex(v), t

    def x_of(self, u):
        return np.array([u[0], u[1], self.t])

    def rechart(self, u, x3, chart):
        geom = self.s.geometry(x3, chart)
        return np.array([x3[0], x3[1], _reseed_theta(geom, _frame_point(geom.sol.frame.P, self.p.first))])

    def _pieces(self, u, geom):
        P = geom.sol.frame.P
        p1 = _frame_point(P, self.p.first)
        vf = _frame_tangent(P, self.p.first, self.v)
        f1, ft, ftt, W, Wt = _boundary_terms(geom, u[2])
        return p1, vf, f1, ft, ftt, W, Wt

    def residual_jacobian(self, u, geom):
        p1, vf, f1, ft, ftt, W, Wt = self._pieces(u, geom)
        r1 = f1 - p1
        rd = np.imag(np.conj(vf) * ft) / abs(vf)
        r = np.array([r1.real, r1.imag, rd])
        J = np.zeros((3, 3))
        for a in range(2):
            J[0, a], J[1, a] = W[a].real, W[a].imag
            J[2, a] = np.imag(np.conj(vf) * Wt[a]) / abs(vf)
        J[0, 2], J[1, 2] = ft.real, ft.imag
        J[2, 2] = np.imag(np.conj(vf) * ftt) / abs(vf)
        return r, J

    def __call__(self, u, chart):
        geom = self.s.geometry(self.x_of(u), chart)
        r, J = self.residual_jacobian(u, geom)
        return r, J, geom

    def oriented(self, u, geom) -> bool:
        p1, vf, f1, ft, *_ = self._pieces(u, geom)
        return bool(np.real(np.conj(vf) * ft) > 0)

    def tangent_t(self, u, geom):
        p1, vf, f1, ft, ftt, W, Wt = self._pieces(u, geom)
        _, J = self.residual_jacobian(u, geom)
        rhs = -np.array([W[2].real, W[2].imag, np.imag(np.conj(vf) * Wt[2]) / abs(vf)])
        d = np.linalg.solve(J, rhs)
        return np.array([d[0], d[1], 1.0])

    def tangent_psi(self, u, geom):
        # rotating v by e^{i psi} changes only the direction equation
        p1, vf, f1, ft, *_ = self._pieces(u, geom)
        _, J = self.residual_jacobian(u, geom)
        rhs = -np.array([0.0, 0.0, -np.real(np.conj(vf) * ft) / abs(vf)])
        d = np.linalg.solve(J, rhs)
        return np.array([d[0], d[1], 0.0])


class _TwoPointSystem:
    """Unknowns (Re lam, Im lam, t, theta_p, theta_q) at fixed direction v."""

    def __init__(self, solver: IncidenceSolver, p: PointZ, q: PointZ, v: complex):
        self.s, self.p, self.q, self.v = solver, p, q, complex(v)

    def x_of(self, u):
        return np.asarray(u[:3])

    def rechart(self, u, x3, chart):
        geom = self.s.geometry(x3, chart)
        P = geom.sol.frame.P
        return np.array([x3[0], x3[1], x3[2], _reseed_theta(geom, _frame_point(P, self.p.first)), _reseed_theta(geom, _frame_point(P, self.q.first))])

    def residual_jacobian(self, u, geom):
        P = geom.sol.frame.P
        p1 = _frame_point(P, self.p.first)
        q1 = _frame_point(P, self.q.first)
        vf = _frame_tangent(P, self.p.first, self.v)
        fp, ftp, fttp, Wp, Wtp = _boundary_terms(geom, u[3])
        fq, ftq, _, Wq, _ = _boundary_terms(geom, u[4])
        rp = fp - p1
        rq = fq - q1
        rd = np.imag(np.conj(vf) * ftp) / abs(vf)
        r = np.array([rp.real, rp.imag, rd, rq.real, rq.imag])
        J = np.zeros((5, 5))
        for a in range(3):
            J[0, a], J[1, a] = Wp[a].real, Wp[a].imag
            J[2, a] = np.imag(np.conj(vf) * Wtp[a]) / abs(vf)
            J[3, a], J[4, a] = Wq[a].real, Wq[a].imag
        J[0, 3], J[1, 3] = ftp.real, ftp.imag
        J[2, 3] = np.imag(np.conj(vf) * fttp) / abs(vf)
        J[3, 4], J[4, 4] = ftq.real, ftq.imag
        self._last = (vf, ftp)
        return r, J

    def __call__(self, u, chart):
        geom = self.s.geometry(self.x_of(u), chart)
        r, J = self.residual_jacobian(u, geom)
        return r, J, geom

    def oriented(self, u, geom) -> bool:
        self.residual_jacobian(u, geom)
        vf, ftp = self._last
        return bool(np.real(np.conj(vf) * ftp) > 0)

    def tangent_psi(self, u, geom):
        _, J = self.residual_jacobian(u, geom)
        vf, ftp = self._last
        rhs = np.zeros(5)
        rhs[2] = np.real(np.conj(vf) * ftp) / abs(vf)
        d = np.linalg.solve(J, rhs)
        return d[:3]


# ---------------------------------------------------------------------------
# Cross-validation and audits
# ---------------------------------------------------------------------------


def polyline_distance(points: np.ndarray, poly: np.ndarray):
    """Closest distance from each point to a polyline; also flags endpoint hits."""
    a = poly[:-1]
    b = poly[1:]
    ab = b - a
    L2 = np.maximum(np.sum(ab * ab, axis=1), 1e-300)
    out = np.zeros(len(points))
    at_end = np.zeros(len(points), dtype=bool)
    for i, x in enumerate(points):
        s = np.clip(np.sum((x - a) * ab, axis=1) / L2, 0.0, 1.0)
        proj = a + s[:, None] * ab
        d = np.linalg.norm(proj - x, axis=1)
        k = int(np.argmin(d))
        out[i] = d[k]
        at_end[i] = (k == 0 and s[k] == 0.0) or (k == len(a) - 1 and s[k] == 1.0)
    return out, at_end


def _dense_run(iset: IncidenceSet, index: int, per_segment: int = 8) -> np.ndarray:
    """Hermite-densified chart-0 stretch of an incidence curve around ``index``.

    Tangents are derivatives with respect to the stored parameter, so the
    cubic Hermite interpolant is consistent with the samples.
    """
    charts = np.asarray(iset.charts).ravel()
    lo = index
    while lo > 0 and charts[lo - 1] == 0:
        lo -= 1
    hi = index
    while hi + 1 < len(charts) and charts[hi + 1] == 0:
        hi += 1
    params = np.asarray(iset.params, dtype=float)[lo : hi + 1]
    pts = iset.points[lo : hi + 1]
    if hi == lo:
        return pts
    spline = CubicHermiteSpline(params, pts, iset.tangents[lo : hi + 1])
    fine = np.linspace(params[0], params[-1], (hi - lo) * per_segment + 1)
    return spline(fine)


def cross_validate(conn, iset: IncidenceSet, index: int | None = None, step: float = 0.01, length: float | None = None) -> dict:
    """Integrate the geodesic tangent to ``iset`` at one of its points and compare.

    The comparison is parameterization-free: each trace point is matched to
    the closest point of the incidence curve (chart-0 stretch through the
    start, Hermite-densified), and trace points projecting onto its ends are
    excluded.
    """
    conn = as_connection(conn)
    if iset.kind == "S_p":
        raise ValueError("cross-validation needs a curve, not a surface")
    charts = np.asarray(iset.charts).ravel()
    inside = np.array([ch == 0 and conn.contains(x) for x, ch in zip(iset.points, charts)])
    if not np.any(inside):
        raise LeftDomain("incidence set does not meet the connection domain")
    if index is None:
        cand = np.flatnonzero(inside)
        index = int(cand[len(cand) // 2])
    poly = _dense_run(iset, index)
    x0 = iset.points[index]
    v0 = np.asarray(iset.tangents[index], dtype=float)
    v0 = v0 / np.linalg.norm(v0)
    if length is None:
        length = float(np.sum(np.linalg.norm(np.diff(poly, axis=0), axis=1)))
    fwd = integrate_geodesic(conn, x0, v0, length, step=step, on_exit="stop")
    bwd = integrate_geodesic(conn, x0, v0, -length, step=step, on_exit="stop")
    pts = np.concatenate([bwd.x[::-1], fwd.x[1:]])
    d, at_end = polyline_distance(pts, poly)
    use = ~at_end
    return {
        "kind": iset.kind,
        "start_index": index,
        "trace_points": int(len(pts)),
        "compared_points": int(np.sum(use)),
        "max_deviation": float(np.max(d[use])) if np.any(use) else float("nan"),
        "mean_deviation": float(np.mean(d[use])) if np.any(use) else float("nan"),
        "trace_causal_type": fwd.causal_type,
        "trace_causal_value": float(fwd.causal_values[0]),
    }


def incidence_length(iset: IncidenceSet, metric_fn) -> float:
    """g-length of a curve from its tangents (periodic trapezoid rule when closed)."""
    pts = iset.chart0_points()
    if np.any(np.asarray(iset.charts) != 0):
        raise ValueError("length needs every sample in chart 0")
    speed = np.array([np.sqrt(abs(T @ metric_fn(x) @ T)) for x, T in zip(pts, iset.tangents)])
    prm = np.asarray(iset.params, dtype=float)
    if iset.closed:
        return float(np.sum(speed[:-1]) * (prm[1] - prm[0]))
    return float(np.trapezoid(speed, prm))


def foliation_audit_fixed_t(solver: IncidenceSolver, n_trials: int = 50, seed: int = 0, t_range=(-2.0, 2.0), n_seeds: int = 3) -> dict:
    """For random p off N and random t, Newton from several seeds must agree on one disk."""
    rng = np.random.default_rng(seed)
    failures = []
    spreads = []
    for trial in range(n_trials):
        p = random_point_off_N(solver.N, rng)
        t = float(rng.uniform(*t_range))
        sols = []
        try:
            u, chart, *_ = solver.locate_interior(p, t)
            sols.append((np.array([u[0], u[1], t]), chart))
            for _ in range(n_seeds - 1):
                jitter = rng.normal(scale=0.05, size=4)
                jitter[2:] *= 0.5
                u2, c2, *_ = solver.locate_interior(p, t, seed=(u + jitter, chart))
                sols.append((np.array([u2[0], u2[1], t]), c2))
        except (FoliationFailure, NoConvergence, TwistorLabError) as exc:
            failures.append({"trial": trial, "t": t, "reason": str(exc)})
            continue
        spread = max(_label_distance(sols[0][0], sols[0][1], x, c) for x, c in sols)
        spreads.append(spread)
        if spread > 1e-6:
            failures.append({"trial": trial, "t": t, "reason": f"distinct disks (spread {spread:.3g})"})
    return {"trials": n_trials, "failures": failures, "max_spread": float(max(spreads, default=0.0))}


def random_point_off_N(N: EmbeddingN, rng, min_distance: float = 0.05) -> PointZ:
    while True:
        p = PointZ.from_complex(complex(*rng.normal(size=2)), complex(*rng.normal(size=2)))
        if off_N_distance(N, p) > min_distance:
            return p


def boundary_foliation_audit(solver: IncidenceSolver, p: PointZ, ts) -> dict:
    """Boundary circles of the disks along C_p must be pairwise disjoint on N."""
    iset = solver.incidence_C_p(p, ts)
    curves = []
    for x, ch in zip(iset.points, iset.charts):
        geom = solver.geometry(x, int(ch))
        curves.append(geom.sol.eta1)
    margins = []
    for i in range(len(curves)):
        for j in range(i + 1, len(curves)):
            d = chordal_distance(curves[i][:, None], curves[j][None, :])
            margins.append(float(np.min(d)))
    return {"n_circles": len(curves), "min_pairwise_distance": float(min(margins)), "disjoint": bool(min(margins) > 0)}


def transversality_angle(solver: IncidenceSolver, x, z1: complex, z2: complex) -> float:
    """Angle (radians, Euclidean) between the C_p tangents of two interior points at x."""
    tans = []
    for z in (z1, z2):
        p = solver.interior_point(x, z)
        u, chart, geom, _, sysm = solver.locate_interior(p, float(x[2]), seed=(np.array([x[0], x[1], z.real, z.imag]), 0))
        tans.append(sysm.tangent(u, chart, geom))
    a, b = (t / np.linalg.norm(t) for t in tans)
    return float(np.arccos(np.clip(abs(a @ b), -1.0, 1.0)))


def boundary_direction(solver: IncidenceSolver, x, theta: float, chart: int = 0) -> tuple[PointZ, complex]:
    """Boundary point of the disk at x and its adapted tangent, in the chart of the point."""
    geom = solver.geometry(x, chart)
    p = solver.boundary_point(x, theta, chart)
    _, ft, *_ = _boundary_terms(geom, theta)
    back = geom.sol.frame.P @ _inverse_chart(p.first.chart)
    return p, complex(ft / back.derivative(p.first.value))


def null_plane_residual(solver: IncidenceSolver, x, theta: float) -> float:
    """Induced determinant of g on the S_p tangent plane at a boundary point of the disk at x."""
    p, v = boundary_direction(solver, x, theta)
    geom = solver.geometry(x)
    sysm = _AdaptedSystem(solver, p, v, float(x[2]))
    u = np.array([x[0], x[1], theta])
    g = solver.metric_at(geom)
    return induced_determinant(g, sysm.tangent_t(u, geom), sysm.tangent_psi(u, geom))


def trace_report(trace: GeodesicTrace) -> str:
    return json.dumps(
        {
            "causal_type": trace.causal_type,
            "length": trace.length(),
            "complete": trace.complete,
            "accepted_steps": trace.accepted_steps,
            "rejected_steps": trace.rejected_steps,
            "causal_drift": trace.causal_drift(),
            "exit_point": None if trace.exit_point is None else [float(v) for v in trace.exit_point],
        },
        indent=1,
    )
