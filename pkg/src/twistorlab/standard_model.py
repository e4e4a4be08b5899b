"""Closed-form model of the unperturbed disk family.

The standard disk with parameters (lam, t) is the holomorphic disk
z -> (F1(z), F2(z)) in CP^1 x CP^1 whose components are the Moebius maps

    F1(z) = (z + r lam) / (-conj(lam) z + r),  F2(z) = (r z - lam) / (r conj(lam) z + 1)

with r = e^t.  The boundary circle |z| = 1 lands on the fixed set of the
real structure, and the centre z = 0 lands on the antidiagonal (lam, -lam).
The space of parameters is S^2 x R with its de Sitter conformal structure,
which this module also provides as an oracle for the reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cp1_geometry import (
    CircleABC,
    MoebiusMap,
    PointCP1,
    PointZ,
    chordal_distance,
    inverse_stereographic,
    stereographic,
    tau,
    tau_complex,
)


@dataclass(frozen=True)
class StandardDiskParams:
    """Parameters (lam, t) of a standard disk; lam is a two-chart point."""

    lam: PointCP1
    t: float

    @classmethod
    def from_complex(cls, lam, t: float, chart: int = 0) -> "StandardDiskParams":
        return cls(PointCP1(chart, complex(lam)), float(t))

    @property
    def r(self) -> float:
        return float(np.exp(self.t))


def std_first_map(params: StandardDiskParams) -> MoebiusMap:
    """First component of the disk map as a Moebius map of z."""
    r, lam = params.r, params.lam.value
    if params.lam.chart == 0:
        return MoebiusMap(1, r * lam, -np.conj(lam), r)
    # chart 1, lam holds lambda_2 = 1/lambda_1 and z_2 = (conj(l1)/l1) z_1
    return MoebiusMap(np.conj(lam), r, -1, r * lam)


def std_second_map(params: StandardDiskParams) -> MoebiusMap:
    """Second component of the disk map as a Moebius map of z."""
    r, lam = params.r, params.lam.value
    if params.lam.chart == 0:
        return MoebiusMap(r, -lam, r * np.conj(lam), 1)
    return MoebiusMap(r * np.conj(lam), -1, r, lam)


def std_disk_map(params: StandardDiskParams, z) -> PointZ:
    """Point of the disk at parameter z (|z| <= 1), chart aware."""
    zp = PointCP1.from_complex(z)
    return PointZ(std_first_map(params).apply_point(zp), std_second_map(params).apply_point(zp))


def std_disk_arrays(params: StandardDiskParams, z):
    """Vectorized chart-0 values (eta1, eta2) of the disk map."""
    z = np.asarray(z, dtype=complex)
    return std_first_map(params)(z), std_second_map(params)(z)


def std_boundary_circle(params: StandardDiskParams) -> CircleABC:
    """Boundary circle of the first component, oriented by increasing theta."""
    if not np.isfinite(params.t):
        raise ValueError("boundary circle requires finite t")
    f1 = std_first_map(params)
    pts = f1(np.array([1.0, 1j, -1.0]))
    return CircleABC.through_points(*pts)


def std_contains(params: StandardDiskParams, p: PointZ, tol: float = 1e-10) -> str:
    """Classify p as 'interior', 'boundary' or 'outside' of the closed disk."""
    f1 = std_first_map(params)
    f2 = std_second_map(params)
    zp = f1.inverse().apply_point(p.first)
    on_line = f2.apply_point(zp).chordal_distance(p.second) < tol
    if not on_line:
        return "outside"
    if zp.chart == 1:
        return "outside"
    rho = abs(zp.value)
    if abs(rho - 1.0) <= tol:
        return "boundary"
    return "interior" if rho < 1.0 else "outside"


@dataclass(frozen=True)
class MarkedLine:
    """Limit of the disks as t -> +inf or -inf: a projective line with a mark.

    ``factor`` is 1 for a line {lam} x CP^1 (the first coordinate is frozen)
    and 2 for CP^1 x {-lam}.
    """

    factor: int
    fixed: PointCP1
    marked: PointZ


def std_limit_disk(lam, sign: int) -> MarkedLine:
    if not isinstance(lam, PointCP1):
        lam = PointCP1.from_complex(lam)
    minus_lam = PointCP1(lam.chart, -lam.value)
    if sign > 0:
        return MarkedLine(1, lam, PointZ(lam, tau(lam)))
    return MarkedLine(2, minus_lam, PointZ(tau(minus_lam), minus_lam))


def boundary_distance_to_point(params: StandardDiskParams, target: PointCP1, n: int = 64) -> float:
    """Max chordal distance of the first-component boundary from a point."""
    theta = 2 * np.pi * np.arange(n) / n
    eta1 = std_first_map(params)(np.exp(1j * theta))
    return float(np.max(chordal_distance(eta1, target.to_complex())))


# ---------------------------------------------------------------------------
# Incidence oracles on the round sphere
# ---------------------------------------------------------------------------


def _plane_to_params(n, s) -> StandardDiskParams:
    """Disk whose boundary circle is {x : n.x = s} with interior on n.x > s."""
    return StandardDiskParams(inverse_stereographic(n), float(np.arctanh(s)))


def std_leaf_through(p: PointZ, t: float) -> StandardDiskParams:
    """The unique disk at height t whose interior contains p (p off the real set).

    The boundary circle has the first coordinate of p and the reflection of
    its second coordinate as inverse points; the circle at height
    s = tanh(t) is found in closed form on the round sphere.
    """
    x1 = stereographic(p.first)
    x2 = stereographic(tau(p.second))
    d = float(np.clip(x1 @ x2, -1.0, 1.0))
    if 1 - d < 1e-14:
        raise ValueError("point lies on the real set; no interior leaf")
    s = np.tanh(t)
    a, b, c = 1 - s * s, 2 * s * (1 - d), -2 * (1 - d)
    m = (-b + np.sqrt(b * b - 4 * a * c)) / (2 * a)
    k = 1 - m * s
    n = x1 - k * x2
    n = n / np.linalg.norm(n)
    params = _plane_to_params(n, s)
    if std_contains(params, p, tol=1e-8) != "interior":
        raise RuntimeError("leaf construction failed to place p in the interior")
    return params


def tangent_vector_3d(p: PointCP1, v: complex, h: float = 1e-6) -> np.ndarray:
    """Push a chart tangent vector v at p to R^3 through stereographic projection."""
    plus = stereographic(PointCP1(p.chart, p.value + h * v))
    minus = stereographic(PointCP1(p.chart, p.value - h * v))
    return (plus - minus) / (2 * h)


def std_adapted_disk(p: PointCP1, v: complex, t: float) -> StandardDiskParams:
    """Disk at height t whose boundary passes p with tangent positively along v."""
    P = stereographic(p)
    V = tangent_vector_3d(p, v)
    V = V - (V @ P) * P
    V = V / np.linalg.norm(V)
    n = np.tanh(t) * P + (1 / np.cosh(t)) * np.cross(P, V)
    return _plane_to_params(n, float(np.tanh(t)))


def std_adapted_through(p: PointCP1, v: complex, q: PointCP1) -> StandardDiskParams:
    """Disk whose boundary passes p (tangent along v) and q."""
    P, Q = stereographic(p), stereographic(q)
    V = tangent_vector_3d(p, v)
    V = V - (V @ P) * P
    n = np.cross(V, P - Q)
    n = n / np.linalg.norm(n)
    if n @ np.cross(P, V) < 0:
        n = -n
    return _plane_to_params(n, float(n @ P))


def std_pencil(p: PointCP1, q: PointCP1, psi) -> list[StandardDiskParams]:
    """Closed loop of oriented circles through p and q, parametrized by psi."""
    P, Q = stereographic(p), stereographic(q)
    e = P - Q
    e = e / np.linalg.norm(e)
    u1 = P + Q
    if np.linalg.norm(u1) < 1e-10:
        helper = np.array([1.0, 0.0, 0.0]) if abs(e[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        u1 = helper - (helper @ e) * e
    u1 = u1 / np.linalg.norm(u1)
    u2 = np.cross(e, u1)
    out = []
    for angle in np.atleast_1d(psi):
        n = np.cos(angle) * u1 + np.sin(angle) * u2
        out.append(_plane_to_params(n, float(n @ P)))
    return out


# ---------------------------------------------------------------------------
# Conformal structure of the parameter space
# ---------------------------------------------------------------------------


def std_metric(x) -> np.ndarray:
    """de Sitter metric 4 cosh^2 t |dlam|^2 / (1+|lam|^2)^2 - dt^2 in (Re lam, Im lam, t)."""
    lx, ly, t = x
    c = 4 * np.cosh(t) ** 2 / (1 + lx * lx + ly * ly) ** 2
    return np.diag([c, c, -1.0])


def std_metric_derivative(x) -> np.ndarray:
    """dg[k, i, j] = d g_ij / d x^k for std_metric."""
    lx, ly, t = x
    q = 1 + lx * lx + ly * ly
    c = 4 * np.cosh(t) ** 2 / q**2
    dc = np.array([-4 * lx / q * c, -4 * ly / q * c, 2 * np.tanh(t) * c])
    dg = np.zeros((3, 3, 3))
    for k in range(3):
        dg[k, 0, 0] = dg[k, 1, 1] = dc[k]
    return dg


def levi_civita(g: np.ndarray, dg: np.ndarray) -> np.ndarray:
    """Christoffel symbols Gamma[a, b, c] of a metric from g and its derivatives."""
    ginv = np.linalg.inv(g)
    # lowered[d, b, c] = 1/2 (d_b g_dc + d_c g_db - d_d g_bc)
    lowered = 0.5 * (
        np.einsum("bdc->dbc", dg) + np.einsum("cdb->dbc", dg) - dg
    )
    return np.einsum("ad,dbc->abc", ginv, lowered)


def std_christoffel(x) -> np.ndarray:
    return levi_civita(std_metric(x), std_metric_derivative(x))


def circle_vector(params: StandardDiskParams) -> np.ndarray:
    """(A, Re B, Im B, C) of the oriented boundary circle."""
    return std_boundary_circle(params).as_vector()


def metric_from_circles(x, h: float = 1e-5, chart: int = 0) -> np.ndarray:
    """Pull back |dB|^2 - dA dC along lam, t by central differences.

    This is an independent route to the conformal structure: it only uses
    the boundary circles, never the disk interiors.
    """
    x = np.asarray(x, dtype=float)
    jac = np.zeros((4, 3))
    for k in range(3):
        dx = np.zeros(3)
        dx[k] = h
        plus = circle_vector(StandardDiskParams(PointCP1(chart, complex(*(x + dx)[:2])), (x + dx)[2]))
        minus = circle_vector(StandardDiskParams(PointCP1(chart, complex(*(x - dx)[:2])), (x - dx)[2]))
        jac[:, k] = (plus - minus) / (2 * h)
    dA, dBr, dBi, dC = jac
    return np.outer(dBr, dBr) + np.outer(dBi, dBi) - 0.5 * (np.outer(dA, dC) + np.outer(dC, dA))


def antidiagonal_point(lam: PointCP1) -> PointZ:
    """The point (lam, -lam) where every disk labelled by lam is centred."""
    return PointZ(lam, PointCP1(lam.chart, -lam.value))


def is_real_point(p: PointZ, tol: float = 1e-12) -> bool:
    return p.second.chordal_distance(tau(p.first)) < tol


__all__ = [
    "StandardDiskParams",
    "MarkedLine",
    "std_first_map",
    "std_second_map",
    "std_disk_map",
    "std_disk_arrays",
    "std_boundary_circle",
    "std_contains",
    "std_limit_disk",
    "std_leaf_through",
    "std_adapted_disk",
    "std_adapted_through",
    "std_pencil",
    "std_metric",
    "std_christoffel",
    "levi_civita",
    "metric_from_circles",
    "antidiagonal_point",
    "tau_complex",
]
