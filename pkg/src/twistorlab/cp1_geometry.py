"""Riemann sphere arithmetic: two-chart points, Moebius maps, circles.

A point of CP^1 is stored in one of two affine charts.  Chart 0 holds the
inhomogeneous coordinate eta, chart 1 holds 1/eta.  Points are normalized so
that the stored value never exceeds 2 in modulus, which keeps round-off
bounded near infinity.

Vectorized helpers work on plain complex arrays in chart 0, where infinity is
represented by ``complex(inf)``.  They are used by the solvers; the dataclass
API is used where chart bookkeeping matters (incidence queries, exports).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CHART_SWITCH = 2.0


def _is_inf(z):
    return np.isinf(np.real(z)) | np.isinf(np.imag(z))


@dataclass(frozen=True)
class PointCP1:
    """A point of the Riemann sphere in chart 0 (eta) or chart 1 (1/eta)."""

    chart: int
    value: complex

    def __post_init__(self):
        if self.chart not in (0, 1):
            raise ValueError(f"chart must be 0 or 1, got {self.chart}")
        object.__setattr__(self, "value", complex(self.value))

    @classmethod
    def from_complex(cls, eta) -> "PointCP1":
        """Build a normalized point from a chart-0 coordinate (inf allowed)."""
        eta = complex(eta)
        if _is_inf(eta):
            return cls(1, 0j)
        if abs(eta) > CHART_SWITCH:
            return cls(1, 1.0 / eta)
        return cls(0, eta)

    @classmethod
    def infinity(cls) -> "PointCP1":
        return cls(1, 0j)

    def converted(self) -> "PointCP1":
        """The same point expressed in the other chart (inf if at a pole)."""
        if self.value == 0:
            return PointCP1(1 - self.chart, complex(np.inf))
        return PointCP1(1 - self.chart, 1.0 / self.value)

    def in_chart(self, chart: int) -> complex:
        """Coordinate of the point in the requested chart (may be inf)."""
        if chart == self.chart:
            return self.value
        if self.value == 0:
            return complex(np.inf)
        return 1.0 / self.value

    def normalized(self) -> "PointCP1":
        if abs(self.value) <= CHART_SWITCH:
            return self
        return PointCP1(1 - self.chart, 1.0 / self.value)

    def to_complex(self) -> complex:
        """Chart-0 coordinate, with infinity mapped to complex(inf)."""
        return self.in_chart(0)

    def homogeneous(self) -> np.ndarray:
        """Unit-norm homogeneous coordinates [u0 : u1] with eta = u0/u1."""
        if self.chart == 0:
            v = np.array([self.value, 1.0], dtype=complex)
        else:
            v = np.array([1.0, self.value], dtype=complex)
        return v / np.linalg.norm(v)

    def chordal_distance(self, other: "PointCP1") -> float:
        """Chordal distance |a-b| / sqrt((1+|a|^2)(1+|b|^2)), chart independent."""
        u = self.homogeneous()
        v = other.homogeneous()
        return float(abs(u[0] * v[1] - u[1] * v[0]))


@dataclass(frozen=True)
class PointZ:
    """A point (eta1, eta2) of CP^1 x CP^1."""

    first: PointCP1
    second: PointCP1

    @classmethod
    def from_complex(cls, eta1, eta2) -> "PointZ":
        return cls(PointCP1.from_complex(eta1), PointCP1.from_complex(eta2))


def tau(p: PointCP1) -> PointCP1:
    """The antiholomorphic involution eta -> 1/conj(eta); exact in either chart."""
    return PointCP1(1 - p.chart, np.conj(p.value))


def tau_complex(eta):
    """Vectorized eta -> 1/conj(eta) on chart-0 arrays with inf support."""
    eta = np.asarray(eta, dtype=complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 1.0 / np.conj(eta)
    out = np.where(eta == 0, complex(np.inf), out)
    out = np.where(_is_inf(eta), 0j, out)
    return out if out.ndim else complex(out)


def sigma(p: PointZ) -> PointZ:
    """The real structure (eta1, eta2) -> (tau eta2, tau eta1)."""
    return PointZ(tau(p.second), tau(p.first))


def chordal_distance(a, b):
    """Vectorized chordal distance between chart-0 arrays (inf allowed)."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    ia, ib = _is_inf(a), _is_inf(b)
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        finite = np.abs(a - b) / np.sqrt((1 + np.abs(a) ** 2) * (1 + np.abs(b) ** 2))
        to_inf_a = 1.0 / np.sqrt(1 + np.abs(b) ** 2)
        to_inf_b = 1.0 / np.sqrt(1 + np.abs(a) ** 2)
        # |1/a - 1/b| form for large moduli keeps precision
        big = np.abs(1 / a - 1 / b) / np.sqrt((1 + np.abs(1 / a) ** 2) * (1 + np.abs(1 / b) ** 2))
    use_big = (np.abs(a) > 1) & (np.abs(b) > 1)
    out = np.where(use_big, big, finite)
    out = np.where(ia & ~ib, to_inf_a, out)
    out = np.where(ib & ~ia, to_inf_b, out)
    out = np.where(ia & ib, 0.0, out)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class MoebiusMap:
    """eta -> (a eta + b) / (c eta + d), stored with |ad - bc| = 1."""

    a: complex
    b: complex
    c: complex
    d: complex

    def __post_init__(self):
        a, b, c, d = (complex(x) for x in (self.a, self.b, self.c, self.d))
        det = a * d - b * c
        if det == 0 or not np.isfinite(det):
            raise ValueError("degenerate Moebius map (ad - bc = 0)")
        s = np.sqrt(abs(det))
        for name, val in zip("abcd", (a, b, c, d)):
            object.__setattr__(self, name, val / s)

    @classmethod
    def identity(cls) -> "MoebiusMap":
        return cls(1, 0, 0, 1)

    @classmethod
    def from_matrix(cls, m) -> "MoebiusMap":
        m = np.asarray(m, dtype=complex)
        return cls(m[0, 0], m[0, 1], m[1, 0], m[1, 1])

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]], dtype=complex)

    @property
    def det(self) -> complex:
        return self.a * self.d - self.b * self.c

    def sl2(self) -> np.ndarray:
        """Matrix rescaled to determinant one (branch with Re(trace) >= 0)."""
        m = self.matrix / np.sqrt(self.det)
        if np.real(np.trace(m)) < 0:
            m = -m
        return m

    def __matmul__(self, other: "MoebiusMap") -> "MoebiusMap":
        return MoebiusMap.from_matrix(self.matrix @ other.matrix)

    def inverse(self) -> "MoebiusMap":
        return MoebiusMap(self.d, -self.b, -self.c, self.a)

    def tau_conjugate(self) -> "MoebiusMap":
        """The map tau o T o tau, again Moebius."""
        return MoebiusMap(np.conj(self.d), np.conj(self.c), np.conj(self.b), np.conj(self.a))

    def __call__(self, eta):
        """Apply to chart-0 values (scalar or array); inf maps correctly."""
        eta = np.asarray(eta, dtype=complex)
        inf = _is_inf(eta)
        safe = np.where(inf, 0, eta)
        num = self.a * safe + self.b
        den = self.c * safe + self.d
        with np.errstate(divide="ignore", invalid="ignore"):
            out = num / den
        out = np.where(den == 0, complex(np.inf), out)
        at_inf = self.a / self.c if self.c != 0 else complex(np.inf)
        out = np.where(inf, at_inf, out)
        return out if out.ndim else complex(out)

    def derivative(self, eta):
        """Complex derivative det / (c eta + d)^2."""
        eta = np.asarray(eta, dtype=complex)
        return self.det / (self.c * eta + self.d) ** 2

    def second_derivative(self, eta):
        eta = np.asarray(eta, dtype=complex)
        return -2 * self.c * self.det / (self.c * eta + self.d) ** 3

    def apply_point(self, p: PointCP1) -> PointCP1:
        """Chart-aware application; poles land on chart-1 zero."""
        if p.chart == 0:
            num = self.a * p.value + self.b
            den = self.c * p.value + self.d
        else:
            num = self.a + self.b * p.value
            den = self.c + self.d * p.value
        if abs(num) <= CHART_SWITCH * abs(den):
            return PointCP1(0, num / den)
        return PointCP1(1, den / num)

    def close_to(self, other: "MoebiusMap", tol: float = 1e-12) -> bool:
        """Equality as projective maps."""
        m1, m2 = self.matrix, other.matrix
        k = np.argmax(np.abs(m1))
        ratio = m2.flat[k] / m1.flat[k]
        return bool(np.max(np.abs(m2 - ratio * m1)) < tol)


def apply_moebius(T: MoebiusMap, p: PointCP1) -> PointCP1:
    return T.apply_point(p)


def psl_action(phi: MoebiusMap, p: PointZ) -> PointZ:
    """Induced automorphism (eta1, eta2) -> (phi eta1, tau phi tau eta2)."""
    return PointZ(phi.apply_point(p.first), phi.tau_conjugate().apply_point(p.second))


def transporter(lam, t: float, chart: int = 0) -> MoebiusMap:
    """Moebius map T with T_*(D_(lam,t)) = D_(0,0).

    In chart 0 this is the inverse of the first component of the standard
    disk map, ``T = diag(e^{t/2}, e^{-t/2}) U(lam)`` with the unitary
    ``U(lam) = [[1, -lam], [conj(lam), 1]] / sqrt(1 + |lam|^2)``.  In chart 1
    (``lam`` holding 1/lambda) it is the analogous inverse of the chart-1
    disk formula, which equals a rotation composed with the chart-0 map.
    """
    if isinstance(lam, PointCP1):
        chart, lam = lam.chart, lam.value
    lam = complex(lam)
    if not np.isfinite(t):
        raise ValueError("transporter requires finite t")
    ep, em = np.exp(t / 2), np.exp(-t / 2)
    s = np.sqrt(1 + abs(lam) ** 2)
    if chart == 0:
        return MoebiusMap(ep / s, -ep * lam / s, em * np.conj(lam) / s, em / s)
    return MoebiusMap(ep * lam / s, -ep / s, em / s, em * np.conj(lam) / s)


@dataclass(frozen=True)
class CircleABC:
    """Oriented circle A|w|^2 - B conj(w) - conj(B) w + C = 0 with |B|^2 - AC = 1."""

    A: float
    B: complex
    C: float

    def __post_init__(self):
        A, B, C = float(self.A), complex(self.B), float(self.C)
        q = abs(B) ** 2 - A * C
        if q <= 0:
            raise ValueError("|B|^2 - AC must be positive for a real circle")
        s = np.sqrt(q)
        object.__setattr__(self, "A", A / s)
        object.__setattr__(self, "B", B / s)
        object.__setattr__(self, "C", C / s)

    def negated(self) -> "CircleABC":
        return CircleABC(-self.A, -self.B, -self.C)

    def as_vector(self) -> np.ndarray:
        return np.array([self.A, self.B.real, self.B.imag, self.C])

    @classmethod
    def through_points(cls, w1, w2, w3) -> "CircleABC":
        """Circle through three distinct chart-0 points, oriented w1 -> w2 -> w3.

        The orientation is chosen so that the side to the left of the
        traversal (the bounded side for a counterclockwise circle) has
        negative membership values.
        """
        pts = [complex(w) for w in (w1, w2, w3)]
        for i in range(3):
            for j in range(i + 1, 3):
                if abs(pts[i] - pts[j]) < 1e-14 * (1 + abs(pts[i])):
                    raise ValueError("circle needs three distinct points")
        rows = []
        for w in pts:
            if _is_inf(w):
                rows.append([1.0, 0.0, 0.0, 0.0])
            else:
                rows.append([abs(w) ** 2, -2 * w.real, -2 * w.imag, 1.0])
        _, _, vt = np.linalg.svd(np.array(rows))
        A, Br, Bi, C = vt[-1]
        circ = cls(A, complex(Br, Bi), C)
        if _orientation_sign(circ, pts) < 0:
            circ = circ.negated()
        return circ

    def inversion(self, w):
        """Reflection of chart-0 points in the circle."""
        w = np.asarray(w, dtype=complex)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (self.B * np.conj(w) - self.C) / (self.A * np.conj(w) - np.conj(self.B))
        return out if out.ndim else complex(out)


def _orientation_sign(circ: CircleABC, pts) -> float:
    """+1 if traversing pts in order keeps the negative side of circ on the left."""
    inf = [_is_inf(p) for p in pts]
    if not any(inf):
        w1, w2, w3 = pts
        cross = np.imag(np.conj(w2 - w1) * (w3 - w1))
        scale = abs(w2 - w1) * abs(w3 - w1)
        if abs(cross) > 1e-12 * scale:
            ccw = cross > 0
            return 1.0 if ccw == (circ.A > 0) else -1.0
        a, b = w1, w2
    else:
        k = inf.index(True)
        # the two finite points that are cyclically consecutive after infinity
        a, b = pts[(k + 1) % 3], pts[(k + 2) % 3]
    return 1.0 if _line_left_side_negative(circ, a, b) else -1.0


def _line_left_side_negative(circ: CircleABC, w1, w2) -> bool:
    mid = 0.5 * (w1 + w2)
    left = mid + 1e-3 * 1j * (w2 - w1)
    return circle_membership(circ, left) < 0


def circle_membership(c: CircleABC, w) -> float:
    """A|w|^2 - B conj(w) - conj(B) w + C, chart aware for PointCP1 input.

    For chart-1 points the value is multiplied by |1/w|^2, which keeps the
    sign (the side of the circle) while staying finite at infinity.
    """
    if isinstance(w, PointCP1):
        if w.chart == 1:
            v = w.value
            return float(np.real(c.A - c.B * v - np.conj(c.B) * np.conj(v) + c.C * abs(v) ** 2))
        w = w.value
    w = np.asarray(w, dtype=complex)
    out = c.A * np.abs(w) ** 2 - 2 * np.real(c.B * np.conj(w)) + c.C
    return out if out.ndim else float(out)


def stereographic(p) -> np.ndarray:
    """Unit vector (2 Re l, 2 Im l, 1 - |l|^2) / (1 + |l|^2)."""
    if not isinstance(p, PointCP1):
        p = PointCP1.from_complex(p)
    v = p.value
    if p.chart == 0:
        n = 1 + abs(v) ** 2
        return np.array([2 * v.real, 2 * v.imag, 1 - abs(v) ** 2]) / n
    n = 1 + abs(v) ** 2
    return np.array([2 * v.real, -2 * v.imag, abs(v) ** 2 - 1]) / n


def inverse_stereographic(x) -> PointCP1:
    x = np.asarray(x, dtype=float)
    x = x / np.linalg.norm(x)
    if x[2] > -0.6:
        return PointCP1.from_complex(complex(x[0], x[1]) / (1 + x[2]))
    w = complex(x[0], -x[1]) / (1 - x[2])
    return PointCP1(1, w).normalized()


def stereographic_array(eta) -> np.ndarray:
    """Vectorized stereographic map for chart-0 arrays; returns shape (..., 3)."""
    eta = np.asarray(eta, dtype=complex)
    inf = _is_inf(eta)
    safe = np.where(inf, 0, eta)
    n = 1 + np.abs(safe) ** 2
    out = np.stack([2 * safe.real / n, 2 * safe.imag / n, (1 - np.abs(safe) ** 2) / n], axis=-1)
    out[inf] = np.array([0.0, 0.0, -1.0])
    return out
