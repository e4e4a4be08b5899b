"""Holomorphic disks with boundary on a perturbed totally real surface.

The surface is N = {(eta, tau(phi(eta)))} where phi is a small deformation
of a Moebius map.  Each disk is found in a normalizing frame: a pair of
Moebius maps (P on the first factor, S~ on the second) that moves the
expected disk close to the reference disk {(z, z)}.  In that frame N is the
graph (xi, 1/conj(xi + h(xi))) over the annulus 1/2 <= |xi| <= 2 and the
boundary of the disk is parametrized as

    Phi1(theta) = exp(i (theta + u(theta))),   Phi2 = 1 / conj(Phi1 + h(Phi1)).

The unknown u is a truncated Fourier series; Newton's method drives the
negative Fourier modes of Phi1 and Phi2 to zero and pins three gauge
conditions (the two centre values and the constant mode of u).
"""

from __future__ import annotations

import csv
import functools
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .cp1_geometry import (
    MoebiusMap,
    PointCP1,
    PointZ,
    chordal_distance,
    tau_complex,
    transporter,
)
from .errors import (
    DegenerateBoundary,
    EmbeddingBoundError,
    EvaluationFailure,
    GraphFailure,
    IllConditioned,
    NoConvergence,
)

from .standard_model import StandardDiskParams, std_first_map, std_second_map

log = logging.getLogger(__name__)

ANNULUS = (0.5, 2.0)


# ---------------------------------------------------------------------------
# Cutoff and embedding
# ---------------------------------------------------------------------------


def _flat(x):
    """exp(-1/x) for x > 0, else 0 (vectorized, no warnings)."""
    x = np.asarray(x, dtype=float)
    pos = x > 0
    out = np.zeros_like(x)
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def smoothstep(x):
    """C-infinity step from 0 (x <= 0) to 1 (x >= 1)."""
    a, b = _flat(x), _flat(1.0 - np.asarray(x, dtype=float))
    return a / (a + b)


def smoothstep_derivative(x):
    x = np.asarray(x, dtype=float)
    a, b = _flat(x), _flat(1.0 - x)
    with np.errstate(divide="ignore", invalid="ignore"):
        da = np.where(x > 0, a / np.where(x > 0, x, 1.0) ** 2, 0.0)
        db = np.where(x < 1, b / np.where(x < 1, 1.0 - x, 1.0) ** 2, 0.0)
    return (da * b + a * db) / (a + b) ** 2


@dataclass(frozen=True)
class Cutoff:
    """Radial bump: 0 outside [inner, outer], 1 on the plateau."""

    inner: float = 0.5
    plateau: tuple[float, float] = (0.75, 4.0 / 3.0)
    outer: float = 2.0

    def __call__(self, rho):
        rho = np.asarray(rho, dtype=float)
        lo, hi = self.plateau
        rise = smoothstep((rho - self.inner) / (lo - self.inner))
        fall = smoothstep((self.outer - rho) / (self.outer - hi))
        return np.where(rho <= hi, rise, fall)

    def derivative(self, rho):
        rho = np.asarray(rho, dtype=float)
        lo, hi = self.plateau
        rise = smoothstep_derivative((rho - self.inner) / (lo - self.inner)) / (lo - self.inner)
        fall = -smoothstep_derivative((self.outer - rho) / (self.outer - hi)) / (self.outer - hi)
        return np.where(rho <= hi, rise, fall)

    def active(self, rho):
        rho = np.asarray(rho, dtype=float)
        return (rho > self.inner) & (rho < self.outer)


@dataclass(frozen=True)
class EmbeddingN:
    """phi(eta) = phi0(eta) + epsilon chi(|eta|) sum c_mn eta^m conj(eta)^n."""

    moebius_part: MoebiusMap = field(default_factory=MoebiusMap.identity)
    bump_terms: tuple[tuple[int, int, complex], ...] = ()
    epsilon: float = 0.0
    cutoff: Cutoff = field(default_factory=Cutoff)

    @classmethod
    def real_slice(cls) -> "EmbeddingN":
        return cls()

    @property
    def is_unperturbed(self) -> bool:
        return self.epsilon == 0.0 or not self.bump_terms

    def _poly(self, eta):
        p = np.zeros_like(eta)
        pe = np.zeros_like(eta)
        pb = np.zeros_like(eta)
        ceta = np.conj(eta)
        for m, n, c in self.bump_terms:
            p = p + c * eta**m * ceta**n
            if m:
                pe = pe + c * m * eta ** (m - 1) * ceta**n
            if n:
                pb = pb + c * n * eta**m * ceta ** (n - 1)
        return p, pe, pb

    def phi(self, eta):
        return self.phi_with_derivatives(eta)[0]

    def phi_with_derivatives(self, eta):
        """Return phi, d phi / d eta, d phi / d conj(eta) on chart-0 values."""
        eta = np.asarray(eta, dtype=complex)
        scalar = eta.ndim == 0
        eta = np.atleast_1d(eta)
        phi0 = self.moebius_part
        val = np.asarray(phi0(eta), dtype=complex).reshape(eta.shape)
        with np.errstate(all="ignore"):
            d_eta = np.asarray(phi0.derivative(eta), dtype=complex).reshape(eta.shape)
        d_bar = np.zeros_like(eta)
        if not self.is_unperturbed:
            finite = np.isfinite(eta)
            rho = np.where(finite, np.abs(eta), np.inf)
            act = self.cutoff.active(rho) & finite
            if np.any(act):
                e = eta[act]
                r = rho[act]
                chi = self.cutoff(r)
                dchi = self.cutoff.derivative(r)
                chi_e = dchi * np.conj(e) / (2 * r)
                chi_b = dchi * e / (2 * r)
                p, pe, pb = self._poly(e)
                eps = self.epsilon
                val[act] += eps * chi * p
                d_eta[act] += eps * (chi_e * p + chi * pe)
                d_bar[act] = eps * (chi_b * p + chi * pb)
        if scalar:
            return complex(val[0]), complex(d_eta[0]), complex(d_bar[0])
        return val, d_eta, d_bar

    def bump_active(self, eta):
        eta = np.asarray(eta, dtype=complex)
        if self.is_unperturbed:
            return np.zeros(eta.shape, dtype=bool)
        finite = np.isfinite(eta)
        rho = np.where(finite, np.abs(eta), np.inf)
        return self.cutoff.active(rho) & finite

    def phi_point(self, p: PointCP1) -> PointCP1:
        """Chart-aware phi; the bump lives in chart 0 within the annulus band."""
        eta = p.to_complex()
        if p.chart == 1 or not bool(self.bump_active(eta)):
            return self.moebius_part.apply_point(p)
        return PointCP1.from_complex(self.phi(eta))

    def on_n_residual(self, eta1, eta2):
        """Chordal distance of eta2 from tau(phi(eta1)), vectorized over chart-0 values."""
        target = tau_complex(self.phi(eta1))
        return chordal_distance(eta2, target)

    def graph_residual(self, eta1, eta2):
        """|eta2 - 1/conj(phi(eta1))| / (1 + |eta2|^2) for finite eta2."""
        eta2 = np.asarray(eta2, dtype=complex)
        target = tau_complex(self.phi(eta1))
        return np.abs(eta2 - target) / (1 + np.abs(eta2) ** 2)

    def perturbation_norm(self, n_rho: int = 128, n_arg: int = 64) -> dict:
        """Sup of |phi - phi0| and of its first derivatives over the bump band."""
        rho = np.linspace(self.cutoff.inner, self.cutoff.outer, n_rho)
        arg = 2 * np.pi * np.arange(n_arg) / n_arg
        eta = (rho[:, None] * np.exp(1j * arg[None, :])).ravel()
        val, de, db = self.phi_with_derivatives(eta)
        val0 = self.moebius_part(eta)
        de0 = self.moebius_part.derivative(eta)
        c0 = float(np.max(np.abs(val - val0)))
        c1 = float(max(np.max(np.abs(de - de0)), np.max(np.abs(db))))
        return {"C0": c0, "C1": max(c0, c1)}

    def check_embedding(self, n_lat: int = 64, n_lon: int = 128) -> float:
        """Minimum of |phi_eta|^2 - |phi_etabar|^2 (scaled) on a sphere grid.

        A positive value means the real Jacobian is nonsingular and orientation
        preserving everywhere on the grid.  Points outside the bump band use
        the Moebius part, whose Jacobian never vanishes.
        """
        lat = (np.arange(n_lat) + 0.5) / n_lat * np.pi
        lon = 2 * np.pi * np.arange(n_lon) / n_lon
        rho = np.tan(lat / 2)
        eta = (rho[:, None] * np.exp(1j * lon[None, :])).ravel()
        _, de, db = self.phi_with_derivatives(eta)
        jac = (np.abs(de) ** 2 - np.abs(db) ** 2) / np.maximum(np.abs(de) ** 2, 1e-300)
        return float(np.min(jac))

    def to_dict(self) -> dict:
        m = self.moebius_part
        return {
            "moebius": [[float(np.real(x)), float(np.imag(x))] for x in (m.a, m.b, m.c, m.d)],
            "epsilon": float(self.epsilon),
            "terms": [
                {"m": int(mm), "n": int(nn), "c_re": float(np.real(c)), "c_im": float(np.imag(c))}
                for mm, nn, c in self.bump_terms
            ],
            "cutoff": {
                "inner": self.cutoff.inner,
                "plateau": list(self.cutoff.plateau),
                "outer": self.cutoff.outer,
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EmbeddingN":
        known = {"moebius", "epsilon", "terms", "cutoff"}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown embedding keys: {sorted(extra)}")
        mob = doc.get("moebius", [[1, 0], [0, 0], [0, 0], [1, 0]])
        moebius = MoebiusMap(*(complex(re, im) for re, im in mob))
        terms = tuple(
            (int(t["m"]), int(t["n"]), complex(t.get("c_re", 0.0), t.get("c_im", 0.0)))
            for t in doc.get("terms", [])
        )
        cut = doc.get("cutoff", {})
        cutoff = Cutoff(
            inner=float(cut.get("inner", 0.5)),
            plateau=tuple(float(x) for x in cut.get("plateau", (0.75, 4.0 / 3.0))),
            outer=float(cut.get("outer", 2.0)),
        )
        return cls(moebius, terms, float(doc.get("epsilon", 0.0)), cutoff)


def single_bump(epsilon: float, m: int = 1, n: int = 1, c: complex = 1.0) -> EmbeddingN:
    """Convenience constructor for a one-term perturbation of the real slice."""
    return EmbeddingN(MoebiusMap.identity(), ((m, n, complex(c)),), float(epsilon))


# ---------------------------------------------------------------------------
# Fourier series
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FourierSeries:
    """Coefficients a_l for l = -M..M, stored in order of increasing l."""

    coeffs: np.ndarray
    M_modes: int

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != (2 * self.M_modes + 1,):
            raise ValueError("coefficient array must have length 2*M_modes+1")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, M: int) -> "FourierSeries":
        return cls(np.zeros(2 * M + 1, dtype=complex), M)

    @classmethod
    def constant(cls, M: int, value: complex) -> "FourierSeries":
        c = np.zeros(2 * M + 1, dtype=complex)
        c[M] = value
        return cls(c, M)

    @classmethod
    def from_grid(cls, values, M: int) -> "FourierSeries":
        """Truncated series from samples on the equispaced grid theta_k = 2 pi k / n."""
        values = np.asarray(values, dtype=complex)
        n = values.size
        if n < 2 * M + 1:
            raise ValueError("grid too small for requested modes")
        spec = np.fft.fft(values) / n
        idx = np.arange(-M, M + 1) % n
        return cls(spec[idx], M)

    @property
    def modes(self) -> np.ndarray:
        return np.arange(-self.M_modes, self.M_modes + 1)

    def mode(self, l: int) -> complex:
        if abs(l) > self.M_modes:
            return 0j
        return complex(self.coeffs[l + self.M_modes])

    @property
    def a0(self) -> complex:
        return self.mode(0)

    def negative_part(self) -> np.ndarray:
        return self.coeffs[: self.M_modes]

    def nonnegative_part(self) -> np.ndarray:
        return self.coeffs[self.M_modes :]

    def to_grid(self, n: int) -> np.ndarray:
        if n < 2 * self.M_modes + 1:
            raise ValueError("grid too small for the stored modes")
        arr = np.zeros(n, dtype=complex)
        arr[self.modes % n] = self.coeffs
        return np.fft.ifft(arr) * n

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.exp(1j * np.multiply.outer(theta, self.modes)) @ self.coeffs

    def derivative(self) -> "FourierSeries":
        return FourierSeries(1j * self.modes * self.coeffs, self.M_modes)

    def resized(self, M: int) -> "FourierSeries":
        out = np.zeros(2 * M + 1, dtype=complex)
        k = min(M, self.M_modes)
        out[M - k : M + k + 1] = self.coeffs[self.M_modes - k : self.M_modes + k + 1]
        return FourierSeries(out, M)

    def __add__(self, other: "FourierSeries") -> "FourierSeries":
        return FourierSeries(self.coeffs + other.coeffs, self.M_modes)

    def __sub__(self, other: "FourierSeries") -> "FourierSeries":
        return FourierSeries(self.coeffs - other.coeffs, self.M_modes)

    def scaled(self, s: complex) -> "FourierSeries":
        return FourierSeries(self.coeffs * s, self.M_modes)

    def tail_ratio(self) -> float:
        """Energy in the last octave of modes relative to the total."""
        k = np.abs(self.modes)
        total = np.sum(np.abs(self.coeffs) ** 2)
        if total == 0:
            return 0.0
        return float(np.sum(np.abs(self.coeffs[k > self.M_modes // 2]) ** 2) / total)


def holomorphic_extension(coeffs_nonneg, z):
    """Evaluate sum_{l >= 0} a_l z^l."""
    return np.polynomial.polynomial.polyval(np.asarray(z, dtype=complex), coeffs_nonneg)


def holomorphic_derivative(coeffs_nonneg, z):
    l = np.arange(1, len(coeffs_nonneg))
    return np.polynomial.polynomial.polyval(np.asarray(z, dtype=complex), l * coeffs_nonneg[1:])


# ---------------------------------------------------------------------------
# Solver configuration and frames
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolverConfig:
    M_modes: int = 64
    newton_tol: float = 1e-11
    max_iter: int = 25
    t_switch: float = 3.0
    blend_width: float = 1.0
    epsilon_max: float = 1e-2
    grid_factor: int = 8
    max_halvings: int = 5
    rcond_min: float = 1e-10
    graph_bound: float = 0.25
    continuation_jump: float = 0.5

    @property
    def n_grid(self) -> int:
        return self.grid_factor * self.M_modes

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "SolverConfig":
        names = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - names
        if extra:
            raise ValueError(f"unknown solver keys: {sorted(extra)}")
        return cls(**doc)


@dataclass(frozen=True)
class Frame:
    """Normalizing frame (P on factor 1, S~ on factor 2) with target centres.

    The factor-2 map acting on Z is S = tau S~ tau, so the frame sends N to
    {(P eta, tau(S~ phi(eta)))}.
    """

    P: MoebiusMap
    S_tilde: MoebiusMap
    c1: complex
    c2: complex
    rescale_r: float = 1.0
    blend: float = 0.0

    @property
    def S(self) -> MoebiusMap:
        return self.S_tilde.tau_conjugate()


def blend_weight(t: float, config: SolverConfig) -> float:
    return float(smoothstep((abs(t) - config.t_switch) / config.blend_width))


def _affine_moebius(N: EmbeddingN, q: complex) -> MoebiusMap:
    """phi0 composed with the holomorphic affine Taylor map of phi0^{-1} phi at q."""
    if not np.isfinite(q) or not bool(N.bump_active(q)):
        return N.moebius_part
    phi0 = N.moebius_part
    inv = phi0.inverse()
    val, d_eta, _ = N.phi_with_derivatives(q)
    psi_q = inv(val)
    psi_e = inv.derivative(val) * d_eta
    affine = MoebiusMap(psi_e, psi_q - psi_e * q, 0, 1)
    return phi0 @ affine


def _moebius_power(M: MoebiusMap, s: float) -> MoebiusMap:
    if s == 0.0:
        return MoebiusMap.identity()
    if s == 1.0:
        return M
    log_m = scipy.linalg.logm(M.sl2())
    return MoebiusMap.from_matrix(scipy.linalg.expm(s * log_m))


def _preimage_point(N: EmbeddingN, p: complex, iters: int = 30) -> complex:
    """Solve phi(q) = p by Newton on the holomorphic derivative."""
    q = N.moebius_part.inverse()(p)
    if not np.isfinite(q):
        return q
    for _ in range(iters):
        val, d_eta, _ = N.phi_with_derivatives(q)
        step = (val - p) / d_eta
        q = q - step
        if abs(step) < 1e-15 * (1 + abs(q)):
            break
    return q


def disk_frame(N: EmbeddingN, lam: PointCP1, t: float, config: SolverConfig) -> Frame:
    """Frame for the disk labelled (lam, t).

    For |t| below the switch the frame is the transporter pair (T, T).  Past
    the switch, the local Moebius approximation of phi near the small
    boundary circle is blended in, so that the graph function stays of the
    size of the perturbation instead of growing like e^|t|.  For t > 0 the
    factor-2 map absorbs it; for t < 0 the factor-1 map does.
    """
    if not np.isfinite(t):
        raise ValueError("disk labels require finite t")
    T = transporter(lam.value, t, chart=lam.chart)
    s = blend_weight(t, config)
    minus_lam = PointCP1(lam.chart, -lam.value)
    r = float(np.exp(abs(t))) if abs(t) > config.t_switch else 1.0
    if s == 0.0:
        P = S_tilde = T
    elif t > 0:
        M = _affine_moebius(N, lam.to_complex())
        P = T
        S_tilde = T @ _moebius_power(M, s).inverse()
    else:
        p = PointCP1(lam.chart, lam.value)
        p_far = -1.0 / np.conj(p.to_complex()) if p.to_complex() != 0 else complex(np.inf)
        q = _preimage_point(N, p_far) if np.isfinite(p_far) else p_far
        M = _affine_moebius(N, q)
        P = T @ _moebius_power(M, s)
        S_tilde = T
    c1 = P.apply_point(lam)
    c2 = S_tilde.tau_conjugate().apply_point(minus_lam)
    if c1.chart != 0 or c2.chart != 0:
        raise GraphFailure("frame does not centre the disk in the working chart")
    return Frame(P, S_tilde, c1.value, c2.value, r, s)


class GraphFunction:
    """h(xi) = S~(phi(P^{-1} xi)) - xi with closed-form derivatives."""

    def __init__(self, N: EmbeddingN, P: MoebiusMap, S_tilde: MoebiusMap, check_annulus: bool = True):
        self.N = N
        self.P = P
        self.S_tilde = S_tilde
        self.P_inv = P.inverse()
        self.K = S_tilde @ N.moebius_part @ self.P_inv
        self.check_annulus = check_annulus

    @classmethod
    def from_frame(cls, N: EmbeddingN, frame: Frame) -> "GraphFunction":
        return cls(N, frame.P, frame.S_tilde)

    def __call__(self, xi):
        return self.evaluate(xi)[0]

    def evaluate(self, xi):
        """Return h, dh/dxi, dh/dconj(xi) at chart-0 points xi."""
        xi = np.asarray(xi, dtype=complex)
        scalar = xi.ndim == 0
        xi = np.atleast_1d(xi)
        if self.check_annulus:
            rho = np.abs(xi)
            if np.any(rho < ANNULUS[0] - 1e-12) or np.any(rho > ANNULUS[1] + 1e-12) or not np.all(np.isfinite(rho)):
                raise EvaluationFailure("graph function evaluated outside the working annulus")
        with np.errstate(all="ignore"):
            h = self.K(xi) - xi
            h_xi = self.K.derivative(xi) - 1
        h_bar = np.zeros_like(xi)
        eta = self.P_inv(xi)
        act = self.N.bump_active(eta)
        if np.any(act):
            e = eta[act]
            w, pe, pb = self.N.phi_with_derivatives(e)
            ds = self.S_tilde.derivative(w)
            dpinv = self.P_inv.derivative(xi[act])
            h[act] = self.S_tilde(w) - xi[act]
            h_xi[act] = ds * pe * dpinv - 1
            h_bar[act] = ds * pb * np.conj(dpinv)
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(h_xi)) and np.all(np.isfinite(h_bar))):
            raise GraphFailure("graph function is not finite on the annulus")
        if scalar:
            return complex(h[0]), complex(h_xi[0]), complex(h_bar[0])
        return h, h_xi, h_bar


def local_graph(N: EmbeddingN, T: MoebiusMap, eta):
    """h^T(eta): the transported surface T_*(N) is (xi, 1/conj(xi + h^T(xi)))."""
    return GraphFunction(N, T, T)(eta)


# ---------------------------------------------------------------------------
# Operators and Newton
# ---------------------------------------------------------------------------


def theta_grid(n: int) -> np.ndarray:
    return 2 * np.pi * np.arange(n) / n


def phi_operators(u: FourierSeries, h: Callable, n_grid: int | None = None):
    """Boundary functions (Phi1, Phi2) as Fourier series on the n_grid samples.

    ``h`` may be a GraphFunction or any callable returning h(xi).
    """
    n = n_grid or 8 * u.M_modes
    theta = theta_grid(n)
    phi1 = np.exp(1j * (theta + u.to_grid(n)))
    hv = h.evaluate(phi1)[0] if hasattr(h, "evaluate") else np.asarray(h(phi1), dtype=complex)
    phi2 = 1.0 / np.conj(phi1 + hv)
    M_out = n // 2 - 1
    return FourierSeries.from_grid(phi1, M_out), FourierSeries.from_grid(phi2, M_out)


def linearized_phi(u: FourierSeries, h: GraphFunction, u_dot: FourierSeries, n_grid: int | None = None):
    """Derivative of (Phi1, Phi2) in u along u_dot (h fixed), as grid values."""
    n = n_grid or 8 * u.M_modes
    theta = theta_grid(n)
    phi1 = np.exp(1j * (theta + u.to_grid(n)))
    hv, h_xi, h_bar = h.evaluate(phi1)
    phi2 = 1.0 / np.conj(phi1 + hv)
    A = -1j * phi2**2 * np.conj(h_bar) * phi1
    B = 1j * phi2**2 * np.conj(phi1) * (1 + np.conj(h_xi))
    ud = u_dot.to_grid(n)
    return 1j * phi1 * ud, A * ud + B * np.conj(ud)


@dataclass
class _Eval:
    phi1: np.ndarray
    phi2: np.ndarray
    A: np.ndarray
    B: np.ndarray
    spec1: np.ndarray
    spec2: np.ndarray


@functools.lru_cache(maxsize=8)
def _mode_matrix(M: int, n: int) -> np.ndarray:
    E = np.exp(1j * np.outer(theta_grid(n), np.arange(-M, M + 1)))
    E.setflags(write=False)
    return E


class NewtonSystem:
    """Real-coordinate Newton system for the boundary value problem."""

    def __init__(self, h: GraphFunction, c1: complex, c2: complex, beta: float, M: int, n_grid: int):
        self.h = h
        self.c1, self.c2, self.beta = complex(c1), complex(c2), float(beta)
        self.M = M
        self.n = n_grid
        self.theta = theta_grid(n_grid)
        self.modes = np.arange(-M, M + 1)
        self.E = _mode_matrix(M, n_grid)
        self.neg_rows = np.arange(-1, -M, -1) % n_grid

    def evaluate(self, u: FourierSeries) -> _Eval:
        ug = u.to_grid(self.n)
        phi1 = np.exp(1j * (self.theta + ug))
        rho = np.abs(phi1)
        if np.any(rho < ANNULUS[0]) or np.any(rho > ANNULUS[1]):
            raise EvaluationFailure("boundary iterate left the working annulus")
        hv, h_xi, h_bar = self.h.evaluate(phi1)
        phi2 = 1.0 / np.conj(phi1 + hv)
        A = -1j * phi2**2 * np.conj(h_bar) * phi1
        B = 1j * phi2**2 * np.conj(phi1) * (1 + np.conj(h_xi))
        return _Eval(phi1, phi2, A, B, np.fft.fft(phi1) / self.n, np.fft.fft(phi2) / self.n)

    def residual(self, u: FourierSeries, ev: _Eval | None = None) -> np.ndarray:
        ev = ev or self.evaluate(u)
        F = np.concatenate(
            [
                ev.spec1[self.neg_rows],
                ev.spec2[self.neg_rows],
                [ev.spec1[0] - self.c1, ev.spec2[0] - self.c2, u.a0 - 1j * self.beta],
            ]
        )
        return np.concatenate([F.real, F.imag])

    def jacobian(self, ev: _Eval) -> np.ndarray:
        E = self.E
        cols = []
        for U in (E, 1j * E):
            d1 = 1j * ev.phi1[:, None] * U
            d2 = ev.A[:, None] * U + ev.B[:, None] * np.conj(U)
            s1 = np.fft.fft(d1, axis=0) / self.n
            s2 = np.fft.fft(d2, axis=0) / self.n
            c0 = np.zeros((1, U.shape[1]), dtype=complex)
            c0[0, self.M] = 1.0 if U is E else 1j
            block = np.concatenate([s1[self.neg_rows], s2[self.neg_rows], s1[:1], s2[:1], c0], axis=0)
            cols.append(np.concatenate([block.real, block.imag], axis=0))
        return np.concatenate(cols, axis=1)

    def factor(self, J: np.ndarray):
        lu, piv = scipy.linalg.lu_factor(J, check_finite=False)
        anorm = np.linalg.norm(J, 1)
        rcond, _ = lapack.dgecon(lu, anorm, norm="1")
        if rcond < 1e-300 or not np.isfinite(rcond):
            raise IllConditioned("Newton Jacobian is singular")
        return lu, piv, float(rcond)

    def to_series(self, x: np.ndarray) -> FourierSeries:
        k = 2 * self.M + 1
        return FourierSeries(x[:k] + 1j * x[k:], self.M)

    @staticmethod
    def to_real(u: FourierSeries) -> np.ndarray:
        return np.concatenate([u.coeffs.real, u.coeffs.imag])

    def solve_linear(self, factors, rhs_complex: np.ndarray) -> FourierSeries:
        rhs = np.concatenate([rhs_complex.real, rhs_complex.imag])
        x = scipy.linalg.lu_solve(factors[:2], rhs, check_finite=False)
        return self.to_series(x)


@dataclass
class NewtonResult:
    u: FourierSeries
    iterations: int
    residual_history: list[float]
    residual_neg_modes: float
    truncation_tail: float
    rcond: float
    system: NewtonSystem
    factors: tuple
    evaluation: _Eval


def newton_solve(
    h: GraphFunction,
    alpha: complex,
    beta: float,
    u0: FourierSeries | None = None,
    config: SolverConfig = SolverConfig(),
    c1: complex | None = None,
    c2: complex | None = None,
) -> NewtonResult:
    """Solve for u with Phi1(0) = c1, Phi2(0) = c2 (default alpha, -alpha), u_0 = i beta.

    Plain Newton with step halving on residual increase.  The Jacobian is
    factored at the final iterate as well, so callers can reuse it for
    implicit derivatives.
    """
    M = config.M_modes
    c1 = alpha if c1 is None else c1
    c2 = -alpha if c2 is None else c2
    system = NewtonSystem(h, c1, c2, beta, M, config.n_grid)
    if u0 is None:
        u = FourierSeries.constant(M, 1j * beta)
    else:
        u = u0.resized(M)
    ev = system.evaluate(u)
    F = system.residual(u, ev)
    norm = float(np.max(np.abs(F)))
    history = [norm]
    it = 0
    while True:
        J = system.jacobian(ev)
        factors = system.factor(J)
        if factors[2] < config.rcond_min:
            raise IllConditioned(f"Newton Jacobian condition estimate {1 / factors[2]:.3g} exceeds bound")
        if norm < config.newton_tol:
            break
        if it >= config.max_iter:
            raise NoConvergence(f"Newton stalled at residual {norm:.3g} after {it} steps")
        step = scipy.linalg.lu_solve(factors[:2], F, check_finite=False)
        x = system.to_real(u)
        lam = 1.0
        for _ in range(config.max_halvings + 1):
            trial = system.to_series(x - lam * step)
            try:
                ev_t = system.evaluate(trial)
                F_t = system.residual(trial, ev_t)
                norm_t = float(np.max(np.abs(F_t)))
            except (EvaluationFailure, GraphFailure):
                norm_t = np.inf
            if norm_t < norm or norm_t < config.newton_tol:
                break
            lam *= 0.5
        else:
            raise NoConvergence(f"step halving failed at residual {norm:.3g}")
        u, ev, F, norm = trial, ev_t, F_t, norm_t
        history.append(norm)
        it += 1
    n = system.n
    band = system.neg_rows
    tail = np.arange(-M, -(n // 2), -1) % n
    neg_res = float(max(np.max(np.abs(ev.spec1[band])), np.max(np.abs(ev.spec2[band]))))
    tail_res = float(max(np.max(np.abs(ev.spec1[tail])), np.max(np.abs(ev.spec2[tail]))))
    if len(history) >= 3:
        log.debug("newton residual ratios %s", [history[i + 1] / max(history[i], 1e-300) for i in range(len(history) - 1)])
    return NewtonResult(u, it, history, neg_res, tail_res, factors[2], system, factors, ev)


# ---------------------------------------------------------------------------
# Disks
# ---------------------------------------------------------------------------


@dataclass
class DiskSolution:
    """A converged disk; boundary samples are chart-0 values in original coordinates."""

    lam: PointCP1
    t: float
    alpha: complex
    beta: float
    u: FourierSeries
    eta1: np.ndarray
    eta2: np.ndarray
    residual_neg_modes: float
    truncation_tail: float
    residual_on_N: float
    residual_on_N_frame: float
    transporter_used: MoebiusMap
    frame: Frame
    iterations: int
    newton: NewtonResult | None = None
    embedding: EmbeddingN | None = None
    config: SolverConfig | None = None

    @property
    def rescale_r(self) -> float:
        return self.frame.rescale_r

    @property
    def base(self):
        return (self.lam, self.t)

    @property
    def target(self):
        return (self.alpha, self.beta)

    @property
    def boundary_samples(self) -> list[PointZ]:
        return [PointZ.from_complex(a, b) for a, b in zip(self.eta1, self.eta2)]

    @property
    def phi1_coeffs(self) -> np.ndarray:
        """Nonnegative Fourier modes of Phi1 in frame coordinates."""
        ev = self.newton.evaluation
        return ev.spec1[: self.newton.system.n // 2]

    @property
    def phi2_coeffs(self) -> np.ndarray:
        ev = self.newton.evaluation
        return ev.spec2[: self.newton.system.n // 2]

    def frame_point(self, z):
        """(F1(z), F2(z)) in frame coordinates from the holomorphic extensions."""
        return holomorphic_extension(self.phi1_coeffs, z), holomorphic_extension(self.phi2_coeffs, z)

    def point(self, z):
        """Disk point at parameter z in original coordinates (chart-0 values)."""
        f1, f2 = self.frame_point(z)
        return self.frame.P.inverse()(f1), self.frame.S.inverse()(f2)

    def interior_graph_margin(self, n: int = 20, seed: int = 0) -> float:
        """Minimum on-N chordal residual over random interior samples."""
        rng = np.random.default_rng(seed)
        z = np.sqrt(rng.uniform(0, 0.9**2, n)) * np.exp(2j * np.pi * rng.uniform(size=n))
        e1, e2 = self.point(z)
        return float(np.min(self.embedding.on_n_residual(e1, e2)))


def solve_disk(
    N: EmbeddingN,
    lam,
    t: float,
    config: SolverConfig = SolverConfig(),
    u0: FourierSeries | None = None,
    frame_t: float | None = None,
    alpha: complex = 0.0,
    retry_other_chart: bool = True,
) -> DiskSolution:
    """Disk labelled (lam, t), solved in the normalizing frame and pulled back.

    ``frame_t`` solves in the frame of a different height and compensates
    through the constant mode of u (beta = t - frame_t).
    """
    if not isinstance(lam, PointCP1):
        lam = PointCP1.from_complex(lam)
    if not np.isfinite(t):
        raise ValueError("solve_disk requires finite t; limits live in standard_model")
    if N.epsilon > config.epsilon_max:
        raise EmbeddingBoundError(
            f"epsilon={N.epsilon:g} exceeds the configured bound epsilon_max={config.epsilon_max:g}"
        )
    try:
        return _solve_in_chart(N, lam, t, config, u0, frame_t, alpha)
    except (NoConvergence, IllConditioned, GraphFailure, EvaluationFailure):
        if not retry_other_chart:
            raise
        other = lam.converted()
        log.info("retrying disk (%s, %g) in chart %d", lam, t, other.chart)
        return _solve_in_chart(N, other, t, config, None, frame_t, alpha)


def _solve_in_chart(N, lam, t, config, u0, frame_t, alpha) -> DiskSolution:
    t_frame = t if frame_t is None else float(frame_t)
    beta = t - t_frame
    frame = disk_frame(N, lam, t_frame, config)
    h = GraphFunction.from_frame(N, frame)
    c1 = frame.c1 + alpha
    c2 = frame.c2 - alpha
    res = newton_solve(h, alpha, beta, u0, config, c1=c1, c2=c2)
    return _finish_solution(N, lam, t, alpha, beta, frame, res, config)


def _finish_solution(N, lam, t, alpha, beta, frame, res: NewtonResult, config) -> DiskSolution:
    ev = res.evaluation
    n = res.system.n
    # boundary values of the holomorphic extensions, i.e. of the actual disk
    f1 = np.fft.ifft(np.where(np.arange(n) < n // 2, ev.spec1, 0)) * n
    f2 = np.fft.ifft(np.where(np.arange(n) < n // 2, ev.spec2, 0)) * n
    eta1 = frame.P.inverse()(f1)
    eta2 = frame.S.inverse()(f2)
    on_n = float(np.max(N.on_n_residual(eta1, eta2)))
    hv = res.system.h(f1)
    on_n_frame = float(np.max(chordal_distance(f2, 1.0 / np.conj(f1 + hv))))
    return DiskSolution(
        lam=lam,
        t=float(t),
        alpha=complex(alpha),
        beta=float(beta),
        u=res.u,
        eta1=eta1,
        eta2=eta2,
        residual_neg_modes=res.residual_neg_modes,
        truncation_tail=res.truncation_tail,
        residual_on_N=on_n,
        residual_on_N_frame=on_n_frame,
        transporter_used=frame.P,
        frame=frame,
        iterations=res.iterations,
        newton=res,
        embedding=N,
        config=config,
    )


def variation_field(sol: DiskSolution, direction) -> tuple[FourierSeries, FourierSeries]:
    """Implicit derivative of the boundary functions along (alpha_dot, beta_dot).

    Solves the linearized Newton system J u_dot = (0, alpha_dot, -alpha_dot,
    i beta_dot) with the factorization stored at convergence.  Returns the
    series of (Phi1_dot, Phi2_dot) in frame coordinates.
    """
    a_dot, b_dot = direction
    u_dot = implicit_u_dot(sol, a_dot, b_dot)
    sysm = sol.newton.system
    ev = sol.newton.evaluation
    ud = u_dot.to_grid(sysm.n)
    d1 = 1j * ev.phi1 * ud
    d2 = ev.A * ud + ev.B * np.conj(ud)
    M_out = sysm.n // 2 - 1
    return FourierSeries.from_grid(d1, M_out), FourierSeries.from_grid(d2, M_out)


def implicit_u_dot(sol: DiskSolution, a_dot: complex, b_dot: float) -> FourierSeries:
    sysm = sol.newton.system
    M = sysm.M
    rhs = np.zeros(2 * M + 1, dtype=complex)
    rhs[2 * M - 2] = a_dot
    rhs[2 * M - 1] = -a_dot
    rhs[2 * M] = 1j * b_dot
    return sysm.solve_linear(sol.newton.factors, rhs)


def boundary_velocity(sol: DiskSolution, threshold: float = 0.1) -> FourierSeries:
    """d Phi1 / d theta = Phi1 (i + i u') in frame coordinates."""
    n = sol.newton.system.n
    ev = sol.newton.evaluation
    up = sol.u.derivative().to_grid(n)
    vel = ev.phi1 * (1j + 1j * up)
    if np.min(np.abs(vel)) < threshold:
        raise DegenerateBoundary(f"boundary velocity dropped to {np.min(np.abs(vel)):.3g}")
    return FourierSeries.from_grid(vel, n // 2 - 1)


# ---------------------------------------------------------------------------
# Derivatives along the parameter space
# ---------------------------------------------------------------------------


def _fd4(f, x0: np.ndarray, j: int, delta: float):
    """Fourth-order central difference of f along coordinate j."""
    e = np.zeros(3)
    e[j] = delta
    fp1, fm1 = f(x0 + e), f(x0 - e)
    fp2, fm2 = f(x0 + 2 * e), f(x0 - 2 * e)
    return (8 * (fp1 - fm1) - (fp2 - fm2)) / (12 * delta)


def _generator(maps: Callable[[np.ndarray], MoebiusMap], x0: np.ndarray, j: int, delta: float) -> np.ndarray:
    """d/dx_j of maps(x0) maps(x)^{-1} as a traceless 2x2 matrix."""
    base = maps(x0).sl2()

    def mat(x):
        m = (maps(x).inverse()).sl2()
        g = base @ m
        # keep the sign branch continuous with the identity
        if np.real(np.trace(g)) < 0:
            g = -g
        return g

    X = _fd4(mat, x0, j, delta)
    return X - 0.5 * np.trace(X) * np.eye(2)


def moebius_field(X: np.ndarray, w):
    """Holomorphic vector field of the sl2 generator X at w, and its w-derivative."""
    w = np.asarray(w, dtype=complex)
    val = X[0, 1] + (X[0, 0] - X[1, 1]) * w - X[1, 0] * w**2
    der = (X[0, 0] - X[1, 1]) - 2 * X[1, 0] * w
    return val, der


@dataclass
class NodeGeometry:
    """Disk at a node with its first-order variation in the coordinates x.

    All complex data live in the node's frame coordinates.  Fourier arrays
    hold the nonnegative modes (holomorphic extension coefficients); the grid
    arrays hold boundary values at theta_k = 2 pi k / n.
    """

    x: np.ndarray
    sol: DiskSolution
    F1: np.ndarray
    F2: np.ndarray
    W1: np.ndarray  # (3, K) coefficients
    W2: np.ndarray
    W1_grid: np.ndarray  # (3, n)
    W2_grid: np.ndarray
    dtheta_F1: np.ndarray  # boundary tangent of factor 1, grid values

    def F1_at(self, z):
        return holomorphic_extension(self.F1, z)

    def F2_at(self, z):
        return holomorphic_extension(self.F2, z)

    def dF1(self, z):
        return holomorphic_derivative(self.F1, z)

    def dF2(self, z):
        return holomorphic_derivative(self.F2, z)

    def W1_at(self, z):
        return np.array([holomorphic_extension(w, z) for w in self.W1])

    def W2_at(self, z):
        return np.array([holomorphic_extension(w, z) for w in self.W2])

    def dW1(self, z):
        return np.array([holomorphic_derivative(w, z) for w in self.W1])

    def dW2(self, z):
        return np.array([holomorphic_derivative(w, z) for w in self.W2])

    def boundary_covectors(self) -> np.ndarray:
        """Real covectors Im(W1_j conj(d_theta F1)), one row per boundary sample."""
        lam = np.imag(self.W1_grid * np.conj(self.dtheta_F1)[None, :]).T
        return lam / np.linalg.norm(lam, axis=1, keepdims=True)

    def lambda_covector(self, z):
        """Complex covector W1_j F2' - W2_j F1' annihilating the projected distribution."""
        return self.W1_at(z) * self.dF2(z) - self.W2_at(z) * self.dF1(z)

    def lambda_covector_dz(self, z):
        d2f1 = holomorphic_derivative(np.arange(1, len(self.F1)) * self.F1[1:], z)
        d2f2 = holomorphic_derivative(np.arange(1, len(self.F2)) * self.F2[1:], z)
        return (
            self.dW1(z) * self.dF2(z)
            + self.W1_at(z) * d2f2
            - self.dW2(z) * self.dF1(z)
            - self.W2_at(z) * d2f1
        )


def coordinate_label(x, chart: int = 0) -> PointCP1:
    return PointCP1(chart, complex(x[0], x[1]))


def node_geometry(
    N: EmbeddingN,
    x,
    config: SolverConfig = SolverConfig(),
    chart: int = 0,
    u0: FourierSeries | None = None,
    delta: float = 1e-4,
) -> NodeGeometry:
    """Solve the disk at x = (Re lam, Im lam, t) and differentiate the family there.

    The x-derivative of u comes from the implicit function theorem; the
    explicit dependence of the residual on x (through the frame and centre
    values) is differenced at fourth order with fixed u, which is cheap
    because it needs no further Newton solves.
    """
    x = np.asarray(x, dtype=float)
    lam = coordinate_label(x, chart)
    sol = solve_disk(N, lam, x[2], config, u0=u0, retry_other_chart=False)
    res = sol.newton
    sysm = res.system
    u = sol.u
    n = sysm.n
    ev = res.evaluation

    def frame_at(xx):
        return disk_frame(N, coordinate_label(xx, chart), xx[2], config)

    n_res = 2 * (2 * sysm.M + 1)

    def residual_at(xx):
        # residual and Phi2 at fixed u, packed into one vector for differencing
        fr = frame_at(xx)
        sm = NewtonSystem(GraphFunction.from_frame(N, fr), fr.c1, fr.c2, sol.beta, sysm.M, n)
        e = sm.evaluate(u)
        return np.concatenate([sm.residual(u, e), e.phi2])

    W1_grid = np.zeros((3, n), dtype=complex)
    W2_grid = np.zeros((3, n), dtype=complex)
    k = 2 * sysm.M + 1
    for j in range(3):
        packed = _fd4(residual_at, x, j, delta)
        dR = packed[:n_res].real
        dphi2_fixed_u = packed[n_res:]
        du = -scipy.linalg.lu_solve(res.factors[:2], dR, check_finite=False)
        ud = (du[:k] + 1j * du[k:])
        ud_grid = FourierSeries(ud, sysm.M).to_grid(n)
        d1 = 1j * ev.phi1 * ud_grid
        d2 = ev.A * ud_grid + ev.B * np.conj(ud_grid) + dphi2_fixed_u
        XP = _generator(lambda xx: frame_at(xx).P, x, j, delta)
        XS = _generator(lambda xx: frame_at(xx).S, x, j, delta)
        W1_grid[j] = d1 + moebius_field(XP, ev.phi1)[0]
        W2_grid[j] = d2 + moebius_field(XS, ev.phi2)[0]
    half = n // 2
    W1 = np.fft.fft(W1_grid, axis=1)[:, :half] / n
    W2 = np.fft.fft(W2_grid, axis=1)[:, :half] / n
    up = u.derivative().to_grid(n)
    return NodeGeometry(
        x=x,
        sol=sol,
        F1=sol.phi1_coeffs.copy(),
        F2=sol.phi2_coeffs.copy(),
        W1=W1,
        W2=W2,
        W1_grid=W1_grid,
        W2_grid=W2_grid,
        dtheta_F1=ev.phi1 * (1j + 1j * up),
    )


# ---------------------------------------------------------------------------
# Families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Square lam grids of side 2*lambda_extent in each chart, uniform t."""

    lambda_resolution: int = 5
    t_max: float = 3.0
    t_resolution: int = 7
    lambda_extent: float = 1.0
    charts: tuple[int, ...] = (0, 1)

    def lambda_values(self) -> np.ndarray:
        return np.linspace(-self.lambda_extent, self.lambda_extent, self.lambda_resolution)

    def t_values(self) -> np.ndarray:
        return np.linspace(-self.t_max, self.t_max, self.t_resolution)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["charts"] = list(self.charts)
        return d


def serpentine_order(nx: int, ny: int, nt: int) -> list[tuple[int, int, int]]:
    """Visit (i, j, k) so that consecutive nodes are grid neighbours."""
    order = []
    for i in range(nx):
        js = range(ny) if i % 2 == 0 else range(ny - 1, -1, -1)
        for jj, j in enumerate(js):
            forward = (i * ny + jj) % 2 == 0
            ks = range(nt) if forward else range(nt - 1, -1, -1)
            order.extend((i, j, k) for k in ks)
    return order


@dataclass
class DiskFamily:
    grid: GridSpec
    embedding: EmbeddingN
    config: SolverConfig
    solutions: dict = field(default_factory=dict)  # (chart, i, j, k) -> DiskSolution
    jumps: dict = field(default_factory=dict)

    def nodes(self) -> Iterable[tuple]:
        return sorted(self.solutions)

    def label(self, key) -> tuple[PointCP1, float]:
        chart, i, j, k = key
        lv = self.grid.lambda_values()
        return PointCP1(chart, complex(lv[i], lv[j])), float(self.grid.t_values()[k])

    def max_residual_on_N(self) -> float:
        return max(s.residual_on_N for s in self.solutions.values())

    def max_neg_modes(self) -> float:
        return max(s.residual_neg_modes for s in self.solutions.values())

    def max_jump(self) -> float:
        return max(self.jumps.values(), default=0.0)

    def query(self, lam, t: float) -> DiskSolution:
        """Interpolate u trilinearly from the grid, then polish with Newton."""
        if not isinstance(lam, PointCP1):
            lam = PointCP1.from_complex(lam)
        if lam.chart not in self.grid.charts or abs(lam.value.real) > self.grid.lambda_extent or abs(lam.value.imag) > self.grid.lambda_extent:
            lam = lam.converted()
        seed = self._interpolate_u(lam, t)
        return solve_disk(self.embedding, lam, t, self.config, u0=seed)

    def _interpolate_u(self, lam: PointCP1, t: float) -> FourierSeries | None:
        lv, tv = self.grid.lambda_values(), self.grid.t_values()
        coords = (lam.value.real, lam.value.imag, t)
        axes = (lv, lv, tv)
        idx, wts = [], []
        for c, ax in zip(coords, axes):
            if len(ax) == 1 or c < ax[0] or c > ax[-1]:
                return None
            i = int(np.clip(np.searchsorted(ax, c) - 1, 0, len(ax) - 2))
            w = (c - ax[i]) / (ax[i + 1] - ax[i])
            idx.append(i)
            wts.append(w)
        acc = None
        for di in (0, 1):
            for dj in (0, 1):
                for dk in (0, 1):
                    w = (wts[0] if di else 1 - wts[0]) * (wts[1] if dj else 1 - wts[1]) * (wts[2] if dk else 1 - wts[2])
                    s = self.solutions.get((lam.chart, idx[0] + di, idx[1] + dj, idx[2] + dk))
                    if s is None:
                        return None
                    term = s.u.coeffs * w
                    acc = term if acc is None else acc + term
        return FourierSeries(acc, self.config.M_modes)

    # -- export ------------------------------------------------------------

    def records(self) -> list[dict]:
        out = []
        for key in self.nodes():
            s = self.solutions[key]
            out.append(
                {
                    "chart": key[0],
                    "i": key[1],
                    "j": key[2],
                    "k": key[3],
                    "lambda_re": float(s.lam.value.real),
                    "lambda_im": float(s.lam.value.imag),
                    "t": float(s.t),
                    "alpha_re": float(s.alpha.real),
                    "alpha_im": float(s.alpha.imag),
                    "beta": float(s.beta),
                    "u_re": [float(v) for v in s.u.coeffs.real],
                    "u_im": [float(v) for v in s.u.coeffs.imag],
                    "residual_neg_modes": s.residual_neg_modes,
                    "residual_on_N": s.residual_on_N,
                    "iterations": s.iterations,
                    "rescale_r": s.rescale_r,
                }
            )
        return out

    def to_json(self) -> str:
        doc = {
            "grid": self.grid.to_dict(),
            "embedding": self.embedding.to_dict(),
            "solver": self.config.to_dict(),
            "nodes": self.records(),
        }
        return json.dumps(doc, indent=1)

    def write_csv(self, path) -> None:
        M = self.config.M_modes
        ucols = [f"u_re_{l}" for l in range(-M, M + 1)] + [f"u_im_{l}" for l in range(-M, M + 1)]
        head = ["chart", "i", "j", "k", "lambda_re", "lambda_im", "t", "alpha_re", "alpha_im", "beta",
                "residual_neg_modes", "residual_on_N", "iterations", "rescale_r"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(head + ucols)
            for rec in self.records():
                row = [format_number(rec[h]) for h in head]
                row += [format_number(v) for v in rec["u_re"] + rec["u_im"]]
                w.writerow(row)

    @classmethod
    def from_json(cls, text: str) -> "DiskFamily":
        doc = json.loads(text)
        grid = GridSpec(**{**doc["grid"], "charts": tuple(doc["grid"]["charts"])})
        fam = cls(grid, EmbeddingN.from_dict(doc["embedding"]), SolverConfig.from_dict(doc["solver"]))
        for rec in doc["nodes"]:
            key = (rec["chart"], rec["i"], rec["j"], rec["k"])
            u = FourierSeries(np.array(rec["u_re"]) + 1j * np.array(rec["u_im"]), fam.config.M_modes)
            lam = PointCP1(rec["chart"], complex(rec["lambda_re"], rec["lambda_im"]))
            fam.solutions[key] = _rebuild(fam, lam, rec["t"], u)
        return fam

    @staticmethod
    def read_csv_coefficients(path) -> dict:
        """Map (chart, i, j, k) -> u coefficient array, parsed from a CSV export."""
        out = {}
        with open(path, newline="") as fh:
            rows = csv.reader(fh)
            head = next(rows)
            iu = next(i for i, name in enumerate(head) if name.startswith("u_re_"))
            for row in rows:
                vals = row[iu:]
                half = len(vals) // 2
                coeffs = np.array([float(v) for v in vals[:half]]) + 1j * np.array([float(v) for v in vals[half:]])
                out[(int(row[0]), int(row[1]), int(row[2]), int(row[3]))] = coeffs
        return out


def _rebuild(fam: DiskFamily, lam: PointCP1, t: float, u: FourierSeries) -> DiskSolution:
    """Re-solve from stored coefficients (converges in zero or one step)."""
    return solve_disk(fam.embedding, lam, t, fam.config, u0=u, retry_other_chart=False)


def deviation_from_standard(sol: DiskSolution) -> float:
    """Max chordal distance between the solved boundary and the standard disk with the same label.

    Each boundary sample is matched to the standard boundary point at the
    radial projection of its standard preimage, so the two parametrizations
    need not agree.
    """
    params = StandardDiskParams(sol.lam, sol.t)
    F1, F2 = std_first_map(params), std_second_map(params)
    z = F1.inverse()(sol.eta1)
    w = z / np.abs(z)
    d1 = chordal_distance(sol.eta1, F1(w))
    d2 = chordal_distance(sol.eta2, F2(w))
    return float(max(np.max(d1), np.max(d2)))


def format_number(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def build_family(
    N: EmbeddingN,
    grid: GridSpec = GridSpec(),
    config: SolverConfig = SolverConfig(),
    progress: Callable[[int, int], None] | None = None,
) -> DiskFamily:
    """Solve every node with warm starts along a serpentine sweep.

    Failed nodes are retried from a cold start once; a remaining frontier of
    failures raises NoConvergence listing the nodes.
    """
    if N.epsilon > config.epsilon_max:
        raise EmbeddingBoundError(
            f"epsilon={N.epsilon:g} exceeds the configured bound epsilon_max={config.epsilon_max:g}"
        )
    fam = DiskFamily(grid, N, config)
    n_l, n_t = grid.lambda_resolution, grid.t_resolution
    order = serpentine_order(n_l, n_l, n_t)
    total = len(order) * len(grid.charts)
    done = 0
    failed = []
    for chart in grid.charts:
        prev = None
        for i, j, k in order:
            key = (chart, i, j, k)
            lam, t = fam.label(key)
            try:
                sol = solve_disk(N, lam, t, config, u0=prev.u if prev else None, retry_other_chart=False)
            except (NoConvergence, IllConditioned, GraphFailure, EvaluationFailure):
                try:
                    sol = solve_disk(N, lam, t, config, retry_other_chart=False)
                except (NoConvergence, IllConditioned, GraphFailure, EvaluationFailure) as exc:
                    failed.append((key, str(exc)))
                    prev = None
                    continue
            if prev is not None:
                fam.jumps[key] = float(np.max(np.abs(sol.u.coeffs - prev.u.coeffs)))
            fam.solutions[key] = sol
            prev = sol
            done += 1
            if progress:
                progress(done, total)
    if failed:
        raise NoConvergence(f"{len(failed)} nodes failed: {failed[:5]}")
    return fam
