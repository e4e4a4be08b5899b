"""Recover the Weyl structure on the parameter space from a family of disks.

Pipeline per grid node x = (Re lam, Im lam, t):

1. The boundary of the disk at x sweeps N; for each boundary sample the
   directions in which the boundary point slides along the boundary form a
   null plane.  Their annihilating covectors are fitted by one quadric,
   which is the inverse metric up to scale (normalized to det = -1).
2. An orthonormal frame e_1 (time-like), e_2, e_3 is built by Gram-Schmidt,
   and each interior point z of the disk gets a fiber coordinate zeta from
   the complex null covector annihilating the projected distribution.
3. The two null vectors spanning that null plane are lifted into the
   distribution; the zeta-components of the lifts are cubic polynomials.
4. Their coefficients determine the connection up to a torsion correction,
   which is fixed by the torsion of the trial connection.

Derivatives across nodes use centered differences with step equal to the
grid spacing (second order by default, fourth order with ``fd_order=4``).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .disk_solver import (
    EmbeddingN,
    NodeGeometry,
    SolverConfig,
    format_number,
    node_geometry,
    serpentine_order,
)
from .errors import (
    ConsistencyFailure,
    DegenerateCone,
    FitFailure,
    RankFailure,
    StencilOutOfRange,
)
from .standard_model import std_christoffel, std_metric

MINKOWSKI = np.diag([-1.0, 1.0, 1.0])
# coordinate form of the flat control: t is the time axis, as for de Sitter
FLAT_METRIC = np.diag([1.0, 1.0, -1.0])
LIFT_RADIUS = 0.5
LIFT_SAMPLES = 8


# ---------------------------------------------------------------------------
# Grids and finite differences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReconstructionGrid:
    """Uniform box in chart-0 coordinates (Re lam, Im lam, t)."""

    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    step: float = 0.05
    shape: tuple[int, int, int] = (17, 17, 9)
    chart: int = 0

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        out = []
        for c, n in zip(self.center, self.shape):
            out.append(c + self.step * (np.arange(n) - (n - 1) / 2))
        return tuple(out)

    def point(self, idx) -> np.ndarray:
        ax = self.axes()
        return np.array([ax[d][idx[d]] for d in range(3)])

    def refined(self, factor: int = 2) -> "ReconstructionGrid":
        """Same box with the step divided by ``factor``."""
        shape = tuple((n - 1) * factor + 1 for n in self.shape)
        return ReconstructionGrid(self.center, self.step / factor, shape, self.chart)

    def to_dict(self) -> dict:
        return {"center": list(self.center), "step": self.step, "shape": list(self.shape), "chart": self.chart}


def fd_weights(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Offsets and weights of the centered first-derivative stencil."""
    if order == 2:
        return np.array([-1, 1]), np.array([-0.5, 0.5])
    if order == 4:
        return np.array([-2, -1, 1, 2]), np.array([1, -8, 8, -1]) / 12.0
    raise ValueError("fd_order must be 2 or 4")


def grid_derivative(arr: np.ndarray, step: float, order: int = 2) -> np.ndarray:
    """Centered derivatives along the three leading axes.

    Returns an array with a new leading axis of length 3; entries whose
    stencil leaves the grid are NaN.
    """
    offs, wts = fd_weights(order)
    reach = int(np.max(np.abs(offs)))
    out = np.full((3,) + arr.shape, np.nan, dtype=np.result_type(arr, float))
    for axis in range(3):
        n = arr.shape[axis]
        if n <= 2 * reach:
            continue
        acc = 0
        for o, w in zip(offs, wts):
            sl = [slice(None)] * arr.ndim
            sl[axis] = slice(reach + o, n - reach + o)
            acc = acc + w * arr[tuple(sl)]
        target = [slice(None)] * arr.ndim
        target[axis] = slice(reach, n - reach)
        out[(axis,) + tuple(target)] = acc / step
    return out


# ---------------------------------------------------------------------------
# Node-level operations
# ---------------------------------------------------------------------------


@dataclass
class NullConeSample:
    x: np.ndarray
    covectors: np.ndarray
    quadratic_form: np.ndarray
    fit_residual: float
    singular_values: np.ndarray

    @property
    def metric(self) -> np.ndarray:
        return np.linalg.inv(self.quadratic_form)


def _quadric_rows(lam: np.ndarray) -> np.ndarray:
    l1, l2, l3 = lam.T
    return np.stack([l1 * l1, l2 * l2, l3 * l3, 2 * l1 * l2, 2 * l1 * l3, 2 * l2 * l3], axis=1)


def _quadric_matrix(q: np.ndarray) -> np.ndarray:
    return np.array([[q[0], q[3], q[4]], [q[3], q[1], q[5]], [q[4], q[5], q[2]]])


def normalize_det(Q: np.ndarray) -> np.ndarray:
    """Scale a symmetric form to det = -1 (flipping sign if needed)."""
    d = np.linalg.det(Q)
    if d == 0:
        raise DegenerateCone("quadric is degenerate")
    if d > 0:
        Q = -Q
        d = -d
    return Q / abs(d) ** (1 / 3)


def fit_quadric(covectors: np.ndarray, cone_tol: float = 1e-6, x=None) -> NullConeSample:
    """Least-squares symmetric Q with Q(lam, lam) = 0 for every row of covectors."""
    lam = np.asarray(covectors, dtype=float)
    lam = lam / np.linalg.norm(lam, axis=1, keepdims=True)
    A = _quadric_rows(lam)
    _, s, vt = np.linalg.svd(A, full_matrices=False)
    rel = s / s[0]
    if rel[-2] < 1e-6:
        raise DegenerateCone(f"null cone fit has a nullspace of dimension > 1 (singular values {rel[-3:]})")
    Q = normalize_det(_quadric_matrix(vt[-1]))
    ev = np.linalg.eigvalsh(Q)
    if not (ev[0] < 0 < ev[1]):
        raise DegenerateCone(f"fitted cone has signature {np.sign(ev)} instead of (-++)")
    resid = float(np.max(np.abs(np.einsum("ka,ab,kb->k", lam, Q, lam))))
    if resid > cone_tol:
        raise DegenerateCone(f"null cone fit residual {resid:.3g} exceeds cone_tol {cone_tol:g}")
    return NullConeSample(np.asarray(x) if x is not None else None, lam, Q, resid, rel)


def fit_null_cone(geom: NodeGeometry, cone_tol: float = 1e-6, stride: int = 8) -> NullConeSample:
    """Fit the inverse metric from the boundary null planes of the disk at a node."""
    return fit_quadric(geom.boundary_covectors()[::stride], cone_tol, geom.x)


@dataclass
class FrameNode:
    """Orthonormal frame (columns of ``e``) with its coframe (rows of ``coframe``)."""

    x: np.ndarray
    e: np.ndarray
    coframe: np.ndarray
    gram: np.ndarray
    fiber_residual: float


def orthonormal_frame(g: np.ndarray) -> np.ndarray:
    """e_1 future unit normal to t-slices, then Gram-Schmidt of d/dx1, d/dx2."""
    Q = np.linalg.inv(g)
    if Q[2, 2] >= 0:
        raise FitFailure("t-slices are not space-like for this metric")
    e1 = -Q[:, 2] / np.sqrt(-Q[2, 2])
    basis = [e1]
    for a in (0, 1):
        v = np.eye(3)[a].copy()
        v = v + (v @ g @ e1) * e1
        for b in basis[1:]:
            v = v - (v @ g @ b) * b
        nrm = v @ g @ v
        if nrm <= 0:
            raise FitFailure("coordinate direction is not space-like after projection")
        basis.append(v / np.sqrt(nrm))
    return np.stack(basis, axis=1)


def fiber_coordinate(covector, e: np.ndarray):
    """zeta with covector proportional to (1+zeta^2) e^1 + (1-zeta^2) e^2 + 2 zeta e^3.

    ``covector`` has its coordinate components on the last axis.  Returns
    zeta and the relative residual of the normal form.
    """
    c = np.asarray(covector) @ e
    c1, c2, c3 = c[..., 0], c[..., 1], c[..., 2]
    # zeta = c3 / (c1 + c2) = (c1 - c2) / c3 on the cone; take the better-conditioned quotient
    with np.errstate(divide="ignore", invalid="ignore"):
        zeta = np.where(np.abs(c1 + c2) >= np.abs(c3), c3 / (c1 + c2), (c1 - c2) / c3)
    resid = np.abs(c2 * c2 + c3 * c3 - c1 * c1) / np.sum(np.abs(c) ** 2, axis=-1)
    return zeta, resid


def normalize_frame(geom: NodeGeometry, Q: np.ndarray, frame_tol: float = 5e-5) -> FrameNode:
    g = np.linalg.inv(Q)
    e = orthonormal_frame(g)
    zeta0, _ = fiber_coordinate(geom.lambda_covector(0.0), e)
    if np.imag(zeta0) < 0:
        e[:, 2] = -e[:, 2]
    gram = e.T @ g @ e
    if np.max(np.abs(gram - MINKOWSKI)) > 1e-8:
        raise FitFailure("frame Gram matrix is not diag(-1, 1, 1)")
    _, resid_b = fiber_coordinate(geom.boundary_covectors(), e)
    zk = lift_sample_points()
    _, resid_i = fiber_coordinate(geom.lambda_covector(zk).T, e)
    resid = float(max(np.max(resid_b), np.max(resid_i)))
    if resid > frame_tol:
        raise FitFailure(f"fiber chart does not match the normal form (residual {resid:.3g})")
    return FrameNode(geom.x, e, np.linalg.inv(e), gram, resid)


def sample_distribution(geom: NodeGeometry, z: complex) -> np.ndarray:
    """Basis (rows) of the preimage of the (0,1)-vectors at the disk point z.

    Coordinates are (d/dx1, d/dx2, d/dt, d/dz, d/dzbar).
    """
    J = holomorphic_jacobian(geom, z)
    _, s, vh = np.linalg.svd(J)
    if s[-1] < 1e-10 * s[0]:
        raise RankFailure(f"the (1,0) differential is not surjective at x={geom.x}, z={z}")
    return vh[2:].conj()


def holomorphic_jacobian(geom: NodeGeometry, z: complex) -> np.ndarray:
    """(1,0)-part of the differential of (x, z) -> disk point, a 2x5 complex matrix."""
    J = np.zeros((2, 5), dtype=complex)
    J[0, :3] = geom.W1_at(z)
    J[1, :3] = geom.W2_at(z)
    J[0, 3] = geom.dF1(z)
    J[1, 3] = geom.dF2(z)
    return J


def real_directions(geom: NodeGeometry, z: complex) -> np.ndarray:
    """Projection to T_xM of the distribution intersected with its conjugate."""
    J = holomorphic_jacobian(geom, z)
    swap = np.eye(5)[[0, 1, 2, 4, 3]]
    stacked = np.concatenate([J, np.conj(J) @ swap], axis=0)
    _, s, vh = np.linalg.svd(stacked)
    v = vh[-1].conj()[:3]
    k = np.argmax(np.abs(v))
    v = v / v[k] * abs(v[k])
    return np.real(v)


def lift_sample_points(n: int = LIFT_SAMPLES, radius: float = LIFT_RADIUS) -> np.ndarray:
    return radius * np.exp(2j * np.pi * np.arange(n) / n)


def null_vectors(zeta, e: np.ndarray):
    """Coordinate vectors of -e1 + e2 + zeta e3 and zeta (e1 + e2) - e3."""
    zeta = np.asarray(zeta)
    g1 = np.stack([-np.ones_like(zeta), np.ones_like(zeta), zeta], axis=-1)
    g2 = np.stack([zeta, zeta, -np.ones_like(zeta)], axis=-1)
    return g1 @ e.T, g2 @ e.T


@dataclass
class FiberData:
    """Per-node quantities needed for the lifts at the sample points z_k."""

    zeta: np.ndarray
    dzeta_dz: np.ndarray
    W1: np.ndarray  # (3, K)
    dF1: np.ndarray


def fiber_data(geom: NodeGeometry, e: np.ndarray, z=None) -> FiberData:
    z = lift_sample_points() if z is None else np.asarray(z)
    lam = geom.lambda_covector(z).T
    dlam = geom.lambda_covector_dz(z).T
    c = lam @ e
    dc = dlam @ e
    s = c[:, 0] + c[:, 1]
    ds = dc[:, 0] + dc[:, 1]
    zeta = c[:, 2] / s
    dzeta = (dc[:, 2] * s - c[:, 2] * ds) / s**2
    return FiberData(zeta, dzeta, geom.W1_at(z), geom.dF1(z))


def lift_values(fd: FiberData, e: np.ndarray, dzeta_dx: np.ndarray):
    """zeta-components alpha(zeta_k), beta(zeta_k) of the lifts into the distribution.

    ``dzeta_dx`` has shape (3, K): the x-derivatives of zeta at fixed z_k.
    """
    out = []
    for v in null_vectors(fd.zeta, e):  # v: (K, 3)
        w = -np.sum(v.T * fd.W1, axis=0) / fd.dF1
        out.append(np.sum(v.T * dzeta_dx, axis=0) + w * fd.dzeta_dz)
    return out[0], out[1]


@dataclass
class LiftFit:
    alpha: np.ndarray
    beta: np.ndarray
    residual: float
    imag_part: float


def fit_cubic(zeta: np.ndarray, alpha_vals: np.ndarray, beta_vals: np.ndarray, degree: int = 3) -> LiftFit:
    V = np.vander(zeta, degree + 1, increasing=True)
    ca, ra, *_ = np.linalg.lstsq(V, alpha_vals, rcond=None)
    cb, rb, *_ = np.linalg.lstsq(V, beta_vals, rcond=None)
    resid = float(max(np.max(np.abs(V @ ca - alpha_vals)), np.max(np.abs(V @ cb - beta_vals))))
    scale = max(1.0, np.max(np.abs(ca)), np.max(np.abs(cb)))
    imag = float(max(np.max(np.abs(ca.imag)), np.max(np.abs(cb.imag))) / scale)
    return LiftFit(ca, cb, resid, imag)


def fit_lift_cubic(geom: NodeGeometry, frame: FrameNode, dzeta_dx: np.ndarray, fd: FiberData | None = None) -> LiftFit:
    """Cubic coefficients (alpha_0..3, beta_0..3) of the lifts at one node."""
    fd = fd or fiber_data(geom, frame.e)
    a_vals, b_vals = lift_values(fd, frame.e, dzeta_dx)
    return fit_cubic(fd.zeta, a_vals, b_vals)


# ---------------------------------------------------------------------------
# Connection algebra (frame components)
# ---------------------------------------------------------------------------


def etas_from_lifts(alpha, beta) -> np.ndarray:
    """Frame components of psi23, psi13, psi12 (trial forms, psi12(e_3) = 0).

    Returns an array (3, 3): rows A = psi^2_3, B = psi^1_3, C = psi^1_2,
    columns the values on e_1, e_2, e_3.
    """
    a0, a1, a2, a3 = alpha
    b0, b1, b2, b3 = beta
    A = [(-a0 - a2 + b1 + b3) / 2, (a0 + a2 + b1 + b3) / 2, a3 - b0]
    B = [(-a0 + a2 + b1 - b3) / 2, (a0 - a2 + b1 - b3) / 2, -a3 - b0]
    C = [(a1 - a3 + b0 - b2) / 2, (-a1 - a3 - b0 - b2) / 2, 0.0 * a0]
    return np.array([A, B, C])


def lift_polynomial(etas: np.ndarray, v_frame: np.ndarray, zeta):
    """zeta-component of the horizontal lift of v: (A+B)/2 - zeta C + zeta^2 (A-B)/2."""
    A, B, C = etas @ v_frame
    return (A + B) / 2 - zeta * C + zeta**2 * (A - B) / 2


def lifts_from_etas(etas: np.ndarray):
    """Inverse of etas_from_lifts: cubic coefficients of the two lifts."""
    A, B, C = etas
    alpha = np.array(
        [
            (-A[0] - B[0] + A[1] + B[1]) / 2,
            (A[2] + B[2]) / 2 + C[0] - C[1],
            -C[2] + (-A[0] + B[0] + A[1] - B[1]) / 2,
            (A[2] - B[2]) / 2,
        ]
    )
    # v = zeta (e1 + e2) - e3
    beta = np.array(
        [
            -(A[2] + B[2]) / 2,
            (A[0] + B[0] + A[1] + B[1]) / 2 + C[2],
            -(C[0] + C[1]) - (A[2] - B[2]) / 2,
            (A[0] - B[0] + A[1] - B[1]) / 2,
        ]
    )
    return alpha, beta


def connection_matrix(etas: np.ndarray, phi: np.ndarray | None = None) -> np.ndarray:
    """omega[i, j, k] = omega^i_j(e_k) for the Weyl-compatible form."""
    A, B, C = etas[..., 0, :], etas[..., 1, :], etas[..., 2, :]
    w = np.zeros(etas.shape[:-2] + (3, 3, 3))
    w[..., 0, 1, :] = C
    w[..., 1, 0, :] = C
    w[..., 0, 2, :] = B
    w[..., 2, 0, :] = B
    w[..., 1, 2, :] = A
    w[..., 2, 1, :] = -A
    if phi is not None:
        for i in range(3):
            w[..., i, i, :] = phi
    return w


def torsion_frame(de: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """T[l, j, k] = de^l(e_j, e_k) + omega^l_k(e_j) - omega^l_j(e_k)."""
    return de + np.swapaxes(omega, -1, -2) - omega


def mu_components(T0: np.ndarray):
    """mu23^l, mu31^l, mu12^l from the trial torsion T0[l, j, k]."""
    mu23 = T0[..., :, 1, 2]
    mu31 = T0[..., :, 2, 0]
    mu12 = T0[..., :, 0, 1]
    return mu23, mu31, mu12


def mu_relation_residual(mu23, mu31, mu12) -> np.ndarray:
    """Max violation of the algebraic identities satisfied by the trial torsion."""
    r = np.stack(
        [
            -mu23[..., 0] - mu31[..., 1],
            mu31[..., 1] - mu12[..., 2],
            mu12[..., 1] + mu31[..., 2],
            mu23[..., 2] + mu12[..., 0],
            mu31[..., 0] + mu23[..., 1],
        ],
        axis=-1,
    )
    return np.max(np.abs(r), axis=-1)


def torsion_correction(mu23, mu31, mu12):
    """f and phi (frame components) making the connection torsion free."""
    f = 0.5 * mu12[..., 2]
    phi = np.stack([mu31[..., 2], mu12[..., 0], mu23[..., 1]], axis=-1)
    return f, phi


def corrected_etas(etas: np.ndarray, f) -> np.ndarray:
    out = np.array(etas, dtype=float, copy=True)
    out[..., 0, 0] += f  # psi23 += f e^1
    out[..., 1, 1] += f  # psi13 += f e^2
    out[..., 2, 2] -= f  # psi12 -= f e^3
    return out


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------


@dataclass
class MetricConnectionField:
    """Metric representative, frame and connection sampled on a grid.

    Arrays are indexed [i, j, k, ...] over the grid axes.  ``valid`` marks
    nodes whose Gamma is available (finite-difference stencil inside the
    grid).
    """

    grid: ReconstructionGrid
    g: np.ndarray
    Gamma: np.ndarray
    a: np.ndarray
    e: np.ndarray | None = None
    f: np.ndarray | None = None
    phi: np.ndarray | None = None
    residuals: dict = field(default_factory=dict)
    fd_order: int = 2
    meta: dict = field(default_factory=dict)
    curvature_order: int = 4

    @property
    def valid(self) -> np.ndarray:
        return np.all(np.isfinite(self.Gamma.reshape(self.Gamma.shape[:3] + (-1,))), axis=-1)

    @property
    def Q(self) -> np.ndarray:
        return np.linalg.inv(self.g)

    def index_of(self, x) -> tuple[int, int, int]:
        ax = self.grid.axes()
        idx = tuple(int(np.argmin(np.abs(ax[d] - x[d]))) for d in range(3))
        if np.max(np.abs(self.grid.point(idx) - np.asarray(x))) > 1e-9 * max(1.0, self.grid.step):
            raise ValueError("point is not a grid node")
        return idx

    def tampered(self, amount: float = 1e-3) -> "MetricConnectionField":
        """Copy with an antisymmetric (torsion-producing) change of Gamma."""
        G = self.Gamma.copy()
        G[..., 0, 1, 2] += amount
        G[..., 0, 2, 1] -= amount
        out = MetricConnectionField(
            self.grid, self.g, G, self.a, self.e, self.f, self.phi, dict(self.residuals), self.fd_order, dict(self.meta), self.curvature_order
        )
        out.residuals["torsion"] = coordinate_torsion(G)
        return out

    def max_residual(self, name: str, margin: int = 0) -> float:
        r = self.residuals[name]
        sl = tuple(slice(margin, n - margin) for n in r.shape[:3])
        vals = r[sl]
        vals = vals[np.isfinite(vals)]
        return float(np.max(vals)) if vals.size else float("nan")

    # -- export ----------------------------------------------------------

    def records(self) -> list[dict]:
        ax = self.grid.axes()
        out = []
        for idx in np.ndindex(*self.grid.shape):
            if not self.valid[idx]:
                continue
            Q = self.Q[idx]
            rec = {
                "i": idx[0], "j": idx[1], "k": idx[2],
                "lambda_re": float(ax[0][idx[0]]),
                "lambda_im": float(ax[1][idx[1]]),
                "t": float(ax[2][idx[2]]),
                "Q": [float(Q[0, 0]), float(Q[1, 1]), float(Q[2, 2]), float(Q[0, 1]), float(Q[0, 2]), float(Q[1, 2])],
                "frame": [float(v) for v in (self.e[idx].T.ravel() if self.e is not None else np.full(9, np.nan))],
                "Gamma": [float(v) for v in self.Gamma[idx].ravel()],
                "a": [float(v) for v in self.a[idx]],
                "f": float(self.f[idx]) if self.f is not None else float("nan"),
                "residuals": {k: float(v[idx]) for k, v in self.residuals.items()},
            }
            out.append(rec)
        return out

    def to_json(self) -> str:
        doc = {"grid": self.grid.to_dict(), "fd_order": self.fd_order, "meta": self.meta, "nodes": self.records()}
        return json.dumps(doc, indent=1, allow_nan=True)

    def write_csv(self, path) -> None:
        recs = self.records()
        res_names = sorted(self.residuals)
        head = ["i", "j", "k", "lambda_re", "lambda_im", "t"]
        head += [f"Q{n}" for n in ("11", "22", "33", "12", "13", "23")]
        head += [f"e{i}_{c}" for i in (1, 2, 3) for c in ("x1", "x2", "t")]
        head += [f"Gamma_{a}{b}{c}" for a in range(3) for b in range(3) for c in range(3)]
        head += ["a_x1", "a_x2", "a_t", "f"] + [f"res_{n}" for n in res_names]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(head)
            for r in recs:
                row = [r["i"], r["j"], r["k"], r["lambda_re"], r["lambda_im"], r["t"]]
                row += r["Q"] + r["frame"] + r["Gamma"] + r["a"] + [r["f"]]
                row += [r["residuals"][n] for n in res_names]
                w.writerow([format_number(v) for v in row])

    def save(self, path) -> None:
        np.savez(
            path,
            grid=json.dumps(self.grid.to_dict()),
            g=self.g,
            Gamma=self.Gamma,
            a=self.a,
            e=self.e if self.e is not None else np.zeros(0),
            f=self.f if self.f is not None else np.zeros(0),
            fd_order=self.fd_order,
            curvature_order=self.curvature_order,
            meta=json.dumps(self.meta),
            **{f"res_{k}": v for k, v in self.residuals.items()},
        )

    @classmethod
    def load(cls, path) -> "MetricConnectionField":
        with np.load(path) as z:
            gd = json.loads(str(z["grid"]))
            grid = ReconstructionGrid(tuple(gd["center"]), gd["step"], tuple(gd["shape"]), gd["chart"])
            res = {k[4:]: z[k] for k in z.files if k.startswith("res_")}
            e = z["e"] if z["e"].size else None
            f = z["f"] if z["f"].size else None
            return cls(
                grid, z["g"], z["Gamma"], z["a"], e, f, None, res, int(z["fd_order"]), json.loads(str(z["meta"])),
                int(z["curvature_order"]),
            )


def coordinate_torsion(Gamma: np.ndarray) -> np.ndarray:
    return np.max(np.abs(Gamma - np.swapaxes(Gamma, -1, -2)).reshape(Gamma.shape[:-3] + (-1,)), axis=-1)


def compatibility_residual(g: np.ndarray, Gamma: np.ndarray, a: np.ndarray, step: float, order: int = 2) -> np.ndarray:
    """max |d_c g_ab - Gamma^d_ca g_db - Gamma^d_cb g_ad - a_c g_ab| per node."""
    dg = grid_derivative(g, step, order)  # [c, i, j, k, a, b]
    dg = np.moveaxis(dg, 0, 3)  # [i, j, k, c, a, b]
    term1 = np.einsum("...dca,...db->...cab", Gamma, g)
    term2 = np.einsum("...dcb,...ad->...cab", Gamma, g)
    resid = dg - term1 - term2 - a[..., :, None, None] * g[..., None, :, :]
    return np.max(np.abs(resid).reshape(resid.shape[:3] + (-1,)), axis=-1)


def ricci_from_gamma(Gamma: np.ndarray, step: float, order: int = 2) -> np.ndarray:
    """Ricci tensor R_bd = R^a_bad of a connection sampled on the grid."""
    dG = np.moveaxis(grid_derivative(Gamma, step, order), 0, 3)  # [..., c, a, d, b] = d_c Gamma^a_db
    # R^a_bcd = d_c G^a_db - d_d G^a_cb + G^a_ce G^e_db - G^a_de G^e_cb
    t1 = np.einsum("...aadb->...bd", dG)  # d_a G^a_db (c = a)
    t2 = np.einsum("...daab->...bd", dG)  # d_d G^a_ab
    t3 = np.einsum("...aae,...edb->...bd", Gamma, Gamma)
    t4 = np.einsum("...ade,...eab->...bd", Gamma, Gamma)
    return t1 - t2 + t3 - t4


def einstein_weyl_residual_array(g: np.ndarray, Gamma: np.ndarray, step: float, order: int = 4, e: np.ndarray | None = None):
    """||R_(ij) - Lambda g_ij||_F / (1 + |Lambda|) per node, in frame components.

    ``order`` is the stencil order used to differentiate Gamma.  The default
    fourth-order stencil keeps the audit's own truncation error well below
    the error already present in a reconstructed Gamma.
    """
    ric = ricci_from_gamma(Gamma, step, order)
    sym = 0.5 * (ric + np.swapaxes(ric, -1, -2))
    ginv = np.linalg.inv(g)
    Lam = np.einsum("...ab,...ab->...", ginv, sym) / 3.0
    diff = sym - Lam[..., None, None] * g
    if e is None:
        e = np.stack([orthonormal_frame(gi) if np.all(np.isfinite(gi)) else np.full((3, 3), np.nan) for gi in g.reshape(-1, 3, 3)]).reshape(g.shape)
    diff_f = np.einsum("...ai,...ab,...bj->...ij", e, diff, e)
    return np.linalg.norm(diff_f, axis=(-2, -1)) / (1 + np.abs(Lam)), Lam


def ew_residual(field: MetricConnectionField, x, margin: int | None = None) -> float:
    """Einstein-Weyl residual at a grid node (given by index tuple or coordinates)."""
    idx = tuple(x) if all(isinstance(v, (int, np.integer)) for v in x) else field.index_of(x)
    reach = int(np.max(np.abs(fd_weights(field.curvature_order)[0])))
    lo = [max(0, i - reach) for i in idx]
    hi = [i + reach + 1 for i in idx]
    for d in range(3):
        if idx[d] - reach < 0 or idx[d] + reach >= field.grid.shape[d]:
            raise StencilOutOfRange(f"node {idx} is within the stencil margin")
    sl = tuple(slice(l, h) for l, h in zip(lo, hi))
    G = field.Gamma[sl]
    if not np.all(np.isfinite(G)):
        raise StencilOutOfRange(f"connection is not available around node {idx}")
    e = field.e[sl] if field.e is not None else None
    res, _ = einstein_weyl_residual_array(field.g[sl], G, field.grid.step, field.curvature_order, e)
    return float(res[reach, reach, reach])


# ---------------------------------------------------------------------------
# Synthetic fields
# ---------------------------------------------------------------------------


def flat_field(grid: ReconstructionGrid) -> MetricConnectionField:
    shape = grid.shape
    g = np.broadcast_to(FLAT_METRIC, shape + (3, 3)).copy()
    Gamma = np.zeros(shape + (3, 3, 3))
    a = np.zeros(shape + (3,))
    e = np.broadcast_to(orthonormal_frame(FLAT_METRIC), shape + (3, 3)).copy()
    fld = MetricConnectionField(grid, g, Gamma, a, e, np.zeros(shape), np.zeros(shape + (3,)), meta={"source": "flat"})
    fld.residuals = synthetic_residuals(fld)
    return fld


def standard_field(grid: ReconstructionGrid) -> MetricConnectionField:
    """Analytic de Sitter metric and its Levi-Civita connection on a grid."""
    shape = grid.shape
    g = np.zeros(shape + (3, 3))
    Gamma = np.zeros(shape + (3, 3, 3))
    for idx in np.ndindex(*shape):
        x = grid.point(idx)
        g[idx] = std_metric(x)
        Gamma[idx] = std_christoffel(x)
    a = np.zeros(shape + (3,))
    e = np.stack([orthonormal_frame(gi) for gi in g.reshape(-1, 3, 3)]).reshape(shape + (3, 3))
    fld = MetricConnectionField(grid, g, Gamma, a, e, meta={"source": "standard-analytic"})
    fld.residuals = synthetic_residuals(fld)
    return fld


def synthetic_residuals(fld: MetricConnectionField) -> dict:
    res = {
        "torsion": coordinate_torsion(fld.Gamma),
        "compat": compatibility_residual(fld.g, fld.Gamma, fld.a, fld.grid.step, fld.fd_order),
    }
    res["ew"], _ = einstein_weyl_residual_array(fld.g, fld.Gamma, fld.grid.step, fld.curvature_order, fld.e)
    return res


# ---------------------------------------------------------------------------
# Full reconstruction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReconstructConfig:
    fd_step: float = 0.05
    cone_tol: float = 1e-6
    frame_tol: float = 5e-5
    fd_order: int = 2
    curvature_order: int = 4
    fd_tol: float = 1e-3
    lift_tol: float = 1e-6
    strict: bool = False

    @classmethod
    def from_dict(cls, doc: dict) -> "ReconstructConfig":
        names = set(cls.__dataclass_fields__)
        extra = set(doc) - names
        if extra:
            raise ValueError(f"unknown reconstruct keys: {sorted(extra)}")
        return cls(**doc)


@dataclass
class NodeRecord:
    geom: NodeGeometry
    cone: NullConeSample
    frame: FrameNode
    fiber: FiberData


def reconstruct(
    N: EmbeddingN,
    grid: ReconstructionGrid,
    solver: SolverConfig = SolverConfig(),
    options: ReconstructConfig = ReconstructConfig(),
    metric_scale: Callable[[np.ndarray], float] | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> MetricConnectionField:
    """Run the full pipeline on every node of ``grid``.

    ``metric_scale`` multiplies the det-normalized representative by
    exp(2 sigma(x)); it exists to audit gauge covariance.
    """
    shape = grid.shape
    order = options.fd_order
    K = LIFT_SAMPLES
    g = np.zeros(shape + (3, 3))
    E = np.zeros(shape + (3, 3))
    coframe = np.zeros(shape + (3, 3))
    zeta = np.zeros(shape + (K,), dtype=complex)
    fibers = {}
    cone_res = np.zeros(shape)
    frame_res = np.zeros(shape)
    prev_u = None
    visit = serpentine_order(*shape)
    for count, idx in enumerate(visit):
        x = grid.point(idx)
        geom = node_geometry(N, x, solver, chart=grid.chart, u0=prev_u)
        prev_u = geom.sol.u
        cone = fit_null_cone(geom, options.cone_tol)
        Q = cone.quadratic_form
        if metric_scale is not None:
            Q = Q * np.exp(-2 * metric_scale(x))
        fr = normalize_frame(geom, Q, options.frame_tol)
        fd = fiber_data(geom, fr.e)
        g[idx] = np.linalg.inv(Q)
        E[idx] = fr.e
        coframe[idx] = fr.coframe
        zeta[idx] = fd.zeta
        fibers[idx] = fd
        cone_res[idx] = cone.fit_residual
        frame_res[idx] = fr.fiber_residual
        if progress:
            progress(count + 1, len(visit))

    h = grid.step
    dzeta = np.moveaxis(grid_derivative(zeta, h, order), 0, -2)  # [..., 3, K]
    dcoframe = np.moveaxis(grid_derivative(coframe, h, order), 0, 3)  # [..., a, i, b] = d_a E^i_b

    alpha = np.full(shape + (4,), np.nan)
    beta = np.full(shape + (4,), np.nan)
    lift_res = np.full(shape, np.nan)
    lift_imag = np.full(shape, np.nan)
    for idx in np.ndindex(*shape):
        dz = dzeta[idx]
        if not np.all(np.isfinite(dz)):
            continue
        av, bv = lift_values(fibers[idx], E[idx], dz)
        fit = fit_cubic(fibers[idx].zeta, av, bv)
        alpha[idx] = fit.alpha.real
        beta[idx] = fit.beta.real
        lift_res[idx] = fit.residual
        lift_imag[idx] = fit.imag_part

    etas0 = etas_from_lifts(np.moveaxis(alpha, -1, 0), np.moveaxis(beta, -1, 0))  # [3, 3, ...]
    etas0 = np.moveaxis(etas0, (0, 1), (-2, -1))  # [..., 3, 3]
    omega0 = connection_matrix(etas0)
    # exterior derivative of the coframe: de^i_{ab} = d_a E^i_b - d_b E^i_a
    de_coord = np.einsum("...aib->...iab", dcoframe) - np.einsum("...bia->...iab", dcoframe)
    de_frame = np.einsum("...iab,...aj,...bk->...ijk", de_coord, E, E)
    T0 = torsion_frame(de_frame, omega0)
    mu23, mu31, mu12 = mu_components(T0)
    mu_res = mu_relation_residual(mu23, mu31, mu12)
    f, phi = torsion_correction(mu23, mu31, mu12)
    etas = corrected_etas(etas0, f)
    omega = connection_matrix(etas, phi)
    T = torsion_frame(de_frame, omega)
    torsion_frame_res = np.max(np.abs(T).reshape(shape + (-1,)), axis=-1)

    # coordinate Christoffel symbols: Gamma^a_bc = e_i^a [d_b E^i_c + omega^i_j(d_b) E^j_c]
    omega_coord = np.einsum("...ijk,...kb->...ijb", omega, coframe)  # omega^i_j(d_b)
    inner = np.einsum("...bic->...ibc", dcoframe) + np.einsum("...ijb,...jc->...ibc", omega_coord, coframe)
    Gamma = np.einsum("...ai,...ibc->...abc", E, inner)
    a_frame = -2 * phi
    a_coord = np.einsum("...k,...kb->...b", a_frame, coframe)

    residuals = {
        "cone": cone_res,
        "frame": frame_res,
        "lift": lift_res,
        "lift_imag": lift_imag,
        "mu": mu_res,
        "torsion_frame": torsion_frame_res,
        "torsion": coordinate_torsion(Gamma),
        "compat": compatibility_residual(g, Gamma, a_coord, h, order),
    }
    residuals["ew"], Lam = einstein_weyl_residual_array(g, Gamma, h, options.curvature_order, E)
    if options.strict:
        bad = np.nanmax(mu_res)
        if bad > options.fd_tol:
            where = np.unravel_index(np.nanargmax(mu_res), shape)
            raise ConsistencyFailure(f"trial torsion identities violated by {bad:.3g} at node {where}")
    fld = MetricConnectionField(
        grid, g, Gamma, a_coord, E, f, phi, residuals, order,
        meta={"source": "reconstruct", "epsilon": N.epsilon, "gauge": "det Q = -1" if metric_scale is None else "scaled"},
        curvature_order=options.curvature_order,
    )
    fld.meta["Lambda_mean"] = float(np.nanmean(Lam)) if np.any(np.isfinite(Lam)) else None
    fld.alpha, fld.beta = alpha, beta
    return fld


def node_pipeline(N: EmbeddingN, x, solver: SolverConfig = SolverConfig(), options: ReconstructConfig = ReconstructConfig()) -> NodeRecord:
    """Cone, frame and fiber data at a single point (no cross-node derivatives)."""
    geom = node_geometry(N, np.asarray(x, dtype=float), solver)
    cone = fit_null_cone(geom, options.cone_tol)
    fr = normalize_frame(geom, cone.quadratic_form, options.frame_tol)
    return NodeRecord(geom, cone, fr, fiber_data(geom, fr.e))


def standard_cone_oracle(x) -> np.ndarray:
    """det-normalized inverse of the de Sitter metric at x (chart 0)."""
    return normalize_det(np.linalg.inv(std_metric(x)))
