"""Deterministic equivalent of the resolvent of the hermitized autocovariance.

The 2N x 2N matrix G(z, eta) is the unique solution with positive imaginary
part of ``G = F(G, eta)`` where

    F(M, eta) = ( mean_k A_k^{-1} (x) S(theta_k)  -  [[eta, z], [zbar, eta]] (x) I_N )^{-1},
    A_k = T((I_2 (x) S(theta_k)) M) + U_L(theta_k),

T the normalized block-trace map and the mean taken over quadrature nodes
theta_k = 2 pi k / nodes.  With nodes = n this is the finite-n ("discrete")
version of the map; a large node count approximates the continuous integral.

F depends on M only through the reduced coordinates
``c_j = [tr(R_j M_uv) / n]_{u,v}``, one 2x2 matrix per lag |j| <= q, since
``T((I (x) S(theta)) M) = sum_j e^{i j theta} c_j``.  Picard iteration is run
on G directly; when it stalls, Newton's method is applied to the reduced
coordinates, where the map is holomorphic.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .linalg import ContractViolation, ConvergenceError, blocks
from .models import SpectralDensityModel

DEFAULT_TOL = 1e-10
EXACT_NORM_MAX = 256


@dataclass(frozen=True)
class ULFunction:
    """theta -> [[0, e^{-i L theta}], [e^{i L theta}, 0]], hermitian and unitary."""

    L: int

    def __call__(self, theta) -> np.ndarray:
        th = np.asarray(theta, dtype=float)
        out = np.zeros(th.shape + (2, 2), dtype=complex)
        out[..., 0, 1] = np.exp(-1j * self.L * th)
        out[..., 1, 0] = np.exp(1j * self.L * th)
        return out


@dataclass(frozen=True)
class Quadrature:
    kind: str  # "continuous" or "discrete"
    nodes: int

    def __post_init__(self):
        if self.kind not in ("continuous", "discrete"):
            raise ContractViolation(f"unknown quadrature kind {self.kind!r}")
        if self.nodes < 1:
            raise ContractViolation("quadrature needs at least one node")

    @classmethod
    def continuous(cls, nodes: int) -> "Quadrature":
        return cls("continuous", int(nodes))

    @classmethod
    def discrete(cls, n: int) -> "Quadrature":
        return cls("discrete", int(n))

    @property
    def theta(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.nodes) / self.nodes


def default_nodes(L: int, q: int) -> int:
    return max(512, 8 * (abs(L) + q))


def contraction_bound(model: SpectralDensityModel, gamma: float) -> float:
    """Im eta above this value guarantees that F is a 1/2-contraction."""
    return 4.0 * model.sup_norm() * max(gamma, np.sqrt(gamma))


def spectral_distance(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b||_2 exactly for moderate sizes, Frobenius (an upper bound) beyond."""
    d = a - b
    if d.shape[0] <= EXACT_NORM_MAX:
        return float(np.linalg.norm(d, 2))
    return float(np.linalg.norm(d))


def norm2x2(T: np.ndarray) -> np.ndarray:
    """Spectral norm of a stack of 2x2 matrices in closed form."""
    fro2 = np.sum(np.abs(T) ** 2, axis=(-2, -1))
    det = np.abs(T[..., 0, 0] * T[..., 1, 1] - T[..., 0, 1] * T[..., 1, 0])
    return np.sqrt((fro2 + np.sqrt(np.maximum(fro2**2 - 4 * det**2, 0.0))) / 2)


def _kron_part(M: np.ndarray, N: int) -> np.ndarray | None:
    """The 2x2 factor if M == small (x) I_N exactly, else None."""
    small = M[::N, ::N]
    if np.array_equal(M, np.kron(small, np.eye(N))):
        return small
    return None


def _inv2(T: np.ndarray) -> np.ndarray:
    det = T[..., 0, 0] * T[..., 1, 1] - T[..., 0, 1] * T[..., 1, 0]
    if np.any(det == 0):
        raise ContractViolation("singular 2x2 matrix A_k in the fixed-point map")
    out = np.empty_like(T)
    out[..., 0, 0] = T[..., 1, 1]
    out[..., 1, 1] = T[..., 0, 0]
    out[..., 0, 1] = -T[..., 0, 1]
    out[..., 1, 0] = -T[..., 1, 0]
    return out / det[..., None, None]


class FixedPointMap:
    """The map M -> F(M, eta) for a fixed model, lag, window length and quadrature."""

    def __init__(self, model: SpectralDensityModel, L: int, n: int, quad: Quadrature | None = None):
        if n < 1:
            raise ContractViolation("n must be positive")
        self.model = model
        self.N = model.N
        self.n = int(n)
        self.L = int(L)
        self.gamma = self.N / self.n
        self.quad = quad or Quadrature.continuous(default_nodes(L, model.order))
        self.lags, self.R = model.full_coeffs()
        th = self.quad.theta
        self.E = np.exp(1j * np.outer(th, self.lags))  # (nodes, 2q+1)
        self.U = ULFunction(self.L)(th)
        eye = np.eye(self.N)
        scal = np.array([R[0, 0] for R in self.R])
        self.isotropic = bool(np.allclose(self.R, scal[:, None, None] * eye, rtol=0, atol=1e-15))
        self._scal = scal

    # reduced coordinates
    def coords(self, M: np.ndarray) -> np.ndarray:
        """c_j = [tr(R_j M_uv)/n], shape (2q+1, 2, 2)."""
        if self.isotropic:
            tr = np.trace(blocks(M), axis1=2, axis2=3)
            return self._scal[:, None, None] * tr[None] / self.n
        return np.einsum("jab,uvba->juv", self.R, blocks(M)) / self.n

    def node_matrices(self, c: np.ndarray) -> np.ndarray:
        """A_k = sum_j e^{i j theta_k} c_j + U_L(theta_k), shape (nodes, 2, 2)."""
        return np.einsum("kj,juv->kuv", self.E, c) + self.U

    def from_coords(self, c: np.ndarray, z: complex, eta: complex) -> np.ndarray:
        Ai = _inv2(self.node_matrices(c))
        W = np.einsum("kj,kuv->juv", self.E, Ai) / self.quad.nodes
        Z = np.array([[eta, z], [np.conj(z), eta]])
        if self.isotropic:
            small = np.einsum("juv,j->uv", W, self._scal) - Z
            return np.kron(np.linalg.inv(small), np.eye(self.N))
        B = np.einsum("juv,jab->uavb", W, self.R).reshape(2 * self.N, 2 * self.N)
        B -= np.kron(Z, np.eye(self.N))
        try:
            return np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise ContractViolation("singular outer matrix in the fixed-point map") from exc

    def __call__(self, M: np.ndarray, z: complex, eta: complex) -> np.ndarray:
        return self.from_coords(self.coords(M), z, eta)

    def mct_norm(self, M: np.ndarray) -> float:
        """max_k ||T((I (x) S(theta_k)) M)||."""
        T = np.einsum("kj,juv->kuv", self.E, self.coords(M))
        return float(np.max(norm2x2(T)))

    def distance(self, a: np.ndarray, b: np.ndarray) -> float:
        """||a - b||_2, through the 2x2 factor when both sides are small (x) I_N."""
        if self.isotropic:
            sa, sb = _kron_part(a, self.N), _kron_part(b, self.N)
            if sa is not None and sb is not None:
                return float(norm2x2(sa - sb))
        return spectral_distance(a, b)


def apply_F(
    M,
    model: SpectralDensityModel,
    z: complex,
    eta: complex,
    L: int,
    n: int,
    quad: Quadrature | None = None,
) -> np.ndarray:
    """One application of the fixed-point map."""
    if np.imag(eta) <= 0:
        raise ContractViolation("apply_F requires Im eta > 0")
    M = np.asarray(M, dtype=complex)
    if M.shape != (2 * model.N, 2 * model.N) or not np.all(np.isfinite(M)):
        raise ContractViolation("M must be a finite 2N x 2N matrix")
    return FixedPointMap(model, L, n, quad)(M, z, eta)


# --- solver ------------------------------------------------------------------


@dataclass
class StieltjesState:
    G: np.ndarray
    z: complex
    eta: complex
    tcal: np.ndarray
    residual: float
    iterations: int
    n: int
    trace: list = field(default_factory=list)  # per continuation stage
    contraction: list = field(default_factory=list)  # residual ratios inside the contraction domain
    mct_max: float = 0.0  # max over iterates of Im(eta) ||T((I (x) S) G)|| / (gamma M)
    wall_time: float = 0.0

    @property
    def N(self) -> int:
        return self.G.shape[0] // 2

    def block(self, u: int, v: int) -> np.ndarray:
        return blocks(self.G)[u, v]

    def invariants(self) -> dict:
        G = self.G
        imag_part = (G - G.conj().T) / 2j
        N = self.N
        return {
            "min_imag_eig": float(np.linalg.eigvalsh(imag_part)[0]),
            "norm": float(np.linalg.norm(G, 2)),
            "norm_bound": 1.0 / float(np.imag(self.eta)),
            "trace_gap": abs(np.trace(self.block(0, 0)) - np.trace(self.block(1, 1))) / N,
        }

    def to_record(self) -> dict:
        g = stieltjes_trace(self)
        return {
            "z": [float(np.real(self.z)), float(np.imag(self.z))],
            "eta": [float(np.real(self.eta)), float(np.imag(self.eta))],
            "residual": self.residual,
            "iterations": self.iterations,
            "trace_g": [float(g.real), float(g.imag)],
            "tcal": [[float(v.real), float(v.imag)] for v in self.tcal.reshape(-1)],
            "wall_time": self.wall_time,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), indent=2)


def stieltjes_trace(state: StieltjesState) -> complex:
    """g(eta) = tr G / (2N)."""
    return complex(np.trace(state.G) / state.G.shape[0])


def _newton_coords(fmap: FixedPointMap, c0, z, eta, tol, max_iter=30):
    """Newton on c -> C(F(c)) - c with a finite-difference holomorphic Jacobian."""
    shape = c0.shape
    phi = lambda v: (fmap.coords(fmap.from_coords(v.reshape(shape), z, eta)) - v.reshape(shape)).reshape(-1)
    c = c0.reshape(-1).copy()
    r = phi(c)
    rn = np.linalg.norm(r)
    for _ in range(max_iter):
        if rn < tol * 1e-3:
            break
        h = 1e-7 * max(1.0, np.linalg.norm(c))
        J = np.empty((c.size, c.size), dtype=complex)
        for i in range(c.size):
            e = c.copy()
            e[i] += h
            J[:, i] = (phi(e) - r) / h
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            break
        lam = 1.0
        while lam > 1e-4:
            trial = c + lam * step
            try:
                rt = phi(trial)
            except ContractViolation:
                rt = None
            if rt is not None and np.linalg.norm(rt) < rn:
                break
            lam /= 2
        else:
            break
        c, r, rn = trial, rt, np.linalg.norm(rt)
    return c.reshape(shape)


def _stage(fmap, G, z, eta, tol, max_iter, in_domain, gm, record):
    """Picard iteration at one eta; returns (G, residual, iterations)."""
    prev = None
    slow = 0
    damp = False
    for it in range(1, max_iter + 1):
        FG = fmap(G, z, eta)
        r = fmap.distance(FG, G)
        record["mct"] = max(record["mct"], fmap.mct_norm(G) * np.imag(eta) / gm)
        if r <= tol:
            return G, r, it
        if prev is not None:
            ratio = r / prev
            if in_domain and not damp:
                record["contraction"].append(ratio)
            slow = slow + 1 if ratio > 0.9 else 0
            damp = ratio > 1.0
        if slow >= 8 or (it % 50 == 0):
            c = _newton_coords(fmap, fmap.coords(FG), z, eta, tol)
            Gn = fmap.from_coords(c, z, eta)
            Gimag = (Gn - Gn.conj().T) / 2j
            if np.all(np.isfinite(Gn)) and np.linalg.eigvalsh(Gimag)[0] > 0:
                rn = fmap.distance(fmap(Gn, z, eta), Gn)
                if rn < r:
                    G, prev, slow, damp = Gn, rn, 0, False
                    if rn <= tol:
                        return G, rn, it
                    continue
            slow = 0
        G = 0.5 * (G + FG) if damp else FG
        prev = r
    FG = fmap(G, z, eta)
    return G, fmap.distance(FG, G), max_iter


def continuation_path(model: SpectralDensityModel, gamma: float, eta: complex) -> list[complex]:
    """Im eta halves geometrically from twice the contraction bound down to the target."""
    y0 = 2.0 * contraction_bound(model, gamma)
    y = float(np.imag(eta))
    if y >= y0:
        return [complex(eta)]
    ys = []
    cur = y0
    while cur > y:
        ys.append(cur)
        cur /= 2
    return [complex(np.real(eta), v) for v in ys] + [complex(eta)]


def solve_G(
    model: SpectralDensityModel,
    z: complex,
    eta: complex,
    L: int,
    n: int,
    *,
    tol: float = DEFAULT_TOL,
    quad: Quadrature | None = None,
    max_iter: int = 500,
    G0: np.ndarray | None = None,
    continuation: bool = True,
    fmap: FixedPointMap | None = None,
) -> StieltjesState:
    """Solve G = F(G, eta) starting from -eta^{-1} I (or ``G0``).

    Without ``G0`` and with ``continuation`` the solve runs along
    ``continuation_path``, warm-starting each stage from the previous one.
    For Im eta < 0 the solution is obtained by reflection, G(conj eta)^*.
    """
    t0 = time.perf_counter()
    eta = complex(eta)
    if eta.imag == 0:
        raise ContractViolation("eta must have a nonzero imaginary part")
    if eta.imag < 0:
        st = solve_G(model, z, eta.conjugate(), L, n, tol=tol, quad=quad, max_iter=max_iter,
                     G0=None if G0 is None else G0.conj().T, continuation=continuation, fmap=fmap)
        st.G = st.G.conj().T
        st.eta = eta
        st.tcal = st.tcal.conj().T
        return st
    fmap = fmap or FixedPointMap(model, L, n, quad)
    gamma = fmap.gamma
    bound = contraction_bound(model, gamma)
    gm = gamma * model.sup_norm()
    path = continuation_path(model, gamma, eta) if (continuation and G0 is None) else [eta]
    G = -np.eye(2 * model.N, dtype=complex) / path[0] if G0 is None else np.asarray(G0, dtype=complex)
    record = {"mct": 0.0, "contraction": []}
    trace = []
    total = 0
    for k, e in enumerate(path):
        last = k == len(path) - 1
        stage_tol = tol if last else max(tol, 1e-8)
        G, r, it = _stage(fmap, G, z, e, stage_tol, max_iter, e.imag > bound, gm, record)
        total += it
        trace.append({"eta": [e.real, e.imag], "iterations": it, "residual": r})
        if r > stage_tol:
            raise ConvergenceError(
                f"fixed-point iteration stalled at eta={e:.6g} (residual {r:.3e})", residual=r, trace=trace
            )
    tcal = np.trace(blocks(G), axis1=2, axis2=3) / n
    return StieltjesState(
        G=G, z=complex(z), eta=eta, tcal=tcal, residual=r, iterations=total, n=int(n), trace=trace,
        contraction=record["contraction"], mct_max=record["mct"], wall_time=time.perf_counter() - t0,
    )


def solve_path(model, z, etas, L, n, *, tol=DEFAULT_TOL, quad=None, max_iter=500) -> list[StieltjesState]:
    """Solve along a sequence of eta values, each warm-started from the previous solution."""
    fmap = FixedPointMap(model, L, n, quad)
    states = []
    G0 = None
    for e in etas:
        st = solve_G(model, z, e, L, n, tol=tol, max_iter=max_iter, G0=G0, fmap=fmap)
        states.append(st)
        G0 = st.G
    return states


# --- white noise -------------------------------------------------------------


@dataclass
class WhiteNoiseSolution:
    h: np.ndarray | float
    g01: np.ndarray | complex
    z: np.ndarray | complex
    t: float
    gamma: float
    residuals: np.ndarray | tuple
    iterations: int

    @property
    def stieltjes(self):
        """g(it) = i h / gamma."""
        return 1j * np.asarray(self.h) / self.gamma


def _wn_moments(T: np.ndarray):
    """Means over theta of det^{-1}, e^{i theta} det^{-1}, e^{-i theta} det^{-1}, det = det(T + U_1(theta))."""
    a = T[..., 0, 0] * T[..., 1, 1]
    b, c = T[..., 0, 1], T[..., 1, 0]
    bc = b * c
    d = a - bc - 1.0
    s = np.sqrt(d * d - 4.0 * bc)
    q1, q2 = (d + s) / 2, (d - s) / 2
    q = np.where(np.abs(q1) >= np.abs(q2), q1, q2)  # b * (outer root)
    I0 = q / (q * q - bc)
    return I0, c / q * I0, b / q * I0


def white_noise_integrals(T: np.ndarray) -> np.ndarray:
    """(1/2pi) int (T + U_1(theta))^{-1} d theta in closed form, batched over T.

    With w = e^{i theta} the entries are rational in w; the denominator
    w det(T + U_1) = -b w^2 + d w - c has exactly one root inside the unit
    circle when Im T > 0, and the residue there gives the integrals.  The
    continuous integral is the same for every lag L != 0.
    """
    I0, Ip, Im = _wn_moments(T)
    out = np.empty_like(T)
    out[..., 0, 0] = T[..., 1, 1] * I0
    out[..., 1, 1] = T[..., 0, 0] * I0
    out[..., 0, 1] = -(T[..., 0, 1] * I0 + Im)
    out[..., 1, 0] = -(T[..., 1, 0] * I0 + Ip)
    return out


class _WhiteNoiseMap:
    """T -> gamma (mean_k S_k (S_k T + U(theta_k))^{-1} - Z)^{-1}, vectorized over z.

    With S = 1 this is the white-noise map; a scalar symbol S_k covers every
    isotropic model (all R_j proportional to I).  ``nodes=None`` with S = 1
    replaces the trapezoid mean by the exact integral.
    """

    def __init__(self, gamma: float, nodes: int | None, L: int = 1, *, quad: Quadrature | None = None, symbol=None):
        self.gamma = gamma
        if quad is None and nodes is not None:
            quad = Quadrature.continuous(nodes)
        self.exact = quad is None
        if symbol is not None and self.exact:
            raise ContractViolation("a symbol needs explicit quadrature nodes")
        if not self.exact:
            u = np.exp(-1j * L * quad.theta)  # U_01; U_10 = conj(u)
            S = np.ones(quad.nodes) if symbol is None else np.asarray(symbol, dtype=float)
            self.S, self.S2 = S, S * S
            self.Su, self.Sub = S * u, S * np.conj(u)
            self.nodes = quad.nodes

    def __call__(self, T, Z):
        if self.exact:
            B = white_noise_integrals(T)
        else:
            # entries of (S T + U)^{-1} written out; det = S^2 det T - S (T01 conj(u) + T10 u) - 1
            t00, t01, t10, t11 = T[:, 0, 0], T[:, 0, 1], T[:, 1, 0], T[:, 1, 1]
            det = (
                np.outer(t00 * t11 - t01 * t10, self.S2)
                - np.outer(t01, self.Sub)
                - np.outer(t10, self.Su)
                - 1.0
            )
            D = 1.0 / det
            m2 = D @ self.S2 / self.nodes
            mu = D @ self.Su / self.nodes
            mub = D @ self.Sub / self.nodes
            B = np.empty_like(T)
            B[:, 0, 0] = t11 * m2
            B[:, 1, 1] = t00 * m2
            B[:, 0, 1] = -(t01 * m2 + mu)
            B[:, 1, 0] = -(t10 * m2 + mub)
        return self.gamma * _inv2(B - Z)


def _wn_newton(fmap, T, Z, tol, max_iter=40):
    """Batched Newton on T -> fmap(T) - T (four complex unknowns per point)."""
    m = T.shape[0]
    x = T.reshape(m, 4).copy()

    def phi(v, idx):
        return (fmap(v.reshape(-1, 2, 2), Z[idx]) - v.reshape(-1, 2, 2)).reshape(-1, 4)

    every = np.arange(m)
    r = phi(x, every)
    for _ in range(max_iter):
        rn = np.abs(r).max(axis=1)
        active = np.flatnonzero(rn > tol)
        if active.size == 0:
            break
        xa, ra = x[active], r[active]
        h = 1e-7 * np.maximum(1.0, np.abs(xa).max(axis=1))
        J = np.empty((active.size, 4, 4), dtype=complex)
        for i in range(4):
            e = xa.copy()
            e[:, i] += h
            J[:, :, i] = (phi(e, active) - ra) / h[:, None]
        step = np.linalg.solve(J, -ra[..., None])[..., 0]
        lam = np.ones(active.size)
        new = xa + step
        rnew = phi(new, active)
        bad = np.abs(rnew).max(axis=1) >= rn[active]
        for _ in range(12):
            if not bad.any():
                break
            lam[bad] /= 2
            new[bad] = xa[bad] + lam[bad, None] * step[bad]
            rnew[bad] = phi(new[bad], active[bad])
            bad = np.abs(rnew).max(axis=1) >= rn[active]
        good = active[~bad]
        if good.size == 0:
            break
        x[good], r[good] = new[~bad], rnew[~bad]
    return x.reshape(m, 2, 2)


def white_noise_path(z, ts, gamma: float, quad_nodes: int | None = 512, *, tol: float = 1e-13, L: int = 1, fmap=None, sup_norm: float = 1.0):
    """Solve the reduced white-noise system for an array of z along decreasing t values.

    Returns T with shape (len(ts), len(z), 2, 2); T = T(G) with
    G = (1/gamma) T (x) I_N.  ``fmap`` swaps in another reduced map (see
    ``isotropic_path``), whose symbol has sup norm ``sup_norm``.
    """
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    ts = np.asarray(ts, dtype=float)
    if np.any(ts <= 0) or gamma <= 0:
        raise ContractViolation("t and gamma must be positive")
    if np.any(np.diff(ts) > 0):
        raise ContractViolation("t values must be nonincreasing")
    if fmap is None:
        fmap = _WhiteNoiseMap(gamma, quad_nodes, L)
    bound = 4.0 * sup_norm * max(gamma, np.sqrt(gamma))
    m = z.size
    out = np.empty((ts.size, m, 2, 2), dtype=complex)
    T = None
    t_prev = None
    for i, t in enumerate(ts):
        Z = np.zeros((m, 2, 2), dtype=complex)
        Z[:, 0, 0] = Z[:, 1, 1] = 1j * t
        Z[:, 0, 1] = z
        Z[:, 1, 0] = np.conj(z)
        if T is None:
            # continuation from inside the contraction domain
            stages = [s for s in continuation_path_scalar(bound, t)]
            T = np.broadcast_to((1j * gamma / stages[0]) * np.eye(2), (m, 2, 2)).copy()
            for s in stages[:-1]:
                Zs = Z.copy()
                Zs[:, 0, 0] = Zs[:, 1, 1] = 1j * s
                T = _wn_picard(fmap, T, Zs, 1e-8, 400)
            T = _wn_picard(fmap, T, Z, 1e-6, 400)
        elif t < 0.5 * t_prev:
            for s in continuation_path_scalar(t_prev, t, start_factor=1.0)[1:-1]:
                Zs = Z.copy()
                Zs[:, 0, 0] = Zs[:, 1, 1] = 1j * s
                T = _wn_newton(fmap, T, Zs, tol)
        T = _wn_newton(fmap, T, Z, tol)
        out[i] = T
        t_prev = t
    return out


def isotropic_path(model: SpectralDensityModel, z, ts, L: int, n: int, quad: Quadrature | None = None, *, tol: float = 1e-13):
    """Batched solve for isotropic models (R_j = r_j I) along eta = i t.

    Then G = (1/gamma) T (x) I_N, and the 2x2 factor T obeys the white-noise
    map with node weights S(theta_k).  Returns T, shape (len(ts), len(z), 2, 2),
    and the max-entry fixed-point residual per (t, z).
    """
    fm = FixedPointMap(model, L, n, quad)
    if not fm.isotropic:
        raise ContractViolation("isotropic_path needs every R_j proportional to the identity")
    symbol = np.real(fm.E @ fm._scal)
    wmap = _WhiteNoiseMap(fm.gamma, None, L, quad=fm.quad, symbol=symbol)
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    T = white_noise_path(z, ts, fm.gamma, tol=tol, L=L, fmap=wmap, sup_norm=model.sup_norm())
    res = np.empty(T.shape[:2])
    for i, t in enumerate(ts):
        Z = np.zeros((z.size, 2, 2), dtype=complex)
        Z[:, 0, 0] = Z[:, 1, 1] = 1j * t
        Z[:, 0, 1] = z
        Z[:, 1, 0] = np.conj(z)
        res[i] = np.abs(wmap(T[i], Z) - T[i]).max(axis=(1, 2))
    return T, res


def continuation_path_scalar(bound: float, t: float, start_factor: float = 2.0) -> list[float]:
    y = start_factor * bound
    if t >= y:
        return [t]
    ys = []
    while y > t:
        ys.append(y)
        y /= 2
    return ys + [t]


def _wn_picard(fmap, T, Z, tol, max_iter):
    prev = None
    for _ in range(max_iter):
        T2 = fmap(T, Z)
        r = np.abs(T2 - T).max()
        if prev is not None and r > prev:
            T2 = 0.5 * (T + T2)
        T = T2
        if r <= tol:
            break
        prev = r
    return T


def white_noise_equations(h, g01, z, t, gamma, quad_nodes: int | None = 512):
    """Residuals of the two scalar equations characterizing (h, g01).

    With Dt = h^2 + |g01 + e^{-i theta}|^2:
      mean (h^2 + |g01|^2 + g01 e^{i theta}) / Dt + t h - conj(z) g01 - gamma = 0,
      mean h e^{-i theta} / Dt - z h - t g01 = 0.
    """
    h = np.asarray(h, dtype=float)
    g = np.asarray(g01, dtype=complex)
    zz = np.asarray(z, dtype=complex)
    if quad_nodes is None:
        T = np.empty(np.broadcast(h, g).shape + (2, 2), dtype=complex)
        T[..., 0, 0] = T[..., 1, 1] = 1j * h
        T[..., 0, 1] = g
        T[..., 1, 0] = np.conj(g)
        I0, Ip, Im = (-v for v in _wn_moments(T))  # det = -Dt
    else:
        th = Quadrature.continuous(quad_nodes).theta
        D = h[..., None] ** 2 + np.abs(g[..., None] + np.exp(-1j * th)) ** 2
        I0 = np.mean(1.0 / D, axis=-1)
        Ip = np.mean(np.exp(1j * th) / D, axis=-1)
        Im = np.mean(np.exp(-1j * th) / D, axis=-1)
    e1 = (h**2 + np.abs(g) ** 2) * I0 + g * Ip + t * h - np.conj(zz) * g - gamma
    e2 = h * Im - zz * h - t * g
    return e1, e2


def white_noise_system(z, t: float, gamma: float, quad_nodes: int | None = 512, *, tol: float = 1e-13, L: int = 1) -> WhiteNoiseSolution:
    """Solve for h > 0 and g01 with T(G(z, it)) = [[i h, g01], [conj g01, i h]].

    ``z`` may be a scalar or an array.  Raises ConvergenceError if the scalar
    equations are not satisfied to 1e-8 or h is not positive.
    """
    scalar = np.isscalar(z)
    T = white_noise_path(z, [t], gamma, quad_nodes, tol=tol, L=L)[0]
    h = T[:, 0, 0].imag
    g01 = T[:, 0, 1]
    e1, e2 = white_noise_equations(h, g01, np.atleast_1d(z), t, gamma, quad_nodes)
    res = np.maximum(np.abs(e1), np.abs(e2))
    if np.any(res > 1e-8) or np.any(h <= 0):
        raise ConvergenceError(f"white-noise system not solved (max residual {res.max():.3e})", residual=float(res.max()))
    if scalar:
        return WhiteNoiseSolution(float(h[0]), complex(g01[0]), complex(z), t, gamma, (e1[0], e2[0]), 0)
    return WhiteNoiseSolution(h, g01, np.atleast_1d(z), t, gamma, res, 0)


def symmetry_gap(model, z, eta, L, n, **kw) -> float:
    """|g(-eta) + g(eta)|, with g(-eta) obtained by reflection from a solve at -conj(eta)."""
    g = stieltjes_trace(solve_G(model, z, eta, L, n, **kw))
    g_reflected = stieltjes_trace(solve_G(model, z, -np.conj(eta), L, n, **kw))
    return abs(np.conj(g_reflected) + g)
