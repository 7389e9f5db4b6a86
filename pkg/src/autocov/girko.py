"""Hermitization pipeline: symmetrized singular-value measures and log-potentials.

For a shift z the symmetrized singular-value measure of ``Rhat_L - z`` puts
mass 1/(2N) on each of ``+-s_l(Rhat_L - z)``.  The log-potential of the
eigenvalue distribution is ``U(z) = -int log|t| dnu(t)``.  For a symmetric
measure with Stieltjes transform g,

    int log|t| dnu = log Y - int_0^Y Im g(iy) dy + O(m2 / Y^2),

which is how the deterministic potential is computed from the fixed-point
solution.  The density is recovered as ``-(1/2pi) Laplacian(U)``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from .fixedpoint import FixedPointMap, Quadrature, isotropic_path, solve_path, stieltjes_trace, white_noise_path
from .linalg import ContractViolation, ConvergenceError, general_eigenvalues, singular_values
from .models import SpectralDensityModel
from .sampling import SampleBlock, empirical_autocov

ATOM_HIT = 1e-12
Y_MIN, Y_MAX, Y_NODES = 1e-4, 1e3, 200


class AtomHit(ContractViolation):
    """z coincides numerically with an eigenvalue of the empirical matrix."""


@dataclass(frozen=True)
class SignedAtomMeasure:
    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=float).reshape(-1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if a.shape != w.shape:
            raise ContractViolation("atoms and weights must have the same length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ContractViolation("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "weights", w)

    def is_symmetric(self, tol: float = 0.0) -> bool:
        o = np.argsort(self.atoms, kind="stable")
        a, w = self.atoms[o], self.weights[o]
        return bool(np.all(np.abs(a + a[::-1]) <= tol) and np.all(np.abs(w - w[::-1]) <= tol))

    def stieltjes(self, eta) -> np.ndarray:
        eta = np.asarray(eta, dtype=complex)
        return np.sum(self.weights / (self.atoms - eta[..., None]), axis=-1)

    def log_moment(self) -> float:
        """int log|t| dnu."""
        if np.any(self.atoms == 0):
            return -np.inf
        return float(np.sum(self.weights * np.log(np.abs(self.atoms))))

    def second_moment(self) -> float:
        return float(np.sum(self.weights * self.atoms**2))

    def mass_below(self, cutoff: float) -> float:
        """Mass of log|t| over {|t| < cutoff}, a uniform-integrability diagnostic."""
        sel = np.abs(self.atoms) < cutoff
        with np.errstate(divide="ignore"):
            return float(np.sum(self.weights[sel] * np.abs(np.log(np.abs(self.atoms[sel])))))


def symmetrized(values) -> SignedAtomMeasure:
    s = np.asarray(values, dtype=float).reshape(-1)
    m = s.size
    return SignedAtomMeasure(np.concatenate([s, -s]), np.full(2 * m, 1.0 / (2 * m)))


def empirical_nu(block: SampleBlock, L: int, z: complex) -> SignedAtomMeasure:
    """Atoms +-s_l(Rhat_L - z), each of weight 1/(2N)."""
    R = empirical_autocov(block, L)
    return symmetrized(singular_values(R - z * np.eye(block.N)))


def log_potential_from_eigs(eigs, z) -> np.ndarray:
    """-(1/N) sum log|lambda - z| for an array of z values."""
    z = np.asarray(z, dtype=complex)
    d = np.abs(np.asarray(eigs)[None, :] - z.reshape(-1, 1))
    if np.any(d.min(axis=1) < ATOM_HIT):
        raise AtomHit("z coincides with an eigenvalue")
    return -np.mean(np.log(d), axis=1).reshape(z.shape)


def log_potential_empirical(block: SampleBlock, L: int, z: complex, *, check: bool = False, tol: float = 1e-6) -> float:
    """U(z) = -(1/N) sum_l log s_l(Rhat_L - z).

    With ``check=True`` the eigenvalue route -(1/N) sum log|lambda_l - z| is
    evaluated as well and an AssertionError raised when they differ by more
    than ``tol``.
    """
    R = empirical_autocov(block, L)
    s = singular_values(R - z * np.eye(block.N))
    if s[-1] < ATOM_HIT:
        raise AtomHit(f"atom hit: s_min(Rhat_L - z) = {s[-1]:.3e} at z = {z}")
    U = float(-np.mean(np.log(s)))
    if check:
        U2 = float(log_potential_from_eigs(general_eigenvalues(R), z))
        if abs(U - U2) > tol:
            raise AssertionError(f"singular-value and eigenvalue routes differ by {abs(U - U2):.3e}")
    return U


# --- y-integration -----------------------------------------------------------


def y_grid(y_min: float = Y_MIN, y_max: float = Y_MAX, nodes: int = Y_NODES) -> np.ndarray:
    """Log-spaced nodes, decreasing (the order used for continuation)."""
    if not 0 < y_min < y_max or nodes < 2:
        raise ContractViolation("need 0 < y_min < y_max and at least 2 nodes")
    return np.geomspace(y_max, y_min, nodes)


@dataclass
class PotentialValue:
    U: np.ndarray | float
    valid: np.ndarray | bool
    tail_estimate: np.ndarray | float  # m2 / (2 y_max^2)
    ymin_sensitivity: np.ndarray | float  # y_min * Im g(i y_min), mass of the skipped head


def potential_from_stieltjes(ys, im_g) -> PotentialValue:
    """U = -[log y_max - int Im g(iy) dy] by the trapezoid rule in log y.

    ``ys`` decreasing as produced by :func:`y_grid`; ``im_g`` has the y axis
    first and any number of trailing axes.
    """
    ys = np.asarray(ys, dtype=float)
    im_g = np.asarray(im_g, dtype=float)
    u = np.log(ys)[::-1]
    f = (im_g[::-1].T * ys[::-1]).T
    integral = trapezoid(f, u, axis=0)
    y_max, y_min = ys[0], ys[-1]
    m2 = np.maximum(y_max**3 * (1.0 / y_max - im_g[0]), 0.0)
    U = -(np.log(y_max) - integral)
    return PotentialValue(U, np.isfinite(U), m2 / (2 * y_max**2), y_min * im_g[-1])


def log_potential_via_y(measure: SignedAtomMeasure, y_min=Y_MIN, y_max=Y_MAX, nodes=Y_NODES) -> PotentialValue:
    """Same quadrature as the deterministic route, applied to an atomic measure."""
    ys = y_grid(y_min, y_max, nodes)
    return potential_from_stieltjes(ys, measure.stieltjes(1j * ys).imag)


def _is_scalar_white(model: SpectralDensityModel) -> bool:
    return model.kind == "white_noise" or (
        model.order == 0 and np.allclose(model.coeffs[0], np.eye(model.N), atol=1e-15)
    )


def deterministic_im_g(model, z, L, n, ys, quad: Quadrature | None = None, *, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Im g(iy) of the deterministic equivalent for each z (array) and y in ``ys``.

    Returns (im_g with shape (len(ys), len(z)), valid flags per z).  A stalled
    solve marks that z invalid instead of raising.
    """
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    gamma = model.N / n
    if _is_scalar_white(model):
        nodes = quad.nodes if quad is not None else None
        T = white_noise_path(z, ys, gamma, nodes, L=L)
        return T[..., 0, 0].imag / gamma, np.all(T[..., 0, 0].imag > 0, axis=0)
    fmap = FixedPointMap(model, L, n, quad)
    if fmap.isotropic:
        T, res = isotropic_path(model, z, ys, L, n, fmap.quad)
        g = (T[..., 0, 0] + T[..., 1, 1]) / (2 * gamma)
        ok = np.all(g.imag > 0, axis=0) & np.all(res <= 1e-8, axis=0)
        return g.imag, ok
    out = np.full((len(ys), z.size), np.nan)
    valid = np.ones(z.size, dtype=bool)
    for i, zi in enumerate(z):
        try:
            states = solve_path(model, zi, 1j * np.asarray(ys), L, n, tol=tol, quad=fmap.quad)
        except ConvergenceError:
            valid[i] = False
            continue
        out[:, i] = [stieltjes_trace(s).imag for s in states]
    return out, valid


def log_potential_deterministic(
    model: SpectralDensityModel,
    z,
    L: int,
    n: int,
    y_min: float = Y_MIN,
    y_max: float = Y_MAX,
    nodes: int = Y_NODES,
    quad: Quadrature | None = None,
) -> PotentialValue:
    """Deterministic log-potential at z (scalar or array)."""
    ys = y_grid(y_min, y_max, nodes)
    im_g, valid = deterministic_im_g(model, z, L, n, ys, quad)
    pv = potential_from_stieltjes(ys, im_g)
    pv.valid = valid & np.asarray(pv.valid)
    if np.isscalar(z):
        return PotentialValue(float(pv.U[0]), bool(pv.valid[0]), float(pv.tail_estimate[0]), float(pv.ymin_sensitivity[0]))
    return pv


# --- fields ------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    x0: float
    x1: float
    y0: float
    y1: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3 or not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ContractViolation("grid needs nx, ny >= 3 and a nondegenerate box")

    @classmethod
    def parse(cls, text: str) -> "Grid":
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 6:
            raise ContractViolation("grid must be 'x0,x1,y0,y1,nx,ny'")
        x0, x1, y0, y1 = map(float, parts[:4])
        return cls(x0, x1, y0, y1, int(parts[4]), int(parts[5]))

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x0, self.x1, self.nx)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.y0, self.y1, self.ny)

    @property
    def dx(self) -> float:
        return (self.x1 - self.x0) / (self.nx - 1)

    @property
    def dy(self) -> float:
        return (self.y1 - self.y0) / (self.ny - 1)

    def points(self) -> np.ndarray:
        """Complex nodes, shape (ny, nx)."""
        return self.xs[None, :] + 1j * self.ys[:, None]

    def as_tuple(self):
        return (self.x0, self.x1, self.y0, self.y1, self.nx, self.ny)


@dataclass
class PotentialField:
    grid: Grid
    U: np.ndarray  # (ny, nx)
    valid: np.ndarray  # (ny, nx) bool
    provenance: dict = field(default_factory=dict)
    density: np.ndarray | None = None  # (ny, nx), NaN on the boundary
    diagnostics: dict = field(default_factory=dict)


def _laplacian5(U: np.ndarray, dx: float, dy: float) -> np.ndarray:
    lap = np.full(U.shape, np.nan)
    lap[1:-1, 1:-1] = (U[1:-1, 2:] - 2 * U[1:-1, 1:-1] + U[1:-1, :-2]) / dx**2 + (
        U[2:, 1:-1] - 2 * U[1:-1, 1:-1] + U[:-2, 1:-1]
    ) / dy**2
    return lap


def density_from_potential(fld: PotentialField, neg_floor: float = 1e-2) -> PotentialField:
    """Attach density = -(1/2 pi) * 5-point Laplacian of U at interior nodes."""
    if fld.U.shape != (fld.grid.ny, fld.grid.nx) or not np.all(np.isfinite(fld.U)):
        raise ContractViolation("potential field has unpopulated nodes")
    g = fld.grid
    dens = -_laplacian5(fld.U, g.dx, g.dy) / (2 * np.pi)
    inner = dens[1:-1, 1:-1]
    diag = dict(fld.diagnostics)
    diag.update(
        mass=float(np.sum(inner) * g.dx * g.dy),
        min_density=float(inner.min()),
        negative_mass=float(-np.sum(np.minimum(inner, 0.0)) * g.dx * g.dy),
        below_floor=int(np.sum(inner < -neg_floor)),
    )
    return PotentialField(g, fld.U, fld.valid, dict(fld.provenance), dens, diag)


def potential_field_empirical(blocks, L: int, grid: Grid) -> PotentialField:
    """Average over samples of the empirical log-potential on the grid."""
    pts = grid.points()
    U = np.zeros(pts.shape)
    valid = np.ones(pts.shape, dtype=bool)
    seeds = []
    for b in blocks:
        eigs = general_eigenvalues(empirical_autocov(b, L))
        d = np.abs(eigs[None, :] - pts.reshape(-1, 1))
        valid &= (d.min(axis=1) >= ATOM_HIT).reshape(pts.shape)
        with np.errstate(divide="ignore"):
            U -= np.mean(np.log(np.maximum(d, 1e-300)), axis=1).reshape(pts.shape)
        seeds.append(b.seed)
    U /= max(len(seeds), 1)
    prov = {"kind": "empirical", "seeds": seeds, "L": L, "N": blocks[0].N, "n": blocks[0].n}
    return PotentialField(grid, U, valid, prov)


def potential_field_deterministic(
    model: SpectralDensityModel,
    L: int,
    n: int,
    grid: Grid,
    y_min: float = Y_MIN,
    y_max: float = Y_MAX,
    nodes: int = Y_NODES,
    quad: Quadrature | None = None,
) -> PotentialField:
    """Deterministic log-potential at every grid node.

    For white noise with a continuous quadrature the equation is invariant
    under z -> e^{i phi} z, so the solve is done once per distinct |z|.
    """
    pts = grid.points().reshape(-1)
    radial = _is_scalar_white(model) and (quad is None or quad.kind == "continuous")
    if radial:
        r = np.round(np.abs(pts), 12)
        uniq, inv = np.unique(r, return_inverse=True)
        pv = log_potential_deterministic(model, uniq.astype(complex), L, n, y_min, y_max, nodes, quad)
        U, valid = np.asarray(pv.U)[inv], np.asarray(pv.valid)[inv]
        tail = float(np.max(pv.tail_estimate))
        sens = float(np.max(pv.ymin_sensitivity))
    else:
        pv = log_potential_deterministic(model, pts, L, n, y_min, y_max, nodes, quad)
        U, valid = np.asarray(pv.U), np.asarray(pv.valid)
        tail = float(np.max(pv.tail_estimate))
        sens = float(np.max(pv.ymin_sensitivity))
    shape = (grid.ny, grid.nx)
    prov = {
        "kind": "deterministic",
        "model": model.to_dict(),
        "N": model.N,
        "n": n,
        "L": L,
        "y_min": y_min,
        "y_max": y_max,
        "y_nodes": nodes,
        "quadrature": None if quad is None else {"kind": quad.kind, "nodes": quad.nodes},
        "radial_reduction": bool(radial),
    }
    diag = {"tail_estimate_max": tail, "ymin_sensitivity_max": sens}
    return PotentialField(grid, U.reshape(shape), valid.reshape(shape), prov, diagnostics=diag)


def circular_law_potential(z) -> np.ndarray:
    """Log-potential of the uniform law on the unit disk."""
    r = np.abs(np.asarray(z, dtype=complex))
    with np.errstate(divide="ignore"):
        return np.where(r <= 1.0, (1.0 - r**2) / 2.0, -np.log(np.maximum(r, 1e-300)))


def circular_law_field(grid: Grid) -> PotentialField:
    U = circular_law_potential(grid.points())
    return PotentialField(grid, U, np.ones(U.shape, dtype=bool), {"kind": "synthetic", "law": "circular"})


def circular_law_error(fld: PotentialField) -> float:
    """Sup error of the recovered density against 1/pi inside, 0 outside the unit disk.

    Nodes whose 5-point stencil straddles the unit circle are skipped, since
    the Laplacian of the potential jumps there.
    """
    g = fld.grid
    r = np.abs(g.points())
    inside = r <= 1.0
    same = np.zeros(r.shape, dtype=bool)
    c = inside[1:-1, 1:-1]
    same[1:-1, 1:-1] = (
        (inside[1:-1, 2:] == c) & (inside[1:-1, :-2] == c) & (inside[2:, 1:-1] == c) & (inside[:-2, 1:-1] == c)
    )
    target = np.where(inside, 1.0 / np.pi, 0.0)
    return float(np.max(np.abs(fld.density - target)[same]))


def compare_fields(emp: PotentialField, det: PotentialField, stieltjes_gaps: dict | None = None) -> dict:
    """Sup and L1 distances between two fields on identical grids."""
    if emp.grid != det.grid:
        raise ContractViolation("fields live on different grids")
    g = emp.grid
    both = emp.valid & det.valid
    dU = np.abs(emp.U - det.U)[both]
    report = {
        "U_sup": float(dU.max()) if dU.size else float("nan"),
        "U_l1": float(dU.sum() * g.dx * g.dy),
        "valid_nodes": int(both.sum()),
    }
    if emp.density is not None and det.density is not None:
        dd = np.abs(emp.density - det.density)[1:-1, 1:-1][both[1:-1, 1:-1]]
        report["density_sup"] = float(dd.max()) if dd.size else float("nan")
        report["density_l1"] = float(dd.sum() * g.dx * g.dy)
    if stieltjes_gaps:
        report["stieltjes_gaps"] = stieltjes_gaps
    return report


def write_field(fld: PotentialField, path: str | Path) -> Path:
    """CSV with columns re_z, im_z, U, density, valid_flag plus a JSON sidecar."""
    path = Path(path)
    pts = fld.grid.points()
    dens = fld.density if fld.density is not None else np.full(pts.shape, np.nan)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["re_z", "im_z", "U", "density", "valid_flag"])
        for j in range(pts.shape[0]):
            for i in range(pts.shape[1]):
                w.writerow([
                    "%.17g" % pts[j, i].real,
                    "%.17g" % pts[j, i].imag,
                    "%.17g" % fld.U[j, i],
                    "%.17g" % dens[j, i],
                    int(fld.valid[j, i]),
                ])
    meta = {"grid": list(fld.grid.as_tuple()), "provenance": fld.provenance, "diagnostics": fld.diagnostics}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, default=_json_default))
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"cannot serialize {type(o).__name__}")


def read_field(path: str | Path) -> PotentialField:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    grid = Grid(*meta["grid"][:4], int(meta["grid"][4]), int(meta["grid"][5]))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    shape = (grid.ny, grid.nx)
    dens = data[:, 3].reshape(shape)
    return PotentialField(
        grid,
        data[:, 2].reshape(shape),
        data[:, 4].reshape(shape).astype(bool),
        meta.get("provenance", {}),
        None if np.all(np.isnan(dens)) else dens,
        meta.get("diagnostics", {}),
    )
