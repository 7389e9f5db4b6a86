"""Spectral-density models, autocovariances, Fejer smoothing and diagnostics.

Every model handled here is a Laurent trigonometric polynomial

    S(e^{i theta}) = sum_{|l| <= q} R_l e^{i l theta},   R_{-l} = R_l^*,

so a model is stored through its autocovariance coefficients ``R_0..R_q``.
The moving-average kinds also keep their causal factor ``C(z) = I + sum z^l A_l``
so that ``S = C C^*`` can be checked directly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .linalg import ContractViolation

KINDS = ("white_noise", "ma", "toeplitz_ma1", "block_diag", "tabulated")
DIAGNOSTIC_GRID = 4096
DEFAULT_TOEPLITZ_BUDGET = 16384


class ModelError(ValueError):
    """Invalid model definition."""


@dataclass(frozen=True, eq=False)
class SpectralDensityModel:
    kind: str
    N: int
    coeffs: np.ndarray  # (q+1, N, N): R_0 .. R_q
    params: dict = field(default_factory=dict)
    factor: np.ndarray | None = None  # (p+1, N, N): A_0 = I, A_1 .. A_p
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}")
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim != 3 or c.shape[1:] != (self.N, self.N):
            raise ModelError(f"coefficients must have shape (q+1, N, N), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ModelError("non-finite coefficients")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        if self.factor is not None:
            f = np.asarray(self.factor, dtype=complex).copy()
            f.setflags(write=False)
            object.__setattr__(self, "factor", f)

    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1

    def full_coeffs(self) -> tuple[np.ndarray, np.ndarray]:
        """Lags ``-q..q`` and the matching stack of coefficients ``R_l``."""
        q = self.order
        lags = np.arange(-q, q + 1)
        neg = np.conj(np.transpose(self.coeffs[1:][::-1], (0, 2, 1)))
        return lags, np.concatenate([neg, self.coeffs], axis=0)

    def evaluate(self, theta) -> np.ndarray:
        """S(e^{i theta}); a scalar angle gives (N, N), an array gives (..., N, N)."""
        th = np.asarray(theta, dtype=float)
        lags, R = self.full_coeffs()
        phase = np.exp(1j * th[..., None] * lags)
        return np.einsum("...j,jab->...ab", phase, R)

    def factor_at(self, theta) -> np.ndarray:
        if self.factor is None:
            raise ModelError(f"model kind {self.kind!r} has no moving-average factor")
        th = np.asarray(theta, dtype=float)
        lags = np.arange(self.factor.shape[0])
        return np.einsum("...j,jab->...ab", np.exp(1j * th[..., None] * lags), self.factor)

    def sup_norm(self, grid: int = DIAGNOSTIC_GRID) -> float:
        """Estimate of max_theta ||S(e^{i theta})|| on a uniform grid."""
        if self.order == 0:
            return float(np.linalg.norm(self.coeffs[0], 2))
        key = ("sup", grid)
        if key not in self._cache:
            th = 2 * np.pi * np.arange(grid) / grid
            chunks = np.array_split(th, max(1, grid * self.N**2 // 2_000_000))
            self._cache[key] = max(float(np.max(np.linalg.eigvalsh(self.evaluate(c))[..., -1])) for c in chunks)
        return self._cache[key]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "N": self.N, **_encode(self.params)}


# --- constructors ------------------------------------------------------------


def _ma_coeffs(A: np.ndarray) -> np.ndarray:
    """R_L = sum_k A_{k+L} A_k^* for the causal factor stack A_0..A_p."""
    p = A.shape[0] - 1
    R = np.zeros_like(A)
    for L in range(p + 1):
        for k in range(p + 1 - L):
            R[L] += A[k + L] @ A[k].conj().T
    return R


def white_noise(N: int) -> SpectralDensityModel:
    eye = np.eye(N, dtype=complex)
    return SpectralDensityModel("white_noise", N, eye[None], {}, factor=eye[None])


def moving_average(A: Sequence) -> SpectralDensityModel:
    """MA model x_k = xi_k + sum_l A_l xi_{k-l}, given the list A_1..A_q."""
    mats = [np.atleast_2d(np.asarray(a, dtype=complex)) for a in A]
    if not mats:
        raise ModelError("moving_average needs at least one coefficient matrix")
    N = mats[0].shape[0]
    if any(m.shape != (N, N) for m in mats):
        raise ModelError("all MA coefficients must be N x N")
    stack = np.concatenate([np.eye(N, dtype=complex)[None], np.stack(mats)], axis=0)
    return SpectralDensityModel("ma", N, _ma_coeffs(stack), {"A": stack[1:]}, factor=stack)


def toeplitz_from_symbol(symbol: np.ndarray) -> np.ndarray:
    """Toeplitz [a_{k-l}] from coefficients a_{1-N} .. a_{N-1}."""
    symbol = np.asarray(symbol, dtype=complex)
    N = (symbol.size + 1) // 2
    if symbol.size != 2 * N - 1:
        raise ModelError("Toeplitz symbol must have 2N-1 coefficients")
    k = np.arange(N)
    return symbol[(k[:, None] - k[None, :]) + N - 1]


def toeplitz_ma1(symbol: Sequence[complex]) -> SpectralDensityModel:
    """MA(1) model whose A_1 is Toeplitz with symbol coefficients a_{1-N}..a_{N-1}."""
    sym = np.asarray(symbol, dtype=complex).reshape(-1)
    A1 = toeplitz_from_symbol(sym)
    N = A1.shape[0]
    stack = np.stack([np.eye(N, dtype=complex), A1])
    return SpectralDensityModel("toeplitz_ma1", N, _ma_coeffs(stack), {"symbol": sym}, factor=stack)


def block_diag(M: int, B: Sequence) -> SpectralDensityModel:
    """M independent K-dimensional MA streams: A_l = I_M (x) B_l."""
    mats = [np.atleast_2d(np.asarray(b, dtype=complex)) for b in B]
    if M < 1 or not mats:
        raise ModelError("block_diag needs M >= 1 and at least one B_l")
    K = mats[0].shape[0]
    stack_k = np.concatenate([np.eye(K, dtype=complex)[None], np.stack(mats)], axis=0)
    stack = np.stack([np.kron(np.eye(M), b) for b in stack_k])
    return SpectralDensityModel(
        "block_diag", M * K, _ma_coeffs(stack), {"M": M, "K": K, "B": stack_k[1:]}, factor=stack
    )


def tabulated(R: Sequence, *, grid: int = DIAGNOSTIC_GRID, tol: float = 1e-10) -> SpectralDensityModel:
    """Model from autocovariances R_0..R_q (R_{-l} = R_l^*); rejects non-PSD densities."""
    mats = np.stack([np.atleast_2d(np.asarray(r, dtype=complex)) for r in R])
    N = mats.shape[1]
    if mats.shape[1:] != (N, N):
        raise ModelError("tabulated coefficients must be square")
    if np.max(np.abs(mats[0] - mats[0].conj().T)) > 1e-12 * max(1.0, np.abs(mats[0]).max()):
        raise ModelError("R_0 must be hermitian")
    mats[0] = (mats[0] + mats[0].conj().T) / 2
    model = SpectralDensityModel("tabulated", N, mats, {"R": mats})
    lo = min_eigenvalue_on_grid(model, grid)
    if lo < -tol * max(1.0, model.sup_norm(grid)):
        raise ModelError(f"tabulated density is not PSD on the diagnostic grid (min eig {lo:.3e})")
    return model


def min_eigenvalue_on_grid(model: SpectralDensityModel, grid: int = DIAGNOSTIC_GRID) -> float:
    th = 2 * np.pi * np.arange(grid) / grid
    return float(np.min(np.linalg.eigvalsh(model.evaluate(th))[..., 0]))


# --- operations --------------------------------------------------------------


def evaluate(model: SpectralDensityModel, theta) -> np.ndarray:
    return model.evaluate(theta)


def autocovariance(model: SpectralDensityModel, L: int, *, max_lag: int | None = None) -> np.ndarray:
    """R_L = (1/2pi) int e^{-i L theta} S(e^{i theta}) d theta, read off exactly."""
    L = int(L)
    if max_lag is not None and abs(L) > max_lag:
        raise ContractViolation(f"|L|={abs(L)} exceeds the configured max lag {max_lag}")
    if abs(L) > model.order:
        return np.zeros((model.N, model.N), dtype=complex)
    R = model.coeffs[abs(L)]
    return R.copy() if L >= 0 else R.conj().T.copy()


def autocovariance_quadrature(model_or_fn, L: int, nodes: int = DIAGNOSTIC_GRID) -> np.ndarray:
    """Trapezoid approximation of the same Fourier coefficient from point values."""
    fn = model_or_fn.evaluate if hasattr(model_or_fn, "evaluate") else model_or_fn
    th = 2 * np.pi * np.arange(nodes) / nodes
    S = fn(th)
    return np.einsum("k,kab->ab", np.exp(-1j * L * th), S) / nodes


def fejer_kernel(theta, n: int) -> np.ndarray:
    """F_{n-1}(theta) = (1/n) |sum_{l<n} e^{i l theta}|^2."""
    th = np.asarray(theta, dtype=float)
    s = np.sin(th / 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.sin(n * th / 2) ** 2 / (n * s**2)
    return np.where(np.abs(s) < 1e-12, float(n), val)


def fejer_weights(K: int, q: int) -> np.ndarray:
    """Triangular weights 1 - l/(K+1) for l = 0..q (zero beyond K)."""
    l = np.arange(q + 1)
    return np.where(l <= K, 1.0 - l / (K + 1.0), 0.0)


def fejer_smooth(model: SpectralDensityModel, K: int) -> SpectralDensityModel:
    """Convolution of S with the Fejer kernel F_K, returned as a tabulated model."""
    if K < 0:
        raise ContractViolation("Fejer order K must be >= 0")
    if model.kind == "white_noise":
        return model
    q = min(model.order, K)
    w = fejer_weights(K, model.order)[: q + 1]
    R = model.coeffs[: q + 1] * w[:, None, None]
    return SpectralDensityModel("tabulated", model.N, R, {"R": R})


def block_toeplitz_cov(model: SpectralDensityModel, n: int, *, budget: int = DEFAULT_TOEPLITZ_BUDGET) -> np.ndarray:
    """Covariance of vec X: the Nn x Nn block-Toeplitz matrix [R_{k-l} / n]."""
    if n < 1:
        raise ContractViolation("window length n must be >= 1")
    N = model.N
    if N * n > budget:
        raise ContractViolation(f"block-Toeplitz size N*n={N * n} exceeds the budget {budget}")
    cov = np.zeros((n, N, n, N), dtype=complex)
    for d in range(-(n - 1), n):
        R = autocovariance(model, d)
        if not np.any(R):
            continue
        k = np.arange(max(0, d), min(n, n + d))
        cov[k, :, k - d, :] = R
    return cov.reshape(n * N, n * N) / n


# --- assumption diagnostics --------------------------------------------------


@dataclass
class AssumptionReport:
    modulus_table: list[tuple[float, float]]
    sup_norm: float
    smin_R0: float
    lebesgue_small_sv: list[tuple[float, float]]
    log_integral: float
    extras: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "modulus_table": [list(p) for p in self.modulus_table],
            "sup_norm": self.sup_norm,
            "smin_R0": self.smin_R0,
            "lebesgue_small_sv": [list(p) for p in self.lebesgue_small_sv],
            "log_integral": self.log_integral,
            "extras": self.extras,
        }


def _smallest_sv_curve(model: SpectralDensityModel, theta: np.ndarray) -> np.ndarray:
    return np.clip(np.linalg.eigvalsh(model.evaluate(theta))[..., 0], 0.0, None)


def _convex_hull_distance(points: np.ndarray, hull_pts: np.ndarray) -> np.ndarray:
    """Distance of complex ``points`` to the convex hull of complex ``hull_pts``."""
    from scipy.spatial import ConvexHull, QhullError

    xy = np.column_stack([hull_pts.real, hull_pts.imag])
    p = np.column_stack([points.real, points.imag])
    try:
        hull = ConvexHull(xy)
    except (QhullError, ValueError):
        # degenerate (segment or point): distance to the segment
        idx = np.argsort(hull_pts.real + 1e-9 * hull_pts.imag)
        a, b = hull_pts[idx[0]], hull_pts[idx[-1]]
        return _segment_distance(points, a, b)
    verts = hull_pts[hull.vertices]
    eq = hull.equations  # a x + b y + c <= 0 inside
    inside = np.all(p @ eq[:, :2].T + eq[:, 2] <= 1e-12, axis=1)
    d = np.min(
        np.stack([_segment_distance(points, verts[i], verts[(i + 1) % len(verts)]) for i in range(len(verts))]),
        axis=0,
    )
    return np.where(inside, 0.0, d)


def _segment_distance(p: np.ndarray, a: complex, b: complex) -> np.ndarray:
    ab = b - a
    if abs(ab) == 0:
        return np.abs(p - a)
    t = np.clip(((p - a) * np.conj(ab)).real / abs(ab) ** 2, 0.0, 1.0)
    return np.abs(p - (a + t * ab))


def assumption_report(
    model: SpectralDensityModel,
    h_grid: Sequence[float] = (0.01, 0.05, 0.1, 0.5),
    delta_grid: Sequence[float] = (1e-3, 1e-2, 1e-1),
    *,
    grid: int = DIAGNOSTIC_GRID,
    modulus_grid: int = 512,
) -> AssumptionReport:
    """Numerical diagnostics of the regularity assumptions on a dense angle grid.

    The Lebesgue fractions and the log-integral are grid estimates, not bounds.
    The log-integral is ``(1/N) (1/2pi) int log s_{N-1}(S) d theta`` computed on a
    midpoint grid so that isolated zeros of the density are not sampled exactly.
    """
    N = model.N
    th_mid = 2 * np.pi * (np.arange(grid) + 0.5) / grid
    smin = _smallest_sv_curve(model, th_mid)

    th_mod = 2 * np.pi * np.arange(modulus_grid) / modulus_grid
    S_mod = model.evaluate(th_mod)
    step = 2 * np.pi / modulus_grid
    jmax = int(math.ceil(max(h_grid) / step)) if len(h_grid) else 0
    d = np.zeros(jmax + 1)
    for j in range(1, jmax + 1):
        diff = np.roll(S_mod, -j, axis=0) - S_mod
        d[j] = float(np.max(np.linalg.norm(diff, 2, axis=(1, 2)))) if N > 1 else float(np.max(np.abs(diff)))
    modulus = [(float(h), float(np.max(d[: int(math.floor(h / step + 1e-9)) + 1]))) for h in h_grid]

    R0 = model.coeffs[0]
    smin_R0 = float(np.linalg.eigvalsh(R0)[0])
    leb = [(float(dl), float(np.mean(smin <= dl))) for dl in delta_grid]
    with np.errstate(divide="ignore"):
        logs = np.log(smin)
    logs = np.where(np.isfinite(logs), logs, np.log(np.finfo(float).tiny))
    log_integral = float(np.mean(logs) / N)

    extras: dict[str, Any] = {}
    if model.factor is not None and model.factor.shape[0] > 1:
        extras["ma_coefficient_norm_sum"] = float(sum(np.linalg.norm(a, 2) for a in model.factor[1:]))
    if model.kind == "toeplitz_ma1":
        circle = np.exp(1j * th_mid)
        lags = np.arange(1 - N, N)
        curve = np.exp(1j * np.outer(th_mid, lags)) @ model.params["symbol"]
        dist = _convex_hull_distance(circle, curve)
        with np.errstate(divide="ignore"):
            ld = np.log(dist)
        ld = np.where(np.isfinite(ld), ld, np.log(np.finfo(float).tiny))
        extras["hull_distance"] = {
            "min": float(dist.min()),
            "mean": float(dist.mean()),
            "lebesgue_small": [(float(dl), float(np.mean(dist <= dl))) for dl in delta_grid],
            "log_integral": float(np.mean(ld) / N),
        }
    if model.kind == "block_diag":
        K = model.params["K"]
        b = float(sum(np.linalg.norm(B, 2) for B in model.params["B"]))
        extras["block_log_bound"] = (2 * K * (1 + b) ** 2 + (K + 1) * math.log((1 + b) ** 2)) / N
    return AssumptionReport(modulus, model.sup_norm(grid), smin_R0, leb, log_integral, extras)


# --- model file (JSON) -------------------------------------------------------


def _cpair(x) -> complex:
    if isinstance(x, (list, tuple)) and len(x) == 2:
        return complex(float(x[0]), float(x[1]))
    return complex(x)


def _carray(obj) -> np.ndarray:
    """Nested lists whose leaves are [re, im] pairs (or plain numbers)."""
    if isinstance(obj, (list, tuple)) and len(obj) == 2 and all(isinstance(v, (int, float)) for v in obj):
        return np.asarray(_cpair(obj))
    if isinstance(obj, (list, tuple)):
        return np.stack([_carray(o) for o in obj])
    return np.asarray(complex(obj))


def _encode(obj):
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj) or obj.dtype.kind in "fc":
            return _encode_c(obj)
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def _encode_c(a: np.ndarray):
    if a.ndim == 0:
        z = complex(a)
        return [z.real, z.imag]
    return [_encode_c(x) for x in a]


def model_from_dict(d: dict) -> SpectralDensityModel:
    """Build a model from its JSON description.

    Schema (complex numbers are ``[re, im]`` pairs)::

        {"kind": "white_noise", "N": 4}
        {"kind": "ma", "N": 2, "A": [A_1, ..., A_q]}            # each A_l N x N
        {"kind": "ma", "N": 64, "A": [a_1, ..., a_q]}           # scalars: A_l = a_l I_N
        {"kind": "toeplitz_ma1", "N": 3, "symbol": [a_{1-N}, ..., a_{N-1}]}
        {"kind": "block_diag", "M": 4, "K": 2, "B": [B_1, ..., B_q]}
        {"kind": "tabulated", "N": 2, "R": [R_0, ..., R_q]}
    """
    if not isinstance(d, dict) or "kind" not in d:
        raise ModelError("model definition needs a 'kind' key")
    kind = d["kind"]
    try:
        if kind == "white_noise":
            return white_noise(int(d["N"]))
        if kind == "ma":
            A = _carray(d["A"])
            if A.ndim == 0:  # a single [re, im] pair: one complex coefficient
                A = A[None]
            if A.ndim == 1:  # scalar coefficients a_l, meaning A_l = a_l I_N
                A = A[:, None, None] * np.eye(int(d.get("N", 1)))
            model = moving_average(list(A))
        elif kind == "toeplitz_ma1":
            model = toeplitz_ma1(_carray(d["symbol"]).reshape(-1))
        elif kind == "block_diag":
            B = _carray(d["B"])
            if B.ndim == 1:
                B = B[:, None, None]
            model = block_diag(int(d["M"]), list(B))
            if "K" in d and int(d["K"]) != model.params["K"]:
                raise ModelError("K does not match the size of the B matrices")
        elif kind == "tabulated":
            R = _carray(d["R"])
            if R.ndim == 1:
                R = R[:, None, None]
            model = tabulated(list(R))
        else:
            raise ModelError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    except KeyError as exc:
        raise ModelError(f"model of kind {kind!r} is missing key {exc}") from None
    except (ValueError, TypeError) as exc:
        raise ModelError(f"malformed {kind!r} model: {exc}") from None
    if "N" in d and int(d["N"]) != model.N:
        raise ModelError(f"declared N={d['N']} does not match the coefficients (N={model.N})")
    return model


def load_model(path: str | Path) -> SpectralDensityModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def save_model(model: SpectralDensityModel, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=2)
