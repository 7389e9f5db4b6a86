"""Dense complex linear algebra used throughout the package.

Everything here is a pure function of its inputs.  Matrices are plain
``numpy.ndarray`` objects of complex dtype; hermitian inputs are checked
against a relative tolerance rather than trusted.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

HERMITIAN_RTOL = 1e-12
COND_THRESHOLD = 1e-10


class ContractViolation(ValueError):
    """Raised when an input does not satisfy an operation's precondition."""


class ConvergenceError(RuntimeError):
    """Raised when an iterative method stops before meeting its tolerance."""

    def __init__(self, message: str, residual: float = float("nan"), trace=None):
        super().__init__(message)
        self.residual = residual
        self.trace = trace or []


def as_cmatrix(a, *, square: bool = False) -> np.ndarray:
    m = np.array(a, dtype=complex, copy=True)
    if m.ndim == 1 and m.size == 1:
        m = m.reshape(1, 1)
    if m.ndim != 2:
        raise ContractViolation(f"expected a 2-d matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ContractViolation("matrix has non-finite entries")
    if square and m.shape[0] != m.shape[1]:
        raise ContractViolation(f"expected a square matrix, got shape {m.shape}")
    return m


def _scale(a: np.ndarray) -> float:
    s = float(np.max(np.abs(a))) if a.size else 0.0
    return s if s > 0 else 1.0


def is_hermitian(a: np.ndarray, rtol: float = HERMITIAN_RTOL) -> bool:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    return float(np.max(np.abs(a - a.conj().T), initial=0.0)) <= rtol * _scale(a)


def hermitian_eigh(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a hermitian matrix, eigenvalues nonincreasing."""
    a = as_cmatrix(a, square=True)
    if not is_hermitian(a):
        raise ContractViolation("hermitian_eigenvalues requires a hermitian matrix")
    w, v = np.linalg.eigh((a + a.conj().T) / 2)
    return w[::-1].copy(), v[:, ::-1].copy()


def hermitian_eigenvalues(a) -> np.ndarray:
    return hermitian_eigh(a)[0]


def singular_values(m) -> np.ndarray:
    """Singular values s_0 >= s_1 >= ... of a rectangular matrix."""
    m = as_cmatrix(m)
    if m.size == 0:
        return np.zeros(0)
    return np.linalg.svd(m, compute_uv=False)


def hermitize(m) -> np.ndarray:
    """The 2m x 2m hermitian matrix [[0, M], [M*, 0]]."""
    m = as_cmatrix(m, square=True)
    k = m.shape[0]
    h = np.zeros((2 * k, 2 * k), dtype=complex)
    h[:k, k:] = m
    h[k:, :k] = m.conj().T
    return h


# --- general (non-hermitian) eigenvalues -------------------------------------


def hessenberg(a) -> np.ndarray:
    """Householder reduction to upper Hessenberg form (similarity transform)."""
    h = as_cmatrix(a, square=True)
    m = h.shape[0]
    for k in range(m - 2):
        x = h[k + 1 :, k]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        phase = x[0] / abs(x[0]) if x[0] != 0 else 1.0
        v = x.copy()
        v[0] += phase * alpha
        v /= np.linalg.norm(v)
        h[k + 1 :, :] -= 2.0 * np.outer(v, v.conj() @ h[k + 1 :, :])
        h[:, k + 1 :] -= 2.0 * np.outer(h[:, k + 1 :] @ v, v.conj())
        h[k + 2 :, k] = 0.0
    return h


def _wilkinson_shift(a, b, c, d) -> complex:
    # eigenvalue of [[a, b], [c, d]] closest to d
    mid = (a + d) / 2
    disc = np.sqrt(((a - d) / 2) ** 2 + b * c)
    r1, r2 = mid + disc, mid - disc
    return r1 if abs(r1 - d) < abs(r2 - d) else r2


def general_eigenvalues(a, *, max_sweeps_per_dim: int = 30) -> np.ndarray:
    """Eigenvalues of a square complex matrix.

    Hessenberg reduction followed by single-shift complex QR sweeps with
    Wilkinson shifts and deflation.  At most ``max_sweeps_per_dim * m``
    sweeps are performed; exceeding that raises :class:`ConvergenceError`
    carrying the size of the offending subdiagonal entry.
    """
    h = hessenberg(a)
    m = h.shape[0]
    eig = np.zeros(m, dtype=complex)
    eps = np.finfo(float).eps
    norm = _scale(h)
    hi = m - 1
    sweeps = 0
    since_deflation = 0
    cap = max_sweeps_per_dim * max(m, 1)
    while hi >= 0:
        if hi == 0:
            eig[0] = h[0, 0]
            break
        lo = hi
        while lo > 0:
            tiny = eps * (abs(h[lo, lo]) + abs(h[lo - 1, lo - 1]))
            if abs(h[lo, lo - 1]) <= max(tiny, eps * eps * norm):
                h[lo, lo - 1] = 0.0
                break
            lo -= 1
        if lo == hi:
            eig[hi] = h[hi, hi]
            hi -= 1
            since_deflation = 0
            continue
        if sweeps >= cap:
            raise ConvergenceError(
                f"QR iteration did not converge after {sweeps} sweeps",
                residual=float(abs(h[hi, hi - 1])),
            )
        if since_deflation and since_deflation % 10 == 0:
            mu = h[hi, hi] + 0.75 * abs(h[hi, hi - 1]) * np.exp(1j * since_deflation)
        else:
            mu = _wilkinson_shift(h[hi - 1, hi - 1], h[hi - 1, hi], h[hi, hi - 1], h[hi, hi])
        sub = h[lo : hi + 1, lo : hi + 1]
        k = sub.shape[0]
        sub[np.diag_indices(k)] -= mu
        rots = []
        for i in range(k - 1):
            x, y = sub[i, i], sub[i + 1, i]
            r = np.hypot(abs(x), abs(y))
            if r == 0.0:
                g = np.eye(2, dtype=complex)
            else:
                g = np.array([[x.conjugate(), y.conjugate()], [-y, x]]) / r
            sub[i : i + 2, i:] = g @ sub[i : i + 2, i:]
            rots.append(g)
        for i, g in enumerate(rots):
            top = min(i + 2, k)
            sub[:top, i : i + 2] = sub[:top, i : i + 2] @ g.conj().T
        sub[np.diag_indices(k)] += mu
        sweeps += 1
        since_deflation += 1
    return eig


# --- structured matrices -----------------------------------------------------


@dataclass(frozen=True)
class FourierPack:
    """DFT matrix F, Omega = diag(omega^k) with omega = exp(-2 i pi / n), shift J."""

    n: int
    F: np.ndarray
    Omega: np.ndarray
    J: np.ndarray

    @property
    def omega_diag(self) -> np.ndarray:
        return np.diag(self.Omega).copy()


def fourier_matrix(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.exp(2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def shift_matrix(n: int) -> np.ndarray:
    """Circulant J with ones on the subdiagonal and in the top-right corner."""
    return np.roll(np.eye(n, dtype=complex), 1, axis=0)


@lru_cache(maxsize=32)
def _fourier_pack(n: int) -> FourierPack:
    F = fourier_matrix(n)
    Omega = np.diag(np.exp(-2j * np.pi * np.arange(n) / n))
    pack = FourierPack(n=n, F=F, Omega=Omega, J=shift_matrix(n))
    for arr in (pack.F, pack.Omega, pack.J):
        arr.setflags(write=False)
    return pack


def fourier_pack(n: int) -> FourierPack:
    if n < 1:
        raise ContractViolation("n must be positive")
    return _fourier_pack(int(n))


def column_distance(m) -> float:
    """Distance from column 0 of ``m`` to the span of its remaining columns.

    Uses the bordered formula
    ``|m00 - m01 M11^{-1} m10| / sqrt(1 + ||m01 M11^{-1}||^2)``,
    which needs the trailing principal block ``M11`` to be invertible.
    """
    m = as_cmatrix(m, square=True)
    if m.shape[0] == 1:
        return float(abs(m[0, 0]))
    m00, m01, m10, m11 = m[0, 0], m[0:1, 1:], m[1:, 0:1], m[1:, 1:]
    s = singular_values(m11)
    if s[-1] <= COND_THRESHOLD * s[0] or s[0] == 0.0:
        raise ContractViolation(
            "column_distance: trailing block M11 is numerically singular "
            f"(s_min={s[-1]:.3e}, s_max={s[0]:.3e})"
        )
    row = np.linalg.solve(m11.T, m01.T).T  # m01 M11^{-1}
    num = abs(m00 - (row @ m10)[0, 0])
    return float(num / np.sqrt(1.0 + np.linalg.norm(row) ** 2))


def projector_distance(v, basis) -> float:
    """||(I - Pi) v|| with Pi the orthogonal projector onto colspan(basis)."""
    v = np.asarray(v, dtype=complex).reshape(-1)
    basis = np.asarray(basis, dtype=complex)
    if basis.size == 0:
        return float(np.linalg.norm(v))
    q, r = np.linalg.qr(basis)
    rank = int(np.sum(np.abs(np.diag(r)) > 1e-13 * max(abs(r).max(), 1e-300)))
    q = q[:, :rank]
    return float(np.linalg.norm(v - q @ (q.conj().T @ v)))


# --- 2x2 block helpers -------------------------------------------------------


def kron2(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != (2, 2) or b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise ContractViolation("kron2 expects a 2x2 and a square matrix")
    return np.kron(a, b)


def block_get(m, u: int, v: int) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] % 2:
        raise ContractViolation("block_get expects a 2N x 2N matrix")
    if u not in (0, 1) or v not in (0, 1):
        raise ContractViolation("block indices must be 0 or 1")
    N = m.shape[0] // 2
    return m[u * N : (u + 1) * N, v * N : (v + 1) * N]


def blocks(m) -> np.ndarray:
    """View a 2N x 2N matrix as an array of shape (2, 2, N, N)."""
    m = np.asarray(m)
    N = m.shape[0] // 2
    return m.reshape(2, N, 2, N).transpose(0, 2, 1, 3)


def trace_op_T(m, n: int) -> np.ndarray:
    """2x2 matrix of normalized block traces [tr M_uv / n]."""
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] % 2:
        raise ContractViolation("trace_op_T expects a 2N x 2N matrix")
    if n <= 0:
        raise ContractViolation("n must be positive")
    return np.trace(blocks(m), axis1=2, axis2=3) / n


def spectral_norm(m) -> float:
    m = np.asarray(m)
    if m.size == 0:
        return 0.0
    return float(np.linalg.norm(m, 2))


def psd_sqrt(a, clamp: float = 1e-12) -> np.ndarray:
    """Hermitian square root; eigenvalues in [-clamp*||a||, 0) are set to 0."""
    w, v = np.linalg.eigh((np.asarray(a) + np.asarray(a).conj().T) / 2)
    scale = max(float(np.max(np.abs(w), initial=0.0)), 1.0)
    if np.any(w < -clamp * scale):
        raise ContractViolation(f"matrix is not PSD (min eigenvalue {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T
