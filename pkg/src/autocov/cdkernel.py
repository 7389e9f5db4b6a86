"""Marginal and conditional covariances of the DFT columns y_k.

``y_k = (f_k (x) I) vec X`` where ``f_k`` is row k of the DFT matrix.  The
conditional covariance of ``y_k`` given the other columns of ``Y`` is the
Schur complement ``((f_k (x) I) Rcal^{-1} (f_k^* (x) I))^{-1}``, the inverse
of the diagonal Christoffel-Darboux kernel.  After scaling by n both
covariances approach ``S(e^{2 i pi k / n})`` as n grows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .linalg import ContractViolation, fourier_pack, singular_values
from .models import DEFAULT_TOEPLITZ_BUDGET, SpectralDensityModel, block_toeplitz_cov, fejer_kernel

CHOLESKY_JITTER = 1e-13


def _dft_rows(n: int, N: int, ks) -> np.ndarray:
    """Stack of (f_k^* (x) I_N) for k in ks, shape (len(ks), nN, N)."""
    F = fourier_pack(n).F
    eye = np.eye(N)
    return np.stack([np.kron(F[k].conj()[:, None], eye) for k in ks])


def _factor(cov: np.ndarray):
    try:
        return sla.cho_factor(cov, lower=True)
    except np.linalg.LinAlgError:
        pass
    jitter = CHOLESKY_JITTER * max(float(np.real(np.trace(cov))) / cov.shape[0], 1e-300)
    msg = "block-Toeplitz covariance is singular; the spectral density must be non-trivial"
    try:
        cf = sla.cho_factor(cov + jitter * np.eye(cov.shape[0]), lower=True)
    except np.linalg.LinAlgError as exc:
        raise ContractViolation(msg) from exc
    # a pivot at the jitter scale means the jitter, not the data, made it definite
    if np.min(np.abs(np.diag(cf[0]))) ** 2 <= 100 * jitter:
        raise ContractViolation(msg)
    return cf


def _ks(n: int, k) -> list[int]:
    ks = list(range(n)) if k is None else [int(k)] if np.isscalar(k) else [int(v) for v in k]
    if any(not 0 <= v < n for v in ks):
        raise ContractViolation(f"frequency index outside [0, {n})")
    return ks


def conditional_covariances(model: SpectralDensityModel, n: int, ks=None, *, budget: int = DEFAULT_TOEPLITZ_BUDGET) -> np.ndarray:
    """E[ytilde_k ytilde_k^*] for each k in ks (default all), shape (len, N, N)."""
    ks = _ks(n, ks)
    cov = n * block_toeplitz_cov(model, n, budget=budget)  # better scaled
    cf = _factor(cov)
    V = _dft_rows(n, model.N, ks)
    out = np.empty((len(ks), model.N, model.N), dtype=complex)
    for i, v in enumerate(V):
        kernel = v.conj().T @ sla.cho_solve(cf, v)  # (f (x) I) (n Rcal)^{-1} (f^* (x) I)
        inv = np.linalg.inv(kernel) / n
        out[i] = (inv + inv.conj().T) / 2
    return out


def conditional_covariance(model: SpectralDensityModel, n: int, k: int, **kw) -> np.ndarray:
    return conditional_covariances(model, n, [k], **kw)[0]


def marginal_covariances(model: SpectralDensityModel, n: int, ks=None, *, budget: int = DEFAULT_TOEPLITZ_BUDGET) -> np.ndarray:
    """n E[y_k y_k^*] = n (f_k (x) I) Rcal (f_k^* (x) I), shape (len, N, N)."""
    ks = _ks(n, ks)
    cov = n * block_toeplitz_cov(model, n, budget=budget)
    V = _dft_rows(n, model.N, ks)
    return np.conj(np.swapaxes(V, 1, 2)) @ (cov @ V)


def marginal_covariance(model: SpectralDensityModel, n: int, k: int, **kw) -> np.ndarray:
    return marginal_covariances(model, n, [k], **kw)[0]


def marginal_covariance_fejer(model: SpectralDensityModel, n: int, k: int, nodes: int | None = None) -> np.ndarray:
    """(1/2pi) int F_{n-1}(theta - 2 pi k/n) S(e^{i theta}) d theta by trapezoid quadrature."""
    if nodes is None:
        nodes = max(4096, 4 * (n + model.order))
    th = 2 * np.pi * np.arange(nodes) / nodes
    w = fejer_kernel(th - 2 * np.pi * k / n, n)
    return np.einsum("t,tab->ab", w, model.evaluate(th)) / nodes


@dataclass
class CDReport:
    n: int
    delta: float
    theta: np.ndarray
    marginal: np.ndarray  # n E[y_k y_k^*]
    conditional: np.ndarray  # n E[ytilde_k ytilde_k^*]
    target: np.ndarray
    good: np.ndarray
    err_marginal: np.ndarray = field(init=False)
    err_conditional: np.ndarray = field(init=False)

    def __post_init__(self):
        self.err_marginal = np.linalg.norm(self.marginal - self.target, 2, axis=(1, 2))
        self.err_conditional = np.linalg.norm(self.conditional - self.target, 2, axis=(1, 2))

    @property
    def max_good_error(self) -> float:
        if not np.any(self.good):
            return float("nan")
        return float(np.max(self.err_conditional[self.good]))

    def ordering_gap(self) -> float:
        """Largest eigenvalue of conditional - marginal (<= 0 up to rounding)."""
        return float(np.max(np.linalg.eigvalsh(self.conditional - self.marginal)[:, -1]))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "delta": self.delta,
            "max_good_error": self.max_good_error,
            "max_marginal_error": float(self.err_marginal.max()),
            "good_count": int(self.good.sum()),
        }


def cd_report(model: SpectralDensityModel, n: int, delta: float | None = None, **kw) -> CDReport:
    if delta is None:
        delta = 0.1 * model.sup_norm()
    theta = 2 * np.pi * np.arange(n) / n
    target = model.evaluate(theta)
    smin = np.array([singular_values(s)[-1] for s in target])
    return CDReport(
        n=n,
        delta=float(delta),
        theta=theta,
        marginal=marginal_covariances(model, n, **kw),
        conditional=n * conditional_covariances(model, n, **kw),
        target=target,
        good=smin >= delta,
    )


def cd_convergence_report(model: SpectralDensityModel, n_list: Sequence[int], delta: float | None = None, **kw) -> list[CDReport]:
    """One report per window length; n_list must be increasing."""
    n_list = [int(v) for v in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ContractViolation("n list must be strictly increasing")
    return [cd_report(model, n, delta, **kw) for n in n_list]


def write_cd_csv(report: CDReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "theta", "err_marginal", "err_conditional", "good_flag"])
        for k in range(report.n):
            w.writerow([
                k,
                "%.17g" % report.theta[k],
                "%.17g" % report.err_marginal[k],
                "%.17g" % report.err_conditional[k],
                int(report.good[k]),
            ])
