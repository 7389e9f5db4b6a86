"""Gaussian sampling of the observation window and empirical autocovariances.

``X`` holds the scaled observations ``x_k = bold_x_k / sqrt(n)`` as columns,
``Y = X F`` their discrete Fourier transform.  The lag-L empirical
autocovariance uses circular (modulo-n) indexing, so that
``Rhat_L = X J^L X^* = Y Omega^L Y^*``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linalg import ContractViolation, fourier_pack, psd_sqrt
from .models import SpectralDensityModel, block_toeplitz_cov

EXACT_BUDGET = 4096
_MAGIC = b"ACOVBLK1"
_SAMPLERS = ("exact", "circulant", "external")


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator; (seed, stream) pairs give independent streams."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def complex_normal(rng: np.random.Generator, size) -> np.ndarray:
    """Standard circular complex Gaussians, E|xi|^2 = 1."""
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class SampleBlock:
    X: np.ndarray
    Y: np.ndarray
    seed: int
    sampler: str
    stream: int = 0

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_X(cls, X, seed: int = 0, sampler: str = "external", stream: int = 0) -> "SampleBlock":
        X = np.asarray(X, dtype=complex)
        if X.ndim != 2 or not np.all(np.isfinite(X)):
            raise ContractViolation("X must be a finite 2-d array")
        return cls(X, X @ fourier_pack(X.shape[1]).F, seed, sampler, stream)


def sample_exact(model: SpectralDensityModel, n: int, seed: int, *, stream: int = 0, budget: int = EXACT_BUDGET) -> SampleBlock:
    """vec X = Rcal^{1/2} xi with Rcal the block-Toeplitz covariance of the window."""
    if model.N * n > budget:
        raise ContractViolation(f"exact sampler: N*n={model.N * n} exceeds the budget {budget}")
    root = psd_sqrt(block_toeplitz_cov(model, n, budget=budget))
    vec = root @ complex_normal(make_rng(seed, stream), model.N * n)
    X = vec.reshape(n, model.N).T
    return SampleBlock(X, X @ fourier_pack(n).F, int(seed), "exact", stream)


def frequency_roots(model: SpectralDensityModel, n: int) -> np.ndarray:
    """S(e^{2 i pi k / n})^{1/2} for k = 0..n-1, shape (n, N, N)."""
    S = model.evaluate(2 * np.pi * np.arange(n) / n)
    if model.order == 0:
        return np.broadcast_to(psd_sqrt(S[0]), S.shape)
    return np.stack([psd_sqrt(s) for s in S])


def sample_circulant(
    model: SpectralDensityModel, n: int, seed: int, *, stream: int = 0, roots: np.ndarray | None = None
) -> SampleBlock:
    """Independent DFT columns w_k ~ N_C(0, S(e^{2 i pi k/n}) / n); Y = W, X = Y F^*."""
    if roots is None:
        roots = frequency_roots(model, n)
    xi = complex_normal(make_rng(seed, stream), (n, model.N))
    W = np.einsum("kab,kb->ak", roots, xi) / np.sqrt(n)
    X = W @ fourier_pack(n).F.conj().T
    return SampleBlock(X, W, int(seed), "circulant", stream)


def sample(model: SpectralDensityModel, n: int, seed: int, sampler: str = "circulant", **kw) -> SampleBlock:
    if sampler == "exact":
        return sample_exact(model, n, seed, **kw)
    if sampler == "circulant":
        return sample_circulant(model, n, seed, **kw)
    raise ContractViolation(f"unknown sampler {sampler!r}")


def autocov_time_domain(X: np.ndarray, L: int) -> np.ndarray:
    """(1/n) sum_l bold_x_{l+L} bold_x_l^*, indices modulo n."""
    return np.roll(X, -L, axis=1) @ X.conj().T


def autocov_frequency_domain(Y: np.ndarray, L: int) -> np.ndarray:
    n = Y.shape[1]
    w = np.exp(-2j * np.pi * L * np.arange(n) / n)
    return (Y * w) @ Y.conj().T


def empirical_autocov(block: SampleBlock, L: int, *, check: bool = False, tol: float = 1e-10) -> np.ndarray:
    """Lag-L empirical autocovariance with modulo-n summation.

    With ``check=True`` the frequency-domain route ``Y Omega^L Y^*`` is also
    evaluated and an ``AssertionError`` is raised if the two disagree.
    """
    if not 0 <= L < block.n:
        raise ContractViolation(f"lag L={L} outside [0, n={block.n})")
    R = autocov_time_domain(block.X, L)
    if check:
        R2 = autocov_frequency_domain(block.Y, L)
        scale = max(1.0, float(np.abs(R).max()))
        gap = float(np.abs(R - R2).max())
        if gap > tol * scale:
            raise AssertionError(f"time/frequency autocovariance mismatch {gap:.3e}")
    return R


def gaussian_sanity(
    cov,
    t: float,
    trials: int,
    seed: int,
    *,
    alpha: float | None = None,
    m: int | None = None,
) -> dict:
    """Empirical norm tails of Sigma^{1/2} xi against the Gaussian tail bounds.

    Upper tail: P[||Sigma^{1/2} xi|| >= sqrt(2 N t)] <= exp(-(t/||Sigma|| - 1) N).
    Lower tail (when ``alpha`` and ``m`` are given, with s_{m-1}(Sigma) >= alpha):
    frequency of ||Sigma^{1/2} xi|| <= sqrt(alpha m / 2), whose bound has no
    explicit constant and is only reported.
    """
    if trials < 100:
        raise ContractViolation("gaussian_sanity needs at least 100 trials")
    cov = np.atleast_2d(np.asarray(cov, dtype=complex))
    N = cov.shape[0]
    root = psd_sqrt(cov)
    xi = complex_normal(make_rng(seed), (trials, N))
    norms = np.linalg.norm(xi @ root.T, axis=1)
    snorm = float(np.linalg.norm(cov, 2))
    p_up = float(np.mean(norms >= np.sqrt(2 * N * t)))
    bound = float(np.exp(-(t / snorm - 1.0) * N)) if snorm > 0 else 0.0
    se = float(np.sqrt(max(p_up * (1 - p_up), 1.0 / trials) / trials))
    report = {
        "N": N,
        "trials": trials,
        "t": float(t),
        "upper_frequency": p_up,
        "upper_bound": bound,
        "upper_se": se,
        "upper_ok": p_up <= bound + 3 * se,
        "mean_sq_norm_over_N": float(np.mean(norms**2) / N),
    }
    if alpha is not None and m is not None:
        report["lower_frequency"] = float(np.mean(norms <= np.sqrt(alpha * m / 2)))
    return report


# --- binary container --------------------------------------------------------
# layout: 8-byte magic, then little-endian u64 N, u64 n, u64 seed, u64 stream,
# 16-byte sampler name (ascii, NUL padded), then X and Y as column-major
# complex128 arrays.

def dump_block(block: SampleBlock, path: str | Path) -> None:
    name = block.sampler.encode("ascii")[:16].ljust(16, b"\0")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QQQQ", block.N, block.n, block.seed, block.stream))
        fh.write(name)
        fh.write(np.asfortranarray(block.X, dtype="<c16").tobytes(order="F"))
        fh.write(np.asfortranarray(block.Y, dtype="<c16").tobytes(order="F"))


def load_block(path: str | Path) -> SampleBlock:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError(f"{path}: not a sample block file")
        N, n, seed, stream = struct.unpack("<QQQQ", fh.read(32))
        sampler = fh.read(16).rstrip(b"\0").decode("ascii")
        size = N * n * 16
        X = np.frombuffer(fh.read(size), dtype="<c16").reshape((N, n), order="F").copy()
        Y = np.frombuffer(fh.read(size), dtype="<c16").reshape((N, n), order="F").copy()
    return SampleBlock(X, Y, int(seed), sampler, int(stream))
