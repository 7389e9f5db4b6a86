"""Monte Carlo experiments on small singular values of Rhat_L - z.

Also checks the column-distance identity for the linearization

    H = [[Omega^{-L}, Y^*], [Y, z I_N]]

and the variance bound for traces of resolvent blocks of the hermitization.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.stats import norm

from .linalg import ContractViolation, fourier_pack, hermitize, projector_distance, singular_values
from .models import SpectralDensityModel
from .sampling import SampleBlock, empirical_autocov, frequency_roots, sample

MAX_SKIP_RATE = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    model: SpectralDensityModel
    n: int
    L: int = 1
    z: complex = 1.0
    trials: int = 500
    seed: int = 0
    sampler: str = "circulant"

    @property
    def N(self) -> int:
        return self.model.N

    @property
    def gamma(self) -> float:
        return self.N / self.n

    def describe(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "N": self.N,
            "n": self.n,
            "L": self.L,
            "z": [float(np.real(self.z)), float(np.imag(self.z))],
            "trials": self.trials,
            "seed": self.seed,
            "sampler": self.sampler,
        }


def wilson_interval(k, m, conf: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
    """Wilson score interval for k successes out of m trials."""
    k = np.asarray(k, dtype=float)
    zq = norm.ppf(0.5 + conf / 2)
    p = k / m
    denom = 1 + zq**2 / m
    centre = (p + zq**2 / (2 * m)) / denom
    half = zq * np.sqrt(p * (1 - p) / m + zq**2 / (4 * m * m)) / denom
    return np.clip(centre - half, 0, 1), np.clip(centre + half, 0, 1)


@dataclass
class TailExperiment:
    config: dict
    grid: np.ndarray  # t values or k values
    exceedance: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    trials: int
    kind: str = "smallest"
    extra: dict = field(default_factory=dict)

    def rows(self):
        for i in range(len(self.grid)):
            yield self.grid[i], self.exceedance[i], self.ci_low[i], self.ci_high[i], self.trials

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_or_k", "exceedance", "ci_low", "ci_high", "trials"])
            for g, e, lo, hi, m in self.rows():
                w.writerow(["%.17g" % g, "%.17g" % e, "%.17g" % lo, "%.17g" % hi, m])


def _one_trial(args) -> np.ndarray:
    model, n, L, z, seed, stream, sampler, roots = args
    kw = {"stream": stream}
    if sampler == "circulant":
        kw["roots"] = roots
    b = sample(model, n, seed, sampler, **kw)
    return singular_values(empirical_autocov(b, L) - z * np.eye(model.N))


def trial_singular_values(cfg: ExperimentConfig, workers: int = 1) -> np.ndarray:
    """Singular values of Rhat_L - z for every trial, shape (trials, N); trial i uses stream i."""
    roots = frequency_roots(cfg.model, cfg.n) if cfg.sampler == "circulant" else None
    jobs = [(cfg.model, cfg.n, cfg.L, cfg.z, cfg.seed, i, cfg.sampler, roots) for i in range(cfg.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return np.stack(list(ex.map(_one_trial, jobs, chunksize=max(1, len(jobs) // (4 * workers)))))
    return np.stack([_one_trial(j) for j in jobs])


def linear_envelope(t: np.ndarray, p: np.ndarray) -> dict:
    """Tightest line a + b t (a, b >= 0) lying above the exceedance curve.

    Minimizes the area under the line over the t grid subject to
    a + b t_i >= p_i, mirroring a bound of the form eps * t + intercept.
    """
    res = linprog(
        c=[len(t), float(np.sum(t))],
        A_ub=-np.stack([np.ones_like(t), t], axis=1),
        b_ub=-p,
        bounds=[(0, None), (0, None)],
        method="highs",
    )
    if not res.success:
        raise RuntimeError(f"envelope fit failed: {res.message}")
    a, b = res.x
    return {"intercept": float(a), "slope": float(b), "inside": bool(np.all(p <= a + b * t + 1e-12))}


def tail_smallest(cfg: ExperimentConfig, t_grid: Sequence[float], *, svals: np.ndarray | None = None, workers: int = 1) -> TailExperiment:
    """Empirical P[s_{N-1}(Rhat_L - z) <= N^{-3/2} t] for each t."""
    if cfg.z == 0:
        raise ContractViolation("tail_smallest requires z != 0")
    if cfg.trials < 100:
        raise ContractViolation("tail_smallest needs at least 100 trials")
    t = np.sort(np.asarray(t_grid, dtype=float))
    if svals is None:
        svals = trial_singular_values(cfg, workers)
    smin = svals[:, -1] * cfg.N**1.5
    hits = (smin[None, :] <= t[:, None]).sum(axis=1)
    p = hits / cfg.trials
    lo, hi = wilson_interval(hits, cfg.trials)
    se = np.sqrt(np.maximum(p * (1 - p), 1.0 / cfg.trials) / cfg.trials)
    extra = linear_envelope(t, p)
    extra["se"] = se.tolist()
    extra["scaled_smin_quantiles"] = np.quantile(smin, [0.01, 0.1, 0.5]).tolist()
    return TailExperiment(cfg.describe(), t, p, lo, hi, cfg.trials, "smallest", extra)


def k_range(N: int, beta: float) -> tuple[int, int]:
    return int(np.floor(N**beta)), N // 2


def tail_intermediate(
    cfg: ExperimentConfig,
    beta: float,
    k_grid: Sequence[int] | None = None,
    c_grid: Sequence[float] = (0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0),
    *,
    c_report: float = 0.01,
    svals: np.ndarray | None = None,
    workers: int = 1,
) -> TailExperiment:
    """Empirical P[s_{N-k-1}(Rhat_L - z) <= c sqrt(k)/N] over k and c.

    The main curve uses ``c_report``; ``extra`` holds the full (k, c) table and
    the largest c per k whose exceedance stays at or below 0.01.
    """
    N = cfg.N
    kmin, kmax = k_range(N, beta)
    if k_grid is None:
        k_grid = sorted(set(np.unique(np.geomspace(max(kmin, 1), kmax, 8).astype(int))))
    k = np.asarray(k_grid, dtype=int)
    if np.any(k < kmin) or np.any(k > kmax):
        raise ContractViolation(f"k values must lie in [{kmin}, {kmax}]")
    if svals is None:
        svals = trial_singular_values(cfg, workers)
    s = svals[:, N - k - 1]  # (trials, len(k))
    c = np.asarray(sorted(c_grid), dtype=float)
    thresh = c[:, None] * np.sqrt(k)[None, :] / N  # (len(c), len(k))
    table = (s[None, :, :] <= thresh[:, None, :]).mean(axis=1)
    largest_c = []
    for j in range(k.size):
        ok = c[table[:, j] <= 0.01]
        largest_c.append(float(ok.max()) if ok.size else 0.0)
    hits = (s <= c_report * np.sqrt(k)[None, :] / N).sum(axis=0)
    p = hits / cfg.trials
    lo, hi = wilson_interval(hits, cfg.trials)
    extra = {
        "beta": beta,
        "c_report": c_report,
        "c_grid": c.tolist(),
        "table": table.tolist(),
        "largest_c": largest_c,
        "median_scaled": np.median(s * N / np.sqrt(k)[None, :], axis=0).tolist(),
    }
    return TailExperiment(cfg.describe(), k.astype(float), p, lo, hi, cfg.trials, "intermediate", extra)


# --- distance identity -------------------------------------------------------


def linearization(Y: np.ndarray, L: int, z: complex) -> np.ndarray:
    """H = [[Omega^{-L}, Y^*], [Y, z I_N]] of size (n + N)."""
    N, n = Y.shape
    om = fourier_pack(n).omega_diag ** (-L)
    H = np.zeros((n + N, n + N), dtype=complex)
    H[np.arange(n), np.arange(n)] = om
    H[:n, n:] = Y.conj().T
    H[n:, :n] = Y
    H[n:, n:] = z * np.eye(N)
    return H


def distance_formula(H: np.ndarray, Y: np.ndarray, L: int, k: int) -> float:
    """Right side of the column-k distance identity via the blocks of G_k^{-1}."""
    N, n = Y.shape
    keep = np.delete(np.arange(n + N), k)
    Gk = H[np.ix_(keep, keep)]
    s = singular_values(Gk)
    if s[-1] <= 1e-10 * s[0]:
        raise np.linalg.LinAlgError("G_k numerically singular")
    Ginv = np.linalg.inv(Gk)
    P = Ginv[n - 1 :, : n - 1]
    D = Ginv[n - 1 :, n - 1 :]
    y = Y[:, k]
    w = np.exp(-2j * np.pi * k / n) ** (-L)
    num = abs(w - y.conj() @ D @ y)
    den = np.sqrt(1 + np.linalg.norm(y.conj() @ P) ** 2 + np.linalg.norm(y.conj() @ D) ** 2)
    return float(num / den)


@dataclass
class DistanceReport:
    max_rel_error: float
    instances: int
    checked: int
    skipped: int
    lin_ok: bool
    htronc_ok: bool
    lin_margin: float  # min over instances of s_{N-1}(Y Om^L Y^* - z) - s_{N+n-1}(H)
    htronc_margin: float

    @property
    def skip_rate(self) -> float:
        return self.skipped / max(self.checked + self.skipped, 1)

    @property
    def ok(self) -> bool:
        return self.skip_rate <= MAX_SKIP_RATE

    def to_dict(self) -> dict:
        return dict(self.__dict__, skip_rate=self.skip_rate)


def distance_identity_check(
    cfg: ExperimentConfig, instances: int = 50, ks: Sequence[int] | None = None, htronc_k: Sequence[int] | None = None
) -> DistanceReport:
    """Compare direct column distances of H with the partitioned-inverse formula.

    Also verifies per instance s_{N+n-1}(H) <= s_{N-1}(Y Om^L Y^* - z) and,
    for each k in ``htronc_k``, that the first N+n-k columns of H satisfy
    s_{N+n-k-1}(H_{., [N+n-k]}) <= s_{N-k-1}(Y Om^L Y^* - z).
    """
    N, n = cfg.N, cfg.n
    if N > 32 or n > 32:
        raise ContractViolation("distance_identity_check is meant for N, n <= 32")
    ks = list(range(n)) if ks is None else list(ks)
    htronc_k = list(range(1, N)) if htronc_k is None else list(htronc_k)
    roots = frequency_roots(cfg.model, n) if cfg.sampler == "circulant" else None
    worst, checked, skipped = 0.0, 0, 0
    lin_margin, htronc_margin = np.inf, np.inf
    for i in range(instances):
        kw = {"stream": i}
        if roots is not None:
            kw["roots"] = roots
        b = sample(cfg.model, n, cfg.seed, cfg.sampler, **kw)
        H = linearization(b.Y, cfg.L, cfg.z)
        for k in ks:
            direct = projector_distance(H[:, k], np.delete(H, k, axis=1))
            try:
                formula = distance_formula(H, b.Y, cfg.L, k)
            except np.linalg.LinAlgError:
                skipped += 1
                continue
            checked += 1
            worst = max(worst, abs(direct - formula) / max(direct, 1e-300))
        A = empirical_autocov(b, cfg.L) - cfg.z * np.eye(N)
        sA = singular_values(A)
        sH = singular_values(H)
        lin_margin = min(lin_margin, sA[N - 1] - sH[N + n - 1])
        for k in htronc_k:
            sk = singular_values(H[:, : N + n - k])
            htronc_margin = min(htronc_margin, sA[N - k - 1] - sk[N + n - k - 1])
    tol = 1e-12
    return DistanceReport(
        max_rel_error=float(worst),
        instances=instances,
        checked=checked,
        skipped=skipped,
        lin_ok=bool(lin_margin >= -tol),
        htronc_ok=bool(htronc_margin >= -tol),
        lin_margin=float(lin_margin),
        htronc_margin=float(htronc_margin),
    )


# --- resolvent variance ------------------------------------------------------


def resolvent(A: np.ndarray, eta: complex) -> np.ndarray:
    """Q = (H(A) - eta)^{-1} for the hermitization H(A) = [[0, A], [A^*, 0]]."""
    H = hermitize(A)
    return np.linalg.inv(H - eta * np.eye(H.shape[0]))


@dataclass
class VarianceReport:
    eta: complex
    bound: float
    variance: np.ndarray  # (2, 2)
    ratio: np.ndarray  # variance / bound
    ratio_se: np.ndarray  # bootstrap standard error of the ratio
    max_resolvent_excess: float  # max over trials of ||Q|| - 1/Im eta

    @property
    def ok(self) -> bool:
        return bool(np.all(self.ratio <= 1 + 3 * self.ratio_se) and self.max_resolvent_excess <= 1e-10)

    def to_dict(self) -> dict:
        return {
            "eta": [self.eta.real, self.eta.imag],
            "bound": self.bound,
            "variance": self.variance.tolist(),
            "ratio": self.ratio.tolist(),
            "ratio_se": self.ratio_se.tolist(),
            "max_resolvent_excess": self.max_resolvent_excess,
            "ok": self.ok,
        }


def _complex_var(x: np.ndarray, axis=0) -> np.ndarray:
    return np.mean(np.abs(x - x.mean(axis=axis, keepdims=True)) ** 2, axis=axis)


def resolvent_variance_check(
    cfg: ExperimentConfig,
    B: np.ndarray | None,
    eta: complex,
    *,
    blocks: Sequence[SampleBlock] | None = None,
    bootstrap: int = 400,
    M: float | None = None,
) -> VarianceReport:
    """Empirical var(tr B Q_uv) against 8 gamma M^2 ||B||^2 / (Im eta)^4.

    ``blocks`` overrides sampling (e.g. a fixed deterministic X).
    """
    eta = complex(eta)
    if eta.imag <= 0:
        raise ContractViolation("Im eta must be positive")
    N = cfg.N
    B = np.eye(N) if B is None else np.asarray(B, dtype=complex)
    bnorm = float(np.linalg.norm(B, 2))
    if abs(bnorm - 1.0) > 1e-12:
        raise ContractViolation("B must have spectral norm 1")
    if blocks is None:
        if cfg.trials < 200:
            raise ContractViolation("resolvent_variance_check needs at least 200 trials")
        roots = frequency_roots(cfg.model, cfg.n) if cfg.sampler == "circulant" else None
        blocks = []
        for i in range(cfg.trials):
            kw = {"stream": i}
            if roots is not None:
                kw["roots"] = roots
            blocks.append(sample(cfg.model, cfg.n, cfg.seed, cfg.sampler, **kw))
    vals = np.empty((len(blocks), 2, 2), dtype=complex)
    excess = -np.inf
    for i, b in enumerate(blocks):
        Q = resolvent(empirical_autocov(b, cfg.L) - cfg.z * np.eye(N), eta)
        excess = max(excess, float(np.linalg.norm(Q, 2)) - 1.0 / eta.imag)
        Qb = Q.reshape(2, N, 2, N)
        vals[i] = np.einsum("ab,ubva->uv", B, Qb)
    M = cfg.model.sup_norm() if M is None else M
    bound = 8 * cfg.gamma * M**2 * bnorm**2 / eta.imag**4
    var = _complex_var(vals)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, 2**32 - 1])))
    idx = rng.integers(0, len(blocks), size=(bootstrap, len(blocks)))
    boot = np.stack([_complex_var(vals[j]) for j in idx])
    return VarianceReport(eta, float(bound), var, var / bound, boot.std(axis=0) / bound, float(excess))
