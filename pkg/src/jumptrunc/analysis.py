"""Strong-error estimation, rate fits, theoretical rates and asymptotic diagnostics."""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DomainError, SimulationError
from .model import SdeProblem, state_norm
from .noise import generate_batch, pairwise_block_sum
from .parallel import DEFAULT_BATCH, map_batches
from .scheme import Record, SchemeConfig, SchemeKind, exact_geometric, simulate_batch

log = logging.getLogger(__name__)

ERROR_COLUMNS = ("delta", "n_paths", "raw_moment", "norm_error", "std_error")


@dataclass(frozen=True)
class ExactGeometric:
    """Analytic reference for ``dx = a x dt + b x dB + c x dN``."""

    a: float
    b: float
    c: float


@dataclass(frozen=True)
class ErrorRow:
    delta: float
    level: int
    n_paths: int
    raw_moment: float
    norm_error: float
    std_error: float
    n_blowups: int = 0


@dataclass
class ErrorTable:
    """Monte Carlo estimates of ``E|X_ref(T) - X_D(T)|^r``, rows by decreasing step size."""

    r: float
    rows: list
    reference: str = ""

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda row: -row.delta)

    @property
    def deltas(self) -> np.ndarray:
        return np.array([row.delta for row in self.rows])

    @property
    def raw_moments(self) -> np.ndarray:
        return np.array([row.raw_moment for row in self.rows])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ERROR_COLUMNS)
            for row in self.rows:
                w.writerow([repr(row.delta), row.n_paths, repr(row.raw_moment), repr(row.norm_error), repr(row.std_error)])

    @classmethod
    def from_csv(cls, path, r: float) -> "ErrorTable":
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                delta = float(rec["delta"])
                rows.append(
                    ErrorRow(delta, -1, int(rec["n_paths"]), float(rec["raw_moment"]), float(rec["norm_error"]), float(rec["std_error"]))
                )
        return cls(r, rows)


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    residuals: tuple
    n_points: int

    def summary(self, theory_rate: Optional[float] = None) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "theory_rate": theory_rate,
        }

    def to_json(self, path, theory_rate: Optional[float] = None) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(theory_rate), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _mean_and_se(values: np.ndarray):
    n = values.size
    mean = math.fsum(values) / n
    var = math.fsum((values - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def strong_error(
    problem: SdeProblem,
    config: SchemeConfig,
    levels: Sequence[int],
    r: float,
    n_paths: int,
    master_seed: int,
    horizon: float,
    reference: Union[int, ExactGeometric] = 16,
    reference_config: Optional[SchemeConfig] = None,
    batch_size: int = DEFAULT_BATCH,
    workers=None,
) -> ErrorTable:
    """Coupled strong-error table.

    Each path draws one fine noise grid; the reference (the same scheme at
    level ``reference`` unless ``reference_config`` says otherwise, or the
    exact geometric solution) and every coarse level are driven by block sums
    of that grid. Truncated schemes must stay finite; plain EM blow-ups are
    dropped from the estimate and counted in ``ErrorRow.n_blowups``.
    """
    if r <= 0:
        raise DomainError("moment order r must be positive")
    if n_paths < 2:
        raise DomainError("need at least two paths")
    levels = sorted(set(int(k) for k in levels))
    if isinstance(reference, ExactGeometric):
        fine = max(levels)
        ref_label = f"exact geometric a={reference.a:g} b={reference.b:g} c={reference.c:g}"
    else:
        fine = int(reference)
        if max(levels) > fine:
            raise DomainError(f"levels must not exceed the reference level {fine}")
        ref_cfg = (reference_config or config).with_level(fine).with_record(Record.TERMINAL_ONLY)
        ref_label = f"{ref_cfg.kind.value} at level {fine}"

    def run(paths):
        dB, dN = generate_batch(master_seed, paths, horizon, fine, problem.intensity, problem.noise_dim)
        if isinstance(reference, ExactGeometric):
            x_ref = exact_geometric(
                reference.a, reference.b, reference.c, problem.x0, horizon,
                pairwise_block_sum(dB, 0)[:, 0, 0], pairwise_block_sum(dN, 0)[:, 0],
            )
            ref_bad = ~np.isfinite(x_ref).all(axis=-1)
        else:
            res = simulate_batch(problem, ref_cfg, dB, dN, horizon)
            _guard(res.blown_up, ref_cfg, paths)
            x_ref, ref_bad = res.terminal, res.blown_up
        errs = np.empty((len(paths), len(levels)))
        bad = np.empty((len(paths), len(levels)), dtype=bool)
        for j, k in enumerate(levels):
            cfg = config.with_level(k).with_record(Record.TERMINAL_ONLY)
            res = simulate_batch(problem, cfg, pairwise_block_sum(dB, k), pairwise_block_sum(dN, k), horizon)
            _guard(res.blown_up, cfg, paths)
            with np.errstate(over="ignore", invalid="ignore"):
                errs[:, j] = state_norm(x_ref - res.terminal) ** r
            bad[:, j] = res.blown_up | ref_bad | ~np.isfinite(errs[:, j])
        return errs, bad

    parts = map_batches(run, n_paths, batch_size, workers)
    errs = np.concatenate([p[0] for p in parts])
    bad = np.concatenate([p[1] for p in parts])

    rows = []
    for j, k in enumerate(levels):
        ok = errs[~bad[:, j], j]
        n_bad = int(bad[:, j].sum())
        if n_bad:
            log.warning("level %d: %d of %d paths blew up and were excluded", k, n_bad, n_paths)
        if ok.size < 2:
            raise SimulationError(f"level {k}: fewer than two finite paths")
        raw, se = _mean_and_se(ok)
        rows.append(ErrorRow(horizon * 2.0**-k, k, int(ok.size), raw, raw ** (1.0 / r), se, n_bad))
    return ErrorTable(r, rows, ref_label)


def _guard(blown_up, cfg: SchemeConfig, paths):
    if cfg.kind is not SchemeKind.PLAIN and blown_up.any():
        first = paths[int(np.flatnonzero(blown_up)[0])]
        raise SimulationError(f"{cfg.kind.value} at level {cfg.level} blew up on path {first}")


def fit_rate(table: ErrorTable) -> RateFit:
    """OLS of ``log raw_moment`` on ``log delta``; zero moments are dropped with a warning."""
    d, e = table.deltas, table.raw_moments
    keep = e > 0
    if not keep.all():
        warnings.warn(f"{int((~keep).sum())} rows with zero raw moment excluded from the fit", stacklevel=2)
    if keep.sum() < 3:
        raise DomainError("need at least three rows with positive raw moment")
    return ols(np.log(d[keep]), np.log(e[keep]))


def ols(x, y) -> RateFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    syy = np.sum((y - ym) ** 2)
    r2 = 1.0 if syy == 0 else float(1.0 - np.sum(resid**2) / syy)
    return RateFit(slope, intercept, min(1.0, max(0.0, r2)), tuple(float(v) for v in resid), int(x.size))


# ------------------------------------------------------------ theory rates


def theoretical_rate_high(r: float, gamma: float, p: float, eps: Optional[float] = None) -> float:
    """``eps (p - (1+gamma) r) / (1+gamma)`` for ``r >= 2``.

    ``eps`` defaults to its largest admissible value ``min(1/4, 1/p)``.
    """
    cap = min(0.25, 1.0 / p) if p > 0 else 0.0
    if r < 2:
        raise DomainError(f"need r >= 2, got {r}")
    if gamma < 0:
        raise DomainError("gamma must be >= 0")
    if not p > (1 + gamma) * r:
        raise DomainError(f"need p > (1+gamma) r = {(1 + gamma) * r}, got {p}")
    if eps is None:
        eps = cap
    if not 0 < eps <= cap * (1 + 1e-15):
        raise DomainError(f"need 0 < eps <= min(1/4, 1/p) = {cap}, got {eps}")
    return eps * (p - (1 + gamma) * r) / (1 + gamma)


def error_exponent_high(r: float, gamma: float, p: float, eps: Optional[float] = None) -> float:
    """``min(eps (p - (1+gamma) r)/(1+gamma), (p - gamma r)/p)``."""
    return min(theoretical_rate_high(r, gamma, p, eps), (p - gamma * r) / p)


def theoretical_rate_low(r: float, gamma_bar: float):
    """Optimal ``(eps, rate)`` for ``0 < r <= 2/(2+gamma_bar)``: rate ``r(2-r)/(2(2+r gamma_bar))``."""
    if gamma_bar < 0:
        raise DomainError("gamma_bar must be >= 0")
    r_max = 2.0 / (2.0 + gamma_bar)
    if not 0 < r <= r_max * (1 + 1e-15):
        raise DomainError(f"need 0 < r <= 2/(2+gamma_bar) = {r_max}, got {r}")
    eps = r * (1 + gamma_bar) / (4 + 2 * r * gamma_bar)
    return eps, r * (2 - r) / (2 * (2 + r * gamma_bar))


def stability_exponent(alpha1: float, alpha2: float, K1: float, intensity: float) -> float:
    """Mean-square decay exponent ``alpha1 - alpha2 - lam K1 (2 + K1)``."""
    return alpha1 - alpha2 - intensity * K1 * (2 + K1)


def discrete_boundedness_bound(alpha1, alpha2, beta1, beta2, K1, intensity, eps) -> float:
    """``(a1 + a2 + 2 lam K1(2+K1) + eps) / (b1 - b2 - 2 lam K1(2+K1) - eps)`` for the scheme."""
    jump = 2 * intensity * K1 * (2 + K1)
    den = beta1 - beta2 - jump - eps
    if den <= 0:
        raise DomainError(f"eps={eps} leaves a nonpositive denominator")
    return (alpha1 + alpha2 + jump + eps) / den


def continuous_boundedness_bound(alpha1, alpha2, beta1, beta2, K1, intensity) -> float:
    """``(a1 + a2 + 4 lam K1^2) / (b1 - b2 - lam (4 K1^2 + 1))`` for the SDE itself."""
    den = beta1 - beta2 - intensity * (4 * K1**2 + 1)
    if den <= 0:
        raise DomainError("nonpositive denominator")
    return (alpha1 + alpha2 + 4 * intensity * K1**2) / den


def recursion_bound(A: float, B: float, D0: float, k_max: int):
    """Iterate ``D_k = A D_{k-1} + B``; return the sequence and its limit bound ``B/(1-A)``."""
    if not 0 < A < 1:
        raise DomainError(f"need 0 < A < 1, got {A}")
    if B < 0:
        raise DomainError("need B >= 0")
    seq = np.empty(k_max + 1)
    seq[0] = D0
    for k in range(1, k_max + 1):
        seq[k] = A * seq[k - 1] + B
    limit = B / (1 - A)
    if seq[-1] > limit + abs(D0) * A**k_max + 1e-9:
        raise SimulationError("recursion exceeded its closed-form bound")
    return seq, limit


# ------------------------------------------------------ mean-square series


@dataclass
class SeriesResult:
    times: np.ndarray
    mean: np.ndarray
    std_error: np.ndarray
    delta: float
    n_paths: int
    truncation_hits: int = 0


def mean_square_series(
    problem: SdeProblem,
    config: SchemeConfig,
    horizon: float,
    n_paths: int,
    master_seed: int,
    delta: Optional[float] = None,
    batch_size: int = DEFAULT_BATCH,
    workers=None,
) -> SeriesResult:
    """Monte Carlo ``E|X(t_k)|^2`` on ``t_k = k D <= horizon``.

    Without ``delta`` the step is ``horizon * 2**-config.level``. With ``delta``
    the dyadic grid is extended to ``D * 2**K >= horizon`` and cut back to
    ``horizon`` afterwards.
    """
    if delta is None:
        level = config.level
        grid_horizon = horizon
        delta = horizon * 2.0**-level
    else:
        level = max(0, math.ceil(math.log2(horizon / delta) - 1e-12))
        grid_horizon = delta * 2.0**level
    n_keep = int(round(horizon / delta)) + 1
    cfg = config.with_level(level).with_record(Record.SECOND_MOMENT_SERIES)

    def run(paths):
        dB, dN = generate_batch(master_seed, paths, grid_horizon, level, problem.intensity, problem.noise_dim)
        res = simulate_batch(problem, cfg, dB, dN, grid_horizon)
        _guard(res.blown_up, cfg, paths)
        return res.second_moment[:, :n_keep], int(res.truncation_hits.sum())

    parts = map_batches(run, n_paths, batch_size, workers)
    sq = np.concatenate([p[0] for p in parts])
    hits = sum(p[1] for p in parts)
    mean = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / math.sqrt(n_paths) if n_paths > 1 else np.zeros_like(mean)
    times = np.arange(n_keep) * delta
    return SeriesResult(times, mean, se, delta, n_paths, hits)


@dataclass
class StabilityResult:
    series: SeriesResult
    slope: float
    intercept: float
    window: tuple = field(default=(0, 0))


def stability_decay(
    problem: SdeProblem,
    config: SchemeConfig,
    horizon: float,
    n_paths: int,
    master_seed: int,
    delta: Optional[float] = None,
    burn_fraction: float = 0.1,
    floor: float = 1e-12,
    batch_size: int = DEFAULT_BATCH,
    workers=None,
) -> StabilityResult:
    """Fit the slope of ``log E|X|^2`` against ``t``.

    The first ``burn_fraction`` of the steps and every point with
    ``E|X|^2 <= floor`` are left out of the fit.
    """
    series = mean_square_series(problem, config, horizon, n_paths, master_seed, delta, batch_size, workers)
    return fit_decay(series, burn_fraction, floor)


def fit_decay(series: SeriesResult, burn_fraction=0.1, floor=1e-12) -> StabilityResult:
    m = series.mean
    if not np.any(m > 0):
        raise DomainError("second-moment series is identically zero; decay exponent undefined")
    start = int(math.ceil(burn_fraction * (m.size - 1)))
    idx = np.arange(m.size)
    window = (idx >= start) & (m > floor) & np.isfinite(m)
    if window.sum() < 2:
        raise DomainError("fewer than two points above the floor in the fit window")
    fit = ols(series.times[window], np.log(m[window]))
    used = np.flatnonzero(window)
    return StabilityResult(series, fit.slope, fit.intercept, (int(used[0]), int(used[-1])))


@dataclass
class BoundednessResult:
    series: SeriesResult
    limsup_estimate: float
    theory_bound: Optional[float]
    burn_in: float


def boundedness_estimate(
    problem: SdeProblem,
    config: SchemeConfig,
    horizon: float,
    burn_in: float,
    n_paths: int,
    master_seed: int,
    constants: Optional[dict] = None,
    eps: float = 0.5,
    delta: Optional[float] = None,
    batch_size: int = DEFAULT_BATCH,
    workers=None,
) -> BoundednessResult:
    """Largest Monte Carlo ``E|X(t_k)|^2`` over ``t_k in [burn_in, horizon]``.

    ``constants`` holds ``alpha1, alpha2, beta1, beta2, K1`` (the jump
    intensity comes from the problem) for the closed-form bound.
    """
    if not burn_in < horizon:
        raise DomainError("burn_in must be smaller than the horizon")
    series = mean_square_series(problem, config, horizon, n_paths, master_seed, delta, batch_size, workers)
    window = series.times >= burn_in - 1e-12
    est = float(np.max(series.mean[window]))
    bound = None
    if constants is not None:
        bound = discrete_boundedness_bound(
            constants["alpha1"], constants["alpha2"], constants["beta1"], constants["beta2"],
            constants["K1"], problem.intensity, eps,
        )
    return BoundednessResult(series, est, bound, burn_in)
