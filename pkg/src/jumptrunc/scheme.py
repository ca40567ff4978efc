"""Explicit time stepping: plain, fully truncated and partially truncated EM."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DomainError
from .model import SdeProblem, TruncationPolicy, _clamp, state_norm
from .noise import NoiseGrid, coarsen, pairwise_block_sum


class SchemeKind(str, Enum):
    PLAIN = "plain"
    TRUNCATED_FULL = "truncated_full"
    TRUNCATED_PARTIAL = "truncated_partial"


class Record(str, Enum):
    TERMINAL_ONLY = "terminal_only"
    FULL_PATH = "full_path"
    SECOND_MOMENT_SERIES = "second_moment_series"


@dataclass(frozen=True)
class SchemeConfig:
    kind: SchemeKind
    level: int
    policy: Optional[TruncationPolicy] = None
    record: Record = Record.TERMINAL_ONLY

    def __post_init__(self):
        object.__setattr__(self, "kind", SchemeKind(self.kind))
        object.__setattr__(self, "record", Record(self.record))
        if self.kind is not SchemeKind.PLAIN and self.policy is None:
            raise ConfigurationError(f"{self.kind.value} needs a truncation policy")
        if self.level < 0:
            raise DomainError("level must be >= 0")

    def with_level(self, level: int) -> "SchemeConfig":
        return SchemeConfig(self.kind, level, self.policy, self.record)

    def with_record(self, record) -> "SchemeConfig":
        return SchemeConfig(self.kind, self.level, self.policy, record)

    def step_size(self, horizon: float) -> float:
        """``horizon * 2**-level``; truncated kinds also require it to lie in ``(0, delta_star]``."""
        if not horizon > 0:
            raise DomainError("horizon must be positive")
        delta = horizon * 2.0**-self.level
        if self.policy is not None and self.kind is not SchemeKind.PLAIN:
            self.policy.check_step(delta)
        return delta


@dataclass
class PathResult:
    terminal_state: np.ndarray
    states: Optional[np.ndarray] = None
    second_moment: Optional[np.ndarray] = None
    blown_up: bool = False
    first_bad_index: Optional[int] = None
    truncation_hits: int = 0


@dataclass
class BatchResult:
    """Per-path outputs of a batch; row ``i`` belongs to the ``i``-th path."""

    terminal: np.ndarray  # (n, d)
    blown_up: np.ndarray  # (n,) bool
    first_bad_index: np.ndarray  # (n,) int, -1 when finite throughout
    truncation_hits: np.ndarray  # (n,) int
    states: Optional[np.ndarray] = None  # (n, N+1, d)
    second_moment: Optional[np.ndarray] = None  # (n, N+1)

    def path(self, i: int) -> PathResult:
        bad = int(self.first_bad_index[i])
        return PathResult(
            terminal_state=self.terminal[i].copy(),
            states=None if self.states is None else self.states[i].copy(),
            second_moment=None if self.second_moment is None else self.second_moment[i].copy(),
            blown_up=bool(self.blown_up[i]),
            first_bad_index=None if bad < 0 else bad,
            truncation_hits=int(self.truncation_hits[i]),
        )


def step(x, f_d, g_d, h_d, delta, dB, dN):
    """One explicit step ``x + f(x)D + g(x)dB + h(x)dN``.

    Accepts a single state ``(d,)`` with ``dB`` of shape ``(m,)`` and scalar
    ``dN``, or batches ``(..., d)``, ``(..., m)``, ``(...)``. Non-finite
    results are returned as they are.
    """
    if not delta > 0:
        raise DomainError("step size must be positive")
    x = np.asarray(x, dtype=float)
    dB = np.asarray(dB, dtype=float)
    dN = np.asarray(dN)
    if np.any(dN < 0):
        raise DomainError("Poisson increments must be nonnegative")
    with np.errstate(over="ignore", invalid="ignore"):
        return _update(x, f_d(x), g_d(x), h_d(x), delta, dB, dN)


def _update(x, fx, gx, hx, delta, dB, dN):
    if gx.shape[-1] == 1:
        diffusion = gx[..., 0] * dB[..., 0:1]
    else:
        diffusion = np.sum(gx * dB[..., None, :], axis=-1)
    return x + fx * delta + diffusion + hx * dN[..., None]


class _Coefficients:
    """Evaluates the scheme's coefficients at the pre-step state, clamping once."""

    def __init__(self, problem: SdeProblem, config: SchemeConfig, delta: float):
        self.problem = problem
        self.kind = config.kind
        self.radius = math.inf
        if self.kind is not SchemeKind.PLAIN:
            self.radius = config.policy.radius(delta)
        if self.kind is SchemeKind.TRUNCATED_PARTIAL and problem.decomposition is None:
            raise ConfigurationError(f"partial truncation needs a decomposition (problem {problem.name!r})")

    def __call__(self, x):
        p = self.problem
        if self.kind is SchemeKind.PLAIN:
            return p.f(x), p.g(x), p.h(x), None
        hits = state_norm(x) > self.radius
        xc = _clamp(x, self.radius)
        if self.kind is SchemeKind.TRUNCATED_FULL:
            return p.f(xc), p.g(xc), p.h(xc), hits
        dec = p.decomposition
        return dec.F1(x) + dec.F(xc), dec.G1(x) + dec.G(xc), p.h(x), hits


def simulate_batch(problem: SdeProblem, config: SchemeConfig, dB: np.ndarray, dN: np.ndarray, horizon: float) -> BatchResult:
    """Run the scheme on ``n`` paths at once.

    ``dB`` has shape ``(n, m, 2**k)`` and ``dN`` shape ``(n, 2**k)`` with
    ``k = config.level``. Each row's result depends only on that row's
    increments, so batching never changes a path.
    """
    n, m, steps = dB.shape
    if steps != 2**config.level or dN.shape != (n, steps):
        raise DomainError(f"increments do not match level {config.level}")
    if m != problem.noise_dim:
        raise DomainError(f"expected {problem.noise_dim} Brownian components, got {m}")
    delta = config.step_size(horizon)
    coeffs = _Coefficients(problem, config, delta)

    dB_t = np.ascontiguousarray(np.moveaxis(dB, -1, 0))  # (steps, n, m)
    dN_t = np.ascontiguousarray(dN.T).astype(float)  # (steps, n)

    d = problem.dimension
    x = np.broadcast_to(problem.x0, (n, d)).copy()
    bad = np.full(n, -1, dtype=np.int64)
    hits = np.zeros(n, dtype=np.int64)
    states = second = None
    if config.record is Record.FULL_PATH:
        states = np.empty((n, steps + 1, d))
        states[:, 0] = x
    elif config.record is Record.SECOND_MOMENT_SERIES:
        second = np.empty((n, steps + 1))
        second[:, 0] = np.sum(x * x, axis=-1)

    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(steps):
            fx, gx, hx, hit = coeffs(x)
            if hit is not None:
                hits += hit
            x = _update(x, fx, gx, hx, delta, dB_t[j], dN_t[j])
            finite = np.isfinite(x).all(axis=-1)
            if not finite.all():
                newly = (~finite) & (bad < 0)
                bad[newly] = j + 1
            if states is not None:
                states[:, j + 1] = x
            elif second is not None:
                second[:, j + 1] = np.sum(x * x, axis=-1)
    return BatchResult(x, bad >= 0, bad, hits, states, second)


def simulate_path(problem: SdeProblem, config: SchemeConfig, grid: NoiseGrid) -> PathResult:
    """Simulate one path at ``config.level`` driven by the block-summed increments of ``grid``."""
    if config.level > grid.fine_level:
        raise DomainError(f"scheme level {config.level} finer than grid level {grid.fine_level}")
    if grid.intensity != problem.intensity:
        raise DomainError(f"grid intensity {grid.intensity} does not match problem intensity {problem.intensity}")
    dB, dN = coarsen(grid, config.level)
    res = simulate_batch(problem, config, dB[None], dN[None], grid.horizon)
    return res.path(0)


def exact_geometric(a, b, c, x0, horizon, brownian_total, jump_total):
    """``x0 exp((a - b^2/2)T + b B(T)) (1+c)^N(T)``, vectorised over paths."""
    if c <= -1:
        raise DomainError(f"jump coefficient c must exceed -1, got {c}")
    brownian_total = np.asarray(brownian_total, dtype=float)
    jump_total = np.asarray(jump_total, dtype=float)
    growth = np.exp((a - 0.5 * b * b) * horizon + b * brownian_total) * (1.0 + c) ** jump_total
    return growth[..., None] * np.asarray(x0, dtype=float)


def simulate_exact_geometric(a, b, c, grid: NoiseGrid, x0) -> np.ndarray:
    """Exact strong solution of ``dx = ax dt + bx dB + cx dN`` at ``T`` under ``grid``'s noise."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    b_total = pairwise_block_sum(grid.brownian, 0)[0, 0]
    return exact_geometric(a, b, c, x0, grid.horizon, b_total, grid.total_jumps)
