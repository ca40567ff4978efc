"""Coupled Brownian and Poisson increments on dyadic grids.

Every path owns an independent random stream derived from
``(master_seed, path_index)``: a :class:`numpy.random.SeedSequence` with the
path index as spawn key feeds a counter-based Philox generator. A path's
increments therefore do not depend on which other paths are generated, in
which order, or by which worker.

Coarse increments are obtained by summing adjacent pairs level by level, so
the coarse and fine simulations of one path see the same Brownian motion and
the same Poisson process.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, ResourceError

MAX_LEVEL = 26
MAX_MEAN = 10.0


@dataclass(frozen=True)
class NoiseGrid:
    """Increments of one path on the fine grid ``t_j = j * horizon / 2**fine_level``.

    ``brownian`` has shape ``(m, 2**K)``; ``poisson`` has shape ``(2**K,)``.
    """

    horizon: float
    fine_level: int
    intensity: float
    brownian: np.ndarray
    poisson: np.ndarray
    seed_material: tuple

    @property
    def fine_step(self) -> float:
        return self.horizon * 2.0**-self.fine_level

    @property
    def total_jumps(self) -> int:
        return int(self.poisson.sum())

    @property
    def brownian_total(self) -> np.ndarray:
        """``B(T)`` per Brownian component, summed in dyadic pair order."""
        return pairwise_block_sum(self.brownian, 0)[..., 0]


def path_generator(master_seed: int, path_index: int) -> np.random.Generator:
    """Independent counter-based stream for one path."""
    ss = np.random.SeedSequence(int(master_seed) & (2**64 - 1), spawn_key=(int(path_index),))
    return np.random.Generator(np.random.Philox(ss))


def poisson_inversion(rng: np.random.Generator, mean: float, size) -> np.ndarray:
    """Poisson(mean) counts by inversion with sequential search.

    Exact up to floating point in the cumulative sum; restricted to
    ``mean <= 10``, far above what fine grids need.
    """
    if mean < 0:
        raise DomainError(f"Poisson mean must be >= 0, got {mean}")
    if mean > MAX_MEAN:
        raise DomainError(f"Poisson mean {mean} exceeds the inversion cutoff {MAX_MEAN}; refine the grid")
    u = rng.random(size)
    counts = np.zeros(size, dtype=np.int64)
    if mean == 0.0:
        return counts
    p = math.exp(-mean)
    cdf = p
    active = np.flatnonzero(u > cdf)
    k = 0
    # the tail beyond mean + 40 sd + 40 is below double precision
    k_max = int(mean + 40.0 * math.sqrt(mean) + 40)
    while active.size and k < k_max:
        k += 1
        counts[active] += 1
        p *= mean / k
        cdf += p
        active = active[u[active] > cdf]
    return counts


def generate(master_seed: int, path_index: int, horizon: float, fine_level: int, intensity: float, noise_dim: int = 1) -> NoiseGrid:
    """Draw the fine-grid increments of path ``path_index``.

    Normals are drawn first (``m * 2**K`` values, row-major), then the uniforms
    of the Poisson inversion.
    """
    if fine_level > MAX_LEVEL:
        raise ResourceError(f"fine level {fine_level} exceeds the memory guard {MAX_LEVEL}")
    if fine_level < 0:
        raise DomainError("fine level must be >= 0")
    if not horizon > 0:
        raise DomainError("horizon must be positive")
    if not intensity >= 0:
        raise DomainError("intensity must be >= 0")
    n = 2**fine_level
    dt = horizon / n
    rng = path_generator(master_seed, path_index)
    brownian = rng.standard_normal((noise_dim, n)) * math.sqrt(dt)
    poisson = poisson_inversion(rng, intensity * dt, n)
    return NoiseGrid(float(horizon), int(fine_level), float(intensity), brownian, poisson, (int(master_seed), int(path_index)))


def pairwise_block_sum(a: np.ndarray, levels_down: int) -> np.ndarray:
    """Sum adjacent pairs along the last axis ``levels_down`` times (0 means to one block).

    ``levels_down`` is the target level; the last axis must have length
    ``2**K`` with ``K >= levels_down``.
    """
    n = a.shape[-1]
    K = n.bit_length() - 1
    if n != 2**K:
        raise DomainError("last axis length must be a power of two")
    if not 0 <= levels_down <= K:
        raise DomainError(f"level {levels_down} outside [0, {K}]")
    out = a
    for _ in range(K - levels_down):
        out = out[..., 0::2] + out[..., 1::2]
    return out


def coarsen(grid: NoiseGrid, level: int):
    """Increments ``(dB, dN)`` at step ``horizon * 2**-level``: shapes ``(m, 2**k)`` and ``(2**k,)``."""
    if not 0 <= level <= grid.fine_level:
        raise DomainError(f"level {level} outside [0, {grid.fine_level}]")
    return pairwise_block_sum(grid.brownian, level), pairwise_block_sum(grid.poisson, level)


def generate_batch(master_seed: int, path_indices: Sequence[int], horizon: float, fine_level: int, intensity: float, noise_dim: int = 1):
    """Stack the grids of several paths: ``(n, m, 2**K)`` Brownian and ``(n, 2**K)`` counts."""
    grids = [generate(master_seed, i, horizon, fine_level, intensity, noise_dim) for i in path_indices]
    return np.stack([g.brownian for g in grids]), np.stack([g.poisson for g in grids])


@dataclass(frozen=True)
class MomentReport:
    intensity: float
    step: float
    n_samples: int
    mean: float
    mean_expected: float
    mean_se: float
    second: float
    second_expected: float
    second_se: float
    mean_passed: bool
    second_passed: bool

    @property
    def passed(self) -> bool:
        return self.mean_passed and self.second_passed


def increment_moment_test(intensity: float, step: float, n_samples: int = 10**6, seed: int = 0, n_sigma: float = 5.0) -> MomentReport:
    """Compare sample ``E dN`` and ``E dN^2`` against ``lam*D`` and ``lam*D*(1 + lam*D)``.

    Standard errors are the exact Poisson ones: ``Var dN = m`` and
    ``Var dN^2 = m + 6m^2 + 4m^3`` for ``m = lam*D``.
    """
    if n_samples < 10**4:
        raise DomainError("increment moment test needs at least 1e4 samples")
    m = intensity * step
    rng = path_generator(seed, 0)
    dn = poisson_inversion(rng, m, n_samples).astype(float)
    mean = float(dn.mean())
    second = float((dn * dn).mean())
    mean_se = math.sqrt(m / n_samples)
    second_se = math.sqrt((m + 6 * m**2 + 4 * m**3) / n_samples)
    m2 = m * (1 + m)
    return MomentReport(
        intensity, step, n_samples,
        mean, m, mean_se,
        second, m2, second_se,
        abs(mean - m) <= n_sigma * mean_se,
        abs(second - m2) <= n_sigma * second_se,
    )


def dump_csv(grid: NoiseGrid, path) -> None:
    """Write one path's fine increments: ``index, dB[0..m), dN``."""
    m = grid.brownian.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index"] + [f"dB{i}" for i in range(m)] + ["dN"])
        for j in range(grid.poisson.size):
            w.writerow([j] + [repr(float(v)) for v in grid.brownian[:, j]] + [int(grid.poisson[j])])
