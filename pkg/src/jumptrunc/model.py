"""SDE problems with Poisson jumps, truncation policies and truncated coefficients.

Coefficient conventions (batched, numpy broadcasting):

* drift ``f`` and jump ``h`` map states of shape ``(..., d)`` to ``(..., d)``;
* diffusion ``g`` maps ``(..., d)`` to ``(..., d, m)``.

Scalar problems are ``d = m = 1`` and are most easily built with
:meth:`SdeProblem.scalar`, which lifts plain elementwise functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError

Coefficient = Callable[[np.ndarray], np.ndarray]

__all__ = [
    "AssumptionConstants",
    "CheckReport",
    "Decomposition",
    "SdeProblem",
    "TruncationPolicy",
    "check_coefficient_envelope",
    "check_decomposition",
    "check_khasminskii_preserved",
    "check_policy",
    "derived_constants",
    "get_preset",
    "low_order_step_condition",
    "pi_delta",
    "poly",
    "power_policy",
    "sample_states",
    "state_norm",
    "truncated_coefficients",
    "PRESET_NAMES",
]


def _lift_vector(fn):
    def lifted(x):
        x = np.asarray(x, dtype=float)
        return np.asarray(fn(x[..., 0]), dtype=float)[..., None]

    return lifted


def _lift_matrix(fn):
    def lifted(x):
        x = np.asarray(x, dtype=float)
        return np.asarray(fn(x[..., 0]), dtype=float)[..., None, None]

    return lifted


def poly(coeffs: Sequence[float]) -> Callable[[np.ndarray], np.ndarray]:
    """Elementwise polynomial ``c0 + c1*x + c2*x**2 + ...`` evaluated by Horner's rule."""
    coeffs = [float(c) for c in coeffs]
    if not coeffs:
        raise ConfigurationError("polynomial needs at least one coefficient")

    def p(x):
        x = np.asarray(x, dtype=float)
        acc = np.full_like(x, coeffs[-1])
        for c in reversed(coeffs[:-1]):
            acc = acc * x + c
        return acc

    return p


@dataclass(frozen=True)
class Decomposition:
    """Linear/super-linear split ``f = F1 + F`` and ``g = G1 + G``."""

    F1: Coefficient
    F: Coefficient
    G1: Coefficient
    G: Coefficient


@dataclass(frozen=True)
class SdeProblem:
    """``dx = f(x)dt + g(x)dB + h(x)dN`` with ``N`` a Poisson process of rate ``intensity``."""

    f: Coefficient
    g: Coefficient
    h: Coefficient
    intensity: float
    x0: np.ndarray
    noise_dim: int = 1
    decomposition: Optional[Decomposition] = None
    name: str = "custom"
    description: str = ""

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if x0.ndim != 1 or x0.size < 1:
            raise ConfigurationError("x0 must be a non-empty vector")
        object.__setattr__(self, "x0", x0)
        if not self.intensity >= 0:
            raise ConfigurationError(f"jump intensity must be >= 0, got {self.intensity}")
        if self.noise_dim < 1:
            raise ConfigurationError("noise dimension m must be >= 1")

    @property
    def dimension(self) -> int:
        return self.x0.size

    @classmethod
    def scalar(cls, f, g, h, intensity, x0, decomposition=None, name="custom", description=""):
        """Build a ``d = m = 1`` problem from elementwise functions of a float array.

        ``decomposition`` may be a 4-tuple ``(F1, F, G1, G)`` of elementwise
        functions, which are lifted the same way.
        """
        dec = None
        if decomposition is not None:
            F1, F, G1, G = decomposition
            dec = Decomposition(
                _lift_vector(F1), _lift_vector(F), _lift_matrix(G1), _lift_matrix(G)
            )
        return cls(
            f=_lift_vector(f),
            g=_lift_matrix(g),
            h=_lift_vector(h),
            intensity=float(intensity),
            x0=np.array([float(x0)]),
            noise_dim=1,
            decomposition=dec,
            name=name,
            description=description,
        )


@dataclass(frozen=True)
class TruncationPolicy:
    """Pair ``(mu, phi)`` controlling the radial clamp ``pi_delta``.

    ``mu`` is the strictly increasing coefficient envelope with explicit inverse
    ``mu_inv``; ``phi`` is the strictly decreasing truncation control on
    ``(0, delta_star]``.
    """

    mu: Callable[[float], float]
    mu_inv: Callable[[float], float]
    phi: Callable[[float], float]
    delta_star: float
    name: str = ""

    def __post_init__(self):
        if not 0.0 < self.delta_star <= 1.0:
            raise ConfigurationError(f"delta_star must lie in (0, 1], got {self.delta_star}")

    def check_step(self, delta: float) -> None:
        if not (0.0 < delta <= self.delta_star):
            raise DomainError(f"step size {delta!r} outside (0, {self.delta_star}]")

    def radius(self, delta: float) -> float:
        """Clamp radius ``mu_inv(phi(delta))``."""
        self.check_step(delta)
        return float(self.mu_inv(self.phi(delta)))


def power_policy(power, eps, scale=1.0, delta_star=0.5, phi_scale=1.0) -> TruncationPolicy:
    """``mu(n) = scale * n**power`` and ``phi(delta) = phi_scale * delta**(-eps)``."""
    if power <= 0 or eps <= 0 or scale <= 0 or phi_scale <= 0:
        raise ConfigurationError("power, eps, scale and phi_scale must be positive")
    power, eps, scale, phi_scale = float(power), float(eps), float(scale), float(phi_scale)
    return TruncationPolicy(
        mu=lambda n: scale * n**power,
        mu_inv=lambda y: (y / scale) ** (1.0 / power),
        phi=lambda d: phi_scale * d ** (-eps),
        delta_star=float(delta_star),
        name=f"mu(n)={scale:g}*n^{power:g}, phi(D)={phi_scale:g}*D^-{eps:g}",
    )


def state_norm(x: np.ndarray) -> np.ndarray:
    """Euclidean norm over the last axis, overflow-safe for finite inputs."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] == 1:
        return np.abs(x[..., 0])
    scale = np.max(np.abs(x), axis=-1)
    safe = np.where(scale > 0, scale, 1.0)
    return scale * np.sqrt(np.sum((x / safe[..., None]) ** 2, axis=-1))


def _clamp(x: np.ndarray, radius: float) -> np.ndarray:
    if x.shape[-1] == 1:
        # exact: lands on +-radius, no rounding from rescaling
        return np.clip(x, -radius, radius)
    norm = state_norm(x)
    outside = norm > radius
    if not np.any(outside):
        return x
    factor = np.where(outside, radius / np.where(outside, norm, 1.0), 1.0)
    return x * factor[..., None]


def pi_delta(x, policy: TruncationPolicy, delta: float) -> np.ndarray:
    """Radial projection of ``x`` onto the ball of radius ``mu_inv(phi(delta))``.

    Works on a single state of shape ``(d,)`` or a batch ``(..., d)``; the zero
    state maps to itself.
    """
    return _clamp(np.asarray(x, dtype=float), policy.radius(delta))


def truncated_coefficients(problem: SdeProblem, policy: TruncationPolicy, delta: float, mode="full"):
    """Return ``(f_delta, g_delta, h_delta)`` for the fully or partially truncated scheme.

    ``full`` composes every coefficient with the clamp. ``partial`` keeps the
    linear parts ``F1``, ``G1`` and the jump coefficient as they are and clamps
    only the super-linear parts ``F`` and ``G``.
    """
    radius = policy.radius(delta)
    if mode == "full":
        f, g, h = problem.f, problem.g, problem.h
        return (
            lambda x: f(_clamp(x, radius)),
            lambda x: g(_clamp(x, radius)),
            lambda x: h(_clamp(x, radius)),
        )
    if mode == "partial":
        dec = problem.decomposition
        if dec is None:
            raise ConfigurationError(f"partial truncation needs a decomposition (problem {problem.name!r})")
        return (
            lambda x: dec.F1(x) + dec.F(_clamp(x, radius)),
            lambda x: dec.G1(x) + dec.G(_clamp(x, radius)),
            problem.h,
        )
    raise ConfigurationError(f"unknown truncation mode {mode!r}")


@dataclass(frozen=True)
class CheckReport:
    """Outcome of a sampling-based assumption check."""

    name: str
    passed: bool
    max_excess: float
    n_checked: int
    worst_state: Optional[np.ndarray] = None
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {
            "name": self.name,
            "passed": bool(self.passed),
            "max_excess": float(self.max_excess),
            "n_checked": int(self.n_checked),
        }
        if self.worst_state is not None:
            out["worst_state"] = [float(v) for v in np.ravel(self.worst_state)]
        out.update(self.details)
        return out


def sample_states(d=1, box=(-100.0, 100.0), n=1000, radial_max=1e3, n_radial=64, seed=0) -> np.ndarray:
    """Default check grid: ``n`` uniform states in a box plus log-spaced radial points.

    Radial points run from ``1e-3`` to ``radial_max`` along random directions
    and their negatives.
    """
    rng = np.random.default_rng(seed)
    lo, hi = box
    uniform = rng.uniform(lo, hi, size=(n, d))
    radii = np.logspace(-3, math.log10(radial_max), n_radial)
    dirs = rng.standard_normal((n_radial, d))
    dirs /= state_norm(dirs)[:, None]
    radial = radii[:, None] * dirs
    return np.concatenate([uniform, radial, -radial, np.zeros((1, d))])


def _frob(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(a * a, axis=(-2, -1)))


def check_decomposition(problem: SdeProblem, states=None, rtol=1e-12) -> CheckReport:
    """Verify ``f = F1 + F`` and ``g = G1 + G`` on sample states."""
    dec = problem.decomposition
    if dec is None:
        raise ConfigurationError("problem has no decomposition")
    if states is None:
        states = sample_states(problem.dimension)
    x = np.asarray(states, dtype=float)
    df = state_norm(problem.f(x) - (dec.F1(x) + dec.F(x)))
    dg = _frob(problem.g(x) - (dec.G1(x) + dec.G(x)))
    scale_f = 1.0 + state_norm(problem.f(x))
    scale_g = 1.0 + _frob(problem.g(x))
    excess = np.maximum(df / scale_f, dg / scale_g) - rtol
    i = int(np.argmax(excess))
    return CheckReport("decomposition", bool(excess[i] <= 0), float(excess[i]), len(x), x[i])


def check_policy(policy: TruncationPolicy, regime="full", p_bar=None, deltas=None, tol=1e-12) -> CheckReport:
    """Check monotonicity of ``mu``/``phi``, the inverse pair and the step-size relations.

    ``full``: ``phi(delta_star) >= mu(1)`` and ``phi(D) * D**0.25 <= 1``.
    ``partial``: ``phi(D)**p_bar <= min(1/D, D**(-p_bar/4))``.
    ``None`` skips the step-size relations.
    """
    if deltas is None:
        deltas = policy.delta_star * 2.0 ** -np.arange(0, 31)
    deltas = np.sort(np.asarray(deltas, dtype=float))[::-1]
    ns = 2.0 ** np.arange(0, 11)
    failures = []
    worst = -math.inf

    inv_err = max(abs(policy.mu_inv(policy.mu(n)) - n) / n for n in ns)
    if inv_err > 1e-10:
        failures.append(f"mu_inv(mu(n)) != n (rel err {inv_err:.3g})")
    mus = np.array([policy.mu(n) for n in np.linspace(0.01, 1e3, 257)])
    if np.any(np.diff(mus) <= 0):
        failures.append("mu not strictly increasing")
    phis = np.array([policy.phi(d) for d in deltas])
    if np.any(np.diff(phis) <= 0):  # deltas descending, so phi must ascend
        failures.append("phi not strictly decreasing")

    if regime == "full":
        gap = policy.mu(1.0) - policy.phi(policy.delta_star)
        worst = max(worst, gap)
        if gap > tol:
            failures.append("phi(delta_star) < mu(1)")
        excess = phis * deltas**0.25 - 1.0
        worst = max(worst, float(np.max(excess)))
        if np.max(excess) > tol:
            failures.append("phi(D) * D^(1/4) > 1")
    elif regime == "partial":
        if p_bar is None:
            raise ConfigurationError("partial regime check needs p_bar")
        # compare in log space: phi**p_bar overflows for tiny steps
        lhs = p_bar * np.log(phis)
        rhs = np.minimum(-np.log(deltas), -p_bar / 4.0 * np.log(deltas))
        excess = lhs - rhs
        worst = max(worst, float(np.max(excess)))
        if np.max(excess) > 1e-9:
            failures.append("phi(D)^p_bar > D^-1 ^ D^(-p_bar/4)")
    elif regime is not None:
        raise ConfigurationError(f"unknown regime {regime!r}")
    return CheckReport(
        f"policy[{regime or 'generic'}]",
        not failures,
        float(worst),
        len(deltas),
        details={"failures": failures, "mu_inverse_rel_err": float(inv_err)},
    )


def check_coefficient_envelope(problem: SdeProblem, policy: TruncationPolicy, mode="full", ns=None, n_dirs=257, seed=0) -> CheckReport:
    """Spot-check ``sup_{|x|<=n} |coefficients| <= mu(n)`` for ``n >= 1``.

    ``full`` bounds ``f``, ``g`` and ``h``; ``partial`` bounds ``F`` and ``G``.
    """
    if ns is None:
        ns = 2.0 ** np.arange(0, 11)
    rng = np.random.default_rng(seed)
    d = problem.dimension
    worst = -math.inf
    worst_state = None
    count = 0
    for n in ns:
        dirs = rng.standard_normal((n_dirs, d))
        dirs /= state_norm(dirs)[:, None]
        radii = n * np.linspace(0.0, 1.0, 33)
        x = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, d)
        if mode == "full":
            mags = np.maximum.reduce([state_norm(problem.f(x)), _frob(problem.g(x)), state_norm(problem.h(x))])
        else:
            dec = problem.decomposition
            if dec is None:
                raise ConfigurationError("partial envelope check needs a decomposition")
            mags = np.maximum(state_norm(dec.F(x)), _frob(dec.G(x)))
        excess = mags / policy.mu(n) - 1.0
        i = int(np.argmax(excess))
        count += len(x)
        if excess[i] > worst:
            worst, worst_state = float(excess[i]), x[i]
    return CheckReport(f"envelope[{mode}]", worst <= 1e-12, worst, count, worst_state)


def check_khasminskii_preserved(problem: SdeProblem, policy: TruncationPolicy, delta: float, k_bar: float, sample=None) -> CheckReport:
    """Evaluate ``2x.f_D + |g_D|^2 + lam(2x.h_D + |h_D|^2) - 2K(1+|x|^2)`` on sample states.

    Uses the fully truncated coefficients. Passes iff the maximum is at most 1e-9.
    """
    f_d, g_d, h_d = truncated_coefficients(problem, policy, delta, "full")
    x = sample_states(problem.dimension) if sample is None else np.asarray(sample, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    fx, gx, hx = f_d(x), g_d(x), h_d(x)
    lhs = (
        2.0 * np.sum(x * fx, axis=-1)
        + np.sum(gx * gx, axis=(-2, -1))
        + problem.intensity * (2.0 * np.sum(x * hx, axis=-1) + np.sum(hx * hx, axis=-1))
    )
    excess = lhs - 2.0 * k_bar * (1.0 + np.sum(x * x, axis=-1))
    i = int(np.argmax(excess))
    return CheckReport("khasminskii_preserved", bool(excess[i] <= 1e-9), float(excess[i]), len(x), x[i])


@dataclass(frozen=True)
class AssumptionConstants:
    """Constants of the local/one-sided/Khasminskii-type assumptions.

    ``L1`` Lipschitz-type constant, ``gamma`` super-linear growth exponent,
    ``r_bar``/``L2`` the one-sided condition, ``p_bar``/``K2`` the
    Khasminskii-type condition and ``K1`` the linear growth constant.
    """

    L1: float = 0.0
    L2: float = 0.0
    gamma: float = 0.0
    r_bar: float = 3.0
    p_bar: float = 4.0
    K1: float = 0.0
    K2: float = 0.0


def derived_constants(consts: AssumptionConstants, r: float, p: float):
    """Return ``(L3, K3, K4)`` for moment orders ``2 <= r < r_bar`` and ``2 <= p < p_bar``."""
    if not 2.0 <= r < consts.r_bar:
        raise DomainError(f"need 2 <= r < r_bar={consts.r_bar}, got r={r}")
    if not 2.0 <= p < consts.p_bar:
        raise DomainError(f"need 2 <= p < p_bar={consts.p_bar}, got p={p}")
    L1, K1 = consts.L1, consts.K1
    L3 = 2 * L1 + consts.L2 + (L1**2 + (r - 1) * (consts.r_bar - 1)) / (consts.r_bar - r)
    tail = (K1**2 + (p - 1) * (consts.p_bar - 1)) / (consts.p_bar - p)
    K3 = 2 * K1 + consts.K2 + tail
    K4 = 2 * K1 + 2 * consts.K2 + tail
    return L3, K3, K4


def low_order_step_condition(policy: TruncationPolicy, delta_bar: float, r: float, L3_bar: float, gamma_bar: float) -> bool:
    """Whether ``phi(D) >= mu(L3^-(1+g) * (D^(r/2) phi(D)^r)^(-1/(2-r)))`` at ``D = delta_bar``.

    This is the step-size threshold for the ``0 < r < 2`` rate; it is only
    reported, the library never adjusts the step size when it fails.
    """
    if not 0 < r < 2:
        raise DomainError("r must lie in (0, 2)")
    phi = policy.phi(delta_bar)
    inner = L3_bar ** (-(1.0 + gamma_bar)) * (delta_bar ** (r / 2) * phi**r) ** (-1.0 / (2.0 - r))
    return bool(phi >= policy.mu(inner))


# ---------------------------------------------------------------- presets


def _example_5_1():
    problem = SdeProblem.scalar(
        f=lambda x: -(x * x * x * x * x),
        g=lambda x: x * x,
        h=lambda x: x * x,
        intensity=0.5,
        x0=1.0,
        name="example-5.1",
        description="dx = -x^5 dt + x^2 dB + x^2 dN, lambda=0.5, x0=1",
    )
    return problem, power_policy(power=5, eps=0.25, delta_star=0.5)


def _example_5_2():
    problem = SdeProblem.scalar(
        f=lambda x: -(x + x * x * x * x * x),
        g=lambda x: x * x,
        h=lambda x: x,
        intensity=0.5,
        x0=0.5,
        decomposition=(
            lambda x: -x,
            lambda x: -(x * x * x * x * x),
            lambda x: np.zeros_like(x),
            lambda x: x * x,
        ),
        name="example-5.2",
        description="dx = -(x + x^5) dt + x^2 dB + x dN, lambda=0.5, x0=0.5",
    )
    return problem, power_policy(power=5, eps=1 / 40, delta_star=0.5)


def _example_5_3():
    problem = SdeProblem.scalar(
        f=lambda x: x - x * x * x,
        g=lambda x: x,
        h=lambda x: x,
        intensity=0.1,
        x0=1.0,
        decomposition=(
            lambda x: -2.0 * x,
            lambda x: 3.0 * x - x * x * x,
            lambda x: x,
            lambda x: np.zeros_like(x),
        ),
        name="example-5.3",
        description="dx = (x - x^3) dt + x dB + x dN, lambda=0.1, x0=1",
    )
    return problem, power_policy(power=3, eps=1 / 50, scale=4.0, delta_star=0.5)


def geometric_problem(a=0.05, b=0.2, c=0.5, intensity=1.0, x0=1.0) -> SdeProblem:
    """Linear jump-diffusion ``dx = a x dt + b x dB + c x dN`` (exactly solvable)."""
    return SdeProblem.scalar(
        f=lambda x: a * x,
        g=lambda x: b * x,
        h=lambda x: c * x,
        intensity=intensity,
        x0=x0,
        decomposition=(
            lambda x: a * x,
            lambda x: np.zeros_like(x),
            lambda x: b * x,
            lambda x: np.zeros_like(x),
        ),
        name="geometric-jump",
        description=f"dx = {a:g} x dt + {b:g} x dB + {c:g} x dN, lambda={intensity:g}, x0={x0:g}",
    )


def _geometric_jump():
    # clamp radius 1e6 * D^(-1/4) >= 1e6: never binds at moderate states
    return geometric_problem(), power_policy(power=1, eps=0.25, phi_scale=1e6, delta_star=0.5)


_PRESETS = {
    "example-5.1": _example_5_1,
    "example-5.2": _example_5_2,
    "example-5.3": _example_5_3,
    "geometric-jump": _geometric_jump,
}
PRESET_NAMES = tuple(_PRESETS)


def get_preset(name: str):
    """Return ``(problem, policy)`` for a named preset."""
    try:
        return _PRESETS[name]()
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}") from None
