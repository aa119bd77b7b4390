"""Noise-level schedule and time-matrix machinery for non-identical diffusion.

A scalar schedule ``gamma`` maps a time index ``tau`` in ``[0, T]`` to the
signal fraction ``alpha`` in ``(0, 1]``; the noise fraction is
``beta = sqrt(1 - alpha**2)``.  Non-identical diffusion generalizes the
scalar time to a per-element time matrix, so everything here is vectorized
over arbitrary array shapes.

The module also owns the training-time tau-pattern samplers (same /
independent / periodical / car-only / mixed) and the generation-time
stepping rules (uniform, waterfilling, hybrid, and their alpha-domain
analogues).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Schedule",
    "NoisePatternSpec",
    "sample_tau",
    "step_uniform",
    "step_waterfilling",
    "waterfilling_level",
    "step_hybrid",
    "step_alpha_uniform",
    "step_alpha_waterfilling",
    "step_alpha_hybrid",
    "make_stepper",
    "STEPPING_RULES",
]


class Schedule:
    """Tabulated signal-fraction schedule with a log-linear interpolant.

    For integer ``tau`` the signal fraction is the cumulative product

        gamma(tau) = prod_{i=1..tau} sqrt(1 - 0.2 * i / T),

    and fractional ``tau`` interpolates ``log gamma`` linearly between the
    neighbouring integer indices.  ``gamma(0) = 1`` and ``gamma(T)`` is
    numerically zero (< 1e-20 for T = 1000).

    The object is immutable after construction and safe to share across
    threads.
    """

    def __init__(self, T: int = 1000):
        if T < 1:
            raise ValueError(f"T must be a positive integer, got {T}")
        self.T = int(T)
        i = np.arange(1, self.T + 1, dtype=np.float64)
        log_factors = 0.5 * np.log1p(-0.2 * i / self.T)
        self._log_table = np.concatenate(([0.0], np.cumsum(log_factors)))
        self.gamma_table = np.exp(self._log_table)

    def __repr__(self) -> str:
        return f"Schedule(T={self.T})"

    def _check_tau(self, tau: np.ndarray) -> np.ndarray:
        tau = np.asarray(tau, dtype=np.float64)
        if not np.all(np.isfinite(tau)):
            raise ValueError("tau contains non-finite entries")
        if np.any(tau < 0) or np.any(tau > self.T):
            raise ValueError(f"tau outside [0, {self.T}]")
        return tau

    def gamma(self, tau):
        """Signal fraction alpha = gamma(tau); accepts scalars or arrays."""
        tau_arr = self._check_tau(tau)
        k = np.minimum(np.floor(tau_arr), self.T - 1).astype(np.int64)
        frac = tau_arr - k
        log_g = (1.0 - frac) * self._log_table[k] + frac * self._log_table[k + 1]
        out = np.exp(log_g)
        if np.isscalar(tau) or np.ndim(tau) == 0:
            return float(out)
        return out

    def gamma_inverse(self, a):
        """Invert gamma by bisection on the interpolated table.

        Values below ``gamma(T)`` clamp to ``T``; ``a`` outside ``(0, 1]``
        is a domain error.  The bisection tightens the bracket well below
        1e-12 so round trips hold to float precision.
        """
        a_arr = np.asarray(a, dtype=np.float64)
        if not np.all(np.isfinite(a_arr)):
            raise ValueError("a contains non-finite entries")
        if np.any(a_arr <= 0.0) or np.any(a_arr > 1.0):
            raise ValueError("a outside (0, 1]")

        lo = np.zeros_like(a_arr)
        hi = np.full_like(a_arr, float(self.T))
        work = a_arr.reshape(-1)
        lo = lo.reshape(-1)
        hi = hi.reshape(-1)
        for _ in range(96):
            mid = 0.5 * (lo + hi)
            ge = self.gamma(mid) >= work
            lo = np.where(ge, mid, lo)
            hi = np.where(ge, hi, mid)
        tau = 0.5 * (lo + hi)
        tau = np.where(work >= 1.0, 0.0, tau)
        tau = np.where(work <= self.gamma_table[-1], float(self.T), tau)
        tau = tau.reshape(a_arr.shape)
        if np.isscalar(a) or np.ndim(a) == 0:
            return float(tau)
        return tau

    def alpha_beta(self, tau):
        """Elementwise (alpha, beta) maps for a time matrix."""
        alpha = np.asarray(self.gamma(tau))
        beta = np.sqrt(np.maximum(1.0 - alpha * alpha, 0.0))
        return alpha, beta


SIMPLE_PATTERN_KINDS = ("same", "independent", "periodical", "car-only")


@dataclass(frozen=True)
class NoisePatternSpec:
    """Declarative description of a tau-sampling noise pattern.

    ``kind`` is one of ``same``, ``independent``, ``periodical``,
    ``car-only`` or ``mixed``.  A mixed spec carries a list of component
    specs with nonnegative weights summing to one.  Periodical tiling draws
    its subcarrier period uniformly from ``car_period_range`` and its
    antenna period from ``ant_period_range`` (clipped to the matrix
    dimensions at sampling time).
    """

    kind: str
    components: tuple = ()
    weights: tuple = ()
    car_period_range: tuple = (4, 20)
    ant_period_range: tuple = (4, 10)

    def __post_init__(self):
        if self.kind == "mixed":
            if not self.components:
                raise ValueError("mixed pattern needs component specs")
            w = np.asarray(self.weights, dtype=np.float64)
            if len(self.components) != len(w):
                raise ValueError("components and weights length mismatch")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("mixed weights must be nonnegative and sum to 1")
            for c in self.components:
                if c.kind == "mixed":
                    raise ValueError("mixed patterns do not nest")
        elif self.kind not in SIMPLE_PATTERN_KINDS:
            raise ValueError(f"unknown pattern kind {self.kind!r}")
        for rng_pair in (self.car_period_range, self.ant_period_range):
            if rng_pair[0] < 1 or rng_pair[1] < rng_pair[0]:
                raise ValueError(f"bad period range {rng_pair}")

    @staticmethod
    def simple(kind: str) -> "NoisePatternSpec":
        return NoisePatternSpec(kind=kind)

    @staticmethod
    def mixed_uniform(kinds) -> "NoisePatternSpec":
        comps = tuple(NoisePatternSpec.simple(k) for k in kinds)
        w = tuple([1.0 / len(comps)] * len(comps))
        return NoisePatternSpec(kind="mixed", components=comps, weights=w)

    @staticmethod
    def all_patterns() -> "NoisePatternSpec":
        """Uniform mixture over every simple pattern."""
        return NoisePatternSpec.mixed_uniform(SIMPLE_PATTERN_KINDS)

    @staticmethod
    def non_directional() -> "NoisePatternSpec":
        """Uniform mixture over same / independent / periodical."""
        return NoisePatternSpec.mixed_uniform(
            ("same", "independent", "periodical"))


def sample_tau(spec: NoisePatternSpec, shape, rng: np.random.Generator,
               T: int = 1000) -> np.ndarray:
    """Draw one integer time matrix of the given shape from a pattern spec.

    Entries are uniform on {0, ..., T-1}; the spec controls how they are
    shared across the antenna (row) and subcarrier (column) axes.
    """
    n_a, n_c = shape
    if n_a < 1 or n_c < 1:
        raise ValueError(f"bad shape {shape}")

    if spec.kind == "same":
        x = rng.integers(0, T)
        return np.full((n_a, n_c), float(x))
    if spec.kind == "independent":
        return rng.integers(0, T, size=(n_a, n_c)).astype(np.float64)
    if spec.kind == "periodical":
        a_lo = min(spec.ant_period_range[0], n_a)
        a_hi = min(spec.ant_period_range[1], n_a)
        c_lo = min(spec.car_period_range[0], n_c)
        c_hi = min(spec.car_period_range[1], n_c)
        p_a = int(rng.integers(a_lo, a_hi + 1))
        p_c = int(rng.integers(c_lo, c_hi + 1))
        tile = rng.integers(0, T, size=(p_a, p_c)).astype(np.float64)
        ii = np.arange(n_a) % p_a
        jj = np.arange(n_c) % p_c
        return tile[np.ix_(ii, jj)]
    if spec.kind == "car-only":
        # One time per subcarrier: every antenna sees the same column value.
        cols = rng.integers(0, T, size=n_c).astype(np.float64)
        return np.broadcast_to(cols, (n_a, n_c)).copy()
    if spec.kind == "mixed":
        idx = rng.choice(len(spec.components), p=np.asarray(spec.weights))
        return sample_tau(spec.components[idx], shape, rng, T)
    raise ValueError(f"unknown pattern kind {spec.kind!r}")


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def step_uniform(tau, tau0, n_steps: int) -> np.ndarray:
    """One uniform time decrement: clamp(tau - tau0 / n_steps, 0)."""
    tau = np.asarray(tau, dtype=np.float64)
    tau0 = np.asarray(tau0, dtype=np.float64)
    _check_same_shape(tau, tau0, "step_uniform")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    return np.maximum(tau - tau0 / n_steps, 0.0)


def waterfilling_level(tau, budget: float) -> float:
    """Water level L such that lowering tau to min(tau, L) removes `budget`.

    Sorts the entries once and locates the level bracket by prefix sums;
    within the bracket the level solves a linear equation exactly.
    """
    flat = np.asarray(tau, dtype=np.float64).reshape(-1)
    total = float(flat.sum())
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    if budget > total * (1.0 + 1e-12) + 1e-12:
        raise ValueError(f"budget {budget} exceeds total mass {total}")
    budget = min(budget, total)
    if budget == 0.0:
        return float(flat.max(initial=0.0))

    s = np.sort(flat)[::-1]
    prefix = np.cumsum(s)
    n = s.size
    # Mass removed when the level sits at the (k+1)-th largest entry.
    k = np.arange(1, n, dtype=np.float64)
    removed_at = prefix[:-1] - k * s[1:]
    idx = int(np.searchsorted(removed_at, budget, side="left"))
    # Level lies between s[idx+1] (or 0) and s[idx]; idx+1 entries above it.
    m = idx + 1
    level = (prefix[idx] - budget) / m
    return float(max(level, 0.0))


def step_waterfilling(tau, budget: float) -> np.ndarray:
    """Lower the largest entries to a common level, removing exactly `budget`.

    The output is min(tau, L) for the computed level L, which gives mass
    conservation, elementwise dominance and order preservation for free.
    """
    tau = np.asarray(tau, dtype=np.float64)
    level = waterfilling_level(tau, budget)
    return np.minimum(tau, level)


def step_hybrid(tau, tau0, n_steps: int, eps_step: float) -> np.ndarray:
    """Elementwise blend of the uniform and waterfilling decrements.

    ``eps_step=1`` is exactly ``step_uniform``; ``eps_step=0`` is exactly
    ``step_waterfilling`` with budget ``|tau0|_1 / n_steps``.  The
    waterfilling budget clamps to the remaining mass so late steps stay
    feasible.
    """
    if not 0.0 <= eps_step <= 1.0:
        raise ValueError("eps_step outside [0, 1]")
    tau = np.asarray(tau, dtype=np.float64)
    tau0 = np.asarray(tau0, dtype=np.float64)
    _check_same_shape(tau, tau0, "step_hybrid")
    if eps_step == 1.0:
        return step_uniform(tau, tau0, n_steps)
    budget = min(float(np.abs(tau0).sum()) / n_steps, float(tau.sum()))
    wf = step_waterfilling(tau, budget)
    if eps_step == 0.0:
        return wf
    uni = step_uniform(tau, tau0, n_steps)
    return eps_step * uni + (1.0 - eps_step) * wf


def step_alpha_uniform(schedule: Schedule, tau, tau0, n_steps: int) -> np.ndarray:
    """Uniform stepping in the alpha domain.

    Moves alpha linearly from gamma(tau0) to 1 over n_steps, then maps back
    through the inverse schedule.
    """
    alpha = np.asarray(schedule.gamma(tau))
    alpha0 = np.asarray(schedule.gamma(tau0))
    alpha_next = np.minimum(alpha + (1.0 - alpha0) / n_steps, 1.0)
    alpha_next = np.maximum(alpha_next, alpha)
    return schedule.gamma_inverse(alpha_next)


def step_alpha_waterfilling(schedule: Schedule, tau, tau0, n_steps: int) -> np.ndarray:
    """Waterfilling on the noise amount 1 - alpha.

    The largest 1 - alpha entries are lowered to a common level, with the
    per-step budget |1 - gamma(tau0)|_1 / n_steps (clamped to the remaining
    mass), then mapped back through the inverse schedule.
    """
    alpha = np.asarray(schedule.gamma(tau))
    alpha0 = np.asarray(schedule.gamma(tau0))
    q = 1.0 - alpha
    budget = min(float((1.0 - alpha0).sum()) / n_steps, float(q.sum()))
    q_next = step_waterfilling(q, budget)
    return schedule.gamma_inverse(np.clip(1.0 - q_next, None, 1.0))


def step_alpha_hybrid(schedule: Schedule, tau, tau0, n_steps: int,
                      eps_step: float) -> np.ndarray:
    """Blend of the two alpha-domain rules, combined in alpha space."""
    if not 0.0 <= eps_step <= 1.0:
        raise ValueError("eps_step outside [0, 1]")
    if eps_step == 1.0:
        return step_alpha_uniform(schedule, tau, tau0, n_steps)
    if eps_step == 0.0:
        return step_alpha_waterfilling(schedule, tau, tau0, n_steps)
    a_uni = np.asarray(schedule.gamma(step_alpha_uniform(schedule, tau, tau0, n_steps)))
    a_wf = np.asarray(schedule.gamma(step_alpha_waterfilling(schedule, tau, tau0, n_steps)))
    a_next = np.clip(eps_step * a_uni + (1.0 - eps_step) * a_wf, None, 1.0)
    return schedule.gamma_inverse(a_next)


STEPPING_RULES = (
    "tau-linear",
    "tau-waterfilling",
    "tau-hybrid",
    "alpha-linear",
    "alpha-waterfilling",
    "alpha-hybrid",
)


def make_stepper(rule: str, schedule: Schedule, tau0, n_steps: int,
                 eps_step: float = 0.5):
    """Bind a stepping rule name to a callable tau -> tau_next.

    The pure rules ignore ``eps_step``; the two hybrid rules blend with it.
    """
    tau0 = np.asarray(tau0, dtype=np.float64)
    if rule == "tau-linear":
        return lambda tau: step_uniform(tau, tau0, n_steps)
    if rule == "tau-waterfilling":
        budget = float(np.abs(tau0).sum()) / n_steps
        return lambda tau: step_waterfilling(
            tau, min(budget, float(np.asarray(tau).sum())))
    if rule == "tau-hybrid":
        return lambda tau: step_hybrid(tau, tau0, n_steps, eps_step)
    if rule == "alpha-linear":
        return lambda tau: step_alpha_uniform(schedule, tau, tau0, n_steps)
    if rule == "alpha-waterfilling":
        return lambda tau: step_alpha_waterfilling(schedule, tau, tau0, n_steps)
    if rule == "alpha-hybrid":
        return lambda tau: step_alpha_hybrid(schedule, tau, tau0, n_steps, eps_step)
    raise ValueError(f"unknown stepping rule {rule!r}; expected one of {STEPPING_RULES}")
