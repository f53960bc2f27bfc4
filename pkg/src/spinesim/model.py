"""Branching model triple: motion, branching rate and offspring law.

A model is the triple (Y, beta, psi): a motion process, a bounded
branching rate and a family of offspring distributions. Three motion
families are supported, all of which share the state representation
``(position, type)``:

* :class:`BrownianMotion` on the real line (a single type),
* :class:`FiniteChain` on ``{0, ..., n-1}`` (position unused, always 0),
* :class:`TypedBrownian` on ``R x {0, ..., n-1}``.

Types are 0-based in code; documentation that counts from 1 refers to the
same states shifted by one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

GENERATOR_TOL = 1e-12
NORMALIZATION_TOL = 1e-12
DEFAULT_KMAX = 1_000_000


class ModelError(ValueError):
    """Raised when a model component violates its invariants."""


# ---------------------------------------------------------------------------
# Motion


def _check_generator(gen: np.ndarray) -> np.ndarray:
    gen = np.atleast_2d(np.asarray(gen, dtype=float))
    n = gen.shape[0]
    if gen.shape != (n, n) or n < 1:
        raise ModelError(f"generator must be square and non-empty, got {gen.shape}")
    off = gen - np.diag(np.diag(gen))
    if np.any(off < 0):
        raise ModelError("generator off-diagonal entries must be nonnegative")
    if np.any(np.abs(gen.sum(axis=1)) > GENERATOR_TOL * max(1.0, np.abs(gen).max())):
        raise ModelError("generator rows must sum to zero")
    return gen


@dataclass(frozen=True)
class BrownianMotion:
    """Brownian motion on R with variance ``diffusion`` per unit time."""

    diffusion: float = 1.0

    def __post_init__(self):
        if not self.diffusion > 0:
            raise ModelError("diffusion must be positive")

    @property
    def n_types(self) -> int:
        return 1

    @property
    def spatial(self) -> bool:
        return True

    def generator_matrix(self) -> np.ndarray:
        return np.zeros((1, 1))

    def diffusion_vector(self) -> np.ndarray:
        return np.array([self.diffusion])

    def to_dict(self) -> dict:
        return {"kind": "brownian", "diffusion": self.diffusion}


@dataclass(frozen=True)
class FiniteChain:
    """Continuous-time Markov chain with the given generator (counting measure)."""

    generator: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "generator", _check_generator(self.generator))

    @property
    def n_types(self) -> int:
        return self.generator.shape[0]

    @property
    def spatial(self) -> bool:
        return False

    def generator_matrix(self) -> np.ndarray:
        return self.generator.copy()

    def diffusion_vector(self) -> np.ndarray:
        return np.zeros(self.n_types)

    def to_dict(self) -> dict:
        return {"kind": "chain", "generator": self.generator.tolist()}

    def __eq__(self, other):
        return isinstance(other, FiniteChain) and np.array_equal(self.generator, other.generator)

    def __hash__(self):
        return hash(self.generator.tobytes())


@dataclass(frozen=True)
class TypedBrownian:
    """Brownian motion whose diffusion coefficient is driven by a type chain.

    The type evolves with generator ``theta * type_generator``; while in type
    ``i`` the position diffuses with variance ``diffusion_by_type[i]`` per
    unit time.
    """

    type_generator: np.ndarray
    diffusion_by_type: np.ndarray
    theta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "type_generator", _check_generator(self.type_generator))
        a = np.atleast_1d(np.asarray(self.diffusion_by_type, dtype=float))
        if a.shape != (self.type_generator.shape[0],):
            raise ModelError("diffusion_by_type must have one entry per type")
        if np.any(a <= 0):
            raise ModelError("all diffusion coefficients must be positive")
        object.__setattr__(self, "diffusion_by_type", a)
        if not self.theta > 0:
            raise ModelError("theta must be positive")

    @property
    def n_types(self) -> int:
        return self.type_generator.shape[0]

    @property
    def spatial(self) -> bool:
        return True

    def generator_matrix(self) -> np.ndarray:
        return self.theta * self.type_generator

    def diffusion_vector(self) -> np.ndarray:
        return self.diffusion_by_type.copy()

    def to_dict(self) -> dict:
        return {
            "kind": "typed_brownian",
            "type_generator": self.type_generator.tolist(),
            "diffusion_by_type": self.diffusion_by_type.tolist(),
            "theta": self.theta,
        }

    def __eq__(self, other):
        return (
            isinstance(other, TypedBrownian)
            and np.array_equal(self.type_generator, other.type_generator)
            and np.array_equal(self.diffusion_by_type, other.diffusion_by_type)
            and self.theta == other.theta
        )

    def __hash__(self):
        return hash((self.type_generator.tobytes(), self.diffusion_by_type.tobytes(), self.theta))


MotionModel = Union[BrownianMotion, FiniteChain, TypedBrownian]


# ---------------------------------------------------------------------------
# Offspring laws


@dataclass(frozen=True)
class SeriesValue:
    """A possibly truncated series: partial sum plus what is known about the rest."""

    value: float
    tail_bound: float = 0.0
    divergent: bool = False

    @property
    def finite(self) -> bool:
        return not self.divergent


@dataclass(frozen=True)
class Explicit:
    """Finite-support law given by its probability vector ``p[0..K]``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.probs, dtype=float))
        if p.ndim != 1 or p.size == 0:
            raise ModelError("probs must be a non-empty vector")
        if np.any(p < 0):
            raise ModelError("probabilities must be nonnegative")
        if abs(p.sum() - 1.0) > NORMALIZATION_TOL:
            raise ModelError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_dict(cls, mapping: dict) -> "Explicit":
        """Build from ``{k: p_k}``; keys may be ints or numeric strings."""
        items = {int(k): float(v) for k, v in mapping.items()}
        p = np.zeros(max(items) + 1)
        for k, v in items.items():
            p[k] = v
        return cls(p)

    def pmf(self) -> np.ndarray:
        return self.probs

    def mean(self) -> float:
        return float(np.arange(self.probs.size) @ self.probs)

    def to_dict(self) -> dict:
        return {"kind": "explicit", "probs": self.probs.tolist()}

    def __eq__(self, other):
        return isinstance(other, Explicit) and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.probs.tobytes())


@dataclass(frozen=True)
class Geometric:
    """Geometric law on {0, 1, 2, ...}: ``p_k = (1 - s)^k s``, mean ``(1 - s)/s``."""

    success: float

    def __post_init__(self):
        if not 0.0 < self.success < 1.0:
            raise ModelError("success must lie in (0, 1)")

    def mean(self) -> float:
        return (1.0 - self.success) / self.success

    def pmf(self, kmax: int = 2000) -> np.ndarray:
        k = np.arange(kmax + 1)
        return self.success * (1.0 - self.success) ** k

    def to_dict(self) -> dict:
        return {"kind": "geometric", "success": self.success}


@dataclass(frozen=True)
class PowerLaw:
    """Heavy-tailed law ``p_k ∝ k^-exponent (1 + log k)^-log_power`` on 1..kmax.

    The untruncated family has finite mean when ``exponent > 2``, or when
    ``exponent == 2`` and ``log_power > 1``. The law actually sampled is the
    truncation to ``1..kmax``; :attr:`truncation_mass` is the probability the
    untruncated family puts beyond ``kmax``.
    """

    exponent: float
    log_power: float = 0.0
    kmax: int = DEFAULT_KMAX
    _pmf: np.ndarray = field(init=False, repr=False, compare=False)
    truncation_mass: float = field(init=False, compare=False)

    def __post_init__(self):
        if self.exponent < 2 or (self.exponent == 2 and self.log_power <= 1):
            raise ModelError("PowerLaw needs exponent > 2, or exponent == 2 with log_power > 1")
        if self.log_power < 0:
            raise ModelError("log_power must be nonnegative")
        if self.kmax < 1:
            raise ModelError("kmax must be >= 1")
        k = np.arange(1, self.kmax + 1, dtype=float)
        w = self.weights(k)
        z = math.fsum(w)
        p = np.concatenate([[0.0], w / z])
        object.__setattr__(self, "_pmf", p)
        object.__setattr__(self, "truncation_mass", self._tail_weight(self.kmax) / (z + self._tail_weight(self.kmax)))

    def weights(self, k):
        k = np.asarray(k, dtype=float)
        return k ** (-self.exponent) * (1.0 + np.log(k)) ** (-self.log_power)

    def _tail_weight(self, kmax: int) -> float:
        from scipy.integrate import quad

        # Σ_{k>K} w(k) <= ∫_K^∞ w, with w decreasing
        val, _ = quad(lambda s: math.exp((1 - self.exponent) * s) * (1 + s) ** (-self.log_power),
                      math.log(kmax), math.inf, limit=200)
        return val

    def pmf(self) -> np.ndarray:
        return self._pmf

    def mean(self) -> float:
        return float(np.arange(self._pmf.size) @ self._pmf)

    def mean_series(self) -> SeriesValue:
        """Mean of the truncated law, with the untruncated tail contribution bounded."""
        from scipy.integrate import quad

        z = math.fsum(self.weights(np.arange(1, self.kmax + 1, dtype=float)))
        tail, _ = quad(lambda s: math.exp((2 - self.exponent) * s) * (1 + s) ** (-self.log_power),
                       math.log(self.kmax), math.inf, limit=200)
        return SeriesValue(self.mean(), tail / z)

    def to_dict(self) -> dict:
        return {"kind": "power_law", "exponent": self.exponent, "log_power": self.log_power, "kmax": self.kmax}

    def __hash__(self):
        return hash((self.exponent, self.log_power, self.kmax))


BaseLaw = Union[Explicit, Geometric, PowerLaw]


@dataclass(frozen=True)
class PerState:
    """A table assigning a base law to every type."""

    laws: tuple

    def __post_init__(self):
        laws = tuple(self.laws)
        if not laws:
            raise ModelError("PerState needs at least one law")
        for law in laws:
            if isinstance(law, PerState):
                raise ModelError("PerState laws cannot be nested")
        object.__setattr__(self, "laws", laws)

    def to_dict(self) -> dict:
        return {"kind": "per_state", "laws": [law.to_dict() for law in self.laws]}


OffspringLaw = Union[Explicit, Geometric, PowerLaw, PerState]


def law_at(law: OffspringLaw, state: int = 0) -> BaseLaw:
    """Base law used in type ``state``."""
    if isinstance(law, PerState):
        return law.laws[state]
    return law


def offspring_mean(law: OffspringLaw, state: int = 0) -> float:
    """Mean number of offspring A(x) = Σ k p_k(x) at the given type.

    Exact for Explicit and Geometric laws; for PowerLaw this is the mean of
    the truncated law (see :meth:`PowerLaw.mean_series` for the tail bound).
    """
    return law_at(law, state).mean()


def _size_biased_pmf(base: BaseLaw) -> np.ndarray:
    p = base.pmf()
    k = np.arange(p.size)
    a = float(k @ p)
    if a <= 0:
        raise ModelError("size-biased law undefined: mean offspring is 0")
    return k * p / a


def size_biased_pmf(law: OffspringLaw, state: int = 0) -> np.ndarray:
    """Probabilities k p_k / A over the table support (Geometric truncated at 2000)."""
    return _size_biased_pmf(law_at(law, state))


def sample_offspring(law: OffspringLaw, state: int, rng: np.random.Generator) -> int:
    """Draw an offspring count from ``p_·(state)``."""
    base = law_at(law, state)
    if isinstance(base, Geometric):
        # numpy's geometric counts trials, ours counts failures
        return int(rng.geometric(base.success) - 1)
    cdf = np.cumsum(base.pmf())
    return int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))


def sample_size_biased(law: OffspringLaw, state: int, rng: np.random.Generator) -> int:
    """Draw k >= 1 with probability k p_k / A at ``state``."""
    base = law_at(law, state)
    if isinstance(base, Geometric):
        # k p_k / A = k (1-s)^(k-1) s^2, i.e. one plus two independent failures counts
        return int(1 + rng.geometric(base.success) - 1 + rng.geometric(base.success) - 1)
    pb = _size_biased_pmf(base)
    cdf = np.cumsum(pb)
    return int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))


# ---------------------------------------------------------------------------
# Branching rates


@dataclass(frozen=True)
class Constant:
    beta: float

    def __post_init__(self):
        if not (self.beta >= 0 and math.isfinite(self.beta)):
            raise ModelError("beta must be finite and nonnegative")

    def to_dict(self) -> dict:
        return {"kind": "constant", "beta": self.beta}


@dataclass(frozen=True)
class PerStateRate:
    table: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.table, dtype=float))
        if np.any(t < 0) or not np.all(np.isfinite(t)):
            raise ModelError("per-state rates must be finite and nonnegative")
        object.__setattr__(self, "table", t)

    def to_dict(self) -> dict:
        return {"kind": "per_state", "table": self.table.tolist()}

    def __eq__(self, other):
        return isinstance(other, PerStateRate) and np.array_equal(self.table, other.table)

    def __hash__(self):
        return hash(self.table.tobytes())


_EXPR_NAMESPACE = {name: getattr(math, name) for name in
                   ("sin", "cos", "tan", "exp", "log", "sqrt", "tanh", "pi", "e")}
_EXPR_NAMESPACE["abs"] = abs
_EXPR_NAMESPACE["min"] = min
_EXPR_NAMESPACE["max"] = max


@dataclass(frozen=True)
class SpaceDependent:
    """Position-dependent rate ``beta(x, type)`` with a declared upper bound.

    Either pass ``expr``, a Python expression in ``x`` and ``i`` using the
    functions in ``math`` (this form serializes), or ``fn`` directly. The
    function is compiled with numba for the simulators, so it must be
    numba-compatible.
    """

    beta_max: float
    expr: str | None = None
    fn: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if not (self.beta_max >= 0 and math.isfinite(self.beta_max)):
            raise ModelError("beta_max must be finite and nonnegative")
        if self.fn is None:
            if self.expr is None:
                raise ModelError("SpaceDependent needs expr or fn")
            ns = dict(_EXPR_NAMESPACE, __builtins__={})
            object.__setattr__(self, "fn", eval("lambda x, i: " + self.expr, ns))

    def __call__(self, x: float, i: int = 0) -> float:
        return float(self.fn(x, i))

    def __reduce__(self):
        if self.expr is None:
            return (SpaceDependent, (self.beta_max, None, self.fn))
        return (SpaceDependent, (self.beta_max, self.expr))

    def to_dict(self) -> dict:
        if self.expr is None:
            raise ModelError("SpaceDependent rates built from a bare function do not serialize")
        return {"kind": "space", "beta_max": self.beta_max, "expr": self.expr}


BranchingRate = Union[Constant, PerStateRate, SpaceDependent]


def rate_table(rate: BranchingRate, n_types: int) -> np.ndarray:
    """Per-type rates; for SpaceDependent rates this is the bound beta_max."""
    if isinstance(rate, Constant):
        return np.full(n_types, rate.beta)
    if isinstance(rate, PerStateRate):
        return rate.table.copy()
    return np.full(n_types, rate.beta_max)


# ---------------------------------------------------------------------------
# Model


@dataclass(frozen=True)
class ModelSpec:
    """The (Y, beta, psi) triple plus a name."""

    motion: MotionModel
    rate: BranchingRate
    offspring: OffspringLaw
    name: str = "model"

    def __post_init__(self):
        n = self.motion.n_types
        if isinstance(self.rate, PerStateRate) and self.rate.table.size != n:
            raise ModelError(f"rate table has {self.rate.table.size} entries for {n} types")
        if isinstance(self.offspring, PerState) and len(self.offspring.laws) != n:
            raise ModelError(f"offspring table has {len(self.offspring.laws)} laws for {n} types")

    @property
    def n_types(self) -> int:
        return self.motion.n_types

    @property
    def space_dependent(self) -> bool:
        return isinstance(self.rate, SpaceDependent)

    def beta_by_type(self) -> np.ndarray:
        if self.space_dependent:
            raise ModelError("rate is space dependent; no per-type table")
        return rate_table(self.rate, self.n_types)

    def beta_bound(self) -> np.ndarray:
        return rate_table(self.rate, self.n_types)

    def mean_by_type(self) -> np.ndarray:
        return np.array([offspring_mean(self.offspring, i) for i in range(self.n_types)])

    def law(self, i: int = 0) -> BaseLaw:
        return law_at(self.offspring, i)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "motion": self.motion.to_dict(),
            "rate": self.rate.to_dict(),
            "offspring": self.offspring.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            motion=motion_from_dict(d["motion"]),
            rate=rate_from_dict(d["rate"]),
            offspring=law_from_dict(d["offspring"]),
            name=d.get("name", "model"),
        )


def motion_from_dict(d: dict) -> MotionModel:
    kind = d.get("kind")
    if kind == "brownian":
        return BrownianMotion(float(d.get("diffusion", 1.0)))
    if kind == "chain":
        return FiniteChain(np.array(d["generator"], dtype=float))
    if kind == "typed_brownian":
        return TypedBrownian(np.array(d["type_generator"], dtype=float),
                             np.array(d["diffusion_by_type"], dtype=float),
                             float(d.get("theta", 1.0)))
    raise ModelError(f"unknown motion kind {kind!r}")


def rate_from_dict(d: dict) -> BranchingRate:
    kind = d.get("kind")
    if kind == "constant":
        return Constant(float(d["beta"]))
    if kind == "per_state":
        return PerStateRate(np.array(d["table"], dtype=float))
    if kind == "space":
        return SpaceDependent(float(d["beta_max"]), expr=d["expr"])
    raise ModelError(f"unknown rate kind {kind!r}")


def law_from_dict(d: dict) -> OffspringLaw:
    kind = d.get("kind")
    if kind == "explicit":
        probs = d["probs"]
        if isinstance(probs, dict):
            return Explicit.from_dict(probs)
        return Explicit(np.array(probs, dtype=float))
    if kind == "geometric":
        return Geometric(float(d["success"]))
    if kind == "power_law":
        return PowerLaw(float(d["exponent"]), float(d.get("log_power", 0.0)), int(d.get("kmax", DEFAULT_KMAX)))
    if kind == "per_state":
        return PerState(tuple(law_from_dict(x) for x in d["laws"]))
    raise ModelError(f"unknown offspring kind {kind!r}")
