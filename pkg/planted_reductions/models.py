import itertools
import logging
import math
from enum import Enum
from fractions import Fraction
from typing import Annotated, Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    model_validator,
)

from planted_reductions.errors import ParameterError
from planted_reductions.rng import hash_signs
from planted_reductions.settings import settings

logger = logging.getLogger(__name__)

SIGN_ALPHABET = "sign"
TENSOR_COORD_LIMIT = 2**62


class Family(str, Enum):
    XOR = "xor"
    GAUSS = "gauss"
    LWE = "lwe"


class CountMode(str, Enum):
    FIXED = "fixed"
    POISSON = "poisson"


class IndexSpace(str, Enum):
    SET = "set"
    MULTISET = "multiset"
    TUPLE = "tuple"


class Sampling(str, Enum):
    WITH_REPL = "with_repl"
    WITHOUT_REPL = "without_repl"


class NoiseKind(str, Enum):
    UNIFORM = "uniform"
    DISCRETE_GAUSS = "discrete_gauss"
    BOUNDED = "bounded"


def parse_rational(value: Any) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ParameterError(f"Expected a rational, got {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        raise ParameterError(f"Real value {value!r} is not accepted here, pass an exact 'p/q' string")
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as e:
            raise ParameterError(f"Cannot parse rational {value!r}: {e}") from e
    raise ParameterError(f"Expected a rational, got {type(value).__name__}")


def format_rational(value: Fraction) -> str:
    return f"{value.numerator}/{value.denominator}"


Rational = Annotated[
    Fraction,
    BeforeValidator(parse_rational),
    PlainSerializer(format_rational, return_type=str, when_used="json"),
]


def is_prime(q: int) -> bool:
    if q < 2:
        return False
    if q % 2 == 0:
        return q == 2
    return all(q % d for d in range(3, math.isqrt(q) + 1, 2))


def index_space_size(space: IndexSpace, n: int, k: int) -> int:
    if space == IndexSpace.SET:
        return math.comb(n, k)
    if space == IndexSpace.TUPLE:
        return math.perm(n, k)
    return math.comb(n + k - 1, k)


def count_from_profile(k: int, n: int, epsilon: Fraction) -> int:
    exponent = Fraction(k) * (1 + epsilon) / 2
    if exponent.denominator == 1:
        return int(n ** exponent.numerator)
    return max(1, round(n ** float(exponent)))


def bias_from_profile(k: int, n: int, epsilon: Fraction, eta: Fraction) -> float:
    return float(n ** (-float(Fraction(k) * epsilon / 4 + eta / 2)))


class NoiseParams(BaseModel):  # type: ignore
    kind: NoiseKind = Field(description="Noise family")
    delta: Optional[float] = Field(default=None, description="Uniform noise: mass kept at zero")
    s: Optional[float] = Field(default=None, description="Discrete Gaussian width")
    pmf: Optional[Dict[int, float]] = Field(
        default=None, description="Bounded noise: probability of each offset in [-l, l]"
    )

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check(self) -> "NoiseParams":
        if self.kind == NoiseKind.UNIFORM:
            if self.delta is None or not 0 <= self.delta <= 1:
                raise ParameterError("Uniform noise needs delta in [0, 1]")
        elif self.kind == NoiseKind.DISCRETE_GAUSS:
            if self.s is None or self.s <= 0:
                raise ParameterError("Discrete Gaussian noise needs s > 0")
        else:
            if not self.pmf:
                raise ParameterError("Bounded noise needs a pmf")
            if any(p < 0 for p in self.pmf.values()) or abs(sum(self.pmf.values()) - 1) > 1e-9:
                raise ParameterError("Bounded noise pmf must be non-negative and sum to 1")
        return self


class ModelSpec(BaseModel):  # type: ignore
    family: Family = Field(description="Observation family")
    k: int = Field(description="Tensor order", ge=1)
    n: int = Field(description="Dimension", ge=1)
    epsilon: Rational = Field(description="Density parameter in [0, 1]")
    eta: Rational = Field(default=Fraction(0), description="SNR deficiency")
    count_mode: CountMode = CountMode.FIXED
    index_space: IndexSpace = IndexSpace.SET
    sampling: Sampling = Sampling.WITH_REPL
    q: Optional[int] = Field(default=None, description="Prime modulus, LWE only")
    noise: Optional[NoiseParams] = Field(default=None, description="Noise law, LWE only")
    m_value: Optional[int] = Field(default=None, description="Realized sample count override", ge=0)
    delta_value: Optional[float] = Field(default=None, description="Realized bias override")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="after")
    def _check(self) -> "ModelSpec":
        if not 0 <= self.epsilon <= 1:
            raise ParameterError(f"epsilon={self.epsilon} outside [0, 1]")
        if self.family == Family.LWE:
            if self.q is None or not is_prime(self.q):
                raise ParameterError(f"LWE needs a prime modulus, got q={self.q}")
            if self.q > settings.Q_CAP:
                raise ParameterError(f"q={self.q} exceeds the cap {settings.Q_CAP}")
            if self.noise is None:
                raise ParameterError("LWE needs a noise law")
        elif self.q is not None or self.noise is not None:
            raise ParameterError("Modulus and noise are only meaningful for LWE")
        if self.family == Family.XOR and self.delta > 1 + 1e-12:
            raise ParameterError(f"XOR bias {self.delta} exceeds 1")
        if self.sampling == Sampling.WITHOUT_REPL and self.m > self.space_size:
            raise ParameterError(
                f"Without replacement needs m <= |index space|, got m={self.m} > {self.space_size}"
            )
        return self

    @property
    def m(self) -> int:
        if self.m_value is not None:
            return self.m_value
        return count_from_profile(self.k, self.n, self.epsilon)

    @property
    def delta(self) -> float:
        if self.delta_value is not None:
            return self.delta_value
        return bias_from_profile(self.k, self.n, self.epsilon, self.eta)

    @property
    def space_size(self) -> int:
        return index_space_size(self.index_space, self.n, self.k)

    def derive(self, **changes: Any) -> "ModelSpec":
        """Return a validated copy with the given fields changed and overrides reset."""
        data = self.model_dump(exclude={"m_value", "delta_value"})
        data.update(changes)
        return ModelSpec(**data)


def params_from_profile(
    k: int,
    n: int,
    epsilon: Any,
    eta: Any,
    family: Family = Family.XOR,
) -> Tuple[int, float]:
    epsilon = parse_rational(epsilon)
    eta = parse_rational(eta)
    if k < 1 or n < 2:
        raise ParameterError(f"Need k >= 1 and n >= 2, got k={k}, n={n}")
    if not 0 <= epsilon <= 1:
        raise ParameterError(f"epsilon={epsilon} outside [0, 1]")
    m = count_from_profile(k, n, epsilon)
    delta = bias_from_profile(k, n, epsilon, eta)
    if family == Family.XOR and delta > 1 + 1e-12:
        raise ParameterError(f"XOR bias {delta} exceeds 1 (eta={eta} too negative)")
    return m, delta


def profile_from_params(k: int, n: int, m: int, delta: float) -> Tuple[float, float]:
    if k < 1 or n < 2:
        raise ParameterError(f"Need k >= 1 and n >= 2, got k={k}, n={n}")
    budget = n**k * max(1.0, math.log(n)) ** k
    if not 1 <= m <= budget:
        raise ParameterError(f"m={m} outside [1, {budget:.3g}]")
    if not 0 < delta <= 1:
        raise ParameterError(f"delta={delta} outside (0, 1]")
    log_n = math.log(n)
    log_m = math.log(m) / log_n
    epsilon = min(1.0, max(0.0, 2 * log_m / k - 1))
    eta = k / 2 - log_m - 2 * math.log(delta) / log_n
    return epsilon, eta


class Signal(BaseModel):  # type: ignore
    x: np.ndarray = Field(description="Hidden vector")
    q: Optional[int] = Field(default=None, description="Modulus for LWE signals")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="before")
    @classmethod
    def _coerce(cls, data: Any) -> Any:
        if isinstance(data, dict) and "x" in data:
            data = {**data, "x": np.array(data["x"], dtype=np.int64).reshape(-1)}
        return data

    @model_validator(mode="after")
    def _check(self) -> "Signal":
        if self.q is None:
            if not np.all(np.abs(self.x) == 1):
                raise ParameterError("Sign signals must have entries in {-1, +1}")
        elif np.any((self.x < 0) | (self.x >= self.q)):
            raise ParameterError(f"Signal entries must lie in [0, {self.q - 1}]")
        self.x.setflags(write=False)
        return self

    @property
    def n(self) -> int:
        return int(self.x.shape[0])


def sample_signal(n: int, alphabet: Union[str, int], rng: np.random.Generator) -> Signal:
    assert n >= 1, "Signal length must be positive"
    if alphabet == SIGN_ALPHABET:
        return Signal(x=1 - 2 * rng.integers(0, 2, size=n))
    q = int(alphabet)
    return Signal(x=rng.integers(0, q, size=n), q=q)


def entry_mean(signal: Union[Signal, np.ndarray], alpha: Sequence[int]) -> int:
    """Product x_alpha over 0-based coordinates, counted with multiplicity."""
    x = signal.x if isinstance(signal, Signal) else np.asarray(signal)
    return int(np.prod(x[np.asarray(alpha, dtype=np.int64)]))


def entry_means(x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    if idx.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return np.prod(x[idx], axis=1).astype(np.int64)


def multiset_weight(alpha: Sequence[int], n: int, k: int) -> Fraction:
    alpha = list(alpha)
    if len(alpha) != k or any(not 0 <= a < n for a in alpha) or alpha != sorted(alpha):
        raise ParameterError(f"{alpha} is not a sorted {k}-multiset of range({n})")
    multinomial = math.factorial(k)
    for _, group in itertools.groupby(alpha):
        multinomial //= math.factorial(len(list(group)))
    return Fraction(multinomial, n**k)


def enumerate_index_space(space: IndexSpace, n: int, k: int) -> np.ndarray:
    size = index_space_size(space, n, k)
    if size > settings.ENUMERATION_CAP:
        raise ParameterError(f"Index space of size {size} exceeds the enumeration cap")
    if space == IndexSpace.SET:
        terms = itertools.combinations(range(n), k)
    elif space == IndexSpace.TUPLE:
        terms = itertools.permutations(range(n), k)
    else:
        terms = itertools.combinations_with_replacement(range(n), k)
    return np.array(list(terms), dtype=np.int64).reshape(size, k)


def _distinct_rows(n: int, k: int, count: int, rng: np.random.Generator) -> np.ndarray:
    if k > n:
        raise ParameterError(f"No {k} distinct indices in range({n})")
    if n <= 4 * k:
        return np.argsort(rng.random((count, n)), axis=1)[:, :k].astype(np.int64)
    rows = rng.integers(0, n, size=(count, k))
    while True:
        bad = np.any(np.diff(np.sort(rows, axis=1), axis=1) == 0, axis=1) if k > 1 else np.zeros(count, bool)
        if not bad.any():
            return rows.astype(np.int64)
        rows[bad] = rng.integers(0, n, size=(int(bad.sum()), k))


def _uniform_multisets(n: int, k: int, count: int, rng: np.random.Generator) -> np.ndarray:
    # stars and bars: a sorted k-subset of range(n + k - 1) shifted down by position
    bars = np.sort(_distinct_rows(n + k - 1, k, count, rng), axis=1)
    return bars - np.arange(k)


def _draw_terms(
    space: IndexSpace,
    n: int,
    k: int,
    count: int,
    rng: np.random.Generator,
    uniform_multisets: bool = False,
) -> np.ndarray:
    if count == 0:
        return np.zeros((0, k), dtype=np.int64)
    if space == IndexSpace.SET:
        return np.sort(_distinct_rows(n, k, count, rng), axis=1)
    if space == IndexSpace.TUPLE:
        return _distinct_rows(n, k, count, rng)
    if uniform_multisets:
        return _uniform_multisets(n, k, count, rng)
    return np.sort(rng.integers(0, n, size=(count, k)), axis=1).astype(np.int64)


def sample_index_terms(
    space: IndexSpace,
    sampling: Sampling,
    n: int,
    k: int,
    count: int,
    rng: np.random.Generator,
) -> np.ndarray:
    if sampling == Sampling.WITH_REPL:
        return _draw_terms(space, n, k, count, rng)

    size = index_space_size(space, n, k)
    if count > size:
        raise ParameterError(f"Cannot draw {count} distinct terms from a space of size {size}")
    if 2 * count > size:
        terms = enumerate_index_space(space, n, k)
        return terms[rng.permutation(size)[:count]]

    seen: Dict[Tuple[int, ...], None] = {}
    while len(seen) < count:
        batch = _draw_terms(space, n, k, 2 * (count - len(seen)) + 16, rng, uniform_multisets=True)
        for row in map(tuple, batch.tolist()):
            if row not in seen:
                seen[row] = None
                if len(seen) == count:
                    break
    return np.array(list(seen), dtype=np.int64).reshape(count, k)


def draw_count(spec: ModelSpec, rng: np.random.Generator) -> int:
    if spec.count_mode == CountMode.POISSON:
        return int(rng.poisson(spec.m))
    return spec.m


def random_signs(size: int, rng: np.random.Generator, bias: float = 0.0) -> np.ndarray:
    """I.i.d. Rad(bias): +1 with probability (1 + bias) / 2."""
    return np.where(rng.random(size) < (1 + bias) / 2, 1, -1).astype(np.int64)


class Instance(BaseModel):  # type: ignore
    spec: ModelSpec
    idx: np.ndarray = Field(description="Index terms, one 0-based row per sample")
    vals: np.ndarray = Field(description="Observed values")
    coef: Optional[np.ndarray] = Field(default=None, description="LWE coefficients aligned with idx")
    ids: Optional[np.ndarray] = Field(default=None, description="Stable sample identifiers")
    parents: Optional[np.ndarray] = Field(
        default=None, description="Identifiers of the input samples combined into each sample"
    )

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="before")
    @classmethod
    def _coerce(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        spec = data["spec"]
        k = spec.k if isinstance(spec, ModelSpec) else int(spec["k"])
        data["idx"] = np.array(data["idx"], dtype=np.int64).reshape(-1, k)
        m = data["idx"].shape[0]
        dtype = np.float64 if _family_of(spec) == Family.GAUSS else np.int64
        data["vals"] = np.array(data["vals"], dtype=dtype).reshape(-1)
        if data.get("coef") is not None:
            data["coef"] = np.array(data["coef"], dtype=np.int64).reshape(-1, k)
        if data.get("ids") is None:
            data["ids"] = np.arange(m, dtype=np.int64)
        else:
            data["ids"] = np.array(data["ids"], dtype=np.int64).reshape(-1)
        if data.get("parents") is not None:
            parents = np.array(data["parents"], dtype=np.int64)
            data["parents"] = parents if parents.ndim == 2 else parents.reshape(m, -1 if m else 2)
        return data

    @model_validator(mode="after")
    def _check(self) -> "Instance":
        spec = self.spec
        m = self.idx.shape[0]
        if self.vals.shape[0] != m or self.ids.shape[0] != m:
            raise ParameterError("idx, vals and ids must have the same length")
        if m:
            _check_terms(self.idx, spec.index_space, spec.n)
            if spec.sampling == Sampling.WITHOUT_REPL and np.unique(self.idx, axis=0).shape[0] != m:
                raise ParameterError("Without-replacement instances must have distinct index terms")
        if spec.family == Family.XOR and m and not np.all(np.abs(self.vals) == 1):
            raise ParameterError("XOR values must be signs")
        if spec.family == Family.LWE:
            assert spec.q is not None
            if self.coef is None or self.coef.shape != self.idx.shape:
                raise ParameterError("LWE instances need coefficients aligned with idx")
            if m and (np.any(self.coef < 1) or np.any(self.coef >= spec.q)):
                raise ParameterError(f"LWE coefficients must lie in [1, {spec.q - 1}]")
            if m and (np.any(self.vals < 0) or np.any(self.vals >= spec.q)):
                raise ParameterError(f"LWE values must lie in [0, {spec.q - 1}]")
        for array in (self.idx, self.vals, self.coef, self.ids, self.parents):
            if array is not None:
                array.setflags(write=False)
        return self

    @property
    def m(self) -> int:
        return int(self.idx.shape[0])

    def select(self, positions: np.ndarray, spec: Optional[ModelSpec] = None) -> "Instance":
        positions = np.asarray(positions)
        return Instance(
            spec=spec or self.spec,
            idx=self.idx[positions],
            vals=self.vals[positions],
            coef=None if self.coef is None else self.coef[positions],
            ids=self.ids[positions],
            parents=None if self.parents is None else self.parents[positions],
        )

    def with_spec(self, spec: ModelSpec) -> "Instance":
        return self.select(np.arange(self.m), spec=spec)


def _family_of(spec: Any) -> Family:
    if isinstance(spec, ModelSpec):
        return spec.family
    return Family(spec["family"])


def _check_terms(idx: np.ndarray, space: IndexSpace, n: int) -> None:
    if idx.min() < 0 or idx.max() >= n:
        raise ParameterError(f"Indices must lie in range({n})")
    if idx.shape[1] < 2:
        return
    steps = np.diff(idx, axis=1)
    if space == IndexSpace.SET and np.any(steps <= 0):
        raise ParameterError("Set index terms must be strictly increasing")
    if space == IndexSpace.MULTISET and np.any(steps < 0):
        raise ParameterError("Multiset index terms must be nondecreasing")
    if space == IndexSpace.TUPLE and np.any(np.diff(np.sort(idx, axis=1), axis=1) == 0):
        raise ParameterError("Tuple index terms must have distinct entries")


def sample_planted(spec: ModelSpec, signal: Signal, rng: np.random.Generator) -> Instance:
    if spec.family == Family.LWE:
        raise ParameterError("Use lwe.sample_lwe for LWE specs")
    if signal.n != spec.n:
        raise ParameterError(f"Signal length {signal.n} does not match n={spec.n}")
    count = draw_count(spec, rng)
    idx = sample_index_terms(spec.index_space, spec.sampling, spec.n, spec.k, count, rng)
    means = entry_means(signal.x, idx)
    if spec.family == Family.XOR:
        vals = means * random_signs(count, rng, spec.delta)
    else:
        vals = spec.delta * means + rng.standard_normal(count)
    logger.debug(f"Sampled planted {spec.family.value} instance with {count} samples")
    return Instance(spec=spec, idx=idx, vals=vals)


def sample_null(spec: ModelSpec, rng: np.random.Generator) -> Instance:
    if spec.family == Family.LWE:
        raise ParameterError("Use lwe.sample_lwe for LWE specs")
    count = draw_count(spec, rng)
    idx = sample_index_terms(spec.index_space, spec.sampling, spec.n, spec.k, count, rng)
    if spec.family == Family.XOR:
        vals = random_signs(count, rng)
    else:
        vals = spec.delta * random_signs(count, rng) + rng.standard_normal(count)
    return Instance(spec=spec, idx=idx, vals=vals)


class TransformKind(str, Enum):
    IDENTITY = "identity"
    RESTRICT = "restrict"
    TENSOR_POWER = "tensor_power"
    COMPOSE = "compose"


class SignalTransform(BaseModel):  # type: ignore
    kind: TransformKind
    n_in: int = Field(ge=1)
    n_out: int = Field(ge=1)
    a: int = Field(default=1, description="Tensor power", ge=1)
    mask_key: Optional[int] = Field(default=None, description="Key of the sign mask y")
    steps: List["SignalTransform"] = Field(default_factory=list)

    @classmethod
    def identity(cls, n: int) -> "SignalTransform":
        return cls(kind=TransformKind.IDENTITY, n_in=n, n_out=n)

    @classmethod
    def restrict(cls, n: int, n_out: int) -> "SignalTransform":
        assert 1 <= n_out <= n, "Restriction must not grow the dimension"
        return cls(kind=TransformKind.RESTRICT, n_in=n, n_out=n_out)

    @classmethod
    def tensor_power(cls, n: int, a: int, mask_key: int) -> "SignalTransform":
        assert n**a < TENSOR_COORD_LIMIT, "Tensor-power coordinates overflow 62 bits"
        return cls(kind=TransformKind.TENSOR_POWER, n_in=n, n_out=n**a, a=a, mask_key=mask_key)

    @classmethod
    def compose(cls, steps: Sequence["SignalTransform"]) -> "SignalTransform":
        flat: List[SignalTransform] = []
        for step in steps:
            flat.extend(step.steps if step.kind == TransformKind.COMPOSE else [step])
        for left, right in zip(flat, flat[1:]):
            assert left.n_out == right.n_in, f"Cannot chain n_out={left.n_out} into n_in={right.n_in}"
        flat = [s for s in flat if s.kind != TransformKind.IDENTITY]
        if not flat:
            return cls.identity(steps[0].n_in)
        if len(flat) == 1:
            return flat[0]
        return cls(kind=TransformKind.COMPOSE, n_in=flat[0].n_in, n_out=flat[-1].n_out, steps=flat)

    def coordinate_values(self, x: np.ndarray, coords: np.ndarray) -> np.ndarray:
        """Values of the transformed signal at the given output coordinates."""
        return self._values(lambda c: x[c], np.asarray(coords, dtype=np.int64))

    def _values(self, lookup: Callable[[np.ndarray], np.ndarray], coords: np.ndarray) -> np.ndarray:
        if self.kind in (TransformKind.IDENTITY, TransformKind.RESTRICT):
            return lookup(coords)
        if self.kind == TransformKind.TENSOR_POWER:
            assert self.mask_key is not None
            values = hash_signs(self.mask_key, coords)
            rest = coords.copy()
            for _ in range(self.a):
                values = values * lookup(rest % self.n_in)
                rest //= self.n_in
            return values
        inner = lookup
        for step in self.steps:
            inner = _chain(step, inner)
        return inner(coords)

    def evaluate(self, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
        """Entry means x'_alpha of the transformed signal for each row of output terms."""
        if idx.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        unique, inverse = np.unique(idx, return_inverse=True)
        values = self.coordinate_values(x, unique)
        return np.prod(values[inverse.reshape(idx.shape)], axis=1)

    def apply(self, signal: Signal) -> Signal:
        if self.n_out > settings.GRAM_CELL_CAP:
            raise ParameterError(f"Refusing to materialize a signal of length {self.n_out}")
        if signal.q is not None and self.kind not in (TransformKind.IDENTITY, TransformKind.RESTRICT):
            raise ParameterError("Only restrictions apply to LWE signals")
        return Signal(x=self.coordinate_values(signal.x, np.arange(self.n_out)), q=signal.q)


def _chain(
    step: SignalTransform, inner: Callable[[np.ndarray], np.ndarray]
) -> Callable[[np.ndarray], np.ndarray]:
    return lambda coords: step._values(inner, coords)


SignalTransform.model_rebuild()
