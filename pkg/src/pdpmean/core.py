"""Value types, the seeded randomness contract, noise samplers and clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import (
    EmptyInput,
    InvertedRange,
    LengthMismatch,
    NonPositiveBudget,
    NonPositiveScale,
    OutOfRange,
    PreconditionError,
)

Mode = Literal["live", "zero-noise"]
Model = Literal["bounded", "unbounded"]


@dataclass
class NoiseSource:
    """Explicit source of every random draw made by the library.

    The same ``(seed, stream_id, mode)`` triple always reproduces the same draw
    sequence. Streams with different ``stream_id`` are derived through
    :class:`numpy.random.SeedSequence` spawn keys and are independent.

    In ``"zero-noise"`` mode every Laplace draw is exactly 0, a keep draw with
    probability ``p`` succeeds iff ``p >= 1``, permutations are the identity and
    exponential-mechanism sampling picks the first highest-scoring candidate.
    An instance is owned by a single task; do not share it across threads.
    """

    seed: int
    stream_id: int = 0
    mode: Mode = "live"
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in ("live", "zero-noise"):
            raise PreconditionError(f"unknown noise mode {self.mode!r}")
        ss = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1),
                                    spawn_key=(int(self.stream_id),))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    @property
    def zero_noise(self) -> bool:
        return self.mode == "zero-noise"

    def spawn(self, stream_id: int) -> "NoiseSource":
        """A fresh stream sharing this source's seed and mode."""
        return NoiseSource(self.seed, stream_id, self.mode)

    # -- primitive draws -------------------------------------------------

    def laplace(self, scale: float, size: int | None = None):
        if not (scale > 0 and math.isfinite(scale)):
            raise NonPositiveScale(f"Laplace scale must be positive and finite, got {scale}",
                                   operation="sample_laplace")
        if self.zero_noise:
            return 0.0 if size is None else np.zeros(size)
        return self._gen.laplace(0.0, scale, size)

    def keep(self, p):
        """Bernoulli keep flag(s) for probability (array) ``p``."""
        arr = np.asarray(p, dtype=float)
        if np.any(~((arr >= 0) & (arr <= 1))):
            raise OutOfRange("keep probability must lie in [0, 1]", operation="sample_keep")
        if self.zero_noise:
            out = arr >= 1.0
        else:
            out = self._gen.random(arr.shape) < arr
        return bool(out) if arr.ndim == 0 else out

    def permutation(self, n: int) -> np.ndarray:
        if self.zero_noise:
            return np.arange(n)
        return self._gen.permutation(n)

    def gumbel_argmax(self, logits: np.ndarray) -> int:
        """Index drawn with probability proportional to ``exp(logits)``."""
        logits = np.asarray(logits, dtype=float)
        if self.zero_noise:
            return int(np.argmax(logits))
        return int(np.argmax(logits + self._gen.gumbel(size=logits.shape)))

    def uniform(self, size=None):
        return self._gen.random(size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        """Data-generation helper; not affected by zero-noise mode."""
        return self._gen.normal(loc, scale, size)

    def choice(self, values: Sequence, size: int, p=None) -> np.ndarray:
        """Data-generation helper; not affected by zero-noise mode."""
        return self._gen.choice(np.asarray(values), size=size, p=p)


@dataclass(frozen=True)
class Record:
    value: float
    budget: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise PreconditionError(f"record value must be finite, got {self.value}")
        if not self.budget > 0:
            raise NonPositiveBudget(f"record budget must be > 0, got {self.budget}")


class Dataset:
    """Immutable collection of (value, budget) records under a neighbor model.

    Stored column-wise as read-only numpy arrays. In the bounded model the
    budget vector is public metadata.
    """

    __slots__ = ("values", "budgets", "model")

    def __init__(self, values: Iterable[float], budgets: Iterable[float], model: Model = "bounded"):
        v = np.array(values, dtype=float).ravel()
        b = np.array(budgets, dtype=float).ravel()
        if v.shape != b.shape:
            raise LengthMismatch(f"{v.size} values but {b.size} budgets", operation="Dataset")
        if not np.all(np.isfinite(v)):
            raise PreconditionError("dataset values must be finite", operation="Dataset")
        if np.any(~(b > 0)):
            raise NonPositiveBudget("every budget must be > 0", operation="Dataset")
        if model not in ("bounded", "unbounded"):
            raise PreconditionError(f"unknown model {model!r}", operation="Dataset")
        v.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "budgets", b)
        object.__setattr__(self, "model", model)

    def __setattr__(self, name, value):
        raise AttributeError("Dataset is immutable")

    @classmethod
    def from_records(cls, records: Iterable[Record], model: Model = "bounded") -> "Dataset":
        records = list(records)
        return cls([r.value for r in records], [r.budget for r in records], model)

    @property
    def records(self) -> list[Record]:
        return [Record(float(x), float(e)) for x, e in zip(self.values, self.budgets)]

    def __len__(self) -> int:
        return self.values.size

    def __repr__(self) -> str:
        return f"Dataset(n={len(self)}, model={self.model!r})"

    def sorted_by_budget(self) -> tuple["Dataset", np.ndarray]:
        """Records reordered by ascending budget, plus the permutation used.

        ``sorted.values[j] == self.values[perm[j]]``; the sort is stable.
        """
        perm = np.argsort(self.budgets, kind="stable")
        return Dataset(self.values[perm], self.budgets[perm], self.model), perm


def sample_laplace(scale: float, rng: NoiseSource, size: int | None = None):
    """Draw from Laplace(0, ``scale``); exactly 0 in zero-noise mode."""
    return rng.laplace(scale, size)


def sample_keep(p, rng: NoiseSource):
    """True (kept) with probability ``p``, independently per call/element."""
    return rng.keep(p)


def clip(x, lo: float, hi: float):
    """``min(max(x, lo), hi)``, elementwise for arrays."""
    if lo > hi:
        raise InvertedRange(f"clip range [{lo}, {hi}] is inverted", operation="clip")
    if np.ndim(x) == 0:
        return float(min(max(x, lo), hi))
    return np.clip(np.asarray(x, dtype=float), lo, hi)


def as_nonempty_array(values, operation: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise EmptyInput("input is empty", operation=operation)
    return arr
