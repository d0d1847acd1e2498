"""Numerically stable primitives over logit vectors and probability distributions.

Everything here is a pure function of its arguments; all logarithms are natural
(results in nats).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LogitVector",
    "ProbDist",
    "Vocabulary",
    "softmax",
    "log_softmax",
    "kl_divergence",
    "symmetric_kl",
    "js_divergence",
    "entropy",
]

# max-abs tolerance below which two distributions count as equal
DIST_EQUAL_TOL = 1e-12


def _as_finite_1d(values, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{what} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{what} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite entries")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


class LogitVector:
    """Dense real-valued scores over the vocabulary at one decode step."""

    __slots__ = ("values",)

    def __init__(self, values):
        self.values = _as_finite_1d(values, "logits")

    @property
    def vocab_size(self) -> int:
        return self.values.size

    def __len__(self) -> int:
        return self.values.size

    def __repr__(self) -> str:
        return f"LogitVector(V={self.vocab_size})"

    def __eq__(self, other) -> bool:
        return isinstance(other, LogitVector) and np.array_equal(self.values, other.values)


class ProbDist:
    """Normalized distribution over the vocabulary."""

    __slots__ = ("probs",)

    def __init__(self, probs):
        arr = np.asarray(probs, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("probabilities must be a non-empty 1-D array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("probabilities contain non-finite entries")
        if np.any(arr < 0):
            raise ValueError("probabilities must be non-negative")
        total = float(arr.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total}, expected 1 within 1e-9")
        arr = arr.copy()
        arr.flags.writeable = False
        self.probs = arr

    @property
    def vocab_size(self) -> int:
        return self.probs.size

    def __len__(self) -> int:
        return self.probs.size

    def __repr__(self) -> str:
        return f"ProbDist(V={self.vocab_size})"


@dataclass(frozen=True)
class Vocabulary:
    """Token id space with BOS/EOS conventions and optional display strings."""

    size: int
    bos: int = 0
    eos: int = 1
    token_strings: tuple[str, ...] | None = None
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.size < 2:
            raise ValueError("vocabulary needs at least 2 tokens")
        if self.bos == self.eos:
            raise ValueError("bos and eos must differ")
        for tok in (self.bos, self.eos):
            if not 0 <= tok < self.size:
                raise ValueError(f"special token id {tok} outside [0, {self.size})")
        if self.token_strings is not None:
            if len(self.token_strings) != self.size:
                raise ValueError("token_strings length must equal vocabulary size")
            object.__setattr__(
                self, "_index", {s: i for i, s in enumerate(self.token_strings)}
            )

    def index(self, token: str) -> int:
        """Id of a display string; requires token_strings."""
        if self._index is None:
            raise ValueError("vocabulary has no token strings")
        try:
            return self._index[token]
        except KeyError:
            raise KeyError(f"unknown token {token!r}") from None

    def string(self, token_id: int) -> str:
        if self.token_strings is None:
            raise ValueError("vocabulary has no token strings")
        return self.token_strings[token_id]


def _check_same_size(p: ProbDist, q: ProbDist) -> None:
    if p.vocab_size != q.vocab_size:
        raise ValueError(
            f"dimension mismatch: {p.vocab_size} vs {q.vocab_size}"
        )


def log_softmax(l: LogitVector) -> np.ndarray:
    """Log of softmax(l), computed without intermediate overflow."""
    x = l.values
    shifted = x - x.max()
    return shifted - np.log(np.exp(shifted).sum())


def softmax(l: LogitVector) -> ProbDist:
    """Max-subtracted softmax of a logit vector."""
    x = l.values
    e = np.exp(x - x.max())
    return ProbDist(e / e.sum())


def kl_divergence(p: ProbDist, q: ProbDist) -> float:
    """D_KL(p || q) in nats; terms with p_i = 0 contribute 0.

    Returns +inf when some p_i > 0 has q_i = 0 (caller decides handling).
    """
    _check_same_size(p, q)
    pp, qq = p.probs, q.probs
    support = pp > 0
    if np.any(qq[support] == 0):
        return float("inf")
    ps = pp[support]
    val = float(np.sum(ps * (np.log(ps) - np.log(qq[support]))))
    # kill -1e-17 noise from cancellation; genuine values are >= 0 (Gibbs)
    return max(val, 0.0)


def symmetric_kl(p: ProbDist, q: ProbDist) -> float:
    """(D_KL(p||q) + D_KL(q||p)) / 2."""
    return (kl_divergence(p, q) + kl_divergence(q, p)) / 2.0


def js_divergence(p: ProbDist, q: ProbDist) -> float:
    """Jensen-Shannon divergence in nats; lies in [0, ln 2]."""
    _check_same_size(p, q)
    m = ProbDist((p.probs + q.probs) / 2.0)
    return 0.5 * kl_divergence(p, m) + 0.5 * kl_divergence(q, m)


def entropy(p: ProbDist) -> float:
    """Shannon entropy in nats, with 0 * ln 0 := 0."""
    pp = p.probs[p.probs > 0]
    return max(float(-np.sum(pp * np.log(pp))), 0.0)
