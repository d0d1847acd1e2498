"""Contrastive modulation of multimodal logits against the language prior.

The combined logits are l_m + alpha * (l_m - l_u). alpha is either a constant
or adapts to gamma, the symmetric KL divergence between the two streams'
distributions: small gamma means the prior dominates the output, so the
adaptive policies push alpha toward its upper bound 2*beta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import LogitVector, ProbDist, softmax, symmetric_kl

__all__ = [
    "PolicyKind",
    "AlphaPolicy",
    "ModulationRecord",
    "compute_gamma",
    "compute_alpha",
    "combine_logits",
    "nolan_distribution",
]


class PolicyKind(str, Enum):
    CONSTANT = "constant"
    KL_TANH = "kl_tanh"
    KL_SIGMOID = "kl_sigmoid"


@dataclass(frozen=True)
class AlphaPolicy:
    """Selects constant alpha or a KL-adaptive alpha with scale beta."""

    kind: PolicyKind
    alpha: float = 1.0
    beta: float = 0.8

    def __post_init__(self):
        if self.kind is PolicyKind.CONSTANT:
            if not math.isfinite(self.alpha) or self.alpha < 0:
                raise ValueError("constant policy needs alpha >= 0")
        else:
            if not math.isfinite(self.beta) or self.beta <= 0:
                raise ValueError("adaptive policy needs beta > 0")

    @classmethod
    def constant(cls, alpha: float = 1.0) -> "AlphaPolicy":
        return cls(PolicyKind.CONSTANT, alpha=alpha)

    @classmethod
    def kl_tanh(cls, beta: float = 0.8) -> "AlphaPolicy":
        return cls(PolicyKind.KL_TANH, beta=beta)

    @classmethod
    def kl_sigmoid(cls, beta: float = 0.8) -> "AlphaPolicy":
        return cls(PolicyKind.KL_SIGMOID, beta=beta)

    def to_config(self) -> dict:
        if self.kind is PolicyKind.CONSTANT:
            return {"policy": "constant", "alpha": self.alpha}
        return {"policy": self.kind.value, "beta": self.beta}

    @classmethod
    def from_config(cls, cfg: dict) -> "AlphaPolicy":
        kind = PolicyKind(cfg["policy"])
        if kind is PolicyKind.CONSTANT:
            return cls(kind, alpha=float(cfg.get("alpha", 1.0)))
        return cls(kind, beta=float(cfg.get("beta", 0.8)))


@dataclass(frozen=True)
class ModulationRecord:
    alpha_used: float
    gamma: float
    policy_kind: PolicyKind


def compute_gamma(l_m: LogitVector, l_u: LogitVector) -> float:
    """Symmetric KL between softmax(l_m) and softmax(l_u); >= 0."""
    if l_m.vocab_size != l_u.vocab_size:
        raise ValueError(
            f"dimension mismatch: {l_m.vocab_size} vs {l_u.vocab_size}"
        )
    return symmetric_kl(softmax(l_m), softmax(l_u))


def alpha_from_gamma(policy: AlphaPolicy, gamma: float) -> float:
    """Adaptive alpha as a function of gamma; gamma = 0 maps to the limit 2*beta."""
    if policy.kind is PolicyKind.CONSTANT:
        return policy.alpha
    if gamma == 0.0:
        return 2.0 * policy.beta
    if policy.kind is PolicyKind.KL_TANH:
        return policy.beta * (math.tanh(1.0 / gamma) + 1.0)
    # KL_SIGMOID: shares the tanh variant's limits (2*beta at gamma -> 0,
    # beta at gamma -> inf)
    return 2.0 * policy.beta / (1.0 + math.exp(-1.0 / gamma))


def compute_alpha(
    policy: AlphaPolicy, l_m: LogitVector, l_u: LogitVector
) -> ModulationRecord:
    """Resolve the modulation rate for one step; gamma is always recorded."""
    gamma = compute_gamma(l_m, l_u)
    return ModulationRecord(
        alpha_used=alpha_from_gamma(policy, gamma),
        gamma=gamma,
        policy_kind=policy.kind,
    )


def combine_logits(l_m: LogitVector, l_u: LogitVector, alpha: float) -> LogitVector:
    """l_m + alpha * (l_m - l_u), elementwise."""
    if l_m.vocab_size != l_u.vocab_size:
        raise ValueError(
            f"dimension mismatch: {l_m.vocab_size} vs {l_u.vocab_size}"
        )
    if not math.isfinite(alpha):
        raise ValueError("alpha must be finite")
    with np.errstate(over="ignore"):
        combined = (1.0 + alpha) * l_m.values - alpha * l_u.values
    return LogitVector(combined)  # rejects overflow to non-finite


def nolan_distribution(
    l_m: LogitVector, l_u: LogitVector, policy: AlphaPolicy
) -> tuple[ProbDist, ModulationRecord]:
    """Modulated output distribution plus the per-step record."""
    record = compute_alpha(policy, l_m, l_u)
    dist = softmax(combine_logits(l_m, l_u, record.alpha_used))
    return dist, record
