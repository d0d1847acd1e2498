"""Dual-stream autoregressive decode loop.

Each step queries the multimodal and (depending on mode) text-only logit
streams, modulates, samples one token, and appends a trace record. Sampling
draws from a counter-based RNG keyed on (seed, step), so adding diagnostics
never perturbs the sampled sequence.
"""

from __future__ import annotations

import abc
import json
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .core import (
    LogitVector,
    ProbDist,
    Vocabulary,
    entropy,
    js_divergence,
    kl_divergence,
    softmax,
)
from .modulation import (
    AlphaPolicy,
    ModulationRecord,
    PolicyKind,
    combine_logits,
    compute_alpha,
)

__all__ = [
    "MULTIMODAL",
    "TEXT_ONLY",
    "SourceDescriptor",
    "LogitSource",
    "SourceError",
    "DecodeMode",
    "SamplerKind",
    "SamplerConfig",
    "DecodeRequest",
    "DecodeStepRecord",
    "FinishReason",
    "DecodeResult",
    "sample",
    "decode",
    "generic_contrast_decode",
    "step_counts",
]

MULTIMODAL = "multimodal"
TEXT_ONLY = "text_only"


@dataclass(frozen=True)
class SourceDescriptor:
    vocab_size: int
    supports_visual: bool
    source_id: str
    deterministic: bool = True
    thread_safe: bool = False


class SourceError(Exception):
    """Raised by a logit source when a query cannot be answered."""


class LogitSource(abc.ABC):
    """Provider of next-token logits for a (modality, context) query."""

    @property
    @abc.abstractmethod
    def descriptor(self) -> SourceDescriptor:
        ...

    @abc.abstractmethod
    def logits(
        self,
        modality: str,
        context: Sequence[int],
        visual_ref: str | None = None,
    ) -> LogitVector:
        ...


class DecodeMode(str, Enum):
    REGULAR = "regular"
    TEXT_ONLY = "text_only"
    NOLAN = "nolan"
    GENERIC_CONTRAST = "generic_contrast"


class SamplerKind(str, Enum):
    GREEDY = "greedy"
    TEMPERATURE = "temperature"
    TOP_K = "top_k"
    TOP_P = "top_p"


@dataclass(frozen=True)
class SamplerConfig:
    kind: SamplerKind = SamplerKind.GREEDY
    temperature: float = 1.0
    k: int = 1
    p: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0 or not math.isfinite(self.temperature):
            raise ValueError("temperature must be positive and finite")
        if self.kind is SamplerKind.TOP_K and self.k < 1:
            raise ValueError("top-k needs k >= 1")
        if self.kind is SamplerKind.TOP_P and not 0.0 < self.p <= 1.0:
            raise ValueError("top-p needs p in (0, 1]")

    def to_config(self) -> dict:
        return {
            "kind": self.kind.value,
            "temperature": self.temperature,
            "k": self.k,
            "p": self.p,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "SamplerConfig":
        return cls(
            kind=SamplerKind(cfg.get("kind", "greedy")),
            temperature=float(cfg.get("temperature", 1.0)),
            k=int(cfg.get("k", 1)),
            p=float(cfg.get("p", 1.0)),
        )


@dataclass(frozen=True)
class DecodeRequest:
    prompt_tokens: tuple[int, ...]
    mode: DecodeMode = DecodeMode.NOLAN
    policy: AlphaPolicy = field(default_factory=lambda: AlphaPolicy.constant(1.0))
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    visual_ref: str | None = None
    max_new_tokens: int = 512
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "prompt_tokens", tuple(self.prompt_tokens))
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")

    def to_config(self) -> dict:
        return {
            "prompt_tokens": list(self.prompt_tokens),
            "mode": self.mode.value,
            "policy": self.policy.to_config(),
            "sampler": self.sampler.to_config(),
            "visual_ref": self.visual_ref,
            "max_new_tokens": self.max_new_tokens,
            "seed": self.seed,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "DecodeRequest":
        return cls(
            prompt_tokens=tuple(cfg.get("prompt_tokens", ())),
            mode=DecodeMode(cfg.get("mode", "nolan")),
            policy=AlphaPolicy.from_config(
                cfg.get("policy", {"policy": "constant", "alpha": 1.0})
            ),
            sampler=SamplerConfig.from_config(cfg.get("sampler", {})),
            visual_ref=cfg.get("visual_ref"),
            max_new_tokens=int(cfg.get("max_new_tokens", 512)),
            seed=int(cfg.get("seed", 0)),
        )


_TRACE_FIELDS = (
    "position",
    "token",
    "alpha_used",
    "gamma",
    "kl_m_u",
    "kl_u_m",
    "js",
    "entropy_final",
    "entropy_m",
    "entropy_u",
    "wall_nanos",
)


@dataclass(frozen=True)
class DecodeStepRecord:
    position: int
    token: int
    alpha_used: float
    gamma: float
    kl_m_u: float
    kl_u_m: float
    js: float
    entropy_final: float
    entropy_m: float
    entropy_u: float
    wall_nanos: int

    def to_record(self) -> dict:
        out = {}
        for name in _TRACE_FIELDS:
            v = getattr(self, name)
            if isinstance(v, float) and math.isnan(v):
                v = None  # JSON has no NaN; null marks single-stream fields
            out[name] = v
        return out

    @classmethod
    def from_record(cls, rec: dict) -> "DecodeStepRecord":
        kwargs = {}
        for name in _TRACE_FIELDS:
            v = rec[name]
            if v is None:
                v = float("nan")
            kwargs[name] = v
        return cls(**kwargs)


class FinishReason(str, Enum):
    EOS = "eos"
    MAX_TOKENS = "max_tokens"
    SOURCE_ERROR = "source_error"


@dataclass(frozen=True)
class DecodeResult:
    tokens: tuple[int, ...]
    trace: tuple[DecodeStepRecord, ...]
    finish_reason: FinishReason
    mode: DecodeMode

    def write_trace(self, fh) -> None:
        for rec in self.trace:
            fh.write(json.dumps(rec.to_record(), sort_keys=True) + "\n")


def read_trace(fh) -> list[DecodeStepRecord]:
    return [DecodeStepRecord.from_record(json.loads(line)) for line in fh if line.strip()]


def _step_uniform(seed: int, step: int) -> float:
    """One uniform draw from a Philox stream keyed on seed, counter on step."""
    gen = np.random.Generator(np.random.Philox(key=seed, counter=step))
    return float(gen.random())


def _descending_order(probs: np.ndarray) -> np.ndarray:
    # stable sort on -probs: ties resolve toward the lowest token id
    return np.argsort(-probs, kind="stable")


def sample(dist: ProbDist, cfg: SamplerConfig, u: float) -> int:
    """Pick one token id; u is the single uniform draw in [0, 1)."""
    probs = dist.probs
    if cfg.kind is SamplerKind.GREEDY:
        return int(np.argmax(probs))  # argmax breaks ties toward lowest id
    if cfg.kind is SamplerKind.TEMPERATURE:
        logp = np.where(probs > 0, np.log(np.maximum(probs, 1e-300)), -np.inf)
        scaled = logp / cfg.temperature
        scaled -= scaled.max()
        weights = np.exp(scaled)
        candidates = np.arange(probs.size)
    elif cfg.kind is SamplerKind.TOP_K:
        if cfg.k > probs.size:
            raise ValueError("top-k exceeds vocabulary size")
        order = _descending_order(probs)
        candidates = order[: cfg.k]
        weights = probs[candidates]
    else:  # TOP_P
        order = _descending_order(probs)
        cum = np.cumsum(probs[order])
        cutoff = int(np.searchsorted(cum, cfg.p, side="left")) + 1
        candidates = order[:cutoff]
        weights = probs[candidates]
    total = weights.sum()
    cum = np.cumsum(weights)
    idx = int(np.searchsorted(cum, u * total, side="right"))
    idx = min(idx, candidates.size - 1)
    return int(candidates[idx])


def step_counts(result: DecodeResult) -> dict:
    """Forward-query accounting per the dual-stream contract."""
    n = len(result.tokens)
    if result.mode in (DecodeMode.NOLAN, DecodeMode.GENERIC_CONTRAST):
        return {"multimodal_queries": n, "text_queries": n}
    if result.mode is DecodeMode.REGULAR:
        return {"multimodal_queries": n, "text_queries": 0}
    return {"multimodal_queries": 0, "text_queries": n}


class _TextView(LogitSource):
    """Presents a source's text-only stream as its primary stream."""

    def __init__(self, inner: LogitSource):
        self._inner = inner
        d = inner.descriptor
        self._desc = replace(d, supports_visual=False, source_id=d.source_id + ":text")

    @property
    def descriptor(self) -> SourceDescriptor:
        return self._desc

    def logits(self, modality, context, visual_ref=None):
        return self._inner.logits(TEXT_ONLY, context)


def text_only_view(src: LogitSource) -> LogitSource:
    return _TextView(src)


def _contrast_query(src: LogitSource, context, visual_ref):
    if src.descriptor.supports_visual:
        return src.logits(MULTIMODAL, context, visual_ref)
    return src.logits(TEXT_ONLY, context)


def _decode_loop(
    req: DecodeRequest,
    vocab: Vocabulary,
    primary: LogitSource,
    contrast: LogitSource | None,
) -> DecodeResult:
    if primary.descriptor.vocab_size != vocab.size:
        raise ValueError(
            f"source vocab {primary.descriptor.vocab_size} != engine vocab {vocab.size}"
        )
    if contrast is not None and contrast.descriptor.vocab_size != vocab.size:
        raise ValueError("contrast source vocab mismatch")
    dual = req.mode in (DecodeMode.NOLAN, DecodeMode.GENERIC_CONTRAST)
    if dual and contrast is None:
        raise ValueError(f"{req.mode.value} mode needs two logit streams")
    if req.mode in (DecodeMode.REGULAR, DecodeMode.NOLAN):
        if primary.descriptor.supports_visual and req.visual_ref is None:
            raise ValueError("visual_ref required for a visual-capable source")

    context = [vocab.bos, *req.prompt_tokens]
    tokens: list[int] = []
    trace: list[DecodeStepRecord] = []
    finish = FinishReason.MAX_TOKENS
    nan = float("nan")

    for position in range(req.max_new_tokens):
        t0 = time.perf_counter_ns()
        try:
            if req.mode is DecodeMode.TEXT_ONLY:
                l_final = primary.logits(TEXT_ONLY, context)
                dist = softmax(l_final)
                rec = DecodeStepRecord(
                    position=position,
                    token=-1,
                    alpha_used=nan,
                    gamma=nan,
                    kl_m_u=nan,
                    kl_u_m=nan,
                    js=nan,
                    entropy_final=entropy(dist),
                    entropy_m=nan,
                    entropy_u=entropy(dist),
                    wall_nanos=0,
                )
            elif req.mode is DecodeMode.REGULAR:
                l_m = primary.logits(MULTIMODAL, context, req.visual_ref)
                dist = softmax(l_m)
                rec = DecodeStepRecord(
                    position=position,
                    token=-1,
                    alpha_used=nan,
                    gamma=nan,
                    kl_m_u=nan,
                    kl_u_m=nan,
                    js=nan,
                    entropy_final=entropy(dist),
                    entropy_m=entropy(dist),
                    entropy_u=nan,
                    wall_nanos=0,
                )
            else:
                l_m = primary.logits(MULTIMODAL, context, req.visual_ref)
                if req.mode is DecodeMode.NOLAN:
                    l_u = primary.logits(TEXT_ONLY, context)
                else:
                    l_u = _contrast_query(contrast, context, req.visual_ref)
                mod = compute_alpha(req.policy, l_m, l_u)
                dist = softmax(combine_logits(l_m, l_u, mod.alpha_used))
                p_m, p_u = softmax(l_m), softmax(l_u)
                rec = DecodeStepRecord(
                    position=position,
                    token=-1,
                    alpha_used=mod.alpha_used,
                    gamma=mod.gamma,
                    kl_m_u=kl_divergence(p_m, p_u),
                    kl_u_m=kl_divergence(p_u, p_m),
                    js=js_divergence(p_m, p_u),
                    entropy_final=entropy(dist),
                    entropy_m=entropy(p_m),
                    entropy_u=entropy(p_u),
                    wall_nanos=0,
                )
        except SourceError:
            finish = FinishReason.SOURCE_ERROR
            break

        if req.sampler.kind is SamplerKind.GREEDY:
            token = sample(dist, req.sampler, 0.0)
        else:
            token = sample(dist, req.sampler, _step_uniform(req.seed, position))
        wall = time.perf_counter_ns() - t0
        tokens.append(token)
        trace.append(replace(rec, token=token, wall_nanos=wall))
        context.append(token)
        if token == vocab.eos:
            finish = FinishReason.EOS
            break

    return DecodeResult(
        tokens=tuple(tokens),
        trace=tuple(trace),
        finish_reason=finish,
        mode=req.mode,
    )


def decode(req: DecodeRequest, src: LogitSource, vocab: Vocabulary) -> DecodeResult:
    """Run one decode session against a single dual-stream source."""
    contrast = src if req.mode is DecodeMode.NOLAN else None
    return _decode_loop(req, vocab, src, contrast)


def generic_contrast_decode(
    req: DecodeRequest,
    primary_src: LogitSource,
    contrast_src: LogitSource,
    vocab: Vocabulary,
) -> DecodeResult:
    """Same loop as decode, with the prior stream replaced by contrast_src."""
    req = replace(req, mode=DecodeMode.GENERIC_CONTRAST)
    return _decode_loop(req, vocab, primary_src, contrast_src)
