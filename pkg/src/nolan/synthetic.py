"""Deterministic toy vision-language models and the POPE-style suite generator.

A Scene lists which objects are actually present; a PriorModel (add-k
smoothed n-gram over a corpus) supplies the language-prior stream. The
multimodal stream is the prior plus an additive visual boost on present
objects, with a truth-aligned boost on the yes/no answer tokens at question
contexts. This is the minimal mechanism that makes the prior hallucinate and
the visual evidence correct it.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import LogitVector, Vocabulary
from .engine import (
    MULTIMODAL,
    TEXT_ONLY,
    LogitSource,
    SourceDescriptor,
    SourceError,
)

__all__ = [
    "BOS_TOKEN",
    "EOS_TOKEN",
    "YES_TOKEN",
    "NO_TOKEN",
    "QUERY_TOKEN",
    "build_vocabulary",
    "Scene",
    "PriorModel",
    "compile_prior",
    "CorpusStats",
    "corpus_stats",
    "build_sources",
    "PopeItem",
    "generate_pope_suite",
    "read_scenes",
    "write_scenes",
    "read_corpus",
    "write_corpus",
    "read_suite",
    "write_suite",
]

BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
YES_TOKEN = "yes"
NO_TOKEN = "no"
QUERY_TOKEN = "is_there"

_SPECIALS = (BOS_TOKEN, EOS_TOKEN, YES_TOKEN, NO_TOKEN, QUERY_TOKEN)

# finite stand-in for "never emitted" (BOS as a next token); exp() underflows
# to exactly 0, so both streams share the zero and KL stays finite
NEVER_LOGIT = -1.0e4


def build_vocabulary(objects: Sequence[str]) -> Vocabulary:
    """Specials first, then object tokens in the given order."""
    seen = set(_SPECIALS)
    for obj in objects:
        if obj in seen:
            raise ValueError(f"object token {obj!r} collides")
        seen.add(obj)
    strings = (*_SPECIALS, *objects)
    return Vocabulary(size=len(strings), bos=0, eos=1, token_strings=strings)


@dataclass(frozen=True)
class Scene:
    """Ground truth: which objects the image actually contains."""

    scene_id: str
    present_objects: frozenset[str]
    visual_boost: float = 4.0
    distortion_level: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "present_objects", frozenset(self.present_objects))
        if self.visual_boost <= 0:
            raise ValueError("visual_boost must be positive")
        if not 0.0 <= self.distortion_level <= 1.0:
            raise ValueError("distortion_level must lie in [0, 1]")

    @property
    def effective_boost(self) -> float:
        return self.visual_boost * (1.0 - self.distortion_level)


@dataclass(frozen=True)
class PriorModel:
    """Add-k smoothed unigram or bigram next-token model."""

    kind: str  # "unigram" | "bigram"
    log_probs: np.ndarray  # [V, V] for bigram (row = context token), [1, V] for unigram
    smoothing: float

    def __post_init__(self):
        if self.kind not in ("unigram", "bigram"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        arr = np.asarray(self.log_probs, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("prior logits must be finite")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "log_probs", arr)

    @property
    def vocab_size(self) -> int:
        return self.log_probs.shape[1]

    def logits_for(self, context: Sequence[int]) -> np.ndarray:
        if self.kind == "unigram":
            return self.log_probs[0]
        return self.log_probs[context[-1]]


def compile_prior(
    corpus: Iterable[Sequence[str]],
    vocab: Vocabulary,
    kind: str = "bigram",
    smoothing: float = 0.5,
) -> PriorModel:
    """Count documents (BOS-prefixed, EOS-terminated) into smoothed rows.

    Smoothing normalizes over emittable tokens (everything but BOS); the BOS
    column gets the NEVER_LOGIT floor.
    """
    if smoothing <= 0:
        raise ValueError("smoothing constant must be positive")
    if kind not in ("unigram", "bigram"):
        raise ValueError(f"unknown prior kind {kind!r}")
    docs = list(corpus)
    if not docs:
        raise ValueError("empty corpus")
    V = vocab.size
    emittable = np.ones(V, dtype=bool)
    emittable[vocab.bos] = False
    n_emit = int(emittable.sum())

    if kind == "unigram":
        counts = np.zeros((1, V))
        for doc in docs:
            for tok in doc:
                counts[0, vocab.index(tok)] += 1
            counts[0, vocab.eos] += 1
        rows = 1
    else:
        counts = np.zeros((V, V))
        for doc in docs:
            ids = [vocab.bos] + [vocab.index(tok) for tok in doc] + [vocab.eos]
            for a, b in zip(ids, ids[1:]):
                counts[a, b] += 1
        rows = V

    log_probs = np.full((rows, V), NEVER_LOGIT)
    for r in range(rows):
        total = counts[r, emittable].sum()
        log_probs[r, emittable] = np.log(counts[r, emittable] + smoothing) - np.log(
            total + smoothing * n_emit
        )
    return PriorModel(kind=kind, log_probs=log_probs, smoothing=smoothing)


@dataclass(frozen=True)
class CorpusStats:
    """Object frequency and document-level co-occurrence counts."""

    frequency: dict
    cooccurrence: dict  # (a, b) sorted pair -> count

    def cooc(self, a: str, b: str) -> int:
        return self.cooccurrence.get((min(a, b), max(a, b)), 0)


def corpus_stats(corpus: Iterable[Sequence[str]], objects: Sequence[str]) -> CorpusStats:
    objset = set(objects)
    freq: Counter = Counter()
    cooc: Counter = Counter()
    for doc in corpus:
        present = [t for t in doc if t in objset]
        freq.update(present)
        uniq = sorted(set(present))
        for i, a in enumerate(uniq):
            for b in uniq[i + 1 :]:
                cooc[(a, b)] += 1
    return CorpusStats(frequency=dict(freq), cooccurrence=dict(cooc))


class SyntheticSource(LogitSource):
    """Prior-driven text stream plus boost-driven multimodal stream."""

    def __init__(self, scene: Scene, prior: PriorModel, vocab: Vocabulary):
        if prior.vocab_size != vocab.size:
            raise ValueError("prior / vocabulary size mismatch")
        self._scene = scene
        self._prior = prior
        self._vocab = vocab
        self._query_id = vocab.index(QUERY_TOKEN)
        self._yes_id = vocab.index(YES_TOKEN)
        self._no_id = vocab.index(NO_TOKEN)
        self._present_ids = frozenset(
            vocab.index(obj) for obj in scene.present_objects
        )
        self._desc = SourceDescriptor(
            vocab_size=vocab.size,
            supports_visual=True,
            source_id=f"synthetic:{scene.scene_id}",
            deterministic=True,
            thread_safe=True,
        )

    @property
    def descriptor(self) -> SourceDescriptor:
        return self._desc

    @property
    def scene(self) -> Scene:
        return self._scene

    def boost_vector(self, context: Sequence[int]) -> np.ndarray:
        eff = self._scene.effective_boost
        boost = np.zeros(self._vocab.size)
        for tid in self._present_ids:
            boost[tid] = eff
        if len(context) >= 2 and context[-2] == self._query_id:
            queried = context[-1]
            if queried in self._present_ids:
                boost[self._yes_id] += eff
            elif self._is_object(queried):
                boost[self._no_id] += eff
        return boost

    def _is_object(self, token_id: int) -> bool:
        return token_id >= len(_SPECIALS)

    def logits(self, modality, context, visual_ref=None):
        if not context:
            raise SourceError("empty context")
        l_u = self._prior.logits_for(context)
        if modality == TEXT_ONLY:
            return LogitVector(l_u)
        if modality != MULTIMODAL:
            raise SourceError(f"unknown modality {modality!r}")
        return LogitVector(l_u + self.boost_vector(context))


def build_sources(scene: Scene, prior: PriorModel, vocab: Vocabulary) -> SyntheticSource:
    """Deterministic thread-safe source for one scene; validates object tokens."""
    for obj in scene.present_objects:
        try:
            vocab.index(obj)
        except KeyError:
            raise ValueError(f"scene object {obj!r} not in vocabulary") from None
    return SyntheticSource(scene, prior, vocab)


@dataclass(frozen=True)
class PopeItem:
    item_id: str
    scene_id: str
    queried_object: str
    label: str  # "yes" | "no"
    sampling_setting: str  # "random" | "popular" | "adversarial"

    def __post_init__(self):
        if self.label not in ("yes", "no"):
            raise ValueError("label must be yes or no")
        if self.sampling_setting not in ("random", "popular", "adversarial"):
            raise ValueError(f"unknown setting {self.sampling_setting!r}")


def _rank_negatives(
    setting: str,
    absent: list[str],
    present: frozenset[str],
    stats: CorpusStats,
    rng: np.random.Generator,
) -> list[str]:
    if setting == "random":
        order = list(absent)
        rng.shuffle(order)
        return order
    if setting == "popular":
        return sorted(absent, key=lambda o: (-stats.frequency.get(o, 0), o))
    # adversarial: strongest co-occurrence with any present object first
    return sorted(
        absent,
        key=lambda o: (-max((stats.cooc(o, p) for p in present), default=0), o),
    )


def generate_pope_suite(
    scenes: Sequence[Scene],
    setting: str,
    n_items: int,
    seed: int,
    stats: CorpusStats,
    all_objects: Sequence[str] | None = None,
) -> list[PopeItem]:
    """Balanced yes/no presence questions, one (yes, no) pair per scene pass.

    Negatives are chosen by setting: uniform (random), most frequent first
    (popular), or most co-occurring with present objects first (adversarial).
    Deterministic given seed.
    """
    if setting not in ("random", "popular", "adversarial"):
        raise ValueError(f"unknown setting {setting!r}")
    if n_items < 2:
        raise ValueError("n_items must be at least 2")
    if all_objects is None:
        pool = sorted({o for s in scenes for o in s.present_objects} | set(stats.frequency))
    else:
        pool = list(all_objects)
    if len(set(pool)) < 2:
        raise ValueError("need at least 2 distinct objects")

    rng = np.random.default_rng(seed)
    items: list[PopeItem] = []
    pair_idx = 0
    while len(items) + 2 <= n_items:
        progressed = False
        for scene in scenes:
            if len(items) + 2 > n_items:
                break
            present = sorted(scene.present_objects)
            absent = [o for o in pool if o not in scene.present_objects]
            if not present or not absent:
                continue
            progressed = True
            yes_obj = present[int(rng.integers(len(present)))]
            ranked = _rank_negatives(
                setting, absent, scene.present_objects, stats, rng
            )
            no_obj = ranked[pair_idx // len(scenes) % len(ranked)]
            items.append(
                PopeItem(
                    item_id=f"item-{len(items):04d}",
                    scene_id=scene.scene_id,
                    queried_object=yes_obj,
                    label="yes",
                    sampling_setting=setting,
                )
            )
            items.append(
                PopeItem(
                    item_id=f"item-{len(items):04d}",
                    scene_id=scene.scene_id,
                    queried_object=no_obj,
                    label="no",
                    sampling_setting=setting,
                )
            )
            pair_idx += 1
        if not progressed:
            raise ValueError(
                "setting infeasible: no scene offers both a present and an absent object"
            )
    return items


def prompt_for(item: PopeItem, vocab: Vocabulary) -> tuple[int, int]:
    """Token encoding of "is OBJECT present"."""
    return (vocab.index(QUERY_TOKEN), vocab.index(item.queried_object))


# --- file formats ----------------------------------------------------------


def write_scenes(scenes: Sequence[Scene], fh) -> None:
    for s in scenes:
        fh.write(
            json.dumps(
                {
                    "scene_id": s.scene_id,
                    "objects": sorted(s.present_objects),
                    "visual_boost": s.visual_boost,
                    "distortion_level": s.distortion_level,
                },
                sort_keys=True,
            )
            + "\n"
        )


def read_scenes(fh) -> list[Scene]:
    scenes = []
    for line in fh:
        if not line.strip():
            continue
        rec = json.loads(line)
        scenes.append(
            Scene(
                scene_id=rec["scene_id"],
                present_objects=frozenset(rec["objects"]),
                visual_boost=float(rec.get("visual_boost", 4.0)),
                distortion_level=float(rec.get("distortion_level", 0.0)),
            )
        )
    return scenes


def write_corpus(corpus: Sequence[Sequence[str]], fh) -> None:
    for doc in corpus:
        fh.write(" ".join(doc) + "\n")


def read_corpus(fh) -> list[list[str]]:
    return [line.split() for line in fh if line.strip()]


def write_suite(items: Sequence[PopeItem], fh) -> None:
    for it in items:
        fh.write(
            json.dumps(
                {
                    "item_id": it.item_id,
                    "scene_id": it.scene_id,
                    "queried_object": it.queried_object,
                    "label": it.label,
                    "sampling_setting": it.sampling_setting,
                },
                sort_keys=True,
            )
            + "\n"
        )


def read_suite(fh) -> list[PopeItem]:
    items = []
    for line in fh:
        if not line.strip():
            continue
        rec = json.loads(line)
        items.append(
            PopeItem(
                item_id=rec["item_id"],
                scene_id=rec["scene_id"],
                queried_object=rec["queried_object"],
                label=rec["label"],
                sampling_setting=rec["sampling_setting"],
            )
        )
    return items
