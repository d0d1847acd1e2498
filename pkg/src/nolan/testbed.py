"""Calibrated synthetic testbed.

Builds a corpus whose question-answer counts place the language prior's
yes/no log-odds in chosen bands, so that on the adversarial suite regular
decoding errs on a known fraction of items, constant-alpha modulation
corrects the milder conflicts, and the KL-adaptive policy also corrects the
stronger ones. Band edges derive from the answer-position arithmetic: with
boost b, regular decoding errs once the prior's wrong-answer log-odds exceed
b, a constant alpha=1 run errs past 2b, and the adaptive policy holds up to
(1 + 2*beta) * b when the streams nearly agree.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import Vocabulary
from .synthetic import (
    CorpusStats,
    PriorModel,
    Scene,
    SyntheticSource,
    build_sources,
    build_vocabulary,
    compile_prior,
    corpus_stats,
    generate_pope_suite,
    PopeItem,
)

__all__ = ["SyntheticTestbed", "calibrated_testbed"]

# answer-prior count pairs (count_yes, count_no) per object role; gaps are
# ln((c_yes + k) / (c_no + k)) with k = 0.5
_MILD_BAIT_YES = (60, 100, 150, 300, 500, 700, 900)  # gaps ~4.8 .. 7.5
_STRONG_BAIT_YES = (2500, 4000, 5500, 7500, 9000)  # gaps ~8.5 .. 9.8
_EASY_NEG = (1, 15)  # prior correctly favors "no"
_CONFLICT_YES = (1, 27)  # present object whose prior leans "no"
_ALIGNED_YES = (20, 2)  # present object whose prior leans "yes"

_COOC_REPEAT = 5  # pair-document count tying each scene's bait to its object
_DEFAULT_BOOST = 4.0


@dataclass(frozen=True)
class SyntheticTestbed:
    """Vocabulary, prior, scenes, and corpus statistics for one experiment."""

    vocab: Vocabulary
    prior: PriorModel
    scenes: tuple[Scene, ...]
    corpus: tuple[tuple[str, ...], ...]
    stats: CorpusStats
    objects: tuple[str, ...]
    metadata: dict

    def scene(self, scene_id: str) -> Scene:
        for s in self.scenes:
            if s.scene_id == scene_id:
                return s
        raise KeyError(scene_id)

    def source_for(self, scene_id: str) -> SyntheticSource:
        return build_sources(self.scene(scene_id), self.prior, self.vocab)

    def adversarial_suite(self, n_items: int = 40, seed: int = 0) -> list[PopeItem]:
        return generate_pope_suite(
            self.scenes, "adversarial", n_items, seed, self.stats, self.objects
        )


def _qa_docs(obj: str, c_yes: int, c_no: int) -> list[tuple[str, ...]]:
    docs = [("is_there", obj, "yes")] * c_yes
    docs += [("is_there", obj, "no")] * c_no
    return docs


def calibrated_testbed(visual_boost: float = _DEFAULT_BOOST) -> SyntheticTestbed:
    """20 single-object scenes with designed adversarial baits.

    Regular decoding errs on 12 of the 40 adversarial items (70% accuracy),
    constant alpha=1 recovers the 7 mild baits, and the KL-adaptive policy
    recovers the 5 strong ones as well. Boost and band choices recorded in
    metadata.
    """
    present = [f"obj{i:02d}" for i in range(1, 21)]
    mild = [f"bait_mild{i}" for i in range(len(_MILD_BAIT_YES))]
    strong = [f"bait_strong{i}" for i in range(len(_STRONG_BAIT_YES))]
    easy = [f"bait_easy{i}" for i in range(8)]
    objects = tuple(present + mild + strong + easy)
    vocab = build_vocabulary(objects)

    corpus: list[tuple[str, ...]] = []
    # answer priors for present objects: first ten lean "no" (visual evidence
    # must flip the answer), last ten lean "yes"
    for obj in present[:10]:
        corpus += _qa_docs(obj, *_CONFLICT_YES)
    for obj in present[10:]:
        corpus += _qa_docs(obj, *_ALIGNED_YES)
    for obj, c_yes in zip(mild, _MILD_BAIT_YES):
        corpus += _qa_docs(obj, c_yes, 0)
    for obj, c_yes in zip(strong, _STRONG_BAIT_YES):
        corpus += _qa_docs(obj, c_yes, 0)
    for obj in easy:
        corpus += _qa_docs(obj, *_EASY_NEG)

    # co-occurrence pairs: each scene's designated bait is the unique
    # strongest co-occurring absent object
    baits = mild + strong + easy
    scenes = []
    for i, obj in enumerate(present):
        bait = baits[i]
        corpus += [(obj, bait)] * _COOC_REPEAT
        scenes.append(
            Scene(
                scene_id=f"scene-{i:02d}",
                present_objects=frozenset({obj}),
                visual_boost=visual_boost,
            )
        )

    prior = compile_prior(corpus, vocab, kind="bigram", smoothing=0.5)
    stats = corpus_stats(corpus, objects)
    metadata = {
        "visual_boost": visual_boost,
        "n_scenes": len(scenes),
        "mild_bait_yes_counts": list(_MILD_BAIT_YES),
        "strong_bait_yes_counts": list(_STRONG_BAIT_YES),
        "target_regular_accuracy": 0.70,
    }
    return SyntheticTestbed(
        vocab=vocab,
        prior=prior,
        scenes=tuple(scenes),
        corpus=tuple(corpus),
        stats=stats,
        objects=objects,
        metadata=metadata,
    )
