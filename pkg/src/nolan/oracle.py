"""Brute-force per-step distribution oracle for small vocabularies.

Deliberately reimplements the whole step pipeline (prior lookup, visual
boost, gamma, alpha, combination, softmax) in plain Python with direct
summation, sharing no code with the modulation or engine modules. Used to
validate the engine; keep it that way.
"""

from __future__ import annotations

import math
from typing import Sequence

MAX_ORACLE_VOCAB = 1000


def _softmax(values: Sequence[float]) -> list[float]:
    m = max(values)
    exps = [math.exp(v - m) for v in values]
    total = 0.0
    for e in sorted(exps):  # small-to-large accumulation
        total += e
    return [e / total for e in exps]


def _kl(p: Sequence[float], q: Sequence[float]) -> float:
    acc = 0.0
    for pi, qi in zip(p, q):
        if pi > 0.0:
            if qi == 0.0:
                return math.inf
            acc += pi * (math.log(pi) - math.log(qi))
    return acc


def _scene_logits(scene, prior, vocab, context, modality: str) -> list[float]:
    """Recompute both streams' logits from the scene and prior tables."""
    row = prior.logits_for(context)
    l_u = [float(v) for v in row]
    if modality == "text_only":
        return l_u
    eff = scene.visual_boost * (1.0 - scene.distortion_level)
    present_ids = {vocab.index(obj) for obj in scene.present_objects}
    l_m = list(l_u)
    for tid in present_ids:
        l_m[tid] += eff
    # answer routing: context ends with (question marker, queried object)
    specials = {"<bos>", "<eos>", "yes", "no", "is_there"}
    if len(context) >= 2 and vocab.string(context[-2]) == "is_there":
        queried = vocab.string(context[-1])
        if queried in scene.present_objects:
            l_m[vocab.index("yes")] += eff
        elif queried not in specials:
            l_m[vocab.index("no")] += eff
    return l_m


def _alpha(policy, gamma: float) -> float:
    kind = policy.kind.value
    if kind == "constant":
        return policy.alpha
    if gamma == 0.0:
        return 2.0 * policy.beta
    if kind == "kl_tanh":
        return policy.beta * (math.tanh(1.0 / gamma) + 1.0)
    if kind == "kl_sigmoid":
        return 2.0 * policy.beta * (1.0 / (1.0 + math.exp(-1.0 / gamma)))
    raise ValueError(f"unknown policy kind {kind}")


def oracle_step_distribution(
    scene,
    prior,
    policy,
    mode: str,
    context: Sequence[int],
    vocab,
    contrast_scene=None,
) -> list[float]:
    """Exact per-step distribution the decode equations prescribe.

    mode is one of regular / text_only / nolan / generic_contrast; for
    generic_contrast the prior stream comes from contrast_scene's multimodal
    logits.
    """
    if vocab.size > MAX_ORACLE_VOCAB:
        raise ValueError(f"oracle limited to V <= {MAX_ORACLE_VOCAB}")
    context = list(context)
    if mode == "regular":
        return _softmax(_scene_logits(scene, prior, vocab, context, "multimodal"))
    if mode == "text_only":
        return _softmax(_scene_logits(scene, prior, vocab, context, "text_only"))
    l_m = _scene_logits(scene, prior, vocab, context, "multimodal")
    if mode == "nolan":
        l_u = _scene_logits(scene, prior, vocab, context, "text_only")
    elif mode == "generic_contrast":
        if contrast_scene is None:
            raise ValueError("generic_contrast needs a contrast scene")
        l_u = _scene_logits(contrast_scene, prior, vocab, context, "multimodal")
    else:
        raise ValueError(f"unknown mode {mode}")
    p_m = _softmax(l_m)
    p_u = _softmax(l_u)
    gamma = (_kl(p_m, p_u) + _kl(p_u, p_m)) / 2.0
    alpha = _alpha(policy, gamma)
    combined = [lm + alpha * (lm - lu) for lm, lu in zip(l_m, l_u)]
    return _softmax(combined)
