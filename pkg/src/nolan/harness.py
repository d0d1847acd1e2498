"""Evaluation harness: presence-question metrics, divergence/entropy/position
analyses, parameter sweeps, and timing, with stable report emitters."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__ as ENGINE_VERSION
from .engine import (
    DecodeMode,
    DecodeRequest,
    DecodeResult,
    DecodeStepRecord,
    SamplerConfig,
    decode,
    step_counts,
)
from .modulation import AlphaPolicy, PolicyKind
from .synthetic import PopeItem, prompt_for

__all__ = [
    "StrategyConfig",
    "RunCounts",
    "PopeMetrics",
    "ItemOutcome",
    "PopeEvaluation",
    "evaluate_pope",
    "subset_divergence_report",
    "entropy_report",
    "kl_by_position",
    "mutual_information_estimate",
    "sweep",
    "timing_report",
    "ReportHeader",
    "render_report",
    "parse_report",
    "config_hash",
]

YES = "yes"
NO = "no"


@dataclass(frozen=True)
class StrategyConfig:
    """Named decoding strategy: mode + policy + sampler."""

    name: str
    mode: DecodeMode = DecodeMode.NOLAN
    policy: AlphaPolicy = field(default_factory=lambda: AlphaPolicy.constant(1.0))
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    max_new_tokens: int = 1

    def canonical(self) -> "StrategyConfig":
        """alpha = 0 modulation is definitionally regular decoding.

        Used when hashing configs for report headers, so equivalent runs
        produce identical report files; decoding itself honors the literal
        mode (the dual-stream trace is still wanted for diagnostics)."""
        if (
            self.mode is DecodeMode.NOLAN
            and self.policy.kind is PolicyKind.CONSTANT
            and self.policy.alpha == 0.0
        ):
            return replace(self, mode=DecodeMode.REGULAR)
        return self

    def to_config(self) -> dict:
        return {
            "name": self.name,
            "mode": self.mode.value,
            "policy": self.policy.to_config(),
            "sampler": self.sampler.to_config(),
            "max_new_tokens": self.max_new_tokens,
        }


@dataclass(frozen=True)
class RunCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n if self.n else 0.0

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        d = self.precision + self.recall
        return 2 * self.precision * self.recall / d if d > 0 else 0.0


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values)
    return float(arr.mean()), float(arr.std())


@dataclass(frozen=True)
class PopeMetrics:
    """Mean and std over runs, fractions in [0, 1] (reports scale by 100)."""

    n_items: int
    runs: int
    counts: tuple[RunCounts, ...]
    accuracy: tuple[float, float]
    precision: tuple[float, float]
    recall: tuple[float, float]
    f1: tuple[float, float]

    @classmethod
    def from_counts(cls, counts: list[RunCounts]) -> "PopeMetrics":
        return cls(
            n_items=counts[0].n,
            runs=len(counts),
            counts=tuple(counts),
            accuracy=_mean_std([c.accuracy for c in counts]),
            precision=_mean_std([c.precision for c in counts]),
            recall=_mean_std([c.recall for c in counts]),
            f1=_mean_std([c.f1 for c in counts]),
        )

    def row(self) -> dict:
        out = {"n_items": self.n_items, "runs": self.runs}
        for name in ("accuracy", "precision", "recall", "f1"):
            mean, std = getattr(self, name)
            out[f"{name}_mean"] = round(100 * mean, 4)
            out[f"{name}_std"] = round(100 * std, 4)
        return out


@dataclass(frozen=True)
class ItemOutcome:
    item: PopeItem
    run: int
    predicted: str | None  # yes / no / None (off-vocabulary answer)
    correct: bool
    answer_record: DecodeStepRecord
    result: DecodeResult


@dataclass(frozen=True)
class PopeEvaluation:
    strategy: StrategyConfig
    metrics: PopeMetrics
    outcomes: tuple[ItemOutcome, ...]  # all runs, ordered by (run, item_id)


def _classify(token: int, yes_id: int, no_id: int) -> str | None:
    if token == yes_id:
        return YES
    if token == no_id:
        return NO
    return None


def _item_seed(run_seed: int, index: int) -> int:
    return (run_seed * 1_000_003 + index) % 2**64


def evaluate_pope(
    suite: list[PopeItem],
    strategy: StrategyConfig,
    testbed,
    runs: int = 5,
    base_seed: int = 0,
    jobs: int = 1,
) -> PopeEvaluation:
    """Decode each item's answer, score yes as the positive class.

    testbed supplies .vocab and .source_for(scene_id); runs use consecutive
    seeds. Off-vocabulary answers count against the labeled class, never
    dropped.
    """
    if not suite:
        raise ValueError("empty suite")
    if runs < 1:
        raise ValueError("runs must be >= 1")
    vocab = testbed.vocab
    yes_id = vocab.index(YES)
    no_id = vocab.index(NO)

    ordered = sorted(suite, key=lambda it: it.item_id)

    def run_item(run: int, index: int, item: PopeItem) -> ItemOutcome:
        req = DecodeRequest(
            prompt_tokens=prompt_for(item, vocab),
            mode=strategy.mode,
            policy=strategy.policy,
            sampler=strategy.sampler,
            visual_ref=item.scene_id,
            max_new_tokens=strategy.max_new_tokens,
            seed=_item_seed(base_seed + run, index),
        )
        result = decode(req, testbed.source_for(item.scene_id), vocab)
        if not result.tokens:
            predicted = None
        else:
            predicted = _classify(result.tokens[0], yes_id, no_id)
        return ItemOutcome(
            item=item,
            run=run,
            predicted=predicted,
            correct=predicted == item.label,
            answer_record=result.trace[0] if result.trace else None,
            result=result,
        )

    outcomes: list[ItemOutcome] = []
    counts: list[RunCounts] = []
    for run in range(runs):
        tasks = list(enumerate(ordered))
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                run_outcomes = list(
                    pool.map(lambda t: run_item(run, t[0], t[1]), tasks)
                )
        else:
            run_outcomes = [run_item(run, i, it) for i, it in tasks]
        tp = fp = tn = fn = 0
        for out in run_outcomes:
            if out.item.label == YES:
                if out.predicted == YES:
                    tp += 1
                else:
                    fn += 1
            else:
                if out.predicted == NO:
                    tn += 1
                else:
                    fp += 1
        counts.append(RunCounts(tp=tp, fp=fp, tn=tn, fn=fn))
        outcomes.extend(run_outcomes)

    return PopeEvaluation(
        strategy=strategy,
        metrics=PopeMetrics.from_counts(counts),
        outcomes=tuple(outcomes),
    )


EMPTY_SUBSET = "empty"


def subset_divergence_report(outcomes: list[ItemOutcome]) -> dict:
    """Mean stream divergences at the answer position, split by correctness.

    Requires dual-stream traces (run the regular strategy as alpha = 0
    modulation to get them)."""
    groups = {"hallucination": [], "no_hallucination": []}
    for out in outcomes:
        rec = out.answer_record
        if rec is None or math.isnan(rec.kl_m_u):
            raise ValueError("subset divergences need dual-stream traces")
        groups["no_hallucination" if out.correct else "hallucination"].append(rec)
    report = {}
    for name, recs in groups.items():
        if not recs:
            report[name] = EMPTY_SUBSET
            continue
        report[name] = {
            "kl_m_u": float(np.mean([r.kl_m_u for r in recs])),
            "kl_u_m": float(np.mean([r.kl_u_m for r in recs])),
            "js": float(np.mean([r.js for r in recs])),
            "n": len(recs),
        }
    return report


def entropy_report(traces_by_strategy: dict) -> dict:
    """Mean output entropy over every recorded step, per strategy."""
    out = {}
    for name, traces in traces_by_strategy.items():
        values = [rec.entropy_final for trace in traces for rec in trace]
        if not values:
            raise ValueError(f"strategy {name!r} has no trace steps")
        out[name] = float(np.mean(values))
    return out


def kl_by_position(traces: list) -> dict:
    """Mean gamma per token position over all traces reaching that position."""
    buckets: dict[int, list[float]] = {}
    for trace in traces:
        for rec in trace:
            if math.isnan(rec.gamma):
                continue
            buckets.setdefault(rec.position, []).append(rec.gamma)
    return {pos: float(np.mean(vals)) for pos, vals in sorted(buckets.items())}


def mutual_information_estimate(traces: list) -> float:
    """Empirical visual-information estimate: mean KL(p_m || p_u) per step."""
    values = []
    for trace in traces:
        for rec in trace:
            if math.isnan(rec.kl_m_u):
                raise ValueError(
                    "mutual information needs dual-stream traces (both streams recorded)"
                )
            values.append(rec.kl_m_u)
    if not values:
        raise ValueError("no trace steps")
    return float(np.mean(values))


def sweep(
    param: str,
    values: list[float],
    suite: list[PopeItem],
    testbed,
    fixed: StrategyConfig,
    runs: int = 5,
    base_seed: int = 0,
) -> list[dict]:
    """One metrics row per value plus the regular-decoding baseline row."""
    if param not in ("alpha", "beta"):
        raise ValueError("param must be alpha or beta")
    if not values:
        raise ValueError("values must be non-empty")
    if any(v < 0 for v in values):
        raise ValueError(f"negative {param} value")

    rows = []
    baseline = replace(
        fixed, name="regular", mode=DecodeMode.REGULAR, policy=AlphaPolicy.constant(0.0)
    )
    ev = evaluate_pope(suite, baseline, testbed, runs=runs, base_seed=base_seed)
    rows.append({"param": param, "value": 0.0, "strategy": "regular", **ev.metrics.row()})
    for v in values:
        if param == "alpha":
            strat = replace(
                fixed,
                name=f"alpha={v:g}",
                mode=DecodeMode.NOLAN,
                policy=AlphaPolicy.constant(float(v)),
            )
        else:
            strat = replace(
                fixed,
                name=f"beta={v:g}",
                mode=DecodeMode.NOLAN,
                policy=AlphaPolicy(fixed.policy.kind, beta=float(v))
                if fixed.policy.kind is not PolicyKind.CONSTANT
                else AlphaPolicy.kl_tanh(float(v)),
            )
        ev = evaluate_pope(suite, strat, testbed, runs=runs, base_seed=base_seed)
        rows.append(
            {"param": param, "value": float(v), "strategy": strat.name, **ev.metrics.row()}
        )
    return rows


def timing_report(results_by_strategy: dict) -> dict:
    """Seconds per token and stream queries per token, per strategy."""
    out = {}
    for name, results in results_by_strategy.items():
        tokens = sum(len(r.tokens) for r in results)
        if tokens == 0:
            out[name] = EMPTY_SUBSET
            continue
        nanos = sum(rec.wall_nanos for r in results for rec in r.trace)
        queries = sum(
            step_counts(r)["multimodal_queries"] + step_counts(r)["text_queries"]
            for r in results
        )
        out[name] = {
            "seconds_per_token": nanos / 1e9 / tokens,
            "queries_per_token": queries / tokens,
            "tokens": tokens,
        }
    return out


# --- report emitters -------------------------------------------------------


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class ReportHeader:
    engine_version: str
    config_hash: str
    seeds: tuple[int, ...]

    @classmethod
    def build(cls, cfg: dict, seeds) -> "ReportHeader":
        return cls(
            engine_version=ENGINE_VERSION,
            config_hash=config_hash(cfg),
            seeds=tuple(seeds),
        )


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_report(rows: list[dict], header: ReportHeader, fmt: str = "records") -> str:
    """Serialize rows under a header block; emit-parse-emit is byte stable."""
    if fmt == "records":
        lines = [
            json.dumps(
                {
                    "header": {
                        "engine_version": header.engine_version,
                        "config_hash": header.config_hash,
                        "seeds": list(header.seeds),
                    }
                },
                sort_keys=True,
            )
        ]
        lines += [json.dumps(row, sort_keys=True) for row in rows]
        return "\n".join(lines) + "\n"

    head_lines = [
        f"# engine_version={header.engine_version}",
        f"# config_hash={header.config_hash}",
        "# seeds=" + ",".join(str(s) for s in header.seeds),
    ]
    columns = list(rows[0].keys()) if rows else []
    str_rows = [[_cell(row[c]) for c in columns] for row in rows]

    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for r in str_rows:
            writer.writerow(r)
        return "\n".join(head_lines) + "\n" + buf.getvalue()

    if fmt == "table":
        widths = [
            max(len(c), *(len(r[i]) for r in str_rows)) if str_rows else len(c)
            for i, c in enumerate(columns)
        ]
        def fmt_line(cells):
            return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
        body = [fmt_line(columns)] + [fmt_line(r) for r in str_rows]
        return "\n".join(head_lines + body) + "\n"

    raise ValueError(f"unknown format {fmt!r}")


def parse_report(text: str, fmt: str = "records") -> tuple[ReportHeader, list[dict]]:
    if fmt not in ("records", "csv", "table"):
        raise ValueError(f"unknown format {fmt!r}")
    lines = [ln for ln in text.split("\n") if ln != ""]
    if fmt == "records":
        head = json.loads(lines[0])["header"]
        header = ReportHeader(
            engine_version=head["engine_version"],
            config_hash=head["config_hash"],
            seeds=tuple(head["seeds"]),
        )
        return header, [json.loads(ln) for ln in lines[1:]]

    meta = {}
    body = []
    for ln in lines:
        if ln.startswith("# "):
            key, _, val = ln[2:].partition("=")
            meta[key] = val
        else:
            body.append(ln)
    header = ReportHeader(
        engine_version=meta["engine_version"],
        config_hash=meta["config_hash"],
        seeds=tuple(int(s) for s in meta["seeds"].split(",") if s),
    )
    if fmt == "csv":
        reader = csv.reader(io.StringIO("\n".join(body)))
        table = list(reader)
    elif fmt == "table":
        import re

        table = [re.split(r"  +", ln.strip()) for ln in body]
    else:
        raise ValueError(f"unknown format {fmt!r}")
    columns = table[0]
    return header, [dict(zip(columns, row)) for row in table[1:]]
