"""Command-line entry point: decode, eval-pope, sweep, analyze, gen-suite,
serve-check. Flag precedence: CLI flag > config file > built-in default."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .bridge import connect_stdio, connect_tcp, serve_check
from .engine import (
    DecodeMode,
    DecodeRequest,
    SamplerConfig,
    SamplerKind,
    SourceError,
    decode,
    step_counts,
)
from .harness import (
    ReportHeader,
    StrategyConfig,
    config_hash,
    entropy_report,
    evaluate_pope,
    kl_by_position,
    mutual_information_estimate,
    render_report,
    subset_divergence_report,
    sweep,
    timing_report,
)
from .modulation import AlphaPolicy, PolicyKind
from .synthetic import (
    QUERY_TOKEN,
    build_sources,
    build_vocabulary,
    compile_prior,
    corpus_stats,
    generate_pope_suite,
    read_corpus,
    read_scenes,
    read_suite,
    write_suite,
)

log = logging.getLogger("nolan")

_SPECIAL_STRINGS = {"<bos>", "<eos>", "yes", "no", QUERY_TOKEN}

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class ConfigError(Exception):
    pass


def _diagnostic(kind: str, message: str) -> None:
    print(json.dumps({"diagnostic": kind, "message": message}), file=sys.stderr)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    return cfg


def _setting(args, cfg: dict, name: str, default):
    """CLI flag > config file > default."""
    val = getattr(args, name.replace("-", "_"), None)
    if val is not None:
        return val
    if name in cfg:
        return cfg[name]
    return default


def _policy_from(args, cfg) -> AlphaPolicy:
    kind = PolicyKind(_setting(args, cfg, "policy", "constant"))
    alpha = float(_setting(args, cfg, "alpha", 1.0))
    beta = float(_setting(args, cfg, "beta", 0.8))
    if kind is PolicyKind.CONSTANT:
        return AlphaPolicy.constant(alpha)
    return AlphaPolicy(kind, beta=beta)


def _sampler_from(args, cfg) -> SamplerConfig:
    return SamplerConfig(
        kind=SamplerKind(_setting(args, cfg, "sampler", "greedy")),
        temperature=float(_setting(args, cfg, "temperature", 1.0)),
        k=int(_setting(args, cfg, "k", 1)),
        p=float(_setting(args, cfg, "p", 1.0)),
    )


def _load_testbed(args, cfg):
    """File-backed synthetic world: scenes + corpus -> vocab, prior, stats."""
    scenes_path = _setting(args, cfg, "scenes", None)
    corpus_path = _setting(args, cfg, "corpus", None)
    if not scenes_path or not corpus_path:
        raise ConfigError("synthetic source needs --scenes and --corpus")
    with open(scenes_path) as fh:
        scenes = read_scenes(fh)
    with open(corpus_path) as fh:
        corpus = read_corpus(fh)
    objects = sorted(
        ({t for doc in corpus for t in doc} | {o for s in scenes for o in s.present_objects})
        - _SPECIAL_STRINGS
    )
    vocab = build_vocabulary(objects)
    prior = compile_prior(corpus, vocab, kind=_setting(args, cfg, "prior", "bigram"))
    stats = corpus_stats(corpus, objects)

    class _FileTestbed:
        def __init__(self):
            self.vocab = vocab
            self.prior = prior
            self.scenes = scenes
            self.stats = stats
            self.objects = objects
            self._by_id = {s.scene_id: s for s in scenes}

        def source_for(self, scene_id):
            return build_sources(self._by_id[scene_id], prior, vocab)

    return _FileTestbed()


def _out_dir(args, cfg) -> Path:
    out = Path(_setting(args, cfg, "out", "runs/latest"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, effective: dict, seeds) -> None:
    manifest = {
        "command": command,
        "engine_version": __version__,
        "config": effective,
        "config_hash": config_hash(effective),
        "seeds": list(seeds),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _strategy_from(args, cfg) -> StrategyConfig:
    return StrategyConfig(
        name=_setting(args, cfg, "name", "strategy"),
        mode=DecodeMode(_setting(args, cfg, "mode", "nolan")),
        policy=_policy_from(args, cfg),
        sampler=_sampler_from(args, cfg),
        max_new_tokens=int(_setting(args, cfg, "max-new-tokens", 1)),
    )


def _connect_bridge(args, cfg):
    bridge_cmd = _setting(args, cfg, "bridge-cmd", None)
    bridge_tcp = _setting(args, cfg, "bridge-tcp", None)
    if bridge_cmd:
        return connect_stdio(bridge_cmd.split())
    if bridge_tcp:
        return connect_tcp(bridge_tcp)
    raise ConfigError("need --bridge-cmd or --bridge-tcp")


def cmd_decode(args, cfg) -> int:
    tb = _load_testbed(args, cfg)
    prompt = _setting(args, cfg, "prompt", None)
    scene_id = _setting(args, cfg, "scene-id", None)
    if not prompt or not scene_id:
        raise ConfigError("decode needs --prompt and --scene-id")
    tokens = tuple(tb.vocab.index(t) for t in prompt.split())
    strat = _strategy_from(args, cfg)
    req = DecodeRequest(
        prompt_tokens=tokens,
        mode=strat.mode,
        policy=strat.policy,
        sampler=strat.sampler,
        visual_ref=scene_id,
        max_new_tokens=int(_setting(args, cfg, "max-new-tokens", 64)),
        seed=int(_setting(args, cfg, "seed", 0)),
    )
    result = decode(req, tb.source_for(scene_id), tb.vocab)
    out = _out_dir(args, cfg)
    effective = {"request": req.to_config(), "scene_id": scene_id}
    _write_manifest(out, "decode", effective, [req.seed])
    with open(out / "trace.jsonl", "w") as fh:
        result.write_trace(fh)
    (out / "result.json").write_text(
        json.dumps(
            {
                "tokens": list(result.tokens),
                "strings": [tb.vocab.string(t) for t in result.tokens],
                "finish_reason": result.finish_reason.value,
                "step_counts": step_counts(result),
            },
            sort_keys=True,
            indent=2,
        )
        + "\n"
    )
    print(" ".join(tb.vocab.string(t) for t in result.tokens))
    return EXIT_OK


def _eval_common(args, cfg):
    tb = _load_testbed(args, cfg)
    suite_path = _setting(args, cfg, "suite", None)
    if not suite_path:
        raise ConfigError("need --suite")
    with open(suite_path) as fh:
        suite = read_suite(fh)
    runs = int(_setting(args, cfg, "runs", 5))
    base_seed = int(_setting(args, cfg, "seed", 0))
    jobs = int(_setting(args, cfg, "jobs", os.cpu_count() or 1))
    fmt = _setting(args, cfg, "format", "table")
    return tb, suite, runs, base_seed, jobs, fmt


def cmd_eval_pope(args, cfg) -> int:
    tb, suite, runs, base_seed, jobs, fmt = _eval_common(args, cfg)
    strat = _strategy_from(args, cfg)
    ev = evaluate_pope(suite, strat, tb, runs=runs, base_seed=base_seed, jobs=jobs)
    seeds = list(range(base_seed, base_seed + runs))
    effective = {"strategy": strat.canonical().to_config(), "runs": runs, "seed": base_seed}
    header = ReportHeader.build(effective, seeds)
    row = {"strategy": strat.canonical().mode.value, **ev.metrics.row()}
    text = render_report([row], header, fmt)
    out = _out_dir(args, cfg)
    _write_manifest(out, "eval-pope", effective, seeds)
    (out / "metrics.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_sweep(args, cfg) -> int:
    tb, suite, runs, base_seed, jobs, fmt = _eval_common(args, cfg)
    param = _setting(args, cfg, "param", None)
    values_raw = _setting(args, cfg, "values", None)
    if not param or not values_raw:
        raise ConfigError("sweep needs --param and --values")
    values = [float(v) for v in str(values_raw).split(",")]
    fixed = _strategy_from(args, cfg)
    rows = sweep(param, values, suite, tb, fixed, runs=runs, base_seed=base_seed)
    effective = {
        "param": param,
        "values": values,
        "strategy": fixed.to_config(),
        "runs": runs,
        "seed": base_seed,
    }
    seeds = list(range(base_seed, base_seed + runs))
    text = render_report(rows, ReportHeader.build(effective, seeds), fmt)
    out = _out_dir(args, cfg)
    _write_manifest(out, "sweep", effective, seeds)
    (out / "sweep.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_analyze(args, cfg) -> int:
    tb, suite, runs, base_seed, jobs, fmt = _eval_common(args, cfg)
    sampler = _sampler_from(args, cfg)
    strategies = {
        "regular": StrategyConfig(
            "regular", mode=DecodeMode.NOLAN, policy=AlphaPolicy.constant(0.0), sampler=sampler
        ),
        "nolan_base": StrategyConfig(
            "nolan_base", mode=DecodeMode.NOLAN, policy=AlphaPolicy.constant(1.0), sampler=sampler
        ),
        "nolan_plus": StrategyConfig(
            "nolan_plus", mode=DecodeMode.NOLAN, policy=AlphaPolicy.kl_tanh(0.8), sampler=sampler
        ),
    }
    evals = {
        name: evaluate_pope(suite, strat, tb, runs=runs, base_seed=base_seed, jobs=jobs)
        for name, strat in strategies.items()
    }
    traces = {
        name: [o.result.trace for o in ev.outcomes] for name, ev in evals.items()
    }
    report = {
        "metrics": {n: ev.metrics.row() for n, ev in evals.items()},
        "entropy_by_strategy": entropy_report(traces),
        "kl_by_position": {
            str(k): v for k, v in kl_by_position(traces["nolan_plus"]).items()
        },
        "subset_divergences": subset_divergence_report(
            [o for o in evals["regular"].outcomes if o.run == 0]
        ),
        "mi_estimate": mutual_information_estimate(traces["nolan_plus"]),
        "timing": timing_report(
            {n: [o.result for o in ev.outcomes] for n, ev in evals.items()}
        ),
    }
    effective = {"analyze": {n: s.canonical().to_config() for n, s in strategies.items()},
                 "runs": runs, "seed": base_seed}
    seeds = list(range(base_seed, base_seed + runs))
    out = _out_dir(args, cfg)
    _write_manifest(out, "analyze", effective, seeds)
    header = ReportHeader.build(effective, seeds)
    payload = render_report([{"report": json.dumps(report, sort_keys=True)}], header, "records")
    (out / "analysis.jsonl").write_text(payload)
    print(json.dumps(report, sort_keys=True, indent=2))
    return EXIT_OK


def cmd_gen_suite(args, cfg) -> int:
    tb = _load_testbed(args, cfg)
    setting = _setting(args, cfg, "setting", "adversarial")
    n_items = int(_setting(args, cfg, "n-items", 40))
    seed = int(_setting(args, cfg, "seed", 0))
    items = generate_pope_suite(tb.scenes, setting, n_items, seed, tb.stats, tb.objects)
    out = _out_dir(args, cfg)
    _write_manifest(out, "gen-suite", {"setting": setting, "n_items": n_items, "seed": seed}, [seed])
    with open(out / "suite.jsonl", "w") as fh:
        write_suite(items, fh)
    print(f"wrote {len(items)} items to {out / 'suite.jsonl'}")
    return EXIT_OK


def cmd_serve_check(args, cfg) -> int:
    source = _connect_bridge(args, cfg)
    try:
        report = serve_check(source)
    finally:
        source.close()
    print(json.dumps(report, sort_keys=True, indent=2))
    return EXIT_OK if report["ok"] else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nolan")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn):
        p = sub.add_parser(name)
        p.set_defaults(fn=fn)
        p.add_argument("--config")
        p.add_argument("--scenes")
        p.add_argument("--corpus")
        p.add_argument("--prior", choices=["unigram", "bigram"])
        p.add_argument("--suite")
        p.add_argument("--mode", choices=[m.value for m in DecodeMode])
        p.add_argument("--policy", choices=[k.value for k in PolicyKind])
        p.add_argument("--alpha", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--sampler", choices=[k.value for k in SamplerKind])
        p.add_argument("--temperature", type=float)
        p.add_argument("--k", type=int)
        p.add_argument("--p", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--runs", type=int)
        p.add_argument("--jobs", type=int)
        p.add_argument("--format", choices=["records", "table", "csv"])
        p.add_argument("--out")
        p.add_argument("--max-new-tokens", type=int)
        p.add_argument("--prompt")
        p.add_argument("--scene-id")
        p.add_argument("--setting", choices=["random", "popular", "adversarial"])
        p.add_argument("--n-items", type=int)
        p.add_argument("--param", choices=["alpha", "beta"])
        p.add_argument("--values")
        p.add_argument("--bridge-cmd")
        p.add_argument("--bridge-tcp")
        return p

    add("decode", cmd_decode)
    add("eval-pope", cmd_eval_pope)
    add("sweep", cmd_sweep)
    add("analyze", cmd_analyze)
    add("gen-suite", cmd_gen_suite)
    add("serve-check", cmd_serve_check)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("NOLAN_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        return args.fn(args, cfg)
    except ConfigError as exc:
        _diagnostic("config_error", str(exc))
        return EXIT_CONFIG
    except (ValueError, KeyError) as exc:
        _diagnostic("config_error", str(exc))
        return EXIT_CONFIG
    except SourceError as exc:
        _diagnostic("source_error", str(exc))
        return EXIT_RUNTIME
    except OSError as exc:
        _diagnostic("io_error", str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
