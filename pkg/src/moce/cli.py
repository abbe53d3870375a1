"""Command-line entry point: ``moce <subcommand> [flags]``.

Exit status is 0 on success, 1 on usage errors and 2 on runtime failures.
Model and training settings can come from a ``key = value`` file given with
``--config``; every key is mirrored by a ``--key-name`` flag that wins over
the file.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .checkpoint import average_checkpoints, load_checkpoint, save_checkpoint
from .decoding import beam_search, greedy_decode
from .model import NO_LID, ModelConfig, build_model, expected_ada_overhead
from .synthetic import read_multiparallel, read_tsv
from .tokenizer import build_vocab, decode, encode
from .training import TrainConfig, train

SUBCOMMANDS = ("tokenize", "conciseness", "train", "translate", "route-stats", "gradcheck", "params")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- config files ---------------------------------------------------------------------

def _config_fields() -> dict[str, list[type]]:
    """Every settable key with the dataclasses that own it."""
    out = {}
    for cls in (ModelConfig, TrainConfig):
        for f in dataclasses.fields(cls):
            out.setdefault(f.name, []).append(cls)
    return out


CONFIG_KEYS = _config_fields()
_OPTIONAL_INT = {"valid_interval"}
_TUPLE_INT = {"msha_scales"}


def coerce(key: str, raw: str):
    if key not in CONFIG_KEYS:
        raise UsageError(f"unknown config key {key!r}")
    cls = CONFIG_KEYS[key][0]
    default = next(f for f in dataclasses.fields(cls) if f.name == key).default
    raw = raw.strip()
    if key in _TUPLE_INT:
        if raw.lower() in ("", "none"):
            return None
        return tuple(int(x) for x in raw.replace(",", " ").split())
    if key in _OPTIONAL_INT:
        return None if raw.lower() in ("", "none") else int(raw)
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise UsageError(f"bad value for {key}: {raw!r}") from None
    return raw


def read_config_file(path) -> dict:
    values = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            values[key] = coerce(key, val)
    return values


def build_configs(args) -> tuple[ModelConfig, TrainConfig]:
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    for key in CONFIG_KEYS:
        flag = getattr(args, f"cfg_{key}", None)
        if flag is not None:
            values[key] = coerce(key, flag)
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    model_keys = {f.name for f in dataclasses.fields(ModelConfig)}
    train_keys = {f.name for f in dataclasses.fields(TrainConfig)}
    mc = ModelConfig(**{k: v for k, v in values.items() if k in model_keys})
    tc = TrainConfig(**{k: v for k, v in values.items() if k in train_keys})
    try:
        mc.validate()
        tc.validate()
    except ValueError as e:
        raise UsageError(str(e)) from None
    return mc, tc


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value settings file")
    g = p.add_argument_group("settings (override --config)")
    for key in CONFIG_KEYS:
        if key == "seed":
            continue
        g.add_argument("--" + key.replace("_", "-"), dest=f"cfg_{key}", metavar="V")


# -- subcommands ------------------------------------------------------------------------

def cmd_tokenize(args) -> int:
    if args.checkpoint:
        from .checkpoint import read_header
        vocab = build_vocab(read_header(args.checkpoint)[0]["languages"])
    else:
        langs = args.languages.split(",") if args.languages else [args.lang]
        vocab = build_vocab(langs)
    for line in sys.stdin:
        line = line.rstrip("\n")
        if args.decode:
            ids = [int(t) for t in line.split()]
            sys.stdout.write(decode(ids, vocab) + "\n")
        else:
            sys.stdout.write(" ".join(map(str, encode(line, args.lang, vocab).ids)) + "\n")
    return 0


def cmd_conciseness(args) -> int:
    report = analysis.conciseness_report(read_multiparallel(args.input), args.pivot)
    if args.out:
        analysis.write_report_csv(report, args.out)
    else:
        print("lang,avg_bytes,ratio_vs_pivot")
        for r in report.rows():
            print(f"{r['lang']},{r['avg_bytes']:.4f},{r['ratio_vs_pivot']:.4f}")
    return 0


def cmd_train(args) -> int:
    mc, tc = build_configs(args)
    corpus = read_tsv(args.corpus)
    valid = read_tsv(args.valid) if args.valid else None
    langs = set(corpus.languages()) | (set(valid.languages()) if valid else set())
    model = build_model(mc, build_vocab(sorted(langs)))
    out = Path(args.out)
    result = train(model, corpus, tc, valid, out)
    save_checkpoint(model, out / "final.moce", {"step": result.steps})
    last = result.checkpoints[-tc.average_last:]
    if last:
        save_checkpoint(average_checkpoints(last), out / "average.moce", {"averaged": [p.name for p in last]})
    print(f"steps\t{result.steps}")
    print(f"stopped_early\t{result.stopped_early}")
    if result.log:
        print(f"final_valid_loss\t{result.log[-1].valid_loss:.6f}")
    return 0


def cmd_translate(args) -> int:
    model = load_checkpoint(args.checkpoint)
    lines = Path(args.input).read_text(encoding="utf-8").splitlines()
    outputs = []
    for line in lines:
        src = encode(line, args.src_lang, model.vocab)
        if args.greedy:
            hyp = greedy_decode(model, src, args.tgt_lang, args.max_len, args.override_lid)
        else:
            hyp = beam_search(model, src, args.tgt_lang, args.beam, args.length_penalty,
                              args.max_len, args.override_lid)
        outputs.append(decode(hyp, model.vocab))
    text = "".join(o + "\n" for o in outputs)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.reference:
        from .bleu import corpus_bleu
        refs = Path(args.reference).read_text(encoding="utf-8").splitlines()
        print(f"BLEU\t{corpus_bleu(outputs, refs):.2f}", file=sys.stderr)
    return 0


def _direction(text: str) -> tuple[str, str]:
    parts = text.split("-")
    if len(parts) != 2 or not all(parts):
        raise UsageError(f"direction must look like src-tgt, got {text!r}")
    return parts[0], parts[1]


def cmd_route_stats(args) -> int:
    model = load_checkpoint(args.checkpoint)
    corpus = read_tsv(args.corpus)
    direction = _direction(args.direction) if args.direction else None
    stats = analysis.record_expert_ratios(model, corpus, direction, args.override_lid)
    if args.out:
        analysis.write_stats_csv(stats, args.out)
    print(f"avg_delta\t{analysis.avg_delta(stats):.6f}")
    print(f"avg_delta_weighted\t{analysis.avg_delta(stats, weighted=True):.6f}")
    print("ratios\t" + " ".join(f"{r:.6f}" for r in stats.ratios()))
    return 0


def cmd_gradcheck(args) -> int:
    from .verify import full_model_grad_check
    worst = 0.0
    for s in range(args.seed, args.seed + args.seeds):
        err = full_model_grad_check(seed=s)
        print(f"seed {s}\tmax_rel_error\t{err:.3e}")
        worst = max(worst, err)
    print(f"max relative error {worst:.3e}")
    return 0 if worst < args.tolerance else 2


def cmd_params(args) -> int:
    mc, _ = build_configs(args)
    langs = args.languages.split(",") if args.languages else ["en"]
    model = build_model(mc, build_vocab(langs))
    base = build_model(dataclasses.replace(mc, max_delta=0, top_k=1, msha_scales=None), build_vocab(langs))
    print(f"total\t{model.parameter_count()}")
    print(f"ada_overhead\t{model.ada_overhead()}")
    print(f"ada_overhead_formula\t{expected_ada_overhead(mc)}")
    print(f"baseline_total\t{base.parameter_count()}")
    return 0


# -- wiring -------------------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="moce", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("tokenize", help="text <-> byte token ids (stdin to stdout)")
    t.add_argument("--lang", required=True)
    t.add_argument("--decode", action="store_true")
    t.add_argument("--languages", help="comma-separated language set (default: --lang only)")
    t.add_argument("--checkpoint", help="take the language set from a checkpoint")

    c = sub.add_parser("conciseness", help="average byte length per language")
    c.add_argument("--input", required=True, help="TSV with a header of language codes")
    c.add_argument("--pivot", required=True)
    c.add_argument("--out")

    tr = sub.add_parser("train", help="train on a 4-column TSV corpus")
    tr.add_argument("--corpus", required=True)
    tr.add_argument("--valid")
    tr.add_argument("--out", required=True)
    tr.add_argument("--seed", type=int)
    _add_config_flags(tr)

    tl = sub.add_parser("translate", help="decode one source sentence per line")
    tl.add_argument("--checkpoint", required=True)
    tl.add_argument("--input", required=True)
    tl.add_argument("--src-lang", required=True)
    tl.add_argument("--tgt-lang", required=True)
    tl.add_argument("--out")
    tl.add_argument("--beam", type=int, default=4)
    tl.add_argument("--length-penalty", type=float, default=1.5)
    tl.add_argument("--max-len", type=int, default=200)
    tl.add_argument("--greedy", action="store_true")
    tl.add_argument("--override-lid", help=f"language code or '{NO_LID}'")
    tl.add_argument("--reference", help="reference file; prints corpus BLEU to stderr")
    tl.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("route-stats", help="expert selection ratios over a corpus")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--corpus", required=True)
    r.add_argument("--direction", help="src-tgt, e.g. xx-en")
    r.add_argument("--out", help="CSV output path")
    r.add_argument("--override-lid", help=f"language code or '{NO_LID}'")
    r.add_argument("--seed", type=int, default=0)

    g = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    g.add_argument("--tolerance", type=float, default=1e-4)

    pr = sub.add_parser("params", help="parameter counts and routing overhead")
    pr.add_argument("--languages", help="comma-separated language set")
    pr.add_argument("--seed", type=int)
    _add_config_flags(pr)
    return p


@contextlib.contextmanager
def _thread_limit():
    n = os.environ.get("MOCE_THREADS")
    if not n:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=int(n)):
        yield


def run(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(f"missing subcommand (one of {', '.join(SUBCOMMANDS)})")
        handler = {
            "tokenize": cmd_tokenize, "conciseness": cmd_conciseness, "train": cmd_train,
            "translate": cmd_translate, "route-stats": cmd_route_stats,
            "gradcheck": cmd_gradcheck, "params": cmd_params,
        }[args.command]
        with _thread_limit():
            return handler(args)
    except UsageError as e:
        print(f"moce: usage error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, FloatingPointError, RuntimeError) as e:
        print(f"moce: error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    logging.basicConfig(level=os.environ.get("MOCE_LOG", "WARNING"))
    sys.exit(run())


if __name__ == "__main__":
    main()
