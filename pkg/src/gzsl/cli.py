"""Command-line entry point: ``gzsl <subcommand> ...``.

Exit status is 0 on success, 1 on a domain error (bad data, infeasible
query, corrupt checkpoint) and 2 on a usage error.
"""
from __future__ import annotations

import argparse
import contextlib
import difflib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError
from .config import ConfigError, build, dump, read_kv

log = logging.getLogger("gzsl")

COMMANDS = ("gen-fonts", "train", "synth", "probe", "eval", "gradcheck", "selftest")
RUN_INFO = "run.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors exit 2 and suggest the closest known flag or subcommand."""

    def error(self, message):
        hint = ""
        if "invalid choice" in message:
            bad = message.split("'")[1] if "'" in message else ""
            close = difflib.get_close_matches(bad, COMMANDS, n=1)
            hint = f" (did you mean {close[0]!r}?)" if close else ""
        elif message.startswith("unrecognized arguments"):
            known = [o for a in self._actions for o in a.option_strings]
            for tok in message.split(":", 1)[1].split():
                close = difflib.get_close_matches(tok.split("=")[0], known, n=1)
                if close:
                    hint = f" (did you mean {close[0]}?)"
                    break
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}{hint}\n")


# ------------------------------------------------------------------ helpers

def _load_data(manifest, split_path=None):
    from .data import read_manifest
    from .fonts.dataset import load_split
    split = load_split(split_path) if split_path else None
    if manifest is None:
        if split is None:
            raise UsageError("either --data or --split is required")
        manifest = split["manifest"]
    return read_manifest(manifest), split


def _run_info(ckpt: Path) -> dict:
    path = Path(ckpt).parent / RUN_INFO
    return json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}


def parse_query(text: str, schema) -> tuple[int, ...]:
    """``"letter=A,size=small,fc=red,..."`` to a value-index tuple."""
    from .fonts.dataset import QUERY_ALIASES
    given = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        if "=" not in part:
            raise UsageError(f"query item {part!r} is not name=value")
        k, v = (s.strip() for s in part.split("=", 1))
        given[QUERY_ALIASES.get(k, k)] = v
    unknown = sorted(set(given) - set(schema.names))
    if unknown:
        raise UsageError(f"unknown attribute(s) in query: {', '.join(unknown)}")
    missing = [n for n in schema.names if n not in given]
    if missing:
        raise UsageError(f"query lacks: {', '.join(missing)}")
    return tuple(schema.value_index(j, given[n]) for j, n in enumerate(schema.names))


# -------------------------------------------------------------- subcommands

def cmd_gen_fonts(args) -> int:
    from .fonts.dataset import FontsConfig, MANIFEST_NAME, generate_dataset, plan_split, save_split
    values = read_kv(args.config) if args.config else {}
    preset = values.pop("preset", "mini")
    base = {"mini": FontsConfig.mini, "full": FontsConfig.full}.get(preset)
    if base is None:
        raise ConfigError(f"preset must be 'mini' or 'full', got {preset!r}")
    cfg = build(FontsConfig, {**base().to_dict(), **values})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "fonts.frozen").write_text(dump(cfg), encoding="utf-8")
    log.info("rendering %d images to %s", cfg.total_combinations(), out)
    ds = generate_dataset(cfg, out)
    train, test = plan_split(ds, args.split_mode, args.seed)
    save_split(out / "split.json", out / MANIFEST_NAME, args.split_mode, args.seed, train, test)
    log.info("split %s: %d train / %d test", args.split_mode, len(train), len(test))
    return 0


def cmd_train(args) -> int:
    from .gsl import Multigraph
    from .train import TrainConfig, train
    ds, split = _load_data(args.data, args.split)
    values = read_kv(args.config) if args.config else {}
    cfg = build(TrainConfig, values, mode=args.mode, seed=args.seed, epochs=args.epochs, steps=args.steps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.frozen").write_text(dump(cfg), encoding="utf-8")
    info = {"manifest": str(Path(args.data).resolve()) if args.data else split["manifest"],
            "split": str(Path(args.split).resolve()) if args.split else None}
    (out / RUN_INFO).write_text(json.dumps(info, indent=2) + "\n", encoding="utf-8")
    graph = Multigraph(ds, split["train"] if split else None)
    train(cfg, ds, graph, out)
    return 0


def _ckpt_data(args):
    info = _run_info(args.ckpt)
    manifest = args.data or info.get("manifest")
    split_path = getattr(args, "split", None) or info.get("split")
    if manifest is None and split_path is None:
        raise UsageError("no dataset known for this checkpoint; pass --data")
    return _load_data(manifest, split_path)


def cmd_synth(args) -> int:
    from .eval import SynthesisQuery, find_providers, synthesize
    from .gsl import Multigraph
    from .train import load_model
    from .data import save_png
    model = load_model(args.ckpt)
    ds, split = _ckpt_data(args)
    target = parse_query(args.query, ds.schema)
    members = split["train"] if split else None
    graph = Multigraph(ds, members)
    providers = find_providers(graph, target, np.random.default_rng(args.seed))
    img = synthesize(model, ds.images(), SynthesisQuery(target, providers), ds)
    out = Path(args.out) if args.out else Path(args.ckpt).parent / "synth.png"
    save_png(img.transpose(1, 2, 0), out)
    log.info("providers %s -> %s", providers, out)
    return 0


def cmd_probe(args) -> int:
    from .eval import probe_model
    from .train import load_model
    model = load_model(args.ckpt)
    ds, split = _ckpt_data(args)
    ids = split["test"] if split else np.arange(len(ds))
    report = probe_model(model, ds, ids, seed=args.seed, epochs=args.epochs)
    out = Path(args.out) if args.out else Path(args.ckpt).parent / "probe.csv"
    report.write_csv(out)
    log.info("probe diagonal %.3f off-diagonal %.3f -> %s", report.diagonal_mean(), report.off_diagonal_mean(), out)
    return 0


def cmd_eval(args) -> int:
    from .eval import eval_suite
    from .train import load_model
    model = load_model(args.ckpt)
    ds, split = _load_data(None, args.split)
    summary = eval_suite(model, ds, split["train"], split["test"], args.out, seed=args.seed,
                         probe=not args.no_probe, probe_epochs=args.probe_epochs)
    log.info("eval: %s", json.dumps(summary, sort_keys=True))
    return 0


def _report(results) -> int:
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_gradcheck(args) -> int:
    from .selftest import check_cycle_gradient, check_layer_gradients
    return _report(check_layer_gradients(args.seed) + [check_cycle_gradient(args.seed)])


def cmd_selftest(args) -> int:
    from .selftest import run_all
    return _report(run_all(args.seed))


# ------------------------------------------------------------------- wiring

def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gzsl", description="Group-supervised zero-shot synthesis toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-fonts", help="render an attributed Fonts dataset and its split")
    s.add_argument("--config", help="key=value file (FontsConfig fields, optional preset=mini|full)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split-mode", default="holdout-combinations", choices=("holdout-combinations", "random-75-25"))
    s.set_defaults(fn=cmd_gen_fonts)

    s = sub.add_parser("train", help="train gzs / ae / ae-ds")
    s.add_argument("--config", help="key=value file (TrainConfig fields)")
    s.add_argument("--data", help="manifest.jsonl")
    s.add_argument("--split", help="split.json; training uses its train ids")
    s.add_argument("--mode", choices=("gzs", "ae", "ae-ds"))
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--steps", type=int)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("synth", help="synthesize one image from an attribute query")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--query", required=True, help='e.g. "letter=A,size=small,fc=red,bc=blue,style=bold"')
    s.add_argument("--data")
    s.add_argument("--split")
    s.add_argument("--out", help="PNG path (default: synth.png next to the checkpoint)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("probe", help="attribute co-prediction matrix")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data")
    s.add_argument("--split")
    s.add_argument("--out", help="CSV path (default: probe.csv next to the checkpoint)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int, default=100)
    s.set_defaults(fn=cmd_probe)

    s = sub.add_parser("eval", help="zero-shot metrics, probe matrix and contact sheet")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--split", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-probe", action="store_true")
    s.add_argument("--probe-epochs", type=int, default=100)
    s.set_defaults(fn=cmd_eval)

    for name, fn, text in (("gradcheck", cmd_gradcheck, "finite-difference gradient checks"),
                           ("selftest", cmd_selftest, "run the property suites")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--seed", type=int, default=0)
        s.set_defaults(fn=fn)
    return p


def _thread_limit():
    env = os.environ.get("GZSL_THREADS")
    if not env:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(1, int(env)))


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    from .gsl import InfeasibleError
    from .train import ContractError, TrainingDiverged
    try:
        with _thread_limit():
            return args.fn(args)
    except UsageError as exc:
        print(f"gzsl {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, CheckpointError, InfeasibleError, ContractError, TrainingDiverged,
            ValueError, LookupError, OSError) as exc:
        print(f"gzsl {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
