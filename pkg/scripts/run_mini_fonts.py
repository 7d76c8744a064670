"""Mini-Fonts experiment: generate data, train gzs / ae / ae-ds, evaluate each.

    python scripts/run_mini_fonts.py --out runs/mini --epochs 20
"""
import argparse
import json
import logging
import time
from pathlib import Path

from gzsl.data import read_manifest
from gzsl.eval import eval_suite
from gzsl.fonts import FontsConfig, generate_dataset, load_split, plan_split, save_split
from gzsl.gsl import Multigraph
from gzsl.train import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/mini")
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--modes", default="gzs,ae,ae-ds")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")

    out = Path(args.out)
    data = out / "data"
    manifest = data / "manifest.jsonl"
    if not manifest.exists():
        generate_dataset(FontsConfig.mini(), data)
    split_path = data / "split.json"
    if not split_path.exists():
        ds = read_manifest(manifest)
        tr, te = plan_split(ds, "holdout-combinations", args.seed)
        save_split(split_path, manifest, "holdout-combinations", args.seed, tr, te)
    split = load_split(split_path)
    ds = read_manifest(split["manifest"])
    graph = Multigraph(ds, split["train"])

    results = {}
    for mode in args.modes.split(","):
        t0 = time.time()
        cfg = TrainConfig(mode=mode, epochs=args.epochs, seed=args.seed)
        trainer = train(cfg, ds, graph, out / mode)
        summary = eval_suite(trainer.model, ds, split["train"], split["test"], out / mode / "eval", seed=args.seed)
        summary["seconds"] = round(time.time() - t0, 1)
        results[mode] = summary
        print(mode, json.dumps(summary), flush=True)
    (out / "results.json").write_text(json.dumps(results, indent=2) + "\n")


if __name__ == "__main__":
    main()
