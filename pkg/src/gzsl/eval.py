"""Zero-shot synthesis, image metrics and the latent probe matrix.

A synthesis query names a target attribute tuple plus one provider sample per
class; the latent is assembled block by block from the providers' codes and
decoded once. Probes train a small classifier per (block j, attribute r).
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from . import autodiff as ad
from .autodiff import Tensor
from .data import AttributedDataset
from .gsl import InfeasibleError, Multigraph
from .optim import Adam
from .train import LatentPartition, Model

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthesisQuery:
    target: tuple[int, ...]
    providers: tuple[int, ...]
    zero_shot: bool = True


def check_query(dataset: AttributedDataset, query: SynthesisQuery) -> None:
    if len(query.providers) != dataset.m or len(query.target) != dataset.m:
        raise ValueError(f"query needs {dataset.m} providers and target values")
    for j, (p, v) in enumerate(zip(query.providers, query.target)):
        if dataset.attrs[p, j] != v:
            name = dataset.schema.names[j]
            have = dataset.schema.values[j][dataset.attrs[p, j]]
            want = dataset.schema.values[j][v]
            raise ValueError(f"provider {p} has {name}={have!r}, target needs {want!r}")


def assemble(codes: np.ndarray, partition: LatentPartition) -> np.ndarray:
    """Row ``j`` of ``codes`` supplies block ``j`` of the assembled code."""
    if codes.shape != (partition.m, partition.d):
        raise ValueError(f"expected {partition.m} codes of width {partition.d}, got {codes.shape}")
    mask = partition.mask(np.arange(partition.m))
    return codes[mask][None, :]


def synthesize(model: Model, images: np.ndarray, query: SynthesisQuery,
               dataset: AttributedDataset | None = None) -> np.ndarray:
    """Decode the block-wise assembled latent; returns ``[C, H, W]``."""
    if dataset is not None:
        check_query(dataset, query)
    ids, inverse = np.unique(np.asarray(query.providers, dtype=np.int64), return_inverse=True)
    z = model.encode(images[ids])
    code = assemble(z[inverse], model.partition)
    return model.decode(code)[0]


def find_providers(graph: Multigraph, target: Sequence[int], rng: np.random.Generator) -> tuple[int, ...]:
    """One uniformly chosen member per class holding the target's value."""
    out = []
    for j, v in enumerate(target):
        cand = graph.members_with(j, v)
        if len(cand) == 0:
            name = graph.class_name(j)
            value = graph.dataset.schema.values[j][v]
            raise InfeasibleError(f"no training sample has {name}={value!r}", name)
        out.append(int(cand[rng.integers(len(cand))]))
    return tuple(out)


def mse(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images; ``inf`` when identical."""
    e = mse(a, b)
    return math.inf if e == 0 else 10.0 * math.log10(1.0 / e)


# ------------------------------------------------------------------ probes

@dataclass
class ProbeReport:
    accuracy: np.ndarray  # [m, m]; row j = block, column r = attribute; nan = skipped
    chance: np.ndarray
    names: tuple[str, ...]

    def diagonal_mean(self) -> float:
        return float(np.nanmean(np.diag(self.accuracy)))

    def off_diagonal_mean(self) -> float:
        off = self.accuracy[~np.eye(len(self.names), dtype=bool)]
        return float(np.nanmean(off))

    def margin(self) -> float:
        return self.diagonal_mean() - self.off_diagonal_mean()

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["block", *self.names])
            for name, row in zip(self.names, self.accuracy):
                w.writerow([name, *("absent" if np.isnan(a) else f"{a:.6f}" for a in row)])
            w.writerow(["chance", *(f"{c:.6f}" for c in self.chance)])


def _standardize(train: np.ndarray, test: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd[sd < 1e-8] = 1.0
    return (train - mu) / sd, (test - mu) / sd


def train_probe(x_train, y_train, x_test, y_test, classes: int, rng: np.random.Generator,
                hidden=(64, 64), epochs: int = 100, batch: int = 32, lr: float = 1e-3) -> float:
    """Held-out accuracy of a ReLU MLP trained with Adam."""
    sizes = [x_train.shape[1], *hidden, classes]
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / fan_in)
        params.append(Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True))
        params.append(Tensor(np.zeros(fan_out), requires_grad=True))
    opt = Adam(params, lr=lr)

    def forward(x: Tensor) -> Tensor:
        h = x
        for i in range(0, len(params), 2):
            h = ad.dense(h, params[i], params[i + 1])
            if i + 2 < len(params):
                h = ad.relu(h)
        return h

    n = len(x_train)
    for _ in range(epochs):
        perm = rng.permutation(n)
        for s in range(0, n, batch):
            idx = perm[s:s + batch]
            opt.zero_grad()
            with ad.Graph() as g:
                loss = ad.cross_entropy(forward(Tensor(x_train[idx])), y_train[idx])
                g.backward(loss)
            opt.step()
    pred = forward(Tensor(x_test)).data.argmax(axis=1)
    return float((pred == y_test).mean())


def probe_disentanglement(codes: np.ndarray, attrs: np.ndarray, partition: LatentPartition,
                          cardinalities: Sequence[int], names: Sequence[str], seed: int = 0,
                          epochs: int = 100, hidden=(64, 64)) -> ProbeReport:
    """Probe matrix over precomputed codes: block ``j`` predicting attribute ``r``.

    Each (j, r) probe has its own RNG stream, so entries do not depend on the
    order they are computed in.
    """
    codes = np.asarray(codes, dtype=np.float32)
    attrs = np.asarray(attrs, dtype=np.int64)
    if len(codes) == 0:
        raise ValueError("probe needs a nonempty split")
    if len(codes) != len(attrs):
        raise ValueError("codes and labels differ in length")
    m = partition.m
    split_ss, *probe_ss = np.random.SeedSequence(seed).spawn(1 + m * m)
    perm = np.random.default_rng(split_ss).permutation(len(codes))
    n_train = int(round(0.8 * len(codes)))
    tr, te = perm[:n_train], perm[n_train:]
    if len(tr) == 0 or len(te) == 0:
        raise ValueError(f"split of {len(codes)} samples is too small for an 80:20 probe split")
    acc = np.full((m, m), np.nan)
    for j in range(m):
        g = codes[:, partition.block(j)]
        xtr, xte = _standardize(g[tr], g[te])
        for r in range(m):
            if len(np.unique(attrs[:, r])) < 2:
                log.warning("probe skipped: %r takes a single value on this split", names[r])
                continue
            rng = np.random.default_rng(probe_ss[j * m + r])
            acc[j, r] = train_probe(xtr, attrs[tr, r], xte, attrs[te, r], int(cardinalities[r]), rng,
                                    hidden=hidden, epochs=epochs)
        log.info("probe block %s: %s", names[j], np.round(acc[j], 3).tolist())
    chance = 1.0 / np.asarray(cardinalities, dtype=np.float64)
    return ProbeReport(acc, chance, tuple(names))


def probe_model(model: Model, dataset: AttributedDataset, ids: Sequence[int], seed: int = 0,
                epochs: int = 100) -> ProbeReport:
    ids = np.asarray(ids, dtype=np.int64)
    codes = model.encode(dataset.images()[ids])
    s = dataset.schema
    return probe_disentanglement(codes, dataset.attrs[ids], model.partition, s.cardinalities, s.names,
                                 seed=seed, epochs=epochs)


# -------------------------------------------------------------- the suite

def ground_truth(dataset: AttributedDataset, target: Sequence[int]) -> np.ndarray:
    """``[C, H, W]`` image of a tuple: rendered when the manifest carries a
    Fonts config, otherwise looked up among the dataset's own samples."""
    if "fonts" in dataset.header:
        from .fonts.dataset import config_from_header, render
        return render(tuple(target), config_from_header(dataset.header)).transpose(2, 0, 1)
    hit = np.flatnonzero((dataset.attrs == np.asarray(target)).all(axis=1))
    if len(hit) == 0:
        raise LookupError(f"no image for tuple {tuple(target)}")
    return dataset.images()[hit[0]]


def make_queries(dataset: AttributedDataset, train_ids, test_ids, seed: int = 0) -> list[SynthesisQuery]:
    """One query per distinct test tuple, providers drawn from the train split."""
    graph = Multigraph(dataset, train_ids)
    seen_train = {tuple(r) for r in dataset.attrs[np.asarray(train_ids, dtype=np.int64)].tolist()}
    targets = sorted({tuple(r) for r in dataset.attrs[np.asarray(test_ids, dtype=np.int64)].tolist()})
    rng = np.random.default_rng(seed)
    return [SynthesisQuery(t, find_providers(graph, t, rng), t not in seen_train) for t in targets]


def synthesis_metrics(model: Model, dataset: AttributedDataset, queries: Sequence[SynthesisQuery]):
    """Per-query (synthesized image, ground truth, mse, psnr)."""
    images = dataset.images()
    out = []
    for q in queries:
        img = synthesize(model, images, q, dataset)
        gt = ground_truth(dataset, q.target)
        out.append((img, gt, mse(img, gt), psnr(img, gt)))
    return out


def summarize(values_mse: Sequence[float], values_psnr: Sequence[float]) -> dict:
    finite = [p for p in values_psnr if math.isfinite(p)]
    return {
        "queries": len(values_mse),
        "mse_mean": float(np.mean(values_mse)) if len(values_mse) else math.nan,
        "psnr_mean": float(np.mean(finite)) if finite else math.nan,
        "psnr_inf_count": len(values_psnr) - len(finite),
    }


def _tile(img_chw: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img_chw.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)


def write_grid(path: str | Path, rows: Sequence[Sequence[np.ndarray]], pad: int = 2) -> tuple[int, int]:
    """Contact sheet with one row per query; returns (rows, columns) in cells."""
    n_rows, n_cols = len(rows), len(rows[0])
    c, h, w = rows[0][0].shape
    sheet = np.full((n_rows * (h + pad) + pad, n_cols * (w + pad) + pad, 3), 255, dtype=np.uint8)
    for r, row in enumerate(rows):
        for k, img in enumerate(row):
            y, x = pad + r * (h + pad), pad + k * (w + pad)
            sheet[y:y + h, x:x + w] = _tile(img)
    Image.fromarray(sheet, mode="RGB").save(path, format="PNG")
    return n_rows, n_cols


def eval_suite(model: Model, dataset: AttributedDataset, train_ids, test_ids, out_dir: str | Path,
               seed: int = 0, probe: bool = True, probe_epochs: int = 100) -> dict:
    """Write metrics.csv, probe.csv, grid.png and summary.json under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    queries = make_queries(dataset, train_ids, test_ids, seed)
    if not queries:
        raise ValueError("no test tuples to evaluate")
    results = synthesis_metrics(model, dataset, queries)
    s = dataset.schema
    images = dataset.images()
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["query", *s.names, *(f"provider_{n}" for n in s.names), "zero_shot", "mse", "psnr"])
        for i, (q, (_, _, e, p)) in enumerate(zip(queries, results)):
            w.writerow([i, *s.decode(q.target), *q.providers, int(q.zero_shot), f"{e:.8f}",
                        "inf" if math.isinf(p) else f"{p:.6f}"])
    grid = [[images[p] for p in q.providers] + [img, gt] for q, (img, gt, _, _) in zip(queries, results)]
    write_grid(out / "grid.png", grid)
    summary = summarize([r[2] for r in results], [r[3] for r in results])
    summary["zero_shot_queries"] = sum(q.zero_shot for q in queries)
    if probe:
        report = probe_model(model, dataset, test_ids, seed=seed, epochs=probe_epochs)
        report.write_csv(out / "probe.csv")
        summary.update(probe_diagonal=report.diagonal_mean(), probe_off_diagonal=report.off_diagonal_mean(),
                       probe_margin=report.margin())
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary
