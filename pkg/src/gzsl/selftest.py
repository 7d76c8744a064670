"""Property checks run by ``gzsl selftest`` / ``gzsl gradcheck``.

Every check returns a :class:`CheckResult`; nothing here raises on failure.
"""
from __future__ import annotations

import itertools
import logging
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .data import AttributedDataset, AttributeSchema
from .gsl import Multigraph, check_group, sample_group
from .nets import NetSpec, build_autoencoder, residual_block
from .train import LatentCode, LatentPartition, cycle_swap_loss, swap

log = logging.getLogger(__name__)

GRAD_EPS = 1e-3
GRAD_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name}: {self.detail} ({self.seconds:.1f}s)"


# ---------------------------------------------------------------- gradients

def _evaluate(fn: Callable[[], Tensor]) -> tuple[float, bytes]:
    """Loss value plus the on/off pattern of every piecewise-linear op."""
    with ad.Graph() as g:
        loss = fn()
    parts = []
    for node in g.nodes:
        if node.op in ("leaky_relu", "relu"):
            parts.append(np.packbits(node.inputs[0].data > 0).tobytes())
        elif node.op == "l1_loss":
            pred, target = node.inputs
            parts.append(np.packbits(pred.data > target.data).tobytes())
    return loss.item(), b"".join(parts)


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = GRAD_EPS,
              max_coords: int = 40, seed: int = 0) -> tuple[float, int, int]:
    """Compare analytic and central-difference gradients on sampled coordinates.

    Returns (worst relative error, coordinates checked, coordinates skipped).
    The error is ``|a - n| / max(|a|, |n|)`` over each input's sampled vector.
    A coordinate is skipped when the ``+-eps`` probes change the on/off pattern
    of a relu or L1 term: the difference quotient then straddles a kink.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.grad = None
    with ad.Graph() as g:
        loss = fn()
        g.backward(loss)
    _, base = _evaluate(fn)
    worst, checked, skipped = 0.0, 0, 0
    for t in inputs:
        analytic, numeric = [], []
        for flat in rng.permutation(t.size):
            if len(analytic) >= max_coords:
                break
            c = np.unravel_index(flat, t.shape)
            old = t.data[c]
            t.data[c] = old + eps
            hi, sig_hi = _evaluate(fn)
            t.data[c] = old - eps
            lo, sig_lo = _evaluate(fn)
            t.data[c] = old
            if sig_hi != base or sig_lo != base:
                skipped += 1
                continue
            analytic.append(0.0 if t.grad is None else t.grad[c])
            numeric.append((hi - lo) / (2 * eps))
        if not analytic:
            continue
        a, n = np.asarray(analytic), np.asarray(numeric)
        scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
        worst = max(worst, float(np.linalg.norm(a - n) / scale))
        checked += len(a)
    return worst, checked, skipped


def _gradcheck_result(name, fn, inputs, t0, **kw) -> CheckResult:
    err, checked, skipped = gradcheck(fn, inputs, **kw)
    ok = err <= GRAD_TOL and checked > 0
    return CheckResult(f"gradcheck {name}", ok,
                       f"rel err {err:.2e} over {checked} coords ({skipped} straddling a kink skipped)",
                       time.time() - t0)


def _layer_cases(rng) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    def p(*shape, lo=-1.0, hi=1.0):
        return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)

    def proj(out: Tensor) -> Tensor:
        # random projection keeps every output element in the loss
        w = Tensor(np.random.default_rng(1).normal(size=out.shape))
        return ad.sum(ad.mul(out, w))

    x4, w4, b4 = p(2, 3, 6, 6), p(4, 3, 3, 3), p(4)
    xs, ws, bs = p(2, 3, 8, 8), p(4, 3, 4, 4), p(4)
    xt, wt, bt = p(2, 4, 3, 3), p(4, 2, 4, 4), p(2)
    xd, wd, bd = p(5, 6), p(6, 3), p(3)
    xe = p(7)
    la, lb = p(3, 4), p(3, 4)
    logits = p(5, 4)
    labels = rng.integers(0, 4, 5)
    xr = p(2, 3, 4, 4)
    res = {".conv1.weight": p(3, 3, 3, 3), ".conv1.bias": p(3), ".conv2.weight": p(3, 3, 3, 3), ".conv2.bias": p(3)}
    res_params = {"r" + k: v for k, v in res.items()}
    mask = rng.random((3, 4)) < 0.5
    target = Tensor(rng.uniform(0, 1, (3, 4)))
    return {
        "dense": (lambda: proj(ad.dense(xd, wd, bd)), [xd, wd, bd]),
        "conv2d stride 1": (lambda: proj(ad.conv2d(x4, w4, b4, 1, 1)), [x4, w4, b4]),
        "conv2d stride 2": (lambda: proj(ad.conv2d(xs, ws, bs, 2, 1)), [xs, ws, bs]),
        "conv2d_transpose": (lambda: proj(ad.conv2d_transpose(xt, wt, bt, 2, 1)), [xt, wt, bt]),
        "residual block": (lambda: proj(residual_block(xr, res_params, "r")), [xr, *res_params.values()]),
        "leaky_relu": (lambda: proj(ad.leaky_relu(xe, 0.2)), [xe]),
        "relu": (lambda: proj(ad.relu(xe)), [xe]),
        "sigmoid": (lambda: proj(ad.sigmoid(xe)), [xe]),
        "add/sub/mul": (lambda: proj(ad.mul(ad.add(la, lb), ad.sub(la, lb))), [la, lb]),
        "mix": (lambda: proj(ad.mix(la, lb, mask)), [la, lb]),
        "take/narrow/concat/reshape": (
            lambda: proj(ad.reshape(ad.concat([ad.take(la, [2, 0, 2]), ad.narrow(lb, 1, 1, 3)], axis=1), (-1,))),
            [la, lb]),
        "mean": (lambda: ad.mean(ad.mul(la, la)), [la]),
        "l1_loss": (lambda: ad.l1_loss(la, target), [la]),
        "cross_entropy": (lambda: ad.cross_entropy(logits, labels), [logits]),
    }


def check_layer_gradients(seed: int = 0) -> list[CheckResult]:
    results = []
    with ad.precision(np.float64):
        for name, (fn, inputs) in _layer_cases(np.random.default_rng(seed)).items():
            results.append(_gradcheck_result(name, fn, inputs, time.time(), seed=seed))
    return results


def tiny_autoencoder(seed: int = 0, latent: int = 4):
    spec = NetSpec("encoder", height=8, width=8, channels=3, latent=latent, channel_scale=1,
                   res_blocks=1, hidden=8, base=2)
    return build_autoencoder(spec, seed)


def check_cycle_gradient(seed: int = 0) -> CheckResult:
    """Gradient check through the whole cycle-swap graph of a tiny autoencoder."""
    t0 = time.time()
    rng = np.random.default_rng(seed)
    with ad.precision(np.float64):
        enc, dec = tiny_autoencoder(seed)
        for t in enc.parameters() + dec.parameters():
            t.data = t.data.astype(np.float64)
            if t.data.ndim == 1:
                t.data = rng.uniform(-0.1, 0.1, t.shape)
        part = LatentPartition((2, 2))
        x = rng.uniform(0, 1, (2, 3, 8, 8))
        xbar = rng.uniform(0, 1, (2, 3, 8, 8))
        classes = np.array([0, 1])
        params = enc.parameters() + dec.parameters()
        return _gradcheck_result("composite L_csr", lambda: cycle_swap_loss(enc, dec, x, xbar, classes, part),
                                 params, t0, max_coords=6, seed=seed)


# ----------------------------------------------------------------- swapping

def check_swap(n: int = 1000, seed: int = 0) -> CheckResult:
    t0 = time.time()
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n):
        m = int(rng.integers(1, 7))
        part = LatentPartition(tuple(rng.integers(1, 6, m)))
        z1 = LatentCode(rng.normal(size=part.d), part)
        z2 = LatentCode(rng.normal(size=part.d), part)
        j = int(rng.integers(m))
        a, b = swap(z1, z2, j)
        aa, bb = swap(a, b, j)
        outside = np.ones(part.d, dtype=bool)
        outside[part.block(j)] = False
        ok = (np.array_equal(aa.vector, z1.vector) and np.array_equal(bb.vector, z2.vector)
              and np.array_equal(a.vector[outside], z1.vector[outside])
              and np.array_equal(a.block(j), z2.block(j)) and np.array_equal(b.block(j), z1.block(j)))
        bad += not ok
    return CheckResult("swap involution and block disjointness", bad == 0, f"{n} codes, {bad} failures",
                       time.time() - t0)


# -------------------------------------------------------------- multigraph

def random_dataset(rng, n: int = 50, cards=None) -> AttributedDataset:
    cards = cards or tuple(int(c) for c in rng.integers(2, 5, int(rng.integers(2, 6))))
    schema = AttributeSchema(tuple(f"a{j}" for j in range(len(cards))),
                             tuple(tuple(str(v) for v in range(c)) for c in cards))
    attrs = np.stack([rng.integers(0, c, n) for c in cards], axis=1)
    return AttributedDataset(schema, attrs)


def check_multigraph_oracle(datasets: int = 5, seed: int = 0) -> CheckResult:
    t0 = time.time()
    rng = np.random.default_rng(seed)
    bad = checked = 0
    for _ in range(datasets):
        ds = random_dataset(rng)
        g = Multigraph(ds)
        rows = ds.attrs.tolist()
        for i, k in itertools.permutations(range(len(ds)), 2):
            want = {j for j in range(ds.m) if rows[i][j] == rows[k][j]}
            bad += g.edge_labels(i, k) != want
            checked += 1
        for i in range(len(ds)):
            for _ in range(10):
                S = list(rng.choice(len(ds), size=int(rng.integers(1, 5)), replace=False))
                want = i in S or all(any(rows[s][j] == rows[i][j] for s in S) for j in range(ds.m))
                bad += g.covers(S, i) != want
                checked += 1
    return CheckResult("edge_labels/covers brute-force oracle", bad == 0, f"{checked} queries, {bad} mismatches",
                       time.time() - t0)


def check_samplers(n: int = 1000, seed: int = 0) -> CheckResult:
    t0 = time.time()
    from .fonts.dataset import FontsConfig, enumerate_combinations
    cfg = FontsConfig.mini()
    ds = AttributedDataset(cfg.schema(), np.array(enumerate_combinations(cfg)))
    g = Multigraph(ds)
    rng = np.random.default_rng(seed)
    bad = 0
    for x in rng.integers(0, len(ds), n):
        grp = sample_group(g, int(x), rng)
        try:
            check_group(g, grp)
        except AssertionError:
            bad += 1
    return CheckResult("sampler soundness", bad == 0, f"{n} group samples, {bad} violations", time.time() - t0)


# ------------------------------------------------------------ persistence

def check_checkpoint_roundtrip(seed: int = 0) -> CheckResult:
    t0 = time.time()
    rng = np.random.default_rng(seed)
    params = {f"p{i}": rng.normal(size=tuple(rng.integers(1, 5, rng.integers(0, 4)))).astype(np.float32)
              for i in range(8)}
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "x.gzsn"
        save_checkpoint(params, path)
        back = load_checkpoint(path)
    ok = back.keys() == params.keys() and all(
        back[k].shape == v.shape and back[k].tobytes() == v.tobytes() for k, v in params.items())
    return CheckResult("checkpoint round trip", ok, "bitwise" if ok else "mismatch", time.time() - t0)


def check_generator_determinism() -> CheckResult:
    t0 = time.time()
    from .fonts.dataset import FontsConfig, generate_dataset
    cfg = FontsConfig(letters="AB", sizes=(20, 30), size_names=("small", "large"),
                      font_colors=("red", "blue"), background_colors=("green", "yellow"),
                      styles=("regular", "italic"))
    with tempfile.TemporaryDirectory() as tmp:
        blobs = []
        for run in ("a", "b"):
            out = Path(tmp) / run
            generate_dataset(cfg, out)
            blobs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    ok = blobs[0] == blobs[1]
    return CheckResult("generator determinism", ok, f"{len(blobs[0])} files byte-identical" if ok else "differs",
                       time.time() - t0)


def run_all(seed: int = 0) -> list[CheckResult]:
    results = [check_swap(seed=seed), check_multigraph_oracle(seed=seed), check_samplers(seed=seed)]
    results += check_layer_gradients(seed)
    results += [check_cycle_gradient(seed), check_checkpoint_roundtrip(seed), check_generator_determinism()]
    return results
