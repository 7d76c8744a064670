"""GZS-Net training: latent partition, swap, the three loss terms, baselines.

Loss terms are per-pixel L1 means over the images each term decodes, so the
weights ``lambda_sr`` / ``lambda_csr`` do not depend on image extent or on
the number of attribute classes.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError
from .data import AttributedDataset
from .gsl import GroupSample, InfeasibleError, Multigraph, sample_group
from .nets import Decoder, Encoder, NetSpec, build_autoencoder
from .optim import Adam

log = logging.getLogger(__name__)

MODES = ("gzs", "ae", "ae-ds")
HISTORY_COLUMNS = ("step", "L_r", "L_sr", "L_csr", "total")


class ContractError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    pass


# ----------------------------------------------------------------- partition

@dataclass(frozen=True)
class LatentPartition:
    sizes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if not self.sizes or min(self.sizes) < 1:
            raise ValueError(f"every block needs d_j >= 1, got {self.sizes}")

    @classmethod
    def equal(cls, d: int, m: int) -> "LatentPartition":
        if d % m:
            raise ValueError(f"cannot split {d} latent dims equally among {m} classes")
        return cls((d // m,) * m)

    @property
    def m(self) -> int:
        return len(self.sizes)

    @property
    def d(self) -> int:
        return sum(self.sizes)

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(o) for o in np.concatenate([[0], np.cumsum(self.sizes)[:-1]]))

    def block(self, j: int) -> slice:
        if not 0 <= j < self.m:
            raise IndexError(f"class {j} outside [0, {self.m})")
        o = self.offsets[j]
        return slice(o, o + self.sizes[j])

    def column_classes(self) -> np.ndarray:
        return np.repeat(np.arange(self.m), self.sizes)

    def mask(self, classes) -> np.ndarray:
        """Boolean ``[N, d]``: row n is true on the block of ``classes[n]``."""
        classes = np.asarray(classes)
        if classes.size and (classes.min() < 0 or classes.max() >= self.m):
            raise IndexError(f"class index outside [0, {self.m})")
        return self.column_classes()[None, :] == classes[:, None]


@dataclass(frozen=True)
class LatentCode:
    vector: np.ndarray
    partition: LatentPartition

    def __post_init__(self):
        if np.shape(self.vector) != (self.partition.d,):
            raise ValueError(f"code of length {np.shape(self.vector)} does not fit partition d={self.partition.d}")

    def block(self, j: int) -> np.ndarray:
        return self.vector[self.partition.block(j)]


def swap(z1: LatentCode, z2: LatentCode, j: int) -> tuple[LatentCode, LatentCode]:
    """Exchange block ``j`` of two codes; inputs are left untouched."""
    if z1.partition != z2.partition:
        raise ValueError("cannot swap codes with different partitions")
    sl = z1.partition.block(j)
    a, b = z1.vector.copy(), z2.vector.copy()
    a[sl], b[sl] = z2.vector[sl], z1.vector[sl]
    return LatentCode(a, z1.partition), LatentCode(b, z2.partition)


def swap_latents(z1: Tensor, z2: Tensor, classes, partition: LatentPartition) -> tuple[Tensor, Tensor]:
    """Row-wise differentiable swap of block ``classes[n]`` between ``z1[n]`` and ``z2[n]``."""
    if z1.shape[1] != partition.d:
        raise ad.ShapeError(f"latent width {z1.shape[1]} != partition d {partition.d}")
    mask = partition.mask(classes)
    return ad.mix(z1, z2, mask), ad.mix(z2, z1, mask)


# --------------------------------------------------------------- loss terms

Net = Callable[[Tensor], Tensor]


def _const(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def reconstruction_loss(encode: Net, decode: Net, x) -> Tensor:
    x = _const(x)
    return ad.l1_loss(decode(encode(x)), x)


def swap_reconstruction_loss(encode: Net, decode: Net, x, others, classes,
                             partition: LatentPartition) -> Tensor:
    """Pairs ``(x[n], others[n])`` share exactly class ``classes[n]``; swapping that
    block must leave both decodes unchanged."""
    x, others = _const(x), _const(others)
    n = x.shape[0]
    z = encode(ad.concat([x, others]))
    zs, zos = swap_latents(ad.narrow(z, 0, 0, n), ad.narrow(z, 0, n, 2 * n), classes, partition)
    return ad.l1_loss(decode(ad.concat([zs, zos])), ad.concat([x, others]))


def cycle_swap_loss(encode: Net, decode: Net, x, xbar, classes, partition: LatentPartition) -> Tensor:
    """Encode, swap, decode, re-encode, swap back, decode; compare to the originals."""
    x, xbar = _const(x), _const(xbar)
    n = x.shape[0]
    z = encode(ad.concat([x, xbar]))
    zs, zbs = swap_latents(ad.narrow(z, 0, 0, n), ad.narrow(z, 0, n, 2 * n), classes, partition)
    zh = encode(decode(ad.concat([zs, zbs])))
    zhs, zhbs = swap_latents(ad.narrow(zh, 0, 0, n), ad.narrow(zh, 0, n, 2 * n), classes, partition)
    return ad.l1_loss(decode(ad.concat([zhs, zhbs])), ad.concat([x, xbar]))


class ClassifierHeads:
    """One linear-softmax head per attribute class, reading only its block."""

    def __init__(self, partition: LatentPartition, cardinalities: Sequence[int], names: Sequence[str]):
        if len(cardinalities) != partition.m:
            raise ValueError("one head per latent block is required")
        self.partition = partition
        self.cardinalities = tuple(cardinalities)
        self.names = tuple(names)
        self.params: dict[str, Tensor] = {}
        for name, d_j, k in zip(names, partition.sizes, cardinalities):
            # zero init gives uniform logits
            self.params[f"heads.{name}.weight"] = Tensor(np.zeros((d_j, k)), requires_grad=True, name=f"heads.{name}.weight")
            self.params[f"heads.{name}.bias"] = Tensor(np.zeros(k), requires_grad=True, name=f"heads.{name}.bias")

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def logits(self, z: Tensor, j: int) -> Tensor:
        sl = self.partition.block(j)
        g = ad.narrow(z, 1, sl.start, sl.stop)
        name = self.names[j]
        return ad.dense(g, self.params[f"heads.{name}.weight"], self.params[f"heads.{name}.bias"])


def aeds_heads_loss(heads: ClassifierHeads, z: Tensor, labels) -> Tensor:
    """Sum over classes of the mean cross-entropy of each head."""
    labels = np.asarray(labels).reshape(z.shape[0], heads.partition.m)
    total = None
    for j in range(heads.partition.m):
        if labels[:, j].min() < 0 or labels[:, j].max() >= heads.cardinalities[j]:
            raise ValueError(f"label for {heads.names[j]!r} out of range")
        ce = ad.cross_entropy(heads.logits(z, j), labels[:, j])
        total = ce if total is None else ad.add(total, ce)
    return total


# ------------------------------------------------------------------- config

@dataclass(frozen=True)
class TrainConfig:
    mode: str = "gzs"
    lambda_sr: float | None = None
    lambda_csr: float | None = None
    lambda_ds: float = 1.0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 20
    steps: int | None = None
    batch: int = 16
    partition: tuple[int, ...] = (20, 20, 20, 20, 20)
    seed: int = 0
    partner: str = "no-overlap"
    checkpoint_every: int = 500
    channel_scale: int = 1
    base: int = 16
    hidden: int = 256
    res_blocks: int = 3

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        default = 1.0 if self.mode == "gzs" else 0.0
        for key in ("lambda_sr", "lambda_csr"):
            v = getattr(self, key)
            if v is None:
                object.__setattr__(self, key, default)
            elif v < 0:
                raise ConfigError(f"{key} must be >= 0")
            elif self.mode != "gzs" and v != 0:
                raise ConfigError(f"{key} must be 0 in {self.mode} mode")
        if self.mode == "gzs" and (self.lambda_sr == 0 or self.lambda_csr == 0):
            log.warning("gzs mode with a zero swap weight (lambda_sr=%s, lambda_csr=%s)",
                        self.lambda_sr, self.lambda_csr)
        if self.batch < 1 or self.epochs < 0 or self.checkpoint_every < 1:
            raise ConfigError("batch and checkpoint_every must be >= 1, epochs >= 0")
        if self.partner not in ("no-overlap", "any"):
            raise ConfigError(f"partner must be 'no-overlap' or 'any', got {self.partner!r}")
        LatentPartition(self.partition)

    def latent_partition(self) -> LatentPartition:
        return LatentPartition(self.partition)

    def net_spec(self, dataset: AttributedDataset) -> NetSpec:
        extent = int(dataset.header.get("extent", 32))
        return NetSpec("encoder", height=extent, width=extent, channels=3,
                       latent=sum(self.partition), channel_scale=self.channel_scale,
                       res_blocks=self.res_blocks, hidden=self.hidden, base=self.base)


@dataclass
class LossReport:
    step: int
    l_r: float
    l_sr: float
    l_csr: float
    total: float

    def row(self) -> tuple:
        return (self.step, self.l_r, self.l_sr, self.l_csr, self.total)


# ------------------------------------------------------------------ trainer

@dataclass
class Model:
    encoder: Encoder
    decoder: Decoder
    partition: LatentPartition
    heads: ClassifierHeads | None = None

    def parameters(self) -> list[Tensor]:
        ps = self.encoder.parameters() + self.decoder.parameters()
        if self.heads is not None:
            ps += self.heads.parameters()
        return ps

    def named(self) -> dict[str, Tensor]:
        out = {**self.encoder.params, **self.decoder.params}
        if self.heads is not None:
            out.update(self.heads.params)
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        s = self.encoder.spec
        state = {k: t.data for k, t in self.named().items()}
        state["meta.partition"] = np.asarray(self.partition.sizes, dtype=np.float32)
        state["meta.arch"] = np.asarray([s.height, s.width, s.channels, s.latent, s.channel_scale,
                                         s.res_blocks, s.hidden, s.base], dtype=np.float32)
        return state

    def encode(self, images: np.ndarray, batch: int = 256) -> np.ndarray:
        out = [self.encoder(Tensor(images[i:i + batch])).data for i in range(0, len(images), batch)]
        return np.concatenate(out) if out else np.zeros((0, self.partition.d), dtype=np.float32)

    def decode(self, z: np.ndarray, batch: int = 256) -> np.ndarray:
        """Images in [0, 1]; the raw decoder output is clipped."""
        out = np.concatenate([self.decoder(Tensor(z[i:i + batch])).data for i in range(0, len(z), batch)])
        return np.clip(out, 0.0, 1.0)


def load_model(path: str | Path) -> Model:
    state = load_checkpoint(path)
    try:
        sizes = tuple(int(v) for v in state.pop("meta.partition"))
        h, w, c, latent, scale, res, hidden, base = (int(v) for v in state.pop("meta.arch"))
    except KeyError as exc:
        raise ValueError(f"{path}: checkpoint lacks {exc.args[0]}") from None
    spec = NetSpec("encoder", h, w, c, latent, scale, res, hidden, base)
    enc, dec = build_autoencoder(spec, 0)
    partition = LatentPartition(sizes)
    named = {**enc.params, **dec.params}
    for k, t in named.items():
        if k not in state:
            raise ValueError(f"{path}: missing parameter {k}")
        if state[k].shape != t.shape:
            raise ValueError(f"{path}: {k} has shape {state[k].shape}, expected {t.shape}")
        t.data = state[k].copy()
    heads = None
    head_keys = [k for k in state if k.startswith("heads.")]
    if head_keys:
        names = [k.split(".")[1] for k in head_keys if k.endswith(".weight")]
        cards = [state[f"heads.{n}.weight"].shape[1] for n in names]
        heads = ClassifierHeads(partition, cards, names)
        for k, t in heads.params.items():
            t.data = state[k].copy()
    return Model(enc, dec, partition, heads)


class Trainer:
    """Holds nets, optimizer and RNG streams for one training run."""

    def __init__(self, config: TrainConfig, dataset: AttributedDataset, graph: Multigraph):
        self.config = config
        self.dataset = dataset
        self.graph = graph
        self.partition = config.latent_partition()
        if self.partition.m != dataset.m:
            raise ConfigError(f"partition has {self.partition.m} blocks but the data has {dataset.m} classes")
        self.images = dataset.images()
        enc, dec = build_autoencoder(config.net_spec(dataset), config.seed)
        heads = None
        if config.mode == "ae-ds":
            heads = ClassifierHeads(self.partition, dataset.schema.cardinalities, dataset.schema.names)
        self.model = Model(enc, dec, self.partition, heads)
        self.opt = Adam(self.model.parameters(), lr=config.lr, betas=(config.beta1, config.beta2), eps=config.eps)
        center_ss, group_ss = np.random.SeedSequence(config.seed).spawn(2)
        self.center_rng = np.random.default_rng(center_ss)
        self.group_rng = np.random.default_rng(group_ss)
        self.step = 0
        self.history: list[LossReport] = []

    @property
    def uses_groups(self) -> bool:
        return self.config.lambda_sr > 0 or self.config.lambda_csr > 0

    def steps_per_epoch(self) -> int:
        return math.ceil(len(self.graph.members) / self.config.batch)

    def total_steps(self) -> int:
        if self.config.steps is not None:
            return self.config.steps
        return self.config.epochs * self.steps_per_epoch()

    def batches(self):
        """Center-id batches: each epoch is a fresh permutation of the members."""
        members = self.graph.members
        while True:
            perm = members[self.center_rng.permutation(len(members))]
            for i in range(0, len(perm), self.config.batch):
                yield perm[i:i + self.config.batch]

    def make_groups(self, centers) -> list[GroupSample]:
        groups = []
        for x in centers:
            try:
                groups.append(sample_group(self.graph, int(x), self.group_rng, self.config.partner))
            except InfeasibleError as exc:
                raise InfeasibleError(f"training sampler: {exc}", exc.attribute) from None
        return groups

    def _check_one_overlap(self, centers: np.ndarray, others: np.ndarray, classes: np.ndarray) -> None:
        a = self.dataset.attrs
        agree = a[others] == a[centers]
        ok = (agree.sum(axis=1) == 1) & agree[np.arange(len(classes)), classes]
        if not ok.all():
            bad = int(np.flatnonzero(~ok)[0])
            raise ContractError(f"pair ({centers[bad]}, {others[bad]}) does not share exactly class {classes[bad]}")

    def train_step(self, centers: Sequence[int], groups: Sequence[GroupSample] | None = None) -> LossReport:
        cfg = self.config
        centers = np.asarray(centers, dtype=np.int64)
        if len(centers) == 0:
            raise ValueError("empty batch")
        use_sr, use_csr = cfg.lambda_sr > 0, cfg.lambda_csr > 0
        if (use_sr or use_csr) and groups is None:
            raise ValueError("swap terms need group samples")
        B, m = len(centers), self.partition.m
        X = self.images
        enc, dec, part = self.model.encoder, self.model.decoder, self.partition
        stage = "encode"
        self.opt.zero_grad()
        try:
            with ad.Graph() as graph:
                enc_ids = [centers]
                if use_sr:
                    others = np.array([g.overlap for g in groups], dtype=np.int64).reshape(-1)
                    sr_classes = np.tile(np.arange(m), B)
                    sr_centers = np.repeat(centers, m)
                    self._check_one_overlap(sr_centers, others, sr_classes)
                    enc_ids.append(others)
                if use_csr:
                    partners = np.array([g.partner for g in groups], dtype=np.int64)
                    cyc = np.array([g.cycle_class for g in groups], dtype=np.int64)
                    enc_ids.append(partners)
                ids = np.concatenate(enc_ids)
                z = enc(Tensor(X[ids]))
                zc = ad.narrow(z, 0, 0, B)
                pos = B
                to_decode = [zc]
                if use_sr:
                    zo = ad.narrow(z, 0, pos, pos + B * m)
                    pos += B * m
                    zs, zos = swap_latents(ad.take(zc, np.repeat(np.arange(B), m)), zo, sr_classes, part)
                    to_decode += [zs, zos]
                if use_csr:
                    zp = ad.narrow(z, 0, pos, pos + B)
                    z1, zp1 = swap_latents(zc, zp, cyc, part)
                    to_decode += [z1, zp1]
                stage = "decode"
                out = dec(ad.concat(to_decode) if len(to_decode) > 1 else zc)

                stage = "L_r"
                l_r = ad.l1_loss(ad.narrow(out, 0, 0, B), Tensor(X[centers]))
                total = l_r
                ds = None
                if self.model.heads is not None:
                    stage = "L_ds"
                    ds = aeds_heads_loss(self.model.heads, zc, self.dataset.attrs[centers])
                    l_r = ad.add(l_r, ad.scale(ds, cfg.lambda_ds))
                    total = l_r
                pos = B
                l_sr = l_csr = None
                if use_sr:
                    stage = "L_sr"
                    n = 2 * B * m
                    target = np.concatenate([X[sr_centers], X[others]])
                    l_sr = ad.l1_loss(ad.narrow(out, 0, pos, pos + n), Tensor(target))
                    pos += n
                    total = ad.add(total, ad.scale(l_sr, cfg.lambda_sr))
                if use_csr:
                    stage = "L_csr"
                    xhat = ad.narrow(out, 0, pos, pos + 2 * B)
                    zh = enc(xhat)
                    zh1, zhp1 = swap_latents(ad.narrow(zh, 0, 0, B), ad.narrow(zh, 0, B, 2 * B), cyc, part)
                    back = dec(ad.concat([zh1, zhp1]))
                    l_csr = ad.l1_loss(back, Tensor(np.concatenate([X[centers], X[partners]])))
                    total = ad.add(total, ad.scale(l_csr, cfg.lambda_csr))
                stage = "backward"
                graph.backward(total)
        except ad.NonFiniteError as exc:
            raise TrainingDiverged(
                f"step {self.step + 1}: non-finite value in term {stage} at node {exc.node} ({exc.op})") from exc
        self.opt.step()
        self.step += 1
        report = LossReport(
            self.step,
            l_r.item(),
            l_sr.item() if l_sr is not None else 0.0,
            l_csr.item() if l_csr is not None else 0.0,
            total.item(),
        )
        if ds is not None:
            log.debug("step %d classification loss %.5f", self.step, ds.item())
        self.history.append(report)
        return report

    def run(self, out_dir: str | Path | None = None, progress_every: int = 50) -> list[LossReport]:
        out = Path(out_dir) if out_dir is not None else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        total = self.total_steps()
        batches = self.batches()
        while self.step < total:
            centers = next(batches)
            groups = self.make_groups(centers) if self.uses_groups else None
            rep = self.train_step(centers, groups)
            if progress_every and (self.step % progress_every == 0 or self.step == total):
                log.info("step %d/%d  L_r=%.4f L_sr=%.4f L_csr=%.4f total=%.4f",
                         rep.step, total, rep.l_r, rep.l_sr, rep.l_csr, rep.total)
            if out is not None and (self.step % self.config.checkpoint_every == 0 or self.step == total):
                save_checkpoint(self.model.state_dict(), out / f"ckpt-{self.step:06d}.gzsn")
        if out is not None:
            if total == 0:
                save_checkpoint(self.model.state_dict(), out / f"ckpt-{0:06d}.gzsn")
            write_history(out / "history.csv", self.history)
        return self.history


def write_history(path: str | Path, history: Sequence[LossReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for r in history:
            w.writerow([r.step, repr(r.l_r), repr(r.l_sr), repr(r.l_csr), repr(r.total)])


def read_history(path: str | Path) -> list[LossReport]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [LossReport(int(r["step"]), float(r["L_r"]), float(r["L_sr"]), float(r["L_csr"]), float(r["total"]))
            for r in rows]


def latest_checkpoint(run_dir: str | Path) -> Path:
    ckpts = sorted(Path(run_dir).glob("ckpt-*.gzsn"))
    if not ckpts:
        raise FileNotFoundError(f"no checkpoints in {run_dir}")
    return ckpts[-1]


def train(config: TrainConfig, dataset: AttributedDataset, graph: Multigraph,
          out_dir: str | Path | None = None) -> Trainer:
    trainer = Trainer(config, dataset, graph)
    trainer.run(out_dir)
    return trainer
