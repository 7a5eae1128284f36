"""Alternating diffusion-GAN training loop with deterministic resumption.

Each step samples one conditioning step t for the whole batch, jumps the
empirical matrices to steps t and t+d with independent symmetric noise,
and runs two updates: the critic on (real A_t, detached fake A_t'), then the
generator on the rescored fake plus reconstruction and topology terms.
Checkpoints capture parameters, both optimizers, and the RNG state, so a
resumed run is bitwise identical to an uninterrupted one.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import tensorgrad as tg
from .conndata import SubjectRecord
from .errors import ConfigError, DivergenceError
from .graphmetrics import betweenness, binarize
from .losses import LossReport, disc_loss, gen_adv_loss, recon_loss, scc_loss
from .netarch import (
    CheckpointData,
    Discriminator,
    Generator,
    ModelSpec,
    calibrate_generator,
    init_discriminator,
    init_generator,
    load_checkpoint,
    save_checkpoint,
)
from .symdiffusion import build_schedule, diffuse_to, sample_symmetric_noise
from .tensorgrad import backward

Array = np.ndarray

ABLATIONS = ("full", "no_gan", "no_scc")


@dataclass(frozen=True)
class TrainConfig:
    T: int = 100
    d: int = 10
    layers: int = 3
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    model_dim: int = 64
    heads: int = 4
    lambda_bc: float = 0.1
    seed: int = 0
    density: float = 0.2
    beta_1: float = 1e-4
    beta_T: float = 0.02
    ablation: str = "full"

    def __post_init__(self):
        if self.d < 1 or self.T % self.d != 0:
            raise ConfigError(f"skip step d={self.d} must divide T={self.T}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(
                f"ablation must be one of {ABLATIONS}, got {self.ablation!r}"
            )

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        return cls.from_json(obj)

    def hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def split_dataset(
    records: list[SubjectRecord], seed: int
) -> tuple[list[SubjectRecord], list[SubjectRecord]]:
    """Deterministic 80/20 train/validation split by subject."""
    rng = np.random.default_rng([seed, 2])
    perm = rng.permutation(len(records))
    n_train = int(np.floor(0.8 * len(records)))
    train = [records[i] for i in perm[:n_train]]
    val = [records[i] for i in perm[n_train:]]
    return train, val


@dataclass
class _Item:
    feats: Array
    sc: Array
    bc: Array  # cached betweenness of the binarized empirical matrix


def _prepare_items(records: list[SubjectRecord], density: float) -> list[_Item]:
    items = []
    for rec in records:
        if rec.empirical_sc is None:
            raise ConfigError(f"training subject {rec.id} has no empirical matrix")
        sc = rec.empirical_sc.values
        items.append(
            _Item(feats=rec.features(), sc=sc, bc=betweenness(binarize(sc, density)))
        )
    return items


def train_step(
    batch: list[_Item],
    gen: Generator,
    disc: Discriminator,
    adam_gen: tg.AdamState,
    adam_disc: tg.AdamState,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> LossReport:
    """One alternating update on a batch; returns the step's loss report."""
    sched = gen.sched
    d_over_t = cfg.d / cfg.T
    # One conditioning step per batch. The generator's input lives at t + d,
    # so t ranges over {0, d, ..., T - d}: the noisier endpoint stays inside
    # the schedule and every embedding used at inference gets trained.
    grid = np.arange(0, cfg.T, cfg.d)
    t = int(grid[rng.integers(len(grid))])
    n = batch[0].sc.shape[0]
    reals, fakes, a0_hats = [], [], []
    for item in batch:
        noise_t = sample_symmetric_noise(n, rng)
        noise_td = sample_symmetric_noise(n, rng)
        a_t = diffuse_to(item.sc, t, noise_t, sched)
        a_td = diffuse_to(item.sc, t + cfg.d, noise_td, sched)
        a0_hat, a_t_fake = gen.forward(a_td, item.feats, t, rng)
        reals.append(a_t)
        fakes.append(a_t_fake)
        a0_hats.append(a0_hat)

    l_d = 0.0
    if cfg.ablation != "no_gan":
        scores_real = [disc.forward(a, t) for a in reals]
        scores_fake = [disc.forward(f.detach(), t) for f in fakes]
        loss_d = disc_loss(scores_real, scores_fake, d_over_t)
        l_d = loss_d.item()
        if not np.isfinite(l_d):
            raise DivergenceError(f"discriminator loss diverged at t={t}")
        tg.adam_step(disc.params.tensors(), backward(loss_d), adam_disc)

    gen_terms = []
    l_g = 0.0
    if cfg.ablation != "no_gan":
        rescored = [disc.forward(f, t) for f in fakes]
        loss_g = gen_adv_loss(rescored, d_over_t)
        l_g = loss_g.item()
        gen_terms.append(loss_g)
    mse_terms = [
        recon_loss(a0_hat, item.sc, d_over_t)
        for a0_hat, item in zip(a0_hats, batch)
    ]
    loss_mse = mse_terms[0]
    for term in mse_terms[1:]:
        loss_mse = loss_mse + term
    loss_mse = loss_mse * (1.0 / len(batch))
    l_mse = loss_mse.item()
    gen_terms.append(loss_mse)

    l_scc_corr = l_scc_bc = 0.0
    if cfg.ablation != "no_scc":
        corr_vals, bc_vals, scc_tensors = [], [], []
        for a0_hat, item in zip(a0_hats, batch):
            loss_scc, corr, bc_gap = scc_loss(
                a0_hat, item.sc,
                lambda_bc=cfg.lambda_bc, density=cfg.density, bc_true=item.bc,
            )
            scc_tensors.append(loss_scc)
            corr_vals.append(corr)
            bc_vals.append(bc_gap)
        loss_scc_mean = scc_tensors[0]
        for term in scc_tensors[1:]:
            loss_scc_mean = loss_scc_mean + term
        loss_scc_mean = loss_scc_mean * (1.0 / len(batch))
        gen_terms.append(loss_scc_mean)
        l_scc_corr = float(np.mean(corr_vals))
        l_scc_bc = float(np.mean(bc_vals))

    total = gen_terms[0]
    for term in gen_terms[1:]:
        total = total + term
    if not np.isfinite(total.item()):
        raise DivergenceError(f"generator loss diverged at t={t}")
    tg.adam_step(gen.params.tensors(), backward(total), adam_gen)
    return LossReport(
        l_d=l_d, l_g=l_g, l_mse=l_mse, l_scc_corr=l_scc_corr, l_scc_bc=l_scc_bc
    )


LOG_COLUMNS = ("epoch", "l_d", "l_g", "l_mse", "l_scc_corr", "l_scc_bc")


def train(
    records: list[SubjectRecord],
    cfg: TrainConfig,
    out_dir,
    resume=None,
) -> CheckpointData:
    """Run the fixed epoch budget; write a checkpoint and log row per epoch.

    ``resume`` names a checkpoint file: training continues after its epoch
    with the exact optimizer and RNG state, reproducing an uninterrupted run
    bit for bit. On divergence the current state is checkpointed before the
    error propagates.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_records, _ = split_dataset(records, cfg.seed)
    items = _prepare_items(train_records, cfg.density)
    sched = build_schedule(cfg.T, cfg.beta_1, cfg.beta_T)
    config_hash = cfg.hash()
    log_path = out / "train_log.csv"
    ckpt_path = out / "checkpoint.ckpt"

    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.config_hash != config_hash:
            raise ConfigError(
                f"checkpoint {resume} was written for a different config "
                f"(hash {ckpt.config_hash[:12]} != {config_hash[:12]})"
            )
        spec = ckpt.spec
        gen = Generator(spec, ckpt.gen, sched)
        disc = Discriminator(spec, ckpt.disc)
        adam_gen, adam_disc = ckpt.adam_gen, ckpt.adam_disc
        rng = np.random.default_rng()
        rng.bit_generator.state = ckpt.rng_state
        start_epoch = ckpt.epoch
    else:
        n = items[0].sc.shape[0]
        s = items[0].feats.shape[1]
        spec = ModelSpec(
            n=n, s=s, model_dim=cfg.model_dim, heads=cfg.heads,
            layers=cfg.layers, T=cfg.T, d=cfg.d,
        )
        init_rng = np.random.default_rng([cfg.seed, 3])
        gen = Generator(spec, init_generator(spec, init_rng), sched)
        disc = Discriminator(spec, init_discriminator(spec, init_rng))
        calibrate_generator(gen, items[0].feats, init_rng)
        adam_gen = tg.init_adam(gen.params.tensors(), lr=cfg.lr)
        adam_disc = tg.init_adam(disc.params.tensors(), lr=cfg.lr)
        rng = np.random.default_rng([cfg.seed, 4])
        start_epoch = 0
        with open(log_path, "w", newline="") as fh:
            csv.writer(fh).writerow(LOG_COLUMNS)

    def snapshot(epoch: int) -> CheckpointData:
        return CheckpointData(
            spec=spec, gen=gen.params, disc=disc.params,
            adam_gen=adam_gen, adam_disc=adam_disc, epoch=epoch,
            rng_state=rng.bit_generator.state, config_hash=config_hash,
            config=cfg.to_json(),
        )

    ckpt = snapshot(start_epoch)
    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        perm = rng.permutation(len(items))
        reports = []
        try:
            for lo in range(0, len(items), cfg.batch_size):
                batch = [items[i] for i in perm[lo : lo + cfg.batch_size]]
                reports.append(
                    train_step(batch, gen, disc, adam_gen, adam_disc, cfg, rng)
                )
        except DivergenceError as exc:
            save_checkpoint(ckpt_path, snapshot(epoch - 1))
            raise DivergenceError(f"epoch {epoch}: {exc}")
        means = np.mean([r.as_row() for r in reports], axis=0)
        with open(log_path, "a", newline="") as fh:
            csv.writer(fh).writerow(
                [epoch] + [format(v, ".17g") for v in means]
            )
        ckpt = snapshot(epoch)
        save_checkpoint(ckpt_path, ckpt)
    return ckpt
