"""Calibration sweep: learning rate / epochs vs held-out CC and MAE.

Usage: python scripts/tune_training.py LR EPOCHS [SUBJECTS] [SEED] [ABLATION]
"""

import sys
import time

import numpy as np

from f2s import conndata, netarch, symdiffusion
from f2s import tensorgrad as tg
from f2s.cli import subject_rng
from f2s.graphmetrics import metric_errors
from f2s.trainer import TrainConfig, _prepare_items, split_dataset, train_step


def main() -> None:
    lr = float(sys.argv[1])
    epochs = int(sys.argv[2])
    n_subjects = int(sys.argv[3]) if len(sys.argv) > 3 else 200
    seed = int(sys.argv[4]) if len(sys.argv) > 4 else 0
    ablation = sys.argv[5] if len(sys.argv) > 5 else "full"
    beta_t = float(sys.argv[6]) if len(sys.argv) > 6 else 0.02
    s_len = int(sys.argv[7]) if len(sys.argv) > 7 else 128
    cfg = TrainConfig(
        epochs=epochs, batch_size=16, seed=seed, lr=lr,
        ablation=ablation, beta_T=beta_t,
    )
    records = conndata.synth_dataset(n_subjects, 16, s_len, seed=seed, with_volumes=False)
    train_recs, val_recs = split_dataset(records, cfg.seed)
    items = _prepare_items(train_recs, cfg.density)
    sched = symdiffusion.build_schedule(cfg.T, cfg.beta_1, cfg.beta_T)
    spec = netarch.ModelSpec(
        n=16, s=s_len, model_dim=cfg.model_dim, heads=cfg.heads,
        layers=cfg.layers, T=cfg.T, d=cfg.d,
    )
    init_rng = np.random.default_rng([cfg.seed, 3])
    gen = netarch.Generator(spec, netarch.init_generator(spec, init_rng), sched)
    disc = netarch.Discriminator(spec, netarch.init_discriminator(spec, init_rng))
    netarch.calibrate_generator(gen, items[0].feats, init_rng)
    adam_g = tg.init_adam(gen.params.tensors(), lr=cfg.lr)
    adam_d = tg.init_adam(disc.params.tensors(), lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 4])

    def val_metrics(k=16):
        maes, ccs = [], []
        for rec in val_recs[:k]:
            pred = symdiffusion.sample_connectome(
                gen, rec.timeseries.values, sched, cfg.d, subject_rng(cfg.seed, rec.id)
            )
            rep = metric_errors(pred, rec.empirical_sc, cfg.density)
            maes.append(rep.mae)
            ccs.append(rep.cc)
        return float(np.mean(maes)), float(np.mean(ccs))

    t0 = time.time()
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(items))
        for lo in range(0, len(items), cfg.batch_size):
            batch = [items[i] for i in perm[lo : lo + cfg.batch_size]]
            rep = train_step(batch, gen, disc, adam_g, adam_d, cfg, rng)
        if epoch % 10 == 0 or epoch == cfg.epochs:
            mae, cc = val_metrics()
            print(
                f"lr={lr} ablation={ablation} epoch {epoch:3d} ({time.time()-t0:5.0f}s) "
                f"l_mse={rep.l_mse:.5f} l_d={rep.l_d:.4f} corr={rep.l_scc_corr:.4f} "
                f"| val MAE={mae:.4f} CC={cc:.4f}",
                flush=True,
            )


if __name__ == "__main__":
    main()
