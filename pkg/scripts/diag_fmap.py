"""Diagnostic: can the generator learn features -> SC with noise-only inputs?

Trains only at the highest conditioning step (input is almost pure noise),
which removes the denoise-the-input shortcut. Reports pearson(a0_hat, A_0)
on held-out subjects. Usage: diag_fmap.py LR EPOCHS S [SUBJECTS]
"""

import sys
import time

import numpy as np

from f2s import conndata, netarch, symdiffusion
from f2s import tensorgrad as tg
from f2s.losses import pearson, recon_loss, scc_loss
from f2s.trainer import TrainConfig, _prepare_items, split_dataset


def main() -> None:
    lr = float(sys.argv[1])
    epochs = int(sys.argv[2])
    s = int(sys.argv[3])
    n_subjects = int(sys.argv[4]) if len(sys.argv) > 4 else 200
    beta_t = float(sys.argv[5]) if len(sys.argv) > 5 else 0.02
    cfg = TrainConfig(epochs=epochs, batch_size=16, seed=0, lr=lr, beta_T=beta_t)
    records = conndata.synth_dataset(n_subjects, 16, s, seed=0, with_volumes=False)
    train_recs, val_recs = split_dataset(records, cfg.seed)
    items = _prepare_items(train_recs, cfg.density)
    vitems = _prepare_items(val_recs[:16], cfg.density)
    sched = symdiffusion.build_schedule(cfg.T, cfg.beta_1, cfg.beta_T)
    spec = netarch.ModelSpec(n=16, s=s, model_dim=cfg.model_dim, heads=cfg.heads,
                             layers=cfg.layers, T=cfg.T, d=cfg.d)
    init_rng = np.random.default_rng([cfg.seed, 3])
    gen = netarch.Generator(spec, netarch.init_generator(spec, init_rng), sched)
    netarch.calibrate_generator(gen, items[0].feats, init_rng)
    adam_g = tg.init_adam(gen.params.tensors(), lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 4])
    t_hi = cfg.T - cfg.d
    d_over_t = cfg.d / cfg.T

    def val_cc():
        ccs = []
        for it in vitems:
            a_td = symdiffusion.sample_symmetric_noise(16, rng)
            a0_hat, _ = gen.forward(a_td, it.feats, t_hi, rng)
            ccs.append(pearson(a0_hat.data, it.sc))
        return float(np.mean(ccs))

    t0 = time.time()
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(items))
        for lo in range(0, len(items), cfg.batch_size):
            batch = [items[i] for i in perm[lo:lo + cfg.batch_size]]
            terms = []
            for it in batch:
                noise = symdiffusion.sample_symmetric_noise(16, rng)
                a_td = symdiffusion.diffuse_to(it.sc, t_hi + cfg.d, noise, sched)
                a0_hat, _ = gen.forward(a_td, it.feats, t_hi, rng)
                l_scc, _, _ = scc_loss(a0_hat, it.sc, lambda_bc=cfg.lambda_bc,
                                       density=cfg.density, bc_true=it.bc)
                terms.append(recon_loss(a0_hat, it.sc, d_over_t) + l_scc)
            total = terms[0]
            for term in terms[1:]:
                total = total + term
            total = total * (1.0 / len(terms))
            tg.adam_step(gen.params.tensors(), tg.backward(total), adam_g)
        if epoch % 5 == 0 or epoch == cfg.epochs:
            print(f"lr={lr} s={s} epoch {epoch:3d} ({time.time()-t0:5.0f}s) "
                  f"loss={total.item():.5f} val_cc={val_cc():.4f}", flush=True)


if __name__ == "__main__":
    main()
