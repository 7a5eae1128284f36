"""Training objectives: least-squares adversarial, reconstruction, topology.

All loss builders return scalar autodiff tensors. The topology term pairs a
differentiable (1 - Pearson) similarity with a betweenness-centrality
mismatch; path counts on a binarized graph are integers, so the centrality
part enters as a monitored constant and contributes no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensorgrad as tg
from .errors import ShapeError
from .graphmetrics import betweenness, binarize
from .tensorgrad import Tensor

Array = np.ndarray


@dataclass
class LossReport:
    """Scalar loss values for one step or one epoch (means over steps)."""

    l_d: float
    l_g: float
    l_mse: float
    l_scc_corr: float
    l_scc_bc: float
    lambda_mse: float = 1.0
    lambda_scc: float = 1.0

    FIELDS = ("l_d", "l_g", "l_mse", "l_scc_corr", "l_scc_bc")

    def as_row(self) -> list[float]:
        return [getattr(self, f) for f in self.FIELDS]


def _mean_scalars(terms: Sequence[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return acc * (1.0 / len(terms))


def disc_loss(
    scores_real: Sequence[Tensor], scores_fake: Sequence[Tensor], d_over_t: float
) -> Tensor:
    """(d/T) * [mean((real - 1)^2) + mean(fake^2)] over the batch."""
    real = _mean_scalars([(s - 1.0) * (s - 1.0) for s in scores_real])
    fake = _mean_scalars([s * s for s in scores_fake])
    return (real + fake) * d_over_t


def gen_adv_loss(scores_fake: Sequence[Tensor], d_over_t: float) -> Tensor:
    """(d/T) * mean((fake - 1)^2); zero exactly when the critic is fooled."""
    return _mean_scalars([(s - 1.0) * (s - 1.0) for s in scores_fake]) * d_over_t


def recon_loss(a0_hat: Tensor, a0: Array, d_over_t: float) -> Tensor:
    """(d/T) * mean squared error over off-diagonal entries."""
    a0 = np.asarray(a0, dtype=np.float64)
    if a0_hat.data.shape != a0.shape:
        raise ShapeError(
            f"recon_loss: shapes {a0_hat.data.shape} and {a0.shape} differ"
        )
    n = a0.shape[0]
    off = 1.0 - np.eye(n)
    diff = a0_hat - a0
    return tg.sum_all(diff * diff * off) * (d_over_t / (n * (n - 1)))


def pearson(a, b) -> float:
    """Sample Pearson correlation over strict upper-triangle entries.

    Uses r = (num / ss_a) * sqrt(ss_a / ss_b), which evaluates to exactly
    1.0 for identical non-constant inputs. Zero variance on either side
    returns 0.0 (defined degenerate).
    """
    av = np.asarray(getattr(a, "values", a), dtype=np.float64)
    bv = np.asarray(getattr(b, "values", b), dtype=np.float64)
    if av.shape != bv.shape:
        raise ShapeError(f"pearson: shapes {av.shape} and {bv.shape} differ")
    iu = np.triu_indices(av.shape[0], 1)
    x = av[iu]
    y = bv[iu]
    xc = x - x.mean()
    yc = y - y.mean()
    ss_x = float(xc @ xc)
    ss_y = float(yc @ yc)
    if ss_x == 0.0 or ss_y == 0.0:
        return 0.0
    num = float(xc @ yc)
    return (num / ss_x) * float(np.sqrt(ss_x / ss_y))


# Stabilizer for the correlation gradient: the exact Pearson gradient grows
# like 1 / ||spread||, which is the restoring force that keeps predictions
# from collapsing to a constant, but unbounded it destabilizes the first
# steps. The floor caps it near degeneracy without blunting it elsewhere.
PEARSON_GRAD_FLOOR = 1e-4


def _pearson_tensor(a0_hat: Tensor, a0: Array) -> Tensor | None:
    """Differentiable Pearson of upper-triangle entries vs a constant target.

    Returns None when either side has zero variance. The reported value is
    exact (ratio form, so identical inputs give exactly 1.0); the gradient
    flows through a floor-stabilized denominator so near-constant
    predictions cannot blow up the update.
    """
    x = tg.triu_vec(a0_hat)
    y = Tensor(a0[np.triu_indices(a0.shape[0], 1)].reshape(-1, 1))
    xc = x - tg.mean(x)
    yc = y - tg.mean(y)
    ss_x = tg.sum_all(xc * xc)
    ss_y = tg.sum_all(yc * yc)
    ssx_v = ss_x.item()
    ssy_v = ss_y.item()
    if ssx_v == 0.0 or ssy_v == 0.0:
        return None
    num = tg.sum_all(xc * yc)
    r_val = (num.item() / ssx_v) * float(np.sqrt(ssx_v / ssy_v))
    ss_x_stab = ss_x + PEARSON_GRAD_FLOOR
    r_stab = (num / ss_x_stab) * tg.sqrt(ss_x_stab / ss_y)
    return tg.value_override(r_stab, r_val)


def scc_loss(
    a0_hat: Tensor,
    a0: Array,
    lambda_bc: float = 0.1,
    density: float = 0.2,
    bc_true: Array | None = None,
) -> tuple[Tensor, float, float]:
    """Topology consistency loss: (1 - pearson) + lambda_bc * sum |BC diff|.

    Returns (loss tensor, correlation part, raw centrality mismatch). The
    centrality part uses binarized graphs and is non-differentiable; it adds
    its value to the loss and nothing to the gradient. ``bc_true`` lets
    callers cache the empirical side's centrality.
    """
    a0 = np.asarray(a0, dtype=np.float64)
    if a0_hat.data.shape != a0.shape:
        raise ShapeError(f"scc_loss: shapes {a0_hat.data.shape} and {a0.shape} differ")
    r = _pearson_tensor(a0_hat, a0)
    corr_term = (1.0 - r) if r is not None else Tensor(1.0)
    if bc_true is None:
        bc_true = betweenness(binarize(a0, density))
    bc_pred = betweenness(binarize(a0_hat.data, density))
    bc_gap = float(np.abs(bc_pred - bc_true).sum())
    loss = corr_term + (lambda_bc * bc_gap)
    return loss, float(corr_term.item()), bc_gap
