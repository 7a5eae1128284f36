"""Symmetric forward diffusion, posterior re-noising, and few-step sampling.

Noise injected into a connectivity matrix must stay symmetric with a zero
diagonal, so every draw is the symmetrized matrix S = (eps + eps^T) / 2 with
diag(eps) zeroed first; off-diagonal entries then have variance 1/2. The
closed-form jump to step t is

    A_t = sqrt(eta_bar_t) * A_0 + sqrt(1 - eta_bar_t) * S

with eta_bar the cumulative product of 1 - beta and eta_bar_0 = 1 by
convention (t = 0 is the identity). Re-noising a predicted clean matrix is
the same formula, so the two share one implementation; it is written with
plain arithmetic operators and therefore also accepts autodiff tensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

Array = np.ndarray


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule beta_1..beta_T with derived eta and eta_bar arrays.

    ``beta[t-1]`` holds beta_t; ``eta_bar[t]`` holds the product of eta over
    steps 1..t, with ``eta_bar[0] == 1``.
    """

    beta: Array
    eta: Array
    eta_bar: Array

    @property
    def T(self) -> int:
        return self.beta.size


def build_schedule(T: int, beta_1: float = 1e-4, beta_T: float = 0.02) -> NoiseSchedule:
    """Linear schedule from beta_1 to beta_T inclusive."""
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_1 <= beta_T < 1.0):
        raise ConfigError(
            f"betas must satisfy 0 < beta_1 <= beta_T < 1, got {beta_1}, {beta_T}"
        )
    beta = np.linspace(beta_1, beta_T, T)
    eta = 1.0 - beta
    eta_bar = np.concatenate([[1.0], np.cumprod(eta)])
    return NoiseSchedule(beta=beta, eta=eta, eta_bar=eta_bar)


def sample_symmetric_noise(n: int, rng: np.random.Generator) -> Array:
    """S = (eps + eps^T) / 2 with i.i.d. standard normal eps, zero diagonal."""
    if n < 2:
        raise ConfigError(f"noise matrix needs n >= 2, got {n}")
    eps = rng.standard_normal((n, n))
    np.fill_diagonal(eps, 0.0)
    return (eps + eps.T) / 2.0


def diffuse_step(a_t, t: int, noise: Array, sched: NoiseSchedule):
    """One forward step: sqrt(1 - beta_t) * A_t plus scaled symmetric noise."""
    if not 1 <= t <= sched.T:
        raise IndexError(f"diffusion step t={t} outside schedule 1..{sched.T}")
    beta = sched.beta[t - 1]
    return a_t * float(np.sqrt(1.0 - beta)) + noise * float(np.sqrt(beta))


def diffuse_to(a_0, t: int, noise: Array, sched: NoiseSchedule):
    """Closed-form jump from the clean matrix to step t; t = 0 is identity."""
    if not 0 <= t <= sched.T:
        raise IndexError(f"diffusion step t={t} outside schedule 0..{sched.T}")
    if t == 0:
        return a_0
    eta_bar = sched.eta_bar[t]
    return a_0 * float(np.sqrt(eta_bar)) + noise * float(np.sqrt(1.0 - eta_bar))


def renoise_prediction(a0_hat, t: int, noise: Array, sched: NoiseSchedule):
    """Re-noise a predicted clean matrix back to step t (posterior sampling).

    Identical in law to ``diffuse_to`` on the same input, by shared
    implementation; callers supply fresh noise per call.
    """
    return diffuse_to(a0_hat, t, noise, sched)


def sample_connectome(
    generator,
    feats: Array,
    sched: NoiseSchedule,
    d: int,
    rng: np.random.Generator,
):
    """Run the T/d-step conditional denoising chain from pure noise.

    ``generator(a_prev, feats, t, rng) -> (a0_hat, a_t)`` supplies the
    denoiser: given the matrix at step t+d it returns the predicted clean
    matrix and its re-noised version at step t (at t = 0 the two coincide).
    The final output is clamped to [0, 1], re-symmetrized, and returned with
    an exactly zero diagonal.
    """
    T = sched.T
    if d < 1 or T % d != 0:
        raise ConfigError(f"skip step d={d} must divide T={T}")
    n = feats.shape[0]
    a = sample_symmetric_noise(n, rng)
    a0_hat = None
    for t in range(T - d, -1, -d):
        a0_hat, a = generator(a, feats, t, rng)
    out = np.asarray(a, dtype=np.float64)
    out = (out + out.T) / 2.0
    out = np.clip(out, 0.0, 1.0)
    np.fill_diagonal(out, 0.0)
    from .conndata import Connectome

    return Connectome(out)
