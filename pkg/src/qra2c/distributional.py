"""Quantile value distributions: midpoints, quantile-Huber loss, n-step targets, W1."""
from __future__ import annotations

import numba
import numpy as np

from .nn import ConfigurationError


def quantile_midpoints(n: int) -> np.ndarray:
    """tau_i = (2i - 1) / (2n) for i = 1..n."""
    if n < 1:
        raise ConfigurationError(f"number of atoms must be >= 1, got {n}")
    return (2.0 * np.arange(1, n + 1) - 1.0) / (2.0 * n)


def mean_of(atoms: np.ndarray) -> np.ndarray | float:
    """Expectation of the uniform mixture over the last axis."""
    atoms = np.asarray(atoms, dtype=np.float64)
    m = atoms.mean(axis=-1)
    return float(m) if m.ndim == 0 else m


def wasserstein1(a: np.ndarray, b: np.ndarray) -> float:
    """Exact 1-Wasserstein distance between two equal-weight Dirac mixtures of equal size."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"atom counts differ: {a.size} vs {b.size}")
    return float(np.mean(np.abs(np.sort(a) - np.sort(b))))


def huber(u: np.ndarray, kappa: float) -> np.ndarray:
    c = np.clip(u, -kappa, kappa)
    return c * (u - 0.5 * c)


def quantile_huber_loss(predicted: np.ndarray, targets: np.ndarray, taus: np.ndarray | None = None,
                        kappa: float = 1.0) -> tuple[float, np.ndarray]:
    """Quantile-Huber loss of ``predicted`` atoms against target samples.

    Supports a leading batch axis: ``predicted`` is ``(..., N)`` and ``targets``
    ``(..., M)``; the loss is averaged over the batch and normalised by N*M.
    Returns ``(loss, dloss/dpredicted)``.
    """
    if not kappa > 0:
        raise ConfigurationError(f"kappa must be positive, got {kappa}")
    theta = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    n, m = theta.shape[-1], t.shape[-1]
    if m < 1:
        raise ConfigurationError("need at least one target sample")
    if taus is None:
        taus = quantile_midpoints(n)
    lead = theta.shape[:-1]
    if t.shape[:-1] != lead:
        raise ValueError(f"batch shapes differ: {lead} vs {t.shape[:-1]}")
    taus = np.ascontiguousarray(taus, dtype=np.float64)
    total, grad = _qh_kernel(np.ascontiguousarray(theta.reshape(-1, n)),
                             np.ascontiguousarray(t.reshape(-1, m)), taus, float(kappa))
    scale = 1.0 / (kappa * n * m * max(grad.shape[0], 1))
    return total * scale, (grad * scale).reshape(theta.shape)


@numba.njit(cache=True)
def _qh_kernel(theta, t, taus, kappa):
    # Unscaled sum of rho over (batch, i, j) and its gradient w.r.t. theta.
    batch, n = theta.shape
    m = t.shape[1]
    grad = np.zeros((batch, n))
    total = 0.0
    for b in range(batch):
        for i in range(n):
            tau = taus[i]
            th = theta[b, i]
            g = 0.0
            for j in range(m):
                u = t[b, j] - th
                c = min(max(u, -kappa), kappa)  # dHuber/du
                wc = ((1.0 - tau) if u < 0.0 else tau) * c
                total += wc * (u - 0.5 * c)
                g += wc
            grad[b, i] = -g
    return total, grad


def distributional_nstep_target(rewards: np.ndarray, gamma: float, bootstrap: np.ndarray,
                                terminal: bool) -> np.ndarray:
    """Target samples R + gamma^n * bootstrap atoms (bootstrap dropped if terminal)."""
    if not 0.0 <= gamma <= 1.0:
        raise ConfigurationError(f"gamma must lie in [0, 1], got {gamma}")
    bootstrap = np.asarray(bootstrap, dtype=np.float64)
    ret = 0.0
    for r in reversed(np.asarray(rewards, dtype=np.float64)):
        ret = r + gamma * ret
    if terminal:
        return np.full(bootstrap.shape, ret)
    return ret + gamma ** len(rewards) * bootstrap


def segment_targets(rewards: np.ndarray, gamma: float, bootstrap: np.ndarray,
                    terminal: bool) -> np.ndarray:
    """Distributional n-step targets for every step of a segment, shape ``(T, N)``.

    Row t bootstraps from the segment's final state with discount gamma^(T-t);
    computed by backward recursion so it agrees with
    :func:`distributional_nstep_target` applied to ``rewards[t:]``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    running = np.zeros_like(np.asarray(bootstrap, dtype=np.float64))
    if not terminal:
        running = running + bootstrap
    out = np.empty((len(rewards),) + running.shape)
    for t in reversed(range(len(rewards))):
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def bellman_target_table(table: np.ndarray, rewards: np.ndarray, transitions: np.ndarray,
                         policy: np.ndarray, gamma: float) -> np.ndarray:
    """Apply the one-step distributional Bellman map to a tabular quantile table.

    ``table[s, a]`` holds N atoms; ``transitions[s, a]`` is the deterministic next
    state and ``policy[s']`` the action taken there. Terminal transitions are
    marked with next state ``-1``.
    """
    out = np.empty_like(table)
    for s in range(table.shape[0]):
        for a in range(table.shape[1]):
            nxt = transitions[s, a]
            terminal = nxt < 0
            boot = table[0, 0] if terminal else table[nxt, policy[nxt]]
            out[s, a] = distributional_nstep_target([rewards[s, a]], gamma, boot, terminal)
    return out


def sup_wasserstein1(z1: np.ndarray, z2: np.ndarray) -> float:
    """Maximal (over states/actions) W1 between two quantile tables ``(..., N)``."""
    flat1 = z1.reshape(-1, z1.shape[-1])
    flat2 = z2.reshape(-1, z2.shape[-1])
    return max(wasserstein1(a, b) for a, b in zip(flat1, flat2))
