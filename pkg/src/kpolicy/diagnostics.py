"""Adaptivity and gradient-variance diagnostics.

Policy entropies are in nats. The mutual information between state and action
at an acquisition step is the marginal policy entropy (entropy of the
dataset-averaged policy) minus the mean conditional entropy (average of the
per-state policy entropies).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import policynet
from .estimators import initial_state, ssim_scorer, _measure
from .policynet import GradientBuffer


class DegenerateVarianceError(RuntimeError):
    """All batch gradients are identical; the SNR denominator is zero."""


@dataclass
class PolicySnapshot:
    """Policy vectors observed at one acquisition step, over all dataset
    images and trajectory replicates: shape (n_states, width)."""

    step: int
    probs: np.ndarray

    def __post_init__(self):
        if self.probs.ndim != 2 or self.probs.shape[0] == 0:
            raise ValueError("snapshot needs a non-empty (n_states, width) array")


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def marginal_entropy(snap: PolicySnapshot) -> float:
    """Entropy of the state-averaged policy."""
    return _entropy(snap.probs.mean(axis=0))


def conditional_entropy(snap: PolicySnapshot) -> float:
    """Mean per-state policy entropy."""
    return float(np.mean([_entropy(p) for p in snap.probs]))


def mutual_information(snap: PolicySnapshot) -> float:
    return marginal_entropy(snap) - conditional_entropy(snap)


def collect_policy_snapshots(items, net, recon, cfg, q, rng, scorer=None):
    """Run q sampled trajectories per image and record the policy vector at
    every acquisition step; returns one PolicySnapshot per step.

    Rows are grouped per image: rows [i*q, (i+1)*q) of each snapshot belong to
    image i, which lets callers bootstrap over images.
    """
    if scorer is None:
        scorer = ssim_scorer()
    per_step = [[] for _ in range(cfg.horizon)]
    for _, x in items:
        ks, mask0, xhat0, score0 = initial_state(x, recon, cfg, scorer)
        for _ in range(q):
            mask, xhat, score = mask0, xhat0, score0
            for t in range(cfg.horizon):
                probs = net.forward(xhat, mask)
                per_step[t].append(probs)
                a = int(policynet.sample_actions(probs, 1, rng)[0])
                mask, xhat, score = _measure(x, ks, mask, a, recon, scorer)
    return [PolicySnapshot(t, np.array(ps)) for t, ps in enumerate(per_step)]


def gradient_snr(gradients: np.ndarray) -> float:
    """||mean gradient|| / ||estimated std of the mean gradient||.

    `gradients` holds B per-batch gradient vectors, one row each. The
    per-coordinate variance of the mean is 1/(B(B-1)) * sum (g_i - mean)^2.
    """
    g = np.asarray(gradients, dtype=float)
    if g.ndim != 2 or g.shape[0] < 2:
        raise ValueError("need a (B >= 2, d) gradient array")
    b = g.shape[0]
    mu = g.mean(axis=0)
    var_mu = ((g - mu) ** 2).sum(axis=0) / (b * (b - 1))
    denom = float(np.linalg.norm(np.sqrt(var_mu)))
    if denom == 0.0:
        raise DegenerateVarianceError("all batch gradients are identical")
    return float(np.linalg.norm(mu) / denom)


def collect_gradient_batches(items, net, recon, cfg, rng, scorer=None,
                             n_batches=50, batch_size=16):
    """Per-batch gradients restricted to the final dense layer's weights.

    Each batch of images contributes one mean gradient vector, computed with
    the estimator selected by cfg.mode (no optimizer step is taken).
    """
    from . import estimators

    if scorer is None:
        scorer = ssim_scorer()
    sl = net.final_dense_weight_slice
    rows = []
    for _ in range(n_batches):
        idx = rng.choice(len(items), size=batch_size, replace=True)
        buf = GradientBuffer.for_network(net)
        for i in idx:
            item_id, x = items[int(i)]
            if cfg.mode == estimators.GREEDY:
                ks, mask, xhat, score = initial_state(x, recon, cfg, scorer)
                for _ in range(cfg.horizon):
                    mask, xhat, score = estimators.greedy_step(
                        x, ks, mask, xhat, score, net, recon, scorer, cfg, rng, buf
                    )
            else:
                estimators.nongreedy_episode(x, net, recon, scorer, cfg, rng, buf)
        rows.append(buf.accum[sl] / batch_size)
    return np.array(rows)
