"""Greedy and non-greedy policy-gradient estimators, the training epoch, and
evaluation rollouts.

Both estimators sample q actions at a branching point and use the mean reward
across those samples as a local baseline, with a 1/(q-1) prefactor correcting
for the self-inclusive mean. The greedy estimator branches at every step and
weights each action by its immediate advantage; the non-greedy estimator
branches only in the initial state, runs q full trajectories, and weights each
action by the discounted sum of future advantages, where the baseline at each
step pools the same step across the q trajectories.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import policynet
from .kspace import apply_mask, forward_transform, init_center_mask
from .metrics import SsimConfig, ssim
from .policynet import GradientBuffer, PolicyNetwork
from .recon import reconstruct

GREEDY = "greedy"
NONGREEDY = "nongreedy"


@dataclass(frozen=True)
class AcquisitionConfig:
    width: int
    initial_budget: int
    total_budget: int
    samples_per_step: int = 8
    discount: float = 1.0
    mode: str = GREEDY

    def __post_init__(self):
        if not 0 < self.initial_budget < self.total_budget <= self.width:
            raise ValueError(
                f"need 0 < L({self.initial_budget}) < M({self.total_budget})"
                f" <= W({self.width})"
            )
        if self.samples_per_step < 2:
            raise ValueError("samples_per_step must be >= 2 (baseline needs q >= 2)")
        if self.mode not in (GREEDY, NONGREEDY):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must lie in [0, 1]")

    @property
    def horizon(self) -> int:
        return self.total_budget - self.initial_budget


@dataclass
class EpisodeResult:
    final_masks: list
    final_ssims: np.ndarray  # per trajectory
    rewards: np.ndarray  # (q, T)


def ssim_scorer(base: SsimConfig = SsimConfig()):
    """Default quality criterion: SSIM against the ground truth, with the
    dynamic range set per image to the ground truth's maximum."""

    def score(x, xhat):
        cfg = dataclasses.replace(base, dynamic_range=max(float(x.max()), 1e-12))
        return ssim(x, xhat, cfg)

    return score


def initial_state(x, recon, cfg: AcquisitionConfig, scorer):
    """Center-mask initialization: returns (ks_full, mask, xhat, score0)."""
    ks = forward_transform(x)
    mask = init_center_mask(cfg.width, cfg.initial_budget)
    xhat = reconstruct(recon, apply_mask(ks, mask), mask=mask)
    return ks, mask, xhat, scorer(x, xhat)


def _measure(x, ks, mask, column, recon, scorer):
    new_mask = mask.add(column)
    xhat = reconstruct(recon, apply_mask(ks, new_mask), mask=new_mask)
    return new_mask, xhat, scorer(x, xhat)


def greedy_weights(rewards: np.ndarray) -> np.ndarray:
    """Per-sample advantage weights (r_i - mean_j r_j) / (q - 1)."""
    rewards = np.asarray(rewards, dtype=float)
    q = rewards.shape[0]
    return (rewards - rewards.mean()) / (q - 1)


def nongreedy_weights(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Per-(trajectory, step) weights: discounted suffix sums of cross-trajectory
    advantages, scaled by 1/(q-1). `rewards` has shape (q, T)."""
    rewards = np.asarray(rewards, dtype=float)
    q, horizon = rewards.shape
    adv = rewards - rewards.mean(axis=0, keepdims=True)
    weights = np.empty_like(adv)
    acc = np.zeros(q)
    for t in range(horizon - 1, -1, -1):
        acc = adv[:, t] + gamma * acc
        weights[:, t] = acc
    return weights / (q - 1)


def discounted_return(rewards, t: int, gamma: float) -> float:
    rewards = np.asarray(rewards, dtype=float)
    if t >= rewards.shape[0]:
        raise ValueError(f"t={t} out of range for {rewards.shape[0]} rewards")
    tail = rewards[t:]
    return float(tail @ gamma ** np.arange(tail.shape[0]))


def greedy_step(x, ks, mask, xhat, prev_score, net, recon, scorer, cfg, rng, buf):
    """One greedy acquisition step: branch q sampled measurements, accumulate
    the immediate-advantage gradient, continue from a uniformly chosen branch.

    Returns (next_mask, next_xhat, next_ssim).
    """
    probs, cache = net.forward_cached(xhat, mask)
    actions = policynet.sample_actions(probs, cfg.samples_per_step, rng)

    branches = {}
    for a in actions:
        a = int(a)
        if a not in branches:
            branches[a] = _measure(x, ks, mask, a, recon, scorer)
    rewards = np.array([branches[int(a)][2] - prev_score for a in actions])
    weights = greedy_weights(rewards)

    dlogits = -weights.sum() * probs
    for a, wgt in zip(actions, weights):
        dlogits[int(a)] += wgt
    buf.add(net.backward_logits(cache, dlogits), samples=len(actions))

    chosen = int(actions[rng.integers(len(actions))])
    return branches[chosen]


def nongreedy_episode(x, net, recon, scorer, cfg, rng, buf) -> EpisodeResult:
    """Full non-greedy episode: q trajectories branched at the initial state,
    gradients recomputed from stored transitions once the episode ends."""
    if cfg.mode != NONGREEDY:
        raise ValueError("config mode must be nongreedy")
    q, horizon = cfg.samples_per_step, cfg.horizon
    ks, mask0, xhat0, score0 = initial_state(x, recon, cfg, scorer)

    probs0, _ = net.forward_cached(xhat0, mask0)
    first_actions = [int(a) for a in policynet.sample_actions(probs0, q, rng)]

    rewards = np.zeros((q, horizon))
    transitions = [[] for _ in range(q)]  # (xhat, mask, action) per step, t >= 1
    states = []
    for i, a in enumerate(first_actions):
        mask, xhat, score = _measure(x, ks, mask0, a, recon, scorer)
        rewards[i, 0] = score - score0
        states.append((mask, xhat, score))

    for t in range(1, horizon):
        for i in range(q):
            mask, xhat, prev = states[i]
            probs = net.forward(xhat, mask)
            a = int(policynet.sample_actions(probs, 1, rng)[0])
            transitions[i].append((xhat, mask, a))
            mask, xhat, score = _measure(x, ks, mask, a, recon, scorer)
            rewards[i, t] = score - prev
            states[i] = (mask, xhat, score)

    weights = nongreedy_weights(rewards, cfg.discount)
    policynet.accumulate_weighted_log_prob_gradients(
        net, xhat0, mask0, first_actions, weights[:, 0], buf
    )
    for i in range(q):
        for t, (xhat, mask, a) in enumerate(transitions[i], start=1):
            policynet.accumulate_log_prob_gradient(
                net, xhat, mask, a, weights[i, t], buf
            )

    return EpisodeResult(
        final_masks=[s[0] for s in states],
        final_ssims=np.array([s[2] for s in states]),
        rewards=rewards,
    )


def train_epoch(items, net, recon, cfg, opt, rng, scorer=None, batch_size=16):
    """One epoch over `items` (list of (id, image) pairs).

    Gradients are accumulated over a batch, divided by the number of batch
    items (so a step consumes a mean, not a sum), then applied with one Adam
    step per batch. Greedy mode accumulates per-step gradients across whole
    trajectories; non-greedy mode accumulates whole episodes.

    Returns per-epoch statistics: mean final SSIM and mean return.
    """
    if not items:
        raise ValueError("dataset is empty")
    if scorer is None:
        scorer = ssim_scorer()
    order = rng.permutation(len(items))
    buf = GradientBuffer.for_network(net)
    final_ssims, returns = [], []

    for start in range(0, len(order), batch_size):
        batch = [items[i] for i in order[start : start + batch_size]]
        for item_id, x in batch:
            if cfg.mode == GREEDY:
                ks, mask, xhat, score = initial_state(x, recon, cfg, scorer)
                score0 = score
                for _ in range(cfg.horizon):
                    mask, xhat, score = greedy_step(
                        x, ks, mask, xhat, score, net, recon, scorer, cfg, rng, buf
                    )
                final_ssims.append(score)
                returns.append(score - score0)
            else:
                ep = nongreedy_episode(x, net, recon, scorer, cfg, rng, buf)
                final_ssims.append(float(ep.final_ssims.mean()))
                returns.append(float(ep.rewards.sum(axis=1).mean()))
        if cfg.horizon > 0:
            buf.scale(1.0 / len(batch))
            try:
                policynet.optimizer_step(net, buf, opt)
            except policynet.NumericalFailureError as exc:
                raise policynet.NumericalFailureError(
                    f"batch starting at item {start}: {exc}"
                ) from exc

    return {
        "mean_ssim": float(np.mean(final_ssims)),
        "mean_return": float(np.mean(returns)),
    }


@dataclass
class EvalResult:
    scores: np.ndarray  # (n_items, q_eval) final SSIM per trajectory

    @property
    def per_image(self) -> np.ndarray:
        return self.scores.mean(axis=1)

    @property
    def mean(self) -> float:
        return float(self.per_image.mean())

    @property
    def std(self) -> float:
        return float(self.per_image.std(ddof=1)) if len(self.per_image) > 1 else 0.0


def evaluate(items, net, recon, cfg, q_eval, rng, scorer=None) -> EvalResult:
    """q_eval independent sampled trajectories per image; no gradients."""
    if scorer is None:
        scorer = ssim_scorer()
    scores = np.zeros((len(items), q_eval))
    for n, (item_id, x) in enumerate(items):
        ks, mask0, xhat0, score0 = initial_state(x, recon, cfg, scorer)
        for j in range(q_eval):
            mask, xhat, score = mask0, xhat0, score0
            for _ in range(cfg.horizon):
                probs = net.forward(xhat, mask)
                a = int(policynet.sample_actions(probs, 1, rng)[0])
                mask, xhat, score = _measure(x, ks, mask, a, recon, scorer)
            scores[n, j] = score
    return EvalResult(scores)
