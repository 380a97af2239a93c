"""Non-learned comparison policies: random, equispaced, and oracle schedules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimators import AcquisitionConfig, initial_state, ssim_scorer, _measure
from .kspace import init_center_mask


@dataclass(frozen=True)
class MaskSchedule:
    """Ordered list of columns to acquire after the initial center mask."""

    columns: tuple
    provenance: str  # random | equi_one | equi_two | na_oracle

    def __post_init__(self):
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("schedule columns must be unique")


def _check_feasible(width, initial_budget, horizon):
    if initial_budget + horizon > width:
        raise ValueError(
            f"budget L+T = {initial_budget + horizon} exceeds width {width}"
        )


def random_schedule(width, initial_budget, horizon, rng) -> MaskSchedule:
    """Uniform draws without replacement from the unmeasured columns."""
    _check_feasible(width, initial_budget, horizon)
    pool = init_center_mask(width, initial_budget).unmeasured()
    cols = rng.choice(pool, size=horizon, replace=False)
    return MaskSchedule(tuple(int(c) for c in cols), "random")


def equispaced_schedule(width, initial_budget, horizon, side="two") -> MaskSchedule:
    """Every r'th unmeasured column, r = (unmeasured count) / horizon.

    Two-sided walks all unmeasured columns in ascending order; one-sided only
    those strictly right of the center block. Fractional strides are resolved
    by flooring accumulated positions.
    """
    _check_feasible(width, initial_budget, horizon)
    center = init_center_mask(width, initial_budget)
    if side == "two":
        pool = center.unmeasured()
        tag = "equi_two"
    elif side == "one":
        last_center = int(np.flatnonzero(center.selected)[-1])
        pool = np.arange(last_center + 1, width)
        tag = "equi_one"
    else:
        raise ValueError(f"side must be 'one' or 'two', got {side!r}")
    if len(pool) < horizon:
        raise ValueError(
            f"{len(pool)} candidate columns cannot supply {horizon} acquisitions"
        )
    r = len(pool) / horizon
    positions = np.floor(r * np.arange(horizon)).astype(int)
    return MaskSchedule(tuple(int(pool[p]) for p in positions), tag)


def _column_improvements(x, ks, mask, prev_score, recon, scorer):
    """Immediate score improvement of every unmeasured candidate column."""
    gains = {}
    for col in mask.unmeasured():
        _, _, score = _measure(x, ks, mask, int(col), recon, scorer)
        gains[int(col)] = score - prev_score
    return gains


def adaptive_oracle_step(x, ks, mask, prev_score, recon, scorer) -> int:
    """Column with the greatest immediate SSIM improvement for this image.

    Ties break toward the lowest column index.
    """
    gains = _column_improvements(x, ks, mask, prev_score, recon, scorer)
    best = max(sorted(gains), key=lambda c: gains[c])
    return best


def na_oracle_schedule(items, recon, cfg: AcquisitionConfig, scorer=None) -> MaskSchedule:
    """Greedy fixed schedule maximizing the mean SSIM improvement over the
    dataset at every step; shared by all images. Ties break toward the lowest
    column index."""
    if not items:
        raise ValueError("dataset is empty")
    if scorer is None:
        scorer = ssim_scorer()
    states = []
    for _, x in items:
        ks, mask, xhat, score = initial_state(x, recon, cfg, scorer)
        states.append([x, ks, mask, score])

    schedule = []
    for _ in range(cfg.horizon):
        candidates = states[0][2].unmeasured()
        mean_gain = {}
        per_item = []
        for x, ks, mask, score in states:
            per_item.append(_column_improvements(x, ks, mask, score, recon, scorer))
        for col in candidates:
            mean_gain[int(col)] = float(np.mean([g[int(col)] for g in per_item]))
        best = max(sorted(mean_gain), key=lambda c: mean_gain[c])
        schedule.append(best)
        for state in states:
            x, ks, mask, score = state
            mask, _, score = _measure(x, ks, mask, best, recon, scorer)
            state[2], state[3] = mask, score
    return MaskSchedule(tuple(schedule), "na_oracle")


def run_schedule(x, schedule, recon, cfg: AcquisitionConfig, scorer=None) -> float:
    """Final score after acquiring the scheduled columns on top of the center mask."""
    if scorer is None:
        scorer = ssim_scorer()
    ks, mask, xhat, score = initial_state(x, recon, cfg, scorer)
    for col in schedule.columns[: cfg.horizon]:
        mask, xhat, score = _measure(x, ks, mask, col, recon, scorer)
    return score


def run_adaptive_oracle(x, recon, cfg: AcquisitionConfig, scorer=None) -> float:
    """Final score of the per-image greedy oracle."""
    if scorer is None:
        scorer = ssim_scorer()
    ks, mask, xhat, score = initial_state(x, recon, cfg, scorer)
    for _ in range(cfg.horizon):
        col = adaptive_oracle_step(x, ks, mask, score, recon, scorer)
        mask, xhat, score = _measure(x, ks, mask, col, recon, scorer)
    return score
