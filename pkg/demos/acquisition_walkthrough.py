"""Walk through one adaptive acquisition episode step by step.

Generates a phantom, starts from the low-frequency center mask, and lets an
untrained policy acquire columns one at a time, printing the SSIM after each
measurement alongside the running reward telescoping check.
"""

import numpy as np

from kpolicy import estimators, policynet
from kpolicy.datagen import generate_phantoms
from kpolicy.estimators import AcquisitionConfig, initial_state, ssim_scorer, _measure
from kpolicy.policynet import ArchSpec, PolicyNetwork
from kpolicy.recon import ZeroFilled


def main():
    rng = np.random.default_rng(0)
    x = generate_phantoms(1, 32, seed=3).items[0][1]
    recon = ZeroFilled()
    scorer = ssim_scorer()
    cfg = AcquisitionConfig(width=32, initial_budget=4, total_budget=12)

    net = PolicyNetwork.initialize(
        ArchSpec(input_shape=(32, 32), width=32), rng
    )

    ks, mask, xhat, score = initial_state(x, recon, cfg, scorer)
    print(f"center mask {sorted(np.flatnonzero(mask.selected))}: ssim {score:.4f}")
    start = score
    total_reward = 0.0
    for t in range(cfg.horizon):
        probs = net.forward(xhat, mask)
        a = int(policynet.sample_actions(probs, 1, rng)[0])
        mask, xhat, new_score = _measure(x, ks, mask, a, recon, scorer)
        total_reward += new_score - score
        print(f"step {t}: column {a:2d} (p={probs[a]:.3f})  ssim {new_score:.4f}")
        score = new_score
    print(f"telescoping check: sum of rewards {total_reward:.6f} "
          f"== final - initial {score - start:.6f}")


if __name__ == "__main__":
    main()
