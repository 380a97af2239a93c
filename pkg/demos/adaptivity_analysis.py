"""Measure how adaptive a policy is via per-step mutual information.

Compares an untrained (near-uniform) policy with a briefly trained one:
training should raise the mutual information between the observed state and
the chosen column, i.e. the policy starts reacting to the image at hand.
"""

import numpy as np

from kpolicy import diagnostics, estimators
from kpolicy.datagen import generate_phantoms, split_dataset
from kpolicy.estimators import AcquisitionConfig, ssim_scorer
from kpolicy.policynet import ArchSpec, OptimizerState, PolicyNetwork
from kpolicy.recon import ZeroFilled


def mean_mi(net, items, recon, cfg, scorer, seed):
    snaps = diagnostics.collect_policy_snapshots(
        items, net, recon, cfg, 8, np.random.default_rng(seed), scorer
    )
    return float(np.mean([diagnostics.mutual_information(s) for s in snaps]))


def main():
    ds = split_dataset(generate_phantoms(80, 32, 5), (0.6, 0.2, 0.2), 5)
    train, test = ds.subset("train"), ds.subset("test")
    recon = ZeroFilled()
    scorer = ssim_scorer()
    cfg = AcquisitionConfig(width=32, initial_budget=4, total_budget=12,
                            samples_per_step=8)

    net = PolicyNetwork.initialize(
        ArchSpec(input_shape=(32, 32), width=32), np.random.default_rng(6)
    )
    print(f"untrained policy: mean MI {mean_mi(net, test, recon, cfg, scorer, 0):.4f} nats")

    opt = OptimizerState.for_network(net, 1e-3)
    rng = np.random.default_rng(6)
    for _ in range(8):
        estimators.train_epoch(train, net, recon, cfg, opt, rng, scorer)
    print(f"trained policy:   mean MI {mean_mi(net, test, recon, cfg, scorer, 0):.4f} nats")
    print(f"(upper bound ln(28 available columns) = {np.log(28):.4f} nats)")


if __name__ == "__main__":
    main()
