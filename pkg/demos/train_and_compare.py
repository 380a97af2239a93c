"""Train a small greedy policy and compare it against the non-learned
baselines on held-out phantoms.

Takes a couple of minutes on one core; prints a table at the end.
"""

import numpy as np

from kpolicy import baselines, estimators
from kpolicy.datagen import generate_phantoms, split_dataset
from kpolicy.estimators import AcquisitionConfig, ssim_scorer
from kpolicy.policynet import ArchSpec, OptimizerState, PolicyNetwork
from kpolicy.recon import ZeroFilled


def main():
    ds = split_dataset(generate_phantoms(100, 32, 0), (0.6, 0.2, 0.2), 0)
    train, test = ds.subset("train"), ds.subset("test")
    recon = ZeroFilled()
    scorer = ssim_scorer()
    cfg = AcquisitionConfig(width=32, initial_budget=4, total_budget=12,
                            samples_per_step=8)

    net = PolicyNetwork.initialize(
        ArchSpec(input_shape=(32, 32), width=32), np.random.default_rng(1)
    )
    opt = OptimizerState.for_network(net, 1e-3)
    rng = np.random.default_rng(1)
    for epoch in range(1, 11):
        stats = estimators.train_epoch(train, net, recon, cfg, opt, rng, scorer)
        print(f"epoch {epoch:2d}: train ssim {stats['mean_ssim']:.4f}")

    rows = []
    ev = estimators.evaluate(test, net, recon, cfg, 8, np.random.default_rng(2), scorer)
    rows.append(("learned greedy", ev.mean))

    srng = np.random.default_rng(3)
    rand = np.mean([
        baselines.run_schedule(
            x, baselines.random_schedule(32, 4, cfg.horizon, srng), recon, cfg, scorer
        )
        for _, x in test
    ])
    rows.append(("random", rand))
    for side in ("one", "two"):
        sched = baselines.equispaced_schedule(32, 4, cfg.horizon, side)
        rows.append((f"equispaced ({side}-sided)", np.mean([
            baselines.run_schedule(x, sched, recon, cfg, scorer) for _, x in test
        ])))
    na = baselines.na_oracle_schedule(test, recon, cfg, scorer)
    rows.append(("non-adaptive oracle", np.mean([
        baselines.run_schedule(x, na, recon, cfg, scorer) for _, x in test
    ])))
    rows.append(("adaptive oracle", np.mean([
        baselines.run_adaptive_oracle(x, recon, cfg, scorer) for _, x in test
    ])))

    print("\nfinal test SSIM:")
    for name, value in rows:
        print(f"  {name:24s} {value:.4f}")


if __name__ == "__main__":
    main()
