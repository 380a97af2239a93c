"""End-to-end acceptance checks. Each test prints one PASS/FAIL line."""

import filecmp
import os

import numpy as np
import pytest

from kpolicy import baselines, cli, diagnostics, estimators, policynet
from kpolicy.datagen import generate_phantoms, split_dataset
from kpolicy.diagnostics import PolicySnapshot
from kpolicy.estimators import (
    AcquisitionConfig,
    greedy_step,
    initial_state,
    nongreedy_episode,
    nongreedy_weights,
    ssim_scorer,
    _measure,
)
from kpolicy.kspace import (
    forward_transform,
    init_center_mask,
    inverse_transform,
)
from kpolicy.metrics import GAUSSIAN_11, UNIFORM_7, SsimConfig, _window_kernel, ssim
from kpolicy.policynet import ArchSpec, GradientBuffer, OptimizerState, PolicyNetwork
from kpolicy.recon import ZeroFilled


def _report(capfd, num, name, ok):
    with capfd.disabled():
        print(f"[criterion {num:02d}] {name}: {'PASS' if ok else 'FAIL'}")
    assert ok, f"criterion {num:02d} ({name}) failed"


# ---------------------------------------------------------------------------
# shared toy-scale training runs (used by criteria 7, 8, 9)

TOY_SEEDS = (1, 2, 3)
TOY_ARCH = ArchSpec(input_shape=(32, 32), width=32)
TOY_LR = 1e-3


def _toy_acq(mode, q=8):
    return AcquisitionConfig(
        width=32, initial_budget=4, total_budget=12,
        samples_per_step=q, discount=1.0, mode=mode,
    )


@pytest.fixture(scope="module")
def toy():
    """200 phantoms, 32x32, L=4, M=12, q=8: greedy trained 15 epochs and
    non-greedy (gamma=1) trained 10 epochs, for seeds 1-3, with parameter
    snapshots at epochs 10 and 15."""
    ds = split_dataset(generate_phantoms(200, 32, 123), (0.6, 0.2, 0.2), 123)
    train = ds.subset("train")
    recon = ZeroFilled()
    scorer = ssim_scorer()

    def run(mode, seed, epochs, snapshot_epochs):
        acq = _toy_acq(mode)
        net = PolicyNetwork.initialize(TOY_ARCH, np.random.default_rng([seed, 2]))
        opt = OptimizerState.for_network(net, TOY_LR)
        rng = np.random.default_rng([seed, 2])
        snaps = {}
        for epoch in range(1, epochs + 1):
            estimators.train_epoch(train, net, recon, acq, opt, rng, scorer,
                                   batch_size=16)
            if epoch in snapshot_epochs:
                snaps[epoch] = net.params.copy()
        return snaps

    greedy = {s: run("greedy", s, 15, {10, 15}) for s in TOY_SEEDS}
    ngreedy = {s: run("nongreedy", s, 10, {10}) for s in TOY_SEEDS}
    return {"ds": ds, "recon": recon, "scorer": scorer,
            "greedy": greedy, "nongreedy": ngreedy}


# ---------------------------------------------------------------------------


def test_c01_fourier_correctness(capfd):
    rng = np.random.default_rng(0)
    worst_rt, worst_pars = 0.0, 0.0
    for _ in range(100):
        x = rng.random((16, 16))
        ks = forward_transform(x)
        worst_rt = max(worst_rt, float(np.max(np.abs(inverse_transform(ks) - x))))
        worst_pars = max(worst_pars, abs(np.linalg.norm(x) - np.linalg.norm(ks)))
    _report(capfd, 1, "fourier round-trip and parseval",
            worst_rt < 1e-10 and worst_pars < 1e-10)


def test_c02_ssim_oracle_equivalence(capfd):
    rng = np.random.default_rng(1)
    ok = True
    for window, size in ((GAUSSIAN_11, 11), (UNIFORM_7, 7)):
        cfg = SsimConfig(window=window)
        kernel = _window_kernel(window)
        c1, c2 = (cfg.k1 * 1.0) ** 2, (cfg.k2 * 1.0) ** 2
        for _ in range(5):
            x, y = rng.random((size, size)), rng.random((size, size))
            mu_x = float((kernel * x).sum())
            mu_y = float((kernel * y).sum())
            var_x = float((kernel * x**2).sum()) - mu_x**2
            var_y = float((kernel * y**2).sum()) - mu_y**2
            cov = float((kernel * x * y).sum()) - mu_x * mu_y
            direct = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
                (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
            )
            ok &= abs(ssim(x, y, cfg) - direct) < 1e-10
    x = rng.random((16, 16))
    ok &= abs(ssim(x, x, SsimConfig()) - 1.0) < 1e-12
    c1 = (0.01 * 1.0) ** 2
    ok &= abs(ssim(np.ones((16, 16)), np.zeros((16, 16)), SsimConfig())
              - c1 / (1.0 + c1)) < 1e-12
    _report(capfd, 2, "ssim brute-force oracle", ok)


def test_c03_gradient_finite_differences(capfd):
    arch = ArchSpec(input_shape=(8, 8), width=8, conv_channels=(2,), dense_hidden=8)
    step = 1e-5
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        net = PolicyNetwork.initialize(arch, rng)
        xhat = rng.random((8, 8))
        mask = init_center_mask(8, 2)
        action = int(rng.choice(mask.unmeasured()))
        buf = GradientBuffer.for_network(net)
        policynet.accumulate_log_prob_gradient(net, xhat, mask, action, 1.0, buf)
        fd = np.empty(net.num_params)
        for j in range(net.num_params):
            orig = net.params[j]
            net.params[j] = orig + step
            up = float(np.log(net.forward(xhat, mask)[action]))
            net.params[j] = orig - step
            down = float(np.log(net.forward(xhat, mask)[action]))
            net.params[j] = orig
            fd[j] = (up - down) / (2 * step)
        scale = max(float(np.max(np.abs(fd))), 1.0)
        worst = max(worst, float(np.max(np.abs(buf.accum - fd)) / scale))
    _report(capfd, 3, "analytic gradient vs finite differences", worst < 1e-5)


def test_c04_score_function_identity(capfd):
    rng = np.random.default_rng(4)
    arch = ArchSpec(input_shape=(8, 8), width=8, conv_channels=(2,), dense_hidden=8)
    net = PolicyNetwork.initialize(arch, rng)
    xhat = rng.random((8, 8))
    mask = init_center_mask(8, 2)
    probs = net.forward(xhat, mask)
    grads = {}
    for a in mask.unmeasured():
        buf = GradientBuffer.for_network(net)
        policynet.accumulate_log_prob_gradient(net, xhat, mask, int(a), 1.0, buf)
        grads[int(a)] = buf.accum.copy()
    n = 100_000
    samples = policynet.sample_actions(probs, n, rng)
    counts = np.bincount(samples, minlength=8)
    mean = sum(counts[a] / n * g for a, g in grads.items())
    second = sum(counts[a] / n * g**2 for a, g in grads.items())
    var = np.maximum(second - mean**2, 0.0)
    se_norm = float(np.sqrt(var.sum() / n))
    _report(capfd, 4, "score-function identity",
            float(np.linalg.norm(mean)) < 4 * se_norm)


def _neg_mse(x, xhat):
    return -float(np.mean((x - xhat) ** 2))


def test_c05_estimator_unbiasedness(capfd):
    recon = ZeroFilled()
    rng = np.random.default_rng(5)
    x = rng.random((8, 6))
    arch = ArchSpec(input_shape=(8, 6), width=6, conv_channels=(), dense_hidden=8)
    net = PolicyNetwork.initialize(arch, np.random.default_rng(6))
    q, n = 4, 20_000

    cfg_g = AcquisitionConfig(width=6, initial_budget=2, total_budget=3,
                              samples_per_step=q, mode="greedy")
    ks, mask, xhat, s0 = initial_state(x, recon, cfg_g, _neg_mse)
    probs = net.forward(xhat, mask)
    actions = [int(a) for a in mask.unmeasured()]
    assert len(actions) == 4
    rewards = {a: _measure(x, ks, mask, a, recon, _neg_mse)[2] - s0 for a in actions}
    expected_r = sum(probs[a] * rewards[a] for a in actions)
    exact = np.zeros(net.num_params)
    for a in actions:
        buf = GradientBuffer.for_network(net)
        policynet.accumulate_log_prob_gradient(net, xhat, mask, a, 1.0, buf)
        exact += probs[a] * (rewards[a] - expected_r) * buf.accum

    def mc_matches(run_once):
        total = np.zeros(net.num_params)
        total_sq = np.zeros(net.num_params)
        for _ in range(n):
            g = run_once()
            total += g
            total_sq += g**2
        mean = total / n
        var = np.maximum(total_sq / n - mean**2, 0.0)
        se = np.sqrt(var / n)
        return bool(np.all(np.abs(mean - exact) <= 4 * se + 1e-12))

    mc_rng = np.random.default_rng(7)

    def greedy_once():
        buf = GradientBuffer.for_network(net)
        greedy_step(x, ks, mask, xhat, s0, net, recon, _neg_mse, cfg_g, mc_rng, buf)
        return buf.accum

    cfg_n = AcquisitionConfig(width=6, initial_budget=2, total_budget=3,
                              samples_per_step=q, discount=1.0, mode="nongreedy")

    def nongreedy_once():
        buf = GradientBuffer.for_network(net)
        nongreedy_episode(x, net, recon, _neg_mse, cfg_n, mc_rng, buf)
        return buf.accum

    ok = mc_matches(greedy_once) and mc_matches(nongreedy_once)
    _report(capfd, 5, "estimator unbiasedness vs exhaustive oracle", ok)


def test_c06_baseline_invariance(capfd):
    recon = ZeroFilled()
    rng = np.random.default_rng(8)
    x = rng.random((16, 16))
    cfg = AcquisitionConfig(width=16, initial_budget=4, total_budget=8,
                            samples_per_step=3, discount=0.9, mode="nongreedy")
    arch = ArchSpec(input_shape=(16, 16), width=16, conv_channels=(2,), dense_hidden=8)
    net = PolicyNetwork.initialize(arch, np.random.default_rng(9))
    scorer = ssim_scorer()
    buf = GradientBuffer.for_network(net)
    ep = nongreedy_episode(x, net, recon, scorer, cfg, rng, buf)

    shifted = ep.rewards.copy()
    shifted[:, 2] += 1.234
    w_a = nongreedy_weights(ep.rewards, cfg.discount)
    w_b = nongreedy_weights(shifted, cfg.discount)
    ok = float(np.max(np.abs(w_a - w_b))) < 1e-12

    # replay the first branching state through both weight sets
    ks, mask0, xhat0, _ = initial_state(x, recon, cfg, scorer)
    actions = [int(a) for a in np.random.default_rng(10).choice(
        mask0.unmeasured(), size=3)]
    buf_a = GradientBuffer.for_network(net)
    buf_b = GradientBuffer.for_network(net)
    policynet.accumulate_weighted_log_prob_gradients(
        net, xhat0, mask0, actions, w_a[:, 0], buf_a)
    policynet.accumulate_weighted_log_prob_gradients(
        net, xhat0, mask0, actions, w_b[:, 0], buf_b)
    ok &= float(np.linalg.norm(buf_a.accum - buf_b.accum)) < 1e-12
    _report(capfd, 6, "reward-shift baseline invariance", ok)


def test_c07_greedy_beats_random(capfd, toy):
    ds, recon, scorer = toy["ds"], toy["recon"], toy["scorer"]
    test = ds.subset("test")
    acq = _toy_acq("greedy")

    rng = np.random.default_rng([123, 5])
    rand = np.empty((len(test), 8))
    for i, (_, x) in enumerate(test):
        for j in range(8):
            sched = baselines.random_schedule(32, 4, acq.horizon, rng)
            rand[i, j] = baselines.run_schedule(x, sched, recon, acq, scorer)
    rand_per_image = rand.mean(axis=1)
    rand_mean = float(rand_per_image.mean())

    per_seed_means, pooled = [], []
    for seed in TOY_SEEDS:
        net = PolicyNetwork(TOY_ARCH, toy["greedy"][seed][15])
        ev = estimators.evaluate(test, net, recon, acq, 8,
                                 np.random.default_rng([seed, 3]), scorer)
        per_seed_means.append(ev.mean)
        pooled.extend(ev.per_image)
    pooled = np.array(pooled)
    se = np.sqrt(pooled.var(ddof=1) / len(pooled)
                 + rand_per_image.var(ddof=1) / len(rand_per_image))
    ok = all(m > rand_mean for m in per_seed_means)
    ok &= float(pooled.mean()) - rand_mean > 2 * se
    _report(capfd, 7, "trained greedy beats random baseline", ok)


def test_c08_adaptivity_mutual_information(capfd, toy):
    ds, recon, scorer = toy["ds"], toy["recon"], toy["scorer"]
    test = ds.subset("test")
    acq = _toy_acq("greedy")
    q, n = 8, len(test)
    ok = True
    for seed in TOY_SEEDS:
        net = PolicyNetwork(TOY_ARCH, toy["greedy"][seed][15])
        snaps = diagnostics.collect_policy_snapshots(
            test, net, recon, acq, q, np.random.default_rng([seed, 4]), scorer)
        mean_mi = float(np.mean([diagnostics.mutual_information(s) for s in snaps]))
        boot = np.random.default_rng(99)
        reps = []
        for _ in range(200):
            idx = boot.integers(n, size=n)
            vals = []
            for s in snaps:
                rows = np.concatenate([s.probs[i * q:(i + 1) * q] for i in idx])
                vals.append(diagnostics.mutual_information(PolicySnapshot(s.step, rows)))
            reps.append(np.mean(vals))
        sigma = float(np.std(reps, ddof=1))
        ok &= mean_mi > 4 * sigma

    # single-step oracle dominance, exact, on this dataset
    na = baselines.na_oracle_schedule(test, recon,
                                      AcquisitionConfig(width=32, initial_budget=4,
                                                        total_budget=5), scorer)
    cfg1 = AcquisitionConfig(width=32, initial_budget=4, total_budget=5)
    for _, x in test:
        ks, mask, xhat, score = initial_state(x, recon, cfg1, scorer)
        gains = baselines._column_improvements(x, ks, mask, score, recon, scorer)
        ok &= max(gains.values()) >= gains[na.columns[0]]
    _report(capfd, 8, "adaptivity: MI > 0 and oracle dominance", ok)


def test_c09_gradient_snr_ordering(capfd, toy):
    ds, recon, scorer = toy["ds"], toy["recon"], toy["scorer"]
    train = ds.subset("train")
    wins = 0
    for seed in TOY_SEEDS:
        gnet = PolicyNetwork(TOY_ARCH, toy["greedy"][seed][10])
        nnet = PolicyNetwork(TOY_ARCH, toy["nongreedy"][seed][10])
        gg = diagnostics.collect_gradient_batches(
            train, gnet, recon, _toy_acq("greedy", q=16),
            np.random.default_rng([seed, 4]), scorer, n_batches=50, batch_size=4)
        ng = diagnostics.collect_gradient_batches(
            train, nnet, recon, _toy_acq("nongreedy", q=16),
            np.random.default_rng([seed, 4]), scorer, n_batches=50, batch_size=4)
        if diagnostics.gradient_snr(gg) > diagnostics.gradient_snr(ng):
            wins += 1
    _report(capfd, 9, "greedy SNR exceeds non-greedy SNR", wins >= 2)


def test_c10_diagnostics_unit_values(capfd):
    p = np.full(4, 0.25)
    const = PolicySnapshot(0, np.array([p] * 5))
    ok = abs(diagnostics.mutual_information(const)) < 1e-12

    n = 6
    eye = np.zeros((n, 8))
    eye[np.arange(n), np.arange(n)] = 1.0
    ok &= abs(diagnostics.mutual_information(PolicySnapshot(0, eye)) - np.log(n)) < 1e-12

    g = np.array([[1.0], [2.0], [3.0]])
    ok &= abs(diagnostics.gradient_snr(g) - 2 / np.sqrt(1 / 3)) < 1e-9
    _report(capfd, 10, "diagnostics hand values", ok)


def test_c11_mask_constructions(capfd):
    ok = baselines.equispaced_schedule(16, 4, 4, "two").columns == (0, 3, 10, 13)
    ok &= baselines.equispaced_schedule(16, 4, 4, "one").columns == (10, 11, 13, 14)
    ok &= set(np.flatnonzero(init_center_mask(8, 2).selected)) == {3, 4}
    ok &= set(np.flatnonzero(init_center_mask(128, 16).selected)) == set(range(56, 72))
    _report(capfd, 11, "equispaced and center mask constructions", ok)


def test_c12_training_determinism(capfd, tmp_path):
    args = ["--phantoms", "30", "--size", "16", "--width", "16", "--L", "2",
            "--M", "6", "--q", "4", "--epochs", "2", "--batch-size", "8",
            "--q-eval", "2", "--seed", "7"]
    out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
    assert cli.main(["train", "--out", out_a] + args) == 0
    assert cli.main(["train", "--out", out_b] + args) == 0
    compare = ["config.txt", "metrics.csv", "test_eval.csv",
               "epoch_01.kgpn", "epoch_02.kgpn"]
    ok = all(
        filecmp.cmp(os.path.join(out_a, f), os.path.join(out_b, f), shallow=False)
        for f in compare
    )
    _report(capfd, 12, "bit-identical training reruns", ok)
