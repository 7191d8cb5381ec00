"""Acceptance checks. Each test prints one ``criterion NN: PASS/FAIL`` line.

The multi-seed training runs are marked ``slow``; deselect them with
``-m "not slow"``.
"""

import math
import os
import time

import numpy as np
import pytest
from conftest import record

from minaction.actionloss import LossWeights, gradient_check, prepare, total_loss
from minaction.cli import main
from minaction.config import load_run_config
from minaction.forcebasis import BasisModel, concentration, log_selectivity, softmax
from minaction.orbitgen import ForceLawSpec, Trajectory, renoise, specific_energy, verlet
from minaction.sindy import sindy_fit, stlsq
from minaction.stencil import StencilConfig, wide_accel
from minaction.trainer import sweep

SEEDS = list(range(10))
JOBS = os.cpu_count() or 1


def _run_sweep(dataset, preset):
    cfg = load_run_config(preset, environ={})
    start = time.perf_counter()
    result = sweep(dataset, cfg.train_config(), SEEDS, cfg.validation, jobs=JOBS)
    print(f"{preset}: {len(SEEDS)} seeds in {time.perf_counter() - start:.0f} s")
    return result


@pytest.fixture(scope="session")
def biased_sweep(kepler_data):
    return _run_sweep(kepler_data, "biased-init")


@pytest.fixture(scope="session")
def unbiased_sweep(kepler_data):
    return _run_sweep(kepler_data, "kepler-default")


@pytest.fixture(scope="session")
def ablation_sweep(kepler_data):
    return _run_sweep(kepler_data, "ablation-tf")


@pytest.fixture(scope="session")
def hooke_sweep(hooke_data):
    return _run_sweep(hooke_data, "hooke-default")


def test_criterion_01_noise_table(tmp_path):
    out = tmp_path / "noise.csv"
    start = time.perf_counter()
    assert main(["noise-table", "--sigma", "0.016", "--dt", "0.05", "--strides", "1,5,10,20",
                 "--out", str(out)]) == 0
    elapsed = time.perf_counter() - start
    rows = [line.split(",") for line in out.read_text().splitlines()[1:]]
    targets = [15.7, 0.63, 0.16, 0.039]
    empirical = [float(r[4]) for r in rows]
    ok = all(abs(e / t - 1) < 0.05 for e, t in zip(empirical, targets)) and elapsed < 10
    record(1, ok, f"sigma_a {['%.4g' % e for e in empirical]} vs {targets}, {elapsed:.2f} s")
    assert ok


def test_criterion_02_clean_stencil(kepler_data):
    start = time.perf_counter()
    cfg = StencilConfig(10, kepler_data.config.dt_obs)
    dev = []
    for o in kepler_data.orbits:
        a_hat = wide_accel(o.clean_positions, cfg)
        pos = o.clean_positions[10:-10]
        r = np.hypot(pos[:, 0], pos[:, 1])
        true = -pos / r[:, None] ** 3
        dev.append(np.sum((a_hat - true) ** 2, axis=1))
    rms = float(np.sqrt(np.mean(np.concatenate(dev))))
    elapsed = time.perf_counter() - start
    ok = rms < 5e-3 and elapsed < 5
    record(2, ok, f"RMS {rms:.3g} (bound 5e-3), {elapsed:.2f} s")
    assert ok


def test_criterion_03_gradient(kepler_data):
    start = time.perf_counter()
    checks = gradient_check(kepler_data.train[:2], seeds=(0, 1, 2), points=3)
    elapsed = time.perf_counter() - start
    worst = max(c.rel_error for c in checks)
    ok = len(checks) == 9 and worst < 1e-4 and elapsed < 60
    record(3, ok, f"max relative error {worst:.2g} over {len(checks)} points, {elapsed:.1f} s")
    assert ok


@pytest.mark.slow
def test_criterion_04_biased_pipeline(biased_sweep):
    outs = biased_sweep.outcomes
    picked = sum(o.label == "r^-2" for o in outs)
    thetas = [o.calibrated_coefficient for o in outs]
    ps = [o.kepler_exponent for o in outs]
    theta_ok = all(t is not None and 0.85 <= t <= 1.05 for t in thetas)
    p_ok = all(p is not None and 2.95 <= p <= 3.05 for p in ps)
    ok = picked == 10 and theta_ok and p_ok
    fmt = lambda v: "-" if v is None else f"{v:.3f}"
    record(4, ok, f"r^-2 {picked}/10, theta [{', '.join(map(fmt, thetas))}], "
                  f"p [{', '.join(map(fmt, ps))}]")
    assert ok


@pytest.mark.slow
def test_criterion_05_unbiased_sweep(unbiased_sweep):
    outs = unbiased_sweep.outcomes
    conv = [o for o in outs if o.milestones.get("frozen") is not None]
    spans = [o.milestones["span"] for o in conv]
    gammas = [o.milestones["growth_rate"] for o in conv if o.milestones["growth_rate"]]
    mean_span = float(np.mean(spans)) if spans else float("nan")
    mean_gamma = float(np.mean(gammas)) if gammas else float("nan")
    picked = sum(o.label == "r^-2" for o in outs)
    labels = [o.label for o in outs]
    ok = (len(conv) >= 8 and 25 <= mean_span <= 50 and 1.05 <= mean_gamma <= 1.25
          and 2 <= picked <= 7)
    record(5, ok, f"frozen {len(conv)}/10, mean span {mean_span:.1f}, mean gamma "
                  f"{mean_gamma:.3f}, r^-2 selected {picked}/10 (band 2..7), labels {labels}")
    assert ok


@pytest.mark.slow
def test_criterion_06_conservation_selection(unbiased_sweep):
    v = unbiased_sweep.verdict
    target = 0
    means = v.group_means if v else {}
    others = [m for k, m in means.items() if k != target]
    ok = (v is not None and v.basis_index == target and target in means
          and all(m >= 2 * means[target] for m in others))
    detail = {unbiased_sweep.labels[k]: round(m, 4) for k, m in means.items()}
    record(6, ok, f"verdict {v.label if v else None}, group means {detail}")
    assert ok


@pytest.mark.slow
def test_criterion_07_hooke(hooke_sweep):
    outs = hooke_sweep.outcomes
    linear = [o for o in outs if o.label == "r"]
    ks = [o.calibrated_coefficient for o in linear]
    k_ok = all(k is not None and 0.95 <= k <= 1.02 for k in ks)
    v = hooke_sweep.verdict
    verdict_ok = v is not None and v.label == "r"
    margin_ok = v is not None and v.margin is not None and v.margin > 2
    ok = len(linear) >= 7 and k_ok and verdict_ok and margin_ok
    margin = "undefined (one group)" if v is None or v.margin is None else f"{v.margin:.2f}"
    record(7, ok, f"r selected {len(linear)}/10, k in [{min(ks, default=float('nan')):.4f}, "
                  f"{max(ks, default=float('nan')):.4f}], verdict {v.label if v else None}, "
                  f"margin {margin}")
    assert ok


@pytest.mark.slow
def test_criterion_08_teacher_forcing_ablation(ablation_sweep, unbiased_sweep):
    off = [o.C_gate for o in ablation_sweep.outcomes]
    on = [o.C_gate for o in unbiased_sweep.outcomes]
    ok = (None not in off and None not in on and max(off) < 0.5 and min(on) > 0.9
          and max(off) < min(on))
    record(8, ok, f"C_gate alpha_E=0 {np.mean(off):.3f} (max {max(off):.3f}) vs default "
                  f"{np.mean(on):.3f} (min {min(on):.3f})")
    assert ok


def test_criterion_09_sparse_regression(kepler_data):
    wide, naive, times = 0, 0, []
    naive_coef = []
    for s in SEEDS:
        data = renoise(kepler_data, s)
        w = sindy_fit(data, stride=10)
        n = sindy_fit(data, stride=1)
        times += [w.wall_time, n.wall_time]
        wide += w.identified_basis == 0
        naive += n.identified_basis == 0
        naive_coef.append(n.gm_estimate)
    ok = wide == 10 and naive == 0 and max(times) < 1.0
    record(9, ok, f"wide r^-2 {wide}/10, naive r^-2 {naive}/10 (target 0), "
                  f"naive coefficient {min(naive_coef):.1f}..{max(naive_coef):.1f}, "
                  f"max fit time {max(times) * 1e3:.0f} ms")
    assert ok


def test_criterion_10_property_suites():
    rng = np.random.default_rng(0)
    failures = []

    for _ in range(50):
        phi = rng.uniform(0, 2 * math.pi)
        R = np.array([[math.cos(phi), -math.sin(phi)], [math.sin(phi), math.cos(phi)]])
        m = BasisModel(rng.normal(size=5), rng.normal(size=5), rng.uniform(0.1, 2))
        pos = rng.uniform(0.3, 5) * np.array([math.cos(phi * 3), math.sin(phi * 3)])
        f = m.force(pos)
        if np.abs(m.force(R @ pos) - R @ f).max() > 1e-12 * max(1.0, np.abs(f).max()):
            failures.append("equivariance")

        logits, tau = rng.uniform(-3, 3, 5), rng.uniform(0.05, 2)
        a = softmax(logits, tau)
        if abs(a.sum() - 1) > 1e-10:
            failures.append("normalization")
        s = np.sort(a)[::-1]
        gap = log_selectivity(BasisModel(logits, np.ones(5), tau))
        if abs(math.log(s[0] / s[1]) - gap) > 1e-10:
            failures.append("log selectivity")

        hhi, c = concentration(rng.uniform(0, 1, 5))
        if not (0.2 - 1e-12 <= hhi <= 1 + 1e-12 and 0 <= c <= 1):
            failures.append("hhi bounds")

        X = rng.normal(size=(40, 5))
        y = X @ rng.normal(0, 0.5, 5) + rng.normal(0, 0.1, 40)
        xi = stlsq(X, y, 0.1)
        on = xi != 0
        if on.any():
            refit = np.linalg.lstsq(X[:, on], y, rcond=None)[0]
            if np.abs(refit - xi[on]).max() > 1e-8 or np.abs(xi[on]).min() < 0.1:
                failures.append("stlsq fixed point")

    if abs(concentration(np.ones(5))[1]) > 1e-12 or concentration(np.eye(5)[2])[1] != 1.0:
        failures.append("hhi extremes")

    law = ForceLawSpec("kepler", 1.0)
    trajs = []
    for a in (1.0, 2.0):
        r0, v0 = law.initial_state(a, 0.2)
        pos, vel, _ = verlet(law.magnitude_fn(), r0, v0, 1e-3, 20_000, sample_every=50)
        trajs.append(_plain_traj(pos, vel))
        E = specific_energy(law, pos, vel)
        if np.abs(E - E[0]).max() / abs(E[0]) > 1e-5:
            failures.append("symplectic drift")

    model = BasisModel(rng.normal(size=5), rng.uniform(0, 1, 5), 0.5)
    total, parts = total_loss(model, [prepare(t) for t in trajs], 1.0, 0.3,
                              LossWeights(alpha_S=0.7))
    if abs(parts.reconstruct() - float(total)) > 1e-12 * abs(float(total)):
        failures.append("loss reconstruction")

    ok = not failures
    record(10, ok, "all property checks green" if ok else f"failed: {sorted(set(failures))}")
    assert ok


def _plain_traj(pos, vel):
    times = np.arange(len(pos)) * 0.05
    return Trajectory(times, pos, vel, pos, 0.0, 0.0)
