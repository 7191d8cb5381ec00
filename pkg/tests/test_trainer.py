import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from minaction import trainer
from minaction.actionloss import TrainingInstabilityError
from minaction.orbitgen import GeneratorConfig, generate_dataset
from minaction.trainer import (AdamState, EpochRecord, InstabilityError, Schedule, TrainConfig,
                               TrainLog, adam_step, milestones, ratio_nodes, schedule_at, train)

TINY_SCHEDULE = Schedule(warmup_epochs=2, total_epochs=5)


@pytest.fixture(scope="module")
def tiny_data():
    return generate_dataset(GeneratorConfig(n_orbits=4, periods=1.5, a_min=1.0, a_max=3.0), 0)


def test_schedule_examples():
    s = Schedule()
    assert schedule_at(s, 1) == (1.0, 0.01, 1.0)
    assert schedule_at(s, 50) == (1.0, 0.01, 1.0)
    _, aE, tau = schedule_at(s, 125)
    assert aE == pytest.approx(0.505) and tau == pytest.approx(math.sqrt(0.05))
    _, aE, tau = schedule_at(s, 200)
    assert aE == pytest.approx(1.0) and tau == pytest.approx(0.05)
    with pytest.raises(ValueError):
        schedule_at(s, 0)
    with pytest.raises(ValueError):
        schedule_at(s, 201)


@settings(max_examples=30, deadline=None)
@given(st.integers(51, 199))
def test_schedule_is_monotone_and_log_linear(epoch):
    s = Schedule()
    _, a0, t0 = schedule_at(s, epoch)
    _, a1, t1 = schedule_at(s, epoch + 1)
    assert a1 > a0 and t1 < t0
    assert math.log(t0 / t1) == pytest.approx(math.log(20) / 150, rel=1e-9)


def test_ratio_nodes_against_brute_force():
    s = Schedule()
    oracle = []
    for e in range(1, 201):
        if e <= 50:
            aE, tau = 0.01, 1.0
        else:
            f = (e - 50) / 150
            aE, tau = 0.01 + 0.99 * f, 0.05 ** f
        for p, q in ((3, 1), (2, 1), (3, 2), (1, 1)):
            if abs(aE / tau / (p / q) - 1) < 0.1:
                oracle.append((e, f"{p}:{q}"))
    nodes = ratio_nodes(s)
    assert nodes == oracle
    first = {}
    for e, label in nodes:
        first.setdefault(label, e)
    # ratio rises monotonically after warmup, so nodes appear in order 1:1, 3:2, 2:1, 3:1
    assert first["1:1"] < first["3:2"] < first["2:1"] < first["3:1"]


def test_adam_against_reference_loop():
    rng = np.random.default_rng(5)
    p = rng.normal(size=4)
    grads = rng.normal(size=(6, 4))
    state = AdamState.zeros(4)
    m = np.zeros(4)
    v = np.zeros(4)
    q = p.copy()
    for t, g in enumerate(grads, start=1):
        p, state = adam_step(p, g, state, lr=0.01)
        for i in range(4):
            m[i] = 0.9 * m[i] + 0.1 * g[i]
            v[i] = 0.999 * v[i] + 0.001 * g[i] ** 2
            q[i] -= 0.01 * (m[i] / (1 - 0.9 ** t)) / (math.sqrt(v[i] / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p, q, rtol=1e-14)
    assert state.t == 6


def test_adam_first_step_moves_every_coordinate_by_lr():
    p, _ = adam_step(np.zeros(3), np.array([5.0, -0.01, 1e3]), AdamState.zeros(3), lr=1e-3)
    np.testing.assert_allclose(np.abs(p), 1e-3, rtol=1e-5)


def test_adam_rejects_non_finite_gradient():
    with pytest.raises(TrainingInstabilityError):
        adam_step(np.zeros(2), np.array([np.nan, 0.0]), AdamState.zeros(2))


def _synthetic_log(selectivities):
    log = TrainLog()
    for e, r in enumerate(selectivities, start=1):
        log.records.append(EpochRecord(e, None, np.zeros(2), np.zeros(2), np.zeros(2), 1.0, r,
                                       math.log(r), 0.0, 0))
    return log


def test_milestones_on_geometric_growth():
    # R = 10^(e/20): crosses 10, 100, 1000 at epochs 20, 40, 60
    log = milestones(_synthetic_log([10 ** (e / 20) for e in range(1, 81)]))
    assert (log.onset, log.sparse, log.frozen, log.span) == (20, 40, 60, 40)
    assert log.growth_rate == pytest.approx(10 ** (1 / 20), rel=1e-10)


def test_milestones_first_crossing_and_missing():
    sel = [1, 12, 3, 150, 20, 2000, 5]
    log = milestones(_synthetic_log(sel))
    assert (log.onset, log.sparse, log.frozen) == (2, 4, 6)
    log = milestones(_synthetic_log([1.0, 2.0, 50.0]))
    assert log.onset == 3 and log.sparse is None and log.span is None and log.growth_rate is None


def test_growth_rate_needs_three_points():
    log = milestones(_synthetic_log([1, 20, 5000]))
    assert log.span == 1 and log.growth_rate is None


def test_short_training_is_deterministic(tiny_data):
    cfg = TrainConfig(seed=3, schedule=TINY_SCHEDULE)
    m1, log1 = train(tiny_data, cfg)
    m2, log2 = train(tiny_data, cfg)
    np.testing.assert_array_equal(m1.params(), m2.params())
    assert [r.loss.total for r in log1.records] == [r.loss.total for r in log2.records]
    m3, _ = train(tiny_data, replace(cfg, seed=4))
    assert not np.array_equal(m1.params(), m3.params())


def test_log_selectivity_matches_gates_each_epoch(tiny_data):
    _, log = train(tiny_data, TrainConfig(seed=1, schedule=TINY_SCHEDULE,
                                          logit_bias=(1.0, 0, 0, 0, 0)))
    assert len(log.records) == 5
    for r in log.records:
        a = np.sort(r.gates)[::-1]
        assert math.log(a[0] / a[1]) == pytest.approx(r.log_selectivity, abs=1e-10)
        assert r.selectivity == pytest.approx(math.exp(r.log_selectivity), rel=1e-9)
    assert log.records[-1].tau == pytest.approx(0.05)


def test_instability_reports_last_good_epoch(tiny_data, monkeypatch):
    real = trainer.total_loss
    calls = {"n": 0}

    def flaky(*args, **kw):
        calls["n"] += 1
        if calls["n"] > 2:  # one batch per epoch: fail during epoch 3
            raise TrainingInstabilityError("injected")
        return real(*args, **kw)

    monkeypatch.setattr(trainer, "total_loss", flaky)
    with pytest.raises(InstabilityError) as info:
        train(tiny_data, TrainConfig(schedule=TINY_SCHEDULE, batch_size=8))
    assert info.value.epoch == 2
    assert info.value.snapshot is not None


def test_csv_rows_and_header_line_up(tiny_data):
    _, log = train(tiny_data, TrainConfig(schedule=TINY_SCHEDULE))
    header = log.csv_header()
    rows = list(log.csv_rows())
    assert len(rows) == 5 and all(len(r) == len(header) for r in rows)


def test_train_config_json_round_trip_and_unknown_keys():
    cfg = TrainConfig(seed=7, logit_bias=(1.5, 0, 0, 0, 0), schedule=Schedule(total_epochs=300))
    assert TrainConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(ValueError):
        TrainConfig.from_json({"seed": 1, "learning_rate": 0.1})


def test_schedule_validation():
    with pytest.raises(ValueError):
        Schedule(warmup_epochs=200, total_epochs=200)
    with pytest.raises(ValueError):
        Schedule(tau_end=0.0)
