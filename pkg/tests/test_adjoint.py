"""Adjoint (checkpointed) episode gradients against full backprop replay."""

from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import ToyEnv, make_agent
from metods import adjoint as adjoint_mod
from metods.adjoint import (
    CheckpointSchedule,
    WStore,
    adjoint_gradient,
    make_schedule,
)
from metods.metatrain import (
    ReplayMismatch,
    TrainConfig,
    batch_gradient,
    compute_gae,
    normalize_advantages,
    rollout_episode,
)
from metods.numcore import rng_from

ADJOINT_TOL = 1e-6


def bptt_config(**kw):
    base = dict(seed=0, advantage_norm=False)
    base.update(kw)
    return TrainConfig(**base)


def short_episode(params, T, env_seed, natural_end=False):
    env = ToyEnv(env_seed, horizon=T, natural_end=natural_end)
    return rollout_episode(params, env, rng_from([env_seed, 5]),
                           task_seed=env_seed)


def grad_errors(a: dict, b: dict) -> float:
    flat_a = np.concatenate([np.asarray(a[k]).ravel() for k in sorted(a)])
    flat_b = np.concatenate([np.asarray(b[k]).ravel() for k in sorted(b)])
    return float(np.linalg.norm(flat_a - flat_b)
                 / max(np.linalg.norm(flat_b), 1e-12))


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


def test_default_schedule_uses_sqrt_spacing():
    sched = make_schedule(100)
    assert sched.checkpoints == tuple(range(0, 100, 10))
    assert sched.max_segment == 10


def test_schedule_respects_memory_budget():
    sched = make_schedule(100, memory_budget=12)
    assert len(sched.checkpoints) == 10
    assert sched.checkpoints[0] == 0
    assert len(sched.checkpoints) <= 12


def test_generous_budget_stores_every_state():
    sched = make_schedule(7, memory_budget=8)
    assert sched.checkpoints == tuple(range(7))
    assert sched.max_segment == 1


def test_schedule_rejects_bad_arguments():
    with pytest.raises(ValueError, match="T"):
        make_schedule(0)
    with pytest.raises(ValueError, match="at least 2"):
        make_schedule(10, memory_budget=1)


@pytest.mark.parametrize("checkpoints,message", [
    ((), "state 0"),
    ((1, 3), "state 0"),
    ((0, 3, 2), "sorted"),
    ((0, 0), "sorted"),
    ((0, 9), "beyond"),
])
def test_schedule_validation(checkpoints, message):
    with pytest.raises(ValueError, match=message):
        CheckpointSchedule(horizon=9, checkpoints=checkpoints).validate()


def test_segments_partition_the_horizon():
    sched = CheckpointSchedule(horizon=10, checkpoints=(0, 3, 7))
    assert sched.segments == [(0, 3), (3, 7), (7, 10)]
    assert sched.max_segment == 4


# ---------------------------------------------------------------------------
# WStore bookkeeping
# ---------------------------------------------------------------------------


def test_wstore_tracks_live_and_peak():
    store = WStore()
    store.put(0, np.zeros(2))
    store.put(1, np.ones(2))
    store.put(1, np.ones(2))  # duplicate put is a no-op
    assert store.live == 2 and store.peak == 2
    assert store.has(1) and not store.has(5)
    store.drop(0)
    store.drop(0)  # dropping absent entries is fine
    assert store.live == 1 and store.peak == 2
    np.testing.assert_array_equal(store.get(1), np.ones(2))
    with pytest.raises(KeyError):
        store.get(0)


# ---------------------------------------------------------------------------
# Equivalence with full backprop through the episode
# ---------------------------------------------------------------------------


def test_single_step_episode_is_exact():
    params = make_agent(n=4, w0_mode="learned", seed=1)
    traj = short_episode(params, T=1, env_seed=2)
    config = bptt_config()
    bptt = batch_gradient(params, [traj], config)
    adj = adjoint_gradient(params, traj, config)
    assert adj.episodes == 1
    assert adj.loss == pytest.approx(bptt.loss, rel=1e-12)
    for name in bptt.grads:
        np.testing.assert_allclose(adj.grads[name], bptt.grads[name],
                                   rtol=1e-12, atol=1e-15)


CONFIG_GRID = [
    # (rule, w0_mode, depth, n, T)
    ("hebbian", "sampled", 1, 4, 5),
    ("hebbian", "learned", 2, 8, 10),
    ("linear_projected", "fixed", 2, 6, 7),
    ("mlp_projected", "learned", 3, 5, 9),
]


@pytest.mark.parametrize("rule,w0_mode,depth,n,T", CONFIG_GRID)
def test_adjoint_matches_bptt_for_every_budget(rule, w0_mode, depth, n, T):
    params = make_agent(n=n, depth=depth, write_rule=rule, w0_mode=w0_mode,
                        seed=3)
    traj = short_episode(params, T=T, env_seed=4)
    config = bptt_config()
    bptt = batch_gradient(params, [traj], config)

    for budget in (2, max(2, round(math.sqrt(T))), T + 1):
        adj = adjoint_gradient(params, traj, config,
                               schedule=make_schedule(T, budget))
        err = grad_errors(adj.grads, bptt.grads)
        assert err < ADJOINT_TOL, f"budget {budget}: rel err {err:.3e}"
        assert adj.loss == pytest.approx(bptt.loss, rel=1e-10)


def test_gradients_do_not_depend_on_the_schedule():
    """Recomputation reproduces the forward pass bit for bit, so every
    retention schedule must yield the identical gradient."""
    params = make_agent(n=5, depth=2, w0_mode="learned", seed=5)
    traj = short_episode(params, T=9, env_seed=6)
    config = bptt_config()
    dense = adjoint_gradient(params, traj, config,
                             schedule=make_schedule(9, 10))
    for budget in (2, 3, 5):
        sparse = adjoint_gradient(params, traj, config,
                                  schedule=make_schedule(9, budget))
        for name in dense.grads:
            np.testing.assert_array_equal(sparse.grads[name],
                                          dense.grads[name])


def test_adjoint_accepts_externally_normalized_advantages():
    params = make_agent(n=4, w0_mode="learned", seed=7)
    traj = short_episode(params, T=6, env_seed=8)
    config = TrainConfig(seed=0, advantage_norm=True)
    bptt = batch_gradient(params, [traj], config)

    adv, ret = compute_gae(traj.rewards, traj.values, config.discount,
                           config.gae_lambda, traj.bootstrap_value)
    [adv] = normalize_advantages([adv])
    adj = adjoint_gradient(params, traj, config, advantages=adv, returns=ret)
    assert grad_errors(adj.grads, bptt.grads) < ADJOINT_TOL


def test_natural_end_episode_matches_too():
    params = make_agent(n=4, w0_mode="learned", seed=9)
    traj = short_episode(params, T=5, env_seed=10, natural_end=True)
    assert traj.truncated is False
    config = bptt_config()
    bptt = batch_gradient(params, [traj], config)
    adj = adjoint_gradient(params, traj, config)
    assert grad_errors(adj.grads, bptt.grads) < ADJOINT_TOL


def test_adjoint_rejects_horizon_mismatch():
    params = make_agent(w0_mode="learned")
    traj = short_episode(params, T=5, env_seed=11)
    with pytest.raises(ValueError, match="horizon"):
        adjoint_gradient(params, traj, bptt_config(),
                         schedule=make_schedule(4))


def test_adjoint_detects_replay_divergence():
    params = make_agent(w0_mode="learned")
    traj = short_episode(params, T=5, env_seed=12)
    traj.log_probs[2] += 1e-9
    with pytest.raises(ReplayMismatch, match="step 2"):
        adjoint_gradient(params, traj, bptt_config())


def test_peak_storage_stays_within_the_schedule_bound(monkeypatch):
    stores = []

    class SpyStore(WStore):
        def __init__(self):
            super().__init__()
            stores.append(self)

    monkeypatch.setattr(adjoint_mod, "WStore", SpyStore)
    params = make_agent(n=4, depth=2, w0_mode="learned", seed=13)
    traj = short_episode(params, T=10, env_seed=14)
    for budget in (2, 3, 11):
        stores.clear()
        sched = make_schedule(10, budget)
        adjoint_gradient(params, traj, bptt_config(), schedule=sched)
        [store] = stores
        assert store.peak <= len(sched.checkpoints) + sched.max_segment
        assert store.live == 0  # everything released by the end
