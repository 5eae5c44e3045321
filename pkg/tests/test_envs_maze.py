"""Procedural maze generation invariants and episode dynamics."""

from __future__ import annotations

import numpy as np
import pytest

from maze_checks import check_maze_instance, shortest_distances
from metods.envs import random_policy_rollout
from metods.envs.maze import (
    ACTIONS,
    DELTAS,
    HORIZON,
    MAX_ATTEMPTS,
    TARGET_REWARD,
    MazeEnv,
    MazeGenerationError,
    generate_maze,
)

GOLDEN_SEED0 = "\n".join([
    "########",
    "#......#",
    "#T####.#",
    "#.#....#",
    "#.#.####",
    "#.#..#A#",
    "#..#...#",
    "########",
])


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def test_generation_is_deterministic():
    a, b = generate_maze(99), generate_maze(99)
    assert np.array_equal(a.wall, b.wall)
    assert a.target == b.target and a.agent == b.agent


def test_seeds_produce_different_boards():
    boards = {generate_maze(s).serialize() for s in range(30)}
    assert len(boards) > 20


def test_golden_board_seed_zero():
    assert generate_maze(0).serialize() == GOLDEN_SEED0


def test_invariants_hold_across_seeds_and_sizes():
    for size in (4, 5, 8, 10, 12):
        for seed in range(40):
            check_maze_instance(generate_maze(seed, size=size))


def test_thousand_instances_satisfy_all_invariants():
    stats = [check_maze_instance(generate_maze(seed)) for seed in range(1000)]
    free_counts = {s["free"] for s in stats}
    # the board family is bimodal: long corridors plus occasional tiny pockets
    assert free_counts <= {3, 24}
    pockets = sum(s["free"] == 3 for s in stats)
    assert 2 <= pockets <= 60
    corridor = [s for s in stats if s["free"] == 24]
    assert all(s["start_distance"] >= 12 for s in corridor)


def test_size_below_four_is_rejected():
    with pytest.raises(ValueError, match="size"):
        generate_maze(0, size=3)


def test_degenerate_boards_exhaust_the_retry_budget(monkeypatch):
    import metods.envs.maze as maze_mod

    calls = {"n": 0}

    def all_walls(size, rng):
        calls["n"] += 1
        return np.ones((size, size), dtype=bool)

    monkeypatch.setattr(maze_mod, "_sample_corridor", all_walls)
    monkeypatch.setattr(maze_mod, "POCKET_PROB", -1.0)  # never take pockets
    with pytest.raises(MazeGenerationError):
        maze_mod.generate_maze(0)
    assert calls["n"] == MAX_ATTEMPTS


# ---------------------------------------------------------------------------
# Observation window
# ---------------------------------------------------------------------------


def window_oracle(env) -> np.ndarray:
    """3x3 wall window recomputed from the raw grid, row-major, cells beyond
    the board reading as walls."""
    r0, c0 = env.agent
    out = np.empty(9)
    k = 0
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            r, c = r0 + dr, c0 + dc
            inside = 0 <= r < env.size and 0 <= c < env.size
            out[k] = float(env.wall[r, c]) if inside else 1.0
            k += 1
    return out


def test_observation_is_the_local_wall_window():
    rng = np.random.default_rng(5)
    for seed in range(20):
        env = generate_maze(seed)
        assert np.array_equal(env.observation, window_oracle(env))
        for _ in range(30):
            env.step_index(int(rng.integers(4)))
            assert np.array_equal(env.observation, window_oracle(env))


def test_target_is_invisible_in_the_window():
    for seed in range(10):
        env = generate_maze(seed)
        dist = shortest_distances(env.wall, env.target)
        while dist[env.agent] > 1:  # walk until the target is one cell away
            here = dist[env.agent]
            for idx, (dr, dc) in enumerate(DELTAS):
                dest = (env.agent[0] + dr, env.agent[1] + dc)
                if not env.wall[dest] and dist[dest] == here - 1:
                    env.step_index(idx)
                    break
        dr = env.target[0] - env.agent[0]
        dc = env.target[1] - env.agent[1]
        k = (dr + 1) * 3 + (dc + 1)
        assert env.observation[k] == 0.0  # reads as plain free space


def test_dims_and_action_table():
    env = generate_maze(0)
    assert env.n_actions == 4 and env.obs_dim == 9
    assert env.observation.shape == (9,)
    assert ACTIONS == ("up", "down", "left", "right")
    assert DELTAS == ((-1, 0), (1, 0), (0, -1), (0, 1))
    assert env.horizon == HORIZON == 100


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------


def free_neighbor_action(env):
    for idx, (dr, dc) in enumerate(DELTAS):
        if not env.wall[env.agent[0] + dr, env.agent[1] + dc]:
            return idx, (env.agent[0] + dr, env.agent[1] + dc)
    raise AssertionError("free cell with no free neighbor")


def blocked_action(env):
    for idx, (dr, dc) in enumerate(DELTAS):
        if env.wall[env.agent[0] + dr, env.agent[1] + dc]:
            return idx
    raise AssertionError("free cell with no walled neighbor")


def test_moves_update_position_and_walls_block():
    env = generate_maze(1)
    idx, dest = free_neighbor_action(env)
    res = env.step_index(idx)
    assert env.agent == dest and res.reward == 0.0

    before = env.agent
    res = env.step_index(blocked_action(env))
    assert env.agent == before
    assert res.reward == 0.0
    assert res.info.get("blocked") is True
    assert env.steps == 2


def test_named_actions_match_indices():
    a = generate_maze(3)
    b = generate_maze(3)
    for name in ("up", "left", "down", "right"):
        a.step(name)
        b.step_index(ACTIONS.index(name))
        assert a.agent == b.agent


def walk_to_target(env):
    """Follow a BFS-shortest path to the target; returns the arrival reward."""
    dist = shortest_distances(env.wall, env.target)
    reward = 0.0
    while env.agent != env.target:
        here = dist[env.agent]
        for idx, (dr, dc) in enumerate(DELTAS):
            dest = (env.agent[0] + dr, env.agent[1] + dc)
            if not env.wall[dest] and dist[dest] == here - 1:
                reward = env.step_index(idx).reward
                break
        else:
            raise AssertionError("no descent step found")
        if reward:  # arrival respawns the agent elsewhere
            return reward
    raise AssertionError("reached target without reward")


def test_reaching_target_pays_and_respawns():
    env = generate_maze(0)
    start_dist = shortest_distances(env.wall, env.target)[env.agent]
    reward = walk_to_target(env)
    assert reward == TARGET_REWARD == 10.0
    assert env.steps == start_dist
    assert env.agent != env.target
    assert not env.wall[env.agent]
    summary_mid = {"hits": 1}
    while not env.done:
        if env.agent != env.target:
            try:
                walk_to_target(env)
                summary_mid["hits"] += 1
            except (AssertionError, RuntimeError):
                break
    summary = env.episode_summary()
    assert summary["first_reward_step"] == start_dist
    assert summary["return"] == summary["hits"] * TARGET_REWARD
    assert summary["success"] is True


def test_respawn_sequence_is_deterministic_per_seed():
    def hits(seed):
        env = generate_maze(seed)
        spots = []
        while not env.done and len(spots) < 4:
            walk_to_target(env)
            spots.append(env.agent)
        return spots

    assert hits(0) == hits(0)


def test_respawns_cover_multiple_cells():
    env = generate_maze(0, horizon=10_000)
    spots = set()
    for _ in range(40):
        walk_to_target(env)
        spots.add(env.agent)
    assert len(spots) > 5
    assert all(cell != env.target for cell in spots)


def test_horizon_truncates_and_locks_the_episode():
    env = generate_maze(2)
    action = blocked_action(env)
    for _ in range(HORIZON):
        env.step_index(action)
    assert env.done and env.truncated
    assert env.steps == HORIZON
    with pytest.raises(RuntimeError, match="finished"):
        env.step_index(0)
    summary = env.episode_summary()
    assert summary["success"] is False
    assert summary["first_reward_step"] == HORIZON
    assert summary["return"] == 0.0


def test_uniform_random_walk_baseline_sanity():
    trajs = [random_policy_rollout(generate_maze(seed), seed)
             for seed in range(300)]
    assert all(t.length == HORIZON for t in trajs)
    mean = float(np.mean([t.episode_return() for t in trajs]))
    success = float(np.mean([t.summary["success"] for t in trajs]))
    # loose sanity corridor; the acceptance gate pins the exact windows
    assert 0.5 <= mean <= 8.0
    assert 0.0 <= success <= 0.15


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def test_serialize_round_trip_preserves_geometry():
    env = generate_maze(5)
    copy = MazeEnv.deserialize(env.serialize(), seed=5)
    assert np.array_equal(copy.wall, env.wall)
    assert copy.target == env.target and copy.agent == env.agent
    assert np.array_equal(copy.observation, env.observation)


@pytest.mark.parametrize("text,message", [
    ("##\n###", "square"),
    ("..\n.A", "one T and one A"),
    (".x\nTA", "unknown grid character"),
])
def test_deserialize_rejects_malformed_grids(text, message):
    with pytest.raises(ValueError, match=message):
        MazeEnv.deserialize(text)


def test_env_constructor_rejects_bad_placement():
    wall = np.ones((4, 4), dtype=bool)
    wall[1, 1] = wall[1, 2] = False
    with pytest.raises(ValueError, match="free cells"):
        MazeEnv(wall, target=(1, 1), agent=(1, 1))
    with pytest.raises(ValueError, match="free cells"):
        MazeEnv(wall, target=(0, 0), agent=(1, 1))
