from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from src.expert import collector
from src.expert.collector import (
    CollectionSetup,
    EpisodeSpec,
    attempt_seed,
    collect_episode,
    dataset_plan,
    run_expert,
)
from src.expert.episode import (
    DatasetManifest,
    Episode,
    EpisodeHeader,
    Frame,
    ManifestEntry,
    encode_image,
    episode_bytes,
    read_episode,
    read_manifest,
    validate_episode,
    write_episode,
    write_manifest,
)
from src.expert.scripted import (
    ExpertConfig,
    ExpertPhase,
    ScriptedExpert,
    elbow_out,
    holdup_positions,
    regulate_squeeze,
)
from src.sim.scene import TaskKind, TaskStatus
from src.sim.world import spawn
from src.utils.errors import CollectionFailed, EpisodeFormatError, NumericalFailure

LINKS = (0.28, 0.25, 0.05)


@given(st.floats(-0.1, 0.5), st.floats(0.6, 1.1), st.sampled_from([1.0, -1.0]))
def test_elbow_out_keeps_link_lengths(x, z, sign):
    shoulder = np.array([0.2 * sign, 1.4])
    tip = np.array([sign * x, z])
    elbow = elbow_out(tip, shoulder, sign, LINKS)
    assert np.linalg.norm(elbow - shoulder) == pytest.approx(LINKS[0])
    wrist = tip + np.array([0.0, LINKS[2]])
    if np.linalg.norm(wrist - shoulder) < LINKS[0] + LINKS[1] - 1e-3:
        assert np.linalg.norm(wrist - elbow) == pytest.approx(LINKS[1], abs=1e-9)


def test_elbow_points_outward():
    shoulder = np.array([0.2, 1.4])
    elbow = elbow_out(np.array([0.25, 0.95]), shoulder, 1.0, LINKS)
    assert elbow[0] > shoulder[0]
    mirrored = elbow_out(np.array([-0.25, 0.95]), -shoulder * np.array([1.0, -1.0]), -1.0, LINKS)
    np.testing.assert_allclose(mirrored, elbow * np.array([-1.0, 1.0]), atol=1e-12)


def test_regulate_squeeze():
    out = regulate_squeeze(np.array([0.005, 0.005]), (2.0, 8.0), (4.5, 7.5), 0.001, 0.015)
    np.testing.assert_allclose(out, [0.006, 0.004])
    assert regulate_squeeze(np.array([0.015, 0.0]), (1.0, 9.0), (4.5, 7.5), 0.001, 0.015).tolist() == [0.015, 0.0]
    assert regulate_squeeze(np.array([0.003, 0.003]), (6.0, 6.0), (4.5, 7.5), 0.001, 0.015).tolist() == [0.003, 0.003]


def test_holdup_positions():
    offsets = holdup_positions(3, 9)
    assert offsets.shape == (9,)
    assert np.all(np.abs(offsets) <= 0.03)
    assert np.array_equal(offsets, holdup_positions(3, 9))


def test_dataset_plan_counts():
    reorient = dataset_plan(TaskKind.REORIENT, seed=0)
    assert len(reorient) == 30
    assert sorted({spec.position for spec in reorient}) == [-0.1, 0.0, 0.1]
    holdup = dataset_plan(TaskKind.HOLD_UP, seed=0)
    assert len(holdup) == 27
    assert {spec.size for spec in holdup} == {"small", "medium", "large"}
    assert len({spec.seed for spec in holdup}) == 27
    assert len(dataset_plan(TaskKind.HOLD_UP, seed=0, episodes_per_condition=2)) == 6


def test_attempt_seed():
    assert attempt_seed(17, 0) == 17
    assert attempt_seed(17, 1) != 17
    assert attempt_seed(17, 1) == attempt_seed(17, 1)


@pytest.fixture
def expert(system):
    return ScriptedExpert(ExpertConfig(), system)


def test_approach_action_is_open_handed(system, expert):
    world = spawn(system.ctx, TaskKind.HOLD_UP, "medium", 0.0, seed=0)
    action, state = expert.expert_action(world, system.start(world).tactile, expert.start(world, 0))
    assert action.shape == (10,)
    assert np.all(np.isfinite(action))
    assert (action[4], action[9]) == (0.0, 0.0)
    assert state.phase is ExpertPhase.APPROACH


def test_expert_is_seeded(system, expert):
    world = spawn(system.ctx, TaskKind.REORIENT, "reorient", 0.0, seed=0)
    tactile = system.start(world).tactile
    a, _ = expert.expert_action(world, tactile, expert.start(world, 5))
    b, _ = expert.expert_action(world, tactile, expert.start(world, 5))
    c, _ = expert.expert_action(replace(world, time=1.0), tactile, expert.start(world, 6))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_hold_targets_move_only_outside_force_window(system, expert):
    world = spawn(system.ctx, TaskKind.HOLD_UP, "medium", 0.0, seed=0)
    tactile = system.start(world).tactile
    holding = replace(expert.start(world, 0), phase=ExpertPhase.HOLD, squeeze=np.array([0.005, 0.005]))
    steady = replace(world, arm_forces=(6.0, 6.0))
    first, state = expert.expert_action(steady, tactile, holding)
    second, _ = expert.expert_action(replace(steady, time=1.0), tactile, state)
    np.testing.assert_array_equal(first, second)
    assert (first[4], first[9]) == (1.0, 1.0)
    slipping, _ = expert.expert_action(replace(steady, arm_forces=(1.0, 6.0)), tactile, state)
    assert not np.array_equal(first, slipping)


def _episode(n_frames: int = 3) -> Episode:
    header = EpisodeHeader(task="HoldUp", size="small", position=0.01, seed=4, config_hash="c0ffee", n_cells=2,
                           image_width=2, image_height=1)
    rng = np.random.default_rng(0)
    frames = [Frame(tick=50 * i, q=rng.normal(size=6).tolist(), touch=[0.1 * i, 0.0], proximity=[0.0, 1.0 / 3.0],
                    image=encode_image(rng.integers(0, 256, (1, 2, 3))), action=rng.normal(size=10).tolist())
              for i in range(n_frames)]
    return Episode(header=header, frames=frames)


def test_episode_file_round_trip(tmp_path):
    episode = _episode()
    path = tmp_path / "episode_000.jsonl"
    write_episode(str(path), episode)
    loaded = read_episode(str(path), expected_hash="c0ffee")
    assert episode_bytes(loaded) == path.read_bytes()
    assert loaded.actions().shape == (3, 10)
    assert loaded.frames[1].pixels(2, 1).shape == (1, 2, 3)
    assert loaded.duration == pytest.approx(0.3)


@pytest.mark.parametrize("change", [
    {"tick": 7},
    {"q": [0.0] * 5},
    {"touch": [0.0]},
    {"image": encode_image(np.zeros((2, 2, 3)))},
    {"action": [float("nan")] * 10},
])
def test_validate_rejects_bad_frames(change):
    episode = _episode()
    episode.frames[1] = episode.frames[1].model_copy(update=change)
    with pytest.raises(EpisodeFormatError):
        validate_episode(episode)


def test_validate_rejects_other_config():
    with pytest.raises(EpisodeFormatError):
        validate_episode(_episode(), expected_hash="other")


def test_malformed_episode_file(tmp_path):
    path = tmp_path / "broken.jsonl"
    path.write_text('{"task": "HoldUp"}\n')
    with pytest.raises(EpisodeFormatError):
        read_episode(str(path))


def test_manifest_checksums(tmp_path):
    digest = write_episode(str(tmp_path / "episode_000.jsonl"), _episode())
    manifest = DatasetManifest(task="HoldUp", config_hash="c0ffee", episodes=[
        ManifestEntry(file="episode_000.jsonl", sha256=digest, size="small", position=0.01, seed=4, frames=3)])
    write_manifest(str(tmp_path), manifest)
    assert read_manifest(str(tmp_path), expected_hash="c0ffee") == manifest

    with pytest.raises(EpisodeFormatError):
        read_manifest(str(tmp_path), expected_hash="other")
    (tmp_path / "episode_000.jsonl").write_bytes(b"tampered\n")
    with pytest.raises(EpisodeFormatError):
        read_manifest(str(tmp_path))
    with pytest.raises(EpisodeFormatError):
        read_manifest(str(tmp_path / "missing"))


def test_frames_are_recorded_at_policy_rate():
    setup = CollectionSetup()
    status, frames = run_expert(setup, EpisodeSpec(TaskKind.HOLD_UP, "medium", 0.0, 0), seed=0, max_ticks=200)
    assert status is TaskStatus.IN_PROGRESS
    assert [f.tick for f in frames] == [0, 50, 100, 150]
    assert all(len(f.touch) == 40 for f in frames)



def test_failed_expert_runs_are_reseeded(tmp_path, monkeypatch):
    seeds = []

    def diverge(setup, spec, seed):
        seeds.append(seed)
        raise NumericalFailure("preview state blew up")

    monkeypatch.setattr(collector, "run_expert", diverge)
    setup = CollectionSetup().model_copy(update={"expert": ExpertConfig(max_retries=2)})
    with pytest.raises(CollectionFailed):
        collect_episode(setup, EpisodeSpec(TaskKind.REORIENT, "reorient", 0.0, 7), tmp_path / "episode.jsonl")
    assert seeds == [attempt_seed(7, a) for a in range(3)]


def test_programming_errors_are_not_retried(tmp_path, monkeypatch):
    calls = []

    def broken(setup, spec, seed):
        calls.append(seed)
        raise ValueError("bad frame shape")

    monkeypatch.setattr(collector, "run_expert", broken)
    with pytest.raises(ValueError):
        collect_episode(CollectionSetup(), EpisodeSpec(TaskKind.REORIENT, "reorient", 0.0, 0),
                        tmp_path / "episode.jsonl")
    assert len(calls) == 1

@pytest.mark.slow
@pytest.mark.parametrize("spec", [EpisodeSpec(TaskKind.REORIENT, "reorient", 0.0, 0),
                                  EpisodeSpec(TaskKind.HOLD_UP, "medium", 0.0, 0)])
def test_expert_solves_task(tmp_path, spec):
    episode, digest, _ = collect_episode(CollectionSetup(config_hash="h"), spec, tmp_path / "episode.jsonl")
    assert episode.header.outcome == "Success"
    assert len(digest) == 64
