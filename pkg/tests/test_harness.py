import json
from pathlib import Path

import numpy as np
import pytest

from src.database.connection import get_db_session
from src.database.operations import record_run, record_trials
from src.expert.episode import Episode, EpisodeHeader, Frame, encode_image
from src.harness import commands
from src.harness.config import ExperimentConfig, load_config, render_config
from src.harness.evaluation import EvalReport, eval_plan, evaluate, read_report, write_report
from src.harness.main import main
from src.harness.report import summarize, write_report_files
from src.harness.rollout import ReplayController, TrialResult, TrialSpec, run_trial
from src.harness.training import (
    action_chunks,
    build_samples,
    read_loss_csv,
    subset_episodes,
    policy_adjacency,
    train_policy,
    write_loss_csv,
)
from src.policy.config import variant_config
from src.policy.model import TactPolicy
from src.sim.pipeline import BalanceConfig, ControlSystem, IkConfig, RetargetConfig, build_control_system
from src.sim.scene import SceneConfig, TaskKind, TaskStatus
from src.utils.errors import InvalidConfig, NumericalFailure

CONFIG = """\
# hold-up ablation
EXPERIMENT__TASK=HoldUp
EXPERIMENT__VARIANT=TACT-GCN2
EVAL__SIZES=small,large
POLICY__CHUNK_SIZE=10
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "holdup.env"
    path.write_text(CONFIG)
    return str(path)


def test_load_config(config_file):
    config = load_config(config_file, ["TRAINING__STEPS=7", "lipm__n_preview=120"])
    assert config.task is TaskKind.HOLD_UP
    assert config.evaluation.sizes == ("small", "large")
    assert config.training.steps == 7
    assert config.lipm.n_preview == 120
    policy = config.policy_config()
    assert policy.gcn_hidden == (16, 32)
    assert policy.chunk_size == 10
    assert policy.n_cells == 40


@pytest.mark.parametrize("name", ["holdup.env", "reorient.env"])
def test_shipped_configs_load(name):
    config = load_config(str(Path(__file__).resolve().parent.parent / "configs" / name))
    assert config == ExperimentConfig().with_updates(experiment={"name": config.experiment.name, "task": config.task},
                                                     ablation={"variants": list(config.ablation.variants)})


def test_replay_has_no_policy(config_file):
    config = load_config(config_file, ["EXPERIMENT__VARIANT=Replay"])
    with pytest.raises(InvalidConfig):
        config.policy_config()


@pytest.mark.parametrize("overrides", [
    ["NOSECTION__X=1"],
    ["TRAINING__UNKNOWN=1"],
    ["TRAINING__FRACTION=1.5"],
    ["EXPERIMENT__VARIANT=TACT-GCN9"],
    ["TRAINING__STEPS"],
])
def test_invalid_config(config_file, overrides):
    with pytest.raises(InvalidConfig):
        load_config(config_file, overrides)


def test_missing_config_file(tmp_path):
    with pytest.raises(InvalidConfig):
        load_config(str(tmp_path / "nope.env"))


def test_rendered_config_loads_back(tmp_path, config_file):
    config = load_config(config_file, ["EVAL__TEXTURES=plain,checker", "SCENE__PROXIMITY_ENABLED=false"])
    path = tmp_path / "rendered.env"
    path.write_text(render_config(config))
    assert load_config(str(path)) == config


def test_dataset_hash_tracks_collection_inputs():
    base = ExperimentConfig()
    assert base.with_updates(training={"steps": 3}).dataset_hash() == base.dataset_hash()
    assert base.with_updates(scene={"friction": 0.5}).dataset_hash() != base.dataset_hash()
    assert base.with_updates(experiment={"task": "HoldUp"}).dataset_hash() != base.dataset_hash()


def test_action_chunks_repeat_final_action():
    actions = np.arange(3.0)[:, None] * np.ones((1, 10))
    chunks, mask = action_chunks(actions, 4)
    assert chunks.shape == (3, 4, 10)
    assert chunks[1, :, 0].tolist() == [1.0, 2.0, 2.0, 2.0]
    assert mask.tolist() == [[1, 1, 1, 0], [1, 1, 0, 0], [1, 0, 0, 0]]


def test_subset_episodes():
    episodes = list(range(30))
    subset = subset_episodes(episodes, 0.4, seed=1)
    assert len(subset) == 12
    assert subset == sorted(subset)
    assert subset == subset_episodes(episodes, 0.4, seed=1)
    assert subset_episodes(episodes, 1.0, seed=1) == episodes
    assert len(subset_episodes(episodes, 0.01, seed=1)) == 1


def test_loss_csv_round_trip(tmp_path):
    history = [{"step": 0, "loss": 1.5, "l1": 1.25, "kl": 0.025}, {"step": 1, "loss": 0.1, "l1": 0.05, "kl": 0.005}]
    path = str(tmp_path / "losses.csv")
    write_loss_csv(path, history)
    curves = read_loss_csv(path)
    assert curves["loss"].tolist() == [1.5, 0.1]
    assert curves["step"].tolist() == [0.0, 1.0]


def _synthetic_episode(seed: int, n_frames: int = 4) -> Episode:
    rng = np.random.default_rng(seed)
    header = EpisodeHeader(task="HoldUp", size="small", position=0.0, seed=seed, config_hash="h", n_cells=40,
                           image_width=64, image_height=48)
    frames = [Frame(tick=50 * i, q=rng.normal(size=6).tolist(), touch=rng.uniform(size=40).tolist(),
                    proximity=rng.uniform(size=40).tolist(),
                    image=encode_image(rng.integers(0, 256, (48, 64, 3))), action=rng.normal(size=10).tolist())
              for i in range(n_frames)]
    return Episode(header=header, frames=frames)


def test_training_is_seeded():
    cfg = variant_config("TACT", chunk_size=3, d_model=8, heads=2, ffn_hidden=16, encoder_layers=1,
                         decoder_layers=1, latent_dim=2, vision_channels=(2, 2, 2), lr=1e-3)
    episodes = [_synthetic_episode(0), _synthetic_episode(1)]
    assert len(build_samples(episodes, cfg)) == 8
    first, history = train_policy(cfg, episodes, steps=3, batch_size=2, seed=4, log_every=0)
    second, again = train_policy(cfg, episodes, steps=3, batch_size=2, seed=4, log_every=0)
    assert history == again
    assert [h["step"] for h in history] == [0, 1, 2]
    for (_, a), (_, b) in zip(first.named_parameters(), second.named_parameters()):
        assert np.array_equal(a.data, b.data)


def test_reorient_eval_grid():
    specs = eval_plan(ExperimentConfig(), seed=0)
    assert len(specs) == 21
    assert specs[0].condition == "p=-0.20"
    assert specs[10].position == 0.0
    assert specs[-1].condition == "p=+0.20"
    assert len({s.seed for s in specs}) == 21


def test_holdup_eval_grid():
    config = ExperimentConfig().with_updates(experiment={"task": "HoldUp"})
    specs = eval_plan(config, seed=2)
    assert len(specs) == 12
    assert [s.condition for s in specs[::3]] == ["small", "medium", "large", "unseen"]
    assert all(abs(s.position) <= 0.03 for s in specs)
    assert specs == eval_plan(config, seed=2)


def test_generalization_conditions_are_labelled():
    config = ExperimentConfig().with_updates(evaluation={"textures": ["plain", "checker"]})
    specs = eval_plan(config, seed=0)
    assert len(specs) == 42
    assert specs[21].condition == "p=-0.20@x1-checker"
    assert specs[21].texture == "checker"


def test_replay_holds_last_action():
    replay = ReplayController(np.array([[0.0] * 10, [1.0] * 10]))
    assert replay.action(0)[0] == 0.0
    assert replay.action(5)[0] == 1.0


def _trial(condition: str, outcome: str, seed: int = 0) -> TrialResult:
    return TrialResult(condition=condition, position=0.0, size="reorient", seed=seed, outcome=outcome,
                       duration=4.5, zmp_violations=0, probe_trace=[[0.5, 0.3, 0.01]] * 3,
                       active_cells=[[0, 0], [2, 1]])


def _report(variant: str = "TACT", seed: int = 0) -> EvalReport:
    return EvalReport(variant=variant, task="Reorient", seed=seed, config_hash="h", trials=[
        _trial("p=+0.00", "Success"), _trial("p=+0.00", "Dropped", 1), _trial("p=+0.10", "DivergedFail", 2)])


def test_report_counts():
    report = _report()
    assert report.success_rate() == pytest.approx(1 / 3)
    assert report.per_condition() == {"p=+0.00": (1, 2), "p=+0.10": (0, 1)}
    assert report.outcome_counts() == {"DivergedFail": 1, "Dropped": 1, "Success": 1}
    np.testing.assert_allclose(report.mean_active_trace(), [[0, 0], [2, 1]])


def test_report_file_round_trip(tmp_path):
    path = str(tmp_path / "eval.json")
    write_report(path, _report())
    assert read_report(path) == _report()


def test_summary_pools_seeds():
    summary = summarize([_report(seed=0), _report(seed=1), _report("Replay")])
    assert summary[("TACT", "p=+0.00")] == (2, 4)
    assert summary[("TACT", "total")] == (2, 6)
    assert summary[("Replay", "total")] == (1, 3)


def test_report_files(tmp_path):
    paths = write_report_files(str(tmp_path / "report"), [_report(), _report("TACT-w/o-vision")],
                               {"tact": {"step": np.arange(3.0), "loss": np.array([3.0, 2.0, 1.0])}})
    assert len(paths["trials"].read_text().splitlines()) == 7
    assert paths["summary"].read_text().splitlines()[0] == "variant,condition,successes,trials,rate"
    for name in ("success", "attention", "active_cells", "losses"):
        assert paths[name].read_text().lstrip().startswith("<?xml")


def test_empty_report_still_plots(tmp_path):
    empty = EvalReport(variant="TACT", task="HoldUp", seed=0, config_hash="h", trials=[])
    paths = write_report_files(str(tmp_path), [empty])
    assert len(paths["trials"].read_text().splitlines()) == 1
    assert paths["attention"].exists()


def test_cli_workbench_error_exits_1(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    code = main(["eval", "--config", str(tmp_path / "missing.env")])
    assert code == 1
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "InvalidConfig"


def test_cli_other_failure_exits_2(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    code = main(["report", str(tmp_path / "missing.json"), "--out", str(tmp_path / "out")])
    assert code == 2
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "FileNotFoundError"


def test_cli_replay_needs_dataset(tmp_path, monkeypatch, capsys, config_file):
    monkeypatch.chdir(tmp_path)
    assert main(["eval", "--config", config_file, "--set", "EXPERIMENT__VARIANT=Replay"]) == 1
    assert "InvalidConfig" in capsys.readouterr().err


def test_cli_ledger_lists_runs(ledger, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    with get_db_session() as db:
        run = record_run(db, "eval", "TACT", "Reorient", 0, "h", output_path="report.json")
        record_trials(db, run, [_trial("p=+0.00", "Success").ledger_row()])
    assert main(["ledger"]) == 0
    out = capsys.readouterr().out
    assert "report.json" in out
    assert "1/1" in out


TINY_POLICY = {"chunk_size": 5, "d_model": 8, "heads": 2, "ffn_hidden": 16, "encoder_layers": 1,
               "decoder_layers": 1, "latent_dim": 2, "vision_channels": [2, 2, 2]}


@pytest.fixture
def short_config():
    return ExperimentConfig().with_updates(policy=TINY_POLICY, lipm={"n_preview": 50}, scene={"timeout": 0.3},
                                           evaluation={"positions": [0.0, 0.1]})


@pytest.fixture
def tiny_checkpoint(tmp_path, short_config):
    cfg = short_config.policy_config()
    path = tmp_path / "policy.npz"
    TactPolicy(cfg, policy_adjacency(cfg), seed=0).save(str(path))
    return str(path)


@pytest.fixture
def short_system(short_config):
    return build_control_system(short_config.scene, short_config.lipm, short_config.retarget, short_config.ik)


def _spec(position: float = 0.0) -> TrialSpec:
    return TrialSpec(f"p={position:+.2f}", TaskKind.REORIENT, "reorient", position, seed=0)


def test_untrained_policy_rollout_terminates(short_config, short_system):
    cfg = short_config.policy_config()
    policy = TactPolicy(cfg, policy_adjacency(cfg), seed=0)
    result = run_trial(short_system, _spec(), policy=policy)
    assert result.outcome != TaskStatus.IN_PROGRESS.value
    assert 0.0 < result.duration <= 0.3 + 0.1
    assert len(result.active_cells) >= 1
    assert len(result.probe_trace) == len(result.active_cells)
    assert all(len(row) == 3 for row in result.probe_trace)


def test_replay_rollout_terminates(short_system):
    actions = np.array([[0.25, 0.2, 0.45, 0.25, 0.0, -0.25, 0.2, -0.45, 0.25, 0.0]] * 2)
    result = run_trial(short_system, _spec(), replay=ReplayController(actions))
    assert result.outcome != TaskStatus.IN_PROGRESS.value
    assert result.probe_trace == []
    assert len(result.active_cells) >= 1


def test_rollout_needs_exactly_one_controller(short_system):
    with pytest.raises(ValueError):
        run_trial(short_system, _spec())


def test_numerical_failure_ends_trial_as_diverged(short_config, short_system, monkeypatch):
    def fail(self, state, sample, ticks):
        raise NumericalFailure("preview state blew up")

    monkeypatch.setattr(ControlSystem, "hold", fail)
    cfg = short_config.policy_config()
    result = run_trial(short_system, _spec(), policy=TactPolicy(cfg, policy_adjacency(cfg), seed=0))
    assert result.outcome == "DivergedFail"
    assert result.reason.startswith("NumericalFailure")
    assert result.duration == 0.0


def test_evaluate_is_independent_of_worker_count(short_config, tiny_checkpoint):
    serial = evaluate(short_config, 0, checkpoint=tiny_checkpoint, workers=1)
    parallel = evaluate(short_config, 0, checkpoint=tiny_checkpoint, workers=2)
    assert [t.condition for t in serial.trials] == ["p=+0.00", "p=+0.10"]
    assert all(t.outcome != TaskStatus.IN_PROGRESS.value for t in serial.trials)
    assert serial.to_bytes() == parallel.to_bytes()


def test_admittance_sweep_reuses_trained_checkpoints(tmp_path, monkeypatch):
    trained, evaluated = [], []

    def fake_train(config, dataset, seed=None, fraction=None, out=None, condition=None):
        trained.append((config.experiment.variant, seed, fraction))
        return Path(f"{config.experiment.variant}_{seed}_{fraction}.ckpt")

    def fake_eval(config, checkpoint=None, dataset=None, seed=None, out=None, condition=None):
        evaluated.append((config.retarget.admittance_enabled, checkpoint, condition))
        return Path(f"report_{len(evaluated)}.json")

    monkeypatch.setattr(commands, "_ensure_dataset", lambda config, out_dir: "dataset")
    monkeypatch.setattr(commands, "cmd_train", fake_train)
    monkeypatch.setattr(commands, "cmd_eval", fake_eval)
    monkeypatch.setattr(commands, "read_report", lambda path: _report())
    monkeypatch.setattr(commands, "write_report_files", lambda out, reports, curves: None)

    config = ExperimentConfig().with_updates(ablation={"variants": ["TACT", "TACT-w/o-vision"], "seeds": [0, 1],
                                                       "admittance": [True, False]})
    commands.cmd_ablate(config, out=str(tmp_path))

    assert trained == [("TACT", 0, 1.0), ("TACT", 1, 1.0), ("TACT-w/o-vision", 0, 1.0), ("TACT-w/o-vision", 1, 1.0)]
    sweep = [e for e in evaluated if e[2] is not None]
    assert sweep == [(True, "TACT_0_1.0.ckpt", "admittance=true"), (True, "TACT_1_1.0.ckpt", "admittance=true"),
                     (False, "TACT_0_1.0.ckpt", "admittance=false"), (False, "TACT_1_1.0.ckpt", "admittance=false")]
