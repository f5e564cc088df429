"""Implementations of the ``tact`` subcommands."""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from src.database.connection import get_db_session, init_db
from src.database.operations import list_runs, record_dataset, record_run, record_trials, success_rates
from src.expert.collector import collect_dataset, dataset_plan
from src.expert.episode import DatasetManifest, load_dataset, read_manifest
from src.harness.config import ExperimentConfig
from src.harness.evaluation import EvalReport, evaluate, read_report, write_report
from src.harness.report import write_report_files
from src.harness.training import read_loss_csv, subset_episodes, train_policy, write_loss_csv
from src.policy.config import REPLAY
from src.utils.errors import ConfigMismatch, InvalidConfig
from src.utils.settings import WORKERS

logger = logging.getLogger(__name__)


def _out_dir(config: ExperimentConfig, out: Optional[str], leaf: str) -> Path:
    if out:
        return Path(out)
    return Path(config.experiment.out_dir) / config.experiment.name / leaf


def _workers(section_value: int) -> int:
    return section_value if section_value > 0 else WORKERS


def cmd_collect(config: ExperimentConfig, seed: Optional[int] = None, out: Optional[str] = None) -> Path:
    """Collect the demonstration set and write its manifest."""
    seed = config.experiment.seed if seed is None else seed
    out_dir = _out_dir(config, out, "dataset")
    plan = dataset_plan(config.task, seed, config.dataset.episodes_per_condition or None, config.expert)
    logger.info(f"Collecting {len(plan)} {config.task.value} demonstrations into {out_dir}")
    manifest = collect_dataset(config.collection_setup(), plan, out_dir, _workers(config.dataset.workers))
    init_db()
    with get_db_session() as db:
        record_dataset(db, manifest.manifest_hash(), manifest.task, len(manifest.episodes), manifest.discarded,
                       str(out_dir))
    return out_dir


def check_dataset(config: ExperimentConfig, dataset: str) -> DatasetManifest:
    """Manifest of ``dataset`` if it was collected under this config.

    Raises:
        ConfigMismatch: If the dataset was collected under another config
    """
    manifest = read_manifest(dataset)
    if manifest.config_hash != config.dataset_hash():
        raise ConfigMismatch(f"dataset {dataset} was collected under config {manifest.config_hash[:12]}, "
                             f"this config is {config.dataset_hash()[:12]}")
    return manifest


def cmd_train(config: ExperimentConfig, dataset: str, seed: Optional[int] = None,
              fraction: Optional[float] = None, out: Optional[str] = None, condition: Optional[str] = None) -> Path:
    """Train the configured variant and write its checkpoint and loss curve."""
    seed = config.experiment.seed if seed is None else seed
    fraction = config.training.fraction if fraction is None else fraction
    if not 0.0 < fraction <= 1.0:
        raise InvalidConfig("training fraction must be in (0, 1]")
    variant = config.experiment.variant
    cfg = config.policy_config()
    check_dataset(config, dataset)
    episodes = subset_episodes(load_dataset(dataset, config.dataset_hash()), fraction, seed)
    logger.info(f"Training {variant} (seed {seed}) on {len(episodes)} episodes for {config.training.steps} steps")

    policy, history = train_policy(cfg, episodes, config.training.steps, config.training.batch_size, seed,
                                   config.training.log_every, config.training.clip_norm)
    out_dir = _out_dir(config, out, "train")
    tag = _tag(variant, seed, fraction)
    checkpoint = out_dir / f"{tag}.ckpt"
    policy.save(str(checkpoint))
    write_loss_csv(str(out_dir / f"{tag}_loss.csv"), history)

    init_db()
    with get_db_session() as db:
        record_run(db, "train", variant, config.task.value, seed, cfg.config_hash(), str(checkpoint), condition)
    return checkpoint


def _tag(variant: str, seed: int, fraction: float = 1.0) -> str:
    safe = variant.replace("/", "_")
    return f"{safe}_s{seed}" if fraction >= 1.0 else f"{safe}_f{fraction:g}_s{seed}"


def cmd_eval(config: ExperimentConfig, checkpoint: Optional[str] = None, dataset: Optional[str] = None,
             seed: Optional[int] = None, out: Optional[str] = None, condition: Optional[str] = None) -> Path:
    """Evaluate a checkpoint (or the Replay baseline) over the configured grid.

    Returns:
        Path of the written report JSON
    """
    seed = config.experiment.seed if seed is None else seed
    variant = config.experiment.variant
    replay = None
    if variant == REPLAY:
        if dataset is None:
            raise InvalidConfig("Replay evaluation needs --dataset")
        check_dataset(config, dataset)
        replay = load_dataset(dataset, config.dataset_hash())
    elif checkpoint is None:
        raise InvalidConfig(f"{variant} evaluation needs --checkpoint")

    report = evaluate(config, seed, checkpoint=checkpoint, replay_episodes=replay,
                      workers=_workers(config.evaluation.workers))
    out_dir = _out_dir(config, out, "eval")
    name = _tag(variant, seed) if condition is None else f"{_tag(variant, seed)}_{condition.replace('=', '')}"
    path = out_dir / f"report_{name}.json"
    write_report(str(path), report)

    init_db()
    with get_db_session() as db:
        run = record_run(db, "eval", variant, config.task.value, seed, report.config_hash, str(path), condition)
        record_trials(db, run, (t.ledger_row() for t in report.trials))
    return path


def _ensure_dataset(config: ExperimentConfig, out_dir: Path) -> str:
    dataset = out_dir / "dataset"
    try:
        check_dataset(config, str(dataset))
        logger.info(f"Reusing dataset {dataset}")
    except Exception as e:
        logger.info(f"Collecting a fresh dataset ({e})")
        cmd_collect(config, out=str(dataset))
    return str(dataset)


def _train(config: ExperimentConfig, dataset: str, seed: int, out_dir: Path, fraction: float = 1.0,
           condition: Optional[str] = None) -> Optional[str]:
    if config.experiment.variant == REPLAY:
        return None
    return str(cmd_train(config, dataset, seed=seed, fraction=fraction, out=str(out_dir / "train"),
                         condition=condition))


def _evaluate_into(config: ExperimentConfig, checkpoint: Optional[str], dataset: str, seed: int, out_dir: Path,
                   condition: Optional[str] = None) -> Path:
    return cmd_eval(config, checkpoint=checkpoint, dataset=dataset, seed=seed, out=str(out_dir / "eval"),
                    condition=condition)


def cmd_ablate(config: ExperimentConfig, out: Optional[str] = None) -> Path:
    """Train and evaluate every ablation variant over every seed, then report.

    Optional sweeps: training-data fractions and admittance on/off, both run
    with the first listed variant. The admittance sweep only changes the
    evaluation scene, so it reuses that variant's full-data checkpoints.
    """
    out_dir = _out_dir(config, out, "ablation")
    dataset = _ensure_dataset(config, out_dir)
    ablation = config.ablation
    report_paths: List[Path] = []
    base_checkpoints: Dict[int, Optional[str]] = {}

    for i, variant in enumerate(ablation.variants):
        variant_config = config.with_updates(experiment={"variant": variant})
        for seed in ablation.seeds:
            checkpoint = _train(variant_config, dataset, seed, out_dir)
            if i == 0:
                base_checkpoints[seed] = checkpoint
            report_paths.append(_evaluate_into(variant_config, checkpoint, dataset, seed, out_dir))

    base = config.with_updates(experiment={"variant": ablation.variants[0]})
    for fraction in ablation.fractions:
        condition = f"fraction={fraction:g}"
        for seed in ablation.seeds:
            checkpoint = _train(base, dataset, seed, out_dir, fraction=fraction, condition=condition)
            report_paths.append(_evaluate_into(base, checkpoint, dataset, seed, out_dir, condition))
    for enabled in ablation.admittance:
        eval_config = base.with_updates(retarget={"admittance_enabled": enabled})
        condition = f"admittance={str(enabled).lower()}"
        for seed in ablation.seeds:
            report_paths.append(_evaluate_into(eval_config, base_checkpoints[seed], dataset, seed, out_dir,
                                               condition))

    reports = [read_report(str(p)) for p in report_paths]
    loss_curves = {p.stem.replace("_loss", ""): read_loss_csv(str(p))
                   for p in sorted((out_dir / "train").glob("*_loss.csv"))}
    write_report_files(str(out_dir / "report"), reports, loss_curves)
    return out_dir / "report"


def cmd_report(report_paths: Sequence[str], out: str, loss_paths: Sequence[str] = ()) -> Path:
    if not report_paths:
        raise InvalidConfig("report needs at least one report file")
    reports: List[EvalReport] = [read_report(p) for p in report_paths]
    curves: Dict = {Path(p).stem: read_loss_csv(p) for p in loss_paths}
    write_report_files(out, reports, curves)
    return Path(out)


def cmd_ledger(limit: int = 20) -> List[str]:
    """One line per recent run, newest first, followed by per-condition success rates."""
    init_db()
    lines = []
    with get_db_session() as db:
        for run in list_runs(db, limit):
            lines.append(f"{run.id:5d}  {run.command:5s}  {run.variant:18s}  {run.task:9s}  seed={run.seed}  "
                         f"{run.condition or '-':20s}  {run.output_path or ''}")
        for (variant, condition), (won, total) in success_rates(db).items():
            lines.append(f"{variant:18s}  {condition:24s}  {won}/{total}")
    return lines
