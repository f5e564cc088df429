"""Database operations for the experiment ledger."""
import logging
from typing import Dict, Iterable, List, Optional, Tuple

from sqlalchemy import case, desc, func
from sqlalchemy.orm import Session

from src.database.models import Dataset, Run, Trial

logger = logging.getLogger(__name__)


def record_run(
    db: Session,
    command: str,
    variant: str,
    task: str,
    seed: int,
    config_hash: str,
    output_path: Optional[str] = None,
    condition: Optional[str] = None
) -> Run:
    """Create a run row and return it with its id assigned."""
    run = Run(command=command, variant=variant, task=task, seed=seed, config_hash=config_hash,
              output_path=output_path, condition=condition)
    db.add(run)
    db.commit()
    db.refresh(run)
    return run


def record_trials(db: Session, run: Run, trials: Iterable[dict]) -> int:
    """Attach trial outcomes to a run.

    Args:
        db: Database session
        run: The owning run
        trials: Dicts with condition, position, size, seed, outcome, reason, duration, zmp_violations

    Returns:
        Number of trials stored
    """
    count = 0
    for trial in trials:
        db.add(Trial(run_id=run.id, **trial))
        count += 1
    db.commit()
    return count


def record_dataset(db: Session, manifest_hash: str, task: str, episodes: int, discarded: int, path: str) -> Dataset:
    dataset = db.query(Dataset).filter(Dataset.manifest_hash == manifest_hash, Dataset.path == path).first()
    if not dataset:
        dataset = Dataset(manifest_hash=manifest_hash, task=task, episodes=episodes, discarded=discarded, path=path)
        db.add(dataset)
        db.commit()
        db.refresh(dataset)
    return dataset


def list_runs(db: Session, limit: int = 20) -> List[Run]:
    return db.query(Run).order_by(desc(Run.id)).limit(limit).all()


def success_rates(db: Session, run_ids: Optional[List[int]] = None) -> Dict[Tuple[str, str], Tuple[int, int]]:
    """Successes and trial counts per (variant, trial condition).

    Args:
        db: Database session
        run_ids: Restrict to these runs; all eval runs otherwise

    Returns:
        Mapping of (variant, condition) to (successes, trials)
    """
    successes = func.sum(case((Trial.outcome == "Success", 1), else_=0))
    query = (
        db.query(Run.variant, Trial.condition, successes, func.count(Trial.id))
        .join(Trial, Trial.run_id == Run.id)
        .filter(Run.command == "eval")
    )
    if run_ids is not None:
        query = query.filter(Run.id.in_(run_ids))
    rows = query.group_by(Run.variant, Trial.condition).order_by(Run.variant, Trial.condition).all()
    return {(variant, condition): (int(won), int(total)) for variant, condition, won, total in rows}
