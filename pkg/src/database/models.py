"""Database models for the experiment ledger."""
from datetime import datetime

from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, Text
from sqlalchemy.ext.declarative import declarative_base
from sqlalchemy.orm import relationship

Base = declarative_base()


class Run(Base):
    """One train or eval invocation."""
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True)
    command = Column(String(20), nullable=False)  # "train" or "eval"
    variant = Column(String(40), nullable=False)
    task = Column(String(20), nullable=False)
    seed = Column(Integer, nullable=False)
    config_hash = Column(String(64), nullable=False)
    output_path = Column(Text)
    condition = Column(String(100))
    created_at = Column(DateTime, default=datetime.utcnow)

    # Relationships
    trials = relationship("Trial", back_populates="run", cascade="all, delete-orphan")


class Trial(Base):
    """Outcome of one evaluation rollout."""
    __tablename__ = "trials"

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey("runs.id"), nullable=False)
    condition = Column(String(100), nullable=False)
    position = Column(Float, nullable=False)
    size = Column(String(20), nullable=False)
    seed = Column(Integer, nullable=False)
    outcome = Column(String(20), nullable=False)
    reason = Column(Text)
    duration = Column(Float, nullable=False)
    zmp_violations = Column(Integer, default=0)

    # Relationships
    run = relationship("Run", back_populates="trials")


class Dataset(Base):
    """A collected demonstration set."""
    __tablename__ = "datasets"

    id = Column(Integer, primary_key=True)
    manifest_hash = Column(String(64), nullable=False)
    task = Column(String(20), nullable=False)
    episodes = Column(Integer, nullable=False)
    discarded = Column(Integer, default=0)
    path = Column(Text, nullable=False)
    created_at = Column(DateTime, default=datetime.utcnow)
