"""Database connection handling."""
import os
from contextlib import contextmanager
from typing import Iterator, Optional

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, sessionmaker

from src.database.models import Base
from src.utils.settings import RESULTS_DB

# Create database engine
engine = create_engine(RESULTS_DB)

# Create session factory
SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)


def _ensure_sqlite_dir(url: str) -> None:
    prefix = "sqlite:///"
    if url.startswith(prefix) and url != prefix + ":memory:":
        directory = os.path.dirname(url[len(prefix):])
        if directory:
            os.makedirs(directory, exist_ok=True)


def configure(url: str) -> Engine:
    """Point the session factory at another database URL."""
    global engine
    engine = create_engine(url)
    SessionLocal.configure(bind=engine)
    return engine


def init_db(url: Optional[str] = None) -> None:
    """Initialize the database by creating all tables."""
    if url is not None:
        configure(url)
    _ensure_sqlite_dir(str(engine.url))
    Base.metadata.create_all(bind=engine)


@contextmanager
def get_db_session() -> Iterator[Session]:
    """Get a database session."""
    session = SessionLocal()
    try:
        yield session
        session.commit()
    except Exception:
        session.rollback()
        raise
    finally:
        session.close()
