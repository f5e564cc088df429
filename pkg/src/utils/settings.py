"""Runtime settings read from the environment."""
import os

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

LOG_LEVEL = os.getenv("TACT_LOG_LEVEL", "INFO")
LOG_DIR = os.getenv("TACT_LOG_DIR", "logs")
RESULTS_DB = os.getenv("TACT_RESULTS_DB", "sqlite:///results/ledger.db")
WORKERS = int(os.getenv("TACT_WORKERS", "1"))
