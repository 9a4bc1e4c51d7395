import sys
from pathlib import Path

# make shared test helpers (fd_framework, oracle_metrics) importable
sys.path.insert(0, str(Path(__file__).resolve().parent))
