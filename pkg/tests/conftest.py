import sys
from pathlib import Path

# Make sibling test helpers (reference implementations, oracles) importable.
sys.path.insert(0, str(Path(__file__).parent))
