"""Regenerate the committed demo inputs under demo/.

The demo set is the same synthetic panel the tests run against, written
with a heavier bootstrap (B=200) so demo intervals are reasonably smooth.
"""
from __future__ import annotations

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from conftest import make_inputs  # noqa: E402

if __name__ == "__main__":
    target = ROOT / "demo"
    make_inputs(target, bootstrap_n=200, seed=3)
    print(f"wrote demo inputs to {target}")
