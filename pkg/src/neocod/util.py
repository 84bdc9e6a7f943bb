"""Small shared helpers: rounding, hashing, issue logs."""
from __future__ import annotations

import hashlib
import json
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path


def round_half_up(x: float, ndigits: int = 0) -> float:
    """Round with ties away from zero, e.g. 0.25 -> 0.3 at one digit.

    Published tables use half-up rounding, which differs from Python's
    banker's rounding on exact ties.
    """
    x = float(x)  # numpy scalars repr as np.float64(...), unparseable below
    if x != x:  # NaN passes through
        return x
    q = Decimal(1).scaleb(-ndigits)
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class IssueLog:
    """Collects structured data-quality issues and writes them as NDJSON."""

    def __init__(self) -> None:
        self.issues: list[dict] = []

    def add(self, severity: str, kind: str, message: str, **context) -> None:
        rec = {"severity": severity, "kind": kind, "message": message}
        rec.update(context)
        self.issues.append(rec)

    def count(self, severity: str | None = None) -> int:
        if severity is None:
            return len(self.issues)
        return sum(1 for i in self.issues if i["severity"] == severity)

    def write(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.issues:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def extend(self, other: "IssueLog") -> None:
        self.issues.extend(other.issues)
