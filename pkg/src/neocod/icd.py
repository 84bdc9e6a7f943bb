"""ICD-9/ICD-10 code ranges for the seven vital-registration cause categories.

The range table is transcribed row by row in its published order. Codes are
matched by interval containment on a normalized key; when a code sits inside
several ranges the most specific (narrowest) range wins, and same-width
ranges from different categories are resolved by row order *and* flagged as a
transcription conflict so callers can report them. Exclusion ranges take part
in the same specificity logic, which is what implements the "except for"
carve-outs inside the broad ICD-9 exclusion band.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache

from . import causes

EXCLUDED = "excluded"
UNMAPPED = "unmapped"

# Digits kept after the (optional) chapter letter, zero/nine padded to form
# sortable interval keys. 4 covers ICD-10 (2 category + 2 sub digits),
# 5 covers ICD-9 (3 category + 2 sub digits).
_WIDTH = {10: 4, 9: 5}
_INT_LEN = {10: 2, 9: 3}

_CODE_RE = re.compile(r"^([A-Z]?)(\d+)(?:\.(\d+))?$")
_LETTER_ONLY_RE = re.compile(r"^[A-Z]$")


class MalformedCodeError(ValueError):
    """Raised for code strings that cannot be parsed for the given revision."""


@dataclass(frozen=True)
class CodeRange:
    target: str          # cause name or EXCLUDED
    start: str           # padded low key, inclusive
    end: str             # padded high key, inclusive
    text: str            # original range text
    row: int             # transcription row order (lower = earlier row)

    def contains(self, lo: str, hi: str) -> bool:
        return self.start <= lo and hi <= self.end

    def inside(self, other: "CodeRange") -> bool:
        return other.start <= self.start and self.end <= other.end

    def overlaps(self, other: "CodeRange") -> bool:
        return self.start <= other.end and other.start <= self.end


@dataclass(frozen=True)
class CodeMapping:
    """Outcome of classifying one code: label plus the ranges that matched."""

    code: str
    revision: int
    label: str                       # cause, EXCLUDED, or UNMAPPED
    matches: tuple[CodeRange, ...]   # minimal matching ranges
    conflict: bool                   # >1 minimal range with different targets


def _parse_bound(text: str, revision: int) -> tuple[str, str]:
    """Return (letter, digits) for one range bound or data code."""
    if revision not in _WIDTH:
        raise ValueError(f"unsupported ICD revision: {revision}")
    text = text.strip().upper().replace(" ", "")
    if not text:
        raise MalformedCodeError("empty code")
    if _LETTER_ONLY_RE.match(text):
        if revision == 9:
            raise MalformedCodeError(f"bare letter is not an ICD-9 code: {text!r}")
        return text, ""
    m = _CODE_RE.match(text)
    if not m:
        raise MalformedCodeError(f"cannot parse code {text!r} (revision {revision})")
    letter, intpart, decpart = m.group(1), m.group(2), m.group(3) or ""
    if revision == 10 and not letter:
        raise MalformedCodeError(f"ICD-10 code must start with a letter: {text!r}")
    intlen = _INT_LEN[revision]
    if len(intpart) > intlen:
        raise MalformedCodeError(f"integer part too long in {text!r}")
    digits = intpart.zfill(intlen) + decpart
    if len(digits) > _WIDTH[revision]:
        raise MalformedCodeError(f"too many digits in {text!r}")
    return letter, digits


def _span(text: str, revision: int) -> tuple[str, str]:
    """Inclusive (low, high) key interval covered by a code or bound."""
    letter, digits = _parse_bound(text, revision)
    w = _WIDTH[revision]
    return letter + digits.ljust(w, "0"), letter + digits.ljust(w, "9")


def _parse_range(text: str, revision: int) -> tuple[str, str]:
    if "-" in text:
        lo_text, hi_text = text.split("-", 1)
        lo, _ = _span(lo_text, revision)
        _, hi = _span(hi_text, revision)
    else:
        lo, hi = _span(text, revision)
    if hi < lo:
        raise ValueError(f"inverted range {text!r}")
    return lo, hi


# Transcribed range table, in published row order. Composite entries are
# comma-separated; "excluded" rows come after the cause rows, as published.
_TABLE_10 = [
    (causes.PRETERM, "P01.0-P01.1, P07, P22, P25-P28, P52, P61.2, P77"),
    (causes.INTRAPARTUM, "P01.7-P02.1, P02.4-P02.6, P03, P07, P10-P15, P20-P21, P24, P50, P90-P91"),
    (causes.CONGENITAL, "D55-D68.9, E01-E07, E70-E84, G10-G99, H, I, K, L, M, N, P35, P76, Q"),
    (causes.SEPSIS, "A00-A35, A38-A99, B, G00-G09, P36-P39"),
    (causes.PNEUMONIA, "A36-A37, J, P23"),
    (causes.INJURIES, "S, V, W, X, Y"),
    (causes.OTHER, "C, D00-D54.9, D69-D99, E00, E08-E69, E85-E99, P00, P01.2-P01.6, "
                   "P02.2-P02.3, P02.7-P02.9, P04-P06, P08, P29, P51, P53-P61.1, "
                   "P61.3-P74, P78, P80-P83, P93-P94"),
    (EXCLUDED, "F, O, P92, P95-P96, R"),
]

_TABLE_9 = [
    (causes.PRETERM, "434.9, 518.1-518.9, 761.0-761.1, 765, 769-770.0, 770.2-770.9, "
                     "772.1, 774.2, 776.6, 777.5-777.6, 786.3"),
    (causes.INTRAPARTUM, "348.1-348.9, 437.1-437.9, 723.4, 761.7-762.1, 762.4-762.6, "
                         "763, 767-768, 770.1, 772.2, 779.0-779.2"),
    (causes.CONGENITAL, "056, 240-243, 245-259, 272-277, 279.3-286, 288.2, 303, 330-348.0, "
                        "349-426, 429-434.0, 435-437.0, 438-451, 520-723.0, 724-728, "
                        "731-759, 775.2, 777.0, 795.2"),
    (causes.SEPSIS, "000-031, 034-055, 057-134, 136-139, 320-326, 491, 730, 771, 780.6, 785.4"),
    (causes.PNEUMONIA, "032-033, 460-490, 492-518.0"),
    (causes.INJURIES, "800-999"),
    (causes.OTHER, "135, 140-239, 244, 260-271, 278-279.2, 287-288.1, 288.3-289, 427, "
                   "452-459, 760, 761.2-761.6, 762.2-762.3, 762.7-762.9, 764, 766, 772.0, "
                   "772.3-774.1, 774.3-775.1, 775.3-776.5, 776.7-776.9, 778.0, 779.5-779.6"),
    (EXCLUDED, "295.4, 305.6, 205.9, 308.9, 311.0, 317.0, 319.0, 779.3, 779.8-799"),
]


@lru_cache(maxsize=None)
def _ranges(revision: int) -> tuple[CodeRange, ...]:
    table = {10: _TABLE_10, 9: _TABLE_9}.get(revision)
    if table is None:
        raise ValueError(f"unsupported ICD revision: {revision}")
    out: list[CodeRange] = []
    for row, (target, spec_text) in enumerate(table):
        for chunk in spec_text.split(","):
            chunk = chunk.strip()
            lo, hi = _parse_range(chunk, revision)
            out.append(CodeRange(target, lo, hi, chunk, row))
    return tuple(out)


def classify_code(code: str, revision: int) -> CodeMapping:
    """Classify one death-certificate code against the transcribed table.

    The code's own interval must be fully contained in a range to match
    (a bare parent code straddling several categories stays unmapped).
    """
    lo, hi = _span(code, revision)
    matched = [r for r in _ranges(revision) if r.contains(lo, hi)]
    if not matched:
        return CodeMapping(code, revision, UNMAPPED, (), False)
    # keep ranges with no *strictly* narrower match; equal spans both survive
    minimal = [
        r for r in matched
        if not any(o.inside(r) and not r.inside(o) for o in matched)
    ]
    minimal.sort(key=lambda r: (r.row, r.start))
    conflict = len({r.target for r in minimal}) > 1
    return CodeMapping(code, revision, minimal[0].target, tuple(minimal), conflict)


def map_icd_code(code: str, revision: int) -> str:
    """Map a code to a cause name, ``"excluded"``, or ``"unmapped"``.

    Ambiguous codes resolve to the earliest published row; use
    :func:`classify_code` or :func:`transcription_conflicts` to surface them.
    """
    return classify_code(code, revision).label


@lru_cache(maxsize=None)
def transcription_conflicts(revision: int) -> tuple[tuple[CodeRange, CodeRange], ...]:
    """All pairs of overlapping ranges with different targets, in row order."""
    ranges = _ranges(revision)
    pairs = []
    for i, a in enumerate(ranges):
        for b in ranges[i + 1:]:
            if a.target != b.target and a.overlaps(b):
                # Nested pairs are intentional carve-outs (specificity decides);
                # only non-nested or identical overlaps are true conflicts.
                if a.inside(b) and not b.inside(a):
                    continue
                if b.inside(a) and not a.inside(b):
                    continue
                pairs.append((a, b))
    return tuple(pairs)
