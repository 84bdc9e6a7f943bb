"""Shared synthetic inputs for pipeline-level tests.

make_inputs() writes a small but complete six-file input set covering all
three estimation routes: five VR countries (one with a gap year), two
low-mortality modelled countries, and five high-mortality modelled units
(three countries plus two Indian states), with study observations drawn
from a known smooth model so covariate selection has a real signal (NMR).
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import yaml

from neocod.causes import cause_set_for
from neocod.pipeline import PipelineRun, RunConfig

ICD10_CODE = {
    "preterm": "P22",
    "intrapartum": "P03",
    "congenital": "Q24",
    "sepsis": "P36",
    "pneumonia": "P23",
    "injuries": "W75",
    "other": "C96",
}

# per-cause (intercept, slope on centred NMR) for the generating model
LOW_PARAMS = {
    "early": {
        "intrapartum": (-0.5, -0.05), "congenital": (-0.3, 0.10),
        "sepsis": (-1.2, 0.25), "pneumonia": (-1.8, 0.10),
        "injuries": (-2.5, 0.0), "other": (-1.0, 0.05),
    },
    "late": {
        "intrapartum": (-1.2, -0.05), "congenital": (-0.1, 0.10),
        "sepsis": (-0.4, 0.25), "pneumonia": (-1.5, 0.10),
        "injuries": (-2.3, 0.0), "other": (-0.9, 0.05),
    },
}

HIGH_PARAMS = {
    "early": {
        "preterm": (0.45, -0.010), "congenital": (-0.9, -0.015),
        "sepsis": (-0.35, 0.030), "pneumonia": (-1.1, 0.010),
        "diarrhoea": (-2.3, 0.020), "tetanus": (-2.4, 0.060),
        "other": (-0.8, 0.0),
    },
    "late": {
        "preterm": (-0.2, -0.010), "congenital": (-1.0, -0.015),
        "sepsis": (0.25, 0.035), "pneumonia": (-0.6, 0.015),
        "diarrhoea": (-1.4, 0.030), "tetanus": (-1.6, 0.060),
        "other": (-0.55, 0.0),
    },
}

UNITS = {
    # unit_id: (method, mdg_region, income_group, nmr_2002, india_state_of)
    "VRA": ("vr", "Developed", "high", 3.0, ""),
    "VRB": ("vr", "Developed", "high", 2.2, ""),
    "VRC": ("vr", "Developed", "high", 4.1, ""),
    "VRD": ("vr", "CEE/CIS", "upper_middle", 3.5, ""),
    "VRE": ("vr", "Developed", "high", 1.9, ""),
    "LMA": ("low_mortality_model", "CEE/CIS", "upper_middle", 6.9, ""),
    "LMB": ("low_mortality_model", "Latin America and Caribbean",
            "upper_middle", 8.1, ""),
    "HMA": ("high_mortality_model", "Sub-Saharan Africa", "low", 37.1, ""),
    "HMB": ("high_mortality_model", "Sub-Saharan Africa", "low", 35.9, ""),
    "HMC": ("high_mortality_model", "East Asia and Pacific",
            "lower_middle", 22.9, ""),
    "INUP": ("high_mortality_model", "Southern Asia", "low", 41.3, "IND"),
    "INMH": ("high_mortality_model", "Southern Asia", "lower_middle",
             22.2, "IND"),
}

STUDY_UNITS = {
    # study-only units: (mdg_region proxy used for the region covariate, nmr)
    "SS1": ("SSA", 44.0),
    "SS2": ("SSA", 31.0),
    "SS3": ("SA", 38.5),
    "SS4": ("EAP", 24.0),
    "SS5": ("SA", 49.0),
    "SS6": ("EAP", 27.0),
}

REGION_OF = {
    "VRA": "HI", "VRB": "HI", "VRC": "HI", "VRD": "ECA", "VRE": "HI",
    "LMA": "ECA", "LMB": "LAC",
    "HMA": "SSA", "HMB": "SSA", "HMC": "EAP", "INUP": "SA", "INMH": "SA",
}

# (unit, year, period, total deaths, causes left unreported)
STUDIES = [
    ("SS1", 1999, "early", 420, ()),
    ("SS1", 1999, "late", 260, ()),
    ("SS2", 2001, "early", 350, ()),
    ("SS2", 2001, "late", 210, ()),
    ("SS3", 2000, "overall", 520, ("pneumonia", "diarrhoea", "tetanus")),
    ("SS3", 2003, "overall", 340, ()),
    ("SS4", 1997, "overall", 280, ()),
    ("SS4", 2002, "overall", 300, ()),
    ("SS5", 1998, "early", 240, ("congenital",)),
    ("SS5", 1998, "late", 150, ("congenital",)),
    ("SS6", 2000, "early", 300, ()),
    ("SS6", 2000, "late", 180, ()),
    ("HMA", 2000, "overall", 480, ()),
    ("HMB", 2001, "early", 400, ()),
    ("HMB", 2001, "late", 230, ()),
    ("HMC", 1999, "overall", 320, ()),
    ("INUP", 2000, "early", 380, ()),
    ("INMH", 2001, "late", 200, ()),
]

ENVELOPES = [
    # unit, year, neonatal deaths, live births, observed early share
    ("VRA", 2000, 1200, 400000, 0.82),
    ("VRA", 2001, 1150, 398000, 0.81),
    ("VRA", 2002, 1080, 396000, 0.80),
    ("VRB", 2000, 900, 410000, 0.79),
    ("VRB", 2001, 870, 408000, 0.78),
    ("VRB", 2002, 830, 405000, 0.78),
    ("VRC", 2000, 2100, 510000, 0.80),
    ("VRC", 2001, 2050, 505000, 0.81),
    ("VRC", 2002, 1980, 500000, 0.80),
    ("VRD", 2000, 1500, 430000, 0.77),
    ("VRD", 2001, 1450, 428000, 0.77),
    ("VRD", 2002, 1400, 426000, 0.76),
    ("VRE", 2000, 760, 390000, 0.83),
    ("VRE", 2001, 730, 388000, 0.82),
    ("VRE", 2002, 700, 386000, 0.84),
    ("LMA", 2002, 4200, 610000, ""),
    ("LMB", 2002, 6700, 830000, ""),
    ("HMA", 2002, 52000, 1400000, ""),
    ("HMB", 2002, 61000, 1700000, ""),
    ("HMC", 2002, 24000, 1050000, ""),
    ("INUP", 2002, 95000, 2300000, ""),
    ("INMH", 2002, 30000, 1350000, ""),
]

MISSING_CAUSE_RECEIVER = {
    "pneumonia": "sepsis", "diarrhoea": "sepsis", "tetanus": "sepsis",
    "congenital": "other", "preterm": "other",
}


def _softmax_fractions(causes, baseline, params, nmr, centre):
    eta = np.array([
        0.0 if c == baseline
        else params[c][0] + params[c][1] * (nmr - centre)
        for c in causes
    ])
    p = np.exp(eta - eta.max())
    return p / p.sum()


def low_true_fractions(period: str, nmr: float) -> dict[str, float]:
    cs = cause_set_for("low_mortality")
    p = _softmax_fractions(cs.causes, cs.baseline, LOW_PARAMS[period], nmr, 3.0)
    return dict(zip(cs.causes, p))


def high_true_fractions(period: str, nmr: float) -> dict[str, float]:
    cs = cause_set_for("high_mortality")
    if period == "overall":
        e = high_true_fractions("early", nmr)
        late = high_true_fractions("late", nmr)
        return {c: 0.74 * e[c] + 0.26 * late[c] for c in e}
    p = _softmax_fractions(cs.causes, cs.baseline, HIGH_PARAMS[period], nmr, 30.0)
    return dict(zip(cs.causes, p))


def _covariate_rows(rng, unit, year, nmr, region):
    # weakly NMR-related with real independent noise, so the generating
    # signal (NMR) stays the clearly best candidate
    femlit = float(np.clip(100 - 1.3 * nmr + rng.normal(0, 6), 30, 99.5))
    lbw = float(np.clip(4 + 0.35 * nmr + rng.normal(0, 2.5), 3, 25))
    rows = [
        (unit, year, "NMR", round(nmr, 2)),
        (unit, year, "femlit", round(femlit, 1)),
        (unit, year, "LBW", round(lbw, 1)),
        (unit, year, "region", region),
    ]
    return rows


def make_inputs(root: Path, *, bootstrap_n: int = 50, seed: int = 3) -> dict:
    """Write the six input files plus a config.yaml; return the path map."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20260823)
    low_causes = cause_set_for("low_mortality").causes
    high_causes = cause_set_for("high_mortality").causes

    # --- covariates --------------------------------------------------------
    cov_rows = []
    nmr_at: dict[tuple[str, int], float] = {}
    for unit, (_, _, _, nmr2002, _) in UNITS.items():
        years = (2000, 2001, 2002) if UNITS[unit][0] == "vr" else (2002,)
        for year in years:
            nmr = nmr2002 * 1.04 ** (2002 - year)
            nmr_at[(unit, year)] = nmr
            cov_rows += _covariate_rows(rng, unit, year, nmr, REGION_OF[unit])
    for unit, year, *_ in STUDIES:
        if (unit, year) in nmr_at:
            continue
        if unit in STUDY_UNITS:
            region, nmr = STUDY_UNITS[unit]
        else:
            region = REGION_OF[unit]
            nmr = UNITS[unit][3] * 1.035 ** (2002 - year)
        nmr_at[(unit, year)] = nmr
        cov_rows += _covariate_rows(rng, unit, year, nmr, region)
    pd.DataFrame(
        cov_rows, columns=["unit_id", "year", "covariate", "value"]
    ).to_csv(root / "covariates.csv", index=False)

    # --- VR counts ---------------------------------------------------------
    vr_rows = []
    for unit in ("VRA", "VRB", "VRC", "VRD", "VRE"):
        years = (2000, 2002) if unit == "VRA" else (2000, 2001, 2002)
        for year in years:
            nmr = nmr_at[(unit, year)]
            for period, total in (("early", int(rng.integers(250, 700))),
                                  ("late", int(rng.integers(120, 350)))):
                frac = low_true_fractions(period, nmr)
                counts = rng.multinomial(total, [frac[c] for c in low_causes])
                for cause, n in zip(low_causes, counts):
                    if n > 0:
                        vr_rows.append(
                            (unit, year, period, 10, ICD10_CODE[cause], int(n))
                        )
    # one ambiguous code (preterm/intrapartum overlap) and one excluded code
    vr_rows.append(("VRA", 2000, "early", 10, "P07", 6))
    vr_rows.append(("VRA", 2000, "early", 10, "R99", 3))
    pd.DataFrame(
        vr_rows,
        columns=["country", "year", "period", "icd_revision", "code", "deaths"],
    ).to_csv(root / "vr.csv", index=False)

    # --- study observations ------------------------------------------------
    obs_rows = []
    for unit, year, period, total, missing in STUDIES:
        frac = high_true_fractions(period, nmr_at[(unit, year)])
        counts = dict(zip(
            high_causes,
            rng.multinomial(total, [frac[c] for c in high_causes]),
        ))
        for cause in missing:
            receiver = MISSING_CAUSE_RECEIVER[cause]
            counts[receiver] += counts.pop(cause)
        row = {"unit_id": unit, "year": year, "period": period,
               "total_deaths": total, "source": f"study-{unit.lower()}"}
        for cause in high_causes:
            row[cause] = counts.get(cause, "")
        obs_rows.append(row)
    pd.DataFrame(
        obs_rows,
        columns=["unit_id", "year", "period", *high_causes,
                 "total_deaths", "source"],
    ).to_csv(root / "observations.csv", index=False)

    # --- groups, envelopes, membership -------------------------------------
    pd.DataFrame(
        [(u, spec[0]) for u, spec in UNITS.items()],
        columns=["country", "method"],
    ).to_csv(root / "groups.csv", index=False)

    pd.DataFrame(
        ENVELOPES,
        columns=["unit_id", "year", "neonatal_deaths", "live_births",
                 "observed_early_share"],
    ).to_csv(root / "envelopes.csv", index=False)

    pd.DataFrame(
        [(u, spec[1], spec[2], spec[4]) for u, spec in UNITS.items()],
        columns=["unit_id", "mdg_region", "income_group", "india_state_of"],
    ).to_csv(root / "membership.csv", index=False)

    paths = {
        "observations": root / "observations.csv",
        "vr": root / "vr.csv",
        "covariates": root / "covariates.csv",
        "groups": root / "groups.csv",
        "envelopes": root / "envelopes.csv",
        "membership": root / "membership.csv",
    }
    config = {
        "inputs": {k: str(v.name) for k, v in paths.items()},
        "output": "out",
        "early_share": 0.74,
        "bootstrap_n": bootstrap_n,
        "seed": seed,
        "jobs": 1,
    }
    (root / "config.yaml").write_text(yaml.safe_dump(config, sort_keys=False))
    return paths


@pytest.fixture(scope="session")
def demo_inputs(tmp_path_factory):
    root = tmp_path_factory.mktemp("demo_inputs")
    return make_inputs(root)


@pytest.fixture(scope="session")
def demo_run(demo_inputs, tmp_path_factory):
    out = tmp_path_factory.mktemp("demo_out")
    config = RunConfig(
        inputs=dict(demo_inputs), out_dir=out,
        bootstrap_n=50, seed=3, jobs=1,
    )
    run = PipelineRun(config)
    run.run()
    return run
