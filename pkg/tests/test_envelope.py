import numpy as np
import pandas as pd
import pytest

from neocod import envelope
from neocod.causes import INJURIES, OTHER, PRETERM, SEPSIS
from neocod.errors import ValidationError


def test_split_envelope_default_share():
    early, late = envelope.split_envelope(100.0)
    assert early == pytest.approx(74.0)
    assert late == pytest.approx(26.0)
    assert early + late == 100.0


def test_split_envelope_sensitivity_shares():
    assert envelope.SENSITIVITY_SHARES == (0.65, 0.85)
    early, late = envelope.split_envelope(200.0, 0.65)
    assert early == pytest.approx(130.0)
    assert late == pytest.approx(70.0)


def test_split_envelope_validation():
    with pytest.raises(ValidationError):
        envelope.split_envelope(-1.0)
    with pytest.raises(ValidationError):
        envelope.split_envelope(10.0, 1.5)


def test_allocate_deaths_sum_matches_envelope_to_one_ulp():
    rng = np.random.default_rng(2)
    for _ in range(200):
        raw = rng.dirichlet(np.ones(7))
        fractions = {f"c{i}": float(v) for i, v in enumerate(raw)}
        env = float(rng.uniform(1.0, 1e7))
        deaths = envelope.allocate_deaths(fractions, env)
        assert abs(sum(deaths.values()) - env) <= np.spacing(env)


def test_allocate_residual_goes_to_largest():
    fractions = {"a": 0.7, "b": 0.2, "c": 0.1}
    deaths = envelope.allocate_deaths(fractions, 90.0)
    exact = {"a": 63.0, "b": 18.0, "c": 9.0}
    for c in "bc":
        assert deaths[c] == pytest.approx(exact[c], abs=1e-9)
    assert abs(deaths["a"] - exact["a"]) <= 1e-9
    assert abs(sum(deaths.values()) - 90.0) <= np.spacing(90.0)


def test_allocate_validation():
    with pytest.raises(ValidationError):
        envelope.allocate_deaths({"a": 0.5, "b": 0.4}, 10.0)  # sums to 0.9
    with pytest.raises(ValidationError):
        envelope.allocate_deaths({"a": 1.2, "b": -0.2}, 10.0)
    with pytest.raises(ValidationError):
        envelope.allocate_deaths({}, 10.0)
    with pytest.raises(ValidationError):
        envelope.allocate_deaths({"a": 1.0}, -5.0)


def test_risk_per_1000():
    assert envelope.risk_per_1000(5.0, 1000.0) == pytest.approx(5.0)
    assert envelope.risk_per_1000(986900.0, 137_000_000.0) == pytest.approx(7.2, abs=0.01)
    with pytest.raises(ValidationError):
        envelope.risk_per_1000(1.0, 0.0)


def test_combine_periods_is_exact_sum():
    early = {"a": 834.8, "b": 552.7}
    late = {"a": 152.1, "b": 92.1}
    overall = envelope.combine_periods(early, late)
    assert overall["a"] == 834.8 + 152.1
    assert overall["b"] == 552.7 + 92.1
    with pytest.raises(ValidationError):
        envelope.combine_periods({"a": 1.0}, {"b": 1.0})


def test_fractions_from_deaths():
    fr = envelope.fractions_from_deaths({"a": 30.0, "b": 70.0})
    assert fr == {"a": 0.3, "b": 0.7}
    with pytest.raises(ValidationError):
        envelope.fractions_from_deaths({"a": 0.0})


def test_nmr_band_edges():
    assert envelope.nmr_band(0.0) == "[0,5)"
    assert envelope.nmr_band(4.999) == "[0,5)"
    assert envelope.nmr_band(5.0) == "[5,15)"
    assert envelope.nmr_band(14.999) == "[5,15)"
    assert envelope.nmr_band(15.0) == "[15,30)"
    assert envelope.nmr_band(29.999) == "[15,30)"
    assert envelope.nmr_band(30.0) == "[30,inf)"
    assert envelope.nmr_band(61.0) == "[30,inf)"
    with pytest.raises(ValidationError):
        envelope.nmr_band(-1.0)


def test_fold_injuries():
    deaths = {PRETERM: 10.0, INJURIES: 2.0, OTHER: 5.0}
    folded = envelope.fold_injuries(deaths)
    assert INJURIES not in folded
    assert folded[OTHER] == 7.0
    assert folded[PRETERM] == 10.0
    # untouched when injuries absent
    assert envelope.fold_injuries({PRETERM: 1.0}) == {PRETERM: 1.0}


def make_alloc_frame():
    rows = []
    units = [
        ("AAA", "south", 60.0, 1000.0, {PRETERM: 30.0, SEPSIS: 20.0, INJURIES: 10.0}),
        ("BBB", "south", 40.0, 500.0, {PRETERM: 10.0, SEPSIS: 25.0, INJURIES: 5.0}),
        ("CCC", "north", 10.0, 2000.0, {PRETERM: 6.0, SEPSIS: 2.0, INJURIES: 2.0}),
    ]
    for unit, region, _total, births, deaths in units:
        for cause, d in deaths.items():
            rows.append({
                "unit_id": unit, "year": 2000, "region": region,
                "cause": cause, "deaths": d, "live_births": births,
            })
    return pd.DataFrame(rows)


def test_aggregate_by_region():
    out = envelope.aggregate(make_alloc_frame(), ["region"])
    south = out[out["region"] == "south"].set_index("cause")
    assert south.loc[PRETERM, "deaths"] == 40.0
    assert south.loc[SEPSIS, "deaths"] == 45.0
    assert south.loc[PRETERM, "fraction"] == pytest.approx(40.0 / 100.0)
    # births counted once per unit-year: 1000 + 500
    assert south.loc[PRETERM, "risk"] == pytest.approx(1000.0 * 40.0 / 1500.0)
    north = out[out["region"] == "north"].set_index("cause")
    assert north.loc[PRETERM, "fraction"] == pytest.approx(0.6)


def test_aggregate_global_with_injury_folding():
    frame = make_alloc_frame()
    frame["world"] = "global"
    out = envelope.aggregate(frame, ["world"], fold_injuries_into_other=True)
    assert INJURIES not in set(out["cause"])
    other = out[out["cause"] == OTHER]["deaths"].iloc[0]
    assert other == 17.0  # all injuries folded in, no separate other rows
    assert out["fraction"].sum() == pytest.approx(1.0)


def test_aggregate_missing_columns():
    with pytest.raises(ValidationError):
        envelope.aggregate(pd.DataFrame({"unit_id": []}), ["region"])
