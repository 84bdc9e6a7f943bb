import pytest

from neocod import causes


def test_low_mortality_set():
    cs = causes.LOW_MORTALITY
    assert len(cs.causes) == 7
    assert cs.baseline == causes.PRETERM
    assert causes.DIARRHOEA not in cs.causes
    assert causes.TETANUS not in cs.causes
    assert causes.INJURIES in cs.causes


def test_high_mortality_set():
    cs = causes.HIGH_MORTALITY
    assert len(cs.causes) == 8
    assert cs.baseline == causes.INTRAPARTUM
    assert causes.INJURIES not in cs.causes
    assert causes.DIARRHOEA in cs.causes
    assert causes.TETANUS in cs.causes


def test_non_baseline_order_preserved():
    cs = causes.HIGH_MORTALITY
    assert cs.baseline not in cs.non_baseline
    assert len(cs.non_baseline) == 7
    # order of the remaining causes matches the full tuple
    filtered = tuple(c for c in cs.causes if c != cs.baseline)
    assert cs.non_baseline == filtered


def test_index_lookup():
    cs = causes.LOW_MORTALITY
    assert cs.causes[cs.index(causes.SEPSIS)] == causes.SEPSIS
    with pytest.raises(ValueError):
        cs.index(causes.TETANUS)


def test_invalid_baseline_rejected():
    with pytest.raises(ValueError):
        causes.CauseSet("low_mortality", causes.LOW_MORTALITY.causes, causes.SEPSIS)


def test_cause_set_lookup_by_family():
    assert causes.cause_set_for("low_mortality") is causes.LOW_MORTALITY
    assert causes.cause_set_for("high_mortality") is causes.HIGH_MORTALITY
    assert causes.cause_set_for("vr") is causes.VR
    with pytest.raises(ValueError):
        causes.cause_set_for("medium")
