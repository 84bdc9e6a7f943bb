import math

import numpy as np
import pytest

from neocod import mnlogit, modelio
from neocod.basis import Term
from neocod.causes import HIGH_MORTALITY, LOW_MORTALITY
from neocod.errors import MissingDataError, ValidationError
from neocod.modelio import (
    EquationSpec,
    ModelTable,
    TermSpec,
    dump_models,
    load_models,
    published_models,
)


def test_term_spec_validation():
    with pytest.raises(ValidationError):
        TermSpec("x", "cubic")
    with pytest.raises(ValidationError):
        TermSpec("x", "linear", knots=(1.0, 2.0, 3.0))
    with pytest.raises(ValidationError):
        TermSpec("x", "spline", knots=(1.0, 1.0, 3.0))
    assert not TermSpec("x", "spline", None).knots_known
    assert TermSpec("x", "quadratic").knots_known


def test_term_spec_column_names():
    assert TermSpec("x").column_names() == ("x",)
    assert TermSpec("x", "quadratic").column_names() == ("x", "x_Q")
    assert TermSpec("x", "spline", (0, 1, 2, 3)).column_names() == (
        "x_S1", "x_S2", "x_S3",
    )
    assert TermSpec("x", "spline", None).column_names(2) == ("x_S1", "x_S2")
    with pytest.raises(ValidationError):
        TermSpec("x", "spline", None).column_names()


def test_equation_spec_checks_names():
    with pytest.raises(ValidationError, match="do not match"):
        EquationSpec((TermSpec("x"),), {"y": 1.0, "const": 0.0})
    with pytest.raises(ValidationError, match="do not match"):
        EquationSpec((TermSpec("x"),), {"x": 1.0})  # const missing
    with pytest.raises(ValidationError, match="two terms"):
        EquationSpec(
            (TermSpec("x"), TermSpec("x", "quadratic")),
            {"x": 1.0, "x_Q": 1.0, "const": 0.0},
        )


def test_equation_spec_unknown_spline_width_from_keys():
    eq = EquationSpec(
        (TermSpec("x", "spline", None),),
        {"x_S1": 0.1, "x_S2": 0.2, "x_S3": 0.3, "const": 0.0},
    )
    assert eq.expanded_names() == ("x_S1", "x_S2", "x_S3", "const")
    assert not eq.evaluable
    with pytest.raises(MissingDataError):
        eq.eta({"x": 1.0})


def test_equation_eta_linear_quadratic():
    eq = EquationSpec(
        (TermSpec("a"), TermSpec("b", "quadratic")),
        {"a": 2.0, "b": -1.0, "b_Q": 0.5, "const": 1.0},
    )
    # 1 + 2*3 + (-1)*2 + 0.5*4 = 7
    assert eq.eta({"a": 3.0, "b": 2.0}) == pytest.approx(7.0)
    with pytest.raises(ValidationError, match="missing from row"):
        eq.eta({"a": 3.0})


def test_equation_eta_spline_matches_basis():
    knots = (0.0, 1.0, 2.0)
    term = Term("x", "spline", knots)
    coef = {"x_S1": 0.7, "x_S2": -0.3, "const": 0.25}
    eq = EquationSpec((TermSpec("x", "spline", knots),), dict(coef))
    x = 0.8
    cols = term.build(np.array([x]))[0]
    want = 0.25 + 0.7 * cols[0] - 0.3 * cols[1]
    assert eq.eta({"x": x}) == pytest.approx(want, rel=1e-12)


def test_equation_null_coefficient_blocks_eval():
    eq = EquationSpec((TermSpec("x"),), {"x": 0.5, "const": None})
    assert not eq.evaluable
    with pytest.raises(MissingDataError):
        eq.eta({"x": 1.0})


def test_model_table_validation():
    eq = EquationSpec((), {"const": 0.0})
    with pytest.raises(ValidationError):
        ModelTable(("a", "b"), "c", {"b": eq})
    with pytest.raises(ValidationError, match="expected exactly"):
        ModelTable(("a", "b", "c"), "a", {"b": eq})
    table = ModelTable(("a", "b"), "a", {"b": eq})
    assert table.eta("a", {}) == 0.0
    assert table.ratio("b", {}) == pytest.approx(1.0)


def test_round_trip_through_file(tmp_path):
    table = ModelTable(
        ("a", "b", "c"),
        "a",
        {
            "b": EquationSpec(
                (TermSpec("x"), TermSpec("z", "spline", (0.0, 0.5, 1.5))),
                {"x": 1.25, "z_S1": -0.5, "z_S2": 0.75, "const": 0.1},
            ),
            "c": EquationSpec((), {"const": None}),
        },
    )
    path = tmp_path / "models.json"
    dump_models({("toy", "early"): table}, path)
    loaded = load_models(path)
    assert loaded == {("toy", "early"): table}


def test_from_fit_round_trip_predicts_identically(tmp_path):
    rng = np.random.default_rng(7)
    spec = mnlogit.ModelSpec(
        ("a", "b", "c"), "a", {"b": (Term("x"),), "c": (Term("x", "quadratic"),)}
    )
    frame = {"x": rng.uniform(-1, 1, 30)}
    probs = np.full((30, 3), 1 / 3)
    cells = []
    for i in range(30):
        counts = rng.multinomial(40, probs[i])
        cells.append([(("a",), counts[0]), (("b",), counts[1]), (("c",), counts[2])])
    result = mnlogit.fit(spec, frame, cells)
    table = ModelTable.from_fit(result)
    path = tmp_path / "fitted.json"
    dump_models({("toy", "late"): table}, path)
    loaded = load_models(path)[("toy", "late")]
    spec2 = loaded.to_model_spec()
    new_frame = {"x": np.linspace(-1, 1, 9)}
    p1 = mnlogit.predict(spec, result.coefficients, new_frame)
    p2 = mnlogit.predict(spec2, loaded.coefficient_map(), new_frame)
    np.testing.assert_array_equal(p1, p2)


def test_to_model_spec_needs_knots():
    table = ModelTable(
        ("a", "b"), "a",
        {"b": EquationSpec(
            (TermSpec("x", "spline", None),),
            {"x_S1": 0.1, "x_S2": 0.2, "const": 0.0},
        )},
    )
    with pytest.raises(MissingDataError):
        table.to_model_spec()


def test_load_models_errors(tmp_path):
    with pytest.raises(ValidationError, match="not found"):
        load_models(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ValidationError, match="JSON"):
        load_models(bad)
    wrong = tmp_path / "wrong.json"
    wrong.write_text('{"models": {"f": {"weekly": {}}}}')
    with pytest.raises(ValidationError, match="period"):
        load_models(wrong)


# ---------------------------------------------------------------------------
# packaged coefficient tables


def test_published_tables_present_and_aligned():
    models = published_models()
    assert set(models) == {
        ("low_mortality", "early"), ("low_mortality", "late"),
        ("high_mortality", "early"), ("high_mortality", "late"),
    }
    for period in ("early", "late"):
        low = models[("low_mortality", period)]
        assert low.causes == LOW_MORTALITY.causes
        assert low.baseline == LOW_MORTALITY.baseline
        high = models[("high_mortality", period)]
        assert high.causes == HIGH_MORTALITY.causes
        assert high.baseline == HIGH_MORTALITY.baseline


def test_published_intrapartum_equation_value():
    eq = published_models()[("low_mortality", "early")].equations["intrapartum"]
    eta = eq.eta({"femlit": 93.0})
    assert abs(eta - (-1.102)) < 1e-9
    assert abs(math.exp(eta) - 0.3322) < 1e-4


def test_published_spline_knots_all_unknown():
    # original knot locations were never released
    for table in published_models().values():
        for eq in table.equations.values():
            for t in eq.terms:
                if t.kind == "spline":
                    assert t.knots is None


def test_published_degraded_entries():
    models = published_models()
    low_early = models[("low_mortality", "early")]
    assert low_early.equations["congenital"].coefficients["const"] is None
    assert not low_early.equations["congenital"].evaluable
    # quadratic-only equations evaluate fine
    assert models[("high_mortality", "early")].equations["sepsis"].evaluable
    n_eval = sum(
        eq.evaluable for t in models.values() for eq in t.equations.values()
    )
    assert n_eval == 13


def test_published_period_dummies_match_period():
    # early-period equations use an "early" dummy, late-period a "late" one
    for (family, period), table in published_models().items():
        for eq in table.equations.values():
            for t in eq.terms:
                if t.covariate in ("early", "late"):
                    assert t.covariate == period
