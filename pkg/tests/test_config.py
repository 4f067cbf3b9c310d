import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dispersal.config import (
    evaluate_expression,
    load_document,
    read_csv,
    scenario_from_config,
    step_problem_from_config,
    write_csv,
)
from dispersal.energy_laws import CrowdMotion, DomainError
from dispersal.evolution import ScenarioError, TimeTable

X = {"x": np.array([0.0, 0.5, 1.0])}

BASE = {
    "mesh": {"dim": 1, "bounds": [0, 1], "cells": 8},
    "boundaries": {"left": "dirichlet", "right": "neumann"},
    "initial": 0.5,
    "time": {"tau": 0.1, "T": 0.3},
}


def test_expressions():
    assert np.allclose(evaluate_expression("2*x + 1", X), [1, 2, 3])
    assert np.allclose(evaluate_expression("x^2", X), [0, 0.25, 1])
    assert np.allclose(evaluate_expression("-x^2", X), [0, -0.25, -1])
    assert np.allclose(evaluate_expression("max(0, x - 0.5, 0.1)", X), [0.1, 0.1, 0.5])
    assert np.allclose(evaluate_expression("sin(pi*x)", X), [0, 1, 0], atol=1e-15)
    assert np.allclose(evaluate_expression("exp(0)*e", X), np.e)
    assert np.allclose(evaluate_expression(3, X), 3.0)
    two_d = {"x": np.array([0.3]), "y": np.array([0.5])}
    assert evaluate_expression("(x-0.3)^2 + (y-0.5)^2", two_d)[0] == 0.0


@pytest.mark.parametrize("bad", ["__import__('os')", "x.real", "y", "1/x", "max(1)", "sin(x, x)", "x +", "[1]", True])
def test_expression_rejections(bad):
    with pytest.raises(DomainError):
        evaluate_expression(bad, X)


@given(values=st.lists(st.floats(-1e300, 1e300, allow_nan=False), min_size=1, max_size=20))
def test_csv_round_trip_is_exact(values, tmp_path_factory):
    path = tmp_path_factory.mktemp("csv") / "t.csv"
    v = np.array(values)
    write_csv(path, {"a": v, "label": ["s"] * v.size})
    back = read_csv(path)
    assert np.array_equal(back["a"], v)
    assert list(back["label"]) == ["s"] * v.size


def test_scenario_from_config_defaults():
    sc, cfg = scenario_from_config(BASE)
    assert sc.mesh.n_nodes == 9 and sc.n_steps == 3
    assert np.all(sc.rho0 == 0.5)
    assert cfg.gap_tolerance == 1e-8


def test_full_config(tmp_path):
    nodes = np.linspace(0, 1, 9)
    write_csv(tmp_path / "rho.csv", {"x": nodes, "rho1": nodes, "rho2": 1 - nodes})
    doc = {
        **BASE,
        "boundaries": {"species1": {"left": "dirichlet", "right": "neumann"},
                       "species2": {"left": "neumann", "right": "dirichlet"}},
        "law": {"family": "crowd_motion", "params": {"cap": 2.0}},
        "sigma": ["1", "2"],
        "initial": {"csv": "rho.csv"},
        "drift": [{"t0": 0, "t1": 0.15, "value": [[1.0], ["x"]]}],
        "source": [{"t0": 0, "t1": 0.3, "f0": [1, 0]}],
        "boundary_data": {"g": [0.2, 0.0], "pi": [0.0, 0.1]},
        "weights": [1, 2],
        "solver": {"gap_tol": 1e-9, "max_iter": 500},
    }
    sc, cfg = scenario_from_config(doc, tmp_path)
    assert isinstance(sc.law, CrowdMotion)
    assert np.array_equal(sc.rho0[0], nodes)
    assert isinstance(sc.drift, TimeTable) and isinstance(sc.source, TimeTable)
    assert sc.alpha == (1.0, 2.0)
    assert np.allclose(sc.sigma[1], 2.0)
    assert cfg.max_iterations == 500 and cfg.gap_tolerance == 1e-9


@pytest.mark.parametrize("change, field", [
    ({"time": {"tau": 1.0, "T": 0.5}}, "time.tau"),
    ({"time": {"T": 0.5}}, "time.tau"),
    ({"mesh": {"dim": 3, "bounds": [0, 1], "cells": 4}}, "mesh.dim"),
    ({"initial": "x +"}, "initial"),
    ({"initial": {"csv": "missing.csv"}}, "initial"),
    ({"law": {"family": "unknown"}}, "law"),
    ({"solver": {"tolerance": 1}}, "solver"),
    ({"boundaries": {"left": "neumann", "right": "neumann"}}, "boundaries"),
    ({"sigma": [1, 2, 3]}, "sigma"),
])
def test_errors_name_the_field(change, field, tmp_path):
    with pytest.raises(ScenarioError) as exc:
        scenario_from_config({**BASE, **change}, tmp_path)
    assert exc.value.field == field


def test_load_document_errors(tmp_path):
    with pytest.raises(ScenarioError):
        load_document(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ScenarioError):
        load_document(bad)
    arr = tmp_path / "arr.json"
    arr.write_text(json.dumps([1]))
    with pytest.raises(ScenarioError):
        load_document(arr)


def test_step_problem_from_config():
    doc = {**BASE, "mu": "1", "chi": [[0.1], ["x"]], "boundary_data": {"g": 0.3}}
    problem, _ = step_problem_from_config(doc)
    assert np.allclose(problem.mu, 1.0)
    assert np.allclose(problem.chi[0], 0.1)
    assert np.allclose(problem.g, 0.3)


def test_two_dimensional_config():
    doc = {
        "mesh": {"dim": 2, "bounds": [[0, 1], [0, 1]], "cells": [3, 2]},
        "boundaries": {"left": "dirichlet", "right": "neumann", "top": "neumann", "bottom": "neumann"},
        "initial": "(x-0.3)^2 + (y-0.5)^2",
        "drift": [[0.1, "y"], [0, 0]],
        "time": {"tau": 0.1, "T": 0.2},
    }
    sc, _ = scenario_from_config(doc)
    assert sc.mesh.n_nodes == 12
    assert sc.drift.shape == (2, 12, 2)
