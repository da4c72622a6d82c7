import json

import numpy as np
import pytest

from convorder.compare import CompareConfig, pde_crosscheck
from convorder.model import Box, VolatilityField, psd_order, OrderResult
from convorder.scenarios import (
    KINDS,
    ConfigError,
    build_coefficients,
    build_field,
    build_payoff,
    bundled_names,
    load_config,
    separable_perturbation,
    trig_perturbed_field,
    validate,
)


def test_every_bundled_config_validates():
    names = bundled_names()
    assert len(names) >= 14
    kinds = {load_config(n)["kind"] for n in names}
    assert kinds == set(KINDS)


def test_field_families():
    x = np.array([[0.3, -0.7], [1.0, 2.0]])
    for spec in ({"family": "constant", "sigma": [[1.0, 0.0], [0.2, 1.0]]},
                 {"family": "diagonal-trig", "dim": 2, "amp": 0.2},
                 {"family": "linear-clamp", "dim": 2},
                 {"family": "polynomial", "dim": 2},
                 {"family": "trig-perturbed", "amp": 0.1},
                 {"family": "trig-perturbed", "amp": 0.1, "add_outer": [0.5, 0.5]}):
        f = build_field(spec)
        a = f.a(x)
        assert a.shape == (2, 2, 2)
        assert np.allclose(a, np.swapaxes(a, -1, -2))
        assert np.all(np.linalg.eigvalsh(a) > 0)


def test_add_outer_is_psd_increment():
    base = build_field({"family": "trig-perturbed", "amp": 0.1})
    up = build_field({"family": "trig-perturbed", "amp": 0.1, "add_outer": [0.5, 0.5]})
    x = np.array([0.2, 0.9])
    assert psd_order(base.a(x), up.a(x)) is OrderResult.Leq


def test_trig_field_declared_lipschitz_bound_holds():
    from convorder.model import lipschitz_estimate

    f = trig_perturbed_field(0.15, 0.3, (0.6, 0.8))
    assert lipschitz_estimate(f, Box.cube(-4, 4, 2), n_pairs=8192) <= f.lipschitz_bound


def test_coefficient_families():
    x = np.array([[0.3, -0.7]])
    assert np.allclose(build_coefficients({"family": "constant", "a": [[1, 0], [0, 2]]})(x), np.diag([1.0, 2.0]))
    a = build_coefficients({"family": "separable-perturbed", "amp": 0.1, "scale": 0.5})(x)
    assert np.allclose(a, 0.5 * separable_perturbation(0.1)(x))
    with pytest.raises(ConfigError, match="coefficients.a"):
        build_coefficients({"family": "constant", "a": [[1, 2], [2, 1]]})


def test_payoff_families():
    z = np.linspace(-2, 2, 5)
    assert np.allclose(build_payoff({"family": "call", "strike": 1.0}, 1)(z), np.maximum(z - 1, 0))
    assert np.allclose(build_payoff({"family": "linear", "slope": 2.0}, 1)(z), 2 * z)
    p = build_payoff({"family": "abs", "weights": [1.0, 0.0], "mollify": {"tau": 0.25, "range": [-8, 8]}}, 2)
    assert p(np.array([0.0]))[0] == pytest.approx(1 / np.sqrt(np.pi), abs=1e-6)
    with pytest.raises(ConfigError, match="payoff.weights"):
        build_payoff({"family": "abs", "weights": [1.0]}, 2)


@pytest.mark.parametrize("mutate, key", [
    (lambda c: c.update(schema=2), "schema"),
    (lambda c: c.update(kind="nope"), "kind"),
    (lambda c: c.update(bogus=1), "bogus"),
    (lambda c: c["fieldX"].update(family="mystery"), "fieldX.family"),
    (lambda c: c["payoff"].update(family="cube"), "payoff.family"),
    (lambda c: c["numerics"].update(n_paths=1), "numerics.n_paths"),
    (lambda c: c["numerics"].update(scheme="Heun"), "numerics.scheme"),
    (lambda c: c.update(T=-1.0), "T"),
    (lambda c: c.pop("x0"), "x0"),
])
def test_validation_names_the_key(mutate, key):
    cfg = load_config("closed-form-1d")
    mutate(cfg)
    with pytest.raises(ConfigError, match=key):
        validate(cfg)


def test_load_config_from_path(tmp_path):
    cfg = load_config("mollify-abs")
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    assert load_config(str(p)) == cfg
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(str(p))
    with pytest.raises(ConfigError, match="no file or bundled config"):
        load_config("does-not-exist")


def test_separable_case_pde_matches_monte_carlo():
    # PDE coefficient a/2 with a = separable perturbation, simulated with sigma = sqrt(a)
    field = VolatilityField(2, a=separable_perturbation(0.1), lipschitz_bound=0.2)
    pay = build_payoff({"family": "abs", "weights": [1.0, 0.0], "mollify": {"tau": 0.05, "range": [-12, 12]}}, 2)
    res = pde_crosscheck(field, pay, [[0.0, 0.0], [0.5, 1.0]], 0.25, mesh=129,
                         cfg=CompareConfig(n_paths=50_000, n_steps=64))
    assert res["passed"]
