import numpy as np
import pytest

from pieh2 import config
from pieh2.cli import fixture_path
from pieh2.polyalg import PolyMatrix, s_var, theta_var

MINIMAL = """
[domain]
a = 0
b = 1
[states]
count = 1
order = 2
[dynamics]
A2 = 1
[bcs]
rows = 1, 0, 0, 0; 0, 0, 1, 0
[inputs]
Bw = s - s^2
[outputs]
Cz0 = 1
"""


def test_parse_poly_expressions():
    s, t = s_var(), theta_var()
    assert config.parse_poly("0.5*s^2 - s").allclose((s @ s).scale(0.5) - s, atol=0)
    assert config.parse_poly("2*(s - theta)").allclose((s - t).scale(2.0), atol=0)
    assert config.parse_poly("-3").allclose(PolyMatrix.constant([[-3.0]]), atol=0)


@pytest.mark.parametrize("bad", ["__import__('os')", "s**2", "s^-1", "x + 1", "s/2", "", "s^0.5"])
def test_parse_poly_rejects(bad):
    with pytest.raises(ValueError):
        config.parse_poly(bad)


def test_parse_matrix_shapes():
    np.testing.assert_array_equal(config.parse_matrix("1, 2; 3, 4"), [[1, 2], [3, 4]])
    with pytest.raises(ValueError):
        config.parse_matrix("1, 2; 3")
    with pytest.raises(ValueError):
        config.parse_matrix("1, 2", shape=(2, 1))


def test_minimal_config_loads():
    cfg = config.loads(MINIMAL)
    g = cfg.system
    assert g.n == 1 and g.order == 2
    assert cfg.solver == {} and cfg.repro == {}


def test_error_reports_line():
    text = MINIMAL.replace("Bw = s - s^2", "Bw = s - q")
    with pytest.raises(config.ConfigError) as err:
        config.loads(text, "demo.ini")
    line = text.splitlines().index("Bw = s - q") + 1
    assert err.value.line == line
    assert f"demo.ini:{line}" in str(err.value)


@pytest.mark.parametrize("edit", [
    ("[bcs]\nrows = 1, 0, 0, 0; 0, 0, 1, 0", "[bcs]\nrows = 1, 0, 0; 0, 0, 1"),
    ("[states]", "[statez]"),
    ("order = 2", "order = 5"),
    ("[domain]\na = 0\nb = 1", "[domain]\na = 1\nb = 0"),
    ("Cz0 = 1", "Cz0 = 1\nbogus = 3"),
])
def test_invalid_configs_raise(edit):
    with pytest.raises(config.ConfigError):
        config.loads(MINIMAL.replace(*edit))


def test_repro_section_parsed():
    cfg = config.load(fixture_path("react_diff.ini"))
    assert cfg.repro["controller_gamma"] == 1.79
    assert cfg.repro["degrees"] == [2, 3, 4]
    assert cfg.solver["degree"] == 2


def test_missing_file():
    with pytest.raises(config.ConfigError):
        config.load("/nonexistent/file.ini")
