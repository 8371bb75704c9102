import numpy as np
import pytest

from spinchain.config import DEFAULT_CONFIG_TEXT, default_config, load_config, parse_config
from spinchain.errors import ConfigError


def test_default_family():
    cfg = default_config()
    spec = cfg.build(16)
    assert spec.R == 1 and spec.potential.kind == "cosine"
    assert spec.s[0] == 0.2 and spec.s[1] == -0.2
    assert cfg.m == 0.1 and cfg.N is None


def test_shipped_file_matches_builtin():
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "configs" / "default.ini"
    assert path.read_text() == DEFAULT_CONFIG_TEXT
    assert load_config(path).build(8).digest() == default_config().build(8).digest()


def test_explicit_values_fix_N():
    cfg = parse_config("[field]\nvalues = 0.1, 0.2, 0.3\n[couplings]\nuniform = 0.2\n")
    assert cfg.N == 3
    assert np.array_equal(cfg.build().s, [0.1, 0.2, 0.3])
    with pytest.raises(ConfigError):
        cfg.build(4)


def test_pairs_grammar():
    cfg = parse_config("[lattice]\nN = 4\nR = 2\n[couplings]\npairs =\n  0 1 0.2\n  1 3 0.1\n")
    M = cfg.build().interaction.dense()
    assert M[0, 1] == M[1, 0] == 0.2 and M[1, 3] == 0.1 and M[0, 2] == 0.0


@pytest.mark.parametrize(
    "text, line",
    [
        ("[lattice]\nN = 4\n[potential]\nkind = quartic\n", 4),
        ("[lattice]\nN = 4\n\n[bogus]\nx = 1\n", 4),
        ("[lattice]\nN = -2\n", 2),
        ("[lattice]\nN = 4\n[couplings]\nuniform = 0.6\n", 4),
        ("[field]\nconstant = 1\nalternating = 2\n", 3),
        ("[lattice]\nN = 3\n[field]\nvalues = 1 2\n", 4),
    ],
)
def test_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as exc:
        parse_config(text, path="model.ini")
    assert exc.value.line == line
    assert str(exc.value).startswith(f"model.ini:{line}:")


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/model.ini")
