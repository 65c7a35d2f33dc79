from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from thermohom.config import RunConfig, from_dict, parse_config, parse_config_text, replace, with_sweep
from thermohom.errors import ConfigError

GOLDEN = Path(__file__).parent / "golden"


def test_minimal_config_matches_golden():
    cfg = parse_config_text('[sweep]\nepsilons = ["1/4", "1/8", "1/16"]\n')
    assert cfg.to_toml() == (GOLDEN / "minimal_config_echo.toml").read_text()
    assert cfg.inverse_epsilons == [4, 8, 16]
    assert cfg.n_max == 16


def test_roundtrip_is_identity(tmp_path):
    cfg = replace(RunConfig(), physics={"tau": 0.5, "D": "smooth"}, sweep={"epsilons": [0.25, "1/8", "1/16"]})
    path = tmp_path / "c.toml"
    path.write_text(cfg.to_toml())
    again = parse_config(path)
    assert again == cfg and again.config_hash() == cfg.config_hash()
    assert again.sweep.epsilons == ["1/4", "1/8", "1/16"]


def test_hash_ignores_output_location():
    a = replace(RunConfig(), flags={"output_dir": "x", "workers": 3})
    b = replace(RunConfig(), flags={"output_dir": "y"})
    assert a.config_hash() == b.config_hash()
    assert replace(RunConfig(), physics={"tau": 2.0}).config_hash() != b.config_hash()


def test_default_time_step():
    cfg = replace(RunConfig())
    assert cfg.time_step() == pytest.approx(1e-3, rel=1e-12)
    # h = 1/1536 < 1e-3: 160 steps of T/160, a multiple of the 20 snapshots
    fine = replace(cfg, geometry={"m": 48})
    assert fine.time_step() == pytest.approx(0.1 / 160, rel=1e-12)


def test_delta_constraint_rejected_with_assumption_named():
    with pytest.raises(ConfigError, match=r"delta > 2 eps diam\(Y\)"):
        parse_config_text('[physics]\ndelta = 0.05\n[sweep]\nepsilons = ["1/4"]\n')


def test_delta_constraint_partial_violation_warns_or_rejects():
    with pytest.warns(UserWarning, match="violates"):
        cfg = parse_config_text('[sweep]\nepsilons = ["1/4", "1/8", "1/16"]\n')
    assert len(cfg.warnings) == 2
    with pytest.raises(ConfigError):
        parse_config_text('[flags]\nstrict_delta = true\n[sweep]\nepsilons = ["1/4", "1/16"]\n')


@pytest.mark.parametrize("text, match", [
    ("[physics]\nalpha = 0.5\n", "not meaningful, since the cross-diffusion term is unbounded"),
    ("[physics]\nbeta = 0.5\n", "beta"),
    ("[physics]\nspeed = 1\n", "unknown key"),
    ("[extra]\nx = 1\n", "unknown config section"),
    ("[physics]\ntau = \"one\"\n", "must be a number"),
    ("[physics]\ng = -1.0\n", "nonnegative"),
    ("[physics]\nD = \"nope\"\n", "unknown coefficient"),
    ("[physics]\nelliptic_lower = 2.5\n", "ellipticity"),
    ("[geometry]\nhole = [\"1/5\", \"2/5\"]\n", "1/12"),
    ("[sweep]\nepsilons = [\"1/3\"]\n", "delta"),
    ("[sweep]\nepsilons = [\"2/7\"]\n", "integer"),
    ("[discretization]\ndt = 0.0007\n", "multiple"),
    ("not toml = = =", "malformed"),
])
def test_rejections(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config_text(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        parse_config(tmp_path / "none.toml")


def test_legacy_exponents_warn():
    with pytest.warns(UserWarning, match="alpha = 2"):
        cfg = parse_config_text('[physics]\nalpha = 2.0\nbeta = 0.0\n[sweep]\nepsilons = ["1/16", "1/32"]\n')
    assert cfg.physics.alpha == 2.0


@settings(max_examples=25, deadline=None)
@given(tau=st.floats(0, 5), mu=st.floats(0, 5), m=st.sampled_from([6, 12, 24]),
       T=st.sampled_from([0.02, 0.1]), det=st.booleans())
def test_roundtrip_property(tau, mu, m, T, det):
    cfg = from_dict({"physics": {"tau": tau, "mu": mu}, "geometry": {"m": m},
                     "discretization": {"T": T}, "sweep": {"epsilons": ["1/16", "1/32"]},
                     "flags": {"deterministic": det}})
    assert parse_config_text(cfg.to_toml()) == cfg
