import dataclasses
import math

import pytest

from rabimag.comms import ModulationKind
from rabimag.config import ENV_CONFIG, RunConfig, config_hash, dump_config, load_config
from rabimag.errors import ConfigError
from rabimag.protocol import Protocol


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_defaults_round_trip(tmp_path):
    cfg = RunConfig()
    again = load_config(write(tmp_path, dump_config(cfg)))
    assert again == cfg
    assert dump_config(again) == dump_config(cfg)


def test_units_converted_on_load(tmp_path):
    cfg = load_config(write(tmp_path, "[ensemble]\ngamma_hz_per_t = 1e10\n[sweep]\nslope_center_hz = 1000\n"))
    assert cfg.ensemble.gamma == pytest.approx(2 * math.pi * 1e10)
    assert cfg.sweep.slope_center == pytest.approx(2 * math.pi * 1000)


def test_beat_frequency_follows_bias_field(tmp_path):
    cfg = load_config(write(tmp_path, "[ensemble]\nbias_field_t = 1e-3\n[hyperfine]\nnuclear_gamma_hz_per_t = 1e6\n"))
    assert cfg.hyperfine.beat_frequency == pytest.approx(1e3)


def test_overrides_beat_file_values(tmp_path):
    path = write(tmp_path, "[run]\nseed = 5\n[sequence]\nprotocol = ON_OFF\n")
    cfg = load_config(path, {"run.seed": "9"})
    assert cfg.seed == 9 and cfg.sequence.protocol is Protocol.ON_OFF


def test_env_var_supplies_default_path(tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_CONFIG, write(tmp_path, "[run]\nn_samples = 123\n"))
    assert load_config().n_samples == 123


@pytest.mark.parametrize("text,path", [
    ("[ensemble]\nt2_star_s = -1\n", "ensemble.t2_star_s"),
    ("[ensemble]\nbogus = 1\n", "ensemble.bogus"),
    ("[nonsense]\na = 1\n", "nonsense"),
    ("[sequence]\nprotocol = SINGLE\n", "sequence.protocol"),
    ("[noise]\nshot_noise = maybe\n", "noise.shot_noise"),
    ("[modulation]\nbits = 0120\n", "modulation.bits"),
    ("[sweep]\nomega_min_hz = 5e5\n", "sweep.omega_max_hz"),
    ("[sweep]\nduration_s = 1e-4\n", "sweep.duration_s"),
    ("[run]\nworkers = 0\n", "run.workers"),
])
def test_validation_names_field(tmp_path, text, path):
    with pytest.raises(ConfigError) as info:
        load_config(write(tmp_path, text))
    assert info.value.path == path


def test_unreadable_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/run.ini")


def test_modulation_section(tmp_path):
    cfg = load_config(write(tmp_path, "[modulation]\nkind = bpsk\nrandom_bits = 16\n"))
    assert cfg.modulation.kind is ModulationKind.BPSK
    assert len(cfg.modulation.bits) == 16
    assert load_config(write(tmp_path, "[modulation]\nenabled = false\n")).modulation is None


def test_hash_ignores_location_and_workers_only():
    cfg = RunConfig()
    h = config_hash(cfg)
    assert config_hash(dataclasses.replace(cfg, output_dir="elsewhere", workers=8)) == h
    assert config_hash(dataclasses.replace(cfg, seed=cfg.seed + 1)) != h
    assert len(h) == 16
