import pytest

from ttcrank.config import RunConfig, SearchSettings, apply_overrides, load_config
from ttcrank.encoder import ProviderConfig

INI = """
[provider]
backend = synthetic
native_dim = 128
has_adapters = false
latency_per_text = 0.25

[run]
tasks = a, b
    c
programs = p0,bidir_zscore
output = out/x
seed = 4
k = 5
threads = 2

[search]
generations = 3
replay_dir = props
"""


def _write(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text)
    return p


def test_defaults():
    cfg = load_config(env={})
    assert cfg.provider == ProviderConfig() and cfg.tasks == () and cfg.programs == "frontier"
    assert cfg.search == SearchSettings() and cfg.gain == "exponential" and cfg.k == 10


def test_load_file(tmp_path):
    cfg = load_config(_write(tmp_path, INI), env={})
    assert cfg.provider.native_dim == 128 and cfg.provider.has_adapters is False
    assert cfg.provider.latency_per_text == 0.25
    assert cfg.tasks == ("a", "b", "c") and cfg.seed == 4 and cfg.k == 5 and cfg.threads == 2
    assert cfg.search.generations == 3 and cfg.search.replay_dir == "props"


def test_env_and_flag_precedence(tmp_path):
    env = {"TTC_SEED": "9", "TTC_ENCODER_ENDPOINT": "http://enc:1"}
    cfg = load_config(_write(tmp_path, INI), env=env)
    assert cfg.seed == 9 and cfg.provider.endpoint == "http://enc:1"
    cfg = apply_overrides(cfg, seed=11, tasks=["z"], provider_native_dim=64, search_generations=None,
                          search_proposer="command")
    assert cfg.seed == 11 and cfg.tasks == ("z",) and cfg.provider.native_dim == 64
    assert cfg.search.generations == 3 and cfg.search.proposer == "command"
    assert cfg.provider.has_adapters is False


@pytest.mark.parametrize("text,needle", [
    ("[extra]\na = 1\n", "unknown config sections"),
    ("[run]\ncolour = red\n", "unknown key"),
    ("[provider]\nwidth = 3\n", "unknown key"),
    ("[run]\ngain = cubic\n", "gain"),
    ("[search]\ngenerations = 0\n", "generations"),
    ("[search]\nproposer = psychic\n", "proposer"),
    ("[provider]\nbackend = http\n", "endpoint"),
    ("[run]\nk = 0\n", "positive"),
])
def test_invalid(tmp_path, text, needle):
    with pytest.raises(ValueError, match=needle):
        load_config(_write(tmp_path, text), env={})


def test_hash_ignores_paths_and_threads():
    base = RunConfig(tasks=("t",))
    assert base.hash() == base.replace(output="elsewhere", threads=7).hash()
    cached = base.replace(provider=ProviderConfig(backend="file-cache", cache_path="/a"))
    assert cached.hash() == cached.replace(provider=ProviderConfig(backend="file-cache", cache_path="/b")).hash()
    assert base.hash() != base.replace(seed=1).hash()
    assert base.hash() != base.replace(provider=ProviderConfig(native_dim=64)).hash()
    assert len(base.hash()) == 16


def test_to_dict_round_trip():
    d = RunConfig(tasks=("a", "b")).to_dict()
    assert d["tasks"] == ["a", "b"] and d["provider"]["backend"] == "synthetic"
