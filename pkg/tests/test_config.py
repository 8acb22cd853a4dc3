import pytest

from fedfewshot.config import ExperimentConfig, apply_overrides, config_to_text, load_config, parse_config_text
from fedfewshot.errors import ConfigError


def test_defaults_validate():
    cfg = load_config()
    assert cfg.spec.describe() == "2-way 2-shot"
    assert cfg.fed.num_clients == 5
    assert cfg.train.lr == 1e-3
    assert cfg.local_episode_budget == 5 * 40 * 100


def test_file_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nseed = 4\nfed.rounds = 3  # trailing\nfeatures.n_mfcc = 20\n")
    cfg = load_config(path, ["fed.rounds=7", "model.attention=false"])
    assert cfg.seed == 4
    assert cfg.fed.rounds == 7
    assert cfg.features.n_mfcc == 20
    assert cfg.model.attention is False


def test_text_round_trip():
    cfg = load_config(overrides=["train.local_episodes=12", "data.cache_dir=/tmp/x", "train.lr=0.0005"])
    again = parse_config_text(config_to_text(cfg))
    assert again == cfg
    assert config_to_text(again) == config_to_text(cfg)


@pytest.mark.parametrize("item", [
    "fed.roundz=3",
    "nosuch.key=1",
    "data=3",
    "seed",
    "fed.rounds=abc",
    "model.attention=maybe",
])
def test_bad_overrides(item):
    with pytest.raises(ConfigError):
        apply_overrides(ExperimentConfig(), [item])


@pytest.mark.parametrize("item", [
    "episode.n_way=1",
    "fed.rounds=0",
    "train.optimizer=rmsprop",
    "model.architecture=vgg",
    "dtype=float16",
    "train.local_client=9",
    "data.noise_ratio=0.5",
    "features.n_mfcc=0",
])
def test_validation_rejects(item):
    with pytest.raises(ConfigError):
        load_config(overrides=[item])


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/cfg.txt")


def test_line_without_equals():
    with pytest.raises(ConfigError, match=":2:"):
        parse_config_text("seed = 1\nrounds 3\n")
