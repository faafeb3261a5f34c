import pytest

from projcgan.config import ConfigError, RunConfig, load_config, parse_config


def test_defaults_parse():
    cfg = parse_config("")
    assert cfg == RunConfig()
    assert cfg.iterations == 20000 and cfg.decay_start == 15000 and cfg.batch_size == 64


def test_comments_and_types():
    cfg = parse_config("""
        # a comment
        variant = concat_hidden   # trailing comment
        lr = 1e-4
        spectral_norm = false
        d_down = 1, 0, 0
    """)
    assert cfg.variant == "concat_hidden"
    assert cfg.lr == 1e-4
    assert cfg.spectral_norm is False
    assert cfg.d_down == [1, 0, 0]


def test_problems_listed_together():
    with pytest.raises(ConfigError) as err:
        parse_config("colour = red\nlr = fast\nvariant = nope\nlr = 1\n")
    text = str(err.value)
    for needle in ("unknown key 'colour'", "lr", "duplicate key 'lr'", "variant must be one of"):
        assert needle in text
    assert len(err.value.problems) >= 4


def test_missing_equals():
    with pytest.raises(ConfigError, match="key = value"):
        parse_config("iterations 10\n")


def test_overrides_win():
    cfg = parse_config("seed = 1\n", {"seed": 5, "out_dir": "elsewhere"})
    assert cfg.seed == 5 and cfg.out_dir == "elsewhere"


def test_round_trip_dumps():
    cfg = RunConfig(variant="acgan", lr=3e-4, morph_classes=[0, 2, 5], sweep_lr=[1e-4, 2e-4],
                    spectral_norm=False, dataset="blobs")
    assert parse_config(cfg.dumps()) == cfg


def test_write_then_load(tmp_path):
    cfg = RunConfig(seed=9, iterations=12, decay_start=6)
    cfg.write(tmp_path / "c.txt")
    assert load_config(tmp_path / "c.txt") == cfg


@pytest.mark.parametrize("text", ["task = superres\ndataset = ring\n",
                                  "dataset = cifar\n",
                                  "beta1 = 1.0\n",
                                  "n_classes = 1\n",
                                  "morph_classes = 0, 9\n"])
def test_validation_rejects(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_schedule_clamps_decay():
    s = RunConfig(iterations=10).schedule()
    assert s.total == 10 and s.decay_start == 10
