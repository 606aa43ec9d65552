import pytest

from hiercnn.config import RunConfig, load_config, loads_config, reduced_model_settings
from hiercnn.errors import InvalidConfig


def test_defaults():
    cfg = RunConfig()
    assert cfg.prep.k_features == 1400 and cfg.prep.split == (0.8, 0.1, 0.1)
    assert (cfg.eval.folds, cfg.eval.bootstrap, cfg.eval.alpha) == (10, 1000, 0.05)
    node = cfg.node_config("flat", 9, 50)
    assert node.window_sizes == (3, 4, 5) and node.maps_per_window == 100
    assert (node.epochs, node.batch_size, node.dropout_rate) == (147, 75, 0.5)
    assert (node.num_classes, node.max_len) == (9, 50)


def test_node_overrides_and_seeds():
    cfg = loads_config("[run]\nseed = 3\n[model]\nepochs = 5\n[model.multi]\nepochs = 9\n")
    assert cfg.node_config("flat", 2, 10).epochs == 5
    assert cfg.node_config("multi", 2, 10).epochs == 9
    seeds = {n: cfg.node_config(n, 2, 10).seed for n in ("flat", "parent", "binary", "multi")}
    assert len(set(seeds.values())) == 4
    assert cfg.with_seed(4).node_config("flat", 2, 10).seed != seeds["flat"]
    pinned = loads_config("[model.parent]\nseed = 11\n")
    assert pinned.node_config("parent", 2, 10).seed == 11


def test_round_trip():
    text = "[run]\nseed = 2\n[prep]\nmin_count = 5\n[model]\nepochs = 3\n[eval]\nfallback = no\nmacro_over = present\n"
    cfg = loads_config(text)
    again = loads_config(cfg.dumps())
    assert again == cfg
    assert again.eval.fallback is False and again.prep.min_count == 5


@pytest.mark.parametrize("text", ["[prep]\nbogus = 1\n", "[model]\nlearning_rate = 1\n", "[model.leaf]\nepochs = 1\n",
                                  "[eval]\nmacro_over = some\n", "[run]\nseed = x\n", "[prep]\nmin_count = many\n",
                                  "no section"])
def test_invalid(text):
    with pytest.raises(InvalidConfig):
        loads_config(text)


def test_missing_file(tmp_path):
    with pytest.raises(InvalidConfig):
        load_config(tmp_path / "nope.ini")


def test_shipped_configs_load():
    import pathlib
    root = pathlib.Path(__file__).resolve().parent.parent / "configs"
    for name in ("reduced.ini", "tiny.ini"):
        load_config(root / name)
    assert load_config(root / "reduced.ini").model == reduced_model_settings()
