from dataclasses import replace

import pytest

from ttacope.config import (
    ExperimentConfig,
    ExperimentSection,
    StreamSizes,
    dumps,
    load,
    loads,
    save,
)
from ttacope.errors import ConfigError


def test_defaults_round_trip():
    cfg = ExperimentConfig()
    assert loads(dumps(cfg)) == cfg
    assert dumps(loads(dumps(cfg))) == dumps(cfg)


def test_partial_file_keeps_defaults():
    cfg = loads("[tta]\ngamma = 0.9\n[streams]\ncategories = box, can\n")
    assert cfg.tta.gamma == 0.9
    assert cfg.streams.categories == ("box", "can")
    assert cfg.tta.rho == ExperimentConfig().tta.rho
    assert cfg.pretrain == ExperimentConfig().pretrain


def test_float_repr_survives(tmp_path):
    cfg = replace(ExperimentConfig(), tta=replace(ExperimentConfig().tta, lr=0.1 + 0.2))
    save(cfg, tmp_path / "c.ini")
    assert load(tmp_path / "c.ini").tta.lr == 0.1 + 0.2


def test_domain_sections():
    cfg = loads("[target]\nnoise_sigma = 0.02\ndistance_range = 0.5, 1.0\n")
    assert cfg.target.noise_sigma == 0.02
    assert cfg.target.distance_range == (0.5, 1.0)


@pytest.mark.parametrize("text,field", [
    ("[bogus]\nx = 1\n", "bogus"),
    ("[tta]\nbeta = 1\n", "tta.beta"),
    ("[tta]\ngamma = lots\n", "tta.gamma"),
    ("[tta]\ngamma = 1.5\n", "gamma"),
    ("[streams]\nn_points = 2\n", "n_points"),
    ("[streams]\ncategories = box, mug\n", "mug"),
    ("[experiment]\nmethods = tta-cope, bn\n", "bn"),
    ("[experiment]\nensembles = median\n", "median"),
    ("[experiment]\nintervals = 0\n", "intervals"),
    ("[target]\ndropout = 1.0\n", "dropout"),
    ("[pretrain]\nlr_ratios = 0.5\n", "lr_ratios"),
    ("gamma = 1\n", "section"),
    ("[tta\n", "syntax"),
])
def test_errors_name_the_problem(text, field):
    with pytest.raises(ConfigError, match=field):
        loads(text)


def test_direct_construction_validates():
    with pytest.raises(ConfigError):
        ExperimentConfig(streams=StreamSizes(source_frames=0))
    with pytest.raises(ConfigError):
        ExperimentConfig(experiment=ExperimentSection(methods=("nope",)))


def test_missing_file_is_os_error(tmp_path):
    with pytest.raises(OSError):
        load(tmp_path / "missing.ini")


def test_with_seed_partitions_seeds():
    cfg = ExperimentConfig().with_seed(3)
    assert cfg.model.seed == 3
    assert (cfg.source.rng_seed, cfg.target.rng_seed) == (6, 7)
    assert cfg.tta.rng_seed == 3


def test_derived_configs():
    cfg = loads("[tta]\nupdate_interval = 5\n[loss]\nlambda_pl = 0.5\n")
    tc = cfg.tta_config("pl")
    assert tc.update_interval == 5 and tc.weights.lambda_pl == 0.5 and tc.ensemble is None
    assert cfg.tta_config("pl", interval=2, ensemble="softmax-max").ensemble == "softmax-max"
    src, tgt = cfg.stream_configs()
    assert src.n_frames == 300 and tgt.domain == cfg.target
    assert cfg.pretrain_config().seed == cfg.model.seed
