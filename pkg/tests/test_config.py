import json

import pytest

from mosa.config import AblationFlags, ConfigError, PipelineConfig, config_from_dict, load_config
from mosa.metrics import EvalConfig


def test_defaults_and_round_trip(tmp_path):
    cfg = PipelineConfig()
    assert load_config(None) == cfg
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert load_config(str(path)) == cfg


def test_partial_document_keeps_defaults():
    cfg = config_from_dict({"net": {"dim": 32, "motion": {"window": 3}}, "eval": {"ks": [5, 10]}})
    assert cfg.net.dim == 32 and cfg.net.motion.window == 3
    assert cfg.net.heads == PipelineConfig().net.heads
    assert cfg.eval == EvalConfig(ks=(5, 10))


@pytest.mark.parametrize(
    "doc,needle",
    [
        ({"nett": {}}, "unknown config section"),
        ({"net": {"motion": {"windw": 3}}}, "net.motion: unknown field(s) ['windw']"),
        ({"net": {"use_mfe": False}}, "unknown field"),
        ({"net": {"num_predicates": 3}}, "unknown field"),
        ({"net": {"dim": 30, "heads": 4}}, "multiple of heads"),
        ({"ablation": {"use_mfe": False}}, "use_mim requires use_mfe"),
        ({"loss": []}, "expected an object"),
    ],
)
def test_rejections(doc, needle):
    with pytest.raises(ConfigError) as err:
        config_from_dict(doc)
    assert needle in str(err.value)


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{\n  \"net\": \n}")
    with pytest.raises(ConfigError, match=":3: invalid JSON"):
        load_config(str(bad))


def test_seed_and_ablation_overrides():
    cfg = PipelineConfig().with_seed(7).with_ablation("mfe")
    assert cfg.synth.seed == 7 and cfg.train.seed == 7
    assert cfg.ablation == AblationFlags(False, False, True)
    net = cfg.net_config(4, 6, 0, 32)
    assert (net.use_mfe, net.use_mim, net.use_asm) == (False, False, True)
    assert PipelineConfig().with_ablation("asm").with_ablation("mim").ablation == AblationFlags(True, False, False)
    with pytest.raises(ConfigError):
        AblationFlags().without("clip")
