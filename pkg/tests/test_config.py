import json

import pytest

from pwoa.config import DEFAULTS, PRESETS, RunConfig, seed_overrides, validate
from pwoa.errors import ConfigError


def test_defaults_validate_and_convert():
    cfg = RunConfig.from_dict({})
    assert cfg.schedule().rho_growth == 1.35
    assert cfg.prune().rate == 4.0
    assert list(cfg.eval_attacks()) == ["fgsm"]
    train, test = cfg.datasets()
    assert len(train) == DEFAULTS["data"]["n_train"] and test.split == "test"


@pytest.mark.parametrize("doc, path", [
    ({"schedule": {"admm_epochs": 0}}, "schedule.admm_epochs"),
    ({"losses": {"bogus": 1}}, "losses"),
    ({"attacks": {"eval": {"x": {"kind": "deepfool"}}}}, "attacks.eval.x.kind"),
    ({"teacher": {"attack": {"kind": "pgd", "radius": 2}}}, "teacher.attack.radius"),
    ({"model": {"seed": -1}}, "model.seed"),
    ({"extra": {}}, "<root>"),
    ({"attacks": {"select": "pgd"}}, "attacks.select"),
    ({"data": {"source": "idx"}}, "data.train_images"),
    ({"teacher": {"attack": {"kind": "pgd", "radius": 0.1, "step_size": 0.5}}}, "teacher.attack"),
])
def test_errors_carry_key_path(doc, path):
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict(doc)
    assert info.value.path == path
    assert str(info.value).startswith(path)


def test_presets_layer_under_file_values():
    cfg = RunConfig.from_dict({"preset": "cifar100-like", "losses": {"tau": 4.0}})
    w = cfg.loss_weights()
    assert (w.lambda_kd, w.lambda_y, w.tau) == (1000.0, 2.5e-6, 4.0)
    assert cfg.schedule().finetune_epochs == 100
    assert set(PRESETS) == {"mnist", "cifar10-like", "cifar100-like"}
    assert RunConfig.from_dict({"preset": "cifar10-like"}).prune().hbar_ratio == (1.0, 5.0)


def test_eval_attacks_replace_defaults():
    cfg = RunConfig.from_dict({"attacks": {"eval": {"pgd10": {"kind": "pgd", "radius": 0.3, "steps": 10}}}})
    assert list(cfg.eval_attacks()) == ["pgd10"]


def test_paths_resolve_against_config_dir(tmp_path):
    (tmp_path / "sub").mkdir()
    p = tmp_path / "sub" / "c.json"
    p.write_text(json.dumps({"data": {"source": "csv", "train_csv": "a.csv", "test_csv": "/abs/b.csv",
                                      "input_dim": 2, "num_classes": 2}, "output": {"dir": "out"}}))
    cfg = RunConfig.load(p)
    assert cfg.resolve("a.csv") == tmp_path / "sub" / "a.csv"
    assert cfg.output_dir == tmp_path / "sub" / "out"
    assert str(cfg.resolve("/abs/b.csv")) == "/abs/b.csv"


def test_bad_json_and_missing_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{\n  'x': 1}")
    with pytest.raises(ConfigError, match=":2:"):
        RunConfig.load(p)
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "missing.json")


def test_seed_overrides_and_u64():
    big = 2 ** 64 - 1
    cfg = RunConfig.from_dict({}, overrides=seed_overrides(big))
    assert cfg.schedule().seed == big and cfg.teacher().seed == big
    with pytest.raises(ConfigError):
        validate({"model": {"seed": 2 ** 64}})
