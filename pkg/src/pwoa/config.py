"""JSON run configuration: schema, presets and conversion into typed configs.

A config file holds the sections ``data``, ``model``, ``teacher``,
``sparsity``, ``schedule``, ``losses``, ``attacks`` and ``output`` plus an
optional ``preset`` naming one of :data:`PRESETS`. Values are layered as
built-in defaults, then the preset, then the file, then command-line
overrides. Unknown keys are rejected and relative paths resolve against the
directory holding the config file.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import jsonschema

from .admm import MixConfig, PruneSchedule
from .attacks import ATTACK_KINDS, AttackConfig
from .data import Dataset, load_csv, load_idx, synth_blobs
from .errors import ConfigError, PwoaError
from .losses import LossWeights
from .pipeline import PruneConfig
from .training import TeacherConfig

U64_MAX = 2 ** 64 - 1

_SEED = {"type": "integer", "minimum": 0, "maximum": U64_MAX}
_POS_INT = {"type": "integer", "minimum": 1}
_COUNT = {"type": "integer", "minimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_PATH = {"type": "string", "minLength": 1}


def _obj(props: dict, required: tuple = ()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_ATTACK = _obj({
    "kind": {"enum": list(ATTACK_KINDS)},
    "radius": {"type": "number", "minimum": 0, "maximum": 1},
    "step_size": {"type": "number", "exclusiveMinimum": 0},
    "steps": _POS_INT,
    "random_start": {"type": "boolean"},
    "seed": _SEED,
}, ("kind",))

SCHEMA = _obj({
    "preset": {"enum": ["mnist", "cifar10-like", "cifar100-like"]},
    "data": _obj({
        "source": {"enum": ["idx", "csv", "synth_blobs"]},
        "train_images": _PATH, "train_labels": _PATH,
        "test_images": _PATH, "test_labels": _PATH,
        "train_csv": _PATH, "test_csv": _PATH,
        "input_dim": _POS_INT, "num_classes": {"type": "integer", "minimum": 2},
        "n_train": _POS_INT, "n_test": _POS_INT,
        "margin": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "spread": {"type": "number", "exclusiveMinimum": 0},
        "train_subset": {"type": ["integer", "null"], "minimum": 1},
        "test_subset": {"type": ["integer", "null"], "minimum": 1},
        "seed": _SEED,
    }),
    "model": _obj({
        "hidden": {"type": "array", "items": _POS_INT},
        "seed": _SEED,
    }),
    "teacher": _obj({
        "epochs": _COUNT,
        "lr": _NONNEG,
        "optimizer": {"enum": ["sgd", "adam"]},
        "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "weight_decay": _NONNEG,
        "batch_size": {"type": "integer", "minimum": 2},
        "scheduler": {"enum": ["cosine", "constant"]},
        "warmup_epochs": _COUNT,
        "clean_weight": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "seed": _SEED,
        "attack": _ATTACK,
    }),
    "sparsity": _obj({"rate": {"type": "number", "minimum": 1}}),
    "schedule": _obj({
        "admm_epochs": _POS_INT,
        "finetune_epochs": _POS_INT,
        "epochs_per_admm_iter": _POS_INT,
        "rho_init": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "rho_growth": {"type": "number", "exclusiveMinimum": 1},
        "rho_cap": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "lr_prune": _NONNEG,
        "lr_finetune": _NONNEG,
        "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "weight_decay": _NONNEG,
        "batch_size": {"type": "integer", "minimum": 2},
        "scheduler": {"enum": ["cosine", "constant"]},
        "seed": _SEED,
    }),
    "losses": _obj({
        "lambda_kd": _NONNEG, "lambda_x": _NONNEG, "lambda_y": _NONNEG, "lambda_ce": _NONNEG,
        "tau": {"type": "number", "exclusiveMinimum": 0},
        "autotune": {"type": "boolean"},
        "autotune_clip": {"type": ["number", "null"], "minimum": 1},
        "hbar_ratio": {"type": "array", "items": _NONNEG, "minItems": 2, "maxItems": 2},
    }),
    "attacks": _obj({
        "eval": {"type": "object", "additionalProperties": _ATTACK, "minProperties": 1,
                 "propertyNames": {"pattern": "^[A-Za-z0-9_]+$"}},
        "select": {"type": ["string", "null"]},
        "eval_size": _POS_INT,
        "plane_size": {"type": "integer", "minimum": 2},
        "seed": _SEED,
        "mix_ratio": {"type": "number", "minimum": 0, "maximum": 1},
        "mix_attack": _ATTACK,
    }),
    "output": _obj({"dir": _PATH}),
})

DEFAULTS: dict[str, Any] = {
    "data": {"source": "synth_blobs", "input_dim": 8, "num_classes": 3, "n_train": 600, "n_test": 300,
             "margin": 0.3, "spread": 0.15, "train_subset": None, "test_subset": None, "seed": 0},
    "model": {"hidden": [16], "seed": 0},
    "teacher": {"epochs": 20, "lr": 0.05, "optimizer": "sgd", "momentum": 0.9, "weight_decay": 1e-4, "batch_size": 128,
                "scheduler": "cosine", "warmup_epochs": 0, "clean_weight": 0.0, "seed": 0,
                "attack": {"kind": "pgd", "radius": 0.3, "step_size": 0.075, "steps": 10,
                           "random_start": True, "seed": 0}},
    "sparsity": {"rate": 4.0},
    "schedule": {"admm_epochs": 50, "finetune_epochs": 20, "epochs_per_admm_iter": 3, "rho_init": 0.01,
                 "rho_growth": 1.35, "rho_cap": 1.0, "lr_prune": 0.0005, "lr_finetune": 0.001,
                 "momentum": 0.9, "weight_decay": 1e-4, "batch_size": 128, "scheduler": "cosine", "seed": 0},
    "losses": {"lambda_kd": 10.0, "lambda_x": 4e-4, "lambda_y": 1e-4, "lambda_ce": 0.0, "tau": 30.0,
               "autotune": False, "autotune_clip": 10.0, "hbar_ratio": [4.0, 1.0]},
    "attacks": {"eval": {"fgsm": {"kind": "fgsm", "radius": 0.3}}, "select": None, "eval_size": 1000,
                "plane_size": 256, "seed": 0, "mix_ratio": 0.0,
                "mix_attack": {"kind": "pgd", "radius": 0.3, "step_size": 0.01, "steps": 10,
                               "random_start": True}},
    "output": {"dir": "runs"},
}

# per-dataset hyperparameters for pruning and fine-tuning
PRESETS: dict[str, dict[str, Any]] = {
    "mnist": {
        "losses": {"lambda_kd": 10.0, "lambda_x": 4e-4, "lambda_y": 1e-4, "tau": 30.0, "hbar_ratio": [4.0, 1.0]},
        "schedule": {"admm_epochs": 50, "finetune_epochs": 20, "lr_prune": 0.0005, "lr_finetune": 0.001,
                     "batch_size": 128, "scheduler": "cosine"},
    },
    "cifar10-like": {
        "losses": {"lambda_kd": 10.0, "lambda_x": 2e-5, "lambda_y": 1e-4, "tau": 30.0, "hbar_ratio": [1.0, 5.0]},
        "schedule": {"admm_epochs": 50, "finetune_epochs": 100, "lr_prune": 0.01, "lr_finetune": 0.005,
                     "batch_size": 128, "scheduler": "cosine"},
    },
    "cifar100-like": {
        "losses": {"lambda_kd": 1000.0, "lambda_x": 5e-7, "lambda_y": 2.5e-6, "tau": 30.0,
                   "hbar_ratio": [1.0, 5.0]},
        "schedule": {"admm_epochs": 50, "finetune_epochs": 100, "lr_prune": 0.01, "lr_finetune": 0.005,
                     "batch_size": 128, "scheduler": "cosine"},
    },
}

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "eval":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(doc: Any) -> None:
    """Raise ConfigError naming the offending key path on the first schema violation."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        err = errors[0]
        path = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(err.message, path)


@dataclass
class RunConfig:
    doc: dict[str, Any]
    base_dir: Path
    _data: Optional[tuple[Dataset, Dataset]] = field(default=None, init=False, repr=False)

    @classmethod
    def from_dict(cls, doc: dict[str, Any], base_dir: Path | str = ".", overrides: Optional[dict] = None) -> "RunConfig":
        validate(doc)
        merged = copy.deepcopy(DEFAULTS)
        if "preset" in doc:
            merged = _merge(merged, PRESETS[doc["preset"]])
        merged = _merge(merged, {k: v for k, v in doc.items() if k != "preset"})
        if overrides:
            merged = _merge(merged, overrides)
        if "preset" in doc:
            merged["preset"] = doc["preset"]
        validate(merged)
        cfg = cls(merged, Path(base_dir))
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path: Path | str, overrides: Optional[dict] = None) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
        return cls.from_dict(doc, path.parent, overrides)

    # conversion into typed configs

    def check(self) -> None:
        """Cross-field checks the schema cannot express."""
        d = self.doc["data"]
        needed = {"idx": ("train_images", "train_labels", "test_images", "test_labels"),
                  "csv": ("train_csv", "test_csv", "input_dim", "num_classes")}.get(d["source"], ())
        for key in needed:
            if key not in d:
                raise ConfigError(f"required for source {d['source']!r}", f"data.{key}")
        a = self.doc["attacks"]
        if a["select"] is not None and a["select"] not in a["eval"]:
            raise ConfigError(f"unknown attack {a['select']!r}", "attacks.select")
        self.schedule()
        self.teacher()
        self.loss_weights()
        self.eval_attacks()
        self.mix()

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path

    @property
    def output_dir(self) -> Path:
        return self.resolve(self.doc["output"]["dir"])

    def _attack(self, spec: dict, where: str) -> AttackConfig:
        try:
            return AttackConfig(spec["kind"], spec.get("radius", 0.3), spec.get("step_size", 0.01),
                                spec.get("steps", 10), spec.get("random_start", False), seed=spec.get("seed", 0))
        except PwoaError as exc:
            raise ConfigError(str(exc), where) from None

    def eval_attacks(self) -> dict[str, AttackConfig]:
        return {name: self._attack(spec, f"attacks.eval.{name}") for name, spec in self.doc["attacks"]["eval"].items()}

    def mix(self) -> MixConfig:
        a = self.doc["attacks"]
        return MixConfig(a["mix_ratio"], self._attack(a["mix_attack"], "attacks.mix_attack"))

    def schedule(self) -> PruneSchedule:
        return PruneSchedule(**self.doc["schedule"])

    def loss_weights(self) -> LossWeights:
        lw = {k: v for k, v in self.doc["losses"].items() if k not in ("autotune", "autotune_clip", "hbar_ratio")}
        try:
            return LossWeights(**lw)
        except PwoaError as exc:
            raise ConfigError(str(exc), "losses") from None

    def teacher(self) -> TeacherConfig:
        t = dict(self.doc["teacher"])
        t["attack"] = self._attack(t["attack"], "teacher.attack")
        return TeacherConfig(**t)

    def prune(self) -> PruneConfig:
        a = self.doc["attacks"]
        return PruneConfig(rate=float(self.doc["sparsity"]["rate"]), schedule=self.schedule(),
                           weights=self.loss_weights(), autotune=self.doc["losses"]["autotune"],
                           autotune_clip=self.doc["losses"]["autotune_clip"],
                           hbar_ratio=tuple(self.doc["losses"]["hbar_ratio"]), attacks=self.eval_attacks(),
                           select_attack=a["select"], eval_size=a["eval_size"], plane_size=a["plane_size"],
                           eval_seed=a["seed"], mix=self.mix())

    def model_sizes(self, data: Dataset) -> list[int]:
        return [data.input_dim] + list(self.doc["model"]["hidden"]) + [data.num_classes]

    def datasets(self) -> tuple[Dataset, Dataset]:
        """(train, test), each optionally reduced to a seeded subset. Loaded once."""
        if self._data is not None:
            return self._data
        d = self.doc["data"]
        src = d["source"]
        if src == "idx":
            train = load_idx(self.resolve(d["train_images"]), self.resolve(d["train_labels"]), "train")
            test = load_idx(self.resolve(d["test_images"]), self.resolve(d["test_labels"]), "test")
        elif src == "csv":
            train = load_csv(self.resolve(d["train_csv"]), d["input_dim"], d["num_classes"], "train")
            test = load_csv(self.resolve(d["test_csv"]), d["input_dim"], d["num_classes"], "test")
        else:
            full = synth_blobs(d["seed"], d["n_train"] + d["n_test"], d["input_dim"], d["num_classes"],
                               d["margin"], d["spread"])
            train = full.take(range(d["n_train"]))
            test = full.take(range(d["n_train"], len(full)))
            test = Dataset(test.inputs, test.labels, "test")
        if d["train_subset"] is not None and d["train_subset"] < len(train):
            train = train.subset(d["train_subset"], d["seed"])
        if d["test_subset"] is not None and d["test_subset"] < len(test):
            test = test.subset(d["test_subset"], d["seed"])
        self._data = (train, test)
        return self._data


def seed_overrides(seed: int) -> dict:
    """Overrides that replace every training and evaluation seed with ``seed``
    (dataset selection keeps its own seed)."""
    return {"model": {"seed": seed}, "teacher": {"seed": seed}, "schedule": {"seed": seed},
            "attacks": {"seed": seed}}
