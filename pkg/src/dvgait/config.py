"""Run configuration: one strict JSON document drives the whole pipeline.

Sections: corpus (walker generation), gan, synth, cnn, eval, plus the seed
and output directory. Unknown keys anywhere are rejected so a typo cannot
silently fall back to defaults; the resolved config is written back to the
output directory by the CLI so every run is reproducible from one artifact.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import dvgan, featnet
from .evalproto import DISTANCE_METRICS, SplitSpec


class ConfigError(ValueError):
    pass


def _check_keys(section, data, allowed):
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"{section}: unknown keys {unknown} (allowed: {sorted(allowed)})")


def _require(section, condition, message):
    if not condition:
        raise ConfigError(f"{section}: {message}")


@dataclass
class CorpusConfig:
    subjects: int = 40
    views: list = field(default_factory=lambda: [float(v) for v in range(0, 181, 18)])
    sequences_per_subject: int = 3
    frames_per_cycle: int = 16
    cycles: int = 1
    canvas: int = 128

    def validate(self):
        _require("corpus", self.subjects >= 1, "subjects must be >= 1")
        _require("corpus", self.sequences_per_subject >= 1, "sequences_per_subject must be >= 1")
        _require("corpus", self.frames_per_cycle >= 2, "frames_per_cycle must be >= 2")
        _require("corpus", self.cycles >= 1, "cycles must be >= 1")
        _require("corpus", self.canvas >= 32, "canvas must be >= 32")
        _require("corpus", len(self.views) >= 2, "need at least two views")
        for v in self.views:
            _require("corpus", 0.0 <= float(v) <= 180.0, f"view {v} outside [0, 180]")
        _require("corpus", sorted(self.views) == list(self.views), "views must be sorted")
        _require("corpus", len(set(self.views)) == len(self.views), "views must be unique")
        return self

    @property
    def subject_ids(self):
        return [f"{i:03d}" for i in range(1, self.subjects + 1)]

    @property
    def sequence_ids(self):
        return [f"nm{i:02d}" for i in range(1, self.sequences_per_subject + 1)]


@dataclass
class SynthConfig:
    alphas: list = None  # None -> k/spacing for k in 1..spacing-1
    pairs: list = None  # None -> adjacent view pairs

    def validate(self):
        if self.alphas is not None:
            _require("synth", len(self.alphas) > 0, "alphas must be nonempty when given")
            for a in self.alphas:
                _require("synth", 0.0 < float(a) < 1.0, f"alpha {a} outside (0, 1)")
        if self.pairs is not None:
            for p in self.pairs:
                _require("synth", len(p) == 2, f"pair {p} must have two views")
        return self


@dataclass
class EvalSection:
    split: SplitSpec
    metric: str = "euclidean"

    def validate(self):
        _require("eval", self.metric in DISTANCE_METRICS, f"metric must be one of {DISTANCE_METRICS}")
        try:
            self.split.validate()
        except ValueError as exc:
            raise ConfigError(f"eval: {exc}") from exc
        return self


@dataclass
class RunConfig:
    seed: int
    out_dir: Path
    corpus: CorpusConfig
    gan: dvgan.TrainConfig
    synth: SynthConfig
    cnn: featnet.FeatConfig
    eval: EvalSection

    def validate(self):
        self.corpus.validate()
        self.synth.validate()
        self.eval.validate()
        try:
            self.gan.validate()
            self.cnn.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        ids = set(self.corpus.subject_ids)
        for sid in self.eval.split.train_subjects + self.eval.split.test_subjects:
            _require("eval", sid in ids, f"subject {sid} is not in the corpus roster")
        seqs = set(self.corpus.sequence_ids)
        for seq in self.eval.split.gallery_sequences + self.eval.split.probe_sequences:
            _require("eval", seq in seqs, f"sequence {seq} is not in the corpus")
        return self

    def to_json_dict(self):
        return {
            "seed": self.seed,
            "out_dir": str(self.out_dir),
            "corpus": asdict(self.corpus),
            "gan": {
                k: v
                for k, v in asdict(self.gan).items()
                if k not in ("seed", "views")
            },
            "synth": asdict(self.synth),
            "cnn": {k: v for k, v in asdict(self.cnn).items() if k != "seed"},
            "eval": {
                "train_subjects": self.eval.split.train_subjects,
                "test_subjects": self.eval.split.test_subjects,
                "gallery_sequences": self.eval.split.gallery_sequences,
                "probe_sequences": self.eval.split.probe_sequences,
                "metric": self.eval.metric,
            },
        }


_GAN_KEYS = (
    "epochs",
    "batch_size",
    "lambda_l1",
    "w_d",
    "w_m",
    "lr",
    "beta1",
    "beta2",
    "theta_prime_deg",
    "base_width",
)
_CNN_KEYS = (
    "epochs",
    "batch_size",
    "lr",
    "beta1",
    "beta2",
    "gamma_center",
    "eta_center",
    "base_width",
    "embedding_dim",
)


def _resolve_subjects(section, value, roster, already_taken):
    """An int takes the first n unclaimed roster ids; a list is explicit."""
    if isinstance(value, int):
        free = [sid for sid in roster if sid not in already_taken]
        _require(section, 0 < value <= len(free), f"cannot take {value} subjects from {len(free)} available")
        return free[:value]
    if isinstance(value, list):
        return [str(s) for s in value]
    raise ConfigError(f"{section}: expected an int or a list of subject ids")


def parse_config(data, base_dir="."):
    _check_keys("config", data, ("seed", "out_dir", "corpus", "gan", "synth", "cnn", "eval"))
    for key in ("seed", "out_dir", "corpus", "eval"):
        _require("config", key in data, f"missing required key {key!r}")
    _require("config", isinstance(data["seed"], int), "seed must be an integer")

    corpus_data = dict(data["corpus"])
    _check_keys("corpus", corpus_data, vars(CorpusConfig()).keys())
    if "views" in corpus_data:
        corpus_data["views"] = [float(v) for v in corpus_data["views"]]
    corpus = CorpusConfig(**corpus_data).validate()

    gan_data = dict(data.get("gan", {}))
    _check_keys("gan", gan_data, _GAN_KEYS)
    gan = dvgan.TrainConfig(seed=data["seed"], views=tuple(corpus.views), **gan_data)

    synth_data = dict(data.get("synth", {}))
    _check_keys("synth", synth_data, ("alphas", "pairs"))
    if synth_data.get("pairs") is not None:
        synth_data["pairs"] = [tuple(float(v) for v in p) for p in synth_data["pairs"]]
    if synth_data.get("alphas") is not None:
        synth_data["alphas"] = [float(a) for a in synth_data["alphas"]]
    synth = SynthConfig(**synth_data).validate()

    cnn_data = dict(data.get("cnn", {}))
    _check_keys("cnn", cnn_data, _CNN_KEYS)
    cnn = featnet.FeatConfig(seed=data["seed"], **cnn_data)

    eval_data = dict(data["eval"])
    _check_keys(
        "eval",
        eval_data,
        ("train_subjects", "test_subjects", "gallery_sequences", "probe_sequences", "metric"),
    )
    for key in ("train_subjects", "test_subjects", "gallery_sequences", "probe_sequences"):
        _require("eval", key in eval_data, f"missing required key {key!r}")
    train = _resolve_subjects("eval", eval_data["train_subjects"], corpus.subject_ids, set())
    test = _resolve_subjects("eval", eval_data["test_subjects"], corpus.subject_ids, set(train))
    split = SplitSpec(
        train_subjects=train,
        test_subjects=test,
        gallery_sequences=[str(s) for s in eval_data["gallery_sequences"]],
        probe_sequences=[str(s) for s in eval_data["probe_sequences"]],
    )
    eval_section = EvalSection(split=split, metric=eval_data.get("metric", "euclidean"))

    cfg = RunConfig(
        seed=data["seed"],
        out_dir=Path(base_dir) / data["out_dir"],
        corpus=corpus,
        gan=gan,
        synth=synth,
        cnn=cnn,
        eval=eval_section,
    )
    return cfg.validate()


def load_config(path, out_dir_override=None):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if out_dir_override is not None:
        data["out_dir"] = str(out_dir_override)
    return parse_config(data, base_dir=path.parent)


def write_effective_config(cfg, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg.to_json_dict(), indent=2, sort_keys=True) + "\n")
