import json

import pytest

from dvgait.config import ConfigError, load_config, parse_config, write_effective_config


def base_config(**overrides):
    data = {
        "seed": 5,
        "out_dir": "run",
        "corpus": {
            "subjects": 4,
            "views": [0, 18, 36],
            "sequences_per_subject": 3,
            "frames_per_cycle": 8,
        },
        "gan": {"epochs": 1, "batch_size": 2, "base_width": 4},
        "cnn": {"epochs": 1, "batch_size": 4, "base_width": 2, "embedding_dim": 16},
        "eval": {
            "train_subjects": 2,
            "test_subjects": 2,
            "gallery_sequences": ["nm01", "nm02"],
            "probe_sequences": ["nm03"],
        },
    }
    data.update(overrides)
    return data


def test_parse_resolves_subject_counts():
    cfg = parse_config(base_config())
    assert cfg.eval.split.train_subjects == ["001", "002"]
    assert cfg.eval.split.test_subjects == ["003", "004"]


def test_explicit_subject_lists_allowed():
    data = base_config()
    data["eval"]["train_subjects"] = ["002", "004"]
    data["eval"]["test_subjects"] = ["001", "003"]
    cfg = parse_config(data)
    assert cfg.eval.split.train_subjects == ["002", "004"]


def test_unknown_top_level_key_rejected():
    data = base_config()
    data["extra"] = 1
    with pytest.raises(ConfigError, match="unknown keys"):
        parse_config(data)


def test_unknown_section_key_rejected():
    data = base_config()
    data["cnn"]["dropout"] = 0.5
    with pytest.raises(ConfigError, match="dropout"):
        parse_config(data)


def test_view_out_of_range_rejected():
    data = base_config()
    data["corpus"]["views"] = [0, 18, 190]
    with pytest.raises(ConfigError, match="outside"):
        parse_config(data)


def test_gan_views_inherited_from_corpus():
    cfg = parse_config(base_config())
    assert cfg.gan.views == (0.0, 18.0, 36.0)
    assert cfg.gan.seed == 5


def test_too_many_subjects_requested():
    data = base_config()
    data["eval"]["test_subjects"] = 5
    with pytest.raises(ConfigError, match="cannot take"):
        parse_config(data)


def test_gallery_probe_overlap_rejected():
    data = base_config()
    data["eval"]["probe_sequences"] = ["nm01"]
    with pytest.raises(ConfigError, match="overlap"):
        parse_config(data)


def test_unknown_sequence_rejected():
    data = base_config()
    data["eval"]["probe_sequences"] = ["nm09"]
    with pytest.raises(ConfigError, match="nm09"):
        parse_config(data)


def test_bad_metric_rejected():
    data = base_config()
    data["eval"]["metric"] = "manhattan"
    with pytest.raises(ConfigError, match="metric"):
        parse_config(data)


def test_load_config_round_trip(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(base_config()))
    cfg = load_config(path)
    assert cfg.out_dir == tmp_path / "run"
    effective = tmp_path / "effective.json"
    write_effective_config(cfg, effective)
    reparsed = parse_config(json.loads(effective.read_text()), base_dir=tmp_path)
    assert reparsed.to_json_dict() == cfg.to_json_dict()


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.json")


def test_invalid_json_is_config_error(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{nope")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(path)
