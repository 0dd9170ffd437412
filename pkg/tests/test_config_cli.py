import json

import numpy as np
import pytest

from evfusion import cli, data_files
from evfusion.config import (ABLATION_PATTERNS, SWEEP_FRAME_COUNTS,
                             SWEEP_TEMPLATES, classes_from_labels,
                             config_to_dict, load_config, make_datasets)
from evfusion.errors import ConfigError
from evfusion.events import MotionClass, SynthSpec, synth_dataset
from evfusion.params import ParamStore


TINY = {
    "seed": 0,
    "data": {
        "classes": ["square moving right", "square moving left"],
        "samples_per_class": 2,
        "eval_samples_per_class": 1,
        "resolution": [16, 16],
        "frames": 2,
    },
    "rgb_encoder": {"image_size": 16, "patch_size": 8, "dim": 16, "heads": 2,
                    "depth": 1, "mlp_ratio": 2.0},
    "event_encoder": {"image_size": 16, "patch_size": 8, "dim": 16, "heads": 2,
                      "depth": 1, "mlp_ratio": 2.0},
    "text": {"dim": 16, "heads": 2, "max_len": 8},
    "fusion": {"dim": 16, "heads": 2, "mlp_ratio": 2.0},
    "optim": {"epochs": 2, "batch_size": 4},
}


def write_tiny(tmp_path, **extra):
    doc = json.loads(json.dumps(TINY))
    doc.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


# -- config loading ------------------------------------------------------------

def test_load_defaults_without_file():
    cfg = load_config(None)
    assert cfg.rgb_encoder.dim == cfg.fusion.dim == 64
    assert len(cfg.data.classes) == 4
    assert cfg.optim.epochs == 200


def test_load_file_and_dotted_overrides(tmp_path):
    path = write_tiny(tmp_path)
    cfg = load_config(path, {"optim.epochs": 7, "seed": 3})
    assert cfg.optim.epochs == 7
    assert cfg.seed == 3
    assert cfg.data.resolution == (16, 16)
    assert [c.label for c in cfg.data.classes] == ["square moving right",
                                                   "square moving left"]


def test_none_overrides_ignored(tmp_path):
    cfg = load_config(write_tiny(tmp_path), {"seed": None, "optim.epochs": None})
    assert cfg.seed == 0 and cfg.optim.epochs == 2


def test_string_class_needs_shape_and_direction(tmp_path):
    doc = json.loads(json.dumps(TINY))
    doc["data"]["classes"] = ["waving hello", "square moving left"]
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ConfigError, match="classes"):
        load_config(path)


def test_labels_file(tmp_path):
    labels = tmp_path / "labels.txt"
    labels.write_text("clap\nwave\njump\n")
    doc = json.loads(json.dumps(TINY))
    doc["data"].pop("classes")
    doc["data"]["labels_file"] = str(labels)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    cfg = load_config(path)
    assert cfg.labels == ["clap", "wave", "jump"]
    # each label got a distinct motion program
    programs = {(c.shape, c.direction) for c in cfg.data.classes}
    assert len(programs) == 3


def test_classes_from_labels_cycles_programs():
    classes = classes_from_labels([f"l{i}" for i in range(14)])
    assert classes[0].shape == classes[12].shape
    assert classes[0].direction == classes[12].direction


def test_config_error_cases(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(bad)
    # width mismatch across branches
    doc = json.loads(json.dumps(TINY))
    doc["text"]["dim"] = 32
    p = tmp_path / "w.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(ConfigError, match="width"):
        load_config(p)
    # bad template
    p2 = write_tiny(tmp_path, template="no placeholder")
    with pytest.raises(ConfigError, match="template"):
        load_config(p2)
    # unknown field
    doc = json.loads(json.dumps(TINY))
    doc["optim"]["bogus"] = 1
    p3 = tmp_path / "u.json"
    p3.write_text(json.dumps(doc))
    with pytest.raises(ConfigError, match="optim"):
        load_config(p3)


def test_sweep_constants():
    assert SWEEP_FRAME_COUNTS == [1, 3, 5, 7]
    assert len(SWEEP_TEMPLATES) == 5 and SWEEP_TEMPLATES[-1] == "NONE"
    assert len(ABLATION_PATTERNS) == 6
    assert ABLATION_PATTERNS[0] == {k: True for k in ("sci", "lvm", "mt", "sa", "ca")}
    for pattern in ABLATION_PATTERNS[1:]:
        assert sum(not v for v in pattern.values()) == 1


def test_make_datasets_split_sizes_and_disjoint(tmp_path):
    cfg = load_config(write_tiny(tmp_path))
    train, evald = make_datasets(cfg)
    assert len(train) == 4 and len(evald) == 2
    assert {s.sample_id for s in train}.isdisjoint({s.sample_id for s in evald})


def test_config_to_dict_json_serializable(tmp_path):
    cfg = load_config(write_tiny(tmp_path))
    doc = config_to_dict(cfg)
    text = json.dumps(doc, sort_keys=True)
    assert json.loads(text)["optim"]["epochs"] == 2


def test_lvm_off_uses_shallow_trainable_encoders(tmp_path):
    cfg = load_config(write_tiny(tmp_path, switches={"lvm": False},
                                 shallow_encoder_depth=0))
    mc = cfg.model_config()
    assert mc.rgb.depth == 0 and not mc.rgb.frozen
    cfg_on = load_config(write_tiny(tmp_path))
    assert cfg_on.model_config().rgb.frozen


# -- parameter store persistence ------------------------------------------------

def test_param_store_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    store = ParamStore()
    store.add("a.w", rng.normal(size=(3, 4)))
    store.add("a.b", rng.normal(size=(1, 4)))
    store.add("b.w", rng.normal(size=(2, 2)))
    store.freeze("a")
    path = tmp_path / "model.ckpt"
    store.save(path)

    other = ParamStore()
    other.add("a.w", np.zeros((3, 4)))
    other.add("a.b", np.zeros((1, 4)))
    other.add("b.w", np.zeros((2, 2)))
    other.load(path)
    for name in store.names():
        assert np.array_equal(other[name].data, store[name].data)
    assert other.is_frozen("a.w")
    assert not other.is_frozen("b.w")


def test_param_store_load_shape_mismatch(tmp_path):
    store = ParamStore()
    store.add("x", np.zeros((2, 2)))
    store.save(tmp_path / "m.ckpt")
    other = ParamStore()
    other.add("x", np.zeros((3, 3)))
    with pytest.raises(Exception):
        other.load(tmp_path / "m.ckpt")


# -- dataset files ---------------------------------------------------------------

def desk_samples(n_frames=2):
    classes = [MotionClass("square moving right", "square", "right"),
               MotionClass("disc moving up", "disc", "up")]
    spec = SynthSpec(classes=classes, samples_per_class=2,
                     resolution=(16, 16), n_frames=n_frames)
    return synth_dataset(spec, seed=0), [c.label for c in classes]


def test_ppm_roundtrip(tmp_path):
    frame = np.random.default_rng(1).uniform(size=(8, 10, 3))
    path = tmp_path / "f.ppm"
    data_files.write_ppm(frame, path)
    back = data_files.read_ppm(path)
    assert back.shape == frame.shape
    # 8-bit quantization bound
    assert np.max(np.abs(back - frame)) <= 1.0 / 255.0 + 1e-12


@pytest.mark.parametrize("fmt", ["csv", "binary"])
def test_dataset_roundtrip(tmp_path, fmt):
    samples, labels = desk_samples()
    data_files.write_dataset(samples, labels, tmp_path, event_format=fmt)
    back = data_files.read_dataset(tmp_path, split="train")
    assert len(back) == len(samples)
    for a, b in zip(samples, back):
        assert a.label == b.label and a.sample_id == b.sample_id
        assert np.array_equal(a.events.t, b.events.t)
        assert np.array_equal(a.events.p, b.events.p)
        for fa, fb in zip(a.clip.frames, b.clip.frames):
            assert np.max(np.abs(fa - fb)) <= 1.0 / 255.0 + 1e-12


# -- CLI ---------------------------------------------------------------------------

def run_cli(argv):
    return cli.main(argv)


def test_cli_config_error_exit_code(tmp_path):
    assert run_cli(["train", "--config", str(tmp_path / "missing.json")]) == 2


def test_cli_eval_missing_checkpoint_is_io_error(tmp_path):
    path = write_tiny(tmp_path, out_dir=str(tmp_path / "out"))
    assert run_cli(["eval", "--config", str(path)]) == 3


def test_cli_synth_data(tmp_path, capsys):
    path = write_tiny(tmp_path, out_dir=str(tmp_path / "out"))
    assert run_cli(["synth-data", "--config", str(path)]) == 0
    assert (tmp_path / "out" / "dataset_train.json").exists()
    assert (tmp_path / "out" / "dataset_eval.json").exists()
    assert "wrote" in capsys.readouterr().out


def test_cli_train_then_eval(tmp_path, capsys):
    out = tmp_path / "run"
    path = write_tiny(tmp_path, out_dir=str(out))
    assert run_cli(["train", "--config", str(path)]) == 0
    for fname in ("metrics.jsonl", "model.ckpt", "config.json",
                  "final_metrics.json"):
        assert (out / fname).exists(), fname
    lines = (out / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 2  # one record per epoch
    record = json.loads(lines[0])
    assert {"epoch", "lr", "train_loss", "train_top1"} <= set(record)

    assert run_cli(["eval", "--config", str(path)]) == 0
    assert (out / "eval_metrics.json").exists()
    scores = json.loads((out / "top5_scores.json").read_text())
    assert all("top5" in rec and "scores" in rec for rec in scores)
    assert "top1=" in capsys.readouterr().out


def test_cli_grad_check_pass_and_fault(capsys):
    assert run_cli(["grad-check", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out
    assert run_cli(["grad-check", "--seed", "0", "--inject-fault"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_cli_dump_embeddings(tmp_path):
    out = tmp_path / "run"
    path = write_tiny(tmp_path, out_dir=str(out))
    assert run_cli(["train", "--config", str(path)]) == 0
    assert run_cli(["dump-embeddings", "--config", str(path)]) == 0
    rows = (out / "embeddings_train.csv").read_text().splitlines()
    assert rows[0].startswith("sample_id,label,f0")
    assert len(rows) == 1 + 4  # header + train samples
