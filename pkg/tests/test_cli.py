import csv
import json

import numpy as np
import pytest

from conceptlogic.alignment import ConceptSet
from conceptlogic.cli import run
from conceptlogic.formats import Dataset, load_concept_set, load_manifest, read_json, save_concept_set, save_manifest


def _ok(argv):
    assert run([str(a) for a in argv]) == 0


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    _ok(["gen-synth", "--out", root / "data", "--samples-per-class", 20, "--map-size", 2])
    manifest = root / "data" / "manifest.json"
    _ok(["train", "--out", root / "run", "--manifest", manifest, "--epochs", 5, "--lr", 1e-3])
    ckpt = root / "run" / "checkpoint"
    _ok(["eval", "--out", root / "eval", "--manifest", manifest, "--checkpoint", ckpt])
    return root, manifest, ckpt


def test_end_to_end_outputs(pipeline):
    root, _, _ = pipeline
    for d, name in [("data", "planted_rules.json"), ("run", "loss_curve.csv"), ("run", "parameters.json"),
                    ("eval", "metrics.json"), ("eval", "metrics.csv"), ("eval", "ruleset.json")]:
        assert (root / d / name).is_file(), name
        assert (root / d / "resolved-config.json").is_file()
    rows = list(csv.reader((root / "run" / "loss_curve.csv").open()))
    assert rows[0] == ["epoch", "L_task", "L_c", "L_neural", "total"]
    assert len(rows) == 6
    metrics = read_json(root / "eval" / "metrics.json")
    assert "fused" in metrics and "neural" in metrics


def test_resolved_config_records_arguments(pipeline):
    root, _, _ = pipeline
    cfg = read_json(root / "run" / "resolved-config.json")
    assert cfg["epochs"] == 5 and cfg["lr"] == 1e-3 and cfg["command"] == "train"


@pytest.mark.parametrize("cmd,extra", [
    ("explain", ["--limit", "3"]),
    ("stability", ["--draws", "2"]),
    ("report-weights", []),
])
def test_downstream_commands(pipeline, tmp_path, cmd, extra):
    _, manifest, ckpt = pipeline
    _ok([cmd, "--out", tmp_path, "--manifest", manifest, "--checkpoint", ckpt, *extra])
    assert (tmp_path / "resolved-config.json").is_file()


def test_report_weights_normalized(pipeline, tmp_path):
    _, manifest, ckpt = pipeline
    _ok(["report-weights", "--out", tmp_path, "--checkpoint", ckpt, "--manifest", manifest])
    rows = list(csv.DictReader((tmp_path / "weights.csv").open()))
    for cls in {r["class"] for r in rows}:
        total = sum(abs(float(r["weight"])) for r in rows if r["class"] == cls)
        assert total == pytest.approx(1.0)


def test_eval_is_byte_identical(pipeline, tmp_path):
    root, manifest, ckpt = pipeline
    _ok(["eval", "--out", tmp_path, "--manifest", manifest, "--checkpoint", ckpt])
    for name in ("metrics.json", "metrics.csv", "ruleset.json"):
        assert (tmp_path / name).read_bytes() == (root / "eval" / name).read_bytes()


def test_disabled_losses_contribute_nothing(pipeline, tmp_path):
    _, manifest, _ = pipeline
    _ok(["train", "--out", tmp_path, "--manifest", manifest, "--epochs", 2,
         "--no-concept-loss", "--no-neural-loss"])
    for row in csv.DictReader((tmp_path / "loss_curve.csv").open()):
        assert float(row["total"]) == float(row["L_task"])


def test_label_thresholds_pooled_scores(tmp_path):
    # cosine(e_a, v) per cell; build cells whose cosines average to (0.7, 0.6)
    def cell(ca, cb):
        return np.array([ca, cb, np.sqrt(max(0.0, 1 - ca**2 - cb**2))])

    maps = np.stack([cell(0.8, 0.5), cell(0.6, 0.7)])[None, None]
    ds = Dataset(np.zeros((1, 1)), np.array([0]), feature_maps=maps, class_names=["y"])
    concepts = ConceptSet(["a", "b"], np.eye(3)[:2])
    manifest = save_manifest(tmp_path / "in", ds, concepts)
    _ok(["label", "--out", tmp_path / "out", "--manifest", manifest])
    lines = (tmp_path / "out" / "concept_labels.csv").read_text().splitlines()
    assert lines[0] == "sample_id,a,b"
    assert lines[1].endswith("1,0")
    labeled = load_manifest(tmp_path / "out" / "labeled" / "manifest.json")
    np.testing.assert_array_equal(labeled.concept_labels, [[1, 0]])


def test_label_heatmaps(pipeline, tmp_path):
    _, manifest, _ = pipeline
    _ok(["label", "--out", tmp_path, "--manifest", manifest, "--heatmaps"])
    assert any(p.suffix == ".pgm" for p in (tmp_path / "heatmaps").iterdir())


def test_filter_concepts(tmp_path):
    names = ["opacity", "consolidation", "a" * 40, "opacity again"]
    emb = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0], [1.0, 0.05, 0]])
    save_concept_set(tmp_path / "c.json", ConceptSet(names, emb))
    _ok(["filter-concepts", "--out", tmp_path / "out", "--concepts", tmp_path / "c.json"])
    kept, _, _ = load_concept_set(tmp_path / "out" / "concepts.json")
    assert kept.names == ["opacity", "consolidation"]


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["train"],
    ["train", "--manifest", "does-not-exist.json"],
    ["gen-synth", "--classes", "1"],
    ["train", "--manifest", "x.json", "--lr", "-1"],
])
def test_user_errors_exit_1(tmp_path, argv, capsys):
    assert run(argv + ["--out", str(tmp_path)] if argv and argv[0] in ("train", "gen-synth") else argv) == 1
    assert "error" in capsys.readouterr().err


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("CONCEPTLOGIC_OUT", str(tmp_path / "env"))
    _ok(["gen-synth", "--samples-per-class", 3, "--map-size", 0])
    assert (tmp_path / "env" / "manifest.json").is_file()


def test_gen_synth_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        _ok(["gen-synth", "--out", tmp_path / d, "--samples-per-class", 5, "--seed", 3])
    for p in (tmp_path / "a").iterdir():
        if p.name != "resolved-config.json":
            assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()
