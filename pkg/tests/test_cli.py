import csv
import json
import shutil
from pathlib import Path

import pytest

from acurisk import svg
from acurisk.cli import main
from acurisk.pipeline import MissingPrerequisite, Pipeline, RunConfig, run_pipeline

SMALL = {
    "output_dir": "out",
    "cohort_path": "data/cohort.csv",
    "notes_path": "data/notes.jsonl",
    "n_boot": 50,
    "vocab_size": 300,
    "lasso": {"n_grid": 12, "n_folds": 3, "cv_patience": 4},
    "ordinal": {"max_epochs": 300},
    "synthetic": {"n_patients": 400},
}


def write_config(root: Path, **overrides) -> Path:
    raw = json.loads(json.dumps(SMALL))
    for k, v in overrides.items():
        if isinstance(v, dict) and isinstance(raw.get(k), dict):
            raw[k].update(v)
        else:
            raw[k] = v
    path = root / "run.json"
    path.write_text(json.dumps(raw), encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = write_config(root)
    assert main(["run", "--config", str(cfg), "-q", "--svg"]) == 0
    return root, cfg


def read_rows(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# -- outputs --------------------------------------------------------------------

def test_metrics_table_cardinality(finished_run):
    root, _ = finished_run
    rows = read_rows(root / "out" / "metrics.csv")
    assert len(rows) == 5 * 3 * 3
    assert {r["metric"] for r in rows} == {"auroc", "auprc", "cross_entropy"}
    for r in rows:
        assert float(r["lo"]) <= float(r["point"]) <= float(r["hi"]) or r["metric"] == "cross_entropy"
        assert r["n_boot"] == "50"


def test_curve_tables_share_header(finished_run):
    root, _ = finished_run
    for name in ("calibration.csv", "dca.csv", "km.csv", "ecdf.csv"):
        with open(root / "out" / name, encoding="utf-8") as fh:
            assert fh.readline().strip() == "model,horizon,series,x,y,lo,hi"


def test_manifest_records_provenance(finished_run):
    root, _ = finished_run
    m = json.loads((root / "out" / "manifest.json").read_text())
    assert len(m["config_hash"]) == 64
    assert all(len(h) == 40 for h in m["inputs"].values())
    assert set(m["stages"]) >= {"generate", "prep", "train", "eval", "dca", "km", "fairness", "report"}


def test_svg_flag_writes_figures(finished_run):
    root, _ = finished_run
    figs = list((root / "out" / "figures").glob("*.svg"))
    assert figs and all(f.read_text().startswith("<svg") for f in figs)


def test_report_lists_models(finished_run):
    root, _ = finished_run
    text = (root / "out" / "report.md").read_text()
    for m in ("tabular_lasso", "language_lasso", "fusion_lasso", "language_ordinal", "fusion_ordinal"):
        assert m in text


# -- reproducibility --------------------------------------------------------------

def test_rerun_is_byte_identical_and_inputs_untouched(finished_run, tmp_path):
    root, _ = finished_run
    shutil.copytree(root / "data", tmp_path / "data")
    before = {p.name: p.read_bytes() for p in (tmp_path / "data").iterdir()}
    cfg = write_config(tmp_path)
    assert main(["run", "--config", str(cfg), "-q"]) == 0
    for name in ("metrics.csv", "calibration.csv", "dca.csv", "km.csv", "ecdf.csv", "logrank.csv"):
        assert (tmp_path / "out" / name).read_bytes() == (root / "out" / name).read_bytes(), name
    assert {p.name: p.read_bytes() for p in (tmp_path / "data").iterdir()} == before


def test_deleted_intermediate_is_regenerated(finished_run, tmp_path):
    root, _ = finished_run
    shutil.copytree(root / "data", tmp_path / "data")
    shutil.copytree(root / "out", tmp_path / "out")
    cfg = write_config(tmp_path)
    (tmp_path / "out" / "dca.csv").unlink()
    assert main(["dca", "--config", str(cfg), "-q"]) == 0
    assert (tmp_path / "out" / "dca.csv").read_bytes() == (root / "out" / "dca.csv").read_bytes()


def test_prep_cache_follows_input_hash(finished_run, tmp_path, capsys):
    root, _ = finished_run
    shutil.copytree(root / "data", tmp_path / "data")
    shutil.copytree(root / "out", tmp_path / "out")
    cfg = write_config(tmp_path)
    assert main(["prep", "--config", str(cfg)]) == 0
    assert "reusing vocab.json" in capsys.readouterr().err
    notes = tmp_path / "data" / "notes.jsonl"
    lines = notes.read_text().splitlines()
    notes.write_text("\n".join(lines[1:]) + "\n")
    assert main(["prep", "--config", str(cfg)]) == 0
    assert "reusing vocab.json" not in capsys.readouterr().err


def test_seed_override_changes_bootstrap(finished_run, tmp_path):
    root, _ = finished_run
    shutil.copytree(root / "data", tmp_path / "data")
    shutil.copytree(root / "out", tmp_path / "out")
    cfg = write_config(tmp_path)
    assert main(["eval", "--config", str(cfg), "-q", "--seed-override", "bootstrap=99"]) == 0
    new = read_rows(tmp_path / "out" / "metrics.csv")
    old = read_rows(root / "out" / "metrics.csv")
    assert [r["point"] for r in new] == [r["point"] for r in old]
    assert [r["lo"] for r in new] != [r["lo"] for r in old]
    assert {r["seed"] for r in new} == {"99"}


def test_fairness_by_attributes(finished_run, tmp_path):
    root, _ = finished_run
    shutil.copytree(root / "data", tmp_path / "data")
    shutil.copytree(root / "out", tmp_path / "out")
    cfg = write_config(tmp_path)
    assert main(["fairness", "--config", str(cfg), "-q", "--by", "race,sex"]) == 0
    series = {r["series"].split("=")[0] for r in read_rows(tmp_path / "out" / "ecdf.csv")}
    assert series == {"race", "sex"}


# -- failures and exit codes --------------------------------------------------------

def test_missing_prerequisite_names_producer(finished_run, tmp_path, capsys):
    root, _ = finished_run
    shutil.copytree(root / "data", tmp_path / "data")
    cfg = write_config(tmp_path)
    assert main(["report", "--config", str(cfg), "-q"]) == 2
    err = capsys.readouterr().err
    assert "metrics.csv" in err and "acurisk eval" in err and "acurisk train" in err


def test_missing_inputs_point_to_generate(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["prep", "--config", str(cfg), "-q"]) == 2
    assert "acurisk generate" in capsys.readouterr().err


def test_fusion_without_shd_fails_before_compute(tmp_path, capsys):
    cfg = write_config(tmp_path, synthetic={"n_patients": 400, "n_shd": 0, "n_shd_signal": 0})
    assert main(["generate", "--config", str(cfg), "-q"]) == 0
    assert main(["train", "--config", str(cfg), "-q"]) == 2
    assert "SHD" in capsys.readouterr().err
    assert not (tmp_path / "out" / "predictions.csv").exists()


def test_language_only_models_run_without_shd(tmp_path):
    cfg = write_config(tmp_path, synthetic={"n_patients": 300, "n_shd": 0, "n_shd_signal": 0},
                       models=["language_lasso"], tertile_models=["language_lasso"])
    assert main(["run", "--config", str(cfg), "-q"]) == 0
    assert len(read_rows(tmp_path / "out" / "metrics.csv")) == 3 * 3


@pytest.mark.parametrize("argv", [
    ["bogus"],
    ["eval", "--seed-override", "bootstrap"],
    ["eval", "--seed-override", "nosuchseed=3"],
])
def test_validation_exit_code(argv, tmp_path):
    cfg = write_config(tmp_path)
    assert main(argv + ["--config", str(cfg), "-q"] if argv[0] != "bogus" else argv) == 2


def test_bad_config_values(tmp_path, capsys):
    cfg = write_config(tmp_path, n_boot=0)
    assert main(["eval", "--config", str(cfg)]) == 2
    cfg = write_config(tmp_path, unknown_key=1)
    assert main(["eval", "--config", str(cfg)]) == 2
    assert "unknown_key" in capsys.readouterr().err


def test_runtime_failure_exit_code(finished_run, tmp_path, capsys):
    root, _ = finished_run
    shutil.copytree(root / "data", tmp_path / "data")
    shutil.copytree(root / "out", tmp_path / "out")
    (tmp_path / "out" / "predictions.csv").write_text("garbage\n1,2\n")
    cfg = write_config(tmp_path)
    assert main(["eval", "--config", str(cfg), "-q"]) == 1
    err = capsys.readouterr().err
    assert "stage 'eval' failed" in err and "acurisk eval" in err


def test_lock_blocks_second_process(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    cfg = RunConfig.load(cfg_path)
    with Pipeline(cfg).lock():
        assert main(["generate", "--config", str(cfg_path), "-q"]) == 1
    assert "locked" in capsys.readouterr().err
    assert main(["generate", "--config", str(cfg_path), "-q"]) == 0


def test_python_api_requires_inputs_for_stage(tmp_path):
    cfg = RunConfig.load(write_config(tmp_path))
    with pytest.raises(MissingPrerequisite):
        Pipeline(cfg).run_stage("prep")


def test_config_paths_resolve_relative_to_file(tmp_path):
    cfg = RunConfig.load(write_config(tmp_path))
    assert Path(cfg.output_dir) == tmp_path / "out"
    assert RunConfig.from_dict(cfg.to_dict()).config_hash() == cfg.config_hash()


# -- svg --------------------------------------------------------------------------

def test_line_chart_basic():
    doc = svg.line_chart({"a<b": ([0, 1, 2], [1, 0.5, float("nan")])}, title="t", step=True,
                         diagonal=True)
    assert doc.startswith("<svg") and doc.rstrip().endswith("</svg>")
    assert "a&lt;b" in doc and "polyline" in doc
    with pytest.raises(ValueError):
        svg.line_chart({"x": ([float("nan")], [1.0])})
