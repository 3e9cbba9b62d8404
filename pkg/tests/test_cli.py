import json

import numpy as np
import pytest

from focal.cli import EXIT_BUDGET, EXIT_INFEASIBLE, EXIT_INPUT, EXIT_OK, EXIT_TIMEOUT, main, table
from focal.dataset import save_dataset
from focal.desk import blob_classifier, blob_dataset, desk_cnn
from focal.kernel import mask_read_pgm
from focal.manifest import model_load, model_save
from focal.planner import EnergyProfile


@pytest.fixture(scope="module")
def blob(tmp_path_factory):
    root = tmp_path_factory.mktemp("blob")
    model_save(blob_classifier(size=24), root / "model.json")
    save_dataset(blob_dataset(n=16, size=24), root / "data")
    return root


def test_table_alignment():
    out = table(["a", "bb"], [[1, 2], [333, 4]]).splitlines()
    assert out == ["a    bb", "---  --", "1    2", "333  4"]


def test_inspect(tmp_path, capsys):
    model_save(desk_cnn(), tmp_path / "m.json")
    assert main(["inspect", str(tmp_path / "m.json")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "total dense MACs: 10322048" in out
    assert "downsample points (candidate k): [4, 9, 14]" in out


def test_missing_manifest_is_input_error(tmp_path, capsys):
    assert main(["inspect", str(tmp_path / "x.json")]) == EXIT_INPUT
    assert "error" in capsys.readouterr().err


def test_plan_k_profile_file(tmp_path, capsys):
    (tmp_path / "p.json").write_text(json.dumps(EnergyProfile([10, 10, 10, 10], 1).to_dict()))
    code = main(["plan-k", "--profile", str(tmp_path / "p.json"), "--budget", "32", "--aoi-fraction", "0.5",
                 "--json", str(tmp_path / "k.json")])
    assert code == EXIT_OK
    assert "selected k = 2" in capsys.readouterr().out
    assert json.loads((tmp_path / "k.json").read_text())["k"] == 2
    code = main(["plan-k", "--profile", str(tmp_path / "p.json"), "--budget", "5", "--aoi-fraction", "0.5"])
    assert code == EXIT_BUDGET


def test_plan_k_model_maps_to_layer(tmp_path, capsys):
    model_save(desk_cnn(), tmp_path / "m.json")
    assert main(["plan-k", str(tmp_path / "m.json"), "--budget", "8e6", "--aoi-fraction", "0.5"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "selected k = 3 dense conv layers (threshold after layer 6" in out
    assert main(["plan-k", "--budget", "1", "--aoi-fraction", "0.5"]) == EXIT_INPUT


def test_plan_k_time_proxy(tmp_path, capsys):
    model_save(desk_cnn(), tmp_path / "m.json")
    code = main(["plan-k", str(tmp_path / "m.json"), "--budget", "1e9", "--aoi-fraction", "0.5", "--proxy", "time",
                 "--calibration", "1", "--overhead", "0"])
    assert code == EXIT_OK and "mode=time" in capsys.readouterr().out


def test_search_eval_infer_pipeline(blob, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("FOCAL_BLOCK_SIZE", "4")
    out = tmp_path / "s"
    code = main(["search-tau", str(blob / "model.json"), str(blob / "data"), "--k", "4", "-T", "1000", "-A", "100%",
                 "--out-dir", str(out), "--repeats", "1", "--timing-samples", "2"])
    assert code == EXIT_OK
    trace = json.loads((out / "trace.json").read_text())
    assert trace["status"] == "success"
    fcnn = model_load(out / "fcnn.json")
    assert fcnn.threshold_index == 5 and fcnn.layers[6].block.block_size == 4

    base, ev = tmp_path / "base", tmp_path / "ev"
    assert main(["eval", str(blob / "model.json"), str(blob / "data"), "--out-dir", str(base), "--repeats", "1"]) == EXIT_OK
    code = main(["eval", str(out / "fcnn.json"), str(blob / "data"), "--baseline", str(base / "report.json"),
                 "--out-dir", str(ev), "--repeats", "1"])
    assert code == EXIT_OK
    text = capsys.readouterr().out
    assert "improvement" in text
    doc = json.loads((ev / "report.json").read_text())
    assert set(doc["improvement"]) == {"accuracy", "latency_ms", "macs_per_inference"}
    assert (ev / "report.csv").read_text().startswith("model,samples")

    sample = sorted((blob / "data").glob("*.ftnsr"))[0]
    assert main(["infer", str(out / "fcnn.json"), str(sample), "--export-mask", str(tmp_path / "m.pgm")]) == EXIT_OK
    assert mask_read_pgm(tmp_path / "m.pgm").shape == (12, 12)
    assert "label:" in capsys.readouterr().out


def test_search_timeout_and_infeasible(blob, tmp_path):
    args = [str(blob / "model.json"), str(blob / "data"), "--k", "4", "--repeats", "1", "--timing-samples", "1"]
    assert main(["search-tau", *args, "-T", "1e-6", "-A", "0.5", "--max-passes", "1", "--out-dir", str(tmp_path / "a")]) == EXIT_TIMEOUT
    assert not (tmp_path / "a" / "fcnn.json").exists()
    assert main(["search-tau", *args, "-T", "1e-6", "-A", "1.0", "--out-dir", str(tmp_path / "b")]) == EXIT_INFEASIBLE
    assert json.loads((tmp_path / "b" / "trace.json").read_text())["status"] == "infeasible"


def test_convert_and_bad_k(blob, tmp_path):
    out = tmp_path / "f.json"
    assert main(["convert", str(blob / "model.json"), "--k", "4", "--tau", "0.5", "--fill", "bias", "-o", str(out)]) == EXIT_OK
    f = model_load(out)
    assert f.layers[5].tau == 0.5 and f.layers[6].fill == "bias"
    assert main(["convert", str(blob / "model.json"), "--k", "99", "--tau", "0.5", "-o", str(out)]) == EXIT_INPUT


def test_infer_dense_model(blob, tmp_path, capsys):
    sample = sorted((blob / "data").glob("*.ftnsr"))[0]
    assert main(["infer", str(blob / "model.json"), str(sample), "--export-mask", str(tmp_path / "m.pgm")]) == EXIT_OK
    assert "no mask written" in capsys.readouterr().out
    assert not (tmp_path / "m.pgm").exists()
