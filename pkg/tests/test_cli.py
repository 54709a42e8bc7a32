import csv
import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from qlstmkit.cli import main
from qlstmkit.errors import ConfigError
from qlstmkit.experiment import ExperimentConfig, load_checkpoint, run_experiment

TOY = {
    "dataset": {"format": "synthetic", "n_samples": 40, "seed": 0},
    "model": {"n_qubits": 2, "seq_len": 2, "chunk_dim": 8, "fp_bits": 16},
    "train": {"model": "qlstm", "epochs": 2, "lr": 0.05, "batch_size": 16, "split_seeds": [0]},
    "output_dir": "runs",
    "seed": 0,
}


def write_config(tmp_path, data=None, name="cfg.json", **changes):
    data = json.loads(json.dumps(data or TOY))
    for section, fields in changes.items():
        # dataset sections are replaced whole since their keys depend on the format
        if isinstance(fields, dict) and section != "dataset":
            data[section] = {**(data.get(section) or {}), **fields}
        else:
            data[section] = fields
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)


def kv(output):
    return dict(line.split("=", 1) for line in output.splitlines() if "=" in line and "," not in line)


# -- fingerprint --------------------------------------------------------------

def test_fingerprint_valid(tmp_path):
    src = tmp_path / "in.csv"
    src.write_text("id,smiles,y\na,CCO,1\nb,CCC,0\nc,c1ccccc1,1\n", encoding="utf-8")
    out = tmp_path / "out.csv"
    r = invoke("fingerprint", src, out, "--bits", 64, "--radius", 2)
    assert r.exit_code == 0, r.output
    assert "rows=3 skipped=0" in r.output
    rows = list(csv.DictReader(out.open(encoding="utf-8")))
    assert len(rows) == 3 and all(len(row["fp"]) == 64 for row in rows)
    assert [row["y"] for row in rows] == ["1", "0", "1"]


def test_fingerprint_missing_input(tmp_path):
    out = tmp_path / "out.csv"
    r = invoke("fingerprint", tmp_path / "nope.csv", out)
    assert r.exit_code != 0 and not out.exists()
    assert "not found" in r.output


def test_fingerprint_skips_bad_row(tmp_path):
    src = tmp_path / "in.csv"
    src.write_text("smiles,y\nCCO,1\nC1CC,0\nCCN,1\n", encoding="utf-8")
    out = tmp_path / "out.csv"
    r = invoke("fingerprint", src, out)
    assert r.exit_code == 0 and "rows=2 skipped=1" in r.output
    assert len(out.read_text(encoding="utf-8").splitlines()) == 3


# -- train --------------------------------------------------------------------

def strip_timing(path):
    rows = list(csv.DictReader(path.open(encoding="utf-8")))
    for row in rows:
        row.pop("epoch_seconds")
    return rows


def test_train_writes_run_dir(tmp_path):
    cfg = write_config(tmp_path)
    r = invoke("train", "--config", cfg)
    assert r.exit_code == 0, r.output
    out = kv(r.output)
    run_dir = tmp_path / "runs" / f"qlstm-{out['config_hash'][:12]}"
    assert out["run_dir"] == str(run_dir)
    for name in ("config.json", "config_hash.txt", "report.csv", "summary.json", "checkpoint.json"):
        assert (run_dir / name).is_file(), name
    summary = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
    assert summary["config_hash"] == out["config_hash"]
    assert 0 <= float(out["mean_val_accuracy"]) <= 1


def test_train_rerun_reproduces_report(tmp_path):
    cfg = write_config(tmp_path)
    a = kv(invoke("train", "--config", cfg, "--out", tmp_path / "a").output)
    b = kv(invoke("train", "--config", cfg, "--out", tmp_path / "b").output)
    assert a["config_hash"] == b["config_hash"]
    ra, rb = Path(a["run_dir"]) / "report.csv", Path(b["run_dir"]) / "report.csv"
    assert strip_timing(ra) == strip_timing(rb)
    ca, cb = (Path(d["run_dir"]) / "checkpoint.json" for d in (a, b))
    assert ca.read_bytes() == cb.read_bytes()


def test_train_seed_override_changes_hash(tmp_path):
    cfg = write_config(tmp_path)
    a = kv(invoke("train", "--config", cfg).output)
    b = kv(invoke("train", "--config", cfg, "--seed", 5).output)
    assert a["config_hash"] != b["config_hash"]


def test_train_rejects_zero_lr(tmp_path):
    cfg = write_config(tmp_path, train={"lr": 0})
    r = invoke("train", "--config", cfg)
    assert r.exit_code != 0 and "lr" in r.output
    assert not (tmp_path / "runs").exists()


@pytest.mark.parametrize("changes,needle", [
    (dict(train={"model": "gru"}), "model"),
    (dict(dataset={"format": "sdf"}), "dataset.format"),
    (dict(train={"batch_size": 0}), "batch_size"),
    (dict(model={"n_qubits": 1}), "n_qubits"),
    (dict(dataset={"format": "smiles_csv", "path": "absent.csv"}), "dataset.path"),
])
def test_train_config_errors_name_field(tmp_path, changes, needle):
    cfg = write_config(tmp_path, **changes)
    r = invoke("train", "--config", cfg)
    assert r.exit_code != 0 and needle in r.output


def test_train_rejects_bad_json(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"dataset": ', encoding="utf-8")
    r = invoke("train", "--config", cfg)
    assert r.exit_code != 0 and "line" in r.output


def test_train_from_smiles_file(tmp_path):
    smiles = ["CCO", "CCN", "CCC", "c1ccccc1", "CC(=O)O", "CCCl", "OCCO", "NCCN"]
    lines = ["smiles,y"] + [f"{s},{k % 2}" for k, s in enumerate(smiles)]
    (tmp_path / "mols.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    cfg = write_config(tmp_path, dataset={"format": "smiles_csv", "path": "mols.csv"})
    r = invoke("train", "--config", cfg)
    assert r.exit_code == 0, r.output
    run_dir = kv(r.output)["run_dir"]
    summary = json.loads(open(f"{run_dir}/summary.json", encoding="utf-8").read())
    assert summary["dataset"] == "mols" and summary["dataset_rows"] == 8


# -- sweep --------------------------------------------------------------------

def read_table(text):
    lines = [line for line in text.splitlines() if "=" not in line]
    return list(csv.reader(lines))


def test_sweep_qubits(tmp_path):
    cfg = write_config(tmp_path, train={"epochs": 1})
    r = invoke("sweep", "--config", cfg, "--axis", "qubits", "--values", "2,4")
    assert r.exit_code == 0, r.output
    table = read_table(r.output)
    assert table[0] == ["qubits", "synthetic/qlstm"]
    assert [row[0] for row in table[1:]] == ["2", "4"]
    sweep_dir = kv(r.output)["sweep_dir"]
    legs = json.loads(open(f"{sweep_dir}/sweep.json", encoding="utf-8").read())["legs"]
    assert [leg["status"] for leg in legs] == ["ok", "ok"]


def test_sweep_both_models(tmp_path):
    cfg = write_config(tmp_path, train={"epochs": 1})
    r = invoke("sweep", "--config", cfg, "--axis", "lr", "--values", "0.01,0.1", "--models", "qlstm,lstm")
    assert r.exit_code == 0, r.output
    table = read_table(r.output)
    assert table[0] == ["lr", "synthetic/qlstm", "synthetic/lstm"] and len(table) == 3


def test_sweep_noise_legs_share_non_noise_sections(tmp_path):
    cfg = write_config(tmp_path, train={"epochs": 1}, noise={"bit_flip_p": 0.0, "trajectories": 2})
    r = invoke("sweep", "--config", cfg, "--axis", "noise", "--values", "0.0,0.05")
    assert r.exit_code == 0, r.output
    sweep_dir = kv(r.output)["sweep_dir"]
    legs = json.loads(open(f"{sweep_dir}/sweep.json", encoding="utf-8").read())["legs"]
    comps = []
    for leg in legs:
        lines = open(f"{leg['run_dir']}/config_hash.txt", encoding="utf-8").read().splitlines()[1:]
        comps.append(dict(line.split() for line in lines))
    a, b = comps
    assert a["noise"] != b["noise"]
    assert {k: v for k, v in a.items() if k != "noise"} == {k: v for k, v in b.items() if k != "noise"}


@pytest.mark.parametrize("values", ["", ",", "2,2", "2,x"])
def test_sweep_bad_values(tmp_path, values):
    cfg = write_config(tmp_path)
    r = invoke("sweep", "--config", cfg, "--axis", "qubits", "--values", values)
    assert r.exit_code != 0


def test_sweep_noise_axis_rejects_lstm(tmp_path):
    cfg = write_config(tmp_path)
    r = invoke("sweep", "--config", cfg, "--axis", "noise", "--values", "0.01", "--models", "lstm")
    assert r.exit_code != 0 and "qlstm" in r.output


def test_sweep_failed_leg_marked(tmp_path):
    # 20 qubits exceeds the simulator limit, so that leg fails and the other still runs
    cfg = write_config(tmp_path, train={"epochs": 1})
    r = CliRunner().invoke(main, ["sweep", "--config", str(cfg), "--axis", "qubits", "--values", "2,20"])
    assert r.exit_code == 1
    table = read_table(r.output)
    assert table[2] == ["20", "FAILED"] and table[1][1] != "FAILED"


# -- score --------------------------------------------------------------------

def test_score_circuit_text(tmp_path):
    c = tmp_path / "c.txt"
    c.write_text("RX(0;0.1) RY(1;0.2)\n", encoding="utf-8")
    t = tmp_path / "t.json"
    t.write_text('{"single_qubit_error": 0.01, "two_qubit_error": 0.01}', encoding="utf-8")
    r = invoke("score", c, "--table", t)
    assert r.exit_code == 0, r.output
    assert "score s = 0.0199" in r.output


def test_score_zero_table(tmp_path):
    c = tmp_path / "c.txt"
    c.write_text("# qubits=3\nH(0) CNOT(1,2)\nRZ(2;0.5)\n", encoding="utf-8")
    t = tmp_path / "t.json"
    t.write_text('{"single_qubit_error": 0, "two_qubit_error": 0}', encoding="utf-8")
    r = invoke("score", c, "--table", t)
    assert r.exit_code == 0 and "score s = 0\n" in r.output


def test_score_config_sequence(tmp_path):
    m = tmp_path / "m.json"
    m.write_text('{"n_qubits": 2}', encoding="utf-8")
    r = invoke("score", m)
    assert r.exit_code == 0, r.output
    payload = json.loads(r.output[: r.output.index("\n\n")])
    seq = payload["sequence"]
    assert seq["12"] > seq["8"] > seq["4"] > seq["2"]


def test_score_experiment_config_uses_its_table(tmp_path):
    cfg = write_config(tmp_path, error_table={"single_qubit_error": 0.0, "two_qubit_error": 0.0})
    r = invoke("score", cfg)
    assert r.exit_code == 0
    payload = json.loads(r.output[: r.output.index("\n\n")])
    assert payload["mean"] == 0.0


def test_score_malformed_circuit(tmp_path):
    c = tmp_path / "c.txt"
    c.write_text("# qubits=2\nH(0)\nRX(0;)\n", encoding="utf-8")
    r = invoke("score", c)
    assert r.exit_code != 0
    assert "line 3" in r.output and "position" in r.output


# -- report -------------------------------------------------------------------

def test_report_table_and_figures(tmp_path):
    cfg = write_config(tmp_path, train={"epochs": 2})
    r = invoke("sweep", "--config", cfg, "--axis", "qubits", "--values", "2,3", "--models", "qlstm,lstm")
    assert r.exit_code == 0, r.output
    sweep_dir = kv(r.output)["sweep_dir"]
    out = tmp_path / "rep"
    r = invoke("report", sweep_dir, "--out", out)
    assert r.exit_code == 0, r.output
    rows = list(csv.reader((out / "table_qubits.csv").open(encoding="utf-8")))
    assert rows[0] == ["qubits", "synthetic/qlstm", "synthetic/lstm"]
    assert all("±" in cell for row in rows[1:] for cell in row[1:])
    for name in ("accuracy_vs_qubits.png", "val_curves_qubits.png"):
        data = (out / name).read_bytes()
        assert data[:8] == b"\x89PNG\r\n\x1a\n" and len(data) > 1000


def test_report_no_figures_and_bad_dir(tmp_path):
    cfg = write_config(tmp_path, train={"epochs": 1})
    sweep_dir = kv(invoke("sweep", "--config", cfg, "--axis", "lr", "--values", "0.05").output)["sweep_dir"]
    out = tmp_path / "rep"
    assert invoke("report", sweep_dir, "--out", out, "--no-figures").exit_code == 0
    assert not list(out.glob("*.png"))
    r = invoke("report", tmp_path, "--out", out)
    assert r.exit_code != 0 and "sweep.json" in r.output


# -- config hash and checkpoints ---------------------------------------------

def test_config_hash_equal_for_equal_configs(tmp_path):
    a = ExperimentConfig.from_dict(TOY)
    b = ExperimentConfig.from_dict(json.loads(json.dumps(TOY)))
    assert a.config_hash() == b.config_hash()
    # output location is not part of the identity
    assert a.with_changes(output_dir="elsewhere").config_hash() == a.config_hash()


@pytest.mark.parametrize("section,fields", [
    ("model", {"n_qubits": 3}), ("train", {"lr": 0.02}), ("dataset", {"seed": 1}), ("seed", 3),
    ("noise", {"bit_flip_p": 0.01}),
])
def test_config_hash_changes_with_any_field(section, fields):
    base = ExperimentConfig.from_dict(TOY)
    data = base.to_dict()
    if isinstance(fields, dict):
        data[section] = {**(data[section] or {}), **fields}
    else:
        data[section] = fields
    changed = ExperimentConfig.from_dict(data)
    assert changed.config_hash().digest != base.config_hash().digest
    diff = [k for k in changed.config_hash().components
            if changed.config_hash().components[k] != base.config_hash().components[k]]
    assert diff == [section]


def test_config_rejects_unknown_sections():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**TOY, "extras": {}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**TOY, "train": {**TOY["train"], "noise": {"bit_flip_p": 0.1}}})


def test_checkpoint_round_trip(tmp_path):
    cfg = ExperimentConfig.from_dict(TOY, base_dir=tmp_path)
    result = run_experiment(cfg)
    loaded = load_checkpoint(result.run_dir / "checkpoint.json")
    assert set(loaded) == set(result.report.final_params)
    for seed, params in result.report.final_params.items():
        assert set(loaded[seed]) == set(params)
        for name, value in params.items():
            assert np.array_equal(loaded[seed][name], value), name
