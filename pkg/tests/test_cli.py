import hashlib
import json

import numpy as np
import pytest

from lakecause import cli
from lakecause.causal import load_graph
from lakecause.core import N_DAYS, OBSERVED_NAMES, VariableId, load_dataset


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth") / "nested" / "run"
    assert cli.main(["synth", "--lakes-per-class", "25", "--seed", "7", "--out", str(out)]) == 0
    return out


def test_synth_counts_and_created_dir(synth_dir, capsys):
    ds = load_dataset(synth_dir / "dataset.csv")
    assert len(ds) == 600
    assert set(ds.class_counts().values()) == {150}
    assert json.loads((synth_dir / "run_config.json").read_text())["seed"] == 7


def test_synth_is_deterministic(synth_dir, tmp_path):
    again = tmp_path / "again"
    assert cli.main(["synth", "--lakes-per-class", "25", "--seed", "7", "--out", str(again)]) == 0
    for name in ("dataset.csv", "truth.json"):
        assert _sha(again / name) == _sha(synth_dir / name)


def test_synth_invalid_config(tmp_path, capsys):
    assert cli.main(["synth", "--lakes-per-class", "0", "--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_discover_scopes_and_errors(synth_dir, tmp_path, capsys):
    data = str(synth_dir / "dataset.csv")
    out = tmp_path / "g.json"
    rc = cli.main(["discover", "--data", data, "--scope", "region=CW", "--tau-max", "7", "--alpha", "0.01", "--out", str(out)])
    assert rc == 0
    g = load_graph(out)
    assert {(VariableId.HV_ANOM, 1), (VariableId.S2_WATER, 0)} <= set(g.parents(VariableId.HV_ANOM))
    assert g.meta["scope"] == "region=CW"
    assert cli.main(["discover", "--data", data, "--alpha", "1.5"]) == 2
    assert cli.main(["discover", "--data", data, "--scope", "region=XX"]) == 2
    assert cli.main(["discover", "--data", str(tmp_path / "missing.csv")]) == 1


def test_evaluate_region_ood_and_report(synth_dir, tmp_path, capsys):
    report_path = tmp_path / "report.json"
    rc = cli.main([
        "evaluate", "--data", str(synth_dir / "dataset.csv"), "--protocol", "region-ood",
        "--train-region", "NO", "--budget", "840", "--out", str(report_path),
    ])
    assert rc == 0
    payload = json.loads(report_path.read_text())
    assert payload["protocol"] == "region_ood"
    (row,) = payload["rows"]
    assert row["region"] == "NO"
    assert {"causal", "baseline", "gain"} <= set(row)
    assert payload["config"]["run_config"]["transform"]["budget"] == 840
    capsys.readouterr()
    table = tmp_path / "table.txt"
    assert cli.main(["report", "--report", str(report_path), "--table-out", str(table)]) == 0
    assert table.read_text().splitlines()[2].startswith("NO")


def test_train_writes_model(synth_dir, tmp_path):
    rc = cli.main(["train", "--data", str(synth_dir / "dataset.csv"), "--budget", "840", "--out", str(tmp_path)])
    assert rc == 0
    model = json.loads((tmp_path / "model.json").read_text())
    assert model["variant"] == "causal"
    assert ["hv_anom", 1] in model["channel_spec"]
    assert model["run_config"]["paths"]["out"] == str(tmp_path)


# -- configuration layers -------------------------------------------------------


def test_precedence_file_env_flag(tmp_path):
    cfg_file = tmp_path / "run.toml"
    cfg_file.write_text("seed = 3\n[discovery]\nalpha = 0.05\ntau_max = 5\n[eval]\nrepeats = 2\n")
    env = {"LAKECAUSE_DISCOVERY__ALPHA": "0.02", "LAKECAUSE_EVAL__REPEATS": "4", "UNRELATED": "x"}
    cfg = cli.resolve(str(cfg_file), {"discovery": {"alpha": 0.001}}, environ=env)
    assert cfg["seed"] == 3
    assert cfg["discovery"]["tau_max"] == 5
    assert cfg["eval"]["repeats"] == 4
    assert cfg["discovery"]["alpha"] == 0.001
    assert cfg["transform"]["budget"] == cli.DEFAULTS["transform"]["budget"]


def test_json_config_file(tmp_path):
    cfg_file = tmp_path / "run.json"
    cfg_file.write_text(json.dumps({"transform": {"budget": 840}}))
    assert cli.resolve(str(cfg_file), {}, environ={})["transform"]["budget"] == 840


@pytest.mark.parametrize(
    "file_text, env",
    [
        ("[discovery]\nalphaa = 0.05\n", {}),
        ("[nosuch]\nx = 1\n", {}),
        ("", {"LAKECAUSE_DISCOVERY__BOGUS": "1"}),
        ("[eval]\nrepeats = 'many'\n", {}),
    ],
)
def test_unknown_or_malformed_keys_rejected(tmp_path, file_text, env):
    cfg_file = tmp_path / "run.toml"
    cfg_file.write_text(file_text)
    with pytest.raises(cli.ConfigError):
        cli.resolve(str(cfg_file), {}, environ=env)


def test_unknown_key_exit_code(tmp_path, monkeypatch, capsys):
    cfg_file = tmp_path / "run.toml"
    cfg_file.write_text("[synth]\nlakes = 3\n")
    assert cli.main(["synth", "--config", str(cfg_file), "--out", str(tmp_path)]) == 2
    monkeypatch.setenv("LAKECAUSE_SYNTH__NOPE", "1")
    assert cli.main(["synth", "--out", str(tmp_path)]) == 2


# -- preprocess -------------------------------------------------------------------


META = "lake_id,region,year,label,area_m2,elevation_m\n"


def _write_raw(path, lakes):
    rows = ["lake_id,day,variable,value,zenith_deg"]
    for lake_id, columns in lakes.items():
        for name, obs in columns.items():
            rows += [f"{lake_id},{int(d)},{name},{float(v)!r}," for d, v in obs]
    path.write_text("\n".join(rows) + "\n")


def _preprocess(tmp_path, raw, out, window):
    meta = tmp_path / "meta.csv"
    meta.write_text(META + "A,CW,2019,refreeze,1000,1200\nB,NE,2019,buried,2000,900\n")
    return cli.main([
        "preprocess", "--raw", str(raw), "--metadata", str(meta), "--out", str(out), "--window", str(window),
    ])


def test_preprocess_densifies_and_drops(tmp_path, capsys):
    days = [1, 40, 41, 100, 200, 300, 365]
    sparse = {name: [(d, float(j + d % 7)) for d in days] for j, name in enumerate(OBSERVED_NAMES)}
    starved = dict(sparse)
    starved[OBSERVED_NAMES[2]] = []
    raw = tmp_path / "raw.csv"
    _write_raw(raw, {"A": sparse, "B": starved})
    out = tmp_path / "dense.csv"
    assert _preprocess(tmp_path, raw, out, 5) == 0
    assert "dropped 1 lake(s): B" in capsys.readouterr().out
    ds = load_dataset(out)
    assert [lake.lake_id for lake in ds.lakes] == ["A"]
    assert ds.lakes[0].series.shape == (N_DAYS, len(OBSERVED_NAMES))
    assert np.isfinite(ds.lakes[0].series).all()


def test_preprocess_twice_changes_only_window_edges(tmp_path):
    window = 5
    t = np.arange(1, N_DAYS + 1, dtype=np.float64)
    dense = {name: [(int(d), 0.25 * d + j) for d in t] for j, name in enumerate(OBSERVED_NAMES)}
    raw = tmp_path / "raw.csv"
    _write_raw(raw, {"A": dense})
    first, second = tmp_path / "first.csv", tmp_path / "second.csv"
    assert _preprocess(tmp_path, raw, first, window) == 0
    once = load_dataset(first).lakes[0].series
    again_raw = tmp_path / "again.csv"
    _write_raw(again_raw, {"A": {name: list(zip(t.astype(int), once[:, j])) for j, name in enumerate(OBSERVED_NAMES)}})
    assert _preprocess(tmp_path, again_raw, second, window) == 0
    twice = load_dataset(second).lakes[0].series
    edge = window // 2
    assert np.array_equal(once[edge:-edge], twice[edge:-edge])
    # a linear series is its own centred median away from the edges
    linear = 0.25 * t[:, None] + np.arange(len(OBSERVED_NAMES))
    assert np.array_equal(once[edge:-edge], linear[edge:-edge])
    assert not np.array_equal(once, twice)
