import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prfaas.cli import compare_deployments, main
from prfaas.config import RunConfig, load_config


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_solve(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "solve", "--out-dir", str(tmp_path))
    assert code == 0
    res = json.loads(out)
    assert res["schema_version"] == 1 and "tool_version" in res
    assert (res["np_star"], res["nd_star"]) == (3, 5)
    assert res["t_star"] == pytest.approx(19_637.9, abs=1.0)
    for name in ("solve.json", "threshold_sweep.csv", "allocation_sweep.csv"):
        assert (tmp_path / name).exists()


def test_sweep(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "sweep", "--out-dir", str(tmp_path))
    assert code == 0
    rows = (tmp_path / "threshold_sweep.csv").read_text().splitlines()
    assert len(rows) == json.loads(out)["threshold_rows"] + 1


def test_compare(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "compare", "--out-dir", str(tmp_path), "--json")
    assert code == 0
    rows = {r["name"]: r for r in json.loads(out)["rows"]}
    assert rows["homogeneous"]["ratio"] == 1.0
    assert rows["prfaas-pd"]["ratio"] == pytest.approx(1.515, abs=0.01)
    assert rows["naive"]["ratio"] == pytest.approx(1.185, abs=0.01)
    code, table, _ = run_cli(capsys, "compare", "--out-dir", str(tmp_path))
    assert code == 0 and table.startswith("name")


def test_bandwidth(capsys):
    code, out, _ = run_cli(capsys, "bandwidth", "--gpus", "512")
    assert code == 0
    assert json.loads(out)["egress_gbps"] == pytest.approx(165.76, abs=0.01)
    code, out, _ = run_cli(capsys, "bandwidth", "--gpus", "0")
    assert json.loads(out)["egress_gbps"] == 0
    code, _, err = run_cli(capsys, "bandwidth", "--gpus", "-1")
    assert code == 2 and err.startswith("error")
    code, _, _ = run_cli(capsys, "bandwidth", "--gpus", "8", "--profile", "nope")
    assert code == 2


def test_simulate_deterministic(capsys, tmp_path):
    args = ["simulate", "--duration", "300", "--seed", "4", "--load-factor", "0.5"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(capsys, *args, "--out-dir", str(a))[0] == 0
    assert run_cli(capsys, *args, "--out-dir", str(b))[0] == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == ["decisions.ndjson", "sim_lf0.5.json", "sim_lf0.5_timeseries.csv", "simulate.json"]
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_simulate_zero_duration(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "simulate", "--duration", "0", "--out-dir", str(tmp_path))
    assert code == 0
    assert json.loads(out)["runs"][0]["completed"] == 0


def write_config(tmp_path, mutate):
    raw = load_config(None).to_dict()
    mutate(raw)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    return str(path)


def test_config_errors(capsys, tmp_path):
    cases = [
        lambda d: d.update(profiles={}),
        lambda d: d.update(deployments=[]),
        lambda d: d["deployments"][0]["pd"].update(profile="missing"),
        lambda d: d["scheduler"].update(bogus=1),
        lambda d: d.update(version=9),
        lambda d: d.update(baseline="nope"),
    ]
    for mutate in cases:
        code, _, err = run_cli(capsys, "solve", "--config", write_config(tmp_path, mutate), "--out-dir", str(tmp_path))
        assert code == 2, err
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert run_cli(capsys, "solve", "--config", str(bad))[0] == 2
    assert run_cli(capsys, "solve", "--config", "builtin:nope")[0] == 2
    assert run_cli(capsys, "solve", "--deployment", "nope")[0] == 2


def test_infeasible_exit(capsys, tmp_path):
    def no_pd(d):
        dep = d["deployments"][0]
        dep["pd"].update(prefill_instances=0, decode_instances=0)
        dep.pop("prfaas")
        dep["optimize"] = False

    code, _, err = run_cli(capsys, "solve", "--config", write_config(tmp_path, no_pd), "--out-dir", str(tmp_path))
    assert code == 3, err


@settings(max_examples=30, deadline=None)
@given(
    st.floats(1.0, 400.0),
    st.integers(1, 64),
    st.integers(0, 8),
    st.floats(0.5, 0.95),
    st.lists(st.floats(0.1, 2.0), min_size=1, max_size=3),
)
def test_config_roundtrip(egress, gpus, n_p, util, factors):
    raw = load_config(None).to_dict()
    dep = raw["deployments"][0]
    dep["prfaas"].update(egress_gbps=egress, gpus=gpus)
    dep["pd"].update(prefill_instances=n_p, decode_instances=8 - n_p)
    raw["scheduler"]["util_threshold"] = util
    raw["simulator"]["load_factors"] = factors
    cfg = RunConfig.from_dict(raw)
    again = RunConfig.from_dict(json.loads(cfg.dumps()))
    assert again == cfg
    assert again.to_dict() == raw


def test_identical_deployments_ratio_one(capsys, tmp_path):
    def twin(d):
        first = json.loads(json.dumps(d["deployments"][0]))
        first.update(name="twin", active=False)
        d["deployments"] = [d["deployments"][0], first]
        d["baseline"] = "twin"

    code, out, _ = run_cli(capsys, "compare", "--json", "--config", write_config(tmp_path, twin), "--out-dir", str(tmp_path))
    assert code == 0
    assert [r["ratio"] for r in json.loads(out)["rows"]] == [1.0, 1.0]


def test_prfaas_pd_over_naive():
    rows = {r["name"]: r for r in compare_deployments(load_config(None))}
    assert rows["prfaas-pd"]["lambda_max"] / rows["naive"]["lambda_max"] == pytest.approx(1.32, rel=0.05)
