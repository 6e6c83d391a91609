import json
from pathlib import Path

import numpy as np
import pytest

import concave_match as cm
from concave_match.cli import main, parse_config, render_config, emit_csv

MINIMAL_DOC = {
    "generator": {"kind": "category", "m": 50, "n": 10000},
    "spec": {"power": 0.9},
    "policies": [{"id": "dla", "epsilon": 0.001}],
    "runs": 20,
    "base_seed": 1,
}


def _write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def _small_doc(**overrides):
    doc = {
        "generator": {"kind": "category", "m": 3, "n": 12, "k": 4},
        "spec": {"power": 0.5},
        "policies": [{"id": "dla", "epsilon": 0.2}, {"id": "myopic"}],
        "runs": 2,
        "base_seed": 7,
        "solver": {"rel_tol": 1e-6},
    }
    doc.update(overrides)
    return doc


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------


def test_parse_config_empty_document():
    with pytest.raises(cm.ConfigError, match="missing generator.kind"):
        parse_config(b"{}")


def test_parse_config_minimal_valid_document():
    cfg = parse_config(json.dumps(MINIMAL_DOC).encode())
    assert cfg.generator.kind == "category"
    assert cfg.generator.m == 50 and cfg.generator.n == 10000
    # documented base-problem defaults
    assert cfg.generator.k == 100
    assert cfg.generator.zero_prob == 0.7
    assert cfg.generator.jitter == (0.9, 1.1)
    assert cfg.generator.base_range == (0.2, 1.0)
    assert cfg.spec == cm.UtilitySpec.power(0.9, 50)
    assert cfg.policies == (("dla", cm.PolicyConfig(epsilon=0.001)),)
    assert cfg.runs == 20 and cfg.base_seed == 1
    assert cfg.resample == "fresh_instance"


def test_parse_config_epsilon_out_of_range():
    doc = _small_doc(policies=[{"id": "dla", "epsilon": 0.6}])
    with pytest.raises(cm.ConfigError, match=r"epsilon must lie in \(0, 0.5\)"):
        parse_config(json.dumps(doc))


def test_parse_config_unknown_keys_are_listed():
    doc = _small_doc()
    doc["generator"]["flavor"] = "spicy"
    doc["extra"] = 1
    with pytest.raises(cm.ConfigError, match="unknown keys: flavor"):
        parse_config(json.dumps(doc))
    doc = _small_doc()
    doc["typo_a"] = 1
    doc["typo_b"] = 2
    with pytest.raises(cm.ConfigError, match="unknown keys: typo_a, typo_b"):
        parse_config(json.dumps(doc))


def test_parse_config_field_errors_name_the_field():
    with pytest.raises(cm.ConfigError, match="missing spec"):
        parse_config(json.dumps({"generator": MINIMAL_DOC["generator"]}))
    doc = _small_doc(runs=0)
    with pytest.raises(cm.ConfigError, match="runs must be >= 1"):
        parse_config(json.dumps(doc))
    doc = _small_doc()
    doc["generator"]["zero_prob"] = 1.4
    with pytest.raises(cm.ConfigError, match="zero_prob"):
        parse_config(json.dumps(doc))
    doc = _small_doc(policies=[{"id": "myopic", "epsilon": 0.1}])
    with pytest.raises(cm.ConfigError, match="not allowed"):
        parse_config(json.dumps(doc))
    with pytest.raises(cm.ConfigError, match="not valid JSON"):
        parse_config(b"{nope")


def test_parse_config_heterogeneous_bidders():
    doc = _small_doc(
        generator={"kind": "category", "m": 3, "n": 12},
        spec={"bidders": [{"power": 0.5}, {"log": True}, {"scaled_power": [2.0, 0.7]}]},
    )
    cfg = parse_config(json.dumps(doc))
    assert cfg.spec.descriptors == (cm.Power(0.5), cm.Log(), cm.ScaledPower(2.0, 0.7))


def test_render_config_round_trips():
    cfg = parse_config(json.dumps(_small_doc()))
    assert parse_config(render_config(cfg)) == cfg
    hetero = parse_config(
        json.dumps(
            _small_doc(
                generator={"kind": "beta", "m": 2, "n": 10, "param_scope": "entry"},
                spec={"bidders": [{"power": 0.5}, {"log": True}]},
                policies=[{"id": "ola", "epsilon": 0.3, "warmup": True, "perturb": 1e-6}],
            )
        )
    )
    assert parse_config(render_config(hetero)) == hetero


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------


def test_emit_csv_empty_and_single():
    assert emit_csv([], ["a", "b"]) == b"a,b\n"
    assert emit_csv([{"a": 1, "b": 2.5}]) == b"a,b\n1,2.5\n"


def test_emit_csv_formatting_and_determinism():
    rows = [{"x": 0.123456789, "y": None, "z": "dla", "w": 1234567}]
    out = emit_csv(rows, ["x", "y", "z", "w"])
    assert out == b"x,y,z,w\n0.123457,,dla,1234567\n"
    assert out == emit_csv(rows, ["x", "y", "z", "w"])
    with pytest.raises(ValueError):
        emit_csv([{"a": 1}], ["a", "b"])
    with pytest.raises(ValueError):
        emit_csv([])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def test_run_writes_summary_and_records(tmp_path, capsys):
    cfg_path = _write_config(tmp_path, _small_doc())
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
    summary = (out / "summary.csv").read_bytes().decode()
    lines = summary.strip().split("\n")
    assert lines[0] == "policy,epsilon,n,m,p,runs,mean_rl,std_rl,mean_revenue,mean_opt"
    assert len(lines) == 3  # dla + myopic
    records = [json.loads(line) for line in (out / "runs.jsonl").read_text().splitlines()]
    assert len(records) == 4
    assert {r["policy"] for r in records} == {"dla", "myopic"}
    assert "decisions" not in records[0]


def test_run_emit_decisions_flag(tmp_path):
    cfg_path = _write_config(tmp_path, _small_doc(runs=1))
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg_path), "--out", str(out), "--emit-decisions"]) == 0
    records = [json.loads(line) for line in (out / "runs.jsonl").read_text().splitlines()]
    assert all("decisions" in r for r in records)
    assert len(records[0]["decisions"]) == 12


def test_flags_override_config(tmp_path):
    cfg_path = _write_config(tmp_path, _small_doc())
    out = tmp_path / "out"
    assert (
        main(
            ["run", "--config", str(cfg_path), "--out", str(out),
             "--algo", "myopic", "--runs", "3", "--seed", "99"]
        )
        == 0
    )
    lines = (out / "summary.csv").read_text().strip().split("\n")
    assert len(lines) == 2  # --algo replaced the policy list
    row = lines[1].split(",")
    assert row[0] == "myopic"
    assert row[5] == "3"  # runs column


def test_run_without_config_or_algo_fails():
    assert main(["run", "--out", "/tmp/nowhere-cm"]) == 2


def test_gen_then_run_matches_single_shot(tmp_path):
    doc = _small_doc(resample="permute_only")
    cfg_path = _write_config(tmp_path, doc)
    gen_dir = tmp_path / "gen"
    assert main(["gen", "--config", str(cfg_path), "--seed", "7", "--out", str(gen_dir)]) == 0
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert main(["run", "--config", str(cfg_path), "--out", str(out_a)]) == 0
    assert (
        main(
            ["run", "--config", str(cfg_path), "--instance", str(gen_dir / "instance.csv"),
             "--out", str(out_b)]
        )
        == 0
    )
    assert (out_a / "summary.csv").read_bytes() == (out_b / "summary.csv").read_bytes()
    assert (out_a / "runs.jsonl").read_bytes() == (out_b / "runs.jsonl").read_bytes()


def test_sweep_axes_and_determinism(tmp_path):
    cfg_path = _write_config(tmp_path, _small_doc(policies=[
        {"id": "ola", "epsilon": 0.2}, {"id": "dla", "epsilon": 0.2},
    ]))
    out_one = tmp_path / "s1"
    out_two = tmp_path / "s2"
    args = ["sweep", "--config", str(cfg_path), "--sweep", "epsilon=0.2,0.3"]
    assert main(args + ["--out", str(out_one)]) == 0
    assert main(args + ["--out", str(out_two)]) == 0
    sweep_one = (out_one / "sweep.csv").read_bytes()
    assert sweep_one == (out_two / "sweep.csv").read_bytes()
    plot_one = (out_one / "plot_epsilon.csv").read_bytes()
    assert plot_one == (out_two / "plot_epsilon.csv").read_bytes()
    lines = sweep_one.decode().strip().split("\n")
    assert len(lines) == 1 + 2 * 2  # header + 2 cells x 2 policies
    plot_lines = plot_one.decode().strip().split("\n")
    assert plot_lines[0] == "x,series,mean,std"
    assert len(plot_lines) == 1 + 4


def test_sweep_n_axis(tmp_path):
    cfg_path = _write_config(tmp_path, _small_doc())
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(cfg_path), "--sweep", "n=12,16", "--out", str(out)]) == 0
    rows = (out / "sweep.csv").read_text().strip().split("\n")[1:]
    assert {r.split(",")[2] for r in rows} == {"12", "16"}


def test_sweep_bad_axis(tmp_path):
    cfg_path = _write_config(tmp_path, _small_doc())
    assert main(["sweep", "--config", str(cfg_path), "--sweep", "zeta=1,2"]) == 2


def test_gen_writes_loadable_instance(tmp_path):
    out = tmp_path / "g"
    assert main(["gen", "--generator", "beta", "--m", "3", "--n", "8", "--seed", "5",
                 "--out", str(out)]) == 0
    inst = cm.load_instance_csv(out / "instance.csv")
    assert inst.bids.shape == (3, 8)
    direct = cm.gen_beta(cm.GeneratorConfig(kind="beta", m=3, n=8, seed=5),
                         np.random.default_rng(5))
    np.testing.assert_array_equal(inst.bids, direct.bids)


def test_oracle_subcommand(tmp_path, capsys):
    inst = cm.Instance.from_bids([[0.9, 0.4, 0.7], [0.5, 0.8, 0.6]])
    path = tmp_path / "inst.csv"
    cm.save_instance_csv(inst, path)
    assert main(["oracle", "--instance", str(path), "--power", "0.5"]) == 0
    value = float(capsys.readouterr().out.strip())
    assert value == pytest.approx(2.1690463122676515, abs=1e-9)


def test_report_subcommand(tmp_path, capsys):
    inst = cm.scale_instance(np.array([[1.0, 0.5], [0.5, 1.0]]))
    path = tmp_path / "inst.csv"
    cm.save_instance_csv(inst, path)
    out = tmp_path / "rep"
    assert main(["report", "--instance", str(path), "--epsilon", "0.1",
                 "--power", "0.5", "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["eta"] == 0.5
    assert doc["F"] == 16.0
    assert doc["ola_satisfied"] is False
    assert "C_ola" in doc and "n_bound_dla" in doc


def test_exit_codes_and_no_partial_outputs(tmp_path):
    # config error -> 2
    bad_cfg = _write_config(tmp_path, {"generator": {"kind": "category"}}, "bad.json")
    out = tmp_path / "o1"
    assert main(["run", "--config", str(bad_cfg), "--out", str(out)]) == 2
    assert not out.exists()
    # runtime failure (epsilon too small for n inside the replication) -> 3
    doc = _small_doc(policies=[{"id": "dla", "epsilon": 0.05}])  # 0.05 * 12 < 1
    cfg_path = _write_config(tmp_path, doc)
    out2 = tmp_path / "o2"
    assert main(["run", "--config", str(cfg_path), "--out", str(out2)]) == 3
    assert not out2.exists() or not list(out2.iterdir())
    # unreadable instance file -> 2, corrupt -> 3
    assert main(["run", "--config", str(_write_config(tmp_path, _small_doc(), "ok.json")),
                 "--instance", str(tmp_path / "missing.csv")]) == 2
    corrupt = tmp_path / "corrupt.bin"
    corrupt.write_bytes(b"JUNKJUNKJUNK")
    assert main(["run", "--config", str(_write_config(tmp_path, _small_doc(), "ok2.json")),
                 "--instance", str(corrupt)]) == 3


def test_env_thread_cap_does_not_change_results(tmp_path, monkeypatch):
    cfg_path = _write_config(tmp_path, _small_doc())
    out_serial = tmp_path / "serial"
    assert main(["run", "--config", str(cfg_path), "--out", str(out_serial)]) == 0
    monkeypatch.setenv("CONCAVE_MATCH_THREADS", "2")
    out_par = tmp_path / "par"
    assert main(["run", "--config", str(cfg_path), "--out", str(out_par)]) == 0
    assert (out_serial / "summary.csv").read_bytes() == (out_par / "summary.csv").read_bytes()
    assert (out_serial / "runs.jsonl").read_bytes() == (out_par / "runs.jsonl").read_bytes()
