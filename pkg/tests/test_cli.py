import json

import pytest

from crystalflow import cli, records, symtab

TINY = {
    "seed": 1,
    "env": {
        "elements": ["Li", "O", "F"],
        "space_groups": [1, 2, 225],
        "max_atoms_per_element": 4,
        "max_elements": 2,
    },
    "policy": {"hidden": [16]},
    "train": {"iterations": 4, "trajectories_per_iter": 3, "checkpoint_every": 2},
}


def _cfg(tmp_path, doc=TINY, name="cfg.json"):
    doc = dict(doc, output_dir=str(tmp_path / "run"))
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_train_sample_eval_pipeline(tmp_path):
    cfg = _cfg(tmp_path)
    run = tmp_path / "run"
    assert cli.main(["train", "--config", cfg]) == 0
    for name in ("train_log.csv", "train_timing.csv", "checkpoint.bin", "checkpoint_000002.bin", "config.resolved.json"):
        assert (run / name).exists(), name
    assert cli.main(["sample", "--config", cfg, "--n", "25"]) == 0
    recs, vals = records.read_csv(run / "samples.csv", extra=(records.ENERGY_COLUMN,))
    assert len(recs) == 25
    for r in recs:
        assert r["space_group"] in (1, 2, 225) and set(r["composition"]) <= {"Li", "O", "F"}
        assert r["lattice"] is not None
    assert cli.main(["eval", "--config", cfg, "--top", "5"]) == 0
    report = json.loads((run / "metrics.json").read_text())
    assert report["energy"]["n"] == 25 and len(report["top"]) == 5
    assert report["diversity"]["coverage"]["space_groups"]["configured"] == 3


def test_seed_override_changes_samples(tmp_path):
    cfg = _cfg(tmp_path)
    out = []
    for seed in ("3", "3", "4"):
        path = tmp_path / f"s{len(out)}.csv"
        assert cli.main(["sample", "--config", cfg, "--untrained", "--seed", seed, "--n", "20", "--samples", str(path)]) == 0
        out.append(path.read_bytes())
    assert out[0] == out[1] != out[2]


def test_config_errors_exit_2(tmp_path, capsys):
    bad = _cfg(tmp_path, dict(TINY, train={"iterations": -1}), "bad.json")
    assert cli.main(["train", "--config", bad]) == 2
    assert "$.train.iterations" in capsys.readouterr().err
    assert cli.main(["train", "--config", str(tmp_path / "nope.json")]) == 2


def test_missing_checkpoint_exits_2(tmp_path):
    cfg = _cfg(tmp_path)
    assert cli.main(["sample", "--config", cfg, "--checkpoint", str(tmp_path / "none.bin"), "--n", "1"]) == 2


def test_checkpoint_for_other_config_exits_2(tmp_path):
    cfg = _cfg(tmp_path)
    assert cli.main(["train", "--config", cfg]) == 0
    other = _cfg(tmp_path, dict(TINY, env=dict(TINY["env"], elements=["Li", "O"])), "other.json")
    ckpt = str(tmp_path / "run" / "checkpoint.bin")
    assert cli.main(["sample", "--config", other, "--checkpoint", ckpt, "--n", "1"]) == 2


def test_malformed_samples_exit_2(tmp_path, capsys):
    cfg = _cfg(tmp_path)
    bad = tmp_path / "bad.csv"
    bad.write_text(",".join((*records.RECORD_COLUMNS, records.ENERGY_COLUMN)) + "\n1,cubic,x,Li:1,,,,,,,0\n")
    assert cli.main(["eval", "--config", cfg, "--samples", str(bad)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_nonfinite_energy_exits_3(tmp_path, monkeypatch):
    from crystalflow import reward

    monkeypatch.setattr(reward.SurrogateEnergy, "__call__", lambda self, recs: [float("nan")] * len(recs))
    assert cli.main(["train", "--config", _cfg(tmp_path)]) == 3


def test_oracle_check_reports_and_refuses(tmp_path, capsys):
    doc = {
        "seed": 0,
        "env": {"elements": ["H", "N", "Fe"], "max_atoms_per_element": 3, "sg_stage": False, "lp_stage": False},
        "policy": {"hidden": [16]},
        "train": {"iterations": 5, "trajectories_per_iter": 4},
        "oracle": {"samples": 200},
    }
    assert cli.main(["oracle-check", "--config", _cfg(tmp_path, doc)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["terminal_count"] == 37 and report["samples"] == 200
    assert 0.0 <= report["l1"] <= 2.0
    doc["oracle"]["max_terminals"] = 10
    assert cli.main(["oracle-check", "--config", _cfg(tmp_path, doc, "small.json")]) == 4
    assert cli.main(["oracle-check", "--config", _cfg(tmp_path)]) == 2  # lattice stage on


def test_tables_dump(capsys):
    assert cli.main(["tables", "default-spacegroups"]) == 0
    assert json.loads(capsys.readouterr().out) == list(symtab.tables().default_space_groups)
    assert cli.main(["tables", "spacegroups"]) == 0
    groups = json.loads(capsys.readouterr().out)
    assert len(groups) == 230


def test_argument_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        cli.main(["tables", "nonsense"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 2
