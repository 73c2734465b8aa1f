import csv
import json
from pathlib import Path

import pytest
import yaml

from plasticity_lab import runner
from plasticity_lab.activations import ActivationSpec, Kind
from plasticity_lab.cli import main, parse_spec
from plasticity_lab.config import (
    ExperimentConfig,
    SchemaError,
    dump_config,
    load_config,
)
from plasticity_lab.errors import ConfigError
from plasticity_lab.metrics import pearson_r
from plasticity_lab.presets import PROPERTY_CANONICAL
from plasticity_lab.runner import (
    build_report,
    expand_cells,
    read_results,
    run_experiment,
)

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"

TINY_SHOCK = {
    "experiment": "shock",
    "name": "tiny-shock",
    "seeds": [0, 1],
    "output_dir": "out",
    "activations": [{"kind": "relu"}, {"kind": "leaky_relu", "alpha": 0.3}, {"kind": "sigmoid"}],
    "stream": {"kind": "permuted", "samples": 60, "batch_size": 20, "epochs": 4, "n_tasks": 2},
    "data": {"source": "blobs", "n_classes": 3, "per_class": 40, "dim": 6},
    "train": {"optimizer": "adam", "lr": 0.01, "hidden": [8]},
    "schedule": {"gammas": [3.0], "cycle": 3},
    "epochs": 8,
}


def write_config(tmp_path, body, name="cfg.yaml"):
    body = dict(body)
    body["output_dir"] = str(tmp_path / body["output_dir"])
    path = tmp_path / name
    path.write_text(yaml.safe_dump(body))
    return path


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


# --------------------------------------------------------------------------- config


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path, capsys):
    code, out, _ = run_cli(capsys, "validate", str(path))
    assert code == 0 and json.loads(out)["valid"]


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.yaml")), ids=lambda p: p.stem)
def test_config_round_trip(path):
    config = load_config(path)
    again = ExperimentConfig.from_dict(yaml.safe_load(dump_config(config)))
    assert again.to_dict() == config.to_dict()
    assert again.cell_hash(None) == config.cell_hash(None)


@pytest.mark.parametrize("patch, where", [
    ({"experiment": "dance"}, "experiment"),
    ({"seeds": []}, "seeds"),
    ({"seeds": [0, "one"]}, "seeds[1]"),
    ({"bogus": 1}, "bogus"),
    ({"activations": [{"kind": "relu"}, {"kind": "nope"}]}, "activations[1]"),
    ({"activations": {"sweep": "nope"}}, "activations.sweep"),
    ({"activations": {"preset": "nope"}}, "activations.preset"),
    ({"stream": {"kind": "permuted", "samples": 0, "batch_size": 1, "epochs": 1, "n_tasks": 1}}, "stream"),
    ({"stream": {"preset": "nope"}}, "stream.preset"),
    ({"train": {"lr": 0.1, "momentum": 0.9}}, "train.momentum"),
    ({"schedule": {"gammas": [-1.0], "cycle": 10}}, "schedule"),
    ({"epochs": "many"}, "epochs"),
])
def test_schema_errors_carry_paths(patch, where):
    body = {**TINY_SHOCK, **patch}
    with pytest.raises(SchemaError) as err:
        ExperimentConfig.from_dict(body)
    assert err.value.path == where


def test_missing_required_fields():
    with pytest.raises(SchemaError) as err:
        ExperimentConfig.from_dict({"experiment": "shock", "name": "x", "seeds": [0]})
    assert err.value.path == "output_dir"
    body = {k: v for k, v in TINY_SHOCK.items() if k != "stream"}
    with pytest.raises(SchemaError, match="stream"):
        ExperimentConfig.from_dict(body)


def test_cell_hash_ignores_seeds_and_name():
    a = ExperimentConfig.from_dict(TINY_SHOCK)
    b = ExperimentConfig.from_dict({**TINY_SHOCK, "seeds": [9], "name": "other"})
    spec = ActivationSpec(Kind.RELU)
    assert a.cell_hash(spec) == b.cell_hash(spec)
    c = ExperimentConfig.from_dict({**TINY_SHOCK, "epochs": 9})
    assert a.cell_hash(spec) != c.cell_hash(spec)
    assert a.cell_hash(spec) != a.cell_hash(ActivationSpec(Kind.SIGMOID))


def test_top_level_scale_feeds_stream():
    body = {**TINY_SHOCK, "scale": 2}
    assert ExperimentConfig.from_dict(body).stream.scale == 2


def test_expand_cells():
    config = ExperimentConfig.from_dict(TINY_SHOCK)
    cells = expand_cells(config)
    assert [(c.label, c.seed) for c in cells][:2] == [(cells[0].label, 0), (cells[0].label, 1)]
    assert len(cells) == 6
    grid = load_config(CONFIG_DIR / "property_grid.yaml")
    assert len(expand_cells(grid)) == len(PROPERTY_CANONICAL)


# --------------------------------------------------------------------------- activation parsing


def test_parse_spec_forms(tmp_path):
    assert parse_spec("Swish") == PROPERTY_CANONICAL["Swish"]
    assert parse_spec("tanh").kind is Kind.TANH
    spec = parse_spec("kind=smooth_leaky,alpha=0.2,c=4")
    assert (spec.kind, spec.alpha, spec.c) == (Kind.SMOOTH_LEAKY, 0.2, 4.0)
    f = tmp_path / "act.yaml"
    f.write_text("kind: rrelu\nbounds: [0.1, 0.3]\n")
    assert parse_spec(str(f)).bounds == (0.1, 0.3)
    with pytest.raises(ConfigError):
        parse_spec("mystery")
    with pytest.raises(ConfigError):
        parse_spec("kind=relu,alpha")


# --------------------------------------------------------------------------- runs


@pytest.fixture(scope="module")
def shock_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("shock")
    config = ExperimentConfig.from_dict({**TINY_SHOCK, "output_dir": str(tmp / "out")})
    return run_experiment(config)


def test_run_writes_artifacts(shock_run):
    names = {p.name for p in shock_run.iterdir()}
    assert {"results.csv", "manifest.json", "timestamps.json", "traces"} <= names
    manifest = json.loads((shock_run / "manifest.json").read_text())
    assert manifest["n_cells"] == 6 and manifest["n_failed"] == 0
    assert all((shock_run / c["trace"]).exists() for c in manifest["cells"])
    rows = read_results(shock_run)
    assert {r["metric"] for r in rows} >= {"ausc", "peak_sf", "dbw", "sf_non_recovery_rate"}
    with (shock_run / "results.csv").open() as fh:
        assert next(csv.reader(fh)) == list(runner.RESULT_COLUMNS)


def test_cli_run_overwrite_guard(tmp_path, capsys):
    cfg = write_config(tmp_path, {**TINY_SHOCK, "seeds": [0], "activations": [{"kind": "relu"}]})
    code, out, _ = run_cli(capsys, "run", str(cfg))
    assert code == 0 and json.loads(out)["cells"] == 1
    code, out, err = run_cli(capsys, "run", str(cfg))
    assert code == 3 and out == ""
    assert json.loads(err)["error"] == "FileExistsError"
    code, _, _ = run_cli(capsys, "run", str(cfg), "--overwrite")
    assert code == 0


def test_parallel_run_is_byte_identical(tmp_path, capsys):
    cfg = write_config(tmp_path, TINY_SHOCK)
    assert run_cli(capsys, "run", str(cfg), "--output", str(tmp_path / "serial"))[0] == 0
    assert run_cli(capsys, "run", str(cfg), "--output", str(tmp_path / "pool"), "--jobs", "2")[0] == 0
    a = (tmp_path / "serial" / "results.csv").read_bytes()
    b = (tmp_path / "pool" / "results.csv").read_bytes()
    assert a == b
    ma = json.loads((tmp_path / "serial" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "pool" / "manifest.json").read_text())
    assert ma == mb


def test_empty_grid(tmp_path):
    config = ExperimentConfig.from_dict({**TINY_SHOCK, "activations": [], "output_dir": str(tmp_path / "e")})
    with pytest.warns(UserWarning, match="empty sweep grid"):
        out = run_experiment(config)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["n_cells"] == 0 and manifest["warning"] == "empty sweep grid"
    assert read_results(out) == []


def test_cell_failures_are_isolated(tmp_path, monkeypatch):
    real = runner.shock_cell

    def flaky(spec, *args, **kwargs):
        if spec.kind is Kind.SIGMOID:
            raise FloatingPointError("diverged")
        return real(spec, *args, **kwargs)

    monkeypatch.setattr(runner, "shock_cell", flaky)
    config = ExperimentConfig.from_dict({**TINY_SHOCK, "seeds": [0], "output_dir": str(tmp_path / "f")})
    out = run_experiment(config)
    manifest = json.loads((out / "manifest.json").read_text())
    status = {c["activation"]: c["status"] for c in manifest["cells"]}
    assert manifest["n_failed"] == 1
    assert [v for k, v in status.items() if k.startswith("Sigmoid") or k == "sigmoid"] == ["failed"]
    failed = next(c for c in manifest["cells"] if c["status"] == "failed")
    assert "diverged" in failed["error"]
    assert {r["kind"] for r in read_results(out)} == {"relu", "leaky_relu"}


# --------------------------------------------------------------------------- reports


def test_summary_report(shock_run, capsys):
    code, out, _ = run_cli(capsys, "report", str(shock_run))
    assert code == 0 and json.loads(out)["rows"] > 0
    with (shock_run / "report_summary.csv").open() as fh:
        records = list(csv.DictReader(fh))
    ausc = [r for r in records if r["metric"] == "ausc"]
    assert len(ausc) == 3 and all(r["n"] == "2" for r in ausc)
    for r in ausc:
        if r["flag"] == "":
            assert float(r["ci_lo"]) <= float(r["mean"]) <= float(r["ci_hi"])


def test_single_seed_flag(tmp_path):
    config = ExperimentConfig.from_dict({**TINY_SHOCK, "seeds": [0], "output_dir": str(tmp_path / "s")})
    out = run_experiment(config)
    build_report(out, "summary")
    with (out / "report_summary.csv").open() as fh:
        flags = {r["flag"] for r in csv.DictReader(fh)}
    # NaN-only metrics (e.g. recovery time of a unit that never saturates) get their own flag
    assert "single_seed" in flags and flags <= {"single_seed", "no_finite_values"}


def test_floor_report_groups(shock_run):
    info = build_report(shock_run, "floor")
    with (shock_run / "report_floor.csv").open() as fh:
        records = list(csv.DictReader(fh))
    groups = {(r["group"], r["metric"]): r for r in records}
    assert ("zero_floor", "ausc") in groups and ("non_zero_floor", "ausc") in groups
    assert groups[("zero_floor", "ausc")]["n_activations"] == "2"
    assert "taoa" in info["missing"]


def test_correlation_report_matches_pearson(shock_run):
    info = build_report(shock_run, "correlation", x="dbw", y="ausc")
    rows = read_results(shock_run)
    by_act = {}
    for r in rows:
        by_act.setdefault(r["activation"], {}).setdefault(r["metric"], []).append(r["value"])
    acts = sorted(by_act)
    xs = [sum(by_act[a]["dbw"]) / len(by_act[a]["dbw"]) for a in acts]
    ys = [sum(by_act[a]["ausc"]) / len(by_act[a]["ausc"]) for a in acts]
    r, p = pearson_r(xs, ys)
    assert info["r"] == pytest.approx(r, abs=1e-12) and info["p"] == pytest.approx(p, abs=1e-12)
    assert json.loads((shock_run / "report_correlation.json").read_text())["n"] == 3


def test_report_missing_metrics(shock_run, capsys):
    code, out, _ = run_cli(capsys, "report", str(shock_run), "--kind", "correlation", "--x", "nope")
    assert code == 0 and json.loads(out)["missing"] == ["nope"]
    code, _, err = run_cli(capsys, "report", str(shock_run.parent / "absent"))
    assert code == 2 and "no results file" in json.loads(err)["message"]


# --------------------------------------------------------------------------- props and errors


def test_props(capsys):
    code, out, _ = run_cli(capsys, "props", "Sigmoid")
    body = json.loads(out)
    assert code == 0
    assert body["dbw"] == pytest.approx(0.93093, abs=1e-4)
    assert body["properties"]["sat_both"] is True
    code, out, _ = run_cli(capsys, "props", "kind=leaky_relu,alpha=0.7", "--pretty")
    assert json.loads(out)["s_bar"] == 0.7 and "\n" in out


def test_cli_errors_are_json_on_stderr(tmp_path, capsys):
    code, out, err = run_cli(capsys, "props", "mystery")
    assert code == 2 and out == "" and json.loads(err)["error"] == "ConfigError"
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({**TINY_SHOCK, "seeds": [0, "x"]}))
    code, _, err = run_cli(capsys, "validate", str(bad))
    body = json.loads(err)
    assert code == 2 and body["path"] == "seeds[1]"
    broken = tmp_path / "broken.yaml"
    broken.write_text("experiment: [unclosed\n")
    code, _, err = run_cli(capsys, "validate", str(broken))
    assert code == 2 and json.loads(err)["path"] == "<root>"
    code, _, err = run_cli(capsys, "validate", str(tmp_path / "nope.yaml"))
    assert code == 2
    code, _, err = run_cli(capsys, "run", str(bad), "--jobs", "0")
    assert code == 2


# --------------------------------------------------------------------------- property grid and rl runs


def test_property_grid_run(tmp_path):
    config = load_config(CONFIG_DIR / "property_grid.yaml")
    out = run_experiment(config, output_dir=tmp_path / "pg")
    rows = read_results(out)
    sig = {r["metric"]: r["value"] for r in rows if r["activation"] == "Sigmoid"}
    assert sig["sat_both"] == 1.0 and sig["dbw"] == pytest.approx(0.93093, abs=1e-4)


def test_rl_metrics_run(tmp_path):
    log = tmp_path / "returns.csv"
    lines = ["run,environment,cycle,phase,episode_index,return"]
    for env, gap1, gap3, final in (("a", 10.0, 4.0, 100.0), ("b", 0.0, 2.0, 300.0)):
        for cycle, gap in ((1, gap1), (3, gap3)):
            for i in range(10):
                train = final if cycle == 3 else 0.0
                lines.append(f"s,{env},{cycle},train,{i},{train + gap}")
            lines.append(f"s,{env},{cycle},test,0,{train}")
    log.write_text("\n".join(lines) + "\n")
    config = ExperimentConfig.from_dict({"experiment": "rl_metrics", "name": "rl", "seeds": [0],
                                         "output_dir": str(tmp_path / "rl"), "return_log": str(log)})
    metrics = {r["metric"]: r["value"] for r in read_results(run_experiment(config))}
    assert metrics["gap_delta[a]"] == pytest.approx(-6.0)
    assert metrics["gap_delta[b]"] == pytest.approx(2.0)
    assert metrics["gap_delta_median"] == pytest.approx(-2.0)
    # plasticity score: median of the last-cycle train tails (104 and 302)
    assert metrics["plasticity_score[s]"] == pytest.approx(203.0)
