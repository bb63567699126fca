import json
import math
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from mflab.cli import main as cli_main
from mflab.harness import (
    ConfigError,
    ExperimentPlan,
    emit_config,
    parse_config,
    realize_instance,
    run_deff_scaling,
    run_phase_grid,
    run_sample_complexity,
    run_train_single,
)
from mflab.io import read_trace

MINIMAL_DEFF = """
[experiment]
kind = "deff_scaling"
output_dir = "{out}"
seeds = [0, 1, 2, 3, 4]

[grid]
d_values = [256, 512, 1024, 2048]

[[covariances]]
label = "iso"
kind = "isotropic"
"""

TRAIN_TEMPLATE = """
[experiment]
kind = "train_single"
output_dir = "{out}"
seeds = [3]

[task]
d = 6
k = 2
link = "parity"
input_law = "rademacher_cube"
n_train = 64
n_test = 64

[dynamics]
space = "{space}"
m = 8
budget = {budget}
eval_every = 5
{extra}

[[covariances]]
label = "iso"
kind = "isotropic"
"""


def sample_complexity_config(out, extra=""):
    return f"""
[experiment]
kind = "sample_complexity"
output_dir = "{out}"
seeds = [0, 1]

[grid]
n_values = [32, 64]

[task]
d = 6
k = 2
link = "parity"
input_law = "rademacher_cube"
n_test = 128

[dynamics]
m = 8
budget = 10
eval_every = 5
{extra}

[[covariances]]
label = "iso"
kind = "isotropic"
"""


class TestParseConfig:
    def test_minimal_with_defaults(self, tmp_path):
        plan = parse_config(MINIMAL_DEFF.format(out=tmp_path))
        assert plan.kind == "deff_scaling"
        assert plan.grid["k"] == 1
        assert plan.seeds == (0, 1, 2, 3, 4)

    def test_misspelled_key_named(self, tmp_path):
        bad = MINIMAL_DEFF.format(out=tmp_path).replace("d_values", "d_vales")
        with pytest.raises(ConfigError, match="d_vales"):
            parse_config(bad)

    def test_unknown_table_rejected(self):
        with pytest.raises(ConfigError, match="mystery"):
            parse_config('[experiment]\nkind = "deff_scaling"\n[mystery]\nx = 1\n')

    def test_round_trip(self, tmp_path):
        plan = parse_config(sample_complexity_config(tmp_path))
        again = parse_config(emit_config(plan))
        assert again == plan

    def test_zero_samples_rejected(self, tmp_path):
        cfg = sample_complexity_config(tmp_path).replace("[32, 64]", "[0, 64]")
        with pytest.raises(ConfigError, match="n_values"):
            parse_config(cfg)

    def test_duplicate_seeds_rejected(self, tmp_path):
        cfg = MINIMAL_DEFF.format(out=tmp_path).replace("[0, 1, 2, 3, 4]",
                                                        "[0, 0]")
        with pytest.raises(ConfigError, match="seeds"):
            parse_config(cfg)


class TestDeffScaling:
    def test_isotropic_slope_one(self, tmp_path):
        plan = parse_config(MINIMAL_DEFF.format(out=tmp_path))
        csv = run_deff_scaling(plan)
        lines = csv.strip().split("\n")
        assert lines[0] == "label,d,deff,slope_measured,slope_predicted"
        slope = float(lines[1].split(",")[3])
        assert abs(slope - 1.0) <= 0.02

    def test_power_law_flat_regime(self, tmp_path):
        cfg = MINIMAL_DEFF.format(out=tmp_path) + \
            '\n[[covariances]]\nlabel = "pl"\nkind = "power_law"\n' \
            "alpha = 2.0\ngamma = 2.0\n"
        csv = run_deff_scaling(parse_config(cfg))
        pl_rows = [l for l in csv.strip().split("\n")[1:]
                   if l.startswith("pl,")]
        slope = float(pl_rows[0].split(",")[3])
        predicted = float(pl_rows[0].split(",")[4])
        assert predicted == 0.0
        assert abs(slope) <= 0.15

    def test_byte_determinism(self, tmp_path):
        plan = parse_config(MINIMAL_DEFF.format(out=tmp_path))
        assert run_deff_scaling(plan) == run_deff_scaling(plan)


class TestPhaseGrid:
    def _plan(self, tmp_path, alphas, gammas):
        return parse_config(f"""
[experiment]
kind = "phase_grid"
output_dir = "{tmp_path}"
seeds = [0, 1, 2]

[grid]
d_values = [256, 512, 1024, 2048]
alphas = {list(alphas)}
gammas = {list(gammas)}
""")

    def test_predicted_cells(self, tmp_path):
        csv = run_phase_grid(self._plan(tmp_path, [0.5, 2.0], [0.3, 0.2]))
        rows = {tuple(l.split(",")[:2]): l.split(",")
                for l in csv.strip().split("\n")[1:]}
        assert float(rows[("0.5", "0.3")][3]) == 1.0
        assert float(rows[("2.0", "0.2")][3]) == pytest.approx(0.8)
        for parts in rows.values():
            assert abs(float(parts[2]) - float(parts[3])) \
                == pytest.approx(float(parts[4]))

    def test_monotone_in_gamma_at_large_alpha(self, tmp_path):
        gammas = [0.2, 0.5, 0.8, 1.2, 1.5]
        csv = run_phase_grid(self._plan(tmp_path, [1.5], gammas))
        slopes = [float(l.split(",")[2]) for l in csv.strip().split("\n")[1:]]
        assert all(a >= b - 1e-9 for a, b in zip(slopes, slopes[1:]))

    def test_byte_determinism(self, tmp_path):
        plan = self._plan(tmp_path, [0.5], [0.3])
        assert run_phase_grid(plan) == run_phase_grid(plan)


class TestSampleComplexity:
    def test_rows_and_determinism(self, tmp_path):
        plan = parse_config(sample_complexity_config(tmp_path))
        csv = run_sample_complexity(plan)
        lines = csv.strip().split("\n")
        assert lines[0] == "label,n,seed,excess_risk,test01,status"
        assert len(lines) == 1 + 2 * 2   # 2 n-values x 2 seeds
        assert all(l.endswith(",ok") for l in lines[1:])
        assert csv == run_sample_complexity(plan)

    def test_aborted_rows_isolated(self, tmp_path):
        plan = parse_config(sample_complexity_config(tmp_path,
                                                     extra="eta = 1e300"))
        csv = run_sample_complexity(plan)
        lines = csv.strip().split("\n")[1:]
        assert len(lines) == 4
        assert all(l.endswith(",aborted") for l in lines)
        # well-formed rows despite every cell failing
        assert all(len(l.split(",")) == 6 for l in lines)


class TestTrainSingle:
    def test_zero_budget_trace(self, tmp_path):
        plan = parse_config(TRAIN_TEMPLATE.format(out=tmp_path,
                                                  space="euclidean",
                                                  budget=0, extra=""))
        _, trace = run_train_single(plan)
        assert len(trace) == 1
        assert (tmp_path / "trace.csv").exists()
        assert (tmp_path / "final.mflb").exists()
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["planned"]["d_eff"] > 0

    def test_space_toggle_schema_identical(self, tmp_path):
        for space in ("euclidean", "sphere"):
            out = tmp_path / space
            extra = "eta = 0.05\nbeta = 50.0" if space == "sphere" else ""
            plan = parse_config(TRAIN_TEMPLATE.format(out=out, space=space,
                                                      budget=10, extra=extra))
            run_train_single(plan)
            header = (out / "trace.csv").read_text().split("\n")[0]
            assert header == "step,train_risk,reg,total,test_risk,test01," \
                "alignment,seconds"
            assert len(read_trace(out / "trace.csv")) == 3


class TestCli:
    def test_deff_command(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text(MINIMAL_DEFF.format(out=tmp_path / "out"))
        result = CliRunner().invoke(cli_main, ["deff", "--config", str(cfg)])
        assert result.exit_code == 0, result.output
        assert (tmp_path / "out" / "deff_scaling.csv").exists()
        meta = json.loads((tmp_path / "out" / "metadata.json").read_text())
        assert meta["seeds"] == [0, 1, 2, 3, 4]
        assert "kind" in meta["config"]

    def test_sweep_kind_mismatch(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text(MINIMAL_DEFF.format(out=tmp_path / "out"))
        result = CliRunner().invoke(cli_main, ["sweep", "--config", str(cfg),
                                               "--kind", "phase_grid"])
        assert result.exit_code != 0

    def test_plan_command(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text(TRAIN_TEMPLATE.format(out=tmp_path, space="euclidean",
                                             budget=0, extra=""))
        result = CliRunner().invoke(cli_main, ["plan", "--config", str(cfg)])
        assert result.exit_code == 0, result.output
        payload = json.loads(result.output)
        assert payload["beta"] > 0 and payload["iota"] >= 1

    def test_train_and_diagnose(self, tmp_path):
        out = tmp_path / "out"
        cfg = tmp_path / "c.toml"
        cfg.write_text(TRAIN_TEMPLATE.format(out=out, space="euclidean",
                                             budget=5, extra=""))
        runner = CliRunner()
        result = runner.invoke(cli_main, ["train", "--config", str(cfg)])
        assert result.exit_code == 0, result.output
        # save the training data for diagnosis
        from mflab.harness import _build_task, _cov_spec
        from mflab.tasks import generate_dataset, sample_directions, save_dataset
        from mflab.covariance import build_covariance
        plan = parse_config(str(cfg))
        spec = _cov_spec(dict(plan.covariances[0]), 6)
        task = _build_task(plan.task, spec)
        model = build_covariance(spec)
        U = sample_directions(6, 2, 3)
        ds = generate_dataset(task, model, U, 64, 3, 2.0)
        data_csv = tmp_path / "data.csv"
        save_dataset(ds, data_csv)
        result = runner.invoke(cli_main, [
            "diagnose", "--checkpoint", str(out / "final.mflb"),
            "--data", str(data_csv)])
        assert result.exit_code == 0, result.output
        payload = json.loads(result.output)
        assert payload["k_estimate"] <= payload["k_upper"]


class TestRealizeInstance:
    def test_spiked_plants_spike_against_directions(self):
        cov = {"label": "sp", "kind": "spiked", "gamma1": 0.0, "gamma2": 1.0}
        spec, model, U = realize_instance(cov, 32, 2, seed=0)
        from mflab.covariance import effective_dimension
        assert effective_dimension(model, U) < 4.0

    def test_power_law_requires_single_index(self):
        cov = {"label": "pl", "kind": "power_law", "alpha": 0.5, "gamma": 0.5}
        with pytest.raises(ConfigError):
            realize_instance(cov, 16, 2, seed=0)
