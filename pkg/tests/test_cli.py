import json
from pathlib import Path

import pytest

from msbnids.cli import main

DATA = Path(__file__).parent / "data"


@pytest.fixture(autouse=True)
def _fixed_terminal(monkeypatch):
    monkeypatch.setenv("COLUMNS", "80")


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestValidate:
    def test_bundled_model_passes(self, capsys):
        code, out, _err = run(capsys, "validate", "fig1.msbn.json")
        assert code == 0 and out == "OK\n"

    def test_reversed_arc_fails_naming_interface(self, capsys):
        code, out, _err = run(capsys, "validate", "fig1_reversed_jl.msbn.json")
        assert code == 1
        assert "{j, k}" in out

    def test_truncated_file_is_input_error(self, capsys, tmp_path):
        bad = tmp_path / "cut.json"
        bad.write_text('{"variables": [')
        code, _out, err = run(capsys, "validate", str(bad))
        assert code == 2 and "error" in err

    def test_unknown_flag_rejected(self, capsys):
        with pytest.raises(SystemExit) as err:
            main(["validate", "fig1.msbn.json", "--frobnicate"])
        assert err.value.code == 2


class TestInfer:
    def test_engines_agree_on_demo_model(self, capsys):
        outputs = []
        for engine in ("enumerate", "jt", "msbn"):
            code, out, _ = run(
                capsys, "infer", "demo.bn.json", "--query", "attack",
                "--evidence", "syn_flood=t", "--evidence", "port_scan=t",
                "--engine", engine,
            )
            assert code == 0
            outputs.append(out)
        assert outputs[0] == outputs[1] == outputs[2]

    def test_engines_agree_on_sectioned_model(self, capsys):
        outputs = []
        for engine in ("enumerate", "jt", "msbn"):
            code, out, _ = run(
                capsys, "infer", "fig1.msbn.json", "--query", "o",
                "--evidence", "d=t", "--engine", engine,
            )
            assert code == 0
            outputs.append(out)
        assert outputs[0] == outputs[1] == outputs[2]

    def test_query_of_evidence_variable_is_point_mass(self, capsys):
        code, out, _ = run(
            capsys, "infer", "demo.bn.json", "--query", "syn_flood",
            "--evidence", "syn_flood=t",
        )
        assert code == 0
        assert "t 1.000000" in out and "f 0.000000" in out

    def test_no_evidence_gives_prior(self, capsys):
        code, out, _ = run(capsys, "infer", "demo.bn.json", "--query", "attack")
        assert code == 0
        assert "none 0.900000" in out

    def test_inconsistent_evidence_exits_1(self, capsys, tmp_path):
        model = {
            "variables": [
                {"name": "a", "states": ["f", "t"]},
                {"name": "b", "states": ["f", "t"]},
            ],
            "edges": [["a", "b"]],
            "cpts": [
                {"child": "a", "parents": [], "rows": [[1.0, 0.0]]},
                {"child": "b", "parents": ["a"],
                 "rows": [[1.0, 0.0], [0.0, 1.0]]},
            ],
        }
        path = tmp_path / "m.json"
        path.write_text(json.dumps(model))
        code, _out, err = run(
            capsys, "infer", str(path), "--query", "a", "--evidence", "b=t"
        )
        assert code == 1 and "inconsistent" in err

    def test_unknown_variable_is_input_error(self, capsys):
        code, _out, err = run(capsys, "infer", "demo.bn.json", "--query", "zz")
        assert code == 2 and "error" in err


class TestCommunicateDemo:
    def test_shows_stale_then_consistent(self, capsys):
        code, out, _ = run(
            capsys, "communicate-demo", "fig1.msbn.json", "--query", "j",
            "--evidence", "g2:o=t",
        )
        assert code == 0
        assert "before communication" in out and "after communication" in out
        # j is shared between g0 and g2: both listed
        assert out.count("g0:") == 2 and out.count("g2:") == 2

    def test_plain_network_rejected(self, capsys):
        code, _out, err = run(
            capsys, "communicate-demo", "demo.bn.json", "--query", "attack"
        )
        assert code == 2 and "sectioned" in err


class TestTrust:
    @pytest.mark.parametrize(
        "scenario,expected_isolated",
        [
            ("leader_silent.json", "[0]"),
            ("leader_equivocate.json", "[0]"),
            ("leader_selective.json", "[]"),
            ("leader_uniform_lie.json", "[]"),
            ("all_loyal.json", "[]"),
        ],
    )
    def test_scenarios_reach_expected_isolation(self, capsys, tmp_path,
                                                scenario, expected_isolated):
        trace = tmp_path / "trace.csv"
        code, out, _ = run(capsys, "trust", scenario, "--trace", str(trace))
        assert code == 0
        assert f"isolated: {expected_isolated}" in out
        assert trace.exists()

    def test_loyal_minority_exits_3(self, capsys):
        code, out, _ = run(capsys, "trust", "loyal_minority.json")
        assert code == 3
        assert "undecidable" in out

    def test_trace_message_counts_within_bound(self, capsys, tmp_path):
        trace = tmp_path / "trace.csv"
        code, _out, _ = run(capsys, "trust", "leader_equivocate.json",
                            "--trace", str(trace))
        assert code == 0
        lines = trace.read_text().splitlines()
        assert lines[0] == "round,from,to,instance,chain,value"
        per_instance: dict[str, int] = {}
        for line in lines[1:]:
            instance = line.split(",")[3]
            per_instance[instance] = per_instance.get(instance, 0) + 1
        n = 4
        assert per_instance and all(c <= n * n for c in per_instance.values())


class TestSimulate:
    def test_auto_reject_keeps_model_constant(self, capsys, tmp_path):
        alerts = tmp_path / "alerts.jsonl"
        code, out, _ = run(
            capsys, "simulate", "sim_config.json",
            "--alerts", str(alerts), "--policy", "auto-reject",
        )
        assert code == 0
        assert "isolated hosts: []" in out
        digest = next(l for l in out.splitlines() if l.startswith("model digest"))
        code2, out2, _ = run(
            capsys, "simulate", "sim_config.json",
            "--alerts", str(tmp_path / "alerts2.jsonl"),
            "--policy", "auto-reject",
        )
        assert digest in out2
        for line in alerts.read_text().splitlines():
            json.loads(line)

    def test_interactive_falls_back_without_tty(self, capsys, tmp_path):
        code, _out, err = run(
            capsys, "simulate", "sim_config.json",
            "--alerts", str(tmp_path / "a.jsonl"), "--policy", "interactive",
        )
        assert code == 0
        assert "auto-reject" in err


class TestBenchmark:
    def test_fixture_seed1_matches_golden(self, capsys, tmp_path):
        out_json = tmp_path / "report.json"
        out_csv = tmp_path / "report.csv"
        code, out, _ = run(
            capsys, "benchmark", "benchmark_config.json",
            "--out-json", str(out_json), "--out-csv", str(out_csv),
        )
        assert code == 0
        assert out_json.read_bytes() == (DATA / "golden_benchmark.json").read_bytes()
        assert out_csv.read_bytes() == (DATA / "golden_benchmark.csv").read_bytes()
        assert out == (DATA / "golden_benchmark_stdout.txt").read_text()

    def test_changed_seed_changes_digest_not_schema(self, capsys, tmp_path):
        paths = {}
        for seed in (1, 2):
            out_json = tmp_path / f"r{seed}.json"
            code, _out, _ = run(
                capsys, "benchmark", "benchmark_config.json", "--seed",
                str(seed), "--out-json", str(out_json),
                "--out-csv", str(tmp_path / f"r{seed}.csv"),
            )
            assert code == 0
            paths[seed] = json.loads(out_json.read_text())
        assert paths[1]["config_digest"] != paths[2]["config_digest"]
        assert set(paths[1]) == set(paths[2])

    def test_missing_dataset_exit_2_with_hint(self, capsys, tmp_path):
        code, _out, err = run(
            capsys, "benchmark", "--dataset", str(tmp_path / "nope.csv"),
            "--out-json", str(tmp_path / "r.json"),
            "--out-csv", str(tmp_path / "r.csv"),
        )
        assert code == 2
        assert "kddcup" in err


class TestHelpSnapshots:
    @pytest.mark.parametrize(
        "name,argv",
        [
            ("main", ["--help"]),
            ("validate", ["validate", "--help"]),
            ("infer", ["infer", "--help"]),
            ("communicate-demo", ["communicate-demo", "--help"]),
            ("trust", ["trust", "--help"]),
            ("simulate", ["simulate", "--help"]),
            ("benchmark", ["benchmark", "--help"]),
        ],
    )
    def test_help_matches_snapshot(self, capsys, name, argv):
        with pytest.raises(SystemExit) as err:
            main(argv)
        assert err.value.code == 0
        out = capsys.readouterr().out
        assert out == (DATA / "help" / f"{name}.txt").read_text()
