import json
import math
import re

import pytest

from seqident import cli
from seqident.rules import Thresholds

SMALL = """
name = "small"

[problem]
num_sources = 4
lower_bound = 1
upper_bound = 3
budget = 2
alpha = 0.05
beta = 0.05

[sources]
layout = "homogeneous"
mean = 1.0

[experiment]
rules = ["ordering", "probabilistic"]
thresholds = "analytic"
trials = 60
seed = 4
chunk_size = 20
"""


@pytest.fixture
def small_spec(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return path


def edit(text, old, new):
    assert old in text
    return text.replace(old, new)


def test_bundled_spec_loads():
    spec = cli.load_spec("fig1_homogeneous")
    cfg = spec.config
    assert (cfg.num_sources, cfg.budget, cfg.lower_bound, cfg.upper_bound) == (10, 5.0, 1, 6)
    assert spec.means == (0.5,) * 10
    assert len(spec.truths) == 6 and spec.truths[2] == frozenset({0, 1, 2})
    # an extension on a bundled name is ignored
    assert cli.load_spec("fig1_homogeneous.cfg") == spec


def test_bundled_split_spec():
    spec = cli.load_spec("fig1_heterogeneous")
    assert spec.means == (0.5,) * 5 + (1.0,) * 5


@pytest.mark.parametrize(
    "old, new, pattern",
    [
        ("lower_bound = 1", "lower_bound = 4", r"requires 0 <= l <= u <= M, l < M, u > 0"),
        ("budget = 2", "budget = 2\nbudgett = 3", r"unknown field\(s\): budgett"),
        ("alpha = 0.05\n", "", r"missing required field 'alpha'"),
        ('"probabilistic"]', '"greedy"]', r"unknown rule 'greedy'"),
        ("trials = 60", "trials = 0", r"trials must be positive"),
        ("mean = 1.0", 'mean = "one"', r"field 'mean' must be a number"),
        ("seed = 4", "seed = 4\ntruths = [[1], [5]]", r"indices must lie in 1..4"),
        ("seed = 4", "seed = 4\ntruths = [[1, 2, 3, 4]]", r"not admissible"),
        ("[sources]", "[sources\n", r"parse error"),
    ],
)
def test_invalid_specs_rejected(tmp_path, old, new, pattern):
    path = tmp_path / "bad.toml"
    path.write_text(edit(SMALL, old, new))
    with pytest.raises(cli.SpecError, match=pattern):
        cli.load_spec(str(path))


def test_missing_spec_is_usage_error(capsys):
    assert cli.main(["run", "no_such_spec"]) == cli.EXIT_USAGE
    assert "spec not found" in capsys.readouterr().err


def test_explicit_thresholds(tmp_path):
    text = edit(SMALL, 'thresholds = "analytic"', 'thresholds = "explicit"')
    text += "\n[thresholds]\na = 2.0\nb = 2.5\nc = 3.0\nd = 3.5\n"
    path = tmp_path / "explicit.toml"
    path.write_text(text)
    spec = cli.load_spec(str(path))
    assert spec.explicit_thresholds["ordering"] == Thresholds(c=3.0, a=2.0, b=2.5, d=3.5)
    path.write_text(edit(text, "a = 2.0\nb = 2.5\n", ""))
    with pytest.raises(cli.SpecError):
        cli.load_spec(str(path))


def test_missing_seed_defaulted(tmp_path, capsys):
    path = tmp_path / "noseed.toml"
    path.write_text(edit(SMALL, "seed = 4\n", ""))
    spec = cli.load_spec(str(path))
    assert spec.seed == cli.DEFAULT_SEED and spec.seed_defaulted
    assert cli.main(["run", str(path), "--out", str(tmp_path / "o"), "--no-plot"]) == 0
    assert "default seed" in capsys.readouterr().err
    meta = cli.read_results(tmp_path / "o" / "small.csv").metadata
    assert meta["seed"] == "0 (default)"


def test_run_outputs_and_determinism(tmp_path, small_spec, capsys):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", str(small_spec), "--out", str(out1)]) == 0
    assert cli.main(["run", str(small_spec), "--out", str(out2), "--workers", "2"]) == 0
    csv1 = (out1 / "small.csv").read_bytes()
    assert csv1 == (out2 / "small.csv").read_bytes()
    assert (out1 / "small.svg").read_bytes() == (out2 / "small.svg").read_bytes()
    side = json.loads((out1 / "small.json").read_text())
    assert side["spec_hash"] == cli.load_spec(str(small_spec)).spec_hash()
    assert side["wall_time_seconds"] >= 0 and side["seed"] == 4
    res = cli.read_results(out1 / "small.csv")
    # rule-major, then truth, then metric
    keys = [(r, t) for r, t, _, _ in res.rows]
    assert keys == sorted(keys, key=lambda k: (["ordering", "probabilistic"].index(k[0]), len(k[1]), k[1]))
    assert len(res.rows) == 2 * 3 * len(cli.CellSummary.METRICS)


def test_trials_override_in_metadata(tmp_path, small_spec):
    assert cli.main(["run", str(small_spec), "--trials", "25", "--seed", "9", "--out", str(tmp_path),
                     "--no-plot"]) == 0
    res = cli.read_results(tmp_path / "small.csv")
    assert res.metadata["trials"] == "25" and res.metadata["seed"] == "9"
    assert {v for _, _, m, v in res.rows if m == "trials"} == {25}


def test_metadata_thresholds_reproduce_bits(tmp_path, small_spec):
    cli.main(["run", str(small_spec), "--out", str(tmp_path), "--no-plot"])
    meta = cli.read_results(tmp_path / "small.csv").metadata
    spec = cli.load_spec(str(small_spec))
    want = cli.compute_thresholds(spec.config)
    got = dict(kv.split("=") for kv in meta["thresholds.ordering"].split(";"))
    assert {k: float(v) for k, v in got.items()} == want.as_dict()


def test_results_round_trip():
    res = cli.ResultsFile(
        {"schema_version": "1", "spec_name": "x"},
        [("ordering", (1, 2), "trials", 10), ("ordering", (1, 2), "mean_T", 1 / 3),
         ("ordering", (1, 2), "se_T", math.nan), ("full", (), "budget_z", -math.inf)],
    )
    text = cli.format_results(res)
    assert "ordering,1 2,2,mean_T,0.333333333\n" in text
    assert "full,,0,budget_z,-inf\n" in text


def test_read_format_is_lossless(tmp_path, small_spec):
    cli.main(["run", str(small_spec), "--out", str(tmp_path), "--no-plot"])
    path = tmp_path / "small.csv"
    assert cli.format_results(cli.read_results(path)) == path.read_text()


def test_read_rejects_other_schema(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("# seqident-results\n# schema_version: 99\nrule,truth,m,metric,value\n")
    with pytest.raises(ValueError, match="schema"):
        cli.read_results(path)


def test_value_format_nine_digits():
    assert cli.format_value("mean_T", 123.456789012) == "123.456789"
    assert cli.format_value("fp_count", 3.0) == "3"
    assert cli.format_value("mean_T", math.inf) == "inf"


def test_plot_command(tmp_path, small_spec):
    cli.main(["run", str(small_spec), "--out", str(tmp_path), "--no-plot"])
    csv_path = tmp_path / "small.csv"
    out = tmp_path / "fig.svg"
    assert cli.main(["plot", str(csv_path), str(csv_path), "--out", str(out)]) == 0
    svg = out.read_text()
    assert svg.startswith("<?xml") and "<svg" in svg
    first = out.read_bytes()
    cli.main(["plot", str(csv_path), str(csv_path), "--out", str(out)])
    assert out.read_bytes() == first
    table = (tmp_path / "fig_table.csv").read_text().splitlines()
    assert table[0] == "panel,rule,m,truth,mean_T,se_T"
    assert len(table) == 1 + 2 * 2 * 3


def test_plot_single_rule(tmp_path, small_spec):
    text = edit(SMALL, '["ordering", "probabilistic"]', '["ordering"]')
    small_spec.write_text(text)
    cli.main(["run", str(small_spec), "--out", str(tmp_path)])
    assert (tmp_path / "small.svg").exists()


def test_plot_empty_results_fails(tmp_path, capsys):
    path = tmp_path / "empty.csv"
    path.write_text("# seqident-results\n# schema_version: 1\nrule,truth,m,metric,value\n")
    assert cli.main(["plot", str(path)]) == cli.EXIT_FAILED
    assert "no rows" in capsys.readouterr().err


def test_verify_passes(tmp_path, capsys):
    rc = cli.main(["verify", "--random-configs", "5", "--states", "200", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert rc == 0
    assert out.count("PASS") == 6 and "FAIL" not in out
    assert (tmp_path / "two_level_g_sets.csv").exists()


def test_verify_reports_bad_override(tmp_path, small_spec, capsys):
    small_spec.write_text(SMALL + "\n[[overrides]]\nsubset = [1, 2]\nn_hat = 3\nn_check = 0\n")
    rc = cli.main(["verify", str(small_spec), "--random-configs", "2", "--states", "20", "--out", str(tmp_path)])
    assert rc == cli.EXIT_FAILED
    dump = json.loads((tmp_path / "counterexamples.json").read_text())
    assert "exceeds K" in dump["budget overrides"]["examples"][0]["violation"]
    assert "FAIL  budget overrides" in capsys.readouterr().out


def test_run_with_bad_override_is_engine_error(small_spec, tmp_path):
    small_spec.write_text(SMALL + "\n[[overrides]]\nsubset = [1, 2]\nn_hat = 3\nn_check = 0\n")
    assert cli.main(["run", str(small_spec), "--out", str(tmp_path)]) == cli.EXIT_ENGINE


def test_calibrate_snippet_round_trips(tmp_path, small_spec, capsys):
    small_spec.write_text(edit(SMALL, "alpha = 0.05\nbeta = 0.05", "alpha = 0.1\nbeta = 0.1"))
    rc = cli.main(["calibrate", str(small_spec), "--trials", "300", "--out", str(tmp_path)])
    assert rc == 0
    snippet = (tmp_path / "small_thresholds.toml").read_text()
    assert re.search(r"^\[thresholds\.ordering\]$", snippet, re.M)
    text = edit(small_spec.read_text(), 'thresholds = "analytic"', 'thresholds = "explicit"') + snippet
    small_spec.write_text(text)
    spec = cli.load_spec(str(small_spec))
    assert spec.thresholds_mode == "explicit" and set(spec.explicit_thresholds) == {"ordering", "probabilistic"}


def test_calibrated_run_records_scales(tmp_path, small_spec):
    text = edit(SMALL, 'thresholds = "analytic"', 'thresholds = "calibrated"')
    text = edit(text, "alpha = 0.05\nbeta = 0.05", "alpha = 0.1\nbeta = 0.1")
    small_spec.write_text(text + "\n[calibration]\ntrials = 300\ngrid = 50\n")
    assert cli.main(["run", str(small_spec), "--out", str(tmp_path), "--no-plot"]) == 0
    meta = cli.read_results(tmp_path / "small.csv").metadata
    assert 0 < float(meta["calibration.ordering.scale"]) <= 1
    side = json.loads((tmp_path / "small.json").read_text())
    assert side["spec"]["calibration"]["seed"] == 5  # experiment seed + 1


def test_nonpositive_flags_rejected(small_spec):
    assert cli.main(["run", str(small_spec), "--trials", "0"]) == cli.EXIT_USAGE
