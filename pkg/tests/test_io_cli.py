import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from mtmbsp.cli import main
from mtmbsp.errors import ChecksumError, InputError, ValidationError
from mtmbsp.gibbs import PosteriorSamples
from mtmbsp.io import (
    RunConfig,
    load_dataset,
    manifest_hash,
    read_draws,
    read_summary,
    read_table,
    write_draws,
    write_summary,
)

FAST = ["--iterations", "200", "--burn-in", "100"]


@pytest.fixture
def data_dir(tmp_path):
    g = np.random.default_rng(70)
    n, p = 40, 12
    X = g.standard_normal((n, p))
    t = 1.5 * X[:, 2] - 2.0 * X[:, 7]
    Y = np.column_stack([t + g.standard_normal(n), (g.random(n) < 1 / (1 + np.exp(-t))).astype(int),
                         g.negative_binomial(10, 1 / (1 + np.exp(0.3 * t)))])
    xs = "\n".join([",".join(f"x{j}" for j in range(p))] + [",".join(repr(float(v)) for v in row) for row in X])
    ys = "\n".join(["height,sick,visits"] + [f"{float(a)!r},{int(b)},{int(c)}" for a, b, c in Y])
    (tmp_path / "X.csv").write_text(xs + "\n")
    (tmp_path / "Y.csv").write_text(ys + "\n")
    schema = {"columns": [{"name": "height", "kind": "gaussian"}, {"name": "sick", "kind": "bernoulli"},
                          {"name": "visits", "kind": "negbinomial", "r_init": 10}]}
    (tmp_path / "schema.json").write_text(json.dumps(schema))
    return tmp_path


def fit_args(d, out, *extra):
    return ["fit", "--x-file", str(d / "X.csv"), "--y-file", str(d / "Y.csv"),
            "--schema-file", str(d / "schema.json"), "--output-dir", str(out), *FAST, *extra]


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

def test_config_round_trip(tmp_path):
    cfg = RunConfig().override(seed=2**63 + 5, gamma=0.05, coef_range_cont=[[-3, -1], [1, 3]])
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    back = RunConfig.from_file(path)
    assert back == cfg and back.seed == 2**63 + 5


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(ValidationError, match="bogus"):
        RunConfig.from_dict({"bogus": 1})


def test_config_validation_before_work():
    with pytest.raises(ValidationError):
        RunConfig().override(iterations=120, burn_in=100).validate("simulate")
    with pytest.raises(ValidationError):
        RunConfig().override(tau=-1.0).validate("simulate")
    with pytest.raises(ValidationError):
        RunConfig().validate("fit")   # no input paths


def test_defaults_match_reference_settings():
    cfg = RunConfig()
    h, c = cfg.hyperparameters(), cfg.chain_config()
    assert (h.tau, h.u, h.a, h.d1, h.d2) == (0.001, 0.5, 0.5, None, 10.0)
    assert (c.iterations, c.burn_in) == (3000, 1000)
    assert cfg.gamma == 0.02 and cfg.screen_rule == "literal"


# --------------------------------------------------------------------------
# ingestion
# --------------------------------------------------------------------------

def test_read_table_reports_location(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("a,b\n1,2\n3,oops\n")
    with pytest.raises(ValidationError, match=r"bad.csv:3: column 'b': cannot parse 'oops'"):
        read_table(f)
    f.write_text("a,b\n1,2,3\n")
    with pytest.raises(ValidationError, match="bad.csv:2: expected 2 fields"):
        read_table(f)
    with pytest.raises(InputError):
        read_table(tmp_path / "missing.csv")


def test_schema_mismatch(data_dir):
    (data_dir / "schema.json").write_text(json.dumps(["gaussian", "bernoulli"]))
    with pytest.raises(ValidationError, match="schema declares 2 columns but Y has 3"):
        load_dataset(data_dir / "X.csv", data_dir / "Y.csv", data_dir / "schema.json")


def test_invalid_response_value(data_dir):
    text = (data_dir / "Y.csv").read_text().splitlines()
    cells = text[3].split(",")
    cells[1] = "2"
    text[3] = ",".join(cells)
    (data_dir / "Y.csv").write_text("\n".join(text) + "\n")
    with pytest.raises(ValidationError, match=r"Y\[2, 1\]"):
        load_dataset(data_dir / "X.csv", data_dir / "Y.csv", data_dir / "schema.json")


def test_multinomial_schema_expands(tmp_path):
    (tmp_path / "X.csv").write_text("a,b\n" + "\n".join(f"{i},{i % 3}" for i in range(6)) + "\n")
    (tmp_path / "Y.csv").write_text("grade\n1\n2\n3\n2\n1\n3\n")
    (tmp_path / "s.json").write_text(json.dumps([{"kind": "multinomial", "classes": 3}]))
    d, xn, yn = load_dataset(tmp_path / "X.csv", tmp_path / "Y.csv", tmp_path / "s.json", intercept=True)
    assert yn == ["grade[1]", "grade[2]"] and xn[0] == "(intercept)" and d.p == 3
    assert d.Y[:, 0].tolist() == [1, 0, 0, 0, 1, 0]
    assert d.schema.kinds[1].trials == (0, 1, 1, 1, 0, 1)


def test_standardize(data_dir):
    d, _, _ = load_dataset(data_dir / "X.csv", data_dir / "Y.csv", data_dir / "schema.json", standardize=True)
    assert np.allclose(d.X.mean(axis=0), 0) and np.allclose(d.X.std(axis=0), 1)


# --------------------------------------------------------------------------
# containers
# --------------------------------------------------------------------------

def _samples():
    g = np.random.default_rng(71)
    return PosteriorSamples(g.standard_normal((60, 4, 2)), column_ids=np.array([3, 0, 1, 2]),
                            meta={"thin": 1, "burn_in": 10, "seed": 5})


def test_draws_round_trip(tmp_path):
    s = _samples()
    write_draws(tmp_path / "d.bin", s, "abc", names=["w", "x", "y", "z"])
    back, header = read_draws(tmp_path / "d.bin")
    assert np.array_equal(back.B, s.B) and back.column_ids.tolist() == [3, 0, 1, 2]
    assert header["manifest_sha256"] == "abc" and header["names"] == ["w", "x", "y", "z"]


def test_draws_truncation_and_corruption(tmp_path):
    path = tmp_path / "d.bin"
    write_draws(path, _samples(), "abc")
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(ChecksumError, match="payload has"):
        read_draws(path)
    flipped = bytearray(raw)
    flipped[-3] ^= 0xFF
    path.write_bytes(bytes(flipped))
    with pytest.raises(ChecksumError):
        read_draws(path)
    path.write_bytes(b"not a header\n")
    with pytest.raises(ChecksumError):
        read_draws(path)


def test_summary_round_trip(tmp_path):
    summ = _samples().summary()
    write_summary(tmp_path / "s.csv", summ, "abc", np.array([3, 0, 1, 2]))
    first = (tmp_path / "s.csv").read_text().splitlines()[:2]
    assert first == ["# manifest_sha256=abc", "j,column_id,name,k,q0.025,q0.5,q0.975"]
    sha, lo, med, hi = read_summary(tmp_path / "s.csv")
    assert sha == "abc"
    assert np.array_equal(lo, summ.lower) and np.array_equal(med, summ.median) and np.array_equal(hi, summ.upper)


def test_manifest_hash_ignores_timings():
    m = {"config": {"seed": 1}, "versions": {"numpy": "x"}}
    assert manifest_hash(m) == manifest_hash({**m, "timings": {"s": 3.0}})
    assert manifest_hash(m) != manifest_hash({**m, "config": {"seed": 2}})


# --------------------------------------------------------------------------
# command line
# --------------------------------------------------------------------------

def test_fit_outputs_and_byte_identical_rerun(data_dir):
    assert main(fit_args(data_dir, data_dir / "a")) == 0
    assert main(fit_args(data_dir, data_dir / "b")) == 0
    for name in ("summary.csv", "selection.json", "draws.bin"):
        assert (data_dir / "a" / name).read_bytes() == (data_dir / "b" / name).read_bytes(), name
    sel = json.loads((data_dir / "a" / "selection.json").read_text())
    assert {2, 7} <= set(sel["selected"]) and sel["selected_names"][:1] == ["x2"]
    manifest = json.loads((data_dir / "a" / "manifest.json").read_text())
    assert manifest["dims"] == {"n": 40, "p": 12, "q": 3}
    assert manifest["manifest_sha256"] == sel["manifest_sha256"]
    assert "timings" in manifest


def test_summarize_reproduces_summary(data_dir, capsys):
    out = data_dir / "a"
    assert main(fit_args(data_dir, out, "--method", "one-step")) == 0
    assert main(["summarize", str(out / "draws.bin"), "--out", str(data_dir / "again.csv")]) == 0
    assert (data_dir / "again.csv").read_bytes() == (out / "summary.csv").read_bytes()
    assert main(["summarize", str(out / "draws.bin"), "--lower", "0.6"]) == 2


def test_exit_codes(data_dir, capsys):
    (data_dir / "cfg.json").write_text(json.dumps({"no_such_key": 1}))
    assert main(["simulate", "--config", str(data_dir / "cfg.json")]) == 2
    assert main(["simulate", "--scenario", "9"]) == 2
    assert "valid ids are 1-6" in capsys.readouterr().err
    assert main(fit_args(data_dir, data_dir / "o", "--iterations", "120")) == 2
    (data_dir / "schema.json").write_text(json.dumps(["gaussian"]))
    assert main(fit_args(data_dir, data_dir / "o")) == 2
    assert main(["summarize", str(data_dir / "missing.bin")]) == 4
    (data_dir / "trunc.bin").write_bytes(b'{"format": "x"}\n')
    assert main(["summarize", str(data_dir / "trunc.bin")]) == 4


def test_truncated_draws_exit_four(data_dir, capsys):
    out = data_dir / "a"
    assert main(fit_args(data_dir, out)) == 0
    raw = (out / "draws.bin").read_bytes()
    (out / "draws.bin").write_bytes(raw[: len(raw) // 2])
    assert main(["summarize", str(out / "draws.bin")]) == 4
    assert "header promises" in capsys.readouterr().err


def test_simulate_both_writes_table(tmp_path, capsys):
    out = tmp_path / "sim"
    args = ["simulate", "--scenario", "1", "--n", "30", "--p", "25", "--s0", "3", "--replicates", "2",
            "--method", "both", "--output-dir", str(out), *FAST]
    assert main(args) == 0
    table = (out / "table.txt").read_text()
    assert "one-step" in table and "two-step" in table and "replicates: 2, failures: 0" in table
    header = (out / "aggregate.csv").read_text().splitlines()[1]
    assert header == "metric,one-step_mean,one-step_sd,two-step_mean,two-step_sd"
    sim = json.loads((out / "simulation.json").read_text())
    assert len(sim["replicates"]) == 4
    first = (out / "replicates.csv").read_bytes()
    shutil.rmtree(out)
    assert main(args) == 0
    assert (out / "replicates.csv").read_bytes().splitlines()[:2] == first.splitlines()[:2]


def test_console_script_paper_grid_flag():
    exe = shutil.which("mtmbsp")
    cmd = [exe] if exe else [sys.executable, "-m", "mtmbsp"]
    res = subprocess.run(cmd + ["simulate", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "--paper-grid" in res.stdout
