import csv
import json

import pytest
from click.testing import CliRunner

from starris.cli import main
from starris.dataset import load_dataset

CONFIG = """\
# tiny system
n_tx = 2
n_users = 2
n_ris = 1
n_elems_per_ris = 2
n_users_t_region = 1
rng_seed = 3
max_epochs = 2
batch_size = 4
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "sys.cfg").write_text(CONFIG)
    res = CliRunner().invoke(main, ["gen-data", "--config", str(d / "sys.cfg"), "--samples", "20", "--out", str(d / "data.bin")])
    assert res.exit_code == 0, res.output
    return d


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_help_lists_commands():
    res = CliRunner().invoke(main, ["--help"])
    assert res.exit_code == 0
    for cmd in ("gen-data", "solve", "train", "infer", "bench"):
        assert cmd in res.output


def test_gen_data_seed_override(workdir):
    ds = load_dataset(workdir / "data.bin")
    assert len(ds) == 20 and ds.seed == 3
    res = CliRunner().invoke(
        main, ["gen-data", "--config", str(workdir / "sys.cfg"), "--samples", "2", "--seed", "9", "--out", str(workdir / "s9.bin")]
    )
    assert res.exit_code == 0
    assert load_dataset(workdir / "s9.bin").cfg.rng_seed == 9


def test_solve_writes_one_row_per_sample(workdir):
    out = workdir / "solve.csv"
    res = CliRunner().invoke(main, ["solve", "--data", str(workdir / "data.bin"), "--limit", "3", "--out", str(out)])
    assert res.exit_code == 0, res.output
    rows = _rows(out)
    assert [r["sample_id"] for r in rows] == ["0", "1", "2"]
    assert set(rows[0]) == {
        "sample_id", "sum_rate", "phase_iters", "amplitude_iters", "precoder_iters", "outer_iters", "wall_time_s", "modulus_violation",
    }
    assert all(float(r["sum_rate"]) > 0 for r in rows)


def test_train_then_infer(workdir):
    model, log, out = workdir / "m.bin", workdir / "log.csv", workdir / "infer.csv"
    res = CliRunner().invoke(
        main, ["train", "--config", str(workdir / "sys.cfg"), "--data", str(workdir / "data.bin"), "--out-model", str(model), "--log", str(log)]
    )
    assert res.exit_code == 0, res.output
    assert len(_rows(log)) == 2
    assert (workdir / "m.bin.last").exists()
    res = CliRunner().invoke(main, ["infer", "--model", str(model), "--data", str(workdir / "data.bin"), "--out", str(out)])
    assert res.exit_code == 0, res.output
    rows = _rows(out)
    assert len(rows) == 20 and set(rows[0]) == {"sample_id", "sum_rate", "sinr_0", "sinr_1"}


def test_infer_refuses_mismatched_model(workdir, tmp_path):
    (tmp_path / "big.cfg").write_text(CONFIG.replace("n_tx = 2", "n_tx = 4"))
    CliRunner().invoke(main, ["gen-data", "--config", str(tmp_path / "big.cfg"), "--samples", "1", "--out", str(tmp_path / "big.bin")])
    from starris.bhgnn import BHGNN, save_params

    save_params(BHGNN(2), tmp_path / "m2.bin")
    res = CliRunner().invoke(main, ["infer", "--model", str(tmp_path / "m2.bin"), "--data", str(tmp_path / "big.bin"), "--out", str(tmp_path / "o.csv")])
    assert res.exit_code != 0 and "mismatch" in res.output


def test_bad_dataset_reports_path(tmp_path):
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"nope")
    res = CliRunner().invoke(main, ["solve", "--data", str(junk), "--out", str(tmp_path / "o.csv")])
    assert res.exit_code != 0 and "junk.bin" in res.output


def test_bench_runs_a_spec(tmp_path):
    spec = tmp_path / "exp.cfg"
    spec.write_text(CONFIG + "methods = ao, random-phase\naxis = power\nvalues = 20, 30\ntrials = 2\ndraws = 2\n")
    res = CliRunner().invoke(main, ["bench", "--spec", str(spec), "--out", str(tmp_path / "out")])
    assert res.exit_code == 0, res.output
    assert len(_rows(tmp_path / "out" / "results.csv")) == 8
    summary = [json.loads(line) for line in res.output.splitlines() if line.startswith("{")]
    assert {s["method"] for s in summary} == {"ao", "random-phase"}
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["spec"]["values"] == [20.0, 30.0] and manifest["code_version"]
