import csv
import hashlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stalesim.cli import main
from stalesim.config import ExperimentConfig, parse_text
from stalesim.errors import ConfigError
from stalesim.experiment import expand_sweep
from stalesim.metrics import RunTrace

MLR = """\
# small MLR problem
workload.kind = mlr
data.kind = clusters
data.n_train = 300
data.n_test = 100
data.dim = 6
data.n_classes = 3
optimizer.kind = sgd
optimizer.lr = 0.05
delay.staleness = 2
run.workers = 2
run.seeds = 0
run.budget = 200
run.eval_interval = 10
target.threshold = 0.9
output.dir = {out}
"""


def write_cfg(tmp_path, text, name="exp.cfg", **fmt):
    path = tmp_path / name
    path.write_text(text.format(out=tmp_path / "out", **fmt))
    return path


# ---------------------------------------------------------------- config


def test_parse_types_and_lists():
    flat = parse_text("run.seeds = 0, 1, 2\noptimizer.lr = 1e-3\nrun.stop_at_target = false\nworkload.kind = dnn\n")
    assert flat == {"run.seeds": [0, 1, 2], "optimizer.lr": 0.001, "run.stop_at_target": False,
                    "workload.kind": "dnn"}


def test_unknown_section_rejected():
    with pytest.raises(ConfigError):
        parse_text("model.kind = dnn\n")
    with pytest.raises(ConfigError):
        parse_text("just text\n")


def test_round_trip(tmp_path):
    cfg = ExperimentConfig.from_text(MLR.format(out=tmp_path))
    again = ExperimentConfig.from_text(cfg.to_text())
    assert again.flat() == cfg.flat()
    assert again.fingerprint() == cfg.fingerprint()


def test_defaults():
    cfg = ExperimentConfig.from_text("workload.kind = dnn\n")
    assert cfg.workers == 1 and cfg.seeds == [0] and cfg.budget == 77824
    assert cfg.staleness == 0


def test_run_id_ignores_seed_list_and_outdir(tmp_path):
    a = ExperimentConfig.from_text(MLR.format(out=tmp_path / "a"))
    b = ExperimentConfig.from_text(MLR.format(out=tmp_path / "b").replace("run.seeds = 0", "run.seeds = 0, 5"))
    assert a.run_id(0) == b.run_id(0) and a.run_id(0) != a.run_id(1)
    assert len(a.run_id(0)) == 12


@pytest.mark.parametrize("line", ["run.workers = 0", "run.budget = -1", "optimizer.kind = lbfgs",
                                  "data.path = /definitely/missing.dat", "sweep.colour = 1"])
def test_invalid_configs(tmp_path, line):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text(MLR.format(out=tmp_path) + line + "\n")


def test_sweep_enumeration_counts():
    cfg = ExperimentConfig.from_text(
        "workload.kind = mlr\nsweep.staleness = 0, 2, 4, 8, 16\nsweep.workers = 1, 8, 16\n"
        "sweep.optimizer = sgd, momentum, adam, adagrad, rmsprop\n"
    )
    cells = expand_sweep(cfg)
    assert len(cells) == 75
    assert len({label for label, _, _ in cells}) == 15
    assert [c[:2] for c in cells] == [c[:2] for c in expand_sweep(cfg)]


int_keys = st.sampled_from(["run.budget", "delay.staleness", "run.eval_interval"])
float_keys = st.sampled_from(["optimizer.lr", "data.noise"])


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(int_keys, st.integers(1, 10**6)),
       st.dictionaries(float_keys, st.floats(1e-6, 1e3, allow_nan=False)))
def test_round_trip_property(ints, floats):
    text = "workload.kind = mlr\n" + "".join(f"{k} = {v!r}\n" for k, v in {**ints, **floats}.items())
    cfg = ExperimentConfig.from_text(text)
    again = ExperimentConfig.from_text(cfg.to_text())
    assert again.flat() == cfg.flat()
    for k, v in {**ints, **floats}.items():
        assert again.flat()[k] == v


# ---------------------------------------------------------------- commands


def test_missing_config_exit_2(tmp_path, capsys):
    path = tmp_path / "nope.cfg"
    assert main(["run", str(path)]) == 2
    assert str(path) in capsys.readouterr().err


def test_run_writes_trace_and_summary(tmp_path):
    cfg = write_cfg(tmp_path, MLR)
    assert main(["run", str(cfg)]) == 0
    traces = list((tmp_path / "out").glob("*.jsonl"))
    assert len(traces) == 1
    assert RunTrace.read(traces[0]).events[0].batches == 0
    with open(tmp_path / "out" / "summary.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 1


def test_mf_three_seeds(tmp_path):
    text = (
        "workload.kind = mf\nworkload.rank = 2\ndata.kind = lowrank\ndata.n_rows = 20\ndata.n_cols = 20\n"
        "data.rank = 2\noptimizer.lr = 1.0\nrun.batch_size = 40\nrun.budget = 60\nrun.workers = 2\n"
        "run.seeds = 0, 1, 2\noutput.dir = {out}\n"
    )
    assert main(["run", str(write_cfg(tmp_path, text))]) == 0
    assert len(list((tmp_path / "out").glob("*.jsonl"))) == 3
    with open(tmp_path / "out" / "summary.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 3


def test_budget_zero(tmp_path):
    cfg = write_cfg(tmp_path, MLR.replace("run.budget = 200", "run.budget = 0"))
    assert main(["run", str(cfg)]) == 0
    (trace,) = (tmp_path / "out").glob("*.jsonl")
    assert len(RunTrace.read(trace).events) == 1


def test_divergence_exit_3(tmp_path):
    text = ("workload.kind = quadratic\nworkload.l_min = 1.0\nworkload.l_max = 1.0\noptimizer.lr = 50\n"
            "run.budget = 3000\nrun.eval_interval = 1\noutput.dir = {out}\n")
    assert main(["run", str(write_cfg(tmp_path, text))]) == 3


def test_identical_trace_bytes(tmp_path):
    digests = []
    for sub in ("a", "b"):
        cfg = write_cfg(tmp_path, MLR.replace("{out}", str(tmp_path / sub)), name=f"{sub}.cfg")
        assert main(["run", str(cfg)]) == 0
        (trace,) = (tmp_path / sub).glob("*.jsonl")
        digests.append(hashlib.sha256(trace.read_bytes()).hexdigest())
    assert digests[0] == digests[1]


def test_sweep_single_cell(tmp_path):
    text = MLR.replace("run.workers = 2", "run.workers = 1") + "sweep.staleness = 0\ntarget.threshold = 0.5\n"
    assert main(["sweep", str(write_cfg(tmp_path, text))]) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "slowdown.csv")))
    assert len(rows) == 1 and float(rows[0]["mean_ratio"]) == 1.0


def test_sweep_every_cell_listed_once(tmp_path):
    text = MLR + "sweep.staleness = 0, 1, 4\nsweep.workers = 1, 2\nrun.seeds = 0, 1\n"
    assert main(["sweep", str(write_cfg(tmp_path, text)), "--jobs", "2"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "slowdown.csv")))
    cells = [(r["group"], r["staleness"]) for r in rows]
    assert len(cells) == len(set(cells)) == 6
    for r in rows:
        assert int(r["n"]) + int(r["omitted"]) == 2
    assert main(["report", str(tmp_path / "out")]) == 0


QUAD = """\
workload.kind = quadratic
workload.dim = 10
delay.staleness = 4
run.workers = 2
run.budget = {budget}
theorem.mu = {mu}
output.dir = {out}
"""


def test_verify_quadratic_passes(tmp_path):
    assert main(["verify-theorem", str(write_cfg(tmp_path, QUAD, budget=4000, mu=0.5))]) == 0
    assert (tmp_path / "out" / "verification.txt").read_text().startswith("min_sq_grad_norm=")


def test_verify_mu_too_high(tmp_path):
    # with mu ten times too large the first stepsize is far past 2 / L and the iterates blow up
    text = QUAD.replace("delay.staleness = 4", "delay.staleness = 1")
    code = main(["verify-theorem", str(write_cfg(tmp_path, text, budget=200, mu=30.0))])
    assert code in (1, 4)


def test_verify_needs_lipschitz(tmp_path):
    text = MLR + "theorem.mu = 0.5\n"
    assert main(["verify-theorem", str(write_cfg(tmp_path, text))]) == 2


def test_probe_writes_coherence(tmp_path):
    text = MLR + "probe.interval = 5\nprobe.subset = 100\nprobe.lags = 3\nrun.stop_at_target = false\n"
    assert main(["probe", str(write_cfg(tmp_path, text))]) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "coherence.csv")))
    assert rows and set(rows[0]) == {"iter", "m", "cosine", "mu_k"}
    assert {int(r["m"]) for r in rows} == {1, 2, 3}
    assert all(-1.0 <= float(r["cosine"]) <= 1.0 for r in rows)


def test_probe_unsupported_workload(tmp_path):
    text = ("workload.kind = lda\ndata.n_docs = 20\ndata.vocab_size = 10\nrun.budget = 10\n"
            "output.dir = {out}\n")
    assert main(["probe", str(write_cfg(tmp_path, text))]) == 2


def test_report_missing_dir(tmp_path):
    assert main(["report", str(tmp_path / "none")]) == 2
