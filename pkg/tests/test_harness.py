import json
import math

import pytest

from lamaml.errors import ConfigError, LamamlError
from lamaml.harness import (
    CSV_HEADER,
    DATA_DIR_ENV,
    SUMMARY_SEED,
    ResultRow,
    config_from_dict,
    csv_text,
    emit_results,
    parse_config,
    run_experiment,
)


def synth_doc(**trainer):
    t = {"algorithm": "lamaml", "hidden": [8]}
    t.update(trainer)
    return {"benchmark": {"name": "synthetic", "T": 2, "n_per_task": 30, "dim": 6, "classes_per_task": 3}, "trainer": t}


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def test_minimal_config_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, {"benchmark": {"name": "synthetic"}, "trainer": {"algorithm": "er"}}))
    t = cfg.trainer
    assert (t.batch_size, t.clip, t.glances) == (10, 2.0, 1)
    assert cfg.seeds == [0]


def test_k_must_divide_batch(tmp_path):
    with pytest.raises(ConfigError) as err:
        parse_config(write(tmp_path, synth_doc(k=3)))
    assert "k=3" in str(err.value) and "batch_size=10" in str(err.value)
    assert err.value.path == "trainer.k"


def test_table6_lamaml_rotations_round_trip(tmp_path):
    doc = {
        "benchmark": {"name": "synthetic"},
        "trainer": {"algorithm": "lamaml", "alpha_init": 0.3, "eta": 0.15, "glances": 5},
    }
    t = parse_config(write(tmp_path, doc)).trainer
    assert (t.alpha_init, t.eta, t.glances) == (0.3, 0.15, 5)
    assert config_from_dict(json.loads(json.dumps({"benchmark": {"name": "synthetic"}, "trainer": t.to_dict()}))).trainer == t


@pytest.mark.parametrize(
    "doc, path",
    [
        ({"benchmark": {"name": "synthetic"}, "trainer": {"algorithm": "er", "lrr": 0.1}}, "trainer.lrr"),
        ({"benchmark": {"name": "synthetic", "Tasks": 3}, "trainer": {"algorithm": "er"}}, "benchmark.Tasks"),
        ({"benchmark": {"name": "synthetic"}, "trainer": {"algorithm": "er"}, "seed": [1]}, "seed"),
        ({"benchmark": {"name": "synthetic"}, "trainer": {"algorithm": "er", "k": "ten"}}, "trainer.k"),
        ({"benchmark": {"name": "mnist"}, "trainer": {"algorithm": "er"}}, "benchmark.name"),
        ({"benchmark": {"name": "synthetic"}, "trainer": {"algorithm": "er"}, "seeds": []}, "seeds"),
        ({"benchmark": {"name": "synthetic"}}, "trainer"),
    ],
)
def test_schema_errors_name_the_field(doc, path):
    with pytest.raises(ConfigError) as err:
        config_from_dict(doc)
    assert err.value.path == path


def test_missing_data_file(tmp_path, monkeypatch):
    monkeypatch.delenv(DATA_DIR_ENV, raising=False)
    doc = {"benchmark": {"name": "rotations"}, "trainer": {"algorithm": "online"}, "data_dir": "nowhere"}
    with pytest.raises(ConfigError) as err:
        parse_config(write(tmp_path, doc))
    assert err.value.path == "benchmark.images"


def test_env_var_overrides_data_dir(tmp_path, monkeypatch):
    cfg = config_from_dict({"benchmark": {"name": "rotations"}, "trainer": {"algorithm": "online"}, "data_dir": "x"})
    monkeypatch.setenv(DATA_DIR_ENV, str(tmp_path))
    assert cfg.data_path("a.gz") == tmp_path / "a.gz"
    monkeypatch.delenv(DATA_DIR_ENV)
    assert str(cfg.data_path("a.gz")) == "x/a.gz"


def test_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{nope")
    with pytest.raises(ConfigError):
        parse_config(p)


def test_header_only_csv():
    assert csv_text([]) == ",".join(CSV_HEADER) + "\n"


def test_two_seeds_and_summary(tmp_path):
    cfg = config_from_dict(synth_doc())
    rows = run_experiment(cfg, seeds=[0, 1])
    assert len(rows) == 3
    assert [r.seed for r in rows] == [0, 1, SUMMARY_SEED]
    ra = [r.ra for r in rows[:2]]
    assert rows[2].ra[0] == pytest.approx(sum(ra) / 2)
    lines = csv_text(rows).splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert lines[3].split(",")[2] == SUMMARY_SEED
    paths = emit_results(rows, tmp_path / "out")
    recs = [json.loads(line) for line in paths["jsonl"].read_text().splitlines()]
    assert [r["seed"] for r in recs] == [0, 1]
    assert len(recs[0]["acc"]) == 2 and recs[0]["acc"][0][1] is None


def test_rerun_is_byte_identical():
    cfg = config_from_dict(synth_doc())
    a = csv_text(run_experiment(cfg, seeds=[3]))
    b = csv_text(run_experiment(cfg, seeds=[3]))
    assert a == b


def test_parallel_workers_match_serial():
    cfg = config_from_dict(synth_doc(algorithm="er"))
    assert csv_text(run_experiment(cfg, seeds=[0, 1, 2], workers=3)) == csv_text(run_experiment(cfg, seeds=[0, 1, 2], workers=1))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_failed_seed_is_isolated():
    cfg = config_from_dict(synth_doc(algorithm="online", lr=1e308))
    rows = run_experiment(cfg, seeds=[0, 1])
    assert all(r.error for r in rows[:2])
    assert rows[2].error == "all seeds failed"
    good = config_from_dict(synth_doc(algorithm="online"))
    assert run_experiment(good, seeds=[0])[0].error is None


def test_wall_time_column_opt_in():
    row = ResultRow("er", "synthetic", 0, 50.0, -1.0, math.nan, 1.25)
    assert csv_text([row]).splitlines()[1].endswith(",")
    assert csv_text([row], with_wall_time=True).splitlines()[1].endswith(",1.2500")


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(LamamlError):
        emit_results([], blocker / "sub")
