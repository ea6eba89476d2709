import csv
import json

import numpy as np
import pytest

from ctmcmix import io
from ctmcmix.cli import main


@pytest.fixture
def generated(tmp_path):
    out = tmp_path / "gen"
    assert main(["generate", "--n", "4", "--L", "2", "--r", "40", "--m", "100", "--tau", "0.1",
                 "--seed", "3", "--out", str(out)]) == 0
    return out


def test_generate_small_roundtrip(tmp_path):
    out = tmp_path / "g"
    main(["generate", "--n", "2", "--L", "1", "--r", "3", "--horizon", "10", "--seed", "7", "--out", str(out)])
    lines = (out / "trails.jsonl").read_text().splitlines()
    assert len(lines) == 3
    assert all(set(json.loads(line)) >= {"trail_id", "true_chain", "events"} for line in lines)


def test_generate_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        main(["generate", "--r", "5", "--seed", "1", "--out", str(tmp_path / d)])
    for name in ("trails.jsonl", "mixture.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_generate_absorbing(tmp_path):
    out = tmp_path / "abs"
    main(["generate", "--n", "4", "--L", "2", "--r", "30", "--horizon", "5", "--absorbing", "3",
          "--seed", "2", "--out", str(out)])
    _, trails = io.read_trails(out / "trails.jsonl")
    assert all(x.states[-1] == 3 or x.horizon == 5.0 for x in trails)


def test_generate_invalid_config(tmp_path):
    with pytest.raises(SystemExit, match="invalid config"):
        main(["generate", "--n", "1", "--out", str(tmp_path / "x")])


def test_fit_groundtruth_has_zero_clustering_error(generated, tmp_path):
    out = tmp_path / "fit"
    main(["fit", str(generated / "trails.jsonl"), "--tau", "0.1", "--m", "100", "--L", "2",
          "--method", "groundtruth", "--truth", str(generated / "mixture.json"), "--out", str(out)])
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["clustering_error"] == 0.0
    assert "recovery_error" in metrics
    assert "seconds" in json.loads((out / "timing.json").read_text())


def test_fit_l1_assignment_column(generated, tmp_path):
    out = tmp_path / "fit"
    main(["fit", str(generated / "trails.jsonl"), "--tau", "0.1", "--m", "100", "--L", "1", "--out", str(out)])
    with open(out / "assignment.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["trail_id", "a_1"]
    assert all(float(r[1]) == 1.0 for r in rows[1:])


def test_fit_dem_metrics_are_deterministic(generated, tmp_path):
    for d in ("a", "b"):
        main(["fit", str(generated / "trails.jsonl"), "--tau", "0.1", "--m", "100", "--L", "2",
              "--seed", "5", "--out", str(tmp_path / d)])
    for name in ("metrics.json", "mixture.json", "assignment.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_fit_ignores_true_chain(generated, tmp_path):
    recs = io.read_trail_records(generated / "trails.jsonl")
    rng = np.random.default_rng(0)
    with open(tmp_path / "scrambled.jsonl", "w") as fh:
        for rec in recs:
            rec["true_chain"] = int(rng.integers(2))
            fh.write(json.dumps(rec) + "\n")
    for name, src in (("a", generated / "trails.jsonl"), ("b", tmp_path / "scrambled.jsonl")):
        main(["fit", str(src), "--tau", "0.1", "--m", "100", "--L", "2", "--out", str(tmp_path / name)])
    assert (tmp_path / "a" / "mixture.json").read_bytes() == (tmp_path / "b" / "mixture.json").read_bytes()


def test_fit_cem_and_segments(generated, tmp_path):
    main(["fit", str(generated / "trails.jsonl"), "--tau", "0.1", "--L", "2", "--method", "cem",
          "--out", str(tmp_path / "c")])
    assert json.loads((tmp_path / "c" / "metrics.json").read_text())["loglik_kind"] == "continuous"
    main(["fit", str(generated / "trails.jsonl"), "--tau", "0.1", "--m", "100", "--L", "2",
          "--segment-length", "10", "--out", str(tmp_path / "s")])
    ids, a = io.read_assignment(tmp_path / "s" / "assignment.csv")
    assert a.r == 40 * 10 and ids[1].endswith("#1")


def test_fit_rejects_states_outside_reference(generated, tmp_path):
    M, _ = io.read_mixture(generated / "mixture.json")
    small = tmp_path / "small.json"
    io.write_mixture(small, type(M)(tuple(type(c)(c.K[:2, :2] - np.diag(c.K[:2, :2].sum(axis=1)))
                                          for c in M.chains), np.full((2, 2), 0.25)))
    with pytest.raises(SystemExit, match="does not exist"):
        main(["fit", str(generated / "trails.jsonl"), "--tau", "0.1", "--m", "100", "--L", "2",
              "--truth", str(small), "--out", str(tmp_path / "x")])


def test_sweep_row_count(tmp_path):
    out = tmp_path / "s.csv"
    main(["sweep", "--axis", "m", "--values", "25", "50", "100", "--repeats", "5", "--methods", "dem", "ktt",
          "--n", "3", "--r", "8", "--restarts", "1", "--max-iter", "5", "--no-timing", "--out", str(out)])
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 30
    assert all(float(r["seconds"]) == 0.0 for r in rows)


def test_sweep_invalid_axis(tmp_path):
    with pytest.raises(SystemExit):
        main(["sweep", "--axis", "speed", "--values", "1", "--out", str(tmp_path / "s.csv")])


def test_ingest(tmp_path):
    ev = tmp_path / "events.csv"
    ev.write_text(
        "entity_id,timestamp,token\n"
        "u,0,a\nu,60,b\nu,1300,a\nu,1310,b\n"
        "v,0,b\nv,5,a\n"
    )
    out = tmp_path / "ing"
    main(["ingest", str(ev), "--gap", "900", "--top-k", "2", "--out", str(out)])
    ids, trails = io.read_trails(out / "trails.jsonl")
    assert ids == ["u-0", "u-1", "v-0"]
    states = json.loads((out / "states.json").read_text())
    assert sorted(states["states"]) == ["a", "b"]


def test_predict_symmetric_chain(tmp_path, capsys):
    from ctmcmix.core import ContinuousTrail, CTMixture, RateMatrix

    K = RateMatrix([[-2.0, 1.0, 1.0], [0, 0, 0], [0, 0, 0]])
    io.write_mixture(tmp_path / "m.json", CTMixture((K,), np.array([[1.0, 0, 0]])))
    trails = [ContinuousTrail(np.array([0]), np.array([0.0]), 1.0),
              ContinuousTrail(np.array([0, 1]), np.array([0.0, 0.5]), 0.5, absorbed=True)]
    io.write_trails(tmp_path / "t.jsonl", trails, extras=[{}, {"outcome": 1}])
    main(["predict", str(tmp_path / "m.json"), str(tmp_path / "t.jsonl"), "--hit", "1", "--miss", "2",
          "--out", str(tmp_path / "p.csv")])
    with open(tmp_path / "p.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[0]["p_hit"]) == pytest.approx(0.5)
    assert float(rows[1]["p_hit"]) == 1.0
    summary = json.loads(capsys.readouterr().out)
    assert summary["accuracy"] == 1.0
