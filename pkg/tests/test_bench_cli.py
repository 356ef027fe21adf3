import csv
import io
import json
import math

import numpy as np
import pytest

from privdetect.bench_cli import (
    COLUMNS,
    DEFAULT_TRIALS,
    ConfigError,
    ExperimentConfig,
    ExperimentResult,
    PendulumParams,
    agrees,
    binomial_half_width,
    build_pendulum_benchmark,
    emit_csv,
    main,
    run_experiment,
)

SMALL = 2000


@pytest.fixture(scope="module")
def known_cov():
    return run_experiment(ExperimentConfig("known-cov-sweep", trials=SMALL, seed=3))


@pytest.fixture(scope="module")
def fa_sweep():
    return run_experiment(ExperimentConfig("fa-constrained-sweep", grid=[0.02, 0.05, 0.10], trials=SMALL))


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


# pendulum benchmark

def test_pendulum_parameters():
    p = PendulumParams()
    assert (p.mass, p.length, p.spring_height, p.sample_time) == (0.5, 0.1, 0.06, 0.01)
    assert [p.spring(*e) for e in ((1, 2), (2, 3), (2, 4), (3, 4))] == [27.0, 40.0, 35.0, 53.0]
    assert p.spring(2, 1) == p.spring(1, 2)
    assert p.spring(1, 3) is None


def test_pendulum_topology(pendulum):
    net, _ = pendulum
    assert net.ids == [1, 2, 3, 4]
    assert net[2].neighbor_ids == [1, 3, 4]
    assert net[1].neighbor_ids == [2]
    assert set(net[3].neighbor_ids) == {2, 4}
    assert set(net[4].neighbor_ids) == {2, 3}


def test_pendulum_matrices(pendulum):
    net, _ = pendulum
    p = PendulumParams()
    ml2 = p.mass * p.length ** 2
    eps2 = p.spring_height ** 2
    for mdl in net:
        ksum = sum(p.spring(mdl.id, j) for j in mdl.neighbor_ids)
        Ac = np.array([[0.0, 1.0], [p.gravity / p.length - ksum * eps2 / ml2, 0.0]])
        np.testing.assert_allclose(mdl.A, np.eye(2) + p.sample_time * Ac, rtol=1e-14)
        np.testing.assert_allclose(mdl.B, [[0.0], [p.sample_time / ml2]], rtol=1e-14)
        np.testing.assert_array_equal(mdl.C, np.eye(2))
        np.testing.assert_allclose(mdl.sigma_w, 0.001 * np.eye(2))
        np.testing.assert_allclose(mdl.sigma_v, 0.001 * np.eye(2))
        for j, Aij in mdl.neighbors:
            expect = p.sample_time * p.spring(mdl.id, j) * eps2 / ml2
            np.testing.assert_allclose(Aij, [[0.0, 0.0], [expect, 0.0]], rtol=1e-14)


def test_pendulum_couplings_are_symmetric(pendulum):
    net, _ = pendulum
    for mdl in net:
        for j, Aij in mdl.neighbors:
            np.testing.assert_array_equal(Aij, net[j].coupling(mdl.id))


def test_closed_loop_is_stable(pendulum):
    net, _ = pendulum
    assert np.abs(np.linalg.eigvals(net.closed_loop_matrix())).max() < 1.0


def test_asymmetric_springs_rejected():
    with pytest.raises(ConfigError):
        build_pendulum_benchmark(PendulumParams(springs=((1, 2, 27.0), (2, 1, 30.0))))


# config

def test_config_defaults():
    cfg = ExperimentConfig("known-cov-sweep")
    assert cfg.trials == DEFAULT_TRIALS
    assert cfg.grid == [0.01, 0.1, 1.0, 10.0]
    assert ExperimentConfig("validate").trials is None


@pytest.mark.parametrize("doc", [
    {"kind": "nope"},
    {"kind": "known-cov-sweep", "trials": 0},
    {"kind": "known-cov-sweep", "trials": 2.5},
    {"kind": "known-cov-sweep", "grid": []},
    {"kind": "known-cov-sweep", "grid": [1.0, -1.0]},
    {"kind": "known-cov-sweep", "p_f": 1.0},
    {"kind": "fa-constrained-sweep", "grid": [0.8]},
    {"kind": "known-cov-sweep", "bogus": 1},
    {"grid": [1.0]},
])
def test_config_validation(doc):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(doc)


def test_bad_receiver_and_target():
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig("known-cov-sweep", receiver=9, trials=10))
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig("known-cov-sweep", attack={"target": 9}, trials=10))


# sweeps

def test_known_cov_sweep_trends(known_cov):
    rows = known_cov.rows
    assert [r["sweep_value"] for r in rows] == [0.01, 0.1, 1.0, 10.0]
    for key in ("mi", "analytic"):
        vals = [r[key] for r in rows]
        assert all(a < b for a, b in zip(vals, vals[1:]))


def test_known_cov_sweep_agreement(known_cov):
    for r in known_cov.rows:
        sigma = math.sqrt(r["analytic"] * (1 - r["analytic"]) / r["trials"])
        assert abs(r["empirical"] - r["analytic"]) <= 3 * sigma
        assert 0.0 <= r["empirical"] <= 1.0
        assert r["half_width"] == pytest.approx(binomial_half_width(r["empirical"], r["trials"]))
        assert r["threshold"] == pytest.approx(2.7726, abs=5e-4)
        assert not r["discrepancy"]
    assert known_cov.ok


def test_fa_sweep_trends(fa_sweep):
    mi = [r["mi"] for r in fa_sweep.rows]
    assert all(a >= b for a, b in zip(mi, mi[1:]))
    for r in fa_sweep.rows:
        assert r["margin"] > 0
        assert r["analytic"] <= r["analytic_alt"]
        assert not r["discrepancy"]


def test_adaptive_sweep_small():
    res = run_experiment(ExperimentConfig("adaptive-sweep", grid=[0.1, 10.0], trials=SMALL))
    a, b = res.rows
    assert a["analytic"] < b["analytic"]
    assert a["threshold"] == pytest.approx(b["threshold"])
    assert res.ok


def test_fa_sweep_without_attack():
    res = run_experiment(ExperimentConfig("fa-constrained-sweep", grid=[0.05], attack=None, trials=500))
    assert len(res.rows) == 1
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig("known-cov-sweep", attack=None, trials=10))


def test_user_network_config(pendulum):
    net, _ = pendulum
    cfg = ExperimentConfig("known-cov-sweep", network=net.to_dict(), grid=[1.0], trials=500)
    ref = ExperimentConfig("known-cov-sweep", grid=[1.0], trials=500)
    got, want = run_experiment(cfg).rows[0], run_experiment(ref).rows[0]
    assert got["mi"] == pytest.approx(want["mi"], rel=1e-8)
    assert got["analytic"] == pytest.approx(want["analytic"], rel=1e-8)


def test_agreement_band():
    assert agrees(0.25, 0.25, 100)
    assert agrees(0.0, 0.0, 100)
    assert not agrees(0.25, 0.40, 10_000)
    assert agrees(0.25, 0.25 + 2.5 * math.sqrt(0.25 * 0.75 / 10_000), 10_000)


# csv

def test_csv_round_trip(known_cov, tmp_path):
    path = tmp_path / "out.csv"
    text = emit_csv(known_cov, path)
    assert path.read_bytes().decode("utf-8") == text
    rows = list(csv.reader(io.StringIO(text)))
    assert tuple(rows[0]) == COLUMNS
    assert len(rows) == 1 + len(known_cov.rows)
    for parsed, orig in zip(rows[1:], known_cov.rows):
        for key, cell in zip(COLUMNS, parsed):
            v, w = float(cell), float(orig[key])
            assert abs(v - w) <= 5e-9 * abs(w)
            if abs(w) <= 0.2:
                assert abs(v - w) <= 1e-9


def test_csv_empty_result_is_header_only():
    text = emit_csv(ExperimentResult(kind="known-cov-sweep"))
    assert text == ",".join(COLUMNS) + "\n"


def test_csv_decimal_point(known_cov):
    import locale

    old = locale.setlocale(locale.LC_NUMERIC)
    for name in ("de_DE.UTF-8", "fr_FR.UTF-8"):
        try:
            locale.setlocale(locale.LC_NUMERIC, name)
            break
        except locale.Error:
            continue
    try:
        body = emit_csv(known_cov).splitlines()[1:]
    finally:
        locale.setlocale(locale.LC_NUMERIC, old)
    for line in body:
        for cell in line.split(","):
            float(cell)
    assert any("." in line for line in body)


def test_csv_determinism():
    cfg = dict(kind="known-cov-sweep", grid=[0.1, 1.0], trials=1000, seed=7)
    a = emit_csv(run_experiment(ExperimentConfig(**cfg)))
    b = emit_csv(run_experiment(ExperimentConfig(**cfg)))
    assert a == b
    c = emit_csv(run_experiment(ExperimentConfig(**{**cfg, "seed": 8})))
    assert c != a


# cli

def test_cli_run_writes_csv(tmp_path, capsys):
    cfg = write_config(tmp_path, {"kind": "known-cov-sweep", "grid": [1.0], "trials": 500})
    out = tmp_path / "a.csv"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    assert out.read_text().startswith("sweep_value,")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "b.csv")]) == 0
    assert out.read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_cli_overrides(tmp_path, capsys):
    cfg = write_config(tmp_path, {"kind": "known-cov-sweep", "grid": [1.0], "trials": 500})
    assert main(["run", "--config", cfg, "--trials", "300", "--seed", "5"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert rows[0]["trials"] == "300"


def test_cli_config_errors_exit_2(tmp_path, capsys):
    bad = write_config(tmp_path, {"kind": "known-cov-sweep", "trials": -1})
    assert main(["run", "--config", bad]) == 2
    assert main(["run"]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert main(["run", "--config", str(broken)]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_cli_design(tmp_path):
    cfg = write_config(tmp_path, {"kind": "fa-constrained-sweep", "grid": [0.05]})
    out = tmp_path / "design.json"
    assert main(["design", "--config", cfg, "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc[0]["nu"] == 0.05
    assert doc[0]["schedule"]["neighbors"] == [1, 3, 4]
    assert doc[0]["report"]["feasibility_margins"]["fa_constraint"] > 0


def test_cli_validate_subset(tmp_path, capsys, monkeypatch):
    from privdetect import validation

    monkeypatch.setattr(validation, "CHECKS", {k: validation.CHECKS[k] for k in ("1", "7c", "7d")})
    assert main(["validate"]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0] == "check,status,value,tolerance,detail"
    assert len(text.splitlines()) == 4


def _two_node_doc():
    return {
        "nodes": [{"id": 0, "A": [[0.9, 0.1], [0.0, 0.8]], "B": [[1.0], [0.0]]},
                  {"id": 1, "A": [[0.7, -0.2], [0.1, 0.6]], "B": [[0.0], [1.0]]}],
        "edges": [{"from": 1, "to": 0, "A": [[0.2, 0.05], [-0.1, 0.15]]},
                  {"from": 0, "to": 1, "A": [[0.1, 0.0], [0.05, 0.2]]}],
    }


def test_cli_user_network_with_defaults(tmp_path, capsys):
    doc = {"kind": "known-cov-sweep", "network": _two_node_doc(), "receiver": 0,
           "attack": {"target": 1}, "grid": [1.0], "trials": 500}
    assert main(["run", "--config", write_config(tmp_path, doc)]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 1 and rows[0]["discrepancy"] == "0"


def test_cli_undesignable_network_exits_2(tmp_path, capsys):
    net = _two_node_doc()
    net["nodes"][0]["sigma_w"] = [[0.0, 0.0], [0.0, 0.0]]
    doc = {"kind": "known-cov-sweep", "network": net, "receiver": 0, "attack": {"target": 1}}
    assert main(["run", "--config", write_config(tmp_path, doc)]) == 2
    assert "not controllable" in capsys.readouterr().err
