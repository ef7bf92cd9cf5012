import csv
import json
import random

import numpy as np
import pytest

from trajsets import fileio, orchestrator
from trajsets.model import AircraftState, InvalidInput

from conftest import data_path


def _doc():
    return json.loads(open(data_path("haneda3.json")).read())


def _write(tmp_path, doc, name="s.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return path


class TestScenario:
    def test_bundled(self, haneda):
        assert [r.aircraft_id for r in haneda.aircraft] == ["1", "2", "3"]
        assert haneda.record("1").initial == AircraftState(4.71, -8.42, 16.4, -1.58)
        assert haneda.record("3").t_end == 15
        assert haneda.units == "NM" and haneda.timestep_seconds == 360

    def test_constant_wind_expands(self, haneda):
        rec = haneda.record("1")
        assert len(rec.disturbance) == rec.horizon == 11
        assert {(d.dx, d.dy) for d in rec.disturbance} == {(0.236, 0.236)}

    def test_missing_terminal_state(self, tmp_path):
        doc = _doc()
        del doc["aircraft"][0]["xT"]
        with pytest.raises(fileio.ScenarioError, match=r"aircraft\[0\]\.xT: missing required field"):
            fileio.load_scenario(_write(tmp_path, doc))

    def test_unknown_field(self, tmp_path):
        doc = _doc()
        doc["aircraft"][1]["callsign"] = "JAL1"
        with pytest.raises(fileio.ScenarioError, match=r"aircraft\[1\]\.callsign: unknown field"):
            fileio.load_scenario(_write(tmp_path, doc))
        doc = _doc()
        doc["limits"]["gravity"] = 9.8
        with pytest.raises(fileio.ScenarioError, match=r"limits\.gravity: unknown field"):
            fileio.load_scenario(_write(tmp_path, doc))

    def test_wrong_type(self, tmp_path):
        doc = _doc()
        doc["aircraft"][2]["x0"] = [1, 2, 3]
        with pytest.raises(fileio.ScenarioError, match=r"aircraft\[2\]\.x0"):
            fileio.load_scenario(_write(tmp_path, doc))

    def test_malformed_json_reports_line(self, tmp_path):
        path = _write(tmp_path, '{\n  "limits": {},\n  "aircraft": [,]\n}')
        with pytest.raises(fileio.ScenarioError, match=r"s\.json:3:\d+"):
            fileio.load_scenario(path)

    def test_wind_length_mismatch(self, tmp_path):
        doc = _doc()
        doc["aircraft"][0]["wind"] = [[0.1, 0.1]] * 3
        with pytest.raises(fileio.ScenarioError, match=r"aircraft\[0\]\.wind: expected 11"):
            fileio.load_scenario(_write(tmp_path, doc))

    def test_invalid_limits(self, tmp_path):
        doc = _doc()
        doc["limits"]["v_min"] = 100.0
        with pytest.raises(fileio.ScenarioError, match="limits"):
            fileio.load_scenario(_write(tmp_path, doc))

    def test_save_load_identity(self, haneda, tmp_path):
        path = tmp_path / "again.json"
        fileio.save_scenario(haneda, path)
        again = fileio.load_scenario(path)
        assert fileio.scenario_to_dict(again) == fileio.scenario_to_dict(haneda)
        assert again == haneda


class TestTracks:
    def test_two_rows(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("id,k,x,y\nA,0,0,0\nA,1,1,0\n")
        (traj,) = fileio.import_tracks(path)
        assert [(s.v, s.theta) for s in traj.states] == [(1.0, 0.0), (1.0, 0.0)]

    def test_shuffled_rows(self, tmp_path):
        rows = open(data_path("haneda3_tracks.csv")).read().splitlines()
        header, body = rows[0], rows[1:]
        random.Random(3).shuffle(body)
        path = tmp_path / "shuffled.csv"
        path.write_text("\n".join([header] + body) + "\n")
        assert fileio.import_tracks(path) == fileio.import_tracks(data_path("haneda3_tracks.csv"))

    def test_bundled_lengths(self, haneda):
        tracks = fileio.import_tracks(data_path("haneda3_tracks.csv"))
        assert [len(t.states) for t in tracks] == [12, 12, 14]
        for t in tracks:
            assert np.allclose(t.positions, haneda.record(t.aircraft_id).standard.positions)

    def test_gap_in_steps(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("id,k,x,y\nA,0,0,0\nA,2,1,0\n")
        with pytest.raises(InvalidInput, match="not contiguous"):
            fileio.import_tracks(path)

    def test_missing_column(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("id,x,y\nA,0,0\n")
        with pytest.raises(InvalidInput, match="'k'"):
            fileio.import_tracks(path)

    def test_explicit_state_columns(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("id,k,x,y,v,theta\nA,0,0,0,5,0.5\nA,1,1,0,6,0.25\n")
        (traj,) = fileio.import_tracks(path)
        assert traj.states[1] == AircraftState(1, 0, 6, 0.25)


class TestExports:
    @pytest.mark.parametrize("name", ["c.csv", "c.json"])
    def test_corridor_round_trip(self, planned, tmp_path, name):
        cors = planned.latest.atc.corridors
        path = tmp_path / name
        fileio.export_corridors(planned.latest.atc, path)
        back = fileio.import_corridors(path)
        for a, b in zip(sorted(cors, key=lambda c: c.aircraft_id), back):
            assert a.aircraft_id == b.aircraft_id and a.t_start == b.t_start
            assert np.max(np.abs(a.radii - b.radii)) <= 1e-9
            assert np.max(np.abs(a.centers - b.centers)) <= 1e-9

    def test_corridor_rows(self, planned, haneda, tmp_path):
        path = tmp_path / "c.csv"
        fileio.export_corridors(planned.latest.atc, path)
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == sum(r.t_end - r.t_start + 1 for r in haneda.aircraft)
        keys = [(r["aircraft_id"], int(r["k"])) for r in rows]
        assert keys == sorted(keys)

    def test_exports_are_deterministic(self, planned, tmp_path):
        for i in range(2):
            fileio.export_corridors(planned.latest.atc, tmp_path / f"c{i}.csv")
            fileio.export_trajectories(planned.selections, tmp_path / f"t{i}.csv")
        assert (tmp_path / "c0.csv").read_bytes() == (tmp_path / "c1.csv").read_bytes()
        assert (tmp_path / "t0.csv").read_bytes() == (tmp_path / "t1.csv").read_bytes()

    @pytest.mark.parametrize("name", ["t.csv", "t.json"])
    def test_trajectory_round_trip(self, planned, tmp_path, name):
        path = tmp_path / name
        fileio.export_trajectories(planned.latest.pilots, path)
        back = {t.aircraft_id: t for t in fileio.import_trajectories(path)}
        for aid, sel in planned.selections.items():
            got = np.array([s.as_array() for s in back[aid].states])
            want = np.array([s.as_array() for s in sel.states])
            assert np.max(np.abs(got - want)) <= 1e-9
            assert len(back[aid].controls) == len(sel.controls)

    def test_last_state_has_no_control(self, planned, tmp_path):
        path = tmp_path / "t.csv"
        fileio.export_trajectories(planned.selections, path)
        with open(path) as fh:
            rows = [r for r in csv.DictReader(fh) if r["aircraft_id"] == "1"]
        assert rows[-1]["u"] == rows[-1]["psi"] == ""
        assert all(r["u"] != "" for r in rows[:-1])

    def test_audit_through_exports(self, planned, tmp_path):
        assert orchestrator.verify(planned).passed
        fileio.export_corridors(planned.latest.atc, tmp_path / "c.csv")
        fileio.export_trajectories(planned.selections, tmp_path / "t.csv")
        cors = fileio.import_corridors(tmp_path / "c.csv")
        sels = {t.aircraft_id: t for t in fileio.import_trajectories(tmp_path / "t.csv")}
        rep = orchestrator.audit(cors, sels, planned.scenario.limits)
        assert rep.passed, rep.failures

    def test_negative_zero(self):
        assert fileio.fmt(-0.0) == fileio.fmt(-1e-12) == "0.000000000"
        assert fileio.fmt(-1.5) == "-1.500000000"


class TestRunRecord:
    def test_lossless_round_trip(self, replanned, tmp_path):
        path = tmp_path / "run.json"
        meta = {"solver": {"rng_seed": 0}}
        fileio.save_run_record(replanned, path, meta)
        loaded, got_meta = fileio.load_run_record(path)
        assert got_meta == meta
        assert fileio.dumps_run_record(loaded, meta) == path.read_text()
        a, b = replanned.latest.atc.result, loaded.latest.atc.result
        assert np.array_equal(a.x_opt, b.x_opt) and a.trace == b.trace
        assert loaded.selections["2"] == replanned.selections["2"]

    def test_non_finite_values(self, planned):
        cycle = planned.latest
        res = cycle.atc.result
        weird = type(res)(res.x_opt, res.objective_value, res.max_constraint_violation, res.status, float("inf"), res.trace)
        atc_sol = type(cycle.atc)(cycle.atc.corridors, cycle.atc.controls, weird, cycle.atc.residuals, cycle.scenario)
        text = fileio.dumps_run_record(orchestrator.with_cycle(planned, 0, atc=atc_sol))
        json.loads(text)  # strict JSON, no Infinity literal
        assert "Infinity" not in text
        loaded = fileio.session_from_dict(json.loads(text))
        assert loaded.latest.atc.result.stationarity == float("inf")

    def test_version_check(self, planned):
        doc = fileio.session_to_dict(planned)
        doc["version"] = 99
        with pytest.raises(InvalidInput, match="version"):
            fileio.session_from_dict(doc)
