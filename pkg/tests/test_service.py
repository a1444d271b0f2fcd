"""HTTP/WebSocket session-service tests, including scripted-client equivalence."""

import math

import numpy as np
import pytest
from fastapi.testclient import TestClient

from prefloop.controller import ControllerConfig, run_closed_loop
from prefloop.plant import PlantModel
from prefloop.preference import LinkFunction, PreferenceOracle, QuadraticTracking
from prefloop.service import SessionManager, create_app


QUAD_SESSION = {
    "plant": {"A": [[0.1, 1.0], [0.0, 0.1]], "B": [[1.0, 0.0], [0.0, 1.0]]},
    "utility": {"kind": "quadratic-tracking", "x_ref": [100.0, 100.0]},
    "eta": 0.1,
    "delta": 0.5,
    "horizon": 40,
    "u0": [0.0, 0.0],
    "seed": 0,
    "u_box": None,
}


@pytest.fixture()
def client():
    return TestClient(create_app())


def create(client, **overrides):
    body = dict(QUAD_SESSION)
    body.update(overrides)
    r = client.post("/sessions", json=body)
    assert r.status_code == 201, r.text
    return r.json()


class TestSessionLifecycle:
    def test_create_thermal_preset(self, client):
        r = client.post("/sessions", json={"preset": "thermal", "horizon": 10})
        assert r.status_code == 201
        body = r.json()
        assert body["status"] == "awaiting-feedback"
        assert body["step"] == 1
        assert body["safety_box"] is True
        prompt = client.get(f"/sessions/{body['session_id']}/prompt").json()
        assert prompt["step"] == 1
        # thermal prompt exposes exactly one observable: the temperature
        assert len(prompt["current"]["observables"]) == 1

    def test_distinct_ids(self, client):
        a = create(client)["session_id"]
        b = create(client)["session_id"]
        assert a != b

    def test_invalid_config_rejected(self, client):
        r = client.post("/sessions", json={**QUAD_SESSION, "u0": [0.0]})
        assert r.status_code == 400
        assert "dimension" in r.json()["detail"]

    def test_unknown_preset(self, client):
        r = client.post("/sessions", json={"preset": "nuclear"})
        assert r.status_code == 400

    def test_unknown_session_404(self, client):
        assert client.get("/sessions/deadbeef/prompt").status_code == 404
        assert client.get("/sessions/deadbeef/log").status_code == 404
        r = client.post("/sessions/deadbeef/feedback",
                        json={"step": 1, "choice": "current"})
        assert r.status_code == 404

    def test_capacity(self):
        app = create_app(SessionManager(capacity=2))
        c = TestClient(app)
        for _ in range(2):
            assert c.post("/sessions", json=dict(QUAD_SESSION)).status_code == 201
        assert c.post("/sessions", json=dict(QUAD_SESSION)).status_code == 503


class TestPromptAndFeedback:
    def test_prompt_idempotent(self, client):
        sid = create(client)["session_id"]
        a = client.get(f"/sessions/{sid}/prompt").json()
        b = client.get(f"/sessions/{sid}/prompt").json()
        assert a == b

    def test_prompt_hides_latent_utility(self, client):
        sid = create(client)["session_id"]
        prompt = client.get(f"/sessions/{sid}/prompt").json()
        flat = str(prompt)
        assert "utility" not in flat and "dist" not in flat

    def test_feedback_advances(self, client):
        sid = create(client)["session_id"]
        p1 = client.get(f"/sessions/{sid}/prompt").json()
        ack = client.post(f"/sessions/{sid}/feedback",
                          json={"step": p1["step"], "choice": "current"}).json()
        assert ack["status"] == "awaiting-feedback"
        p2 = client.get(f"/sessions/{sid}/prompt").json()
        assert p2["step"] == p1["step"] + 1
        assert p2 != p1

    def test_stale_step_conflict(self, client):
        sid = create(client)["session_id"]
        r = client.post(f"/sessions/{sid}/feedback",
                        json={"step": 99, "choice": "current"})
        assert r.status_code == 409

    def test_duplicate_submit_rejected(self, client):
        sid = create(client)["session_id"]
        ok = client.post(f"/sessions/{sid}/feedback",
                         json={"step": 1, "choice": "current"})
        assert ok.status_code == 200
        dup = client.post(f"/sessions/{sid}/feedback",
                          json={"step": 1, "choice": "previous"})
        assert dup.status_code == 409
        log = client.get(f"/sessions/{sid}/log").json()
        assert [row["feedback"] for row in log["rows"]] == [None, 1]

    def test_malformed_requests(self, client):
        sid = create(client)["session_id"]
        assert client.post(f"/sessions/{sid}/feedback",
                           json={"step": 1, "choice": "maybe"}).status_code == 400
        assert client.post(f"/sessions/{sid}/feedback",
                           json={"choice": "current"}).status_code == 400
        assert client.post(f"/sessions/{sid}/feedback",
                           json={"step": "one", "choice": "current"}).status_code == 400

    def test_update_step_size(self, client):
        sid = create(client)["session_id"]
        ack = client.post(f"/sessions/{sid}/feedback",
                          json={"step": 1, "choice": "current"}).json()
        u_after = np.array(ack["input"])
        gain = QUAD_SESSION["eta"] / (2 * QUAD_SESSION["delta"])
        assert np.linalg.norm(u_after - np.array(QUAD_SESSION["u0"])) == pytest.approx(gain)

    def test_finish_and_gone(self, client):
        sid = create(client, horizon=4)["session_id"]
        for step in (1, 2, 3):
            r = client.post(f"/sessions/{sid}/feedback",
                            json={"step": step, "choice": "previous"})
            assert r.status_code == 200
        assert client.get(f"/sessions/{sid}/prompt").status_code == 410
        assert client.post(f"/sessions/{sid}/feedback",
                           json={"step": 4, "choice": "current"}).status_code == 410
        log = client.get(f"/sessions/{sid}/log").json()
        assert log["status"] == "finished"
        assert len(log["rows"]) == 4
        assert [row["k"] for row in log["rows"]] == [0, 1, 2, 3]

    def test_export_csv(self, client):
        sid = create(client, horizon=3)["session_id"]
        for step in (1, 2):
            client.post(f"/sessions/{sid}/feedback",
                        json={"step": step, "choice": "current"})
        text = client.get(f"/sessions/{sid}/export").text
        lines = text.splitlines()
        assert lines[0] == "k,x_0,x_1,u_0,u_1,v_0,v_1,feedback,utility,lyapunov,dist_to_opt"
        assert len(lines) == 4


class TestUpdateLawFidelity:
    def test_replay_matches_dueling_update(self, client):
        """The session's u-sequence is exactly the controller update law."""
        sid = create(client, horizon=30)["session_id"]
        rng = np.random.default_rng(123)
        choices = ["current" if rng.random() < 0.5 else "previous" for _ in range(29)]
        for step, choice in enumerate(choices, start=1):
            r = client.post(f"/sessions/{sid}/feedback",
                            json={"step": step, "choice": choice})
            assert r.status_code == 200
        gain = QUAD_SESSION["eta"] / (2 * QUAD_SESSION["delta"])
        # replay: u_{k+1} = u_k + gain * feedback * v_k from the logged v draws
        text = client.get(f"/sessions/{sid}/export").text.splitlines()[1:]
        parsed = [line.split(",") for line in text]
        u = np.array([float(parsed[0][3]), float(parsed[0][4])])
        for row in parsed[1:]:
            np.testing.assert_allclose([float(row[3]), float(row[4])], u, atol=1e-15)
            fb = int(row[7])
            v = np.array([float(row[5]), float(row[6])])
            u = u + gain * fb * v

    def test_session_matches_simulator_given_same_seed_and_feedback(self, client):
        """Re-feeding the simulator's feedback sequence reproduces its u path."""
        model = PlantModel(A=QUAD_SESSION["plant"]["A"], B=QUAD_SESSION["plant"]["B"])
        utility = QuadraticTracking(x_ref=[100.0, 100.0])
        oracle = PreferenceOracle(LinkFunction("logistic"), utility, seed=99)
        config = ControllerConfig(eta=0.1, delta=0.5, horizon=25, u0=[0.0, 0.0])
        sim = run_closed_loop(model, oracle, config, rng=4242)
        sid = create(client, horizon=25, seed=4242)["session_id"]
        for step in range(1, 25):
            choice = "current" if sim.feedback[step] == 1 else "previous"
            assert client.post(f"/sessions/{sid}/feedback",
                               json={"step": step, "choice": choice}).status_code == 200
        rows = client.get(f"/sessions/{sid}/log").json()["rows"]
        for step in range(25):
            np.testing.assert_allclose(rows[step]["observables"], sim.x[step],
                                       atol=1e-12)


class TestStreaming:
    def test_replay_then_live(self, client):
        sid = create(client, horizon=6)["session_id"]
        client.post(f"/sessions/{sid}/feedback", json={"step": 1, "choice": "current"})
        with client.websocket_connect(f"/sessions/{sid}/stream") as ws:
            first = ws.receive_json()
            second = ws.receive_json()
            assert first["k"] == 0 and second["k"] == 1
        for step in (2, 3, 4, 5):
            client.post(f"/sessions/{sid}/feedback",
                        json={"step": step, "choice": "previous"})
        with client.websocket_connect(f"/sessions/{sid}/stream") as ws:
            ks = [ws.receive_json()["k"] for _ in range(6)]
        assert ks == [0, 1, 2, 3, 4, 5]

    def test_unknown_session_closes(self, client):
        with pytest.raises(Exception):
            with client.websocket_connect("/sessions/nope/stream") as ws:
                ws.receive_json()


class TestScriptedClientEquivalence:
    def test_final_error_statistics(self, client):
        """20 scripted logistic sessions match the headless simulator within 4 sigma."""
        model = PlantModel(A=QUAD_SESSION["plant"]["A"], B=QUAD_SESSION["plant"]["B"])
        utility = QuadraticTracking(x_ref=[100.0, 100.0])
        T = 300
        u_star = np.array([-10.0, 90.0])
        link = LinkFunction("logistic")

        sim_final = []
        for s in range(20):
            oracle = PreferenceOracle(link, utility, seed=1000 + s)
            config = ControllerConfig(eta=0.1, delta=0.5, horizon=T, u0=[0.0, 0.0])
            rec = run_closed_loop(model, oracle, config, rng=2000 + s)
            sim_final.append(float(np.linalg.norm(rec.u[-1] - u_star)))

        web_final = []
        for s in range(20):
            policy_rng = np.random.default_rng(5000 + s)
            sid = create(client, horizon=T, seed=6000 + s)["session_id"]
            for step in range(1, T):
                prompt = client.get(f"/sessions/{sid}/prompt").json()
                cur = np.array(prompt["current"]["observables"])
                prev = np.array(prompt["previous"]["observables"])
                # client-side Bradley-Terry policy from the shown observables
                phi_cur = float(np.sum((cur - [100.0, 100.0]) ** 2))
                phi_prev = float(np.sum((prev - [100.0, 100.0]) ** 2))
                p_current = 1.0 / (1.0 + math.exp(max(min(phi_cur - phi_prev, 700), -700)))
                choice = "current" if policy_rng.random() < p_current else "previous"
                r = client.post(f"/sessions/{sid}/feedback",
                                json={"step": step, "choice": choice})
                assert r.status_code == 200
            text = client.get(f"/sessions/{sid}/export").text.splitlines()
            last = text[-1].split(",")
            u_final = np.array([float(last[3]), float(last[4])])
            web_final.append(float(np.linalg.norm(u_final - u_star)))

        sim_final, web_final = np.array(sim_final), np.array(web_final)
        se = math.sqrt(sim_final.var(ddof=1) / 20 + web_final.var(ddof=1) / 20)
        assert abs(sim_final.mean() - web_final.mean()) < 4.0 * se
