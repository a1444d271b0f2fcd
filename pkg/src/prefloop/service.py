"""Live human-in-the-loop session service.

Each session owns a running plant and controller. The plant advances exactly
one step per answered comparison (the update law is synchronous in k), and
the prompt shown to the human exposes only experience-level observables —
never the latent utility value or the optimum.

HTTP JSON API:
    POST /sessions                      create (201)
    GET  /sessions/{id}/prompt          pending comparison (200 / 404 / 410)
    POST /sessions/{id}/feedback        {step, choice} (200 / 404 / 409 / 400)
    GET  /sessions/{id}/log             full step log
    GET  /sessions/{id}/export          trajectory CSV (finished sessions)
    WS   /sessions/{id}/stream          row events, replay-from-0 then live
"""

from __future__ import annotations

import asyncio
import io
import math
import secrets
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from fastapi.responses import PlainTextResponse

from .comfort import PmvEnvironment
from .controller import ControllerConfig, sample_unit_sphere
from .harness import ConfigError, builtin_configs
from .plant import PlantModel, load_plant, steady_state_map
from .preference import LatentUtility, PpdComfort, QuadraticTracking

__all__ = ["Session", "SessionManager", "create_app", "app"]

MAX_SESSIONS = 64

#: default actuator limits for the thermal preset (heating power)
THERMAL_U_BOX = ([0.0], [60.0])


@dataclass
class SessionRow:
    k: int
    x: list
    u: list
    v: list
    applied: list
    feedback: int | None
    utility: float
    clamped: bool

    def public(self) -> dict:
        """Row as exposed over the API: no latent utility value."""
        return {
            "k": self.k,
            "observables": self.x,
            "applied_input": self.applied,
            "feedback": self.feedback,
            "clamped": self.clamped,
        }


@dataclass
class Session:
    """One live session: plant, controller memory, pending comparison, log."""

    id: str
    model: PlantModel
    utility: LatentUtility
    config: ControllerConfig
    rng: np.random.Generator
    observable_indices: list[int]
    safety_box: bool
    status: str = "advancing"
    k: int = 0                      # step of the pending comparison
    rows: list[SessionRow] = field(default_factory=list)
    _event: asyncio.Event | None = None

    # live operating-point memory
    x: np.ndarray | None = None        # state after the latest advance
    u: np.ndarray | None = None        # nominal input u_k
    v: np.ndarray | None = None        # exploration v_k
    cur_phi: float = math.nan
    prev_phi: float = math.nan
    prev_obs: list | None = None

    def start(self) -> None:
        """Priming step plus the first advance; leaves k = 1 awaiting feedback."""
        self.u = self.config.u0.copy()
        x0 = steady_state_map(self.model, self.u)
        # priming: apply u0 + delta v0, record its utility, no update
        v = sample_unit_sphere(self.model.n_u, self.rng)
        applied = self.u + self.config.delta * v
        x1 = self.model.A @ x0 + self.model.B @ applied
        phi = float(self.utility.value(x1, applied))
        self._append(SessionRow(k=0, x=self._observe(x1), u=self.u.tolist(),
                                v=v.tolist(), applied=applied.tolist(),
                                feedback=None, utility=phi, clamped=False))
        self.x, self.prev_phi = x1, phi
        self.prev_obs = self._observe(x1)
        self.k = 1
        if self.config.horizon <= 1:
            self.status = "finished"
            self._notify()
            return
        self._advance()

    def _observe(self, x: np.ndarray) -> list:
        return [float(x[i]) for i in self.observable_indices]

    def _advance(self) -> None:
        """One plant step with the freshly perturbed input; pose the comparison."""
        self.status = "advancing"
        self.v = sample_unit_sphere(self.model.n_u, self.rng)
        applied = self.u + self.config.delta * self.v
        self.x = self.model.A @ self.x + self.model.B @ applied
        self.cur_phi = float(self.utility.value(self.x, applied))
        self.status = "awaiting-feedback"
        self._notify()

    def prompt(self) -> dict:
        if self.status == "finished":
            raise LookupError("session finished")
        applied = self.u + self.config.delta * self.v
        return {
            "session_id": self.id,
            "step": self.k,
            "current": {"observables": self._observe(self.x)},
            "previous": {"observables": list(self.prev_obs)},
            "applied_input": applied.tolist(),
        }

    def submit(self, step: int, choice: str) -> dict:
        if choice not in ("current", "previous"):
            raise ValueError(f"choice must be 'current' or 'previous', got {choice!r}")
        if self.status == "finished":
            raise LookupError("session finished")
        if step != self.k:
            raise StaleStepError(self.k)
        feedback = 1 if choice == "current" else -1
        applied = self.u + self.config.delta * self.v
        self._append(SessionRow(
            k=self.k, x=self._observe(self.x), u=self.u.tolist(),
            v=self.v.tolist(), applied=applied.tolist(),
            feedback=feedback, utility=self.cur_phi, clamped=False,
        ))
        u_next = self.u + self.config.gain * feedback * self.v
        clamped = False
        if self.config.u_box is not None:
            lo, hi = self.config.u_box
            bounded = np.clip(u_next, lo, hi)
            clamped = bool(np.any(bounded != u_next))
            u_next = bounded
        self.rows[-1].clamped = clamped
        self.u = u_next
        self.prev_phi = self.cur_phi
        self.prev_obs = self.rows[-1].x
        self.k += 1
        if self.k >= self.config.horizon:
            self.status = "finished"
            self._notify()
        else:
            self._advance()
        return {
            "session_id": self.id,
            "status": self.status,
            "step": self.k if self.status != "finished" else self.k - 1,
            "input": self.u.tolist(),
            "clamped": clamped,
        }

    # -- streaming ----------------------------------------------------------

    def _notify(self) -> None:
        if self._event is not None:
            old, self._event = self._event, asyncio.Event()
            old.set()

    def event(self) -> asyncio.Event:
        if self._event is None:
            self._event = asyncio.Event()
        return self._event

    def _append(self, row: SessionRow) -> None:
        self.rows.append(row)
        self._notify()

    # -- export --------------------------------------------------------------

    def export_csv(self) -> str:
        """Trajectory in the harness CSV format (utility included, no optimum)."""
        n_x = len(self.observable_indices)
        n_u = self.model.n_u
        cols = (["k"] + [f"x_{i}" for i in range(n_x)]
                + [f"u_{i}" for i in range(n_u)] + [f"v_{i}" for i in range(n_u)]
                + ["feedback", "utility", "lyapunov", "dist_to_opt"])
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        for r in self.rows:
            cells = [str(r.k)]
            cells += [repr(v) for v in r.x]
            cells += [repr(v) for v in r.u]
            cells += [repr(v) for v in r.v]
            cells.append("" if r.feedback is None else str(r.feedback))
            cells.append(repr(r.utility))
            cells += ["", ""]
            buf.write(",".join(cells) + "\n")
        return buf.getvalue()


class StaleStepError(Exception):
    def __init__(self, pending: int):
        self.pending = pending
        super().__init__(f"pending step is {pending}")


def _build_session(body: dict) -> Session:
    """Session from a preset name and/or inline config subset."""
    doc = dict(body or {})
    preset = doc.pop("preset", None)
    base: dict = {}
    if preset is not None:
        builtins = builtin_configs()
        if preset not in builtins:
            raise ConfigError(f"unknown preset {preset!r}; "
                              f"available: {sorted(builtins)}")
        b = builtins[preset]
        base = {"plant": b.plant, "utility": b.utility, "eta": b.eta,
                "delta": b.delta, "horizon": b.horizon, "u0": list(b.u0)}
        if preset == "thermal":
            base["u_box"] = THERMAL_U_BOX
    base.update(doc)
    for key in ("plant", "utility", "eta", "delta", "horizon", "u0"):
        if key not in base:
            raise ConfigError(f"missing required session field {key!r}")

    if "data" in base["plant"]:
        from .harness import load_thermal_plant
        model, _ = load_thermal_plant()
    else:
        model, _ = load_plant(base["plant"])

    ukind = base["utility"].get("kind")
    if ukind == "quadratic-tracking":
        utility: LatentUtility = QuadraticTracking(
            x_ref=np.asarray(base["utility"]["x_ref"], dtype=float))
        if utility.x_ref.shape[0] != model.n_x:
            raise ConfigError(
                f"x_ref has dimension {utility.x_ref.shape[0]}, "
                f"plant expects n_x = {model.n_x}")
        observables = list(range(model.n_x))
    elif ukind == "ppd-comfort":
        env = PmvEnvironment(**base["utility"].get("env", {}))
        idx = int(base["utility"].get("state_index", 0))
        if not 0 <= idx < model.n_x:
            raise ConfigError(f"state_index {idx} out of range for n_x = {model.n_x}")
        utility = PpdComfort(env=env, state_index=idx)
        observables = [idx]
    else:
        raise ConfigError(f"unknown utility kind {ukind!r}")

    u0 = np.asarray(base["u0"], dtype=float).reshape(-1)
    if u0.shape[0] != model.n_u:
        raise ConfigError(f"u0 has dimension {u0.shape[0]}, plant expects n_u = {model.n_u}")

    # safety box defaults ON for human sessions (u0 +- 100 unless given)
    box = base.get("u_box", "default")
    if box == "default":
        box = (u0 - 100.0, u0 + 100.0)
        safety = True
    elif box is None or box is False:
        box = None
        safety = False
    else:
        box = (np.asarray(box[0], float), np.asarray(box[1], float))
        safety = True
    try:
        cfg = ControllerConfig(eta=float(base["eta"]), delta=float(base["delta"]),
                               horizon=int(base["horizon"]), u0=u0, u_box=box)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    return Session(
        id=secrets.token_hex(8),
        model=model, utility=utility, config=cfg,
        rng=np.random.default_rng(base.get("seed")),
        observable_indices=observables,
        safety_box=safety,
    )


@dataclass
class SessionManager:
    sessions: dict[str, Session] = field(default_factory=dict)
    capacity: int = MAX_SESSIONS

    def create(self, body: dict) -> Session:
        if len(self.sessions) >= self.capacity:
            raise CapacityError(f"session capacity {self.capacity} exceeded")
        s = _build_session(body)
        s.start()
        self.sessions[s.id] = s
        return s

    def get(self, sid: str) -> Session:
        if sid not in self.sessions:
            raise KeyError(sid)
        return self.sessions[sid]


class CapacityError(Exception):
    pass


def create_app(manager: SessionManager | None = None) -> FastAPI:
    manager = manager or SessionManager()
    app = FastAPI(title="prefloop session service")
    app.state.manager = manager

    def _get(sid: str) -> Session:
        try:
            return manager.get(sid)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown session {sid!r}")

    @app.post("/sessions", status_code=201)
    async def create_session(body: dict | None = None):
        try:
            s = manager.create(body or {})
        except CapacityError as exc:
            raise HTTPException(status_code=503, detail=str(exc))
        except (ConfigError, ValueError, TypeError, KeyError) as exc:
            raise HTTPException(status_code=400, detail=f"invalid session config: {exc}")
        return {"session_id": s.id, "status": s.status, "step": s.k,
                "horizon": s.config.horizon, "safety_box": s.safety_box}

    @app.get("/sessions/{sid}/prompt")
    async def get_prompt(sid: str):
        s = _get(sid)
        try:
            return s.prompt()
        except LookupError:
            raise HTTPException(status_code=410, detail="session finished")

    @app.post("/sessions/{sid}/feedback")
    async def submit_feedback(sid: str, body: dict):
        s = _get(sid)
        if not isinstance(body, dict) or "step" not in body or "choice" not in body:
            raise HTTPException(status_code=400,
                                detail="body must contain 'step' and 'choice'")
        step = body["step"]
        if not isinstance(step, int):
            raise HTTPException(status_code=400, detail="'step' must be an integer")
        try:
            return s.submit(step, body["choice"])
        except StaleStepError as exc:
            raise HTTPException(status_code=409,
                                detail=f"stale step {step}; pending step is {exc.pending}")
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        except LookupError:
            raise HTTPException(status_code=410, detail="session finished")

    @app.get("/sessions/{sid}/log")
    async def get_log(sid: str):
        s = _get(sid)
        return {"session_id": s.id, "status": s.status,
                "safety_box": s.safety_box,
                "rows": [r.public() for r in s.rows]}

    @app.get("/sessions/{sid}/export")
    async def export(sid: str):
        s = _get(sid)
        return PlainTextResponse(s.export_csv(), media_type="text/csv")

    @app.websocket("/sessions/{sid}/stream")
    async def stream(ws: WebSocket, sid: str):
        try:
            s = manager.get(sid)
        except KeyError:
            await ws.close(code=4404)
            return
        await ws.accept()
        i = 0
        try:
            while True:
                while i < len(s.rows):
                    await ws.send_json(s.rows[i].public())
                    i += 1
                if s.status == "finished":
                    break
                # wait for the next row, but notice a client disconnect too
                waiter = asyncio.ensure_future(s.event().wait())
                receiver = asyncio.ensure_future(ws.receive())
                done, pending = await asyncio.wait(
                    {waiter, receiver}, return_when=asyncio.FIRST_COMPLETED)
                for task in pending:
                    task.cancel()
                if receiver in done:
                    msg = receiver.result()
                    if msg.get("type") == "websocket.disconnect":
                        return
            await ws.close()
        except WebSocketDisconnect:
            pass

    return app


app = create_app()
