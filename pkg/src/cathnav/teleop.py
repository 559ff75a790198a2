"""Websocket teleoperation service for manual cannulation.

Hosts ``/ws`` plus the static browser UI.  A single operator drives the
environment: the simulation advances at a fixed tick applying the latest
received command (zero-order hold), and every tick broadcasts the state
(link positions, tip, goal, distance, reward, force magnitude, optional
rendered frame).  Wall-clock jitter never reaches the simulation: ticks are
indexed, and physics time advances by the fixed step per tick.

While recording, each tick's force samples append to a force-log CSV that
the validate-forces pipeline consumes; the file closes on record-off (or
disconnect).  A second concurrent client is rejected; when the operator
disconnects the environment pauses.
"""

from __future__ import annotations

import asyncio
import base64
import json
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import FileResponse, HTMLResponse
from fastapi.staticfiles import StaticFiles

from .env import CathNavEnv, EnvConfig
from .forces import FORCE_LOG_HEADER, format_force_row

FALLBACK_PAGE = """<!doctype html>
<html><head><meta charset="utf-8"><title>cathnav teleop</title></head>
<body><h3>cathnav teleop service</h3>
<p>The browser client bundle was not found. Build the frontend
(<code>npm run build</code> in <code>frontend/</code>) and restart with
<code>--ui-dir</code>, or connect to <code>/ws</code> directly.</p>
</body></html>"""


class TeleopSession:
    """Single-operator simulation session driven by an asyncio tick loop."""

    def __init__(self, env_config: EnvConfig, tick_rate: float = 25.0,
                 record_dir=None, stream_frames: bool = False):
        self.env_config = env_config
        self.env = CathNavEnv(env_config)
        self.tick_period = 1.0 / tick_rate
        self.record_dir = Path(record_dir) if record_dir else Path.cwd()
        self.stream_frames = stream_frames
        self.command = np.zeros(self.env.action_dim)
        self.tick = 0
        self.step_idx = 0
        self.recording = False
        self._record_fh = None
        self.last_recording: Path | None = None
        self._episode_done = True
        self._last_result = None

    # -- message handling ---------------------------------------------------

    def handle_message(self, msg: dict) -> dict | None:
        kind = msg.get("type")
        if kind == "command":
            bend = np.asarray(msg.get("bend", []), dtype=float)
            cmd = np.zeros(self.env.action_dim)
            n = min(len(bend), self.env.action_dim - 1)
            cmd[:n] = np.clip(bend[:n], -1.0, 1.0)
            cmd[-1] = float(np.clip(msg.get("insert", 0.0), -1.0, 1.0))
            self.command = cmd
            return None
        if kind == "reset":
            self.reset(msg.get("seed"))
            return {"type": "info", "message": "reset"}
        if kind == "record":
            return self.set_recording(bool(msg.get("on", False)))
        return {"type": "error", "reason": f"unknown message type {kind!r}"}

    def reset(self, seed=None) -> None:
        self.env.reset(seed)
        self.command = np.zeros(self.env.action_dim)
        self.step_idx = 0
        self._episode_done = False
        self._last_result = None

    def set_recording(self, on: bool) -> dict:
        if on and not self.recording:
            self.record_dir.mkdir(parents=True, exist_ok=True)
            path = self.record_dir / f"teleop_forces_{self.tick:08d}.csv"
            self._record_fh = open(path, "w")
            self._record_fh.write(FORCE_LOG_HEADER + "\n")
            self.last_recording = path
            self.recording = True
            return {"type": "info", "message": f"recording to {path.name}"}
        if not on and self.recording:
            self._record_fh.close()
            self._record_fh = None
            self.recording = False
            return {"type": "info", "message": "recording closed"}
        return {"type": "info", "message": "recording unchanged"}

    # -- stepping -------------------------------------------------------------

    def advance(self) -> dict:
        """One tick: apply the held command, step physics, build the state."""
        self.tick += 1
        if self._episode_done:
            if self.env.state is None:
                self.reset(self.env_config.seed)
            else:
                return self.state_message()
        res = self.env.step(self.command)
        self._last_result = res
        self.step_idx += 1
        if self.recording and self._record_fh is not None:
            for s in res.info["force_samples"]:
                self._record_fh.write(format_force_row(s) + "\n")
            self._record_fh.flush()
        if res.terminated or res.truncated:
            self._episode_done = True
        return self.state_message()

    def state_message(self) -> dict:
        p0, p1 = self.env.link_segments()
        links = np.vstack([p0, p1[-1:]])
        res = self._last_result
        ft = 0.0
        n_contacts = 0
        reward = 0.0
        d = float(np.linalg.norm(self.env.tip_position() - self.env.goal))
        if res is not None:
            ft = float(sum(s.magnitude for s in res.info["force_samples"]))
            n_contacts = int(res.info["n_contacts"])
            reward = float(res.reward)
            d = float(res.info["distance"])
        msg = {"type": "state", "tick": self.tick, "step": self.step_idx,
               "links": [[float(v) for v in row] for row in links],
               "tip": [float(v) for v in self.env.tip_position()],
               "goal": [float(v) for v in self.env.goal],
               "d": d, "reward": reward, "f_t": ft,
               "contacts": n_contacts, "recording": self.recording,
               "done": self._episode_done}
        if self.stream_frames:
            Rw, pw, _, _ = self.env._fk()
            frame = self.env._render(Rw, pw)
            msg["frame"] = {"w": frame.shape[1], "h": frame.shape[0],
                            "b64": base64.b64encode(frame.tobytes()).decode()}
        return msg

    def hello_message(self) -> dict:
        b = self.env.aorta.bounds
        return {"type": "hello", "arch_kind": self.env_config.arch_kind,
                "target": self.env_config.target,
                "n_links": self.env.spec.n_links,
                "n_bend": 2 * self.env.spec.n_tip,
                "tick_rate": 1.0 / self.tick_period,
                "bounds": [float(v) for v in b]}

    def close(self) -> None:
        if self._record_fh is not None:
            self._record_fh.close()
            self._record_fh = None
            self.recording = False


def make_app(env_config: EnvConfig, tick_rate: float = 25.0,
             record_dir=None, ui_dir=None,
             stream_frames: bool = False) -> FastAPI:
    app = FastAPI(title="cathnav teleop")
    session = TeleopSession(env_config, tick_rate, record_dir, stream_frames)
    app.state.session = session
    busy = {"ws": None}

    @app.get("/", response_class=HTMLResponse)
    def index():
        if ui_dir and (Path(ui_dir) / "index.html").exists():
            return HTMLResponse((Path(ui_dir) / "index.html").read_text())
        return HTMLResponse(FALLBACK_PAGE)

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir)), name="ui")

    @app.get("/recordings/latest.csv")
    def latest_recording():
        if session.last_recording and session.last_recording.exists():
            return FileResponse(str(session.last_recording),
                                media_type="text/csv",
                                filename=session.last_recording.name)
        return HTMLResponse("no recording yet", status_code=404)

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        if busy["ws"] is not None:
            await ws.send_json({"type": "error",
                                "reason": "single-operator session in use"})
            await ws.close()
            return
        busy["ws"] = ws
        session.reset(env_config.seed)
        await ws.send_json(session.hello_message())
        stop = asyncio.Event()

        async def sim_loop():
            while not stop.is_set():
                msg = session.advance()
                try:
                    await ws.send_json(msg)
                except Exception:
                    return
                await asyncio.sleep(session.tick_period)

        loop_task = asyncio.create_task(sim_loop())
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    await ws.send_json({"type": "error",
                                        "reason": "malformed JSON"})
                    continue
                reply = session.handle_message(msg)
                if reply is not None:
                    await ws.send_json(reply)
        except WebSocketDisconnect:
            pass
        finally:
            stop.set()
            loop_task.cancel()
            session.close()
            busy["ws"] = None

    return app


def serve(env_config: EnvConfig, port: int = 8000, tick_rate: float = 25.0,
          record_dir=None, ui_dir=None, stream_frames: bool = False) -> None:
    """Run the teleoperation service until interrupted."""
    import uvicorn
    app = make_app(env_config, tick_rate, record_dir, ui_dir, stream_frames)
    uvicorn.run(app, host="0.0.0.0", port=port, log_level="warning")
