/**
 * Teleoperation client wiring: websocket lifecycle, keyboard capture,
 * command coalescing at the client tick, canvas rendering on animation
 * frames, and recording download.
 */

import { InputState, keyDown, keyUp, newInputState, takeReset,
         tickCommand } from "./input.js";
import { CommandMessage, HelloMessage, StateMessage, commandsEqual,
         parseServerMessage } from "./protocol.js";
import { RingBuffer } from "./trace.js";
import { Viewport, drawFrame, drawPausedOverlay, drawSparkline,
         drawVectorView, fitViewport, readoutText } from "./view.js";

const TRACE_CAPACITY = 500;

interface ClientState {
  connected: boolean;
  hello: HelloMessage | null;
  latest: StateMessage | null;
  input: InputState;
  recording: boolean;
  trace: RingBuffer;
  frameView: boolean;
  badge: string;
}

function start(): void {
  const canvas = document.getElementById("scene") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d")!;
  const readout = document.getElementById("readout")!;
  const badge = document.getElementById("badge")!;
  const recordBtn = document.getElementById("record") as HTMLButtonElement;
  const downloadLink = document.getElementById("download") as HTMLAnchorElement;
  const toggleBtn = document.getElementById("toggle-view") as HTMLButtonElement;

  const st: ClientState = {
    connected: false,
    hello: null,
    latest: null,
    input: newInputState(20),
    recording: false,
    trace: new RingBuffer(TRACE_CAPACITY),
    frameView: false,
    badge: "",
  };
  let vp: Viewport = fitViewport([-0.1, -0.1, 0, 0.1, 0.1, 0],
                                 canvas.width, canvas.height);
  let ws: WebSocket | null = null;
  let lastSent: CommandMessage | null = null;

  function connect(): void {
    const proto = location.protocol === "https:" ? "wss" : "ws";
    ws = new WebSocket(`${proto}://${location.host}/ws`);
    ws.onopen = () => {
      st.connected = true;
      st.badge = "";
    };
    ws.onclose = () => {
      st.connected = false;
      setTimeout(connect, 1500);
    };
    ws.onmessage = (ev) => {
      const msg = parseServerMessage(ev.data as string);
      if (msg === null) {
        st.badge = "malformed message ignored";
        return;
      }
      if (msg.type === "hello") {
        st.hello = msg;
        st.input = newInputState(msg.n_bend);
        vp = fitViewport(msg.bounds, canvas.width, canvas.height);
      } else if (msg.type === "state") {
        st.latest = msg;
        st.recording = msg.recording;
        st.trace.push(msg.f_t);
      } else if (msg.type === "error") {
        st.badge = msg.reason;
      }
    };
  }

  window.addEventListener("keydown", (ev) => {
    if (keyDown(st.input, ev.key)) ev.preventDefault();
  });
  window.addEventListener("keyup", (ev) => keyUp(st.input, ev.key));

  recordBtn.onclick = () => {
    ws?.send(JSON.stringify({ type: "record", on: !st.recording }));
    if (st.recording) {
      downloadLink.href = "/recordings/latest.csv";
      downloadLink.style.display = "inline";
    }
  };
  toggleBtn.onclick = () => {
    st.frameView = !st.frameView;
  };

  // Client tick: at most the server rate, sending only changed commands.
  const tickMs = 40;
  setInterval(() => {
    if (!ws || ws.readyState !== WebSocket.OPEN) return;
    if (takeReset(st.input)) {
      ws.send(JSON.stringify({ type: "reset", seed: Date.now() % 100000 }));
    }
    const cmd = tickCommand(st.input);
    if (lastSent === null || !commandsEqual(cmd, lastSent)) {
      ws.send(JSON.stringify(cmd));
      lastSent = cmd;
    }
  }, tickMs);

  function render(): void {
    if (st.latest) {
      if (st.frameView && st.latest.frame) {
        drawFrame(ctx, vp, st.latest.frame);
      } else {
        drawVectorView(ctx, vp, st.latest);
      }
      drawSparkline(ctx, st.trace.values(), 10, canvas.height - 60,
                    220, 50);
      readout.textContent = readoutText(st.latest);
    }
    if (!st.connected) drawPausedOverlay(ctx, vp);
    badge.textContent = st.badge;
    recordBtn.textContent = st.recording ? "stop recording" : "record";
    requestAnimationFrame(render);
  }

  connect();
  requestAnimationFrame(render);
}

window.addEventListener("DOMContentLoaded", start);
