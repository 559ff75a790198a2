/**
 * Message types of the teleoperation websocket protocol and the guards that
 * keep everything sent to the server within bounds.  All authoritative state
 * lives server-side; the client only views it and sends commands.
 */

export interface StateMessage {
  type: "state";
  tick: number;
  step: number;
  links: number[][];        // link proximal points plus the tip, world [m]
  tip: number[];
  goal: number[];
  d: number;
  reward: number;
  f_t: number;
  contacts: number;
  recording: boolean;
  done: boolean;
  frame?: { w: number; h: number; b64: string };
}

export interface HelloMessage {
  type: "hello";
  arch_kind: string;
  target: string;
  n_links: number;
  n_bend: number;
  tick_rate: number;
  bounds: number[];         // [xmin, ymin, zmin, xmax, ymax, zmax]
}

export interface InfoMessage {
  type: "info";
  message: string;
}

export interface ErrorMessage {
  type: "error";
  reason: string;
}

export type ServerMessage = StateMessage | HelloMessage | InfoMessage | ErrorMessage;

export interface CommandMessage {
  type: "command";
  insert: number;           // -1 | 0 | +1
  bend: number[];           // 20 values in [-1, 1]
}

export const clamp = (v: number, lo = -1, hi = 1): number =>
  Math.min(hi, Math.max(lo, v));

/** Build a bounds-safe command message. */
export function makeCommand(insert: number, bend: number[]): CommandMessage {
  return {
    type: "command",
    insert: clamp(Math.round(insert)),
    bend: bend.map((b) => clamp(b)),
  };
}

/**
 * Parse a server frame; unknown fields are ignored, malformed messages
 * return null so the caller can surface an error badge without crashing.
 */
export function parseServerMessage(raw: string): ServerMessage | null {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof data !== "object" || data === null) return null;
  const msg = data as Record<string, unknown>;
  switch (msg.type) {
    case "state":
      if (!Array.isArray(msg.links) || typeof msg.d !== "number") return null;
      return msg as unknown as StateMessage;
    case "hello":
      if (typeof msg.n_bend !== "number") return null;
      return msg as unknown as HelloMessage;
    case "info":
      return typeof msg.message === "string" ? (msg as unknown as InfoMessage) : null;
    case "error":
      return typeof msg.reason === "string" ? (msg as unknown as ErrorMessage) : null;
    default:
      return null;
  }
}

/** Commands are only sent when they changed since the last send. */
export function commandsEqual(a: CommandMessage, b: CommandMessage): boolean {
  if (a.insert !== b.insert || a.bend.length !== b.bend.length) return false;
  for (let i = 0; i < a.bend.length; i++) {
    if (Math.abs(a.bend[i] - b.bend[i]) > 1e-9) return false;
  }
  return true;
}
