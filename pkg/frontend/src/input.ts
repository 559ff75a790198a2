/**
 * Keyboard state and its mapping to catheter commands.
 *
 *   ArrowUp / ArrowDown   insert +1 / -1
 *   ArrowLeft / ArrowRight bend the selected joint pair - / +
 *   [ / ]                 cycle the selected pair
 *   R                     reset request
 *
 * Bend magnitudes build up while a key is held and decay toward zero when
 * released; the in-plane axis of each pair (odd bend index) is the one the
 * arrows drive, which matches the top-down camera.
 */

import { CommandMessage, clamp, makeCommand } from "./protocol.js";

export const BEND_STEP = 0.12;   // per tick while held
export const BEND_DECAY = 0.90;  // per tick while released

export interface InputState {
  held: Set<string>;
  pair: number;              // selected tip joint pair, 0-based
  nPairs: number;
  bend: number[];            // 2 * nPairs magnitudes in [-1, 1]
  resetRequested: boolean;
}

export function newInputState(nBend: number): InputState {
  return {
    held: new Set(),
    pair: 0,
    nPairs: Math.floor(nBend / 2),
    bend: new Array(nBend).fill(0),
    resetRequested: false,
  };
}

/** Key-down transition; returns true when the key is handled. */
export function keyDown(st: InputState, key: string): boolean {
  switch (key) {
    case "[":
      st.pair = (st.pair + st.nPairs - 1) % st.nPairs;
      return true;
    case "]":
      st.pair = (st.pair + 1) % st.nPairs;
      return true;
    case "r":
    case "R":
      st.resetRequested = true;
      return true;
    case "ArrowUp":
    case "ArrowDown":
    case "ArrowLeft":
    case "ArrowRight":
      st.held.add(key);
      return true;
    default:
      return false;
  }
}

export function keyUp(st: InputState, key: string): void {
  st.held.delete(key);
}

/** Advance one client tick: integrate or decay bends, emit the command. */
export function tickCommand(st: InputState): CommandMessage {
  const inPlane = 2 * st.pair + 1;
  if (st.held.has("ArrowLeft")) {
    st.bend[inPlane] = clamp(st.bend[inPlane] - BEND_STEP);
  } else if (st.held.has("ArrowRight")) {
    st.bend[inPlane] = clamp(st.bend[inPlane] + BEND_STEP);
  }
  for (let i = 0; i < st.bend.length; i++) {
    const driving = i === inPlane &&
      (st.held.has("ArrowLeft") || st.held.has("ArrowRight"));
    if (!driving) {
      st.bend[i] *= BEND_DECAY;
      if (Math.abs(st.bend[i]) < 1e-3) st.bend[i] = 0;
    }
  }
  let insert = 0;
  if (st.held.has("ArrowUp")) insert = 1;
  else if (st.held.has("ArrowDown")) insert = -1;
  return makeCommand(insert, st.bend);
}

/** Consume a pending reset request, if any. */
export function takeReset(st: InputState): boolean {
  const r = st.resetRequested;
  st.resetRequested = false;
  return r;
}
