/** Keyboard / drag steering for the pointer instrument.
 *
 * Converts input gestures into target positions in the reference frame.
 * The controller only computes positions; the caller decides when to send
 * them (client.ts gates on connection and LOST state).
 */

import type { Vec3 } from "./types.js";

export interface KeyInput {
  key: string;
  shiftKey?: boolean;
}

const add = (a: Vec3, b: Vec3): Vec3 => [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
const scale = (a: Vec3, s: number): Vec3 => [a[0] * s, a[1] * s, a[2] * s];

export class SteeringController {
  target: Vec3;
  stepMm: number;
  enabled = true;

  constructor(initial: Vec3 = [0, 0, 0], stepMm = 1.0) {
    this.target = initial;
    this.stepMm = stepMm;
  }

  /** Adopt a position from the scene (used to seed the target from the
   * engine's own pointer pose so the first key press nudges, not jumps). */
  sync(p: Vec3): void {
    this.target = p;
  }

  /** Arrow keys move in the horizontal plane, PageUp/PageDown along z.
   * Shift multiplies the step by 5. Returns the new target, or null if
   * the key is not a steering key or steering is disabled.
   */
  keyMove(input: KeyInput): Vec3 | null {
    if (!this.enabled) return null;
    const step = this.stepMm * (input.shiftKey ? 5 : 1);
    let dir: Vec3;
    switch (input.key) {
      case "ArrowLeft":
        dir = [-1, 0, 0];
        break;
      case "ArrowRight":
        dir = [1, 0, 0];
        break;
      case "ArrowUp":
        dir = [0, 1, 0];
        break;
      case "ArrowDown":
        dir = [0, -1, 0];
        break;
      case "PageUp":
        dir = [0, 0, 1];
        break;
      case "PageDown":
        dir = [0, 0, -1];
        break;
      default:
        return null;
    }
    this.target = add(this.target, scale(dir, step));
    return this.target;
  }

  /** Shift-drag in a 3D view: pixel motion mapped onto the view plane.
   * `right` and `up` are the camera's unit axes expressed in the
   * reference frame; screen-up drags move the target along `up`.
   */
  dragMove(dxPx: number, dyPx: number, right: Vec3, up: Vec3, mmPerPx = 0.25): Vec3 | null {
    if (!this.enabled) return null;
    const motion = add(scale(right, dxPx * mmPerPx), scale(up, -dyPx * mmPerPx));
    this.target = add(this.target, motion);
    return this.target;
  }
}
