/** Margin-alert audio policy (pure logic; the speaker lives in audio.ts).
 *
 * The tone starts when — and only when — the engine's alert transitions
 * into INSIDE_MARGIN. While inside, a short tone repeats, faster as the
 * published distance shrinks. Leaving INSIDE_MARGIN stops it. The
 * engine's alert state is authoritative; no thresholds are re-derived
 * here.
 */

import type { AlertState } from "./types.js";

export const SLOW_INTERVAL_S = 0.7;
export const FAST_INTERVAL_S = 0.12;

/** Seconds between repeats while the alert is INSIDE_MARGIN.
 *
 * At the margin itself the repeat is slow; by the time the tip touches
 * the tumor border (distance 0, or negative inside it) the repeat is at
 * its fastest. Null when no tone should play.
 */
export function toneIntervalS(
  alert: AlertState,
  distanceMm: number | null,
  marginMm: number,
): number | null {
  if (alert !== "INSIDE_MARGIN") return null;
  if (distanceMm === null || marginMm <= 0) return SLOW_INTERVAL_S;
  const depth = Math.min(Math.max(1 - distanceMm / marginMm, 0), 1);
  return SLOW_INTERVAL_S + depth * (FAST_INTERVAL_S - SLOW_INTERVAL_S);
}

export class AlertMonitor {
  private prev: AlertState = "CLEAR";

  /** Feed the latest alert state; true exactly on entry into INSIDE_MARGIN. */
  update(alert: AlertState): boolean {
    const entered = alert === "INSIDE_MARGIN" && this.prev !== "INSIDE_MARGIN";
    this.prev = alert;
    return entered;
  }

  get active(): boolean {
    return this.prev === "INSIDE_MARGIN";
  }
}
