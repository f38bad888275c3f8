/** WebAudio sink for the margin alert: a short beep repeated at the
 * interval chosen by alerts.ts. Degrades to silence when AudioContext is
 * unavailable (tests, headless browsers).
 */

export class AlertTone {
  private ctx: AudioContext | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private intervalS: number | null = null;
  muted = false;

  private ensureContext(): AudioContext | null {
    if (this.ctx) return this.ctx;
    const Ctor =
      (globalThis as { AudioContext?: typeof AudioContext }).AudioContext;
    if (!Ctor) return null;
    this.ctx = new Ctor();
    return this.ctx;
  }

  private beep(): void {
    const ctx = this.ensureContext();
    if (!ctx || this.muted) return;
    const osc = ctx.createOscillator();
    const gain = ctx.createGain();
    osc.frequency.value = 880;
    gain.gain.setValueAtTime(0.18, ctx.currentTime);
    gain.gain.exponentialRampToValueAtTime(0.001, ctx.currentTime + 0.09);
    osc.connect(gain).connect(ctx.destination);
    osc.start();
    osc.stop(ctx.currentTime + 0.1);
  }

  /** Set the repeat interval; null stops the tone. Restarting with the
   * same interval keeps the current cadence. */
  setInterval(intervalS: number | null): void {
    if (intervalS === this.intervalS) return;
    this.intervalS = intervalS;
    if (this.timer) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    if (intervalS !== null) this.tick();
  }

  /** Fire one beep immediately (used on the transition into the alert). */
  pulse(): void {
    this.beep();
  }

  private tick(): void {
    if (this.intervalS === null) return;
    this.beep();
    this.timer = setTimeout(() => this.tick(), this.intervalS * 1000);
  }

  stop(): void {
    this.setInterval(null);
  }
}
