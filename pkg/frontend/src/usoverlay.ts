/** Live ultrasound panel: a stylized B-mode fan with the segmented model's
 * section contours drawn over it.
 *
 * The section plane follows the tracked probe when one is streaming;
 * otherwise it falls back to a fixed plane through the pointer tip so the
 * overlay stays meaningful with only a pointer in the scene. Contours are
 * true mesh/plane intersections of the streamed surfaces; the distance
 * text is the engine's published value.
 */

import { dot, planeSection, rotate, sub } from "./geometry.js";
import { formatDistance } from "./state.js";
import type { UiScene } from "./state.js";
import type { Vec3 } from "./types.js";

const CONTOUR_STYLE: Record<string, { stroke: string; width: number }> = {
  tumor: { stroke: "#e8c227", width: 2.5 },
  margin: { stroke: "#d23b3b", width: 2 },
  vessel: { stroke: "#4f83e8", width: 2 },
};

interface Basis {
  origin: Vec3;
  u: Vec3;
  v: Vec3;
  n: Vec3;
}

export class UsOverlay {
  private readonly canvas: HTMLCanvasElement;
  private readonly ctx: CanvasRenderingContext2D;
  private speckle: Array<[number, number, number]> | null = null;
  /** Millimetres of world space shown across the canvas width. */
  spanMm = 120;

  constructor(canvas: HTMLCanvasElement) {
    this.canvas = canvas;
    this.ctx = canvas.getContext("2d")!;
  }

  private basis(scene: UiScene): Basis {
    const probe = scene.instruments.get("PROBE");
    if (probe) {
      return {
        origin: probe.p,
        u: rotate(probe.q, [1, 0, 0]),
        v: rotate(probe.q, [0, 0, 1]),
        n: rotate(probe.q, [0, 1, 0]),
      };
    }
    const pointer = scene.instruments.get("POINTER");
    const origin: Vec3 = pointer ? pointer.p : [0, 0, 0];
    // fixed coronal-style cut through the tip: x across, z down the image
    return { origin, u: [1, 0, 0], v: [0, 0, 1], n: [0, 1, 0] };
  }

  private toPx(basis: Basis, p: Vec3): [number, number] {
    const w = this.canvas.width;
    const h = this.canvas.height;
    const scale = w / this.spanMm;
    const d = sub(p, basis.origin);
    const x = w / 2 + dot(d, basis.u) * scale;
    const y = h / 2 - dot(d, basis.v) * scale;
    return [x, y];
  }

  private drawBackground(): void {
    const { ctx, canvas } = this;
    const w = canvas.width;
    const h = canvas.height;
    ctx.fillStyle = "#05070a";
    ctx.fillRect(0, 0, w, h);

    // stylized transducer fan, apex at top centre
    const apex: [number, number] = [w / 2, -h * 0.25];
    const r0 = h * 0.32;
    const r1 = h * 1.18;
    const a0 = Math.PI / 2 - 0.55;
    const a1 = Math.PI / 2 + 0.55;
    const fan = ctx.createRadialGradient(apex[0], apex[1], r0, apex[0], apex[1], r1);
    fan.addColorStop(0, "#2a3238");
    fan.addColorStop(0.6, "#1a2126");
    fan.addColorStop(1, "#0a0e12");
    ctx.beginPath();
    ctx.moveTo(apex[0], apex[1]);
    ctx.arc(apex[0], apex[1], r1, a0, a1);
    ctx.closePath();
    ctx.fillStyle = fan;
    ctx.fill();

    if (this.speckle === null) {
      // static speckle texture; regenerating per frame would shimmer
      this.speckle = [];
      for (let i = 0; i < 900; i++) {
        this.speckle.push([Math.random(), Math.random(), Math.random()]);
      }
    }
    for (const [fx, fy, fa] of this.speckle) {
      const x = fx * w;
      const y = fy * h;
      const dx = x - apex[0];
      const dy = y - apex[1];
      const r = Math.hypot(dx, dy);
      const ang = Math.atan2(dy, dx);
      if (r < r0 || r > r1 || ang < a0 || ang > a1) continue;
      ctx.fillStyle = `rgba(200, 215, 225, ${0.03 + fa * 0.1})`;
      ctx.fillRect(x, y, 1.5, 1.5);
    }
  }

  draw(scene: UiScene): void {
    const { ctx, canvas } = this;
    this.drawBackground();
    const basis = this.basis(scene);

    for (const [name, payload] of scene.meshes) {
      const style = CONTOUR_STYLE[name];
      if (!style) continue; // liver context stays out of the US image
      const segments = planeSection(payload, basis.origin, basis.n);
      if (segments.length === 0) continue;
      ctx.strokeStyle = style.stroke;
      ctx.lineWidth = style.width;
      ctx.beginPath();
      for (const [a, b] of segments) {
        const pa = this.toPx(basis, a);
        const pb = this.toPx(basis, b);
        ctx.moveTo(pa[0], pa[1]);
        ctx.lineTo(pb[0], pb[1]);
      }
      ctx.stroke();
    }

    const pointer = scene.instruments.get("POINTER");
    if (pointer && scene.state === "NAVIGATING") {
      const [x, y] = this.toPx(basis, pointer.p);
      ctx.strokeStyle = "#35e0c2";
      ctx.lineWidth = 2;
      ctx.beginPath();
      ctx.moveTo(x - 9, y);
      ctx.lineTo(x + 9, y);
      ctx.moveTo(x, y - 9);
      ctx.lineTo(x, y + 9);
      ctx.stroke();
      ctx.beginPath();
      ctx.arc(x, y, 4.5, 0, 2 * Math.PI);
      ctx.stroke();
      ctx.font = "600 15px system-ui, sans-serif";
      ctx.fillStyle = "#f4f7f9";
      ctx.fillText(formatDistance(pointer.distance_mm), x + 13, y - 10);
    }

    // frame tint mirrors the engine alert so the operator sees it even
    // when looking only at the US image
    if (scene.alert !== "CLEAR" && scene.state === "NAVIGATING") {
      ctx.lineWidth = 6;
      ctx.strokeStyle = scene.alert === "INSIDE_MARGIN" ? "#d23b3b" : "#d2913b";
      ctx.strokeRect(3, 3, canvas.width - 6, canvas.height - 6);
    }

    ctx.font = "12px system-ui, sans-serif";
    ctx.fillStyle = "#8da0ad";
    const src = scene.instruments.has("PROBE") ? "probe plane" : "pointer plane";
    ctx.fillText(`US ${src} · margin ${scene.marginMm} mm`, 10, canvas.height - 10);
  }
}
