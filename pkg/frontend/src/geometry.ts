/** Small mesh/pose math used by the overlay views.
 *
 * Only what the console needs: quaternion → matrix for instrument glyphs,
 * point-to-plane projection for the tip shadow, nearest-vertex lookup, and
 * mesh × plane section curves for the ultrasound overlay.
 */

import type { MeshPayload, Quat, Vec3 } from "./types.js";

export type Segment = [Vec3, Vec3];

export const sub = (a: Vec3, b: Vec3): Vec3 => [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
export const add = (a: Vec3, b: Vec3): Vec3 => [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
export const scale = (a: Vec3, s: number): Vec3 => [a[0] * s, a[1] * s, a[2] * s];
export const dot = (a: Vec3, b: Vec3): number => a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
export const norm = (a: Vec3): number => Math.sqrt(dot(a, a));

export function normalize(a: Vec3): Vec3 {
  const n = norm(a);
  if (n === 0) return [0, 0, 0];
  return scale(a, 1 / n);
}

/** Row-major 3x3 rotation matrix from a (w, x, y, z) unit quaternion. */
export function quatToMatrix(q: Quat): number[][] {
  const [w, x, y, z] = q;
  return [
    [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
    [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
    [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
  ];
}

/** Rotate a vector by a (w, x, y, z) quaternion. */
export function rotate(q: Quat, v: Vec3): Vec3 {
  const m = quatToMatrix(q);
  return [
    m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
    m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
    m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
  ];
}

/** Orthogonal projection of p onto the plane through `origin` with unit
 * normal `normal`. */
export function projectToPlane(p: Vec3, origin: Vec3, normal: Vec3): Vec3 {
  const n = normalize(normal);
  const d = dot(sub(p, origin), n);
  return sub(p, scale(n, d));
}

export interface VertexHit {
  index: number;
  point: Vec3;
  distance: number;
}

/** Closest mesh vertex to p (used to anchor the tip-shadow marker). */
export function nearestVertex(mesh: MeshPayload, p: Vec3): VertexHit | null {
  let best: VertexHit | null = null;
  for (let i = 0; i < mesh.v.length; i++) {
    const v = mesh.v[i] as Vec3;
    const d = norm(sub(v, p));
    if (best === null || d < best.distance) {
      best = { index: i, point: [v[0], v[1], v[2]], distance: d };
    }
  }
  return best;
}

function lerp(a: Vec3, b: Vec3, t: number): Vec3 {
  return [
    a[0] + (b[0] - a[0]) * t,
    a[1] + (b[1] - a[1]) * t,
    a[2] + (b[2] - a[2]) * t,
  ];
}

/** Intersect a triangle mesh with a plane.
 *
 * Returns one segment per triangle that straddles the plane; together the
 * segments trace the section contour that the ultrasound overlay draws.
 * Triangles entirely on one side contribute nothing.
 */
export function planeSection(mesh: MeshPayload, origin: Vec3, normal: Vec3): Segment[] {
  const n = normalize(normal);
  const eps = 1e-12;
  const side = mesh.v.map((v) => dot(sub(v as Vec3, origin), n));
  const out: Segment[] = [];
  for (const face of mesh.f) {
    const pts: Vec3[] = [];
    for (let e = 0; e < 3; e++) {
      const ia = face[e];
      const ib = face[(e + 1) % 3];
      const da = side[ia];
      const db = side[ib];
      if (Math.abs(da) < eps) {
        pts.push(mesh.v[ia] as Vec3);
        continue;
      }
      if (Math.abs(db) < eps) continue; // captured when its own edge starts
      if ((da > 0) !== (db > 0)) {
        pts.push(lerp(mesh.v[ia] as Vec3, mesh.v[ib] as Vec3, da / (da - db)));
      }
    }
    if (pts.length >= 2) {
      const seg: Segment = [pts[0], pts[1]];
      if (norm(sub(seg[0], seg[1])) > eps) out.push(seg);
    }
  }
  return out;
}
