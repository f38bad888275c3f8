/** Wire schema of the navigation service (scene stream + command replies). */

export type NavState = "SETUP" | "NAVIGATING" | "LOST";
export type AlertState = "CLEAR" | "NEAR_MARGIN" | "INSIDE_MARGIN";

export type Vec3 = [number, number, number];
export type Quat = [number, number, number, number];

export interface InstrumentPose {
  device: string;
  q: Quat;
  p: Vec3;
  /** Signed shortest distance to the tumor border in mm; null for the
   * probe. Displayed verbatim — the console never recomputes it. */
  distance_mm: number | null;
}

export interface ClipMark {
  id: number;
  p: Vec3;
  intraop_distance_mm: number;
  t: number;
}

export interface MeshPayload {
  v: number[][];
  f: number[][];
}

export interface SceneUpdate {
  kind: "SCENE_UPDATE";
  t: number;
  state: NavState;
  alert: AlertState;
  margin_mm: number;
  instruments: InstrumentPose[];
  clips: ClipMark[];
  meshes?: Record<string, MeshPayload>;
  preop_context_only?: boolean;
}

export interface ClipPlaced {
  kind: "CLIP_PLACED";
  clip: ClipMark;
}

export interface ClipRejected {
  kind: "CLIP_REJECTED";
  error: string;
}

export interface MarginSet {
  kind: "MARGIN_SET";
  margin_mm: number;
}

export interface ErrorReply {
  kind: "ERROR";
  error: string;
}

export type ServerMessage =
  | SceneUpdate
  | ClipPlaced
  | ClipRejected
  | MarginSet
  | ErrorReply;

const KINDS = new Set([
  "SCENE_UPDATE", "CLIP_PLACED", "CLIP_REJECTED", "MARGIN_SET", "ERROR",
]);

/** Parse one message off the socket; null for anything unrecognized. */
export function parseServerMessage(text: string): ServerMessage | null {
  let doc: unknown;
  try {
    doc = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof doc !== "object" || doc === null) return null;
  const kind = (doc as { kind?: unknown }).kind;
  if (typeof kind !== "string" || !KINDS.has(kind)) return null;
  return doc as ServerMessage;
}

export interface SteerCommand {
  cmd: "steer";
  device: string;
  p: Vec3;
  q?: Quat;
}

export interface ClipCommand {
  cmd: "clip";
}

export interface MarginCommand {
  cmd: "margin";
  margin_mm: number;
}

export type ClientCommand = SteerCommand | ClipCommand | MarginCommand;
