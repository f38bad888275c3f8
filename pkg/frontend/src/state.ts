/** Scene store: the single place network messages land.
 *
 * The render loop reads a snapshot each frame; messages are applied as
 * they arrive (between frames) and never inside the loop. Distances are
 * stored exactly as published — formatting happens at the last moment
 * and never changes the number.
 */

import type {
  AlertState,
  ClipMark,
  InstrumentPose,
  MeshPayload,
  NavState,
  SceneUpdate,
  ServerMessage,
} from "./types.js";

export type ConnectionStatus = "connecting" | "open" | "retry" | "closed";

export interface UiScene {
  status: ConnectionStatus;
  state: NavState;
  alert: AlertState;
  marginMm: number;
  /** Instrument poses by device name; empty while navigation is lost. */
  instruments: Map<string, InstrumentPose>;
  clips: ClipMark[];
  /** Sticky mesh payloads (the stream sends them only when they change). */
  meshes: Map<string, MeshPayload>;
  preopContextOnly: boolean;
  engineT: number;
  /** Bumped whenever a mesh payload arrives, so renderers can rebuild. */
  meshEpoch: number;
  notice: string | null;
}

export class SceneStore {
  private scene: UiScene = {
    status: "closed",
    state: "SETUP",
    alert: "CLEAR",
    marginMm: 10,
    instruments: new Map(),
    clips: [],
    meshes: new Map(),
    preopContextOnly: false,
    engineT: 0,
    meshEpoch: 0,
    notice: null,
  };
  private listeners: Array<(s: UiScene) => void> = [];

  get snapshot(): UiScene {
    return this.scene;
  }

  subscribe(fn: (s: UiScene) => void): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((f) => f !== fn);
    };
  }

  private emit(): void {
    for (const fn of this.listeners) fn(this.scene);
  }

  setStatus(status: ConnectionStatus): void {
    this.scene = { ...this.scene, status };
    if (status !== "open") {
      // stale poses must not look live while reconnecting
      this.scene.instruments = new Map();
    }
    this.emit();
  }

  setNotice(notice: string | null): void {
    this.scene = { ...this.scene, notice };
    this.emit();
  }

  applyScene(update: SceneUpdate): void {
    const instruments = new Map<string, InstrumentPose>();
    if (update.state === "NAVIGATING") {
      for (const inst of update.instruments) instruments.set(inst.device, inst);
    }
    const meshes = this.scene.meshes;
    let meshEpoch = this.scene.meshEpoch;
    if (update.meshes) {
      for (const [name, payload] of Object.entries(update.meshes)) {
        meshes.set(name, payload);
      }
      meshEpoch += 1;
    }
    this.scene = {
      ...this.scene,
      state: update.state,
      alert: update.alert,
      marginMm: update.margin_mm,
      instruments,
      clips: update.clips,
      meshes,
      meshEpoch,
      preopContextOnly: update.preop_context_only ?? this.scene.preopContextOnly,
      engineT: update.t,
    };
    this.emit();
  }

  applyMessage(msg: ServerMessage): void {
    switch (msg.kind) {
      case "SCENE_UPDATE":
        this.applyScene(msg);
        return;
      case "CLIP_PLACED":
        this.setNotice(`clip ${msg.clip.id} placed at ` +
          formatDistance(msg.clip.intraop_distance_mm));
        return;
      case "CLIP_REJECTED":
        this.setNotice(`clip rejected: ${msg.error}`);
        return;
      case "MARGIN_SET":
        this.setNotice(`margin set to ${msg.margin_mm} mm`);
        return;
      case "ERROR":
        this.setNotice(`error: ${msg.error}`);
        return;
    }
  }
}

/** Render a published distance for display. The value is the engine's,
 * verbatim; this only chooses the decimals shown. */
export function formatDistance(mm: number | null | undefined): string {
  if (mm === null || mm === undefined) return "—";
  return `${mm.toFixed(1)} mm`;
}

export function stateBanner(scene: UiScene): string {
  if (scene.status === "retry") return "CONNECTION LOST — RETRYING";
  if (scene.status === "connecting") return "CONNECTING";
  if (scene.status === "closed") return "DISCONNECTED";
  if (scene.state === "LOST") return "NAVIGATION LOST";
  if (scene.state === "SETUP") return "WAITING FOR TRACKING";
  return "NAVIGATING";
}
