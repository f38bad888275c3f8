/** three.js rendering of the navigation scene.
 *
 * One WebGL canvas, two modes:
 *   - "single": one orbitable 3D view (used beside the ultrasound panel)
 *   - "dual":  cranial top-down view | lateral side view, via scissors
 *
 * View rotation is strictly client-side; nothing here talks to the
 * engine. All distance labels show engine-published numbers verbatim —
 * the mesh math below only decides where labels sit, never what they say.
 */

import * as THREE from "three";
import { nearestVertex } from "./geometry.js";
import { formatDistance } from "./state.js";
import type { UiScene } from "./state.js";
import type { Vec3 } from "./types.js";

export type RenderMode = "single" | "dual";

const MESH_STYLE: Record<string, { color: number; opacity: number }> = {
  tumor: { color: 0xe8c227, opacity: 1.0 },
  margin: { color: 0xd23b3b, opacity: 0.3 },
  vessel: { color: 0x2f6bd8, opacity: 1.0 },
  liver: { color: 0x8d8d8d, opacity: 0.12 },
};

const INSTRUMENT_COLOR: Record<string, number> = {
  POINTER: 0x35e0c2,
  SEALER: 0xe08c35,
  PROBE: 0xb9c4cc,
};

interface Label {
  sprite: THREE.Sprite;
  set(text: string): void;
  dispose(): void;
}

function makeLabel(widthMm = 26): Label {
  const canvas = document.createElement("canvas");
  canvas.width = 256;
  canvas.height = 64;
  const ctx = canvas.getContext("2d")!;
  const texture = new THREE.CanvasTexture(canvas);
  const material = new THREE.SpriteMaterial({
    map: texture,
    depthTest: false,
    transparent: true,
  });
  const sprite = new THREE.Sprite(material);
  sprite.scale.set(widthMm, widthMm / 4, 1);
  let last = "";
  return {
    sprite,
    set(text: string) {
      if (text === last) return;
      last = text;
      ctx.clearRect(0, 0, canvas.width, canvas.height);
      ctx.font = "600 30px system-ui, sans-serif";
      ctx.textAlign = "center";
      ctx.textBaseline = "middle";
      ctx.lineWidth = 6;
      ctx.strokeStyle = "rgba(0,0,0,0.85)";
      ctx.strokeText(text, 128, 32);
      ctx.fillStyle = "#f4f7f9";
      ctx.fillText(text, 128, 32);
      texture.needsUpdate = true;
    },
    dispose() {
      material.dispose();
      texture.dispose();
    },
  };
}

/** Minimal orbit state: spherical coordinates around a fixed target. */
class Orbit {
  theta = Math.PI / 4;
  phi = Math.PI / 3;
  radius = 150;
  readonly target = new THREE.Vector3(0, 0, 0);

  rotate(dxPx: number, dyPx: number): void {
    this.theta -= dxPx * 0.008;
    this.phi = Math.min(Math.max(this.phi - dyPx * 0.008, 0.05), Math.PI - 0.05);
  }

  zoom(deltaY: number): void {
    this.radius = Math.min(Math.max(this.radius * Math.exp(deltaY * 0.001), 40), 600);
  }

  apply(cam: THREE.PerspectiveCamera): void {
    const s = Math.sin(this.phi);
    cam.position.set(
      this.target.x + this.radius * s * Math.cos(this.theta),
      this.target.y + this.radius * s * Math.sin(this.theta),
      this.target.z + this.radius * Math.cos(this.phi),
    );
    cam.up.set(0, 0, 1);
    cam.lookAt(this.target);
  }
}

interface InstrumentGlyph {
  group: THREE.Group;
  label: Label;
}

interface ClipGlyph {
  group: THREE.Group;
  label: Label;
}

export class NavRenderer {
  private readonly canvas: HTMLCanvasElement;
  private readonly renderer: THREE.WebGLRenderer;
  private readonly scene = new THREE.Scene();
  private readonly meshGroup = new THREE.Group();
  private readonly instrumentGroup = new THREE.Group();
  private readonly clipGroup = new THREE.Group();
  private readonly shadowGroup = new THREE.Group();

  private readonly orbitCam = new THREE.PerspectiveCamera(40, 1, 1, 2000);
  private readonly cranialCam = new THREE.PerspectiveCamera(35, 1, 1, 2000);
  private readonly lateralCam = new THREE.PerspectiveCamera(35, 1, 1, 2000);
  readonly orbit = new Orbit();

  private meshEpochSeen = -1;
  private meshObjects = new Map<string, THREE.Mesh>();
  private instruments = new Map<string, InstrumentGlyph>();
  private clips = new Map<number, ClipGlyph>();
  private shadowMarker: THREE.Mesh;
  private shadowLine: THREE.Line;
  private shadowLabel: Label;

  constructor(canvas: HTMLCanvasElement) {
    this.canvas = canvas;
    this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
    this.renderer.setPixelRatio(window.devicePixelRatio ?? 1);
    this.scene.background = new THREE.Color(0x10151a);
    this.scene.add(this.meshGroup, this.instrumentGroup, this.clipGroup, this.shadowGroup);

    this.scene.add(new THREE.AmbientLight(0xffffff, 0.55));
    const key = new THREE.DirectionalLight(0xffffff, 1.1);
    key.position.set(120, 80, 200);
    this.scene.add(key);
    const fill = new THREE.DirectionalLight(0xffffff, 0.4);
    fill.position.set(-100, -60, -80);
    this.scene.add(fill);

    const grid = new THREE.GridHelper(240, 24, 0x2a3540, 0x1c242c);
    grid.rotation.x = Math.PI / 2;
    grid.position.z = -45;
    this.scene.add(grid);

    // Fixed dual-view cameras: cranial looks down the z axis, lateral in
    // from the +x side.
    this.cranialCam.position.set(0, 0, 240);
    this.cranialCam.up.set(0, 1, 0);
    this.cranialCam.lookAt(0, 0, 0);
    this.lateralCam.position.set(240, 0, 0);
    this.lateralCam.up.set(0, 0, 1);
    this.lateralCam.lookAt(0, 0, 0);

    this.shadowMarker = new THREE.Mesh(
      new THREE.SphereGeometry(1.0, 12, 12),
      new THREE.MeshBasicMaterial({ color: 0xf4f7f9 }),
    );
    const lineMat = new THREE.LineDashedMaterial({
      color: 0xf4f7f9,
      dashSize: 2,
      gapSize: 1.5,
      transparent: true,
      opacity: 0.8,
    });
    this.shadowLine = new THREE.Line(new THREE.BufferGeometry(), lineMat);
    this.shadowLabel = makeLabel(20);
    this.shadowGroup.add(this.shadowMarker, this.shadowLine, this.shadowLabel.sprite);
    this.shadowGroup.visible = false;
  }

  /** Unit right/up axes of the orbit camera, for drag steering in the
   * view plane. */
  cameraAxes(): { right: Vec3; up: Vec3 } {
    this.orbit.apply(this.orbitCam);
    this.orbitCam.updateMatrixWorld();
    const e = this.orbitCam.matrixWorld.elements;
    return {
      right: [e[0], e[1], e[2]],
      up: [e[4], e[5], e[6]],
    };
  }

  syncMeshes(scene: UiScene): void {
    if (scene.meshEpoch === this.meshEpochSeen) return;
    this.meshEpochSeen = scene.meshEpoch;
    for (const [name, payload] of scene.meshes) {
      const old = this.meshObjects.get(name);
      if (old) {
        this.meshGroup.remove(old);
        old.geometry.dispose();
        (old.material as THREE.Material).dispose();
      }
      const style = MESH_STYLE[name] ?? { color: 0xaaaaaa, opacity: 0.5 };
      const geo = new THREE.BufferGeometry();
      const pos = new Float32Array(payload.v.length * 3);
      for (let i = 0; i < payload.v.length; i++) {
        pos[3 * i] = payload.v[i][0];
        pos[3 * i + 1] = payload.v[i][1];
        pos[3 * i + 2] = payload.v[i][2];
      }
      const idx = new Uint32Array(payload.f.length * 3);
      for (let i = 0; i < payload.f.length; i++) {
        idx[3 * i] = payload.f[i][0];
        idx[3 * i + 1] = payload.f[i][1];
        idx[3 * i + 2] = payload.f[i][2];
      }
      geo.setAttribute("position", new THREE.BufferAttribute(pos, 3));
      geo.setIndex(new THREE.BufferAttribute(idx, 1));
      geo.computeVertexNormals();
      const mat = new THREE.MeshStandardMaterial({
        color: style.color,
        transparent: style.opacity < 1,
        opacity: style.opacity,
        side: THREE.DoubleSide,
        roughness: 0.65,
        metalness: 0.05,
      });
      const mesh = new THREE.Mesh(geo, mat);
      mesh.renderOrder = style.opacity < 1 ? 1 : 0;
      this.meshGroup.add(mesh);
      this.meshObjects.set(name, mesh);
    }
  }

  private instrumentGlyph(device: string): InstrumentGlyph {
    let glyph = this.instruments.get(device);
    if (glyph) return glyph;
    const color = INSTRUMENT_COLOR[device] ?? 0xdddddd;
    const group = new THREE.Group();
    const tip = new THREE.Mesh(
      new THREE.SphereGeometry(1.4, 16, 16),
      new THREE.MeshStandardMaterial({ color, roughness: 0.3 }),
    );
    const shaft = new THREE.Mesh(
      new THREE.CylinderGeometry(0.6, 0.9, 28, 12),
      new THREE.MeshStandardMaterial({ color, roughness: 0.5 }),
    );
    // cylinder axis is local +y; lay the shaft along the tool's +z
    shaft.rotation.x = Math.PI / 2;
    shaft.position.z = 14;
    group.add(tip, shaft);
    const label = makeLabel();
    label.sprite.position.set(0, 0, 9);
    group.add(label.sprite);
    glyph = { group, label };
    this.instruments.set(device, glyph);
    this.instrumentGroup.add(group);
    return glyph;
  }

  private clipGlyph(id: number): ClipGlyph {
    let glyph = this.clips.get(id);
    if (glyph) return glyph;
    const group = new THREE.Group();
    const marker = new THREE.Mesh(
      new THREE.OctahedronGeometry(1.6),
      new THREE.MeshStandardMaterial({ color: 0xe04fd8, roughness: 0.4 }),
    );
    group.add(marker);
    const label = makeLabel();
    label.sprite.position.set(0, 0, 6);
    group.add(label.sprite);
    glyph = { group, label };
    this.clips.set(id, glyph);
    this.clipGroup.add(group);
    return glyph;
  }

  /** Apply the latest scene snapshot to the dynamic objects. */
  update(scene: UiScene): void {
    // Instruments render only while the engine is navigating; the store
    // empties the map otherwise, the visibility flag is belt and braces.
    this.instrumentGroup.visible = scene.state === "NAVIGATING";
    const seen = new Set<string>();
    for (const [device, pose] of scene.instruments) {
      seen.add(device);
      const glyph = this.instrumentGlyph(device);
      glyph.group.position.set(pose.p[0], pose.p[1], pose.p[2]);
      glyph.group.quaternion.set(pose.q[1], pose.q[2], pose.q[3], pose.q[0]);
      glyph.label.set(
        pose.distance_mm === null
          ? device
          : `${device} ${formatDistance(pose.distance_mm)}`,
      );
    }
    for (const [device, glyph] of this.instruments) {
      glyph.group.visible = seen.has(device);
    }

    const liveClipIds = new Set<number>();
    for (const clip of scene.clips) {
      liveClipIds.add(clip.id);
      const glyph = this.clipGlyph(clip.id);
      glyph.group.position.set(clip.p[0], clip.p[1], clip.p[2]);
      glyph.label.set(`#${clip.id} ${formatDistance(clip.intraop_distance_mm)}`);
    }
    for (const [id, glyph] of this.clips) {
      glyph.group.visible = liveClipIds.has(id);
    }

    this.updateShadow(scene);
    this.updateMarginHighlight(scene);
  }

  /** Depth cue: a marker on the tumor surface nearest the pointer tip,
   * a dashed tip-to-surface line, and the engine's distance between
   * them. The nearest vertex only anchors the drawing — the number is
   * the published distance, untouched. */
  private updateShadow(scene: UiScene): void {
    const pointer = scene.instruments.get("POINTER");
    const tumor = scene.meshes.get("tumor");
    if (!pointer || !tumor || scene.state !== "NAVIGATING") {
      this.shadowGroup.visible = false;
      return;
    }
    const hit = nearestVertex(tumor, pointer.p);
    if (!hit) {
      this.shadowGroup.visible = false;
      return;
    }
    this.shadowGroup.visible = true;
    this.shadowMarker.position.set(hit.point[0], hit.point[1], hit.point[2]);
    const pts = [
      new THREE.Vector3(...pointer.p),
      new THREE.Vector3(...hit.point),
    ];
    this.shadowLine.geometry.dispose();
    this.shadowLine.geometry = new THREE.BufferGeometry().setFromPoints(pts);
    this.shadowLine.computeLineDistances();
    const mid = pts[0].clone().add(pts[1]).multiplyScalar(0.5);
    this.shadowLabel.sprite.position.copy(mid).add(new THREE.Vector3(0, 0, 4));
    this.shadowLabel.set(formatDistance(pointer.distance_mm));
  }

  private updateMarginHighlight(scene: UiScene): void {
    const margin = this.meshObjects.get("margin");
    if (!margin) return;
    const mat = margin.material as THREE.MeshStandardMaterial;
    if (scene.alert === "INSIDE_MARGIN") {
      mat.opacity = 0.62;
      mat.emissive.setHex(0x7a1010);
    } else if (scene.alert === "NEAR_MARGIN") {
      mat.opacity = 0.45;
      mat.emissive.setHex(0x3a1a08);
    } else {
      mat.opacity = MESH_STYLE.margin.opacity;
      mat.emissive.setHex(0x000000);
    }
  }

  render(mode: RenderMode): void {
    const w = this.canvas.clientWidth || 1;
    const h = this.canvas.clientHeight || 1;
    const dpr = this.renderer.getPixelRatio();
    if (this.canvas.width !== Math.floor(w * dpr) || this.canvas.height !== Math.floor(h * dpr)) {
      this.renderer.setSize(w, h, false);
    }
    this.renderer.setScissorTest(true);
    if (mode === "single") {
      this.orbit.apply(this.orbitCam);
      this.orbitCam.aspect = w / h;
      this.orbitCam.updateProjectionMatrix();
      this.renderer.setViewport(0, 0, w, h);
      this.renderer.setScissor(0, 0, w, h);
      this.renderer.render(this.scene, this.orbitCam);
      return;
    }
    const half = Math.floor(w / 2);
    this.cranialCam.aspect = half / h;
    this.cranialCam.updateProjectionMatrix();
    this.renderer.setViewport(0, 0, half, h);
    this.renderer.setScissor(0, 0, half, h);
    this.renderer.render(this.scene, this.cranialCam);

    this.lateralCam.aspect = (w - half) / h;
    this.lateralCam.updateProjectionMatrix();
    this.renderer.setViewport(half, 0, w - half, h);
    this.renderer.setScissor(half, 0, w - half, h);
    this.renderer.render(this.scene, this.lateralCam);
  }
}
