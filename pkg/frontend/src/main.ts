/** Browser console entry point: wires the socket client, scene store,
 * renderers, steering, and alert audio into the page. All numbers shown
 * come from the engine; the page only formats them.
 */

import { AlertMonitor, toneIntervalS } from "./alerts.js";
import { AlertTone } from "./audio.js";
import { NavClient } from "./client.js";
import { LAYOUTS, LayoutSwitch } from "./layouts.js";
import type { ViewLayout } from "./layouts.js";
import { NavRenderer } from "./render3d.js";
import { SceneStore, formatDistance, stateBanner } from "./state.js";
import type { UiScene } from "./state.js";
import { SteeringController } from "./steering.js";
import { UsOverlay } from "./usoverlay.js";
import type { ServerMessage } from "./types.js";

const app = document.getElementById("app")!;
app.innerHTML = `
  <header class="topbar">
    <span class="brand">navui</span>
    <input id="ws-url" type="text" spellcheck="false"
           value="ws://127.0.0.1:8000/sessions/s1/ws" />
    <button id="connect">Connect</button>
    <span id="banner" class="banner">DISCONNECTED</span>
    <span id="engine-t" class="dim"></span>
  </header>
  <main class="content">
    <section class="views">
      <div id="pane3d" class="pane">
        <canvas id="view3d"></canvas>
        <span class="caption" id="cap-left">3D</span>
        <span class="caption caption-right" id="cap-right" hidden>LATERAL</span>
      </div>
      <div id="paneus" class="pane">
        <canvas id="usplane"></canvas>
        <span class="caption">LIVE US + SEGMENTATION</span>
      </div>
    </section>
    <aside class="sidebar">
      <div class="block">
        <h3>Layout</h3>
        <div class="row" id="layout-buttons"></div>
      </div>
      <div class="block">
        <h3>Margin</h3>
        <div class="row" id="margin-buttons"></div>
      </div>
      <div class="block">
        <h3>Actions</h3>
        <div class="row">
          <button id="clip">Place clip</button>
          <button id="mute">Mute</button>
        </div>
        <div class="row">
          <button id="detach">Detach ref</button>
          <button id="reattach">Reattach</button>
        </div>
      </div>
      <div class="block">
        <h3>Instruments</h3>
        <div id="instruments" class="mono"></div>
      </div>
      <div class="block">
        <h3>Clips</h3>
        <div id="clips" class="mono"></div>
      </div>
      <div class="block">
        <h3>Messages</h3>
        <div id="notices" class="mono small"></div>
      </div>
      <div class="block hint">
        Steer: arrow keys / PageUp·Down, or shift-drag in the 3D view.
        Plain drag rotates (view only). Wheel zooms.
      </div>
    </aside>
  </main>
`;

const el = <T extends HTMLElement>(id: string): T =>
  document.getElementById(id) as T;

const view3d = el<HTMLCanvasElement>("view3d");
const usplane = el<HTMLCanvasElement>("usplane");
const store = new SceneStore();
const renderer = new NavRenderer(view3d);
const overlay = new UsOverlay(usplane);
const layout = new LayoutSwitch("US_OVERLAY");
const steering = new SteeringController([0, 0, 0], 1.0);
const monitor = new AlertMonitor();
const tone = new AlertTone();

let client: NavClient | null = null;
let steeringSeeded = false;
const noticeLog: string[] = [];

function pushNotice(text: string): void {
  const stamp = new Date().toLocaleTimeString();
  noticeLog.push(`${stamp}  ${text}`);
  if (noticeLog.length > 6) noticeLog.shift();
  el("notices").textContent = noticeLog.join("\n");
}

function onMessage(msg: ServerMessage): void {
  store.applyMessage(msg);
  if (msg.kind !== "SCENE_UPDATE") {
    if (msg.kind === "CLIP_PLACED") {
      pushNotice(`clip #${msg.clip.id} placed, ` +
        formatDistance(msg.clip.intraop_distance_mm));
    } else if (msg.kind === "CLIP_REJECTED") {
      pushNotice(`clip rejected: ${msg.error}`);
    } else if (msg.kind === "MARGIN_SET") {
      pushNotice(`margin set to ${msg.margin_mm} mm`);
    } else {
      pushNotice(`server error: ${msg.error}`);
    }
    return;
  }
  const scene = store.snapshot;
  const pointer = scene.instruments.get("POINTER");
  if (!steeringSeeded && pointer) {
    steering.sync(pointer.p);
    steeringSeeded = true;
  }
  // Audio fires only on the transition into INSIDE_MARGIN; the repeat
  // interval tracks the published pointer distance while inside.
  if (monitor.update(msg.alert)) tone.pulse();
  tone.setInterval(
    toneIntervalS(msg.alert, pointer?.distance_mm ?? null, msg.margin_mm),
  );
}

function connect(): void {
  const url = el<HTMLInputElement>("ws-url").value.trim();
  client?.close();
  steeringSeeded = false;
  client = new NavClient(url, {
    onStatus: (status) => {
      store.setStatus(status);
      if (status === "retry") pushNotice("connection lost, retrying…");
    },
    onMessage,
    onNotice: pushNotice,
  });
  client.connect();
}

el("connect").addEventListener("click", () => {
  if (client && client.status !== "closed") {
    client.close();
    client = null;
    el("connect").textContent = "Connect";
  } else {
    connect();
    el("connect").textContent = "Disconnect";
  }
});

// --- layout switch: both always selectable, exactly one active ---------
const layoutButtons = new Map<ViewLayout, HTMLButtonElement>();
const layoutNames: Record<ViewLayout, string> = {
  US_OVERLAY: "US overlay",
  DUAL_3D: "Dual 3D",
};
for (const name of LAYOUTS) {
  const btn = document.createElement("button");
  btn.textContent = layoutNames[name];
  btn.addEventListener("click", () => layout.select(name));
  layoutButtons.set(name, btn);
  el("layout-buttons").appendChild(btn);
}
function applyLayout(active: ViewLayout): void {
  for (const [name, btn] of layoutButtons) {
    btn.classList.toggle("active", name === active);
  }
  const dual = active === "DUAL_3D";
  el("paneus").hidden = dual;
  el("cap-left").textContent = dual ? "CRANIAL" : "3D";
  el("cap-right").hidden = !dual;
}
layout.onChange(applyLayout);
applyLayout(layout.active);

// --- margin presets -----------------------------------------------------
for (const preset of [5, 7, 10]) {
  const btn = document.createElement("button");
  btn.textContent = `${preset} mm`;
  btn.dataset.margin = String(preset);
  btn.addEventListener("click", () => client?.setMargin(preset));
  el("margin-buttons").appendChild(btn);
}

el("clip").addEventListener("click", () => {
  if (!client?.placeClip()) pushNotice("clip: not connected");
});
el("mute").addEventListener("click", () => {
  tone.muted = !tone.muted;
  el("mute").textContent = tone.muted ? "Unmute" : "Mute";
});
el("detach").addEventListener("click", () => client?.detach());
el("reattach").addEventListener("click", () => client?.reattach());

// --- steering input -----------------------------------------------------
const STEER_KEYS = new Set([
  "ArrowLeft", "ArrowRight", "ArrowUp", "ArrowDown", "PageUp", "PageDown",
]);
window.addEventListener("keydown", (e) => {
  if (!STEER_KEYS.has(e.key)) return;
  if (document.activeElement instanceof HTMLInputElement) return;
  e.preventDefault();
  const target = steering.keyMove({ key: e.key, shiftKey: e.shiftKey });
  if (target && client) client.steer(target);
});

let dragging: "orbit" | "steer" | null = null;
let lastX = 0;
let lastY = 0;
view3d.addEventListener("pointerdown", (e) => {
  dragging = e.shiftKey ? "steer" : "orbit";
  lastX = e.clientX;
  lastY = e.clientY;
  view3d.setPointerCapture(e.pointerId);
});
view3d.addEventListener("pointermove", (e) => {
  if (!dragging) return;
  const dx = e.clientX - lastX;
  const dy = e.clientY - lastY;
  lastX = e.clientX;
  lastY = e.clientY;
  if (dragging === "orbit") {
    // view-only: rotating the scene sends nothing to the engine
    renderer.orbit.rotate(dx, dy);
  } else {
    const axes = renderer.cameraAxes();
    const target = steering.dragMove(dx, dy, axes.right, axes.up);
    if (target && client) client.steer(target);
  }
});
view3d.addEventListener("pointerup", () => {
  dragging = null;
});
view3d.addEventListener("wheel", (e) => {
  e.preventDefault();
  renderer.orbit.zoom(e.deltaY);
}, { passive: false });

// --- HUD ------------------------------------------------------------------
function updateHud(scene: UiScene): void {
  const banner = el("banner");
  const text = stateBanner(scene);
  if (banner.textContent !== text) banner.textContent = text;
  banner.className = "banner " + (
    scene.status !== "open" ? "warn"
      : scene.state === "LOST" ? "bad"
        : scene.alert === "INSIDE_MARGIN" ? "bad"
          : scene.alert === "NEAR_MARGIN" ? "warn"
            : "ok");
  el("engine-t").textContent =
    scene.status === "open" ? `t = ${scene.engineT.toFixed(2)} s` : "";

  const lines: string[] = [];
  for (const [device, pose] of scene.instruments) {
    lines.push(`${device.padEnd(8)} ${formatDistance(pose.distance_mm)}`);
  }
  const instruments = lines.length > 0 ? lines.join("\n") : "(none tracked)";
  if (el("instruments").textContent !== instruments) {
    el("instruments").textContent = instruments;
  }

  const clips = scene.clips.length > 0
    ? scene.clips
      .map((c) => `#${c.id}  ${formatDistance(c.intraop_distance_mm)}  t=${c.t.toFixed(1)}`)
      .join("\n")
    : "(none)";
  if (el("clips").textContent !== clips) el("clips").textContent = clips;

  for (const [, btn] of layoutButtons) void btn; // layout handled on change
  for (const btn of el("margin-buttons").children) {
    const b = btn as HTMLButtonElement;
    b.classList.toggle("active", Number(b.dataset.margin) === scene.marginMm);
  }
}

// --- render loop ----------------------------------------------------------
function sizeUsCanvas(): void {
  const w = usplane.clientWidth;
  const h = usplane.clientHeight;
  if (w > 0 && (usplane.width !== w || usplane.height !== h)) {
    usplane.width = w;
    usplane.height = h;
  }
}

function frame(): void {
  const scene = store.snapshot;
  renderer.syncMeshes(scene);
  renderer.update(scene);
  renderer.render(layout.active === "DUAL_3D" ? "dual" : "single");
  if (layout.active === "US_OVERLAY") {
    sizeUsCanvas();
    overlay.draw(scene);
  }
  updateHud(scene);
  requestAnimationFrame(frame);
}
requestAnimationFrame(frame);
