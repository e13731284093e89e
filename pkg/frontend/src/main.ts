// Browser entry point. Everything testable lives in the other modules;
// this file only wires DOM elements to the client and the dashboard.

import { ServiceClient, SocketLike } from "./client.js";
import { canvasToWorld, drawMap, droneColor, fitViewport, inArena } from "./map.js";
import { Dashboard } from "./store.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing #${id}`);
  }
  return node as T;
}

const mapCanvas = el<HTMLCanvasElement>("map");
const mapCtx = mapCanvas.getContext("2d")!;
const banner = el<HTMLDivElement>("banner");
const statusDot = el<HTMLSpanElement>("status-dot");
const statusText = el<HTMLSpanElement>("status-text");
const droneList = el<HTMLDivElement>("drones");
const toastBox = el<HTMLDivElement>("toasts");
const frameOverlay = el<HTMLDivElement>("frame-overlay");
const frameCanvas = el<HTMLCanvasElement>("frame-canvas");

const btnTakeoff = el<HTMLButtonElement>("btn-takeoff");
const btnLand = el<HTMLButtonElement>("btn-land");
const btnRelease = el<HTMLButtonElement>("btn-release");
const btnStop = el<HTMLButtonElement>("btn-stop");
const btnFrame = el<HTMLButtonElement>("btn-frame");
const btnCloseFrame = el<HTMLButtonElement>("btn-close-frame");

const dash = new Dashboard();
const client = new ServiceClient(
  () => new WebSocket(`ws://${location.host}/ws`) as unknown as SocketLike,
  {
    onMessage: (m) => dash.handleMessage(m),
    onOpen: () => dash.handleOpen(),
    onClose: () => dash.handleClose(),
    onProtocolError: (reason) => dash.handleProtocolError(reason),
  },
);

function command(kind: string, payload: Record<string, unknown> | null, label: string): void {
  const id = client.send(kind, payload);
  if (id !== null) {
    dash.expect(id, label);
  }
}

btnTakeoff.onclick = () => {
  if (dash.selected !== null) {
    command("TAKEOFF", { drone: dash.selected }, `takeoff ${dash.selected}`);
  }
};
btnLand.onclick = () => {
  if (dash.selected !== null) {
    command("LAND", { drone: dash.selected }, `land ${dash.selected}`);
  }
};
btnRelease.onclick = () => {
  if (dash.selected !== null) {
    command("MANUAL_CMD", { drone: dash.selected, goal: null }, `release ${dash.selected}`);
  }
};
btnStop.onclick = () => command("EMERGENCY_STOP", null, "emergency stop");
btnFrame.onclick = () => command("FRAME_REQUEST", null, "camera frame");
btnCloseFrame.onclick = () => {
  dash.frame = null;
  frameOverlay.hidden = true;
};

mapCanvas.addEventListener("click", (ev) => {
  if (!client.connected || dash.state === null || dash.selected === null) {
    return;
  }
  const rect = mapCanvas.getBoundingClientRect();
  const px = (ev.clientX - rect.left) * (mapCanvas.width / rect.width);
  const py = (ev.clientY - rect.top) * (mapCanvas.height / rect.height);
  const vp = fitViewport(
    mapCanvas.width,
    mapCanvas.height,
    dash.state.arena.width,
    dash.state.arena.height,
  );
  const world = canvasToWorld(vp, px, py);
  if (!inArena(dash.state, world)) {
    return;
  }
  command("MANUAL_CMD", { drone: dash.selected, goal: world }, `goto ${dash.selected}`);
});

droneList.addEventListener("click", (ev) => {
  const row = (ev.target as HTMLElement).closest("[data-drone]");
  if (row instanceof HTMLElement && row.dataset.drone !== undefined) {
    dash.select(row.dataset.drone);
  }
});

let sidebarKey = "";
function renderSidebar(): void {
  const state = dash.state;
  const key = state === null ? "" : `${state.tick}:${dash.selected}`;
  if (key === sidebarKey) {
    return;
  }
  sidebarKey = key;
  const rows = (state?.drones ?? []).map((d, i) => {
    const sel = d.id === dash.selected ? " selected" : "";
    const fault = d.fault !== null ? ` <span class="fault">${d.fault}</span>` : "";
    const hold = d.manual_hold ? ' <span class="hold">hold</span>' : "";
    const battery = `${Math.round(d.battery * 100)}%`;
    const mode = d.phase === "FLYING" ? d.controller_phase : d.phase;
    return (
      `<div class="drone-row${sel}" data-drone="${d.id}">` +
      `<span class="swatch" style="background:${droneColor(i)}"></span>` +
      `<span class="drone-id">${d.id}</span>` +
      `<span class="drone-mode">${mode}</span>` +
      `<span class="drone-batt">${battery}</span>${hold}${fault}</div>`
    );
  });
  droneList.innerHTML = rows.join("");
}

let toastKey = "";
function renderToasts(): void {
  const key = dash.toasts.map((t) => `${t.at}:${t.text}`).join("|");
  if (key === toastKey) {
    return;
  }
  toastKey = key;
  toastBox.innerHTML = dash.toasts
    .map((t) => `<div class="toast ${t.kind}">${t.text}</div>`)
    .join("");
}

let shownFrame: object | null = null;
function renderFrameOverlay(): void {
  if (dash.frame === null || dash.frame === shownFrame) {
    return;
  }
  shownFrame = dash.frame;
  frameCanvas.width = dash.frame.width;
  frameCanvas.height = dash.frame.height;
  const frameCtx = frameCanvas.getContext("2d")!;
  const img = frameCtx.createImageData(dash.frame.width, dash.frame.height);
  img.data.set(dash.frame.rgba);
  frameCtx.putImageData(img, 0, 0);
  frameOverlay.hidden = false;
}

function renderStatus(): void {
  const stale = dash.feedStale();
  statusDot.className = client.connected ? (stale ? "dot warn" : "dot ok") : "dot down";
  banner.hidden = client.connected && dash.protocolFault === null;
  if (dash.protocolFault !== null) {
    banner.textContent = dash.protocolFault;
  }
  const s = dash.state;
  if (s === null) {
    statusText.textContent = "waiting for state";
  } else {
    const bits = [`t=${s.time_s.toFixed(1)}s`, `covered ${s.covered_count}/${s.targets.length}`];
    if (s.emergency) {
      bits.push("EMERGENCY");
    }
    if (s.stale) {
      bits.push("tracking stale");
    }
    statusText.textContent = bits.join("  ");
  }
}

function renderButtons(): void {
  const haveSelection = client.connected && dash.selected !== null;
  btnTakeoff.disabled = !haveSelection;
  btnLand.disabled = !haveSelection;
  btnRelease.disabled = !haveSelection;
  btnStop.disabled = !client.connected;
  btnFrame.disabled = !client.connected;
}

function frameLoop(): void {
  renderStatus();
  renderButtons();
  renderSidebar();
  renderToasts();
  renderFrameOverlay();
  drawMap(
    mapCtx,
    mapCanvas.width,
    mapCanvas.height,
    dash.state,
    dash.selected,
    !client.connected || dash.feedStale(),
  );
  requestAnimationFrame(frameLoop);
}

client.connect();
requestAnimationFrame(frameLoop);
