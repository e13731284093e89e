// Arena map geometry and rendering. The transforms are exact inverses of
// each other so a click converts back to world coordinates with no loss;
// the canvas y axis points down, the arena y axis points up.

import type { DroneSnapshot, StatePayload } from "./protocol.js";

export interface Viewport {
  scale: number; // canvas px per meter
  offsetX: number; // canvas px of world x = 0
  offsetY: number; // canvas px of world y = 0 (bottom edge)
}

const PAD_PX = 24;

export function fitViewport(
  canvasW: number,
  canvasH: number,
  arenaW: number,
  arenaH: number,
): Viewport {
  const scale = Math.min(
    (canvasW - 2 * PAD_PX) / arenaW,
    (canvasH - 2 * PAD_PX) / arenaH,
  );
  // center the arena in the canvas
  const offsetX = (canvasW - arenaW * scale) / 2;
  const offsetY = canvasH - (canvasH - arenaH * scale) / 2;
  return { scale, offsetX, offsetY };
}

export function worldToCanvas(
  vp: Viewport,
  x: number,
  y: number,
): [number, number] {
  return [vp.offsetX + x * vp.scale, vp.offsetY - y * vp.scale];
}

export function canvasToWorld(
  vp: Viewport,
  px: number,
  py: number,
): [number, number] {
  return [(px - vp.offsetX) / vp.scale, (vp.offsetY - py) / vp.scale];
}

export function inArena(
  state: StatePayload,
  world: [number, number],
): boolean {
  return (
    world[0] >= 0 &&
    world[0] <= state.arena.width &&
    world[1] >= 0 &&
    world[1] <= state.arena.height
  );
}

const DRONE_COLORS = [
  "#e84d4d",
  "#3ecc3e",
  "#5a78f0",
  "#3ecccc",
  "#d052d0",
  "#e0e050",
];

export function droneColor(index: number): string {
  return DRONE_COLORS[index % DRONE_COLORS.length];
}

/**
 * Draw one frame of the arena view. `ctx` only needs the 2D-context subset
 * used here, which keeps the renderer testable without a browser canvas.
 */
export function drawMap(
  ctx: CanvasRenderingContext2D,
  canvasW: number,
  canvasH: number,
  state: StatePayload | null,
  selected: string | null,
  dimmed: boolean,
): void {
  ctx.clearRect(0, 0, canvasW, canvasH);
  ctx.fillStyle = "#14161a";
  ctx.fillRect(0, 0, canvasW, canvasH);
  if (state === null) {
    return;
  }
  const vp = fitViewport(canvasW, canvasH, state.arena.width, state.arena.height);

  // floor grid every 0.25 m
  ctx.strokeStyle = "#23262c";
  ctx.lineWidth = 1;
  for (let gx = 0; gx <= state.arena.width + 1e-9; gx += 0.25) {
    const [px0, py0] = worldToCanvas(vp, gx, 0);
    const [, py1] = worldToCanvas(vp, gx, state.arena.height);
    ctx.beginPath();
    ctx.moveTo(px0, py0);
    ctx.lineTo(px0, py1);
    ctx.stroke();
  }
  for (let gy = 0; gy <= state.arena.height + 1e-9; gy += 0.25) {
    const [px0, py0] = worldToCanvas(vp, 0, gy);
    const [px1] = worldToCanvas(vp, state.arena.width, gy);
    ctx.beginPath();
    ctx.moveTo(px0, py0);
    ctx.lineTo(px1, py0);
    ctx.stroke();
  }

  // arena boundary
  const [bx, by] = worldToCanvas(vp, 0, state.arena.height);
  ctx.strokeStyle = "#4a4f58";
  ctx.lineWidth = 2;
  ctx.strokeRect(bx, by, state.arena.width * vp.scale, state.arena.height * vp.scale);

  for (const [tx, ty] of state.targets) {
    const [px, py] = worldToCanvas(vp, tx, ty);
    ctx.beginPath();
    ctx.fillStyle = "#f08c14";
    ctx.arc(px, py, 6, 0, 2 * Math.PI);
    ctx.fill();
  }

  state.drones.forEach((drone, i) => {
    drawDrone(ctx, vp, state, drone, droneColor(i), drone.id === selected);
  });

  if (dimmed) {
    ctx.fillStyle = "rgba(10, 11, 13, 0.65)";
    ctx.fillRect(0, 0, canvasW, canvasH);
  }
}

function drawDrone(
  ctx: CanvasRenderingContext2D,
  vp: Viewport,
  state: StatePayload,
  drone: DroneSnapshot,
  color: string,
  isSelected: boolean,
): void {
  if (drone.fix === null) {
    return;
  }
  const [px, py] = worldToCanvas(vp, drone.fix[0], drone.fix[1]);
  const cam = state.camera;

  // FOV wedge: annulus sector from r_min to r_max around the heading.
  // Canvas angles run clockwise, so world angles are negated.
  if (drone.phase === "FLYING") {
    const a0 = -(drone.compass - cam.fov / 2);
    const a1 = -(drone.compass + cam.fov / 2);
    ctx.beginPath();
    ctx.arc(px, py, cam.r_max * vp.scale, a1, a0);
    ctx.arc(px, py, cam.r_min * vp.scale, a0, a1, true);
    ctx.closePath();
    ctx.fillStyle = color + "22";
    ctx.fill();
    ctx.strokeStyle = color + "55";
    ctx.lineWidth = 1;
    ctx.stroke();
  }

  // objective cross with a dashed leader line
  if (drone.objective !== null) {
    const [ox, oy] = worldToCanvas(vp, drone.objective[0], drone.objective[1]);
    ctx.strokeStyle = color + "88";
    ctx.lineWidth = 1;
    ctx.setLineDash([4, 4]);
    ctx.beginPath();
    ctx.moveTo(px, py);
    ctx.lineTo(ox, oy);
    ctx.stroke();
    ctx.setLineDash([]);
    ctx.beginPath();
    ctx.moveTo(ox - 5, oy);
    ctx.lineTo(ox + 5, oy);
    ctx.moveTo(ox, oy - 5);
    ctx.lineTo(ox, oy + 5);
    ctx.stroke();
  }

  // body, heading tick, selection / manual-hold rings
  ctx.beginPath();
  ctx.fillStyle = drone.fault ? "#ff3030" : color;
  ctx.arc(px, py, 8, 0, 2 * Math.PI);
  ctx.fill();
  ctx.strokeStyle = "#eceff4";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(px, py);
  ctx.lineTo(
    px + 14 * Math.cos(drone.compass),
    py - 14 * Math.sin(drone.compass),
  );
  ctx.stroke();
  if (isSelected) {
    ctx.beginPath();
    ctx.strokeStyle = "#eceff4";
    ctx.arc(px, py, 12, 0, 2 * Math.PI);
    ctx.stroke();
  }
  if (drone.manual_hold) {
    ctx.beginPath();
    ctx.strokeStyle = "#f0c040";
    ctx.setLineDash([3, 3]);
    ctx.arc(px, py, 16, 0, 2 * Math.PI);
    ctx.stroke();
    ctx.setLineDash([]);
  }

  // phase badge
  ctx.fillStyle = "#eceff4";
  ctx.font = "11px ui-monospace, monospace";
  ctx.textAlign = "center";
  const badge =
    drone.phase === "FLYING" ? drone.controller_phase : drone.phase;
  ctx.fillText(`${drone.id} ${badge}`, px, py - 20);
}
