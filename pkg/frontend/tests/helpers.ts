import { DroneSnapshot, StatePayload } from "../src/protocol.js";

export function makeDrone(over: Partial<DroneSnapshot> = {}): DroneSnapshot {
  return {
    id: "d1",
    fix: [0.4, 0.5],
    compass: 1.5707963267948966,
    phase: "FLYING",
    controller_phase: "MOVE_X",
    battery: 0.93,
    fault: null,
    objective: [0.8, 1.2, 0.0],
    manual_hold: false,
    ...over,
  };
}

export function makeState(over: Partial<StatePayload> = {}): StatePayload {
  return {
    tick: 0,
    time_s: 0.0,
    stale: false,
    drones: [makeDrone()],
    targets: [[0.9, 1.6]],
    covered_count: 0,
    emergency: false,
    arena: { width: 1.25, height: 2.1 },
    camera: { fov: 1.6231562043547265, r_min: 0.1, r_max: 1.0 },
    ...over,
  };
}
