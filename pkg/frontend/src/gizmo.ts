import { GizmoMode } from "./state.js";
import {
  CameraInfo,
  RigidTransform,
  axisAngleQuat,
  composeTransforms,
} from "./types.js";

const ROTATE_RADIANS_PER_PX = 0.01;
const SCALE_PER_PX = 0.005;

function cameraAxes(camera: CameraInfo): {
  right: [number, number, number];
  up: [number, number, number];
} {
  // world-to-camera rows are the camera axes expressed in world coordinates
  const m = camera.world_to_camera;
  return {
    right: [m[0][0], m[0][1], m[0][2]],
    up: [-m[1][0], -m[1][1], -m[1][2]], // image y points down
  };
}

/** Depth of a world point in the camera (z after the world-to-camera map). */
export function depthOf(camera: CameraInfo, point: [number, number, number]): number {
  const m = camera.world_to_camera;
  return m[2][0] * point[0] + m[2][1] * point[1] + m[2][2] * point[2] + m[2][3];
}

/** Convert a pointer drag (pixels) into an incremental rigid transform.
 *
 * Translate mode moves along the camera right/up axes, scaled by the
 * depth-at-object heuristic (world units per pixel = depth / focal). Rotate
 * mode spins about the camera up (horizontal drag) and right (vertical drag)
 * axes; scale mode is exponential in vertical drag.
 */
export function dragToTransform(
  mode: GizmoMode,
  dxPx: number,
  dyPx: number,
  camera: CameraInfo,
  objectCentroid: [number, number, number],
): RigidTransform {
  const { right, up } = cameraAxes(camera);
  if (mode === "translate") {
    const depth = Math.max(depthOf(camera, objectCentroid), 1e-6);
    const sx = (dxPx * depth) / camera.fx;
    const sy = (-dyPx * depth) / camera.fy; // dragging up moves up
    return {
      quaternion: [1, 0, 0, 0],
      translation: [
        sx * right[0] + sy * up[0],
        sx * right[1] + sy * up[1],
        sx * right[2] + sy * up[2],
      ],
      scale: 1,
    };
  }
  if (mode === "rotate") {
    const qh = axisAngleQuat(up, dxPx * ROTATE_RADIANS_PER_PX);
    const qv = axisAngleQuat(right, dyPx * ROTATE_RADIANS_PER_PX);
    return {
      quaternion: composeTransforms(
        { quaternion: qh, translation: [0, 0, 0], scale: 1 },
        { quaternion: qv, translation: [0, 0, 0], scale: 1 },
      ).quaternion,
      translation: [0, 0, 0],
      scale: 1,
    };
  }
  return {
    quaternion: [1, 0, 0, 0],
    translation: [0, 0, 0],
    scale: Math.exp(-dyPx * SCALE_PER_PX),
  };
}

/** Rotations and scaling pivot about the object's centroid, not the world
 * origin: conjugate the increment by the centroid translation. */
export function aboutCentroid(
  increment: RigidTransform,
  centroid: [number, number, number],
): RigidTransform {
  const toOrigin: RigidTransform = {
    quaternion: [1, 0, 0, 0],
    translation: [-centroid[0], -centroid[1], -centroid[2]],
    scale: 1,
  };
  const back: RigidTransform = {
    quaternion: [1, 0, 0, 0],
    translation: centroid,
    scale: 1,
  };
  return composeTransforms(back, composeTransforms(increment, toOrigin));
}

export class GizmoController {
  constructor(
    private getMode: () => GizmoMode,
    private getCamera: () => CameraInfo,
    private getCentroid: () => [number, number, number],
    private current: () => RigidTransform,
    private apply: (t: RigidTransform) => void,
  ) {}

  drag(dxPx: number, dyPx: number): RigidTransform {
    const mode = this.getMode();
    const camera = this.getCamera();
    const centroid = this.getCentroid();
    let increment = dragToTransform(mode, dxPx, dyPx, camera, centroid);
    if (mode !== "translate") increment = aboutCentroid(increment, centroid);
    const next = composeTransforms(increment, this.current());
    this.apply(next);
    return next;
  }
}
