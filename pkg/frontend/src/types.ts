import { z } from "zod";

export const PHASES = [
  "loaded",
  "segmenting",
  "segmented",
  "inpainting",
  "ready",
  "error",
] as const;
export type Phase = (typeof PHASES)[number];

export const promptPointSchema = z.object({
  x: z.number(),
  y: z.number(),
  positive: z.boolean(),
});
export type PromptPoint = z.infer<typeof promptPointSchema>;

export const submitPromptsSchema = z.object({
  v: z.literal(1),
  camera_index: z.number().int().nonnegative(),
  points: z.array(promptPointSchema).min(1),
  oracle: z.string(),
});
export type SubmitPromptsBody = z.infer<typeof submitPromptsSchema>;

export const transformSchema = z.object({
  v: z.literal(1),
  quaternion: z.tuple([z.number(), z.number(), z.number(), z.number()]),
  translation: z.tuple([z.number(), z.number(), z.number()]),
  scale: z.number().positive(),
});
export type TransformBody = z.infer<typeof transformSchema>;

export const sessionStatusSchema = z.object({
  v: z.number(),
  id: z.string(),
  phase: z.enum(PHASES),
  progress: z.number(),
  error: z.string().nullable().optional(),
  splat_count: z.number(),
  camera_count: z.number(),
  active_camera: z.number(),
  edit_sequence: z.number(),
  object_centroid: z.tuple([z.number(), z.number(), z.number()]).nullable().optional(),
});
export type SessionStatus = z.infer<typeof sessionStatusSchema>;

export const cameraInfoSchema = z.object({
  v: z.number().optional(),
  width: z.number(),
  height: z.number(),
  fx: z.number(),
  fy: z.number(),
  cx: z.number(),
  cy: z.number(),
  world_to_camera: z.array(z.array(z.number()).length(4)).length(4),
});
export type CameraInfo = z.infer<typeof cameraInfoSchema>;

export interface FrameHeader {
  v: number;
  type: "frame" | "heartbeat" | "error";
  seq?: number;
  camera?: number;
  width?: number;
  height?: number;
  format?: string;
  detail?: string;
}

/** Quaternion [w, x, y, z] with translation and uniform scale. */
export interface RigidTransform {
  quaternion: [number, number, number, number];
  translation: [number, number, number];
  scale: number;
}

export const IDENTITY: RigidTransform = {
  quaternion: [1, 0, 0, 0],
  translation: [0, 0, 0],
  scale: 1,
};

export function quatMultiply(
  a: [number, number, number, number],
  b: [number, number, number, number],
): [number, number, number, number] {
  const [aw, ax, ay, az] = a;
  const [bw, bx, by, bz] = b;
  return [
    aw * bw - ax * bx - ay * by - az * bz,
    aw * bx + ax * bw + ay * bz - az * by,
    aw * by - ax * bz + ay * bw + az * bx,
    aw * bz + ax * by - ay * bx + az * bw,
  ];
}

export function quatRotate(
  q: [number, number, number, number],
  v: [number, number, number],
): [number, number, number] {
  const [w, x, y, z] = q;
  const [vx, vy, vz] = v;
  // v' = v + 2*q_vec x (q_vec x v + w*v)
  const cx = y * vz - z * vy + w * vx;
  const cy = z * vx - x * vz + w * vy;
  const cz = x * vy - y * vx + w * vz;
  return [
    vx + 2 * (y * cz - z * cy),
    vy + 2 * (z * cx - x * cz),
    vz + 2 * (x * cy - y * cx),
  ];
}

/** outer applied after inner: (outer . inner)(p) = outer(inner(p)). */
export function composeTransforms(outer: RigidTransform, inner: RigidTransform): RigidTransform {
  const rotated = quatRotate(outer.quaternion, inner.translation);
  return {
    quaternion: normalizeQuat(quatMultiply(outer.quaternion, inner.quaternion)),
    translation: [
      outer.scale * rotated[0] + outer.translation[0],
      outer.scale * rotated[1] + outer.translation[1],
      outer.scale * rotated[2] + outer.translation[2],
    ],
    scale: outer.scale * inner.scale,
  };
}

export function normalizeQuat(
  q: [number, number, number, number],
): [number, number, number, number] {
  const n = Math.hypot(q[0], q[1], q[2], q[3]);
  return [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
}

export function axisAngleQuat(
  axis: [number, number, number],
  angle: number,
): [number, number, number, number] {
  const n = Math.hypot(axis[0], axis[1], axis[2]) || 1;
  const s = Math.sin(angle / 2);
  return [Math.cos(angle / 2), (axis[0] / n) * s, (axis[1] / n) * s, (axis[2] / n) * s];
}
