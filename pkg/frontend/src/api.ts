import {
  CameraInfo,
  PromptPoint,
  RigidTransform,
  SessionStatus,
  cameraInfoSchema,
  sessionStatusSchema,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

/** Thin typed client over the editing service REST API. */
export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = fetch,
  ) {}

  private async post(path: string, body: unknown): Promise<unknown> {
    const resp = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok) throw new ApiError(resp.status, await resp.text());
    return resp.json();
  }

  private async get(path: string): Promise<unknown> {
    const resp = await this.fetchImpl(`${this.baseUrl}${path}`);
    if (!resp.ok) throw new ApiError(resp.status, await resp.text());
    return resp.json();
  }

  async createSession(scenePath: string, camerasPath: string, labelsPath?: string) {
    const body: Record<string, unknown> = {
      v: 1,
      scene_path: scenePath,
      cameras_path: camerasPath,
    };
    if (labelsPath) body.labels_path = labelsPath;
    return sessionStatusSchema.parse(await this.post("/sessions", body));
  }

  async status(sessionId: string): Promise<SessionStatus> {
    return sessionStatusSchema.parse(await this.get(`/sessions/${sessionId}`));
  }

  async cameras(sessionId: string): Promise<CameraInfo[]> {
    const data = (await this.get(`/sessions/${sessionId}/cameras`)) as {
      cameras: unknown[];
    };
    return data.cameras.map((c) => cameraInfoSchema.parse(c));
  }

  async submitPrompts(
    sessionId: string,
    cameraIndex: number,
    points: PromptPoint[],
    oracle = "gt",
  ) {
    return this.post(`/sessions/${sessionId}/prompts`, {
      v: 1,
      camera_index: cameraIndex,
      points,
      oracle,
    });
  }

  async runInpaint(sessionId: string, options: Record<string, unknown> = {}) {
    return this.post(`/sessions/${sessionId}/inpaint`, { v: 1, ...options });
  }

  maskUrl(sessionId: string, cameraIndex: number): string {
    return `${this.baseUrl}/sessions/${sessionId}/mask/${cameraIndex}`;
  }

  async sendTransform(sessionId: string, t: RigidTransform) {
    return this.post(`/sessions/${sessionId}/transform`, {
      v: 1,
      quaternion: t.quaternion,
      translation: t.translation,
      scale: t.scale,
    });
  }

  async setCamera(sessionId: string, index: number) {
    return this.post(`/sessions/${sessionId}/camera`, { v: 1, index });
  }
}
