import { ApiClient } from "./api.js";
import { TransformCoalescer } from "./coalescer.js";
import { FramesClient } from "./frames.js";
import { GizmoController } from "./gizmo.js";
import { PromptCapture } from "./prompts.js";
import { GizmoMode, ViewerState } from "./state.js";
import { CameraInfo } from "./types.js";

const POLL_MS = 500;

/** DOM glue: wires the state store, REST client, frame stream, prompt capture
 * and gizmo to a minimal control panel. All logic lives in the imported
 * modules; this file only binds events. */
export class Viewer {
  readonly state = new ViewerState();
  private api: ApiClient;
  private frames: FramesClient | null = null;
  private cameras: CameraInfo[] = [];
  private centroid: [number, number, number] = [0, 0, 0];
  private coalescer: TransformCoalescer;
  private gizmo: GizmoController;
  private dragging = false;
  private lastPointer: [number, number] = [0, 0];

  constructor(
    private baseUrl: string,
    private canvas: HTMLCanvasElement,
    private overlay: HTMLCanvasElement,
    private controls: {
      submit: HTMLButtonElement;
      inpaint: HTMLButtonElement;
      mode: HTMLSelectElement;
      status: HTMLElement;
    },
  ) {
    this.api = new ApiClient(baseUrl);
    this.coalescer = new TransformCoalescer((t) => {
      void this.api.sendTransform(this.state.sessionId!, t);
    });
    this.gizmo = new GizmoController(
      () => this.controls.mode.value as GizmoMode,
      () => this.cameras[this.state.activeCamera],
      () => this.centroid,
      () => this.state.currentTransform,
      (t) => {
        this.state.setTransform(t);
        if (this.state.permits("transform")) this.coalescer.push(t);
      },
    );
    this.bind();
    this.state.subscribe(() => this.renderControls());
  }

  private bind(): void {
    this.canvas.addEventListener("pointerdown", (ev) => {
      if (this.state.permits("transform")) {
        this.dragging = true;
        this.lastPointer = [ev.offsetX, ev.offsetY];
      } else if (this.state.permits("promptClick")) {
        const capture = new PromptCapture(
          this.state,
          this.api,
          this.cameras[this.state.activeCamera]?.width ?? this.canvas.width,
          this.cameras[this.state.activeCamera]?.height ?? this.canvas.height,
        );
        const point = capture.click(
          ev.offsetX, ev.offsetY, this.canvas.clientWidth, this.canvas.clientHeight,
          !ev.shiftKey,
        );
        if (point) this.drawMarker(point.x, point.y, point.positive);
      }
    });
    this.canvas.addEventListener("pointermove", (ev) => {
      if (!this.dragging) return;
      const dx = ev.offsetX - this.lastPointer[0];
      const dy = ev.offsetY - this.lastPointer[1];
      this.lastPointer = [ev.offsetX, ev.offsetY];
      this.gizmo.drag(dx, dy);
    });
    this.canvas.addEventListener("pointerup", () => {
      this.dragging = false;
    });
    this.controls.submit.addEventListener("click", () => {
      const capture = new PromptCapture(this.state, this.api, 0, 0);
      void capture.submit(this.state.activeCamera);
    });
    this.controls.inpaint.addEventListener("click", () => {
      if (!this.state.permits("inpaint")) return;
      void this.api.runInpaint(this.state.sessionId!);
      this.state.setPhase("inpainting");
    });
  }

  async openSession(scenePath: string, camerasPath: string, labelsPath?: string): Promise<void> {
    const status = await this.api.createSession(scenePath, camerasPath, labelsPath);
    this.state.sessionId = status.id;
    this.state.setPhase(status.phase, status.progress);
    this.cameras = await this.api.cameras(status.id);
    this.poll();
  }

  private poll(): void {
    setTimeout(async () => {
      if (!this.state.sessionId) return;
      const status = await this.api.status(this.state.sessionId);
      if (status.object_centroid) this.centroid = status.object_centroid;
      if (status.phase !== this.state.phase) {
        this.state.setPhase(status.phase, status.progress);
        if (status.phase === "segmented") this.showMaskOverlay();
        if (status.phase === "ready") this.openStream();
      } else {
        this.state.progress = status.progress;
        this.renderControls();
      }
      this.poll();
    }, POLL_MS);
  }

  private showMaskOverlay(): void {
    if (!this.state.permits("maskOverlay")) return;
    const img = new Image();
    img.onload = () => {
      const ctx = this.overlay.getContext("2d")!;
      ctx.globalAlpha = this.state.overlayOpacity;
      ctx.drawImage(img, 0, 0, this.overlay.width, this.overlay.height);
    };
    img.src = this.api.maskUrl(this.state.sessionId!, this.state.activeCamera);
    this.state.overlayVisible = true;
  }

  private openStream(): void {
    this.frames?.close();
    const url = `${this.baseUrl.replace(/^http/, "ws")}/sessions/${this.state.sessionId}/frames`;
    this.frames = new FramesClient(
      () => new WebSocket(url) as unknown as import("./frames.js").WebSocketLike,
      {
        onFrame: (header, payload) => {
          if (!this.state.acceptFrame(header.seq!)) return;
          const blob = new Blob([payload.slice().buffer], { type: "image/jpeg" });
          void createImageBitmap(blob).then((bitmap) => {
            const ctx = this.canvas.getContext("2d")!;
            ctx.drawImage(bitmap, 0, 0, this.canvas.width, this.canvas.height);
          });
        },
        onResync: () => {
          void this.api.status(this.state.sessionId!).then((s) => {
            this.state.setPhase(s.phase, s.progress);
          });
        },
      },
    );
    this.frames.open();
  }

  private drawMarker(x: number, y: number, positive: boolean): void {
    const cam = this.cameras[this.state.activeCamera];
    const ctx = this.overlay.getContext("2d")!;
    const sx = (x / (cam?.width ?? 1)) * this.overlay.width;
    const sy = (y / (cam?.height ?? 1)) * this.overlay.height;
    ctx.fillStyle = positive ? "#3fba54" : "#c3413f";
    ctx.beginPath();
    ctx.arc(sx, sy, 4, 0, 2 * Math.PI);
    ctx.fill();
  }

  private renderControls(): void {
    this.controls.submit.disabled = !this.state.submitEnabled;
    this.controls.inpaint.hidden = !this.state.inpaintVisible;
    this.controls.inpaint.disabled = !this.state.permits("inpaint");
    this.controls.status.textContent =
      `${this.state.phase}` +
      (this.state.progress > 0 && this.state.progress < 1
        ? ` ${(this.state.progress * 100).toFixed(0)}%`
        : "");
  }
}
