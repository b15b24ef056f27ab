import { ApiClient } from "./api.js";
import { ViewerState } from "./state.js";
import { PromptPoint } from "./types.js";

/** Canvas click coordinates to image-space prompt points, phase-gated. */
export class PromptCapture {
  constructor(
    private state: ViewerState,
    private api: ApiClient,
    private imageWidth: number,
    private imageHeight: number,
  ) {}

  /** Map a click on a canvas of the given display size; returns the point or
   * null when the click is ignored (wrong phase or out of bounds). */
  click(
    canvasX: number,
    canvasY: number,
    displayWidth: number,
    displayHeight: number,
    positive = true,
  ): PromptPoint | null {
    const x = (canvasX / displayWidth) * this.imageWidth;
    const y = (canvasY / displayHeight) * this.imageHeight;
    if (x < 0 || y < 0 || x >= this.imageWidth || y >= this.imageHeight) return null;
    const point: PromptPoint = { x, y, positive };
    return this.state.addPrompt(point) ? point : null;
  }

  async submit(cameraIndex: number, oracle = "gt"): Promise<boolean> {
    if (!this.state.submitEnabled) return false;
    await this.api.submitPrompts(
      this.state.sessionId!,
      cameraIndex,
      this.state.pendingPrompts,
      oracle,
    );
    this.state.setPhase("segmenting");
    return true;
  }
}
