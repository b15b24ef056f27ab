import { IDENTITY, Phase, PromptPoint, RigidTransform } from "./types.js";

export type GizmoMode = "translate" | "rotate" | "scale";

export type Action =
  | "promptClick"
  | "submitPrompts"
  | "maskOverlay"
  | "inpaint"
  | "transform"
  | "stream";

/** Which controls each mirrored phase permits. The UI must never issue a
 * request its phase forbids. */
const ALLOWED: Record<Phase, ReadonlySet<Action>> = {
  loaded: new Set(["promptClick", "submitPrompts"]),
  segmenting: new Set([]),
  segmented: new Set(["maskOverlay", "inpaint"]),
  inpainting: new Set(["maskOverlay"]),
  ready: new Set(["maskOverlay", "transform", "stream"]),
  error: new Set([]),
};

export function allowedActions(phase: Phase): ReadonlySet<Action> {
  return ALLOWED[phase];
}

export class ViewerState {
  sessionId: string | null = null;
  phase: Phase = "loaded";
  progress = 0;
  pendingPrompts: PromptPoint[] = [];
  overlayOpacity = 0.5;
  overlayVisible = false;
  gizmoMode: GizmoMode = "translate";
  currentTransform: RigidTransform = IDENTITY;
  lastFrameSequence = -1;
  activeCamera = 0;

  private listeners: Array<() => void> = [];

  subscribe(fn: () => void): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((f) => f !== fn);
    };
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  permits(action: Action): boolean {
    return allowedActions(this.phase).has(action);
  }

  setPhase(phase: Phase, progress = 0): void {
    this.phase = phase;
    this.progress = progress;
    if (phase !== "loaded") this.pendingPrompts = [];
    this.emit();
  }

  addPrompt(point: PromptPoint): boolean {
    if (!this.permits("promptClick")) return false;
    this.pendingPrompts.push(point);
    this.emit();
    return true;
  }

  clearPrompts(): void {
    this.pendingPrompts = [];
    this.emit();
  }

  get submitEnabled(): boolean {
    return this.permits("submitPrompts") && this.pendingPrompts.length > 0;
  }

  get inpaintVisible(): boolean {
    // the inpaint control is hidden once the pipeline has passed it
    return this.phase !== "ready" && this.phase !== "inpainting";
  }

  setTransform(t: RigidTransform): void {
    this.currentTransform = t;
    this.emit();
  }

  resetTransform(): void {
    this.currentTransform = IDENTITY;
    this.emit();
  }

  /** Returns true when the frame should be displayed (newer than the last). */
  acceptFrame(sequence: number): boolean {
    if (sequence <= this.lastFrameSequence) return false;
    this.lastFrameSequence = sequence;
    this.emit();
    return true;
  }
}
