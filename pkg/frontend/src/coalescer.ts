import { RigidTransform } from "./types.js";

export type Clock = () => number;
export type Scheduler = (fn: () => void, ms: number) => unknown;

/** Rate-limits transform sends to one per interval, keeping only the newest
 * pending value (last writer wins). Default interval 50 ms = at most 20/s. */
export class TransformCoalescer {
  private lastSent = -Infinity;
  private pending: RigidTransform | null = null;
  private timerArmed = false;

  constructor(
    private send: (t: RigidTransform) => void,
    private intervalMs = 50,
    private now: Clock = () => Date.now(),
    private schedule: Scheduler = (fn, ms) => setTimeout(fn, ms),
  ) {}

  push(t: RigidTransform): void {
    const elapsed = this.now() - this.lastSent;
    if (elapsed >= this.intervalMs) {
      this.lastSent = this.now();
      this.send(t);
      return;
    }
    this.pending = t;
    if (!this.timerArmed) {
      this.timerArmed = true;
      this.schedule(() => this.flush(), this.intervalMs - elapsed);
    }
  }

  private flush(): void {
    this.timerArmed = false;
    if (this.pending === null) return;
    const t = this.pending;
    this.pending = null;
    this.lastSent = this.now();
    this.send(t);
  }
}
