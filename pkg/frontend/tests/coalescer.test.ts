import { describe, expect, it } from "vitest";

import { TransformCoalescer } from "../src/coalescer.js";
import { IDENTITY, RigidTransform } from "../src/types.js";

function withTranslationX(x: number): RigidTransform {
  return { ...IDENTITY, translation: [x, 0, 0] };
}

/** Manual clock + scheduler so timing is exact. */
function harness() {
  let now = 0;
  const timers: Array<{ at: number; fn: () => void }> = [];
  const sent: Array<{ at: number; t: RigidTransform }> = [];
  const coalescer = new TransformCoalescer(
    (t) => sent.push({ at: now, t }),
    50,
    () => now,
    (fn, ms) => timers.push({ at: now + ms, fn }),
  );
  const advance = (to: number) => {
    while (true) {
      const due = timers.filter((t) => t.at <= to).sort((a, b) => a.at - b.at)[0];
      if (!due) break;
      timers.splice(timers.indexOf(due), 1);
      now = due.at;
      due.fn();
    }
    now = to;
  };
  return { coalescer, sent, advance, tick: (dt: number) => advance(now + dt) };
}

describe("TransformCoalescer", () => {
  it("sends at most 20 messages per second under 120 Hz input", () => {
    const { coalescer, sent, advance } = harness();
    const dt = 1000 / 120;
    for (let i = 0; i < 120; i++) {
      advance(i * dt);
      coalescer.push(withTranslationX(i));
    }
    advance(1000 - 1e-9);
    const inFirstSecond = sent.filter((s) => s.at < 1000);
    expect(inFirstSecond.length).toBeLessThanOrEqual(20);
    expect(inFirstSecond.length).toBeGreaterThan(10); // still responsive
  });

  it("keeps only the newest pending transform (last writer wins)", () => {
    const { coalescer, sent, advance } = harness();
    coalescer.push(withTranslationX(1)); // sent immediately
    coalescer.push(withTranslationX(2));
    coalescer.push(withTranslationX(3));
    advance(60);
    expect(sent).toHaveLength(2);
    expect(sent[1].t.translation[0]).toBe(3);
  });

  it("sends immediately when idle", () => {
    const { coalescer, sent } = harness();
    coalescer.push(withTranslationX(7));
    expect(sent).toHaveLength(1);
  });

  it("respects the minimum interval between consecutive sends", () => {
    const { coalescer, sent, advance } = harness();
    for (let i = 0; i < 40; i++) {
      advance(i * 10);
      coalescer.push(withTranslationX(i));
    }
    advance(2000);
    for (let i = 1; i < sent.length; i++) {
      expect(sent[i].at - sent[i - 1].at).toBeGreaterThanOrEqual(50);
    }
  });
});
