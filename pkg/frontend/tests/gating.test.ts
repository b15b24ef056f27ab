import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { PromptCapture } from "../src/prompts.js";
import { ViewerState } from "../src/state.js";
import { Phase, PHASES } from "../src/types.js";
import { mockServer } from "./mock_server.js";

/** End-to-end gating check against a mock server: for every phase, drive each
 * control and assert that forbidden phases produce zero requests. */
describe("no control issues a request its phase forbids", () => {
  async function driveControls(phase: Phase) {
    const { fetchImpl, requests } = mockServer();
    const api = new ApiClient("http://test", fetchImpl);
    const state = new ViewerState();
    state.sessionId = "s-1";
    state.setPhase(phase);

    // prompt capture + submit
    const capture = new PromptCapture(state, api, 64, 64);
    capture.click(10, 10, 64, 64);
    await capture.submit(0);
    const promptRequests = requests.filter((r) => r.url.includes("/prompts")).length;

    // inpaint button handler (mirrors the viewer glue)
    if (state.permits("inpaint")) await api.runInpaint("s-1");
    const inpaintRequests = requests.filter((r) => r.url.includes("/inpaint")).length;

    // gizmo-driven transform send
    if (state.permits("transform")) {
      await api.sendTransform("s-1", {
        quaternion: [1, 0, 0, 0],
        translation: [1, 0, 0],
        scale: 1,
      });
    }
    const transformRequests = requests.filter((r) => r.url.includes("/transform")).length;
    return { promptRequests, inpaintRequests, transformRequests };
  }

  const expectations: Record<Phase, [number, number, number]> = {
    loaded: [1, 0, 0],
    segmenting: [0, 0, 0],
    segmented: [0, 1, 0],
    inpainting: [0, 0, 0],
    ready: [0, 0, 1],
    error: [0, 0, 0],
  };

  for (const phase of PHASES) {
    it(`phase '${phase}'`, async () => {
      const got = await driveControls(phase);
      const [prompts, inpaint, transform] = expectations[phase];
      expect(got.promptRequests).toBe(prompts);
      expect(got.inpaintRequests).toBe(inpaint);
      expect(got.transformRequests).toBe(transform);
    });
  }
});
