import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { describe, expect, it } from "vitest";

import { FramesClient, parseFrameMessage, WebSocketLike } from "../src/frames.js";
import { FrameHeader } from "../src/types.js";

function frameMessage(header: FrameHeader, payload = new Uint8Array([0xff, 0xd8])): ArrayBuffer {
  const headerBytes = new TextEncoder().encode(JSON.stringify(header));
  const buf = new ArrayBuffer(4 + headerBytes.length + payload.length);
  new DataView(buf).setUint32(0, headerBytes.length, false);
  new Uint8Array(buf, 4, headerBytes.length).set(headerBytes);
  new Uint8Array(buf, 4 + headerBytes.length).set(payload);
  return buf;
}

class FakeSocket implements WebSocketLike {
  binaryType = "blob";
  onmessage: ((ev: { data: ArrayBuffer | string }) => void) | null = null;
  onclose: ((ev: unknown) => void) | null = null;
  onerror: ((ev: unknown) => void) | null = null;
  closed = false;
  close(): void {
    this.closed = true;
  }
  emit(data: ArrayBuffer | string): void {
    this.onmessage?.({ data });
  }
  drop(): void {
    this.onclose?.({});
  }
}

describe("parseFrameMessage", () => {
  it("splits header and payload", () => {
    const msg = frameMessage({ v: 1, type: "frame", seq: 4, width: 2, height: 2 });
    const { header, payload } = parseFrameMessage(msg);
    expect(header.seq).toBe(4);
    expect([...payload]).toEqual([0xff, 0xd8]);
  });

  it("rejects truncated messages", () => {
    expect(() => parseFrameMessage(new ArrayBuffer(2))).toThrow();
  });

  it("parses a frame message captured from the real service", () => {
    const here = dirname(fileURLToPath(import.meta.url));
    const raw = readFileSync(join(here, "fixtures", "frame_message.bin"));
    const buf = raw.buffer.slice(raw.byteOffset, raw.byteOffset + raw.byteLength);
    const { header, payload } = parseFrameMessage(buf);
    expect(header.type).toBe("frame");
    expect(header.format).toBe("jpeg");
    expect(header.width).toBe(32);
    expect(header.height).toBe(32);
    expect(header.seq).toBeGreaterThanOrEqual(0);
    expect(payload[0]).toBe(0xff); // JPEG SOI
    expect(payload[1]).toBe(0xd8);
  });
});

describe("FramesClient", () => {
  function setup() {
    const sockets: FakeSocket[] = [];
    const shown: number[] = [];
    let resyncs = 0;
    const client = new FramesClient(
      () => {
        const s = new FakeSocket();
        sockets.push(s);
        return s;
      },
      {
        onFrame: (header) => shown.push(header.seq!),
        onResync: () => resyncs++,
      },
      (fn) => {
        fn(); // immediate reconnect in tests
        return 0;
      },
    );
    client.open();
    return { client, sockets, shown, resyncs: () => resyncs };
  }

  it("delivers frames in order and drops stale ones", () => {
    const { sockets, shown } = setup();
    const s = sockets[0];
    s.emit(frameMessage({ v: 1, type: "frame", seq: 7 }));
    s.emit(frameMessage({ v: 1, type: "frame", seq: 9 }));
    s.emit(frameMessage({ v: 1, type: "frame", seq: 7 })); // late: dropped
    expect(shown).toEqual([7, 9]);
  });

  it("ignores heartbeats", () => {
    const { sockets, shown } = setup();
    sockets[0].emit(frameMessage({ v: 1, type: "heartbeat" }, new Uint8Array()));
    expect(shown).toEqual([]);
  });

  it("reconnects after a drop and resyncs the session", () => {
    const { sockets, shown, resyncs } = setup();
    sockets[0].emit(frameMessage({ v: 1, type: "frame", seq: 1 }));
    sockets[0].drop();
    expect(sockets).toHaveLength(2);
    expect(resyncs()).toBe(1);
    sockets[1].emit(frameMessage({ v: 1, type: "frame", seq: 2 }));
    expect(shown).toEqual([1, 2]);
  });

  it("close() stops reconnecting", () => {
    const { client, sockets } = setup();
    client.close();
    expect(sockets[0].closed).toBe(true);
    sockets[0].drop();
    expect(sockets).toHaveLength(1);
  });
});
