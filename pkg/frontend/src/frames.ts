import { FrameHeader } from "./types.js";

export interface ParsedFrame {
  header: FrameHeader;
  payload: Uint8Array;
}

/** Binary frame message: 4-byte big-endian header length, JSON header, payload. */
export function parseFrameMessage(data: ArrayBuffer): ParsedFrame {
  const view = new DataView(data);
  if (data.byteLength < 4) throw new Error("frame message too short");
  const headerLength = view.getUint32(0, false);
  if (4 + headerLength > data.byteLength) throw new Error("truncated frame header");
  const headerBytes = new Uint8Array(data, 4, headerLength);
  const header = JSON.parse(new TextDecoder().decode(headerBytes)) as FrameHeader;
  return { header, payload: new Uint8Array(data, 4 + headerLength) };
}

export interface WebSocketLike {
  binaryType: string;
  onmessage: ((ev: { data: ArrayBuffer | string }) => void) | null;
  onclose: ((ev: unknown) => void) | null;
  onerror: ((ev: unknown) => void) | null;
  close(): void;
}

export interface FramesClientHooks {
  /** Newest-frame delivery; stale frames (seq <= last displayed) are dropped
   * before this is called. */
  onFrame: (header: FrameHeader, payload: Uint8Array) => void;
  /** Called after a reconnect so the owner can resync phase/status. */
  onResync?: () => void;
  onError?: (detail: string) => void;
}

/** Maintains the frame WebSocket: drops out-of-order frames, reconnects with
 * a session resync. */
export class FramesClient {
  private socket: WebSocketLike | null = null;
  private lastSequence = -1;
  private closed = false;
  reconnectDelayMs = 250;

  constructor(
    private connect: () => WebSocketLike,
    private hooks: FramesClientHooks,
    private schedule: (fn: () => void, ms: number) => unknown = (fn, ms) => setTimeout(fn, ms),
  ) {}

  get lastFrameSequence(): number {
    return this.lastSequence;
  }

  open(): void {
    this.closed = false;
    this.attach(false);
  }

  private attach(isReconnect: boolean): void {
    const socket = this.connect();
    socket.binaryType = "arraybuffer";
    this.socket = socket;
    if (isReconnect && this.hooks.onResync) this.hooks.onResync();
    socket.onmessage = (ev) => {
      if (typeof ev.data === "string") {
        try {
          const header = JSON.parse(ev.data) as FrameHeader;
          if (header.type === "error" && this.hooks.onError) {
            this.hooks.onError(header.detail ?? "stream error");
          }
        } catch {
          /* ignore malformed text frames */
        }
        return;
      }
      const { header, payload } = parseFrameMessage(ev.data);
      if (header.type !== "frame" || header.seq === undefined) return;
      if (header.seq <= this.lastSequence) return; // stale frame: drop
      this.lastSequence = header.seq;
      this.hooks.onFrame(header, payload);
    };
    socket.onclose = () => {
      this.socket = null;
      if (!this.closed) this.schedule(() => this.attach(true), this.reconnectDelayMs);
    };
    socket.onerror = () => undefined;
  }

  close(): void {
    this.closed = true;
    this.socket?.close();
    this.socket = null;
  }
}
