/**
 * Wire framing: one JSON header line terminated by \n, then a raw payload of
 * width * height * 3 little-endian float32 values, row-major and
 * channel-interleaved. Responses use the same framing and echo the request
 * id. Byte-exact, no compression.
 */

export interface RequestHeader {
  id: number;
  op: "upscale";
  width: number;
  height: number;
  channels: number;
  scale: number;
  prompt?: string;
}

export interface ResponseHeader {
  id: number;
  status: "ok" | "error";
  width?: number;
  height?: number;
  channels?: number;
  message?: string;
}

export const SUPPORTED_SCALES = [1, 2, 4, 8];

export class ProtocolError extends Error {}

export function parseRequestHeader(line: string, maxSide: number): RequestHeader {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch (err) {
    throw new ProtocolError(`malformed header: ${(err as Error).message}`);
  }
  const h = raw as Partial<RequestHeader>;
  if (typeof h.id !== "number" || !Number.isInteger(h.id) || h.id < 0) {
    throw new ProtocolError("header id must be a non-negative integer");
  }
  if (h.op !== "upscale") {
    throw new ProtocolError(`unsupported op ${JSON.stringify(h.op)}`);
  }
  if (!Number.isInteger(h.width) || !Number.isInteger(h.height) || h.width! < 1 || h.height! < 1) {
    throw new ProtocolError("width/height must be positive integers");
  }
  if (h.channels !== 3) {
    throw new ProtocolError("channels must be 3");
  }
  if (!SUPPORTED_SCALES.includes(h.scale as number)) {
    throw new ProtocolError(`scale must be one of ${SUPPORTED_SCALES.join(", ")}`);
  }
  if (h.width! * (h.scale as number) > maxSide || h.height! * (h.scale as number) > maxSide) {
    throw new ProtocolError(`output exceeds --max-side ${maxSide}`);
  }
  if (h.prompt !== undefined && typeof h.prompt !== "string") {
    throw new ProtocolError("prompt must be a string");
  }
  return h as RequestHeader;
}

export function payloadBytes(width: number, height: number): number {
  return width * height * 3 * 4;
}

export function decodePayload(buf: Buffer, width: number, height: number): Float64Array {
  const n = width * height * 3;
  const out = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    const v = buf.readFloatLE(i * 4);
    out[i] = Number.isFinite(v) ? Math.min(Math.max(v, 0), 1) : 0;
  }
  return out;
}

export function encodePayload(data: Float64Array): Buffer {
  const buf = Buffer.allocUnsafe(data.length * 4);
  for (let i = 0; i < data.length; i++) {
    const v = data[i];
    buf.writeFloatLE(Number.isFinite(v) ? Math.min(Math.max(v, 0), 1) : 0, i * 4);
  }
  return buf;
}

export function encodeResponse(header: ResponseHeader, payload?: Buffer): Buffer {
  const head = Buffer.from(JSON.stringify(header) + "\n", "utf8");
  return payload ? Buffer.concat([head, payload]) : head;
}

/** Incremental reader splitting a byte stream into header lines and payloads. */
export class FrameReader {
  private buffer: Buffer = Buffer.alloc(0);

  feed(chunk: Buffer): void {
    this.buffer = this.buffer.length ? Buffer.concat([this.buffer, chunk]) : chunk;
  }

  /** Next header line (utf8, without newline) or null if incomplete. */
  nextLine(maxLen = 65536): string | null {
    const idx = this.buffer.indexOf(0x0a);
    if (idx < 0) {
      if (this.buffer.length > maxLen) {
        throw new ProtocolError("header line exceeds limit");
      }
      return null;
    }
    const line = this.buffer.subarray(0, idx).toString("utf8");
    this.buffer = this.buffer.subarray(idx + 1);
    return line;
  }

  /** Exactly n payload bytes or null if not yet buffered. */
  nextPayload(n: number): Buffer | null {
    if (this.buffer.length < n) {
      return null;
    }
    const payload = this.buffer.subarray(0, n);
    this.buffer = this.buffer.subarray(n);
    return payload;
  }

  get buffered(): number {
    return this.buffer.length;
  }
}
