/**
 * The service: accepts connections (TCP) or speaks over stdio, parses one
 * request at a time per connection, dispatches to the mounted model and
 * streams the response back.
 *
 * Error handling per the contract: a malformed header line answers with
 * status "error" and the connection stays open (the line framing resyncs on
 * the next newline); a payload underrun closes the connection since the
 * stream cannot be trusted afterwards.
 */
import * as net from "node:net";
import { Duplex } from "node:stream";

import { ImageData, UpscaleModel } from "./model.js";
import {
  FrameReader,
  ProtocolError,
  RequestHeader,
  decodePayload,
  encodePayload,
  encodeResponse,
  parseRequestHeader,
  payloadBytes,
} from "./protocol.js";

export interface ServerConfig {
  model: UpscaleModel;
  maxSide: number;
}

/** Model calls are serialized; inference is not assumed reentrant. */
class ModelQueue {
  private chain: Promise<unknown> = Promise.resolve();

  run<T>(fn: () => T): Promise<T> {
    const next = this.chain.then(() => fn());
    this.chain = next.catch(() => undefined);
    return next;
  }
}

export class Session {
  private reader = new FrameReader();
  private header: RequestHeader | null = null;
  private processing = false;
  private closed = false;
  requestCount = 0;

  constructor(
    private readonly stream: Duplex,
    private readonly config: ServerConfig,
    private readonly queue: ModelQueue,
  ) {
    stream.on("data", (chunk: Buffer) => {
      this.reader.feed(chunk);
      void this.pump();
    });
    stream.on("error", () => this.close());
    stream.on("end", () => this.close());
  }

  private close(): void {
    this.closed = true;
    this.stream.end();
  }

  private async pump(): Promise<void> {
    if (this.processing || this.closed) {
      return;
    }
    this.processing = true;
    try {
      for (;;) {
        if (this.header === null) {
          let line: string | null;
          try {
            line = this.reader.nextLine();
          } catch (err) {
            this.stream.write(encodeResponse({ id: 0, status: "error", message: String(err) }));
            this.close();
            return;
          }
          if (line === null) {
            return;
          }
          try {
            this.header = parseOrThrow(line, this.config.maxSide);
          } catch (err) {
            // header-level fault: report and stay open, framing resyncs on \n
            const id = idOf(line);
            this.stream.write(encodeResponse({
              id, status: "error", message: (err as Error).message,
            }));
            continue;
          }
        }
        const need = payloadBytes(this.header.width, this.header.height);
        const payload = this.reader.nextPayload(need);
        if (payload === null) {
          return;
        }
        const header = this.header;
        this.header = null;
        await this.respond(header, payload);
      }
    } finally {
      this.processing = false;
    }
  }

  private async respond(header: RequestHeader, payload: Buffer): Promise<void> {
    this.requestCount += 1;
    try {
      const image: ImageData = {
        data: decodePayload(payload, header.width, header.height),
        width: header.width,
        height: header.height,
      };
      const out = await this.queue.run(() =>
        this.config.model.upscale(image, header.scale, header.prompt));
      this.stream.write(encodeResponse(
        { id: header.id, status: "ok", width: out.width, height: out.height, channels: 3 },
        encodePayload(out.data),
      ));
    } catch (err) {
      this.stream.write(encodeResponse({
        id: header.id, status: "error", message: (err as Error).message,
      }));
    }
  }
}

function idOf(line: string): number {
  try {
    const parsed = JSON.parse(line);
    if (typeof parsed?.id === "number" && Number.isInteger(parsed.id) && parsed.id >= 0) {
      return parsed.id;
    }
  } catch {
    // unparseable header carries no id
  }
  return 0;
}

function parseOrThrow(line: string, maxSide: number): RequestHeader {
  try {
    return parseRequestHeader(line, maxSide);
  } catch (err) {
    if (err instanceof ProtocolError) {
      throw err;
    }
    throw new ProtocolError(String(err));
  }
}

export function serveTcp(config: ServerConfig, host: string, port: number): Promise<net.Server> {
  const queue = new ModelQueue();
  const server = net.createServer((socket) => {
    socket.on("error", () => socket.destroy());
    new Session(socket, config, queue);
  });
  return new Promise((resolve, reject) => {
    server.once("error", reject);
    server.listen(port, host, () => {
      const addr = server.address() as net.AddressInfo;
      // parsed by clients and tests to find an ephemeral port
      console.log(`listening ${addr.address}:${addr.port}`);
      resolve(server);
    });
  });
}

export function serveStdio(config: ServerConfig): void {
  const queue = new ModelQueue();
  // node streams are accepted at runtime; the lib typing only admits web streams
  const pair = { readable: process.stdin, writable: process.stdout } as unknown as Iterable<never>;
  const duplex = Duplex.from(pair);
  new Session(duplex, config, queue);
  console.error("serving on stdio");
}
