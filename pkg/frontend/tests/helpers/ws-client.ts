/**
 * Minimal RFC 6455 client over node:net for tests. Implements the same
 * ShimSocket surface the browser WebSocket adapter does, so the shim under
 * test talks to the real coordinator endpoint, handshake and masking
 * included, without relying on a global WebSocket.
 */

import * as crypto from "node:crypto";
import * as net from "node:net";

import type { ShimSocket } from "../../src/transport";

const GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";

export function nodeWsSocket(url: string): ShimSocket {
  const parsed = new URL(url);
  const port = Number(parsed.port || 80);
  const host = parsed.hostname;
  const path = parsed.pathname || "/";

  let messageCb: (text: string) => void = () => {};
  let openCb: () => void = () => {};
  let errorCb: (err: unknown) => void = () => {};
  let upgraded = false;
  let closed = false;
  let buffer = Buffer.alloc(0);
  const key = crypto.randomBytes(16).toString("base64");
  const expectAccept = crypto.createHash("sha1").update(key + GUID).digest("base64");

  const sock = net.connect(port, host, () => {
    sock.write(
      `GET ${path} HTTP/1.1\r\n` +
        `Host: ${host}:${port}\r\n` +
        "Upgrade: websocket\r\n" +
        "Connection: Upgrade\r\n" +
        `Sec-WebSocket-Key: ${key}\r\n` +
        "Sec-WebSocket-Version: 13\r\n\r\n"
    );
  });
  sock.on("error", (err) => errorCb(err));
  sock.on("close", () => {
    if (!closed && upgraded) errorCb(new Error("socket closed"));
  });
  sock.on("data", (chunk: Buffer) => {
    buffer = Buffer.concat([buffer, chunk]);
    if (!upgraded) {
      const headerEnd = buffer.indexOf("\r\n\r\n");
      if (headerEnd < 0) return;
      const head = buffer.subarray(0, headerEnd).toString("latin1");
      buffer = buffer.subarray(headerEnd + 4);
      if (!head.startsWith("HTTP/1.1 101") || !head.includes(expectAccept)) {
        errorCb(new Error(`handshake rejected: ${head.split("\r\n")[0]}`));
        sock.destroy();
        return;
      }
      upgraded = true;
      openCb();
    }
    drainFrames();
  });

  function drainFrames(): void {
    while (upgraded) {
      if (buffer.length < 2) return;
      const opcode = buffer[0] & 0x0f;
      let length = buffer[1] & 0x7f;
      let offset = 2;
      if (length === 126) {
        if (buffer.length < 4) return;
        length = buffer.readUInt16BE(2);
        offset = 4;
      } else if (length === 127) {
        if (buffer.length < 10) return;
        length = Number(buffer.readBigUInt64BE(2));
        offset = 10;
      }
      if (buffer.length < offset + length) return;
      const payload = buffer.subarray(offset, offset + length);
      buffer = buffer.subarray(offset + length);
      if (opcode === 0x1) {
        messageCb(payload.toString("utf-8"));
      } else if (opcode === 0x9) {
        writeFrame(0xa, payload);
      } else if (opcode === 0x8) {
        closed = true;
        sock.destroy();
        return;
      }
    }
  }

  function writeFrame(opcode: number, payload: Buffer): void {
    const mask = crypto.randomBytes(4);
    const masked = Buffer.from(payload);
    for (let i = 0; i < masked.length; i++) masked[i] ^= mask[i % 4];
    let header: Buffer;
    if (payload.length < 126) {
      header = Buffer.from([0x80 | opcode, 0x80 | payload.length]);
    } else if (payload.length < 65536) {
      header = Buffer.alloc(4);
      header[0] = 0x80 | opcode;
      header[1] = 0x80 | 126;
      header.writeUInt16BE(payload.length, 2);
    } else {
      header = Buffer.alloc(10);
      header[0] = 0x80 | opcode;
      header[1] = 0x80 | 127;
      header.writeBigUInt64BE(BigInt(payload.length), 2);
    }
    sock.write(Buffer.concat([header, mask, masked]));
  }

  return {
    send(text: string): void {
      writeFrame(0x1, Buffer.from(text, "utf-8"));
    },
    close(): void {
      closed = true;
      if (upgraded) writeFrame(0x8, Buffer.alloc(0));
      sock.end();
      setTimeout(() => sock.destroy(), 50).unref();
    },
    onMessage(cb) {
      messageCb = cb;
    },
    onOpen(cb) {
      openCb = cb;
      if (upgraded) cb();
    },
    onError(cb) {
      errorCb = cb;
    },
  };
}
