import * as fs from "node:fs";
import * as path from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import { decode, DecodeError, encode, Message } from "../src/protocol";

const here = path.dirname(fileURLToPath(import.meta.url));
const GOLDEN = path.resolve(here, "../../tests/golden/wire_messages.ndjson");

describe("codec", () => {
  it("re-encodes every golden line byte-for-byte", () => {
    const lines = fs.readFileSync(GOLDEN, "utf-8").split("\n").filter((l) => l.length > 0);
    expect(lines.length).toBeGreaterThan(10);
    for (const line of lines) {
      const msg = decode(line);
      expect(encode(msg)).toBe(line);
    }
  });

  it("round-trips each message shape", () => {
    const msgs: Message[] = [
      { t: "Hello", clientInfo: "shim käfer-1" },
      { t: "RoleAssign", role: "Follower" },
      { t: "RandomBatch", values: [0.5, 0.25] },
      {
        t: "Event",
        record: {
          seq: 7, kind: "DomEvent", eventType: "onclick", elementId: "sid-3",
          payload: { clientX: 10, shiftKey: false, label: "ü" }, wallClockMs: 12,
        },
      },
      { t: "ReplayBegin", count: 0 },
      { t: "Synced" },
      { t: "PromoteRequest", pendingTimers: [{ hash: "a".repeat(32), delay: 20, kind: "Repeating" }] },
      { t: "RoleSwap", newRole: "Leader", seq: 9, pendingTimers: [] },
      { t: "Ack", seq: 3 },
      { t: "Bye" },
    ];
    for (const msg of msgs) {
      expect(decode(encode(msg))).toEqual(msg);
    }
  });

  it("accepts a trailing newline like the line framing", () => {
    expect(decode('{"t":"Synced"}\n')).toEqual({ t: "Synced" });
  });

  it("rejects unknown tags and malformed records", () => {
    expect(() => decode('{"t":"Nope"}')).toThrow(DecodeError);
    expect(() => decode("not json")).toThrow(DecodeError);
    expect(() => decode('{"t":"Ack"}')).toThrow(DecodeError);
    expect(() => decode('{"t":"Ack","seq":1,"extra":2}')).toThrow(DecodeError);
    expect(() =>
      decode('{"t":"Event","seq":1,"kind":"TimerFired","eventType":"","elementId":"","payload":{},"wallClockMs":0}')
    ).toThrow(DecodeError);
    expect(() => decode('{"t":"RandomBatch","values":[1.5]}')).toThrow(DecodeError);
  });

  it("escapes non-ascii exactly like the coordinator", () => {
    expect(encode({ t: "Hello", clientInfo: "shim käfer-1" }))
      .toBe('{"t":"Hello","clientInfo":"shim k\\u00e4fer-1"}');
  });
});
