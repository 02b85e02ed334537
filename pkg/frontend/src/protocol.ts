/**
 * Wire protocol: the same newline-delimited JSON messages the coordinator
 * speaks, carried here as one text frame per message (no trailing newline).
 * Encoding is byte-compatible with the coordinator's encoder: ordered keys,
 * compact separators, non-ASCII escaped. Pinned by golden-file tests.
 */

export type Role = "Leader" | "Follower";

export type RecordKind =
  | "DomEvent"
  | "TimerFired"
  | "StateUpdate"
  | "SelectionUpdate"
  | "RandomRefill";

export type TimerKind = "OneShot" | "Repeating";

export interface EventRecord {
  seq: number;
  kind: RecordKind;
  eventType: string;
  elementId: string;
  payload: Record<string, unknown>;
  wallClockMs: number;
}

export interface PendingTimer {
  hash: string;
  delay: number;
  kind: TimerKind;
}

export type Message =
  | { t: "Hello"; clientInfo: string }
  | { t: "RoleAssign"; role: Role }
  | { t: "RandomBatch"; values: number[] }
  | { t: "Event"; record: EventRecord }
  | { t: "ReplayBegin"; count: number }
  | { t: "Synced" }
  | { t: "PromoteRequest"; pendingTimers: PendingTimer[] }
  | { t: "RoleSwap"; newRole: Role; seq: number; pendingTimers: PendingTimer[] }
  | { t: "Ack"; seq: number }
  | { t: "Bye" };

export class DecodeError extends Error {}
export class EncodeError extends Error {}

const HASH_RE = /^[0-9a-f]{32}$/;
const RECORD_KINDS = new Set(["DomEvent", "TimerFired", "StateUpdate", "SelectionUpdate", "RandomRefill"]);
const TIMER_KINDS = new Set(["OneShot", "Repeating"]);
const ROLES = new Set(["Leader", "Follower"]);

function fail(reason: string): never {
  throw new DecodeError(reason);
}

function checkInt(value: unknown, name: string): number {
  if (typeof value !== "number" || !Number.isInteger(value) || value < 0 || value > Number.MAX_SAFE_INTEGER) {
    fail(`${name} must be a non-negative integer`);
  }
  return value;
}

function checkStr(value: unknown, name: string): string {
  if (typeof value !== "string") fail(`${name} must be a string`);
  return value;
}

function checkUnitValues(values: unknown, name: string): number[] {
  if (!Array.isArray(values) || values.length === 0) fail(`${name} must be a non-empty array`);
  for (const v of values) {
    if (typeof v !== "number" || !Number.isFinite(v) || v < 0 || v >= 1) {
      fail(`${name} entries must be numbers in [0,1)`);
    }
  }
  return values as number[];
}

function checkKeys(obj: Record<string, unknown>, tag: string, names: string[]): void {
  for (const name of names) {
    if (!(name in obj)) fail(`${tag} missing field ${name}`);
  }
  for (const key of Object.keys(obj)) {
    if (key !== "t" && !names.includes(key)) fail(`${tag} has unexpected field ${key}`);
  }
}

export function validateRecord(record: EventRecord): void {
  checkInt(record.seq, "seq");
  checkInt(record.wallClockMs, "wallClockMs");
  if (!RECORD_KINDS.has(record.kind)) fail(`unknown record kind ${record.kind}`);
  checkStr(record.eventType, "eventType");
  checkStr(record.elementId, "elementId");
  if (record.payload === null || typeof record.payload !== "object" || Array.isArray(record.payload)) {
    fail("payload must be an object");
  }
  if (record.kind === "DomEvent") {
    if (!record.eventType || !record.elementId) fail("DomEvent requires eventType and elementId");
  } else if (record.eventType) {
    fail(`${record.kind} must have empty eventType`);
  }
  if ((record.kind === "TimerFired" || record.kind === "RandomRefill") && record.elementId) {
    fail(`${record.kind} must have empty elementId`);
  }
  if (record.kind === "TimerFired" && !HASH_RE.test(String(record.payload["hash"]))) {
    fail("TimerFired payload.hash must be 32 lowercase hex chars");
  }
  if (record.kind === "RandomRefill") {
    checkUnitValues(record.payload["values"], "payload.values");
  }
}

function validatePendingTimers(value: unknown): PendingTimer[] {
  if (!Array.isArray(value)) fail("pendingTimers must be an array");
  return value.map((entry) => {
    if (entry === null || typeof entry !== "object") fail("pending timer must be an object");
    const obj = entry as Record<string, unknown>;
    checkKeys(obj, "PendingTimer", ["hash", "delay", "kind"]);
    const hash = checkStr(obj.hash, "hash");
    if (!HASH_RE.test(hash)) fail("pending timer hash must be 32 lowercase hex chars");
    const delay = checkInt(obj.delay, "delay");
    if (delay <= 0) fail("pending timer delay must be positive");
    if (!TIMER_KINDS.has(obj.kind as string)) fail(`unknown timer kind ${obj.kind}`);
    return { hash, delay, kind: obj.kind as TimerKind };
  });
}

/** Escape non-ASCII so the bytes match the coordinator's encoder exactly. */
function escapeNonAscii(text: string): string {
  return text.replace(/[-￿]/g, (ch) => "\\u" + ch.charCodeAt(0).toString(16).padStart(4, "0"));
}

function stringify(fields: Record<string, unknown>): string {
  const text = JSON.stringify(fields);
  if (text === undefined || /\bNaN\b|\bInfinity\b/.test(text)) {
    throw new EncodeError("unrepresentable value in message");
  }
  return escapeNonAscii(text);
}

export function encode(msg: Message): string {
  switch (msg.t) {
    case "Hello":
      return stringify({ t: "Hello", clientInfo: msg.clientInfo });
    case "RoleAssign":
      return stringify({ t: "RoleAssign", role: msg.role });
    case "RandomBatch":
      checkUnitValues(msg.values, "values");
      return stringify({ t: "RandomBatch", values: msg.values });
    case "Event": {
      validateRecord(msg.record);
      const r = msg.record;
      return stringify({
        t: "Event",
        seq: r.seq,
        kind: r.kind,
        eventType: r.eventType,
        elementId: r.elementId,
        payload: r.payload,
        wallClockMs: r.wallClockMs,
      });
    }
    case "ReplayBegin":
      return stringify({ t: "ReplayBegin", count: msg.count });
    case "Synced":
      return stringify({ t: "Synced" });
    case "PromoteRequest":
      return stringify({
        t: "PromoteRequest",
        pendingTimers: msg.pendingTimers.map((p) => ({ hash: p.hash, delay: p.delay, kind: p.kind })),
      });
    case "RoleSwap":
      return stringify({
        t: "RoleSwap",
        newRole: msg.newRole,
        seq: msg.seq,
        pendingTimers: msg.pendingTimers.map((p) => ({ hash: p.hash, delay: p.delay, kind: p.kind })),
      });
    case "Ack":
      return stringify({ t: "Ack", seq: msg.seq });
    case "Bye":
      return stringify({ t: "Bye" });
  }
}

export function decode(text: string): Message {
  let raw: unknown;
  const line = text.endsWith("\n") ? text.slice(0, -1) : text;
  try {
    raw = JSON.parse(line);
  } catch (exc) {
    fail(`malformed JSON: ${exc}`);
  }
  if (raw === null || typeof raw !== "object" || Array.isArray(raw)) fail("message must be a JSON object");
  const obj = raw as Record<string, unknown>;
  const tag = obj.t;
  switch (tag) {
    case "Hello":
      checkKeys(obj, tag, ["clientInfo"]);
      return { t: "Hello", clientInfo: checkStr(obj.clientInfo, "clientInfo") };
    case "RoleAssign":
      checkKeys(obj, tag, ["role"]);
      if (!ROLES.has(obj.role as string)) fail(`unknown role ${obj.role}`);
      return { t: "RoleAssign", role: obj.role as Role };
    case "RandomBatch":
      checkKeys(obj, tag, ["values"]);
      return { t: "RandomBatch", values: checkUnitValues(obj.values, "values") };
    case "Event": {
      checkKeys(obj, tag, ["seq", "kind", "eventType", "elementId", "payload", "wallClockMs"]);
      const record: EventRecord = {
        seq: obj.seq as number,
        kind: obj.kind as RecordKind,
        eventType: obj.eventType as string,
        elementId: obj.elementId as string,
        payload: obj.payload as Record<string, unknown>,
        wallClockMs: obj.wallClockMs as number,
      };
      validateRecord(record);
      return { t: "Event", record };
    }
    case "ReplayBegin":
      checkKeys(obj, tag, ["count"]);
      return { t: "ReplayBegin", count: checkInt(obj.count, "count") };
    case "Synced":
      checkKeys(obj, tag, []);
      return { t: "Synced" };
    case "PromoteRequest":
      checkKeys(obj, tag, ["pendingTimers"]);
      return { t: "PromoteRequest", pendingTimers: validatePendingTimers(obj.pendingTimers) };
    case "RoleSwap":
      checkKeys(obj, tag, ["newRole", "seq", "pendingTimers"]);
      if (!ROLES.has(obj.newRole as string)) fail(`unknown role ${obj.newRole}`);
      return {
        t: "RoleSwap",
        newRole: obj.newRole as Role,
        seq: checkInt(obj.seq, "seq"),
        pendingTimers: validatePendingTimers(obj.pendingTimers),
      };
    case "Ack":
      checkKeys(obj, tag, ["seq"]);
      return { t: "Ack", seq: checkInt(obj.seq, "seq") };
    case "Bye":
      checkKeys(obj, tag, []);
      return { t: "Bye" };
    case undefined:
      fail('message missing tag field "t"');
  }
  fail(`unknown tag ${String(tag)}`);
}
