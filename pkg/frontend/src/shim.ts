/**
 * The in-page capture/replay layer.
 *
 * On the leader it rewires every source of non-determinism the page can
 * touch — DOM0 handler slots, addEventListener, createElement, setTimeout /
 * setInterval, Math.random, stateful-element changes, text selection — so
 * each occurrence is shipped to the coordinator before the original code
 * runs. On the follower it fills the same tables but installs nothing, and
 * replays whatever the coordinator relays by calling the stored handlers
 * directly (never synthetic events). Roles can swap in place.
 *
 * Shim-internal code only ever calls the captured originals of the
 * functions it intercepts.
 */

import { md5Hex } from "./md5";
import {
  decode,
  encode,
  EventRecord,
  Message,
  PendingTimer,
  RecordKind,
  Role,
  TimerKind,
} from "./protocol";
import {
  AnyElement,
  Handler,
  HandlerTable,
  HashCollisionError,
  PoolExhaustedError,
  RandomPool,
  TimerTable,
} from "./tables";
import { browserSocket, ShimSocket } from "./transport";

export interface ShimConfig {
  coordinatorUrl: string;
  clientInfo?: string;
  poolSize?: number;
  ackMode?: boolean;
  /** Window to instrument; defaults to the global one. */
  win?: any;
  socketFactory?: (url: string) => ShimSocket;
  now?: () => number;
}

const INTERNAL_ATTR = "data-mvx-internal";

const DOM0_SLOTS = [
  "onclick", "ondblclick", "onchange", "oninput", "onsubmit",
  "onkeydown", "onkeyup", "onkeypress",
  "onmousedown", "onmouseup", "onmouseover", "onmouseout", "onmousemove",
  "onfocus", "onblur",
];

const EVENT_FIELDS = [
  "type", "clientX", "clientY", "screenX", "screenY", "offsetX", "offsetY",
  "pageX", "pageY", "button", "buttons", "key", "code", "keyCode",
  "charCode", "which", "detail", "shiftKey", "ctrlKey", "altKey", "metaKey",
];

const STATEFUL_TAGS = new Set(["INPUT", "TEXTAREA", "SELECT"]);

interface LiveWrapper {
  target: AnyElement;
  via: "dom0" | "dom2";
  eventType: string;
  wrapper: Handler;
}

interface PendingLive {
  realId: unknown;
  kind: TimerKind;
  delay: number;
}

export class Shim {
  role: Role | null = null;
  synced = false;
  divergence: string | null = null;
  appliedSeq = 0;
  expectedSeq = 1;
  emittedRecordCount = 0;
  promoteRequestedAt: number | null = null;
  roleSwapAppliedAt: number | null = null;

  readonly handlers = new HandlerTable();
  readonly timers = new TimerTable();
  readonly pool: RandomPool;

  private readonly win: any;
  private readonly doc: any;
  private readonly clientInfo: string;
  private readonly ackMode: boolean;
  private readonly now: () => number;
  private readonly makeSocket: (url: string) => ShimSocket;
  private readonly url: string;

  private socket: ShimSocket | null = null;
  private replayTarget: number | null = null;
  private swapInFlight = false;
  private instrumented = false;
  private originalOnload: (() => void) | null = null;
  private readyResolve: ((role: Role) => void) | null = null;
  private readyReject: ((err: unknown) => void) | null = null;

  private real!: {
    setTimeout: (fn: () => void, delay: number) => unknown;
    clearTimeout: (id: unknown) => void;
    setInterval: (fn: () => void, delay: number) => unknown;
    clearInterval: (id: unknown) => void;
    createElement: (tag: string, options?: unknown) => AnyElement;
    random: () => number;
  };
  private realAdds = new WeakMap<object, Handler>();
  private liveWrappers = new Map<string, LiveWrapper>();
  private pendingTimers = new Map<string, PendingLive>();
  private captureListeners: Array<{ target: AnyElement; name: string; fn: Handler }> = [];
  private pendingSweeps: AnyElement[] = [];
  private idCounter = 0;
  private promoteButton: AnyElement | null = null;

  constructor(config: ShimConfig) {
    this.url = config.coordinatorUrl;
    this.clientInfo = config.clientInfo ?? "shim";
    this.ackMode = config.ackMode ?? false;
    this.pool = new RandomPool(config.poolSize ?? 100);
    this.win = config.win ?? (globalThis as any).window;
    this.doc = this.win.document;
    this.now = config.now ?? (() => Date.now());
    this.makeSocket = config.socketFactory ?? browserSocket;
  }

  /** Entry point for the rewritten body onload. Resolves once the role is
   * assigned and the page is instrumented. */
  init(originalOnload?: (() => void) | null): Promise<Role> {
    this.originalOnload = originalOnload ?? null;
    return new Promise<Role>((resolve, reject) => {
      this.readyResolve = resolve;
      this.readyReject = reject;
      let socket: ShimSocket;
      try {
        socket = this.makeSocket(this.url);
      } catch (err) {
        this.connectionFailed(err);
        return;
      }
      this.socket = socket;
      socket.onError((err) => this.connectionFailed(err));
      socket.onMessage((text) => this.handleFrame(text));
      socket.onOpen(() => this.send({ t: "Hello", clientInfo: this.clientInfo }));
    });
  }

  requestPromotion(): void {
    if (this.role !== "Leader" || this.swapInFlight) return;
    this.swapInFlight = true;
    this.promoteRequestedAt = this.now();
    this.send({ t: "PromoteRequest", pendingTimers: this.pendingTimerList() });
  }

  close(): void {
    this.socket?.close();
    this.socket = null;
  }

  pendingTimerList(): PendingTimer[] {
    const out: PendingTimer[] = [];
    for (const hash of Array.from(this.pendingTimers.keys()).sort()) {
      const live = this.pendingTimers.get(hash)!;
      out.push({ hash, delay: live.delay, kind: live.kind });
    }
    return out;
  }

  // -- socket plumbing -------------------------------------------------

  private send(msg: Message): void {
    if (msg.t === "Event" || msg.t === "RandomBatch") this.emittedRecordCount++;
    this.socket?.send(encode(msg));
  }

  private connectionFailed(err: unknown): void {
    if (this.instrumented) {
      this.banner(`coordinator connection lost: ${err}`);
      return;
    }
    this.banner("coordinator unreachable; page runs uninstrumented");
    const onload = this.originalOnload;
    this.originalOnload = null;
    onload?.();
    this.readyReject?.(err instanceof Error ? err : new Error(String(err)));
    this.readyReject = null;
    this.readyResolve = null;
  }

  private handleFrame(text: string): void {
    if (this.divergence) return;
    let msg: Message;
    try {
      msg = decode(text);
    } catch (err) {
      this.diverge(`undecodable frame: ${err}`);
      return;
    }
    try {
      this.handleMessage(msg);
    } catch (err) {
      this.diverge(String(err));
    }
  }

  private handleMessage(msg: Message): void {
    switch (msg.t) {
      case "RoleAssign":
        this.instrument(msg.role);
        return;
      case "ReplayBegin":
        this.replayTarget = msg.count;
        if (msg.count === 0) {
          this.replayTarget = null;
          this.send({ t: "Ack", seq: 0 });
        }
        return;
      case "Event":
        this.applyRemote(msg.record);
        if (this.replayTarget !== null && this.appliedSeq >= this.replayTarget) {
          this.replayTarget = null;
          this.send({ t: "Ack", seq: this.appliedSeq });
        } else if (this.synced && this.ackMode) {
          this.send({ t: "Ack", seq: msg.record.seq });
        }
        return;
      case "Synced":
        this.synced = true;
        return;
      case "RoleSwap":
        this.swapInFlight = false;
        if (msg.newRole === "Leader") {
          this.promote(msg.pendingTimers);
        } else {
          this.demote();
          this.expectedSeq = msg.seq + 1;
          this.appliedSeq = msg.seq;
          this.synced = true;
        }
        this.roleSwapAppliedAt = this.now();
        this.send({ t: "Ack", seq: msg.seq });
        return;
      case "Bye":
        this.socket?.close();
        return;
      default:
        throw new Error(`unexpected ${msg.t} from the coordinator`);
    }
  }

  // -- instrumentation -------------------------------------------------

  private instrument(role: Role): void {
    this.role = role;
    const win = this.win;
    this.real = {
      setTimeout: win.setTimeout.bind(win),
      clearTimeout: win.clearTimeout.bind(win),
      setInterval: win.setInterval.bind(win),
      clearInterval: win.clearInterval.bind(win),
      createElement: this.doc.createElement.bind(this.doc),
      random: (win.Math ?? Math).random.bind(win.Math ?? Math),
    };
    this.assignIds(this.doc.body);
    this.forEachElement(this.doc.body, (el) => this.wrapElement(el));
    this.wrapCreateElement();
    this.wrapTimers();
    this.initRandom();
    if (role === "Leader") {
      this.forEachElement(this.doc.body, (el) => this.installStatefulCapture(el));
      this.installSelectionCapture();
    }
    this.instrumented = true;
    const onload = this.originalOnload;
    this.originalOnload = null;
    onload?.();
    this.sweepDom0(this.doc.body);
    this.injectPromoteBar();
    this.readyResolve?.(role);
    this.readyResolve = null;
    this.readyReject = null;
  }

  private forEachElement(root: AnyElement, cb: (el: AnyElement) => void): void {
    if (!root || (root.getAttribute && root.getAttribute(INTERNAL_ATTR) !== null)) return;
    cb(root);
    const children = root.children ?? [];
    for (let i = 0; i < children.length; i++) this.forEachElement(children[i], cb);
  }

  private assignIds(root: AnyElement): void {
    this.forEachElement(root, (el) => {
      if (!el.id) el.id = `sid-${++this.idCounter}`;
    });
  }

  private registerHandler(el: AnyElement, eventType: string, handler: Handler,
                          via: "dom0" | "dom2"): void {
    this.handlers.set(el.id, eventType, { target: el, handler, via });
  }

  private makeWrapper(el: AnyElement, eventType: string, handler: Handler): Handler {
    const wrapper = (ev: any) => {
      this.sendRecord("DomEvent", eventType, el.id, this.serializeEvent(ev));
      handler.call(el, ev);
      this.flushSweeps();
    };
    (wrapper as any).__mvxWrapper = true;
    return wrapper;
  }

  private installLive(el: AnyElement, eventType: string, handler: Handler,
                      via: "dom0" | "dom2"): void {
    const key = HandlerTable.key(el.id, eventType);
    const previous = this.liveWrappers.get(key);
    if (previous) this.uninstallLive(key, previous);
    const wrapper = this.makeWrapper(el, eventType, handler);
    if (via === "dom0") {
      el[eventType] = wrapper;
    } else {
      const realAdd = this.realAdds.get(el);
      realAdd?.call(el, eventType, wrapper);
    }
    this.liveWrappers.set(key, { target: el, via, eventType, wrapper });
  }

  private uninstallLive(key: string, live: LiveWrapper): void {
    if (live.via === "dom0") {
      live.target[live.eventType] = null;
    } else {
      live.target.removeEventListener(live.eventType, live.wrapper);
    }
    this.liveWrappers.delete(key);
  }

  /** Per-element addEventListener interception. */
  private wrapElement(el: AnyElement): void {
    if (this.realAdds.has(el)) return;
    const realAdd = el.addEventListener;
    this.realAdds.set(el, realAdd);
    const shim = this;
    el.addEventListener = function (eventType: string, handler: Handler) {
      shim.registerHandler(el, eventType, handler, "dom2");
      if (shim.role === "Leader") shim.installLive(el, eventType, handler, "dom2");
    };
  }

  /** Move DOM0 slot handlers into the table; leaders re-install a capturing
   * wrapper, followers leave the slot disarmed. */
  private sweepDom0(root: AnyElement): void {
    this.forEachElement(root, (el) => {
      for (const slot of DOM0_SLOTS) {
        const handler = el[slot];
        if (typeof handler !== "function" || (handler as any).__mvxWrapper) continue;
        this.registerHandler(el, slot, handler, "dom0");
        if (this.role === "Leader") {
          this.installLive(el, slot, handler, "dom0");
        } else {
          el[slot] = null;
        }
      }
    });
  }

  private wrapCreateElement(): void {
    const shim = this;
    this.doc.createElement = function (tag: string, options?: unknown) {
      const el = shim.real.createElement(tag, options);
      el.id = `sid-${++shim.idCounter}`;
      shim.wrapElement(el);
      shim.pendingSweeps.push(el);
      // end-of-queue fallback; records normally flush it synchronously
      shim.real.setTimeout(() => shim.flushSweeps(), 0);
      return el;
    };
  }

  private flushSweeps(): void {
    while (this.pendingSweeps.length) {
      const el = this.pendingSweeps.shift();
      if (this.role === "Leader") this.installStatefulCapture(el);
      this.sweepDom0(el);
    }
  }

  private wrapTimers(): void {
    const shim = this;
    this.win.setTimeout = function (handler: Handler, delay?: number) {
      return shim.interceptTimer(handler, delay ?? 0, "OneShot");
    };
    this.win.setInterval = function (handler: Handler, delay?: number) {
      return shim.interceptTimer(handler, delay ?? 0, "Repeating");
    };
  }

  private interceptTimer(handler: Handler, delay: number, kind: TimerKind): unknown {
    if (typeof handler !== "function") {
      throw new Error("string timer handlers are not supported under capture");
    }
    const source = String(handler);
    const hash = md5Hex(source);
    try {
      this.timers.register(hash, { delay, kind, handler, source });
    } catch (err) {
      if (err instanceof HashCollisionError) this.diverge(String(err));
      throw err;
    }
    if (this.role !== "Leader") return 0;
    return this.armTimer(hash, delay, kind);
  }

  private armTimer(hash: string, delay: number, kind: TimerKind): unknown {
    const entry = this.timers.get(hash)!;
    const fire = () => {
      // a callback queued just before demotion must not run: the new
      // leader owns this timer now and will replay its firings to us
      if (this.role !== "Leader") return;
      if (kind === "OneShot") this.pendingTimers.delete(hash);
      this.sendRecord("TimerFired", "", "", { hash });
      entry.handler();
      this.flushSweeps();
    };
    const realId =
      kind === "OneShot" ? this.real.setTimeout(fire, delay) : this.real.setInterval(fire, delay);
    this.pendingTimers.set(hash, { realId, kind, delay });
    return realId;
  }

  private initRandom(): void {
    const mathObj = this.win.Math ?? Math;
    const shim = this;
    mathObj.random = function () {
      return shim.drawRandom();
    };
    if (this.role === "Leader") {
      const batch: number[] = [];
      for (let i = 0; i < this.pool.capacity; i++) {
        const v = this.real.random();
        batch.push(v);
        this.pool.push(v);
      }
      this.send({ t: "RandomBatch", values: batch });
    }
  }

  private drawRandom(): number {
    let value: number;
    try {
      value = this.pool.draw();
    } catch (err) {
      if (err instanceof PoolExhaustedError) this.diverge(String(err));
      throw err;
    }
    if (this.role === "Leader") {
      const fresh = this.real.random();
      this.pool.push(fresh);
      this.send({ t: "RandomBatch", values: [fresh] });
    }
    return value;
  }

  private installStatefulCapture(el: AnyElement): void {
    if (!STATEFUL_TAGS.has(el.tagName)) return;
    const realAdd = this.realAdds.get(el) ?? el.addEventListener;
    const fn = () => this.sendStateUpdate(el);
    realAdd.call(el, "change", fn);
    this.captureListeners.push({ target: el, name: "change", fn });
  }

  private sendStateUpdate(el: AnyElement): void {
    const field = el.type === "checkbox" || el.type === "radio" ? "checked" : "value";
    this.sendRecord("StateUpdate", "", el.id, { field, value: el[field] });
  }

  private installSelectionCapture(): void {
    const doc = this.doc;
    const realAdd = doc.addEventListener.bind(doc);
    const capture = (ev: any) => {
      if (ev.type === "keyup" && ev.key !== "Shift") return;
      const target = ev.target;
      if (!target || typeof target.selectionStart !== "number" || !target.id) return;
      const start = target.selectionStart;
      const span = (target.selectionEnd ?? start) - start;
      this.sendRecord("SelectionUpdate", "", target.id, { start, span });
    };
    for (const name of ["mouseup", "keyup"]) {
      realAdd(name, capture);
      this.captureListeners.push({ target: doc, name, fn: capture });
    }
  }

  private injectPromoteBar(): void {
    const bar = this.real.createElement("div");
    bar.setAttribute(INTERNAL_ATTR, "1");
    const button = this.real.createElement("button");
    button.textContent = "Promote this page";
    button.disabled = this.role !== "Leader";
    button.onclick = () => this.requestPromotion();
    bar.appendChild(button);
    this.doc.body.insertBefore(bar, this.doc.body.firstChild);
    this.promoteButton = button;
  }

  // -- replay -------------------------------------------------

  applyRemote(record: EventRecord): void {
    if (this.role !== "Follower") {
      throw new Error("only a follower applies remote records");
    }
    if (record.seq !== this.expectedSeq) {
      throw new Error(`seq gap: expected ${this.expectedSeq}, got ${record.seq}`);
    }
    switch (record.kind as RecordKind) {
      case "DomEvent": {
        const entry = this.handlers.get(record.elementId, record.eventType);
        if (!entry) {
          throw new Error(`no handler for (${record.elementId}, ${record.eventType})`);
        }
        entry.handler.call(entry.target, record.payload);
        break;
      }
      case "TimerFired": {
        const hash = String(record.payload["hash"]);
        const entry = this.timers.get(hash);
        if (!entry) throw new Error(`no timer registered for hash ${hash}`);
        entry.handler();
        break;
      }
      case "StateUpdate": {
        const el = this.elementById(record.elementId);
        el[String(record.payload["field"])] = record.payload["value"];
        break;
      }
      case "SelectionUpdate": {
        const el = this.elementById(record.elementId);
        const start = Number(record.payload["start"]);
        const span = Number(record.payload["span"]);
        if (typeof el.setSelectionRange === "function") {
          el.setSelectionRange(start, start + span);
        } else {
          el.selectionStart = start;
          el.selectionEnd = start + span;
        }
        break;
      }
      case "RandomRefill": {
        for (const v of record.payload["values"] as number[]) this.pool.push(v);
        break;
      }
    }
    this.appliedSeq = record.seq;
    this.expectedSeq++;
    this.flushSweeps();
  }

  // -- promotion / demotion -------------------------------------------------

  private promote(pending: PendingTimer[]): void {
    this.role = "Leader";
    this.synced = true;
    // capture listeners go in before the app's handlers so a StateUpdate
    // always precedes the change DomEvent, exactly as on the first leader
    this.forEachElement(this.doc.body, (el) => this.installStatefulCapture(el));
    this.installSelectionCapture();
    this.handlers.forEach((elementId, eventType, entry) => {
      this.installLive(entry.target, eventType, entry.handler, entry.via);
    });
    for (const timer of pending) {
      if (!this.timers.get(timer.hash)) {
        throw new Error(`pending timer ${timer.hash} never registered here`);
      }
      this.armTimer(timer.hash, timer.delay, timer.kind);
    }
    if (this.promoteButton) this.promoteButton.disabled = false;
  }

  private demote(): void {
    this.role = "Follower";
    for (const [key, live] of Array.from(this.liveWrappers)) {
      this.uninstallLive(key, live);
    }
    for (const { target, name, fn } of this.captureListeners) {
      target.removeEventListener(name, fn);
    }
    this.captureListeners = [];
    for (const { realId, kind } of this.pendingTimers.values()) {
      if (kind === "OneShot") this.real.clearTimeout(realId);
      else this.real.clearInterval(realId);
    }
    this.pendingTimers.clear();
    if (this.promoteButton) this.promoteButton.disabled = true;
  }

  // -- helpers -------------------------------------------------

  private elementById(id: string): AnyElement {
    const el = this.doc.getElementById(id);
    if (!el) throw new Error(`no element with id ${id}`);
    return el;
  }

  private sendRecord(kind: RecordKind, eventType: string, elementId: string,
                     payload: Record<string, unknown>): void {
    this.send({
      t: "Event",
      record: { seq: 0, kind, eventType, elementId, payload, wallClockMs: 0 },
    });
  }

  private serializeEvent(ev: any): Record<string, unknown> {
    const payload: Record<string, unknown> = {};
    if (!ev || typeof ev !== "object") return payload;
    for (const field of EVENT_FIELDS) {
      const value = ev[field];
      const kind = typeof value;
      if (kind === "number" || kind === "string" || kind === "boolean") {
        if (kind === "number" && !Number.isFinite(value)) continue;
        payload[field] = value;
      }
    }
    return payload;
  }

  private diverge(reason: string): void {
    if (this.divergence) return;
    this.divergence = reason;
    this.banner(`replay divergence: ${reason}`);
  }

  private banner(text: string): void {
    try {
      const create = this.real?.createElement ?? this.doc.createElement.bind(this.doc);
      const div = create("div");
      div.setAttribute(INTERNAL_ATTR, "1");
      div.setAttribute("data-mvx-banner", "1");
      div.textContent = text;
      this.doc.body?.insertBefore(div, this.doc.body.firstChild);
    } catch {
      // no body yet; nothing to render on
    }
  }
}
