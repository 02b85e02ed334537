export { Shim, ShimConfig } from "./shim";
export { encode, decode, DecodeError, EncodeError } from "./protocol";
export type { Message, EventRecord, PendingTimer, Role, RecordKind, TimerKind } from "./protocol";
export { md5Hex } from "./md5";
export { HandlerTable, TimerTable, RandomPool } from "./tables";
export { browserSocket } from "./transport";

import { Shim, ShimConfig } from "./shim";

/**
 * Page-facing bootstrap: define a global `initSocket` so the rewritten
 * `<body onload="initSocket(originalOnload)">` works as-is. The coordinator
 * URL comes from `window.MVX_COORDINATOR` or defaults to the page's host on
 * port 7070.
 */
export function attachInitSocket(win: any = (globalThis as any).window,
                                 config: Partial<ShimConfig> = {}): Shim {
  const host = win.location?.hostname || "localhost";
  const url = win.MVX_COORDINATOR || `ws://${host}:7070/mvx`;
  const shim = new Shim({ coordinatorUrl: url, win, ...config });
  win.initSocket = (originalOnload?: (() => void) | null) => {
    void shim.init(originalOnload ?? null);
  };
  win.__mvxShim = shim;
  return shim;
}

declare const window: any;
if (typeof window !== "undefined" && window?.document) {
  attachInitSocket(window);
}
