/** Socket abstraction: one encoded message per text frame. The browser
 * build uses the page's WebSocket; tests inject their own implementation. */

export interface ShimSocket {
  send(text: string): void;
  close(): void;
  onMessage(cb: (text: string) => void): void;
  onOpen(cb: () => void): void;
  onError(cb: (err: unknown) => void): void;
}

export function browserSocket(url: string): ShimSocket {
  const ws = new WebSocket(url);
  return {
    send: (text) => ws.send(text),
    close: () => ws.close(),
    onMessage: (cb) => {
      ws.onmessage = (ev) => cb(String(ev.data));
    },
    onOpen: (cb) => {
      ws.onopen = () => cb();
    },
    onError: (cb) => {
      ws.onerror = (ev) => cb(ev);
      ws.onclose = (ev) => {
        if (!ev.wasClean) cb(new Error("socket closed"));
      };
    },
  };
}
