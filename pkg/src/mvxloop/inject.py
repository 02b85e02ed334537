"""Static HTML preparation: add the loader script tags to <head> and route
the body onload through the in-page initializer."""

from __future__ import annotations

import re
from typing import Sequence

DEFAULT_SCRIPTS = (
    "mvx/socket.io.js",
    "mvx/helpers.js",
    "mvx/jquery.js",
    "mvx/identity.js",
)

_HEAD_RE = re.compile(r"([ \t]*)<head[^>]*>", re.IGNORECASE)
_BODY_RE = re.compile(r"<body([^>]*)>", re.IGNORECASE)
_ONLOAD_RE = re.compile(r'onload="([^"]*)"')


class ParseError(ValueError):
    pass


def _script_block(indent: str, scripts: Sequence[str]) -> str:
    width = max(len(s) for s in scripts) + 1
    lines = []
    for src in scripts:
        pad = " " * (width - len(src))
        lines.append(f'{indent}<script src="{src}"{pad}type="text/javascript"></script>')
    return "\n".join(lines)


def is_injected(html: str) -> bool:
    body = _BODY_RE.search(html)
    if body is None:
        return False
    onload = _ONLOAD_RE.search(body.group(1))
    return onload is not None and onload.group(1).startswith("initSocket(")


def inject_html(html: str, scripts: Sequence[str] = DEFAULT_SCRIPTS) -> str:
    """Rewrite a page for capture. Bytes outside the two edit sites (the
    head insertion, the body onload attribute) are preserved exactly;
    running it twice returns the first output unchanged."""
    body = _BODY_RE.search(html)
    if body is None:
        raise ParseError("document has no <body> tag")
    if is_injected(html):
        return html
    head = _HEAD_RE.search(html)
    if head is None:
        raise ParseError("document has no <head> tag")
    block = "\n" + _script_block(head.group(1) + "    ", scripts)
    html = html[: head.end()] + block + html[head.end() :]

    body = _BODY_RE.search(html)
    assert body is not None
    attrs = body.group(1)
    onload = _ONLOAD_RE.search(attrs)
    if onload is not None:
        new_attrs = attrs.replace(onload.group(0), f'onload="initSocket({onload.group(1)})"', 1)
    else:
        new_attrs = attrs + ' onload="initSocket(null)"'
    start, end = body.start(1), body.end(1)
    return html[:start] + new_attrs + html[end:]
