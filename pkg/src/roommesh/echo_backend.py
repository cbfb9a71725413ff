"""Trivial wire-protocol backend used to exercise the protocol client.

`inpaint` echoes the request color and remembers the condition depth;
`depth` returns the remembered depth. Failure modes are selectable with
--mode for testing error paths.
"""

from __future__ import annotations

import argparse
import json
import struct
import sys
import time


def _read(stream):
    head = stream.read(4)
    if len(head) < 4:
        return None
    (n,) = struct.unpack(">I", head)
    return json.loads(stream.read(n).decode("utf-8"))


def _write(stream, obj, raw: bytes | None = None):
    body = raw if raw is not None else json.dumps(obj).encode("utf-8")
    stream.write(struct.pack(">I", len(body)) + body)
    stream.flush()


def main(argv=None) -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--mode", default="echo",
                    choices=["echo", "sleep", "malformed", "missing-key", "crash", "bad-image", "error"])
    ap.add_argument("--sleep", type=float, default=30.0)
    args = ap.parse_args(argv)
    inp, out = sys.stdin.buffer, sys.stdout.buffer
    last_depth = None
    while True:
        msg = _read(inp)
        if msg is None:
            return 0
        if args.mode == "sleep":
            time.sleep(args.sleep)
        elif args.mode == "malformed":
            _write(out, None, raw=b"{not json")
            continue
        elif args.mode == "missing-key":
            _write(out, {"unexpected": 1})
            continue
        elif args.mode == "crash":
            sys.stderr.write("echo backend: simulated crash\n")
            return 3
        elif args.mode == "bad-image":
            _write(out, {"color": "aGVsbG8=", "depth": "aGVsbG8="})
            continue
        elif args.mode == "error":
            _write(out, {"error": "simulated failure"})
            continue
        if msg.get("op") == "inpaint":
            last_depth = msg["depth"]
            _write(out, {"color": msg["color"]})
        elif msg.get("op") == "depth":
            _write(out, {"depth": last_depth} if last_depth else {"error": "no depth seen yet"})
        else:
            _write(out, {"error": f"unknown op {msg.get('op')!r}"})


if __name__ == "__main__":
    sys.exit(main())
