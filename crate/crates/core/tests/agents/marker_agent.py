#!/usr/bin/env python3
"""Line-delimited JSON agent used by the flywheel tests.

check: fails any candidate whose id ends with the configured suffix unless
its instruction starts with the configured marker.
refine: prefixes the marker; with "break_slot" set it also rewrites the slot.
"""
import json
import sys

for line in sys.stdin:
    req = json.loads(line)
    cfg = req.get("config") or {}
    marker = cfg.get("marker", "[ok]")
    suffix = cfg.get("suffix", "-p0r0-full")
    inst = req["candidate"]["instance"]
    text = inst["instruction_text"]
    if req["op"] == "check":
        if inst["id"].endswith(suffix) and not text.startswith(marker):
            out = {"pass": False, "feedback": {"codes": ["intent_mismatch"], "detail": "unmarked"}}
        else:
            out = {"pass": True}
    else:
        slot = dict(inst["slot"])
        if cfg.get("break_slot"):
            slot["target"] = "edges" if slot["target"] != "edges" else "cavity"
        out = {"instruction": marker + " " + text, "labels": inst["labels"], "slot": slot}
    sys.stdout.write(json.dumps(out) + "\n")
    sys.stdout.flush()
