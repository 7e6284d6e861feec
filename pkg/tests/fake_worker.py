"""Misbehaving classifier worker for gateway tests: ``fake_worker.py MODE``."""

import json
import sys
import time

mode = sys.argv[1]
pending = []
for line in sys.stdin:
    req = json.loads(line)
    rid = req["id"]
    if mode == "crash":
        sys.exit(3)
    if mode == "sleep":
        time.sleep(30)
    if mode == "garbage":
        print("not json", flush=True)
        continue
    if mode == "stderr":
        print(f"note for {rid}", file=sys.stderr, flush=True)
    probs = [0.9, 0.02, 0.02, 0.02, 0.02, 0.02]
    if mode == "short":
        probs = [0.2] * 5
    if mode == "badsum":
        probs = [0.5, 0.5, 0.5, 0.0, 0.0, 0.0]
    if mode == "nearsum":
        probs = [0.9 + 5e-7, 0.02, 0.02, 0.02, 0.02, 0.02]
    if mode == "wrongid":
        rid = rid + 1000
    reply = json.dumps({"id": rid, "probs": probs})
    if mode == "reverse":
        # hold replies until two requests have arrived, then answer newest first
        pending.append(reply)
        if len(pending) == 2:
            for r in reversed(pending):
                print(r, flush=True)
            pending = []
        continue
    print(reply, flush=True)
