"""Minimal external policy speaking the newline-delimited JSON protocol.

Reads one request per line on stdin and answers with one line on stdout.
It picks table pieces in turn, reorients upside-down ones, and puts a piece
back after a failed insert.
"""
import json
import sys

tried = {}


def act(obs):
    held = obs["hand"]
    pieces = {p["id"]: p for p in obs["pieces"]}
    history = obs["history"]
    if held is not None:
        piece = pieces[held]
        if history and history[-1] == "insert " + piece["color"]:
            return "put down " + piece["color"]
        if piece["orientation"] == "down":
            return "reorient " + piece["color"]
        return "insert " + piece["color"]
    table = [p for p in obs["pieces"] if p["location"] == "on_table"]
    if not table:
        return "done"
    table.sort(key=lambda p: (tried.get(p["id"], 0), p["id"]))
    choice = table[0]
    tried[choice["id"]] = tried.get(choice["id"], 0) + 1
    return "pick up " + choice["color"]


for line in sys.stdin:
    req = json.loads(line)
    current = req["observations"][1]
    print(json.dumps({"id": req["id"], "action": act(current)}), flush=True)
