"""Reference protocol peer: answers every question with the true count.

Run as ``python -m aqm.echo_oracle``; it reads requests on stdin and
writes replies on stdout.
"""
import json
import sys


def serve(stdin=sys.stdin, stdout=sys.stdout) -> int:
    digits = {}
    for line in stdin:
        if not line.strip():
            continue
        msg = json.loads(line)
        kind = msg.get("type")
        if kind == "hello":
            stdout.write(json.dumps({"type": "hello", "version": 1}) + "\n")
        elif kind == "start":
            digits[msg["game"]] = msg["digits"]
        elif kind == "answer":
            q = msg["question"]
            n = sum(1 for d in digits.get(msg["game"], []) if d[q["property"]] == q["value"])
            stdout.write(json.dumps({"answer": n, "game": msg["game"], "turn": msg["turn"]}) + "\n")
        stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(serve())
