"""Line-delimited JSON bridge to an out-of-process answerer.

Wire format, one JSON object per line in each direction::

    -> {"type":"hello","version":1}
    <- {"type":"hello","version":1}
    -> {"type":"start","game":3,"image_id":17,"digits":[{"color":"red",...}, ...]}
    -> {"type":"answer","game":3,"turn":1,"question":{"property":"color","value":"red"}}
    <- {"answer":2}

``start`` is a notification and gets no reply. Every ``answer`` request
gets exactly one reply. A reply may echo ``game`` and ``turn``; echoed
replies that do not match the pending request are discarded as stale.
"""
from __future__ import annotations

import json
import queue
import shlex
import subprocess
import threading
import time

from .core import AnswererError, AQMError
from .mnist import N_ANSWERS, CountQuestion, DigitImage

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 30.0


class ProtocolError(AnswererError):
    """Malformed or out-of-alphabet reply; the game is scored as a loss."""

    code = "protocol-error"


class ProtocolTimeout(AnswererError):
    code = "protocol-timeout"


class PeerGone(AQMError):
    """The peer closed its end of the pipe; the whole run must stop."""

    code = "broken-pipe"


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":")) + "\n"


def encode_hello() -> str:
    return _dumps({"type": "hello", "version": PROTOCOL_VERSION})


def encode_start(game: int, image: DigitImage) -> str:
    digits = [dict(zip(image.schema.names, row)) for row in image.names()]
    return _dumps({"type": "start", "game": int(game), "image_id": int(image.image_id), "digits": digits})


def encode_request(game: int, turn: int, question: CountQuestion) -> str:
    return _dumps({"type": "answer", "game": int(game), "turn": int(turn),
                   "question": {"property": question.property, "value": question.value}})


def encode_response(answer: int, game: int = None, turn: int = None) -> str:
    msg = {"answer": int(answer)}
    if game is not None:
        msg["game"] = int(game)
    if turn is not None:
        msg["turn"] = int(turn)
    return _dumps(msg)


def decode_request(line: str) -> dict:
    """Reference parser for harness-side lines; returns the decoded message."""
    msg = json.loads(line)
    kind = msg.get("type")
    if kind == "hello":
        if not isinstance(msg.get("version"), int):
            raise ValueError("hello without integer version")
    elif kind == "start":
        if not isinstance(msg.get("game"), int) or not isinstance(msg.get("digits"), list):
            raise ValueError("malformed start")
    elif kind == "answer":
        q = msg.get("question")
        if not (isinstance(msg.get("game"), int) and isinstance(msg.get("turn"), int)
                and isinstance(q, dict) and isinstance(q.get("property"), str)
                and isinstance(q.get("value"), str)):
            raise ValueError("malformed answer request")
        msg["question"] = CountQuestion(q["property"], q["value"])
    else:
        raise ValueError(f"unknown message type {kind!r}")
    return msg


def parse_response(line: str, n_answers: int = N_ANSWERS) -> dict:
    """Validate one reply line; raises :class:`ProtocolError` when it is unusable."""
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"reply is not JSON: {line.strip()[:80]!r}") from exc
    if not isinstance(msg, dict):
        raise ProtocolError("reply is not a JSON object")
    a = msg.get("answer")
    if isinstance(a, bool) or not isinstance(a, int):
        raise ProtocolError(f"reply has no integer answer: {line.strip()[:80]!r}")
    if not 0 <= a < n_answers:
        raise ProtocolError(f"answer {a} outside 0..{n_answers - 1}")
    return msg


class ExternalAnswerer:
    """Talks to a peer over a pair of text streams, one request and one reply at a time."""

    def __init__(self, reader, writer, timeout: float = DEFAULT_TIMEOUT, process=None):
        self.writer = writer
        self.timeout = timeout
        self.process = process
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, args=(reader,), daemon=True)
        self._reader.start()

    @classmethod
    def spawn(cls, command, timeout: float = DEFAULT_TIMEOUT) -> "ExternalAnswerer":
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                text=True, bufsize=1, encoding="utf-8")
        return cls(proc.stdout, proc.stdin, timeout, proc)

    def _pump(self, reader):
        try:
            for line in reader:
                self._lines.put(line)
        except (OSError, ValueError):
            pass
        self._lines.put(None)

    def _send(self, line: str) -> None:
        try:
            self.writer.write(line)
            self.writer.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise PeerGone(f"cannot write to answerer: {exc}") from exc

    def _next_line(self, deadline: float) -> str:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise queue.Empty
        line = self._lines.get(timeout=remaining)
        if line is None:
            raise PeerGone("answerer closed its output")
        return line

    def handshake(self) -> None:
        self._send(encode_hello())
        try:
            line = self._next_line(time.monotonic() + self.timeout)
        except queue.Empty:
            raise PeerGone("no hello from answerer") from None
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            raise PeerGone(f"bad hello line {line.strip()[:80]!r}") from None
        if not isinstance(msg, dict) or msg.get("type") != "hello" or msg.get("version") != PROTOCOL_VERSION:
            raise PeerGone(f"unsupported hello {line.strip()[:80]!r}")

    def start_game(self, game: int, image: DigitImage) -> None:
        self._send(encode_start(game, image))

    def ask(self, game: int, turn: int, question: CountQuestion) -> int:
        self._send(encode_request(game, turn, question))
        deadline = time.monotonic() + self.timeout
        while True:
            try:
                line = self._next_line(deadline)
            except queue.Empty:
                raise ProtocolTimeout(f"no reply within {self.timeout}s (game {game}, turn {turn})") from None
            if not line.strip():
                continue
            msg = parse_response(line)
            if msg.get("game", game) != game or msg.get("turn", turn) != turn:
                continue  # stale reply to a request that already timed out
            return int(msg["answer"])

    def close(self) -> None:
        try:
            self.writer.close()
        except OSError:
            pass
        if self.process is not None:
            try:
                self.process.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.process.kill()


def protocol_oracle_factory(bridge: ExternalAnswerer):
    """Adapter turning a bridge into the harness's per-game answer oracle."""
    def factory(setup, target, game_seed, game):
        bridge.start_game(game, setup.candidates[target])

        def respond(q, turn):
            return bridge.ask(game, turn, q.payload)
        return respond
    return factory
