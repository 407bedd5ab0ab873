"""Message records, per-party observation logs and byte accounting."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from typing import Any, Iterable

import numpy as np

FEDERATOR = "F"

# control payloads (ids, votes, complaint lists) are counted as 4-byte integers
CONTROL_BYTES = 4
CONTROL_KINDS = frozenset({"vss-complaint", "vss-accuse", "vss-vote", "selection"})


@dataclass(slots=True)
class Message:
    """One delivered message.

    ``receiver`` is a party id, or a tuple of ids for a broadcast.  A
    broadcast is accounted as one copy per receiver on both ends.
    """

    seq: int
    sender: int | str
    receiver: int | str | tuple
    step: int
    round_tag: str
    kind: str
    n_elements: int
    size_bytes: int
    payload: Any = None

    @property
    def receivers(self) -> tuple:
        return self.receiver if isinstance(self.receiver, tuple) else (self.receiver,)

    def delivered_to(self, party) -> bool:
        return party in self.receiver if isinstance(self.receiver, tuple) else self.receiver == party

    def record(self, include_payload: bool = False) -> dict:
        out = {
            "seq": self.seq,
            "from": self.sender,
            "to": list(self.receiver) if isinstance(self.receiver, tuple) else self.receiver,
            "step": self.step,
            "round_tag": self.round_tag,
            "kind": self.kind,
            "size_bytes": self.size_bytes,
        }
        if include_payload and self.payload is not None:
            out["payload"] = _jsonable(self.payload)
        return out


def _jsonable(payload):
    if isinstance(payload, np.ndarray):
        return [_jsonable(v) for v in payload.tolist()]
    if isinstance(payload, (list, tuple)):
        return [_jsonable(v) for v in payload]
    if isinstance(payload, (np.integer,)):
        return int(payload)
    return payload


class Transcript:
    """Append-only log of every message delivered in one protocol round."""

    def __init__(self, elem_bytes: int, keep_payloads: bool = True):
        self.elem_bytes = elem_bytes
        self.keep_payloads = keep_payloads
        self.messages: list[Message] = []

    def _size(self, kind: str, n_elements: int) -> int:
        if kind in CONTROL_KINDS:
            return CONTROL_BYTES * max(n_elements, 1)
        return self.elem_bytes * n_elements

    def send(self, sender, receiver, step: int, kind: str, payload=None, n_elements: int | None = None, round_tag: str = ""):
        """Record a point-to-point message, or a broadcast when ``receiver`` is a tuple."""
        if isinstance(receiver, tuple):
            receiver = tuple(r for r in receiver if r != sender)
            if not receiver:
                return None
        elif sender == receiver:
            return None
        if n_elements is None:
            n_elements = int(np.size(payload)) if payload is not None else 0
        msg = Message(
            len(self.messages),
            sender,
            receiver,
            step,
            round_tag or f"step{step}",
            kind,
            n_elements,
            self._size(kind, n_elements),
            payload if self.keep_payloads else None,
        )
        self.messages.append(msg)
        return msg

    def extend(self, step: int, round_tag: str, records) -> None:
        """Bulk :meth:`send` of ``(sender, receiver, kind, n_elements[, payload])`` tuples."""
        msgs = self.messages
        keep = self.keep_payloads
        for sender, receiver, kind, count, *rest in records:
            if isinstance(receiver, tuple):
                receiver = tuple(r for r in receiver if r != sender)
                if not receiver:
                    continue
            elif sender == receiver:
                continue
            payload = rest[0] if (rest and keep) else None
            msgs.append(Message(len(msgs), sender, receiver, step, round_tag, kind, count, self._size(kind, count), payload))

    def observations(self, party, step: int | None = None, kind: str | None = None) -> list[Message]:
        """The observation log of ``party``: everything delivered to it."""
        return [
            m
            for m in self.messages
            if m.delivered_to(party) and (step is None or m.step == step) and (kind is None or m.kind == kind)
        ]

    def observation_vector(self, party, steps: Iterable[int] | None = None) -> list[int]:
        """Flatten the party's observations into integers, in delivery order.

        Control messages without a payload contribute their element count.
        """
        steps = None if steps is None else set(steps)
        out: list[int] = []
        for m in self.observations(party):
            if steps is not None and m.step not in steps:
                continue
            if m.payload is None:
                out.append(m.n_elements)
            else:
                out.extend(int(v) for v in np.asarray(m.payload, dtype=object).ravel())
        return out

    def dump_jsonl(self, path, include_payloads: bool = False) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl(include_payloads))

    def to_jsonl(self, include_payloads: bool = False) -> str:
        return "".join(json.dumps(m.record(include_payloads), sort_keys=True) + "\n" for m in self.messages)


@dataclass
class CommReport:
    sent: dict
    received: dict
    by_step: dict

    def total(self, party) -> int:
        return self.sent.get(party, 0) + self.received.get(party, 0)

    def per_user(self, clients: Iterable[int] | None = None) -> float:
        """Mean total (sent + received) bytes over clients."""
        ids = list(clients) if clients is not None else [p for p in self.sent.keys() | self.received.keys() if p != FEDERATOR]
        return float(np.mean([self.total(p) for p in ids]))

    @property
    def federator(self) -> int:
        return self.total(FEDERATOR)


def comm_accounting(transcript: Transcript) -> CommReport:
    sent: dict = defaultdict(int)
    received: dict = defaultdict(int)
    by_step: dict = defaultdict(lambda: defaultdict(int))
    for m in transcript.messages:
        receivers = m.receivers
        sent[m.sender] += m.size_bytes * len(receivers)
        by_step[m.sender][m.step] += m.size_bytes * len(receivers)
        for r in receivers:
            received[r] += m.size_bytes
            by_step[r][m.step] += m.size_bytes
    return CommReport(dict(sent), dict(received), {k: dict(v) for k, v in by_step.items()})


def fit_exponent(xs, ys) -> float:
    """Slope of the least-squares line through (log x, log y)."""
    slope, _ = np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)
    return float(slope)
