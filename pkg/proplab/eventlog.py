"""Event log records, JSONL ingestion and persistence."""

import json
import logging
import os
import tempfile
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

from voluptuous import All, Invalid, MultipleInvalid, Range, Required, Schema

from .exceptions import ProplabInputException, ProplabValidationException

_LOGGER = logging.getLogger(__name__)

RECORD_FIELDS = ("user", "seq", "community", "replies", "score")


def _strict_int(value):
    # bool is an int subclass, but true/false in a log is a schema error
    if isinstance(value, bool) or not isinstance(value, int):
        raise Invalid("expected int")
    return value


RECORD_SCHEMA = Schema(
    {
        Required("user"): str,
        Required("seq"): All(_strict_int, Range(min=0)),
        Required("community"): str,
        Required("replies"): All(_strict_int, Range(min=0)),
        Required("score"): _strict_int,
    }
)


@dataclass(frozen=True)
class EventRecord:
    """One action: a user posting in a community and the feedback it received."""

    user: str
    seq: int
    community: str
    replies: int
    score: int

    def to_dict(self) -> Dict[str, object]:
        return {
            "user": self.user,
            "seq": self.seq,
            "community": self.community,
            "replies": self.replies,
            "score": self.score,
        }


class EventLog:
    """
    Ordered per-user actions, the input format of every pipeline stage.

    :param records: event records in file order
    :param validate: check (user, seq) uniqueness and gapless numbering
    """

    def __init__(self, records: Iterable[EventRecord], validate: bool = True):
        self._records = tuple(records)
        self._by_user = {}
        for record in self._records:
            self._by_user.setdefault(record.user, []).append(record)
        for user, history in self._by_user.items():
            history.sort(key=lambda rec: rec.seq)
            if validate:
                _check_sequence(user, history)
        self._by_user = {user: tuple(hist) for user, hist in self._by_user.items()}
        self._counts = None

    @classmethod
    def from_histories(
        cls, histories: Mapping[str, Sequence[EventRecord]], resequence: bool = True
    ) -> "EventLog":
        """
        Build a log from per-user histories, renumbering seq from 0 if asked.

        Used to cut training windows out of a larger log.
        """
        records = []
        for user, history in histories.items():
            for position, record in enumerate(history):
                seq = position if resequence else record.seq
                records.append(
                    EventRecord(
                        user=user,
                        seq=seq,
                        community=record.community,
                        replies=record.replies,
                        score=record.score,
                    )
                )
        return cls(records)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventLog):
            return NotImplemented
        return self._records == other._records

    @property
    def records(self) -> Tuple[EventRecord, ...]:
        return self._records

    @property
    def users(self) -> List[str]:
        """Users in order of first appearance."""
        return list(self._by_user)

    @property
    def by_user(self) -> Dict[str, Tuple[EventRecord, ...]]:
        return dict(self._by_user)

    def history(self, user: str) -> Tuple[EventRecord, ...]:
        return self._by_user.get(user, ())

    def community_counts(self) -> Counter:
        if self._counts is None:
            self._counts = Counter(record.community for record in self._records)
        return self._counts

    @property
    def communities(self) -> List[str]:
        """Communities by descending action count, ties broken by id."""
        counts = self.community_counts()
        return sorted(counts, key=lambda community: (-counts[community], community))


def _check_sequence(user: str, history: Sequence[EventRecord]):
    for expected, record in enumerate(history):
        if record.seq != expected:
            if record.seq < expected:
                problem = f"duplicate seq {record.seq}"
            else:
                problem = f"seq gap: expected {expected}, got {record.seq}"
            raise ProplabValidationException(
                f"Invalid history for user {user!r}: {problem}", user=user
            )


def parse_record(payload: Dict[str, object], line_number: int = None) -> EventRecord:
    """Validate one decoded JSONL object against RECORD_SCHEMA."""
    try:
        clean = RECORD_SCHEMA(payload)
    except MultipleInvalid as ex:
        raise ProplabInputException(
            f"Line {line_number}: invalid record: {ex}", line_number=line_number
        ) from ex
    return EventRecord(**clean)


def load_event_log(path: str) -> EventLog:
    """
    Load and validate a JSONL event log.

    :param path: file with one record per line
    :return: validated EventLog
    """
    records = []
    with open(path, "r", encoding="utf8") as handle:
        for line_number, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as ex:
                raise ProplabInputException(
                    f"Line {line_number}: JSON parse error: {ex}",
                    line_number=line_number,
                ) from ex
            if not isinstance(payload, dict):
                raise ProplabInputException(
                    f"Line {line_number}: expected a JSON object",
                    line_number=line_number,
                )
            records.append(parse_record(payload, line_number))

    _LOGGER.debug("Loaded %d records from %s", len(records), path)
    return EventLog(records)


def dumps_event_log(log: EventLog) -> str:
    return "".join(json.dumps(record.to_dict()) + "\n" for record in log)


def save_event_log(log: EventLog, path: str):
    """Write the log as JSONL, atomically."""
    write_atomic(path, dumps_event_log(log))


def write_atomic(path: str, text: str):
    """Write text to a temporary sibling file, then rename it over path."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with tempfile.NamedTemporaryFile(
        "w", encoding="utf8", newline="\n", dir=directory, delete=False
    ) as handle:
        handle.write(text)
        temp_path = handle.name
    os.replace(temp_path, path)
