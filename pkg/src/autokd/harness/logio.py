"""JSON-lines trial logs."""

from __future__ import annotations

from typing import Iterable, List

from ..bohb import TrialRecord


class LogFormatError(IOError):
    pass


def read_log(path) -> List[TrialRecord]:
    records = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise LogFormatError(f"{path}: {exc.strerror}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(TrialRecord.from_json(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise LogFormatError(f"{path}:{lineno}: bad trial record ({exc})") from exc
    return records


def append_log(path, records: Iterable[TrialRecord]) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for r in sorted(records, key=lambda r: r.trial_id):
            fh.write(r.to_json() + "\n")
