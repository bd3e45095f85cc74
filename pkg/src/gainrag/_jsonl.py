import json
from pathlib import Path
from typing import Any, Iterable, Iterator


def iter_jsonl(path) -> Iterator[tuple[int, Any]]:
    """Yield ``(line_number, object)`` for each non-blank line, 1-based."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None


def read_jsonl(path) -> list[Any]:
    return [obj for _, obj in iter_jsonl(path)]


def dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def write_jsonl(path, rows: Iterable[Any]) -> int:
    n = 0
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(dumps(row) + "\n")
            n += 1
    return n


def append_jsonl(path, row: Any) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(dumps(row) + "\n")
        fh.flush()
