"""File formats: utterance TSVs, typology CSVs, grid JSON, reports.

All text IO is strict UTF-8; undecodable bytes are a hard parse error, never
a lossy replacement, because IPA strings must keep their exact codepoints.
Report JSON is serialized with sorted keys and a trailing newline so repeated
runs produce byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .ctc import LogPosteriorGrid
from .errors import DuplicateKeyError, NumericalError, ParseError
from .ipa import FeatureTable, PhoneSequence, segment


def _read_text(path) -> str:
    path = Path(path)
    try:
        return path.read_text(encoding="utf-8", errors="strict")
    except FileNotFoundError:
        raise ParseError("file not found", path=str(path)) from None
    except UnicodeDecodeError as exc:
        raise ParseError(f"not valid UTF-8 ({exc.reason})", path=str(path)) from None


def read_utterances_tsv(path, table: FeatureTable) -> list[PhoneSequence]:
    """Parse `utt_id<TAB>lang<TAB>ipa_string` lines into phone sequences."""
    text = _read_text(path)
    seen: set[str] = set()
    out: list[PhoneSequence] = []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        if not raw.strip():
            continue
        cols = raw.split("\t")
        if len(cols) != 3:
            raise ParseError(
                f"expected 3 tab-separated columns, got {len(cols)}",
                line=lineno,
                path=str(path),
            )
        utt_id, lang, ipa = cols
        if not utt_id:
            raise ParseError("empty utterance id", line=lineno, path=str(path))
        if utt_id in seen:
            raise DuplicateKeyError(
                f"duplicate utterance id {utt_id!r}", line=lineno, path=str(path)
            )
        seen.add(utt_id)
        out.append(segment(ipa, table, utterance_id=utt_id, language=lang))
    return out


def _two_column_tsv(path, what: str) -> list[tuple[str, str, int]]:
    text = _read_text(path)
    rows = []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        if not raw.strip():
            continue
        cols = raw.split("\t")
        if len(cols) != 2:
            raise ParseError(
                f"{what}: expected 2 tab-separated columns, got {len(cols)}",
                line=lineno,
                path=str(path),
            )
        rows.append((cols[0], cols[1], lineno))
    return rows


def read_family_map(path) -> dict[str, str]:
    """`lang<TAB>family` lines."""
    out: dict[str, str] = {}
    for lang, family, lineno in _two_column_tsv(path, "family map"):
        if lang in out:
            raise DuplicateKeyError(
                f"duplicate language {lang!r}", line=lineno, path=str(path)
            )
        out[lang] = family
    return out


def read_counts_tsv(path) -> dict[str, float]:
    """`lang<TAB>count` lines; counts must be nonnegative numbers."""
    out: dict[str, float] = {}
    for lang, raw_count, lineno in _two_column_tsv(path, "counts"):
        if lang in out:
            raise DuplicateKeyError(
                f"duplicate language {lang!r}", line=lineno, path=str(path)
            )
        try:
            count = float(raw_count)
        except ValueError:
            raise ParseError(
                f"count {raw_count!r} is not a number", line=lineno, path=str(path)
            ) from None
        if count < 0 or not np.isfinite(count):
            raise ParseError(
                f"count must be finite and >= 0, got {raw_count}",
                line=lineno,
                path=str(path),
            )
        out[lang] = count
    return out


def read_lang_vectors_csv(path) -> dict[str, list[float | None]]:
    """`lang,<f1>,...,<fK>` CSV; empty cells mean missing (to be imputed)."""
    import csv
    import io

    text = _read_text(path)
    reader = csv.reader(io.StringIO(text))
    header = None
    out: dict[str, list[float | None]] = {}
    for lineno, row in enumerate(reader, start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if row[0].startswith("#"):
            continue
        if header is None:
            if row[0] != "lang" or len(row) < 2:
                raise ParseError(
                    "header must be lang,<f1>,...", line=lineno, path=str(path)
                )
            header = row
            continue
        if len(row) != len(header):
            raise ParseError(
                f"expected {len(header)} cells, got {len(row)}",
                line=lineno,
                path=str(path),
            )
        lang = row[0]
        if lang in out:
            raise DuplicateKeyError(
                f"duplicate language {lang!r}", line=lineno, path=str(path)
            )
        values: list[float | None] = []
        for i, cell in enumerate(row[1:], start=1):
            cell = cell.strip()
            if not cell:
                values.append(None)
                continue
            try:
                values.append(float(cell))
            except ValueError:
                raise ParseError(
                    f"cell {header[i]!r}={cell!r} is not a number",
                    line=lineno,
                    path=str(path),
                ) from None
        out[lang] = values
    if header is None:
        raise ParseError("empty vectors file", path=str(path))
    return out


def read_grid_json(path) -> tuple[list[str], list[tuple[str, str, LogPosteriorGrid]]]:
    """Documented posterior-grid format::

        {"vocab": ["a", "b"], "utterances": [
            {"utt_id": "u1", "lang": "deu", "log_probs": [[...], ...]}]}

    Column 0 of each row is the blank; column k (k >= 1) is vocab[k-1].
    """
    text = _read_text(path)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno, path=str(path)) from None
    if not isinstance(data, dict) or "vocab" not in data or "utterances" not in data:
        raise ParseError('grid JSON needs "vocab" and "utterances"', path=str(path))
    vocab = data["vocab"]
    if (
        not isinstance(vocab, list)
        or not vocab
        or not all(isinstance(v, str) and v for v in vocab)
        or len(set(vocab)) != len(vocab)
    ):
        raise ParseError("vocab must be a list of distinct non-empty strings", path=str(path))
    grids = []
    seen: set[str] = set()
    for i, utt in enumerate(data["utterances"]):
        if not isinstance(utt, dict) or not {"utt_id", "lang", "log_probs"} <= set(utt):
            raise ParseError(
                f"utterance #{i} needs utt_id, lang, log_probs", path=str(path)
            )
        uid = utt["utt_id"]
        if uid in seen:
            raise DuplicateKeyError(f"duplicate utterance id {uid!r}", path=str(path))
        seen.add(uid)
        try:
            arr = np.asarray(utt["log_probs"], dtype=np.float64)
        except ValueError:
            raise ParseError(
                f"utterance {uid!r}: log_probs is not a rectangular numeric array",
                path=str(path),
            ) from None
        if arr.ndim != 2 or arr.shape[1] != len(vocab) + 1:
            raise ParseError(
                f"utterance {uid!r}: log_probs must be (T, {len(vocab) + 1})",
                path=str(path),
            )
        try:
            grid = LogPosteriorGrid(arr)
        except NumericalError as exc:
            raise NumericalError(f"utterance {uid!r}: {exc}") from None
        grids.append((uid, utt["lang"], grid))
    return vocab, grids


def write_json(path, payload: dict):
    """Deterministic JSON: sorted keys, UTF-8, trailing newline."""
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2) + "\n"
    Path(path).write_text(blob, encoding="utf-8")


def write_jsonl(path, rows):
    blob = "".join(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n" for row in rows)
    Path(path).write_text(blob, encoding="utf-8")


def write_tsv(path, header, rows):
    lines = ["\t".join(header)]
    lines += ["\t".join(str(cell) for cell in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def fmt_pct(value) -> str:
    """Percentages print with one decimal (table style)."""
    return "NA" if value is None else f"{value:.1f}"


def fmt_num(value) -> str:
    """Plain numbers print with four decimals."""
    return "NA" if value is None else f"{value:.4f}"
