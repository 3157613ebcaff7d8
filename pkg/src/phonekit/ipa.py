"""IPA segmentation and articulatory feature lookup.

A :class:`FeatureTable` maps phone strings (one or more codepoints) to ternary
feature vectors. Segmentation is greedy longest-match against the table keys
after Unicode NFD normalization, so diacritics combine with their base symbol
only through explicit table rows. Unknown spans fall back to single-codepoint
phones flagged ``known=False`` with an all-zero (fully unspecified) vector;
they are never dropped.
"""

from __future__ import annotations

import csv
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import DuplicateKeyError, FeatureValueError, ParseError, TableMismatchError

PLUS = 1
MINUS = -1
UNSPECIFIED = 0

_VALUE_SYMBOLS = {"+": PLUS, "-": MINUS, "0": UNSPECIFIED}
_SYMBOL_OF_VALUE = {v: k for k, v in _VALUE_SYMBOLS.items()}

FeatureVector = tuple[int, ...]


@dataclass(frozen=True)
class Phone:
    """One IPA segment with its feature vector.

    ``known`` is False for segments that did not resolve against the active
    table; those carry an all-zero vector.
    """

    text: str
    features: FeatureVector
    known: bool = True

    def __post_init__(self):
        if not self.text:
            raise ValueError("phone text must be non-empty")


@dataclass(frozen=True)
class PhoneSequence:
    """A tokenized transcript for one utterance."""

    utterance_id: str
    language: str
    phones: tuple[Phone, ...]

    def __len__(self) -> int:
        return len(self.phones)

    @property
    def text(self) -> str:
        return "".join(p.text for p in self.phones)

    @property
    def unknown_texts(self) -> tuple[str, ...]:
        return tuple(p.text for p in self.phones if not p.known)


@dataclass(frozen=True)
class FeatureTable:
    """Immutable phone -> feature-vector map, shareable across threads."""

    feature_names: tuple[str, ...]
    entries: dict[str, FeatureVector]
    version: str = ""
    _max_key_len: int = field(init=False, repr=False, default=0)

    def __post_init__(self):
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ParseError("feature names must be unique")
        if any(not name for name in self.feature_names):
            raise ParseError("feature names must be non-empty")
        width = len(self.feature_names)
        for phone, vec in self.entries.items():
            if len(vec) != width:
                raise ParseError(
                    f"entry {phone!r} has {len(vec)} values, table has {width} features"
                )
        object.__setattr__(
            self, "_max_key_len", max((len(k) for k in self.entries), default=0)
        )

    @property
    def num_features(self) -> int:
        return len(self.feature_names)

    def __contains__(self, phone_text: str) -> bool:
        return phone_text in self.entries

    def lookup(self, phone_text: str) -> Phone | None:
        """Resolve a single phone string; None if absent."""
        vec = self.entries.get(phone_text)
        return Phone(phone_text, vec) if vec is not None else None

    def unknown_phone(self, text: str) -> Phone:
        return Phone(text, (UNSPECIFIED,) * self.num_features, known=False)


def default_table_path() -> Path:
    """Path of the feature table CSV bundled with the package."""
    return Path(resources.files("phonekit").joinpath("data/feature_table.csv"))


def load_feature_table(path: str | Path) -> FeatureTable:
    """Parse a feature table CSV.

    Format: UTF-8, header ``phone,<feat1>,...,<featK>``, one row per phone
    with values in ``{+, -, 0}``. Lines starting with ``#`` are comments; a
    leading ``# version: <text>`` comment sets the table version string.
    """
    path = Path(path)
    version = ""
    header: list[str] | None = None
    entries: dict[str, FeatureVector] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if row[0].lstrip().startswith("#"):
                comment = ",".join(row).lstrip("# ").strip()
                if comment.lower().startswith("version:") and not version:
                    version = comment.split(":", 1)[1].strip()
                continue
            if header is None:
                if row[0] != "phone" or len(row) < 2:
                    raise ParseError(
                        "header must be 'phone,<feat1>,...'", line=lineno, path=str(path)
                    )
                header = row[1:]
                continue
            if len(row) != len(header) + 1:
                raise ParseError(
                    f"expected {len(header) + 1} columns, found {len(row)}",
                    line=lineno,
                    path=str(path),
                )
            phone = unicodedata.normalize("NFD", row[0])
            if not phone or any(ch.isspace() for ch in phone):
                raise ParseError(
                    f"invalid phone key {row[0]!r}", line=lineno, path=str(path)
                )
            if phone in entries:
                raise DuplicateKeyError(
                    f"duplicate phone {row[0]!r}", line=lineno, path=str(path)
                )
            values = []
            for cell in row[1:]:
                cell = cell.strip()
                if cell not in _VALUE_SYMBOLS:
                    raise FeatureValueError(
                        f"bad feature value {cell!r} (want one of +, -, 0)",
                        line=lineno,
                        path=str(path),
                    )
                values.append(_VALUE_SYMBOLS[cell])
            entries[phone] = tuple(values)
    if header is None:
        raise ParseError("no header row found", path=str(path))
    return FeatureTable(tuple(header), entries, version=version)


def load_default_table() -> FeatureTable:
    return load_feature_table(default_table_path())


def segment(
    ipa_text: str,
    table: FeatureTable,
    utterance_id: str = "",
    language: str = "",
) -> PhoneSequence:
    """Tokenize an IPA string into phones by greedy longest match.

    The input is NFD-normalized first. Whitespace separates phones and is
    never part of one. Spans not covered by any table key become
    single-codepoint unknown phones.
    """
    text = unicodedata.normalize("NFD", ipa_text)
    phones: list[Phone] = []
    i, n = 0, len(text)
    max_len = max(table._max_key_len, 1)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        match = None
        for length in range(min(max_len, n - i), 0, -1):
            candidate = text[i : i + length]
            if candidate in table.entries:
                match = candidate
                break
        if match is None:
            phones.append(table.unknown_phone(text[i]))
            i += 1
        else:
            phones.append(table.lookup(match))
            i += len(match)
    return PhoneSequence(utterance_id, language, tuple(phones))


def phone_distance(a: Phone, b: Phone) -> float:
    """Fraction of feature coordinates on which two phones disagree.

    Unspecified (0) counts as disagreeing with both + and -, which keeps the
    distance a pseudometric. Ranges over [0, 1]; 0 iff the vectors are equal.
    """
    if len(a.features) != len(b.features):
        raise TableMismatchError(
            f"feature vectors of {a.text!r} ({len(a.features)}) and "
            f"{b.text!r} ({len(b.features)}) have different lengths"
        )
    if not a.features:
        return 0.0
    differing = sum(1 for x, y in zip(a.features, b.features) if x != y)
    return differing / len(a.features)


def format_value(value: int) -> str:
    """Render a ternary feature value back to its CSV symbol."""
    return _SYMBOL_OF_VALUE[value]
