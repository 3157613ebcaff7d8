import unicodedata

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phonekit.errors import (
    DuplicateKeyError,
    FeatureValueError,
    ParseError,
    TableMismatchError,
)
from phonekit.ipa import (
    MINUS,
    PLUS,
    UNSPECIFIED,
    Phone,
    load_default_table,
    load_feature_table,
    phone_distance,
    segment,
)

TABLE = load_default_table()


def test_default_table_has_required_features():
    for name in ("tense", "delrel", "lat", "cor"):
        assert name in TABLE.feature_names


def test_default_table_shape_and_values():
    assert TABLE.num_features == len(TABLE.feature_names)
    for text, vec in TABLE.entries.items():
        assert len(vec) == TABLE.num_features, text
        assert all(v in (PLUS, MINUS, UNSPECIFIED) for v in vec)


def test_default_table_version_string():
    assert TABLE.version == "phonekit-default-1"


def test_lookup_known_and_unknown():
    p = TABLE.lookup("a")
    assert p.known and p.text == "a"
    assert TABLE.lookup("☃") is None
    assert "☃" not in TABLE


def test_segment_longest_match():
    seq = segment("tʃa", TABLE)
    assert [p.text for p in seq.phones] == ["tʃ", "a"]


def test_segment_whitespace_separates():
    seq = segment("t ʃ a", TABLE)
    assert [p.text for p in seq.phones] == ["t", "ʃ", "a"]


def test_segment_unknown_spans_one_codepoint():
    seq = segment("a☃b", TABLE)
    texts = [p.text for p in seq.phones]
    assert texts == ["a", "☃", "b"]
    snowman = seq.phones[1]
    assert not snowman.known
    assert all(v == UNSPECIFIED for v in snowman.features)
    assert seq.unknown_texts == ("☃",)


def test_segment_normalizes_composed_input():
    # U+00E3 (precomposed) must match the decomposed table key a + U+0303.
    composed = "ã"
    assert unicodedata.normalize("NFD", composed) != composed
    seq = segment(composed, TABLE)
    assert len(seq) == 1
    assert seq.phones[0].known


def test_segment_carries_metadata():
    seq = segment("pa", TABLE, utterance_id="u1", language="deu")
    assert seq.utterance_id == "u1"
    assert seq.language == "deu"
    assert seq.text == "pa"
    assert len(seq) == 2


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(sorted(TABLE.entries)), min_size=0, max_size=12))
def test_segment_roundtrip_with_separators(keys):
    seq = segment(" ".join(keys), TABLE)
    assert [p.text for p in seq.phones] == keys
    assert all(p.known for p in seq.phones)


def test_phone_distance_identity_and_symmetry():
    phones = [TABLE.lookup(t) for t in ("p", "b", "m", "a", "i", "tʃ")]
    for x in phones:
        assert phone_distance(x, x) == 0.0
        for y in phones:
            d = phone_distance(x, y)
            assert d == phone_distance(y, x)
            assert 0.0 <= d <= 1.0


def test_phone_distance_counts_unspecified_as_differing():
    a = Phone("x", (PLUS, UNSPECIFIED))
    b = Phone("y", (PLUS, MINUS))
    assert phone_distance(a, b) == 0.5


def test_phone_distance_rejects_width_mismatch():
    a = Phone("x", (PLUS,))
    b = Phone("y", (PLUS, MINUS))
    with pytest.raises(TableMismatchError):
        phone_distance(a, b)


def test_phone_empty_text_rejected():
    with pytest.raises(ValueError):
        Phone("", (PLUS,))


def _write_table(tmp_path, body):
    path = tmp_path / "table.csv"
    path.write_text(body, encoding="utf-8")
    return path


def test_load_table_duplicate_key(tmp_path):
    path = _write_table(tmp_path, "phone,hi,lo\na,+,-\na,-,+\n")
    with pytest.raises(DuplicateKeyError) as err:
        load_feature_table(path)
    assert "line 3" in str(err.value)


def test_load_table_bad_value(tmp_path):
    path = _write_table(tmp_path, "phone,hi,lo\na,+,?\n")
    with pytest.raises(FeatureValueError) as err:
        load_feature_table(path)
    assert "line 2" in str(err.value)


def test_load_table_wrong_width(tmp_path):
    path = _write_table(tmp_path, "phone,hi,lo\na,+\n")
    with pytest.raises(ParseError):
        load_feature_table(path)


def test_load_table_rejects_whitespace_key(tmp_path):
    path = _write_table(tmp_path, "phone,hi\na b,+\n")
    with pytest.raises(ParseError):
        load_feature_table(path)


def test_load_table_skips_comments_and_blanks(tmp_path):
    path = _write_table(
        tmp_path, "# version: custom-2\nphone,hi,lo\n\n# a comment\na,+,-\n"
    )
    table = load_feature_table(path)
    assert table.version == "custom-2"
    assert table.feature_names == ("hi", "lo")
    assert table.lookup("a").features == (PLUS, MINUS)


def test_distinct_default_entries():
    # Vectors need not be unique in general, but the default table keeps its
    # vowels separable so pfer substitutions are informative.
    vowels = ["a", "e", "i", "o", "u", "ɛ", "ɔ", "ə"]
    vecs = [TABLE.lookup(v).features for v in vowels]
    assert len(set(vecs)) == len(vecs)
