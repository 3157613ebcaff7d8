"""Unit tests for file readers/writers and display formatting."""

import json
import math

import pytest

from phonekit.errors import DuplicateKeyError, ParseError
from phonekit.formats import (
    fmt_num,
    fmt_pct,
    read_counts_tsv,
    read_family_map,
    read_grid_json,
    read_lang_vectors_csv,
    read_utterances_tsv,
    write_json,
    write_jsonl,
    write_tsv,
)
from phonekit.ipa import load_feature_table

from pathlib import Path

TABLE = load_feature_table(Path(__file__).parent / "fixtures" / "mini_table.csv")


class TestUtterancesTsv:
    def test_blank_lines_skipped(self, tmp_path):
        p = tmp_path / "u.tsv"
        p.write_text("u1\taaa\tpa\n\n\nu2\tbbb\tba\n", encoding="utf-8")
        seqs = read_utterances_tsv(p, TABLE)
        assert [s.utterance_id for s in seqs] == ["u1", "u2"]
        assert [ph.text for ph in seqs[0].phones] == ["p", "a"]

    def test_wrong_column_count_reports_line(self, tmp_path):
        p = tmp_path / "u.tsv"
        p.write_text("u1\taaa\tpa\nu2\tbbb\n", encoding="utf-8")
        with pytest.raises(ParseError) as exc:
            read_utterances_tsv(p, TABLE)
        assert exc.value.line == 2

    def test_empty_id_rejected(self, tmp_path):
        p = tmp_path / "u.tsv"
        p.write_text("\taaa\tpa\n", encoding="utf-8")
        with pytest.raises(ParseError):
            read_utterances_tsv(p, TABLE)


class TestLangVectorsCsv:
    def test_parses_header_comments_and_gaps(self, tmp_path):
        p = tmp_path / "v.csv"
        p.write_text(
            "# typology export\nlang,f1,f2,f3\naa,1,0.5,-1\nbb,2,,3\n",
            encoding="utf-8",
        )
        vecs = read_lang_vectors_csv(p)
        assert vecs["aa"] == [1.0, 0.5, -1.0]
        assert vecs["bb"] == [2.0, None, 3.0]

    def test_missing_header_rejected(self, tmp_path):
        p = tmp_path / "v.csv"
        p.write_text("aa,1,2\n", encoding="utf-8")
        with pytest.raises(ParseError):
            read_lang_vectors_csv(p)

    def test_duplicate_language_rejected(self, tmp_path):
        p = tmp_path / "v.csv"
        p.write_text("lang,f1\naa,1\naa,2\n", encoding="utf-8")
        with pytest.raises(DuplicateKeyError):
            read_lang_vectors_csv(p)

    def test_ragged_row_rejected(self, tmp_path):
        p = tmp_path / "v.csv"
        p.write_text("lang,f1,f2\naa,1\n", encoding="utf-8")
        with pytest.raises(ParseError):
            read_lang_vectors_csv(p)

    def test_non_numeric_cell_rejected(self, tmp_path):
        p = tmp_path / "v.csv"
        p.write_text("lang,f1\naa,high\n", encoding="utf-8")
        with pytest.raises(ParseError):
            read_lang_vectors_csv(p)


class TestCountsAndFamilies:
    def test_counts_parse(self, tmp_path):
        p = tmp_path / "c.tsv"
        p.write_text("aa\t100\nbb\t2.5\n", encoding="utf-8")
        assert read_counts_tsv(p) == {"aa": 100.0, "bb": 2.5}

    def test_negative_count_rejected(self, tmp_path):
        p = tmp_path / "c.tsv"
        p.write_text("aa\t-1\n", encoding="utf-8")
        with pytest.raises(ParseError):
            read_counts_tsv(p)

    def test_non_finite_count_rejected(self, tmp_path):
        p = tmp_path / "c.tsv"
        p.write_text("aa\tinf\n", encoding="utf-8")
        with pytest.raises(ParseError):
            read_counts_tsv(p)

    def test_family_map_duplicate_rejected(self, tmp_path):
        p = tmp_path / "f.tsv"
        p.write_text("aa\tF1\naa\tF2\n", encoding="utf-8")
        with pytest.raises(DuplicateKeyError):
            read_family_map(p)


class TestGridJson:
    def test_round_trip(self, tmp_path):
        p = tmp_path / "g.json"
        row = [math.log(0.5), math.log(0.25), math.log(0.25)]
        p.write_text(
            json.dumps(
                {
                    "vocab": ["p", "a"],
                    "utterances": [{"utt_id": "u1", "lang": "xx", "log_probs": [row]}],
                }
            ),
            encoding="utf-8",
        )
        vocab, grids = read_grid_json(p)
        assert vocab == ["p", "a"]
        utt_id, lang, grid = grids[0]
        assert (utt_id, lang) == ("u1", "xx")
        assert grid.log_probs.shape == (1, 3)

    def test_duplicate_vocab_entry_rejected(self, tmp_path):
        p = tmp_path / "g.json"
        p.write_text(json.dumps({"vocab": ["p", "p"], "utterances": []}), encoding="utf-8")
        with pytest.raises(ParseError):
            read_grid_json(p)

    def test_width_mismatch_names_utterance(self, tmp_path):
        p = tmp_path / "g.json"
        p.write_text(
            json.dumps(
                {
                    "vocab": ["p", "a"],
                    "utterances": [{"utt_id": "u7", "lang": "xx", "log_probs": [[0.0, 0.0]]}],
                }
            ),
            encoding="utf-8",
        )
        with pytest.raises(ParseError, match="u7"):
            read_grid_json(p)


class TestWriters:
    def test_write_json_sorted_with_trailing_newline(self, tmp_path):
        p = tmp_path / "x.json"
        write_json(p, {"b": 1, "a": {"z": 0, "y": [1, 2]}})
        text = p.read_text(encoding="utf-8")
        assert text.endswith("\n")
        assert text.index('"a"') < text.index('"b"')
        assert json.loads(text) == {"b": 1, "a": {"z": 0, "y": [1, 2]}}

    def test_write_jsonl_one_object_per_line(self, tmp_path):
        p = tmp_path / "x.jsonl"
        write_jsonl(p, [{"step": 1}, {"step": 2}])
        lines = p.read_text(encoding="utf-8").splitlines()
        assert [json.loads(line)["step"] for line in lines] == [1, 2]

    def test_write_tsv(self, tmp_path):
        p = tmp_path / "x.tsv"
        write_tsv(p, ("a", "b"), [(1, "x"), (2, "y")])
        assert p.read_text(encoding="utf-8") == "a\tb\n1\tx\n2\ty\n"


class TestFormatting:
    def test_fmt_pct(self):
        assert fmt_pct(15.625) == "15.6"
        assert fmt_pct(100.0) == "100.0"
        assert fmt_pct(None) == "NA"

    def test_fmt_num(self):
        assert fmt_num(0.25) == "0.2500"
        assert fmt_num(-0.9999999999) == "-1.0000"
        assert fmt_num(None) == "NA"
