from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cfaudit.errors import ValidationError
from cfaudit.evalset import (
    Template,
    build_evalset,
    load_templates,
    read_evalset,
    write_evalset,
)
from cfaudit.lexicon import Lexicon, SocialGroupTerm


def write_templates(path, rows):
    path.write_text("id,pattern,toxicity\n" + "\n".join(rows) + "\n", encoding="utf-8")
    return path


class TestLoadTemplates:
    def test_shipped_file_has_17_plus_17(self, shipped_templates_file):
        templates = load_templates(shipped_templates_file)
        assert len(templates) == 34
        assert sum(1 for t in templates if t.toxicity == "toxic") == 17
        assert sum(1 for t in templates if t.toxicity == "nontoxic") == 17

    def test_file_order_preserved(self, tmp_path):
        path = write_templates(
            tmp_path / "t.csv", ["b,knuffel {sgt},nontoxic", "a,sla {sgt},toxic"]
        )
        assert [t.id for t in load_templates(path)] == ["b", "a"]

    def test_double_slot_marker_names_the_template(self, tmp_path):
        path = write_templates(tmp_path / "t.csv", ["t1,{sgt} ziet {sgt},toxic"])
        with pytest.raises(ValidationError, match="t1"):
            load_templates(path)

    def test_missing_slot_marker_rejected(self, tmp_path):
        path = write_templates(tmp_path / "t.csv", ["t1,geen slot hier,toxic"])
        with pytest.raises(ValidationError, match="t1"):
            load_templates(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("", encoding="utf-8")
        with pytest.raises(ValidationError, match="empty"):
            load_templates(path)

    def test_header_only_rejected(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("id,pattern,toxicity\n", encoding="utf-8")
        with pytest.raises(ValidationError, match="no templates"):
            load_templates(path)

    def test_too_many_tokens_rejected(self, tmp_path):
        path = write_templates(tmp_path / "t.csv", ["t1,dit is veel te lang {sgt},toxic"])
        with pytest.raises(ValidationError, match="4 tokens"):
            load_templates(path)

    def test_bad_toxicity_rejected(self, tmp_path):
        path = write_templates(tmp_path / "t.csv", ["t1,knuffel {sgt},vriendelijk"])
        with pytest.raises(ValidationError, match="toxicity"):
            load_templates(path)

    def test_duplicate_id_rejected(self, tmp_path):
        path = write_templates(
            tmp_path / "t.csv", ["t1,knuffel {sgt},nontoxic", "t1,sla {sgt},toxic"]
        )
        with pytest.raises(ValidationError, match="duplicate"):
            load_templates(path)


class TestBuildEvalset:
    def test_shipped_everything(self, shipped_templates_file, shipped_lexicon):
        sentences = build_evalset(load_templates(shipped_templates_file), shipped_lexicon)
        assert len(sentences) == 2890

    def test_two_by_three(self, toy_lexicon):
        templates = [
            Template("t1", "knuffel {sgt}", "nontoxic"),
            Template("t2", "sla {sgt}", "toxic"),
        ]
        small = Lexicon(toy_lexicon.terms[:3])
        sentences = build_evalset(templates, small)
        assert len(sentences) == 6
        # template-major then lexicon order
        assert [s.template_id for s in sentences] == ["t1", "t1", "t1", "t2", "t2", "t2"]
        assert [s.sgt.surface for s in sentences[:3]] == ["turk", "marokkaan", "vrouw"]

    def test_single_instantiation(self):
        templates = [Template("t1", "knuffel {sgt}", "nontoxic")]
        lex = Lexicon((SocialGroupTerm("turk", "nationality", "noun"),))
        sentences = build_evalset(templates, lex)
        assert len(sentences) == 1
        assert sentences[0].text == "knuffel turk"
        assert sentences[0].gold == "nontoxic"
        assert sentences[0].key == "t1+turk"

    @given(st.integers(min_value=1, max_value=12), st.integers(min_value=1, max_value=20))
    def test_size_law(self, n_templates, n_terms):
        templates = [
            Template(f"t{i}", f"zin {{sgt}} nummer", "toxic" if i % 2 else "nontoxic")
            for i in range(n_templates)
        ]
        lex = Lexicon(
            tuple(SocialGroupTerm(f"term{j}", "age", "noun") for j in range(n_terms))
        )
        assert len(build_evalset(templates, lex)) == n_templates * n_terms

    def test_partition_law_sentences_differ_only_at_slot(self, toy_lexicon):
        templates = [Template("t1", "wat een {sgt} zeg", "nontoxic")]
        sentences = build_evalset(templates, toy_lexicon)
        golds = {s.gold for s in sentences}
        assert golds == {"nontoxic"}
        prefix = "wat een "
        suffix = " zeg"
        for s in sentences:
            assert s.text.startswith(prefix) and s.text.endswith(suffix)
            assert s.text[len(prefix) : -len(suffix)] == s.sgt.surface


class TestEvalsetRoundTrip:
    def test_write_then_read(self, tmp_path, toy_lexicon):
        templates = [
            Template("t1", "knuffel {sgt}", "nontoxic"),
            Template("t2", "sla {sgt}", "toxic"),
        ]
        sentences = build_evalset(templates, toy_lexicon)
        path = tmp_path / "evalset.jsonl"
        assert write_evalset(path, sentences) == len(sentences)
        loaded = read_evalset(path)
        assert [s.key for s in loaded] == [s.key for s in sentences]
        assert [s.text for s in loaded] == [s.text for s in sentences]
        assert [s.gold for s in loaded] == [s.gold for s in sentences]
        assert [s.sgt.category for s in loaded] == [s.sgt.category for s in sentences]

    def test_read_rejects_bad_gold(self, tmp_path):
        path = tmp_path / "evalset.jsonl"
        path.write_text(
            '{"template_id": "t1", "sgt": "turk", "category": "nationality",'
            ' "text": "x", "gold": "meh"}\n',
            encoding="utf-8",
        )
        with pytest.raises(ValidationError, match="meh"):
            read_evalset(path)

    def test_read_rejects_duplicate_keys(self, tmp_path):
        line = (
            '{"template_id": "t1", "sgt": "turk", "category": "nationality",'
            ' "text": "x", "gold": "toxic"}\n'
        )
        path = tmp_path / "evalset.jsonl"
        path.write_text(line + line, encoding="utf-8")
        with pytest.raises(ValidationError, match="duplicate"):
            read_evalset(path)
