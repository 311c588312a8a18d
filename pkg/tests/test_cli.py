from __future__ import annotations

import json
import re
import sys
from pathlib import Path

import pytest

from cfaudit.cli import (
    EXIT_TRANSPORT,
    EXIT_COMPLETENESS,
    EXIT_NOT_FOUND,
    EXIT_OK,
    EXIT_VALIDATION,
    main,
)
from conftest import DATA_DIR, STDIO_SCORER

TOY_LEXICON_CSV = """surface,category,pos
turk,nationality,noun
marokkaan,nationality,noun
vrouw,gender,noun
man,gender,noun
jood,religion,noun
moslim,religion,noun
"""

TOY_TEMPLATES_CSV = """id,pattern,toxicity
t1,vernietig {sgt},toxic
t2,knuffel {sgt},nontoxic
"""


def strip_timestamps(text: str) -> str:
    return re.sub(r'^\s*"timestamp": "[^"]*",?\n', "", text, flags=re.MULTILINE)


@pytest.fixture
def toy_files(tmp_path):
    lexicon = tmp_path / "lexicon.csv"
    lexicon.write_text(TOY_LEXICON_CSV, encoding="utf-8")
    templates = tmp_path / "templates.csv"
    templates.write_text(TOY_TEMPLATES_CSV, encoding="utf-8")
    return tmp_path, lexicon, templates


class TestLexiconValidate:
    def test_shipped_lexicon(self, capsys):
        assert main(["lexicon", "validate"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "85 terms" in out
        assert "7 categories" in out

    def test_duplicate_row_exits_with_line_number(self, tmp_path, capsys):
        path = tmp_path / "lex.csv"
        path.write_text(
            "surface,category,pos\nturk,nationality,noun\nturk,nationality,noun\n",
            encoding="utf-8",
        )
        assert main(["lexicon", "validate", "--lexicon", str(path)]) == EXIT_VALIDATION
        assert ":3:" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        missing = tmp_path / "nope.csv"
        assert main(["lexicon", "validate", "--lexicon", str(missing)]) == EXIT_NOT_FOUND
        assert "not found" in capsys.readouterr().err


class TestCorpusCommands:
    def test_prep_keeps_the_seven(self, tmp_path, capsys):
        out = tmp_path / "filtered.jsonl"
        code = main(
            ["corpus", "prep", "--in", str(DATA_DIR / "corpus20.jsonl"), "--out", str(out)]
        )
        assert code == EXIT_OK
        lines = [json.loads(l) for l in out.read_text(encoding="utf-8").splitlines()]
        assert [l["id"] for l in lines] == ["c01", "c04", "c07", "c10", "c13", "c16", "c19"]
        assert lines[1]["text"] == "die Turk moet weg"  # preprocessed
        assert Path(f"{out}.meta.json").exists()
        assert "kept 7 of 20" in capsys.readouterr().out

    def test_stats_report(self, tmp_path):
        out = tmp_path / "stats.json"
        code = main(
            ["corpus", "stats", "--in", str(DATA_DIR / "stats10.jsonl"), "--out", str(out)]
        )
        assert code == EXIT_OK
        report = json.loads(out.read_text(encoding="utf-8"))
        assert report["meta"]["length_unit"] == "whitespace tokens"
        assert report["labels"]["appropriate"]["count"] == 2
        assert report["labels"]["appropriate"]["avg_len"] == 4.0
        assert report["labels"]["appropriate"]["sgt_entropy"] == 1.0
        assert report["labels"]["violent"]["sgt_entropy"] == 0.0


class TestGenerate:
    def test_mgs_single_post_hand_enumeration(self, toy_files):
        tmp_path, lexicon, _ = toy_files
        corpus = tmp_path / "corpus.jsonl"
        corpus.write_text(
            json.dumps({"id": "p1", "text": "die turk is aardig", "label": "offensive"}) + "\n",
            encoding="utf-8",
        )
        out = tmp_path / "cf.jsonl"
        code = main(
            [
                "generate",
                "mgs",
                "--lexicon",
                str(lexicon),
                "--corpus",
                str(corpus),
                "--out",
                str(out),
            ]
        )
        assert code == EXIT_OK
        records = [json.loads(l) for l in out.read_text(encoding="utf-8").splitlines()]
        assert [r["text"] for r in records] == ["die marokkaan is aardig"]
        assert records[0]["sub"] == {
            "original": "turk",
            "replacement": "marokkaan",
            "start": 4,
            "end": 8,
        }
        summary = json.loads(Path(f"{out}.summary.json").read_text(encoding="utf-8"))
        assert summary["per_label"] == {"offensive": 1}
        assert summary["per_label_category"] == {"offensive": {"nationality": 1}}

    def test_sll_with_constant_stdio_scorer_retains_all_candidates(self, toy_files):
        tmp_path, lexicon, _ = toy_files
        corpus = tmp_path / "corpus.jsonl"
        corpus.write_text(
            json.dumps({"id": "p1", "text": "die turk is aardig", "label": "offensive"}) + "\n",
            encoding="utf-8",
        )
        out = tmp_path / "cf.jsonl"
        code = main(
            [
                "generate",
                "sll",
                "--lexicon",
                str(lexicon),
                "--corpus",
                str(corpus),
                "--out",
                str(out),
                "--scorer-cmd",
                sys.executable,
                str(STDIO_SCORER),
                "constant",
            ]
        )
        assert code == EXIT_OK
        records = out.read_text(encoding="utf-8").splitlines()
        assert len(records) == 5  # every candidate survives the >= filter

    def test_sll_requires_exactly_one_backend(self, toy_files, capsys):
        tmp_path, lexicon, _ = toy_files
        corpus = tmp_path / "corpus.jsonl"
        corpus.write_text(
            json.dumps({"id": "p1", "text": "die turk", "label": "violent"}) + "\n",
            encoding="utf-8",
        )
        code = main(
            [
                "generate",
                "sll",
                "--lexicon",
                str(lexicon),
                "--corpus",
                str(corpus),
                "--out",
                str(tmp_path / "cf.jsonl"),
            ]
        )
        assert code == EXIT_VALIDATION
        assert "exactly one scorer backend" in capsys.readouterr().err

    def test_llmdef_replay_repeats_byte_identically(self, tmp_path):
        outputs = []
        for run in range(3):
            out = tmp_path / f"cf{run}.jsonl"
            code = main(
                [
                    "generate",
                    "llmdef",
                    "--corpus",
                    str(DATA_DIR / "llm_posts.jsonl"),
                    "--out",
                    str(out),
                    "--llm-replay",
                    str(DATA_DIR / "replay_llmdef.jsonl"),
                ]
            )
            assert code == EXIT_OK
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1] == outputs[2]
        records = [json.loads(l) for l in outputs[0].decode().splitlines()]
        assert [r["text"] for r in records] == [
            "die belg is aardig",
            "die marokkaan is aardig",
            "de man loopt",
        ]

    def test_llmdef_concurrency_does_not_change_output(self, tmp_path):
        blobs = []
        for workers in ("1", "8"):
            out = tmp_path / f"cf_w{workers}.jsonl"
            code = main(
                [
                    "generate",
                    "llmdef",
                    "--corpus",
                    str(DATA_DIR / "llm_posts.jsonl"),
                    "--out",
                    str(out),
                    "--llm-replay",
                    str(DATA_DIR / "replay_llmdef.jsonl"),
                    "--max-workers",
                    workers,
                ]
            )
            assert code == EXIT_OK
            blobs.append(out.read_bytes())
        assert blobs[0] == blobs[1]

    def test_llmlist_replay(self, tmp_path):
        out = tmp_path / "cf.jsonl"
        code = main(
            [
                "generate",
                "llmlist",
                "--corpus",
                str(DATA_DIR / "llm_posts.jsonl"),
                "--out",
                str(out),
                "--llm-replay",
                str(DATA_DIR / "replay_llmlist.jsonl"),
            ]
        )
        assert code == EXIT_OK
        records = [json.loads(l) for l in out.read_text(encoding="utf-8").splitlines()]
        assert [r["text"] for r in records] == [
            "die belg is aardig",
            "die duitser is aardig",
            "de man loopt",
            "de oudere loopt",
        ]

    def test_every_post_failing_exits_nonzero(self, tmp_path, capsys):
        corpus = tmp_path / "corpus.jsonl"
        corpus.write_text(
            json.dumps({"id": "ghost", "text": "die turk", "label": "offensive"}) + "\n",
            encoding="utf-8",
        )
        out = tmp_path / "cf.jsonl"
        code = main(
            [
                "generate",
                "llmdef",
                "--corpus",
                str(corpus),
                "--out",
                str(out),
                "--llm-replay",
                str(DATA_DIR / "replay_llmdef.jsonl"),
            ]
        )
        assert code == EXIT_VALIDATION
        assert Path(f"{out}.errors.jsonl").exists()
        assert "failed" in capsys.readouterr().err

    def test_partial_replay_writes_error_sidecar(self, tmp_path):
        corpus = tmp_path / "corpus.jsonl"
        corpus.write_text(
            json.dumps({"id": "p1", "text": "die turk is aardig", "label": "appropriate"})
            + "\n"
            + json.dumps({"id": "p404", "text": "de vrouw loopt", "label": "offensive"})
            + "\n",
            encoding="utf-8",
        )
        out = tmp_path / "cf.jsonl"
        code = main(
            [
                "generate",
                "llmdef",
                "--corpus",
                str(corpus),
                "--out",
                str(out),
                "--llm-replay",
                str(DATA_DIR / "replay_llmdef.jsonl"),
            ]
        )
        assert code == EXIT_OK  # some posts succeeded
        errors = [json.loads(l) for l in Path(f"{out}.errors.jsonl").read_text().splitlines()]
        assert [e["parent_id"] for e in errors] == ["p404"]


class TestEvalsetBuild:
    def test_toy_build(self, toy_files, capsys):
        tmp_path, lexicon, templates = toy_files
        out = tmp_path / "evalset.jsonl"
        code = main(
            [
                "evalset",
                "build",
                "--lexicon",
                str(lexicon),
                "--templates",
                str(templates),
                "--out",
                str(out),
            ]
        )
        assert code == EXIT_OK
        lines = out.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 12
        assert "wrote 12 sentences" in capsys.readouterr().out


def build_audit_fixture(tmp_path, lexicon, templates):
    """Evalset + hand-set predictions with fully hand-computed expectations."""
    evalset = tmp_path / "evalset.jsonl"
    assert (
        main(
            [
                "evalset",
                "build",
                "--lexicon",
                str(lexicon),
                "--templates",
                str(templates),
                "--out",
                str(evalset),
            ]
        )
        == EXIT_OK
    )
    label_of = {
        ("t1", "turk"): "offensive",
        ("t1", "marokkaan"): "violent",
        ("t1", "vrouw"): "appropriate",
        ("t1", "man"): "offensive",
        ("t1", "jood"): "offensive",
        ("t1", "moslim"): "inappropriate",
        ("t2", "turk"): "appropriate",
        ("t2", "marokkaan"): "offensive",
        ("t2", "vrouw"): "appropriate",
        ("t2", "man"): "appropriate",
        ("t2", "jood"): "appropriate",
        ("t2", "moslim"): "appropriate",
    }
    preds = tmp_path / "preds.jsonl"
    with open(preds, "w", encoding="utf-8") as fh:
        for (tid, surface), label in label_of.items():
            fh.write(json.dumps({"id": f"{tid}+{surface}", "label": label}) + "\n")
    return evalset, preds


class TestPredictFetch:
    def test_file_mode(self, toy_files):
        tmp_path, lexicon, templates = toy_files
        evalset, preds = build_audit_fixture(tmp_path, lexicon, templates)
        out = tmp_path / "fetched.jsonl"
        code = main(
            [
                "predict",
                "fetch",
                "--evalset",
                str(evalset),
                "--predictions-file",
                str(preds),
                "--out",
                str(out),
            ]
        )
        assert code == EXIT_OK
        lines = [json.loads(l) for l in out.read_text(encoding="utf-8").splitlines()]
        assert len(lines) == 12
        # canonical order: evalset order, not file order
        assert lines[0]["id"] == "t1+turk"

    def test_unreachable_endpoint_is_a_transport_error(self, toy_files, capsys):
        tmp_path, lexicon, templates = toy_files
        evalset, _ = build_audit_fixture(tmp_path, lexicon, templates)
        code = main(
            [
                "predict",
                "fetch",
                "--evalset",
                str(evalset),
                "--classifier-endpoint",
                "http://127.0.0.1:1",
                "--max-retries",
                "1",
                "--backoff",
                "0.01",
                "--timeout",
                "1",
                "--out",
                str(tmp_path / "f.jsonl"),
            ]
        )
        assert code == EXIT_TRANSPORT
        assert "error" in capsys.readouterr().err

    def test_missing_prediction_exits_with_ids(self, toy_files, capsys):
        tmp_path, lexicon, templates = toy_files
        evalset, preds = build_audit_fixture(tmp_path, lexicon, templates)
        trimmed = tmp_path / "short.jsonl"
        trimmed.write_text(
            "".join(preds.read_text(encoding="utf-8").splitlines(keepends=True)[:-1]),
            encoding="utf-8",
        )
        code = main(
            [
                "predict",
                "fetch",
                "--evalset",
                str(evalset),
                "--predictions-file",
                str(trimmed),
                "--out",
                str(tmp_path / "f.jsonl"),
            ]
        )
        assert code == EXIT_COMPLETENESS
        assert "t2+moslim" in capsys.readouterr().err


class TestAudit:
    def test_hand_computed_report(self, toy_files):
        tmp_path, lexicon, templates = toy_files
        evalset, preds = build_audit_fixture(tmp_path, lexicon, templates)
        out_dir = tmp_path / "audit"
        code = main(
            [
                "audit",
                "--evalset",
                str(evalset),
                "--predictions",
                str(preds),
                "--out-dir",
                str(out_dir),
                "--model-id",
                "toy-model",
            ]
        )
        assert code == EXIT_OK
        report = json.loads((out_dir / "report.json").read_text(encoding="utf-8"))

        # t1 (toxic): g = 1,1,0,1,1,0 -> k=4, pairs 15, disagreements 8
        # t2 (nontoxic): g = 0,1,0,0,0,0 -> k=1, disagreements 5
        assert report["ctf"]["toxic"] == 8 / 15
        assert report["ctf"]["nontoxic"] == 5 / 15
        assert report["ctf"]["average"] == (8 / 15 + 5 / 15) / 2

        by_cat = report["ctf_by_category"]
        assert by_cat["nationality"] == {"toxic": 0.0, "nontoxic": 1.0}
        assert by_cat["gender"] == {"toxic": 1.0, "nontoxic": 0.0}
        assert by_cat["religion"] == {"toxic": 1.0, "nontoxic": 0.0}

        assert report["dpd"]["value"] == 0.5
        assert report["dpd"]["rates"] == {
            "nationality": 0.75,
            "gender": 0.25,
            "religion": 0.25,
        }
        assert sorted(report["dpd"]["excluded_groups"]) == [
            "age",
            "ideology",
            "sexuality",
            "skincolor",
        ]

        assert report["eod"]["value"] == 0.5
        assert report["eod"]["tpr"] == {"nationality": 1.0, "gender": 0.5, "religion": 0.5}
        assert report["eod"]["fpr"] == {"nationality": 0.5, "gender": 0.0, "religion": 0.0}

        assert report["meta"]["model_id"] == "toy-model"
        assert set(report["meta"]["datasets"]) == {"evalset", "predictions"}
        assert (out_dir / "report.txt").exists()

    def test_audit_with_classification_report(self, toy_files):
        tmp_path, lexicon, templates = toy_files
        evalset, preds = build_audit_fixture(tmp_path, lexicon, templates)
        corpus = tmp_path / "test_posts.jsonl"
        corpus.write_text(
            json.dumps({"id": "1", "text": "a", "label": "appropriate"}) + "\n"
            + json.dumps({"id": "2", "text": "b", "label": "appropriate"}) + "\n"
            + json.dumps({"id": "3", "text": "c", "label": "offensive"}) + "\n"
            + json.dumps({"id": "4", "text": "d", "label": "offensive"}) + "\n",
            encoding="utf-8",
        )
        corpus_preds = tmp_path / "test_preds.jsonl"
        corpus_preds.write_text(
            json.dumps({"id": "1", "label": "appropriate"}) + "\n"
            + json.dumps({"id": "2", "label": "offensive"}) + "\n"
            + json.dumps({"id": "3", "label": "offensive"}) + "\n"
            + json.dumps({"id": "4", "label": "offensive"}) + "\n",
            encoding="utf-8",
        )
        out_dir = tmp_path / "audit"
        code = main(
            [
                "audit",
                "--evalset",
                str(evalset),
                "--predictions",
                str(preds),
                "--corpus",
                str(corpus),
                "--corpus-predictions",
                str(corpus_preds),
                "--out-dir",
                str(out_dir),
            ]
        )
        assert code == EXIT_OK
        report = json.loads((out_dir / "report.json").read_text(encoding="utf-8"))
        assert report["classification"]["accuracy"] == 0.75
        assert report["classification"]["per_class"]["appropriate"]["f1"] == 2 / 3
        assert report["classification"]["per_class"]["offensive"]["f1"] == 0.8

    def test_missing_prediction_lists_ids(self, toy_files, capsys):
        tmp_path, lexicon, templates = toy_files
        evalset, preds = build_audit_fixture(tmp_path, lexicon, templates)
        trimmed = tmp_path / "short.jsonl"
        trimmed.write_text(
            "".join(preds.read_text(encoding="utf-8").splitlines(keepends=True)[1:]),
            encoding="utf-8",
        )
        code = main(
            [
                "audit",
                "--evalset",
                str(evalset),
                "--predictions",
                str(trimmed),
                "--out-dir",
                str(tmp_path / "audit"),
            ]
        )
        assert code == EXIT_COMPLETENESS
        assert "t1+turk" in capsys.readouterr().err

    def test_audit_reruns_byte_identical_modulo_timestamp(self, toy_files):
        tmp_path, lexicon, templates = toy_files
        evalset, preds = build_audit_fixture(tmp_path, lexicon, templates)
        blobs, tables = [], []
        for run in range(3):
            out_dir = tmp_path / f"audit{run}"
            assert (
                main(
                    [
                        "audit",
                        "--evalset",
                        str(evalset),
                        "--predictions",
                        str(preds),
                        "--out-dir",
                        str(out_dir),
                        "--ctf-csv",
                        str(out_dir / "ctf.csv"),
                    ]
                )
                == EXIT_OK
            )
            blobs.append(strip_timestamps((out_dir / "report.json").read_text(encoding="utf-8")))
            tables.append((out_dir / "report.txt").read_bytes())
        assert blobs[0] == blobs[1] == blobs[2]
        assert tables[0] == tables[1] == tables[2]

    def test_ctf_csv_export(self, toy_files):
        tmp_path, lexicon, templates = toy_files
        evalset, preds = build_audit_fixture(tmp_path, lexicon, templates)
        csv_path = tmp_path / "ctf.csv"
        assert (
            main(
                [
                    "audit",
                    "--evalset",
                    str(evalset),
                    "--predictions",
                    str(preds),
                    "--out-dir",
                    str(tmp_path / "audit"),
                    "--ctf-csv",
                    str(csv_path),
                ]
            )
            == EXIT_OK
        )
        rows = csv_path.read_text(encoding="utf-8").splitlines()
        assert rows[0] == "template_id,ctf"
        assert len(rows) == 3  # header + 2 templates


class TestReportRender:
    def test_render_matches_audit_table(self, toy_files, capsys):
        tmp_path, lexicon, templates = toy_files
        evalset, preds = build_audit_fixture(tmp_path, lexicon, templates)
        out_dir = tmp_path / "audit"
        main(
            [
                "audit",
                "--evalset",
                str(evalset),
                "--predictions",
                str(preds),
                "--out-dir",
                str(out_dir),
            ]
        )
        capsys.readouterr()
        rendered = tmp_path / "table.txt"
        code = main(
            ["report", "render", "--report", str(out_dir / "report.json"), "--out", str(rendered)]
        )
        assert code == EXIT_OK
        assert rendered.read_bytes() == (out_dir / "report.txt").read_bytes()


class TestConfigFile:
    def test_config_supplies_defaults_flags_win(self, toy_files):
        tmp_path, lexicon, templates = toy_files
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"lexicon": str(lexicon), "max_workers": 2}), encoding="utf-8")
        corpus = tmp_path / "corpus.jsonl"
        corpus.write_text(
            json.dumps({"id": "p1", "text": "die turk is aardig", "label": "offensive"}) + "\n",
            encoding="utf-8",
        )
        out = tmp_path / "cf.jsonl"
        code = main(
            [
                "generate",
                "mgs",
                "--config",
                str(config),
                "--corpus",
                str(corpus),
                "--out",
                str(out),
            ]
        )
        assert code == EXIT_OK
        records = [json.loads(l) for l in out.read_text(encoding="utf-8").splitlines()]
        assert [r["text"] for r in records] == ["die marokkaan is aardig"]

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"lexicon_path": "x"}), encoding="utf-8")
        code = main(["lexicon", "validate", "--config", str(config)])
        assert code == EXIT_VALIDATION
        assert "lexicon_path" in capsys.readouterr().err
