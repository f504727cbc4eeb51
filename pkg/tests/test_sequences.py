"""Peptide records, FASTA parsing, and annotation serialization."""
import io
import json
from pathlib import Path

import numpy as np
import pytest

from amprl.physchem import descriptor_vector
from amprl.sequences import (
    AnnotationRecord,
    Peptide,
    dedup_exact,
    parse_fasta,
    read_records,
    validate_sequence,
    write_fasta,
    write_records,
)

from conftest import random_peptides


def test_validate_accepts_all_twenty_residues():
    p = validate_sequence("ACDEFGHIKLMNPQRSTVWY", id="all")
    assert p.residues == "ACDEFGHIKLMNPQRSTVWY"
    assert len(p) == 20


def test_validate_uppercases_and_strips():
    p = validate_sequence("  klwk \n", id="x")
    assert p.residues == "KLWK"


def test_validate_rejects_unknown_residue_with_position():
    with pytest.raises(ValueError, match="position 4"):
        validate_sequence("ACDB")


def test_validate_rejects_empty():
    with pytest.raises(ValueError, match="empty"):
        validate_sequence("   ")


def test_peptide_is_frozen_and_source_checked():
    p = Peptide("a", "KKK", "natural")
    with pytest.raises(Exception):
        p.id = "b"
    with pytest.raises(ValueError, match="source"):
        Peptide("a", "KKK", "mystery")


def test_parse_fasta_from_text_and_multiline_bodies():
    text = ">p1 some description\nKKLL\nWWFF\n\n>p2\nACDE\n"
    peps = parse_fasta(text)
    assert [p.id for p in peps] == ["p1", "p2"]
    assert peps[0].residues == "KKLLWWFF"
    assert peps[1].residues == "ACDE"


def test_parse_fasta_errors_are_line_numbered():
    with pytest.raises(ValueError, match="line 1"):
        parse_fasta(["ACDEF", ">x"])
    with pytest.raises(ValueError, match="empty sequence body"):
        parse_fasta([">a", ">b", "KKK"])


def test_fasta_round_trip_with_wrapping(tmp_path):
    rng = np.random.default_rng(7)
    peps = random_peptides(20, rng, min_len=8, max_len=120)
    path = tmp_path / "corpus.fasta"
    write_fasta(peps, path, width=60)
    text = path.read_text()
    for line in text.splitlines():
        assert len(line) <= 61
    back = parse_fasta(path)
    assert [(p.id, p.residues) for p in back] == [(p.id, p.residues) for p in peps]


def test_parse_fasta_accepts_path_and_raw_text_distinctly(tmp_path):
    path = tmp_path / "one.fasta"
    path.write_text(">z\nKWKW\n")
    from_path = parse_fasta(path)
    from_text = parse_fasta(">z\nKWKW\n")
    assert from_path[0].residues == from_text[0].residues == "KWKW"


def test_dedup_exact_keeps_first_occurrence():
    peps = [
        Peptide("a", "KKK", "natural"),
        Peptide("b", "KKK", "external"),
        Peptide("c", "DDD", "natural"),
    ]
    kept = dedup_exact(peps)
    assert [p.id for p in kept] == ["a", "c"]


def test_records_jsonl_round_trip():
    pep = Peptide("a1", "KKLLKK", "generated_sft")
    rec = AnnotationRecord(
        peptide=pep,
        properties=descriptor_vector(pep),
        mic_score=0.7,
        external_scores={"plddt": 0.9},
        verdict="kept",
        reject_reasons=(),
    )
    buf = io.StringIO()
    write_records([rec], "jsonl", buf)
    back = read_records(io.StringIO(buf.getvalue()), "jsonl")
    assert len(back) == 1
    assert back[0].peptide.residues == "KKLLKK"
    assert back[0].mic_score == pytest.approx(0.7)
    assert back[0].external_scores == {"plddt": 0.9}
    assert back[0].verdict == "kept"


def test_records_tsv_columns_and_reasons():
    pep = Peptide("a1", "KKLLKK", "generated_sft")
    rec = AnnotationRecord(
        peptide=pep,
        properties=descriptor_vector(pep),
        mic_score=0.39,
        external_scores={},
        verdict="rejected",
        reject_reasons=("mic_score", "length"),
    )
    buf = io.StringIO()
    write_records([rec], "tsv", buf)
    lines = buf.getvalue().splitlines()
    header = lines[0].split("\t")
    assert header[:2] == ["id", "sequence"]
    assert "mic_score" in header and "verdict" in header
    row = lines[1].split("\t")
    assert row[header.index("reject_reasons")] == "mic_score;length"


def test_rejected_record_requires_reasons():
    pep = Peptide("a1", "KKLLKK", "generated_sft")
    with pytest.raises(ValueError):
        AnnotationRecord(
            peptide=pep,
            properties=descriptor_vector(pep),
            mic_score=0.1,
            external_scores={},
            verdict="rejected",
            reject_reasons=(),
        )


def test_records_jsonl_is_sorted_and_stable():
    pep = Peptide("a1", "KWKW", "natural")
    rec = AnnotationRecord(
        peptide=pep,
        properties=descriptor_vector(pep),
        mic_score=0.5,
        external_scores={},
        verdict="kept",
        reject_reasons=(),
    )
    a, b = io.StringIO(), io.StringIO()
    write_records([rec], "jsonl", a)
    write_records([rec], "jsonl", b)
    assert a.getvalue() == b.getvalue()
    obj = json.loads(a.getvalue())
    assert list(obj) == sorted(obj)
