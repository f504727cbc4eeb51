"""CLI exit codes, output-directory precedence, and artifact layout."""
import json

import pytest

from amprl.cli import ENV_OUTPUT_DIR, main
from amprl.sequences import Peptide, write_fasta

FASTA = ">p1\nGLWKKILGKIKAGL\n>p2\nKKLLDDAAWWRRHH\n"


def _write_fasta(tmp_path, name="in.fasta", text=FASTA):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_bare_invocation_prints_help_and_fails(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().out.lower()


def test_help_and_version_exit_zero(capsys):
    assert main(["--help"]) == 0
    assert main(["--version"]) == 0
    assert main(["props", "--help"]) == 0


def test_unknown_flag_is_usage_error(capsys):
    assert main(["props", "--no-such-flag"]) == 2


def test_props_writes_descriptor_table(tmp_path, capsys):
    fasta = _write_fasta(tmp_path)
    out = tmp_path / "out"
    assert main(["props", "--input", str(fasta), "--output-dir", str(out)]) == 0
    table = (out / "props.tsv").read_text().splitlines()
    assert len(table) == 3  # header + two records
    assert table[1].startswith("p1\t")
    assert (out / "resolved_config.json").exists()
    assert (out / "run_manifest.json").exists()
    assert "props: 2 records" in capsys.readouterr().out


def test_missing_required_input_is_config_error(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["props", "--output-dir", str(out)]) == 2
    assert "--input is required" in capsys.readouterr().err


def test_missing_file_is_config_error(tmp_path, capsys):
    assert main(["props", "--input", str(tmp_path / "nope.fasta"), "--output-dir", str(tmp_path / "o")]) == 2
    assert "not found" in capsys.readouterr().err


def test_config_unknown_keys_all_reported(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"sedd": 1, "model": {"depth": 2}}))
    fasta = _write_fasta(tmp_path)
    code = main(["props", "--input", str(fasta), "--config", str(cfg), "--output-dir", str(tmp_path / "o")])
    assert code == 2
    err = capsys.readouterr().err
    assert "sedd" in err and "model.depth" in err


def test_config_bad_json_is_config_error(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{broken")
    code = main(["props", "--input", str(_write_fasta(tmp_path)), "--config", str(cfg), "--output-dir", str(tmp_path / "o")])
    assert code == 2
    assert "JSON" in capsys.readouterr().err


def test_runtime_failure_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.fasta"
    bad.write_text(">p1\nGLWBBB\n")  # B is not a residue
    assert main(["props", "--input", str(bad), "--output-dir", str(tmp_path / "o")]) == 1
    assert "error:" in capsys.readouterr().err


def test_output_dir_precedence(tmp_path, monkeypatch, capsys):
    fasta = _write_fasta(tmp_path)
    flag_dir = tmp_path / "flag"
    env_dir = tmp_path / "env"
    cfg_dir = tmp_path / "cfg"
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"paths": {"outputs": str(cfg_dir)}}))

    monkeypatch.setenv(ENV_OUTPUT_DIR, str(env_dir))
    args = ["props", "--input", str(fasta), "--config", str(cfg)]
    assert main(args + ["--output-dir", str(flag_dir)]) == 0
    assert (flag_dir / "props.tsv").exists()
    assert not env_dir.exists() and not cfg_dir.exists()

    assert main(args) == 0
    assert (env_dir / "props.tsv").exists()
    assert not cfg_dir.exists()

    monkeypatch.delenv(ENV_OUTPUT_DIR)
    assert main(args) == 0
    assert (cfg_dir / "props.tsv").exists()


def test_seed_override_lands_in_resolved_config(tmp_path, capsys):
    fasta = _write_fasta(tmp_path)
    out = tmp_path / "out"
    assert main(["props", "--input", str(fasta), "--seed", "42", "--output-dir", str(out)]) == 0
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["seed"] == 42


def test_manifest_is_the_only_timestamped_artifact(tmp_path, capsys):
    fasta = _write_fasta(tmp_path)
    out = tmp_path / "out"
    assert main(["props", "--input", str(fasta), "--output-dir", str(out)]) == 0
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert set(manifest) == {"command", "argv", "version", "timestamp"}
    assert manifest["command"] == "props"
    resolved_text = (out / "resolved_config.json").read_text()
    assert "timestamp" not in resolved_text


def test_invalid_section_value_is_config_error(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"reward": {"mix_lambda": 2.0}}))
    code = main(["props", "--input", str(_write_fasta(tmp_path)), "--config", str(cfg), "--output-dir", str(tmp_path / "o")])
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_assay_subcommand_end_to_end(tmp_path, capsys):
    table = tmp_path / "assay.tsv"
    table.write_text(
        "peptide_id\ttime_min\tsample_fluor\tcontrol_fluor\n"
        "hot\t0\t100\t100\nhot\t10\t220\t100\nhot\t20\t210\t100\n"
        "cold\t0\t100\t100\ncold\t10\t104\t100\ncold\t20\t101\t100\n"
    )
    out = tmp_path / "out"
    assert main(["assay", "--input", str(table), "--output-dir", str(out)]) == 0
    summary = (out / "assay_summary.tsv").read_text().splitlines()
    assert summary[0].split("\t") == ["peptide_id", "max_rel", "auc", "category"]
    assert len(summary) == 3
    medians = json.loads((out / "assay_medians.json").read_text())
    assert set(medians) == {"max_rel", "auc"}


def test_dataprep_subcommand_writes_splits(tmp_path, capsys):
    import numpy as np

    from conftest import random_peptides

    rng = np.random.default_rng(11)
    peps = random_peptides(30, rng, min_len=10, max_len=24)
    fasta = tmp_path / "corpus.fasta"
    write_fasta(peps, fasta)
    out = tmp_path / "out"
    assert main(["dataprep", "--input", str(fasta), "--output-dir", str(out)]) == 0
    for name in ("train.fasta", "val.fasta", "test.fasta", "split_manifest.json"):
        assert (out / name).exists(), name
    manifest = json.loads((out / "split_manifest.json").read_text())
    assert sum(s["count"] for s in manifest["splits"].values()) == 30
