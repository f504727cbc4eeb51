"""Shared helpers for the test suite."""
from __future__ import annotations

import numpy as np
import pytest

from amprl.sequences import Peptide

RESIDUES = "ACDEFGHIKLMNPQRSTVWY"


def random_peptides(n, rng, min_len=8, max_len=30, prefix="pep", source="natural"):
    """Uniform random sequences with unique ids and lengths in [min_len, max_len]."""
    out = []
    for i in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        residues = "".join(rng.choice(list(RESIDUES), size=length))
        out.append(Peptide(id=f"{prefix}{i}", residues=residues, source=source))
    return out


def unique_random_peptides(n, rng, min_len=8, max_len=30, prefix="pep", source="natural"):
    """Like random_peptides but with no repeated residue strings."""
    seen = set()
    out = []
    i = 0
    while len(out) < n:
        length = int(rng.integers(min_len, max_len + 1))
        residues = "".join(rng.choice(list(RESIDUES), size=length))
        if residues in seen:
            continue
        seen.add(residues)
        out.append(Peptide(id=f"{prefix}{i}", residues=residues, source=source))
        i += 1
    return out


@pytest.fixture(autouse=True)
def _clear_output_env(monkeypatch):
    # keeps CLI output routing independent of the invoking shell
    monkeypatch.delenv("AMPRL_OUTPUT_DIR", raising=False)
