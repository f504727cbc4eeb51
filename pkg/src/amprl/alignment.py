"""Pairwise sequence alignment: global and local, affine gaps, BLOSUM62.

Global alignments drive clustering identity; local alignments drive the
novelty search. A gap of length k costs open + k * extend. Bit scores and
E-values use fixed Karlin-Altschul parameters for the gapped BLOSUM62
(11,1) scheme; they are approximate and not comparable to MMseqs2 output,
while identity and alignment length are exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .sequences import Peptide

_BLOSUM62_ORDER = "ARNDCQEGHILKMFPSTWYV"
_BLOSUM62_ROWS = """
 4 -1 -2 -2  0 -1 -1  0 -2 -1 -1 -1 -1 -2 -1  1  0 -3 -2  0
-1  5  0 -2 -3  1  0 -2  0 -3 -2  2 -1 -3 -2 -1 -1 -3 -2 -3
-2  0  6  1 -3  0  0  0  1 -3 -3  0 -2 -3 -2  1  0 -4 -2 -3
-2 -2  1  6 -3  0  2 -1 -1 -3 -4 -1 -3 -3 -1  0 -1 -4 -3 -3
 0 -3 -3 -3  9 -3 -4 -3 -3 -1 -1 -3 -1 -2 -3 -1 -1 -2 -2 -1
-1  1  0  0 -3  5  2 -2  0 -3 -2  1  0 -3 -1  0 -1 -2 -1 -2
-1  0  0  2 -4  2  5 -2  0 -3 -3  1 -2 -3 -1  0 -1 -3 -2 -2
 0 -2  0 -1 -3 -2 -2  6 -2 -4 -4 -2 -3 -3 -2  0 -2 -2 -3 -3
-2  0  1 -1 -3  0  0 -2  8 -3 -3 -1 -2 -1 -2 -1 -2 -2  2 -3
-1 -3 -3 -3 -1 -3 -3 -4 -3  4  2 -3  1  0 -3 -2 -1 -3 -1  3
-1 -2 -3 -4 -1 -2 -3 -4 -3  2  4 -2  2  0 -3 -2 -1 -2 -1  1
-1  2  0 -1 -3  1  1 -2 -1 -3 -2  5 -1 -3 -1  0 -1 -3 -2 -2
-1 -1 -2 -3 -1  0 -2 -3 -2  1  2 -1  5  0 -2 -1 -1 -1 -1  1
-2 -3 -3 -3 -2 -3 -3 -3 -1  0  0 -3  0  6 -4 -2 -2  1  3 -1
-1 -2 -2 -1 -3 -1 -1 -2 -2 -3 -3 -1 -2 -4  7 -1 -1 -4 -3 -2
 1 -1  1  0 -1  0  0  0 -1 -2 -2  0 -1 -2 -1  4  1 -3 -2 -2
 0 -1  0 -1 -1 -1 -1 -2 -2 -1 -1 -1 -1 -2 -1  1  5 -2 -2  0
-3 -3 -4 -4 -2 -2 -3 -2 -2 -3 -2 -3 -1  1 -4 -3 -2 11  2 -3
-2 -2 -2 -3 -2 -1 -2 -3  2 -1 -1 -2 -1  3 -3 -2 -2  2  7 -1
 0 -3 -3 -3 -1 -2 -2 -3 -3  3  1 -2  1 -1 -2 -2  0 -3 -1  4
"""

BLOSUM62: dict[tuple[str, str], int] = {}
for _i, _line in enumerate(_BLOSUM62_ROWS.strip().splitlines()):
    for _j, _v in enumerate(_line.split()):
        BLOSUM62[(_BLOSUM62_ORDER[_i], _BLOSUM62_ORDER[_j])] = int(_v)

GAP_OPEN = 11
GAP_EXTEND = 1

# gapped BLOSUM62 (11,1) Karlin-Altschul parameters
_KA_LAMBDA = 0.267
_KA_K = 0.041

_NEG = -1.0e9


@dataclass(frozen=True)
class GlobalAlignment:
    score: float
    matches: int
    columns: int
    aligned_a: str
    aligned_b: str

    @property
    def identity(self) -> float:
        return self.matches / self.columns


@dataclass(frozen=True)
class LocalAlignment:
    score: float
    matches: int
    columns: int
    query_span: tuple[int, int]
    target_span: tuple[int, int]

    @property
    def identity(self) -> float:
        return self.matches / self.columns


def _substitution_grid(a: str, b: str, matrix) -> np.ndarray:
    grid = np.empty((len(a), len(b)), dtype=np.float64)
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            pair = (x, y)
            if pair not in matrix:
                raise ValueError(f"no substitution score for residue pair {pair!r}")
            grid[i, j] = matrix[pair]
    return grid


def _fill(a: str, b: str, matrix, gap_open: float, gap_extend: float, local: bool):
    """Three-state affine DP. State M aligns a pair, X gaps b, Y gaps a.

    Rows are vectorised; the in-row Y recurrence collapses to a running
    maximum because Y[i][j] = max_k (M[i][k] - open - (j-k)*extend).
    """
    n, m = len(a), len(b)
    sub = _substitution_grid(a, b, matrix)
    M = np.full((n + 1, m + 1), _NEG)
    X = np.full((n + 1, m + 1), _NEG)
    Y = np.full((n + 1, m + 1), _NEG)
    if local:
        M[0, :] = 0.0
        M[:, 0] = 0.0
    else:
        M[0, 0] = 0.0
        X[1:, 0] = -(gap_open + gap_extend * np.arange(1, n + 1))
        Y[0, 1:] = -(gap_open + gap_extend * np.arange(1, m + 1))
    cols = np.arange(m)
    for i in range(1, n + 1):
        diag = np.maximum(np.maximum(M[i - 1, :-1], X[i - 1, :-1]), Y[i - 1, :-1])
        row = diag + sub[i - 1]
        if local:
            row = np.maximum(row, 0.0)
        M[i, 1:] = row
        X[i, 1:] = np.maximum(M[i - 1, 1:] - gap_open - gap_extend, X[i - 1, 1:] - gap_extend)
        run = np.maximum.accumulate(M[i, :-1] + gap_extend * cols)
        Y[i, 1:] = run - gap_open - gap_extend * (cols + 1)
    return sub, M, X, Y


def _gap_predecessor(gap_val: float, open_val: float) -> bool:
    # exact comparison: every score is an integer held in float64
    return gap_val == open_val


def align_global(a: str, b: str, matrix=BLOSUM62, gap_open: float = GAP_OPEN, gap_extend: float = GAP_EXTEND) -> GlobalAlignment:
    """Optimal global alignment; traceback follows exact score identities."""
    if not a or not b:
        raise ValueError("cannot align an empty sequence")
    sub, M, X, Y = _fill(a, b, matrix, gap_open, gap_extend, local=False)
    n, m = len(a), len(b)
    finals = (M[n, m], X[n, m], Y[n, m])
    state = int(np.argmax(finals))
    score = finals[state]
    i, j = n, m
    out_a: list[str] = []
    out_b: list[str] = []
    matches = 0
    while (i, j) != (0, 0):
        if state == 0:
            out_a.append(a[i - 1])
            out_b.append(b[j - 1])
            if a[i - 1] == b[j - 1]:
                matches += 1
            target = M[i, j] - sub[i - 1, j - 1]
            i, j = i - 1, j - 1
            if M[i, j] == target:
                state = 0
            elif X[i, j] == target:
                state = 1
            elif Y[i, j] == target:
                state = 2
            else:
                raise AssertionError("global traceback lost the optimal path")
        elif state == 1:
            out_a.append(a[i - 1])
            out_b.append("-")
            opened = _gap_predecessor(X[i, j], M[i - 1, j] - gap_open - gap_extend)
            i -= 1
            state = 0 if opened else 1
        else:
            out_a.append("-")
            out_b.append(b[j - 1])
            opened = _gap_predecessor(Y[i, j], M[i, j - 1] - gap_open - gap_extend)
            j -= 1
            state = 0 if opened else 2
    out_a.reverse()
    out_b.reverse()
    return GlobalAlignment(
        score=float(score),
        matches=matches,
        columns=len(out_a),
        aligned_a="".join(out_a),
        aligned_b="".join(out_b),
    )


def identity_global(a: str, b: str) -> float:
    """Exact matches over alignment columns of the optimal global alignment."""
    return align_global(a, b).identity


def align_local(a: str, b: str, matrix=BLOSUM62, gap_open: float = GAP_OPEN, gap_extend: float = GAP_EXTEND) -> LocalAlignment | None:
    """Best local alignment; None when no pair of segments scores above zero."""
    if not a or not b:
        raise ValueError("cannot align an empty sequence")
    sub, M, X, Y = _fill(a, b, matrix, gap_open, gap_extend, local=True)
    flat = int(np.argmax(M))
    end_i, end_j = divmod(flat, M.shape[1])
    score = M[end_i, end_j]
    if score <= 0.0:
        return None
    i, j = end_i, end_j
    state = 0
    matches = 0
    columns = 0
    while True:
        if state == 0:
            columns += 1
            if a[i - 1] == b[j - 1]:
                matches += 1
            target = M[i, j] - sub[i - 1, j - 1]
            i, j = i - 1, j - 1
            if target == 0.0:
                break
            if M[i, j] == target:
                state = 0
            elif X[i, j] == target:
                state = 1
            elif Y[i, j] == target:
                state = 2
            else:
                raise AssertionError("local traceback lost the optimal path")
        elif state == 1:
            columns += 1
            opened = _gap_predecessor(X[i, j], M[i - 1, j] - gap_open - gap_extend)
            i -= 1
            state = 0 if opened else 1
        else:
            columns += 1
            opened = _gap_predecessor(Y[i, j], M[i, j - 1] - gap_open - gap_extend)
            j -= 1
            state = 0 if opened else 2
    return LocalAlignment(
        score=float(score),
        matches=matches,
        columns=columns,
        query_span=(i, end_i),
        target_span=(j, end_j),
    )


@dataclass(frozen=True)
class SimilarityHit:
    query: str
    target: str
    identity_pct: float
    length: int
    evalue: float
    bits: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.identity_pct <= 100.0):
            raise ValueError("identity percentage must lie in [0,100]")
        if self.length < 1:
            raise ValueError("alignment length must be >= 1")


def approximate_bits(score: float) -> float:
    return (_KA_LAMBDA * score - math.log(_KA_K)) / math.log(2.0)


def approximate_evalue(bits: float, query_len: int, db_residues: int) -> float:
    return query_len * db_residues * 2.0 ** (-bits)


def make_hit(query: Peptide, target: Peptide, aln: LocalAlignment, db_residues: int) -> SimilarityHit:
    bits = approximate_bits(aln.score)
    return SimilarityHit(
        query=query.id,
        target=target.id,
        identity_pct=100.0 * aln.identity,
        length=aln.columns,
        evalue=approximate_evalue(bits, len(query.residues), db_residues),
        bits=bits,
    )


def best_hits(queries: Iterable[Peptide], reference: list[Peptide]) -> dict[str, SimilarityHit]:
    """Best-scoring local hit per query against a reference set, if any."""
    db_residues = sum(len(t.residues) for t in reference)
    hits: dict[str, SimilarityHit] = {}
    for q in queries:
        best: tuple[float, str, Peptide, LocalAlignment] | None = None
        for t in reference:
            aln = align_local(q.residues, t.residues)
            if aln is None:
                continue
            key = (-aln.score, t.id)
            if best is None or key < (-best[0], best[1]):
                best = (aln.score, t.id, t, aln)
        if best is not None:
            hits[q.id] = make_hit(q, best[2], best[3], db_residues)
    return hits


HIT_COLUMNS = ("Query", "Target", "%Identity", "Length", "E-value", "Bits")


def write_hit_table(hits: Iterable[SimilarityHit], sink: str | Path | IO[str]) -> None:
    from .sequences import _write_text

    lines = ["\t".join(HIT_COLUMNS)]
    for h in hits:
        lines.append(
            "\t".join(
                (
                    h.query,
                    h.target,
                    f"{h.identity_pct:g}",
                    str(h.length),
                    f"{h.evalue:.3g}".upper(),
                    f"{h.bits:.1f}",
                )
            )
        )
    _write_text(sink, "\n".join(lines) + "\n")
