"""Distribution-fidelity metrics for comparing generated and reference sets:
residue frequency profiles, Jensen-Shannon divergence, Pearson correlation,
per-descriptor summaries, and nearest-neighbor embedding distances.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Callable, Sequence

import numpy as np

from .physchem import DEFAULT_SCALE, ScaleTable, descriptor_vector
from .sequences import RESIDUES, Peptide, _write_text

_RES_INDEX = {ch: i for i, ch in enumerate(RESIDUES)}


def aa_frequency(peptides: Sequence[Peptide]) -> np.ndarray:
    """Residue frequencies pooled over the whole set, in alphabetical order."""
    if not peptides:
        raise ValueError("cannot compute frequencies of an empty set")
    counts = np.zeros(len(RESIDUES), dtype=np.float64)
    for pep in peptides:
        for ch in pep.residues:
            counts[_RES_INDEX[ch]] += 1.0
    return counts / counts.sum()


def _check_distribution(p: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D distribution")
    if np.any(arr < 0.0) or abs(arr.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} must be non-negative and sum to 1")
    return arr


def js_divergence(p: np.ndarray, q: np.ndarray, base: float = 2.0) -> float:
    """Jensen-Shannon divergence with the 0*log(0) = 0 convention.

    Base 2 bounds the value to [0,1]; the base is configurable because some
    published numbers use natural logs.
    """
    p = _check_distribution(p, "p")
    q = _check_distribution(q, "q")
    if p.shape != q.shape:
        raise ValueError("distributions must have matching support")
    if base <= 1.0:
        raise ValueError("log base must exceed 1")
    m = 0.5 * (p + q)

    def kl(a: np.ndarray) -> float:
        mask = a > 0.0
        return float(np.sum(a[mask] * (np.log(a[mask]) - np.log(m[mask]))))

    return (0.5 * kl(p) + 0.5 * kl(q)) / math.log(base)


def pearson(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Sample correlation; None when either input is constant (undefined)."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise ValueError("inputs must be equal-length 1-D arrays")
    if xa.size < 2:
        raise ValueError("need at least two points")
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    sx = float(np.sqrt(np.sum(xc * xc)))
    sy = float(np.sqrt(np.sum(yc * yc)))
    if sx < 1e-12 or sy < 1e-12:
        return None
    return float(np.sum(xc * yc) / (sx * sy))


DESCRIPTORS = ("length", "hydrophobicity", "hydrophobic_moment", "net_charge", "isoelectric_point")

DEFAULT_BIN_EDGES: dict[str, tuple[float, ...]] = {
    "length": tuple(float(v) for v in range(0, 65, 5)),
    "hydrophobicity": tuple(np.round(np.arange(-3.0, 3.01, 0.5), 10)),
    "hydrophobic_moment": tuple(np.round(np.arange(0.0, 3.01, 0.25), 10)),
    "net_charge": tuple(float(v) for v in range(-15, 16, 1)),
    "isoelectric_point": tuple(float(v) for v in range(0, 15, 1)),
}

_QUANTILES = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class DescriptorSummary:
    name: str
    mean: float
    std: float
    quantiles: tuple[float, ...]
    bin_edges: tuple[float, ...]
    counts: tuple[int, ...]


def property_summary(
    peptides: Sequence[Peptide],
    bin_edges: dict[str, tuple[float, ...]] | None = None,
    scale: ScaleTable = DEFAULT_SCALE,
) -> dict[str, DescriptorSummary]:
    """Mean/std/quantiles/histogram per descriptor.

    Values outside the configured edges land in the first or last bin so the
    counts always sum to the set size.
    """
    if not peptides:
        raise ValueError("cannot summarize an empty set")
    edges_map = dict(DEFAULT_BIN_EDGES)
    if bin_edges:
        edges_map.update(bin_edges)
    vectors = [descriptor_vector(pep, scale) for pep in peptides]
    out: dict[str, DescriptorSummary] = {}
    for name in DESCRIPTORS:
        values = np.array([float(getattr(v, name)) for v in vectors])
        edges = np.asarray(edges_map[name], dtype=np.float64)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError(f"bin edges for {name} must be strictly increasing with >= 2 entries")
        clipped = np.clip(values, edges[0], edges[-1])
        counts, _ = np.histogram(clipped, bins=edges)
        out[name] = DescriptorSummary(
            name=name,
            mean=float(values.mean()),
            std=float(values.std()),
            quantiles=tuple(float(q) for q in np.quantile(values, _QUANTILES)),
            bin_edges=tuple(float(e) for e in edges),
            counts=tuple(int(c) for c in counts),
        )
    return out


@dataclass(frozen=True)
class DistanceProfile:
    distances: tuple[float, ...]
    thresholds: tuple[float, ...]
    fractions: tuple[float, ...]
    mean: float


def embedding_distance_profile(
    generated: Sequence[Peptide],
    reference: Sequence[Peptide],
    embed: Callable[[str], np.ndarray],
    thresholds: tuple[float, ...] = (1.0, 3.0),
) -> DistanceProfile:
    """Nearest-reference Euclidean distance per generated peptide, plus the
    fraction of the set within each threshold."""
    if not generated or not reference:
        raise ValueError("both sets must be non-empty")
    gen = np.stack([np.asarray(embed(p.residues), dtype=np.float64) for p in generated])
    ref = np.stack([np.asarray(embed(p.residues), dtype=np.float64) for p in reference])
    if gen.shape[1] != ref.shape[1]:
        raise ValueError("embedding dimensions differ between sets")
    diff = gen[:, None, :] - ref[None, :, :]
    dists = np.sqrt(np.sum(diff * diff, axis=2)).min(axis=1)
    fractions = tuple(float(np.mean(dists <= t)) for t in thresholds)
    return DistanceProfile(
        distances=tuple(float(d) for d in dists),
        thresholds=tuple(float(t) for t in thresholds),
        fractions=fractions,
        mean=float(dists.mean()),
    )


def compare_sets(
    name: str,
    generated: Sequence[Peptide],
    reference: Sequence[Peptide],
    embed: Callable[[str], np.ndarray] | None = None,
    thresholds: tuple[float, ...] = (1.0, 3.0),
    jsd_base: float = 2.0,
    bin_edges: dict[str, tuple[float, ...]] | None = None,
    scale: ScaleTable = DEFAULT_SCALE,
) -> dict:
    """Comparison report: frequency divergence, correlation, descriptor
    summaries for both sets, and optional embedding-distance fractions."""
    freq_gen = aa_frequency(generated)
    freq_ref = aa_frequency(reference)
    report: dict = {
        "set": name,
        "n_generated": len(generated),
        "n_reference": len(reference),
        "jsd": js_divergence(freq_gen, freq_ref, base=jsd_base),
        "jsd_base": jsd_base,
        "pearson": pearson(freq_gen, freq_ref),
        "aa_frequency": {
            "generated": {ch: float(f) for ch, f in zip(RESIDUES, freq_gen)},
            "reference": {ch: float(f) for ch, f in zip(RESIDUES, freq_ref)},
        },
        "properties": {
            "generated": {k: _summary_dict(v) for k, v in property_summary(generated, bin_edges, scale).items()},
            "reference": {k: _summary_dict(v) for k, v in property_summary(reference, bin_edges, scale).items()},
        },
    }
    if embed is not None:
        profile = embedding_distance_profile(generated, reference, embed, thresholds)
        report["embedding_distance"] = {
            "mean": profile.mean,
            "fractions": {repr(t): f for t, f in zip(profile.thresholds, profile.fractions)},
        }
    return report


def _summary_dict(s: DescriptorSummary) -> dict:
    return {
        "mean": s.mean,
        "std": s.std,
        "quantiles": list(s.quantiles),
        "bin_edges": list(s.bin_edges),
        "counts": list(s.counts),
    }


def write_comparison_json(report: dict, sink: str | Path | IO[str]) -> None:
    _write_text(sink, json.dumps(report, sort_keys=True, indent=2) + "\n")


def write_comparison_tsv(report: dict, sink: str | Path | IO[str]) -> None:
    """Flat (set, metric, value) rows for the headline numbers."""
    rows = [("set", "metric", "value")]
    name = report["set"]

    def add(metric: str, value) -> None:
        rows.append((name, metric, "" if value is None else repr(float(value))))

    add("jsd", report["jsd"])
    add("pearson", report["pearson"])
    add("n_generated", report["n_generated"])
    add("n_reference", report["n_reference"])
    for side in ("generated", "reference"):
        for desc in DESCRIPTORS:
            stats = report["properties"][side][desc]
            add(f"{side}.{desc}.mean", stats["mean"])
            add(f"{side}.{desc}.std", stats["std"])
            add(f"{side}.{desc}.median", stats["quantiles"][2])
    if "embedding_distance" in report:
        add("embedding.mean_min_distance", report["embedding_distance"]["mean"])
        for t, f in sorted(report["embedding_distance"]["fractions"].items(), key=lambda kv: float(kv[0])):
            add(f"embedding.fraction_within_{t}", f)
    _write_text(sink, "\n".join("\t".join(r) for r in rows) + "\n")


def export_embeddings_tsv(
    peptides: Sequence[Peptide],
    embed: Callable[[str], np.ndarray],
    sink: str | Path | IO[str],
) -> None:
    """Raw embedding vectors, one row per peptide, for external projection."""
    if not peptides:
        raise ValueError("cannot export an empty set")
    first = np.asarray(embed(peptides[0].residues), dtype=np.float64)
    header = ["id"] + [f"e{i}" for i in range(first.size)]
    lines = ["\t".join(header)]
    for pep in peptides:
        vec = np.asarray(embed(pep.residues), dtype=np.float64)
        if vec.size != first.size:
            raise ValueError(f"embedding dimension changed at {pep.id!r}")
        lines.append("\t".join([pep.id] + [repr(float(v)) for v in vec]))
    _write_text(sink, "\n".join(lines) + "\n")
