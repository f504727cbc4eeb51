"""Dataset curation: length filtering, similarity clustering, cluster-aware
splits, and stratified class balancing.

Clustering uses exact global-alignment identity with a greedy longest-first
assignment, so splits never share near-duplicate sequences. External cluster
assignments can be ingested to reproduce runs made with other tools.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Sequence

from . import rng as _rng
from .alignment import identity_global
from .mic import LabeledSet
from .sequences import Peptide, _write_text


@dataclass
class Cluster:
    representative: Peptide
    members: list[Peptide] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not any(m is self.representative for m in self.members):
            raise ValueError("representative must be one of the members")

    def __len__(self) -> int:
        return len(self.members)


def length_filter(peptides: Sequence[Peptide], min_len: int = 8, max_len: int = 50) -> tuple[list[Peptide], list[Peptide]]:
    """Partition into (kept, rejected) by inclusive length bounds."""
    if min_len > max_len:
        raise ValueError(f"min_len {min_len} exceeds max_len {max_len}")
    kept: list[Peptide] = []
    rejected: list[Peptide] = []
    for pep in peptides:
        (kept if min_len <= len(pep) <= max_len else rejected).append(pep)
    return kept, rejected


def _greedy_order(peptides: Sequence[Peptide]) -> list[Peptide]:
    return sorted(peptides, key=lambda p: (-len(p), p.residues, p.id))


def greedy_cluster(peptides: Sequence[Peptide], identity_threshold: float = 0.40) -> list[Cluster]:
    """Longest-first greedy clustering on global-alignment identity.

    Each peptide joins the first existing cluster whose representative it
    matches at or above the threshold, else it founds a new cluster. The
    ordering (length descending, then sequence, then id) makes the result
    independent of input order.
    """
    if not 0.0 < identity_threshold <= 1.0:
        raise ValueError("identity threshold must lie in (0,1]")
    clusters: list[Cluster] = []
    for pep in _greedy_order(peptides):
        home = None
        for cluster in clusters:
            if pep.residues == cluster.representative.residues:
                home = cluster
                break
            if identity_global(pep.residues, cluster.representative.residues) >= identity_threshold:
                home = cluster
                break
        if home is None:
            clusters.append(Cluster(representative=pep, members=[pep]))
        else:
            home.members.append(pep)
    return clusters


def split_by_cluster(
    clusters: Sequence[Cluster],
    fractions: tuple[float, ...] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[list[Peptide], ...]:
    """Assign whole clusters to splits by seeded shuffle plus greedy fill.

    Each cluster goes to the split with the largest remaining member
    deficit, so realized counts track the fraction targets to within the
    largest cluster size. Clusters never straddle splits.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    if any(f < 0 for f in fractions):
        raise ValueError("split fractions must be non-negative")
    nonempty = sum(1 for f in fractions if f > 0)
    if len(clusters) < nonempty:
        raise ValueError(f"{len(clusters)} clusters cannot fill {nonempty} non-empty splits")
    total = sum(len(c) for c in clusters)
    targets = [f * total for f in fractions]
    order = list(range(len(clusters)))
    _rng.substream(seed, "dataprep.split").shuffle(order)
    counts = [0] * len(fractions)
    assignment: list[list[Cluster]] = [[] for _ in fractions]
    for idx in order:
        cluster = clusters[idx]
        deficits = [(targets[k] - counts[k], -k) for k in range(len(fractions))]
        k = -max(deficits)[1]
        assignment[k].append(cluster)
        counts[k] += len(cluster)
    splits = tuple([pep for cluster in part for pep in cluster.members] for part in assignment)
    for k, f in enumerate(fractions):
        if f > 0 and not splits[k]:
            raise ValueError(f"split {k} received no members; too few clusters for fractions {fractions}")
    return splits


def balance(positives: Sequence[Peptide], negatives: Sequence[Peptide], seed: int = 0) -> LabeledSet:
    """Downsample the majority class within 5-residue length bins.

    Bins with one class absent are dropped entirely (with a warning) so the
    output has an exact 1:1 class ratio in every retained bin.
    """
    if not positives or not negatives:
        raise ValueError("both classes must be non-empty")
    bins: dict[int, tuple[list[Peptide], list[Peptide]]] = {}
    for pep in positives:
        bins.setdefault(len(pep) // 5, ([], []))[0].append(pep)
    for pep in negatives:
        bins.setdefault(len(pep) // 5, ([], []))[1].append(pep)
    gen = _rng.substream(seed, "dataprep.balance")
    items: list[tuple[Peptide, int]] = []
    for b in sorted(bins):
        pos, neg = bins[b]
        if not pos or not neg:
            lo, hi = 5 * b, 5 * b + 4
            warnings.warn(f"length bin {lo}-{hi} has a single class; dropped", stacklevel=2)
            continue
        n = min(len(pos), len(neg))
        for group, label in ((pos, 1), (neg, 0)):
            chosen = group
            if len(group) > n:
                picks = gen.choice(len(group), size=n, replace=False)
                chosen = [group[int(i)] for i in sorted(picks)]
            items.extend((pep, label) for pep in chosen)
    if not items:
        raise ValueError("no length bin contains both classes")
    return LabeledSet(items=items, split="balanced")


def read_cluster_assignments(stream: str | Path | IO[str], peptides: Sequence[Peptide]) -> list[Cluster]:
    """Ingest an external (sequence_id, cluster_id) TSV as Cluster objects.

    Every peptide must appear exactly once; representatives are the longest
    member of each cluster (ties broken lexicographically by sequence).
    """
    if isinstance(stream, (str, Path)):
        text = Path(stream).read_text()
    else:
        text = stream.read()
    by_id = {pep.id: pep for pep in peptides}
    if len(by_id) != len(peptides):
        raise ValueError("peptide ids must be unique for cluster ingestion")
    groups: dict[str, list[Peptide]] = {}
    seen: set[str] = set()
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 2:
            raise ValueError(f"line {n}: expected sequence_id<TAB>cluster_id, got {line!r}")
        seq_id, cluster_id = parts
        if seq_id not in by_id:
            raise ValueError(f"line {n}: unknown sequence id {seq_id!r}")
        if seq_id in seen:
            raise ValueError(f"line {n}: duplicate assignment for {seq_id!r}")
        seen.add(seq_id)
        groups.setdefault(cluster_id, []).append(by_id[seq_id])
    missing = sorted(set(by_id) - seen)
    if missing:
        raise ValueError(f"peptides missing a cluster assignment: {', '.join(missing[:5])}")
    clusters = []
    for cluster_id in sorted(groups):
        members = groups[cluster_id]
        rep = min(members, key=lambda p: (-len(p), p.residues, p.id))
        clusters.append(Cluster(representative=rep, members=members))
    return clusters


def write_split_manifest(
    sink: str | Path | IO[str],
    split_names: Sequence[str],
    splits: Sequence[Sequence[Peptide]],
    fractions: tuple[float, ...],
    seed: int,
) -> None:
    if len(split_names) != len(splits) or len(splits) != len(fractions):
        raise ValueError("split names, splits, and fractions must align")
    payload = {
        "seed": seed,
        "fractions": list(fractions),
        "splits": {
            name: {"count": len(part), "ids": [pep.id for pep in part]}
            for name, part in zip(split_names, splits)
        },
    }
    _write_text(sink, json.dumps(payload, sort_keys=True, indent=2) + "\n")
