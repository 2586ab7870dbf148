"""Connection-record ingestion: the 41-attribute KDD-Cup-99 layout, label
mapping into the four attack categories plus normal, stratified sampling,
and equal-frequency discretization for CPT-ready features."""

from __future__ import annotations

import gzip
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import KddFormatError, UnknownLabelError

#: the 41 per-connection attributes, in file order
FIELDS: tuple[tuple[str, str], ...] = (
    ("duration", "cont"),
    ("protocol_type", "cat"),
    ("service", "cat"),
    ("flag", "cat"),
    ("src_bytes", "cont"),
    ("dst_bytes", "cont"),
    ("land", "cat"),
    ("wrong_fragment", "cont"),
    ("urgent", "cont"),
    ("hot", "cont"),
    ("num_failed_logins", "cont"),
    ("logged_in", "cat"),
    ("num_compromised", "cont"),
    ("root_shell", "cont"),
    ("su_attempted", "cont"),
    ("num_root", "cont"),
    ("num_file_creations", "cont"),
    ("num_shells", "cont"),
    ("num_access_files", "cont"),
    ("num_outbound_cmds", "cont"),
    ("is_host_login", "cat"),
    ("is_guest_login", "cat"),
    ("count", "cont"),
    ("srv_count", "cont"),
    ("serror_rate", "cont"),
    ("srv_serror_rate", "cont"),
    ("rerror_rate", "cont"),
    ("srv_rerror_rate", "cont"),
    ("same_srv_rate", "cont"),
    ("diff_srv_rate", "cont"),
    ("srv_diff_host_rate", "cont"),
    ("dst_host_count", "cont"),
    ("dst_host_srv_count", "cont"),
    ("dst_host_same_srv_rate", "cont"),
    ("dst_host_diff_srv_rate", "cont"),
    ("dst_host_same_src_port_rate", "cont"),
    ("dst_host_srv_diff_host_rate", "cont"),
    ("dst_host_serror_rate", "cont"),
    ("dst_host_srv_serror_rate", "cont"),
    ("dst_host_rerror_rate", "cont"),
    ("dst_host_srv_rerror_rate", "cont"),
)

FIELD_NAMES = tuple(name for name, _kind in FIELDS)
CONTINUOUS = tuple(name for name, kind in FIELDS if kind == "cont")
CATEGORICAL = tuple(name for name, kind in FIELDS if kind == "cat")
_FIELD_INDEX = {name: i for i, name in enumerate(FIELD_NAMES)}

CATEGORIES = ("normal", "DoS", "R2L", "U2R", "probe")

#: raw label -> category; covers the 10% training labels plus the extra
#: test-set attack names
ATTACK_CATEGORY: dict[str, str] = {
    "normal": "normal",
    # denial of service
    "back": "DoS", "land": "DoS", "neptune": "DoS", "pod": "DoS",
    "smurf": "DoS", "teardrop": "DoS", "apache2": "DoS", "mailbomb": "DoS",
    "processtable": "DoS", "udpstorm": "DoS",
    # remote to local
    "ftp_write": "R2L", "guess_passwd": "R2L", "imap": "R2L",
    "multihop": "R2L", "phf": "R2L", "spy": "R2L", "warezclient": "R2L",
    "warezmaster": "R2L", "named": "R2L", "sendmail": "R2L",
    "snmpgetattack": "R2L", "snmpguess": "R2L", "worm": "R2L",
    "xlock": "R2L", "xsnoop": "R2L",
    # user to root
    "buffer_overflow": "U2R", "loadmodule": "U2R", "perl": "U2R",
    "rootkit": "U2R", "httptunnel": "U2R", "ps": "U2R",
    "sqlattack": "U2R", "xterm": "U2R",
    # probing
    "ipsweep": "probe", "nmap": "probe", "portsweep": "probe",
    "satan": "probe", "mscan": "probe", "saint": "probe",
}


@dataclass
class ConnectionRecord:
    """One parsed connection: 41 raw attribute strings plus its labels."""

    values: tuple[str, ...]
    label: str
    category: str

    def __getitem__(self, field: str) -> str:
        return self.values[_FIELD_INDEX[field]]

    def numeric(self, field: str) -> float:
        return float(self[field])


def parse_line(line: str, lineno: int = 0) -> ConnectionRecord:
    parts = line.strip().split(",")
    if len(parts) != len(FIELDS) + 1:
        raise KddFormatError(
            f"line {lineno}: expected {len(FIELDS) + 1} fields, got {len(parts)}"
        )
    label = parts[-1].rstrip(".")
    category = ATTACK_CATEGORY.get(label)
    if category is None:
        raise UnknownLabelError(f"line {lineno}: unknown label '{label}'")
    return ConnectionRecord(tuple(parts[:-1]), label, category)


def read_records(path) -> list[ConnectionRecord]:
    """Parse a comma-separated connection file; `.gz` input is accepted."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    records = []
    with opener(path, "rt", encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            records.append(parse_line(line, lineno))
    return records


def stratified_sample(
    records: Sequence[ConnectionRecord], size: int, seed: int
) -> list[ConnectionRecord]:
    """Per-category proportional sample, seeded and order-preserving.

    Sizes are apportioned with largest remainders so category counts come
    out proportional to the source frequencies within one record; a request
    for the full corpus returns it unchanged.
    """
    if size >= len(records):
        return list(records)
    by_cat: dict[str, list[int]] = {}
    for i, rec in enumerate(records):
        by_cat.setdefault(rec.category, []).append(i)
    cats = sorted(by_cat)
    total = len(records)
    quotas = {c: size * len(by_cat[c]) / total for c in cats}
    counts = {c: int(quotas[c]) for c in cats}
    leftover = size - sum(counts.values())
    for c in sorted(cats, key=lambda c: (counts[c] - quotas[c], c))[:leftover]:
        counts[c] += 1
    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    for c in cats:
        take = min(counts[c], len(by_cat[c]))
        idx = rng.choice(len(by_cat[c]), size=take, replace=False)
        chosen.extend(by_cat[c][i] for i in idx)
    chosen.sort()
    return [records[i] for i in chosen]


def category_counts(records: Iterable[ConnectionRecord]) -> dict[str, int]:
    out: dict[str, int] = {}
    for rec in records:
        out[rec.category] = out.get(rec.category, 0) + 1
    return out


OTHER = "__other__"


class Discretizer:
    """Equal-frequency bins for continuous attributes, passthrough maps for
    categorical ones. Deterministic given the training records; values
    outside the fitted range clamp into the edge bins, unseen categorical
    values map to a reserved state."""

    def __init__(self, boundaries: dict[str, list[float]],
                 categories: dict[str, list[str]]):
        self.boundaries = boundaries
        self.categories = categories

    @classmethod
    def fit(cls, records: Sequence[ConnectionRecord], k: int = 5,
            fields: Sequence[str] | None = None) -> "Discretizer":
        if k < 1:
            raise ValueError("bin count k must be at least 1")
        fields = list(fields) if fields is not None else list(FIELD_NAMES)
        boundaries: dict[str, list[float]] = {}
        categories: dict[str, list[str]] = {}
        for name in fields:
            kind = dict(FIELDS)[name]
            if kind == "cont":
                values = np.array([rec.numeric(name) for rec in records])
                qs = np.quantile(values, [i / k for i in range(1, k)])
                cuts: list[float] = []
                for q in qs:
                    q = float(q)
                    if not cuts or q > cuts[-1]:
                        cuts.append(q)
                boundaries[name] = cuts
            else:
                categories[name] = sorted({rec[name] for rec in records})
        return cls(boundaries, categories)

    def states(self, field: str) -> tuple[str, ...]:
        if field in self.boundaries:
            return tuple(f"b{i}" for i in range(len(self.boundaries[field]) + 1))
        return tuple(self.categories[field]) + (OTHER,)

    def transform_value(self, field: str, raw: str) -> str:
        if field in self.boundaries:
            # bins are upper-inclusive: (-inf, c1], (c1, c2], ..., (ck, inf)
            idx = int(np.searchsorted(self.boundaries[field], float(raw),
                                      side="left"))
            return f"b{idx}"
        return raw if raw in self.categories[field] else OTHER

    def transform(self, record: ConnectionRecord,
                  fields: Sequence[str] | None = None) -> dict[str, str]:
        fields = fields or (list(self.boundaries) + list(self.categories))
        return {f: self.transform_value(f, record[f]) for f in fields}
