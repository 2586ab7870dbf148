"""Synthetic connection-record generator.

Produces KDD-style 41-attribute lines with realistic per-attack signatures
(SYN-flood, echo-flood, fragment attacks, port/address sweeps, password
guessing, warez transfers, overflow escalations) at roughly the skewed
category mix of the original capture. Used for the bundled 2k-record
fixture, demos, and anywhere the real capture is not available.
"""

from __future__ import annotations

import gzip
from pathlib import Path

import numpy as np

from .kdd import FIELD_NAMES

CATEGORY_MIX = (
    ("DoS", 0.55),
    ("normal", 0.30),
    ("probe", 0.08),
    ("R2L", 0.05),
    ("U2R", 0.02),
)

_RATES = {name for name in FIELD_NAMES if name.endswith("_rate")}


def _blank() -> dict[str, object]:
    rec = {name: 0 for name in FIELD_NAMES}
    rec.update(
        protocol_type="tcp", service="http", flag="SF",
        dst_host_count=255, dst_host_srv_count=255,
        dst_host_same_srv_rate=1.0, same_srv_rate=1.0,
    )
    return rec


def _pick(rng, options, weights):
    return options[int(rng.choice(len(options), p=np.array(weights) / sum(weights)))]


def _normal(rng):
    rec = _blank()
    rec["protocol_type"] = _pick(rng, ("tcp", "udp", "icmp"), (0.75, 0.2, 0.05))
    rec["service"] = _pick(
        rng, ("http", "smtp", "domain_u", "ftp_data", "private"),
        (0.5, 0.15, 0.15, 0.1, 0.1),
    )
    rejected = rng.random() < 0.08
    rec["flag"] = "REJ" if rejected else "SF"
    rec["duration"] = 0 if rng.random() < 0.7 else int(rng.exponential(30))
    rec["src_bytes"] = 0 if rejected else int(rng.lognormal(5.5, 1.0))
    rec["dst_bytes"] = 0 if rejected or rng.random() < 0.1 else int(
        rng.lognormal(6.5, 1.2))
    rec["logged_in"] = 0 if rejected or rng.random() > 0.75 else 1
    rec["count"] = int(rng.integers(1, 16))
    rec["srv_count"] = max(1, int(rec["count"] * rng.uniform(0.5, 1.0)))
    rec["same_srv_rate"] = round(rng.uniform(0.9, 1.0), 2)
    rec["diff_srv_rate"] = round(rng.uniform(0.0, 0.1), 2)
    rec["dst_host_count"] = int(rng.integers(5, 256))
    rec["dst_host_srv_count"] = int(rng.integers(5, 256))
    rec["dst_host_same_srv_rate"] = round(rng.uniform(0.7, 1.0), 2)
    return rec, "normal"


def _dos(rng):
    rec = _blank()
    kind = _pick(rng, ("neptune", "smurf", "teardrop"), (0.55, 0.4, 0.05))
    if kind == "neptune":
        rec.update(
            protocol_type="tcp", service="private", flag="S0",
            logged_in=0, count=int(rng.integers(100, 512)),
            srv_count=int(rng.integers(1, 20)),
            serror_rate=1.0, srv_serror_rate=1.0,
            same_srv_rate=round(rng.uniform(0.0, 0.1), 2),
            diff_srv_rate=round(rng.uniform(0.05, 0.1), 2),
            dst_host_serror_rate=1.0, dst_host_srv_serror_rate=1.0,
            dst_host_same_srv_rate=round(rng.uniform(0.0, 0.1), 2),
        )
    elif kind == "smurf":
        count = int(rng.integers(350, 512))
        rec.update(
            protocol_type="icmp", service="ecr_i", flag="SF",
            src_bytes=1032, count=count, srv_count=count,
            same_srv_rate=1.0, dst_host_same_srv_rate=1.0,
        )
    else:
        rec.update(
            protocol_type="udp", service="private", flag="SF",
            src_bytes=28, wrong_fragment=int(rng.integers(1, 4)),
            count=int(rng.integers(50, 200)),
            srv_count=int(rng.integers(50, 200)),
        )
    return rec, kind


def _probe(rng):
    rec = _blank()
    kind = _pick(rng, ("portsweep", "ipsweep"), (0.5, 0.5))
    if kind == "portsweep":
        # scans range from noisy to stealthy; stealthy ones blend into
        # ordinary rejected traffic
        stealth = rng.random() < 0.5
        rec.update(
            protocol_type="tcp",
            service=_pick(rng, ("private", "http", "smtp"), (0.5, 0.3, 0.2)),
            flag="REJ",
            src_bytes=0, dst_bytes=0, logged_in=0,
            count=int(rng.integers(1, 8)), srv_count=1,
            rerror_rate=1.0, srv_rerror_rate=1.0,
            same_srv_rate=round(rng.uniform(0.0, 0.3), 2),
            diff_srv_rate=round(rng.uniform(0.0, 0.12), 2),
            dst_host_count=(
                int(rng.integers(1, 120)) if stealth else 255
            ),
            dst_host_srv_count=int(rng.integers(1, 30)),
            dst_host_rerror_rate=1.0,
            dst_host_diff_srv_rate=round(rng.uniform(0.3, 0.7), 2),
            dst_host_same_srv_rate=round(rng.uniform(0.1, 0.5), 2),
        )
    else:
        stealth = rng.random() < 0.5
        rec.update(
            protocol_type="icmp", service="eco_i", flag="SF",
            src_bytes=int(rng.integers(8, 21)), logged_in=0,
            count=int(rng.integers(1, 4)), srv_count=int(rng.integers(1, 4)),
            dst_host_count=(
                int(rng.integers(1, 60)) if stealth else 255
            ),
            dst_host_srv_count=int(rng.integers(1, 60)),
            dst_host_same_srv_rate=round(rng.uniform(0.2, 0.6), 2),
            dst_host_srv_diff_host_rate=round(rng.uniform(0.3, 0.9), 2),
        )
    return rec, kind


def _r2l(rng):
    rec = _blank()
    kind = _pick(rng, ("guess_passwd", "warezclient"), (0.7, 0.3))
    if kind == "guess_passwd":
        rec.update(
            protocol_type="tcp", service="telnet", flag="RSTO",
            duration=int(rng.integers(1, 6)),
            src_bytes=int(rng.integers(100, 150)),
            dst_bytes=int(rng.integers(150, 260)),
            num_failed_logins=int(rng.integers(1, 6)), logged_in=0,
            count=1, srv_count=1,
            dst_host_count=int(rng.integers(1, 30)),
            dst_host_srv_count=int(rng.integers(1, 10)),
            dst_host_same_srv_rate=round(rng.uniform(0.0, 0.3), 2),
        )
    else:
        rec.update(
            protocol_type="tcp", service="ftp", flag="SF",
            duration=int(rng.integers(100, 2000)),
            src_bytes=int(rng.lognormal(9.0, 1.0)),
            dst_bytes=int(rng.integers(0, 400)),
            hot=int(rng.integers(1, 5)), logged_in=1,
            is_guest_login=1, count=int(rng.integers(1, 5)),
            srv_count=int(rng.integers(1, 5)),
            dst_host_count=int(rng.integers(1, 60)),
        )
    return rec, kind


def _u2r(rng):
    rec = _blank()
    kind = _pick(rng, ("buffer_overflow", "rootkit"), (0.7, 0.3))
    rec.update(
        protocol_type="tcp", service="telnet", flag="SF",
        duration=int(rng.integers(60, 900)),
        src_bytes=int(rng.integers(1000, 6000)),
        dst_bytes=int(rng.integers(300, 2500)),
        logged_in=1, root_shell=1,
        num_root=int(rng.integers(1, 5)),
        num_file_creations=int(rng.integers(0, 3)),
        hot=int(rng.integers(1, 4)),
        count=1, srv_count=1,
        dst_host_count=int(rng.integers(1, 30)),
    )
    if kind == "rootkit":
        rec["num_root"] = int(rng.integers(3, 8))
        rec["service"] = _pick(rng, ("telnet", "ftp_data"), (0.6, 0.4))
    return rec, kind


_MAKERS = {
    "normal": _normal, "DoS": _dos, "probe": _probe, "R2L": _r2l, "U2R": _u2r,
}


def _format(rec: dict[str, object], label: str) -> str:
    parts = []
    for name in FIELD_NAMES:
        v = rec[name]
        if name in _RATES:
            parts.append(f"{float(v):.2f}")
        else:
            parts.append(str(v))
    return ",".join(parts) + f",{label}."


def synth_lines(n: int, seed: int = 7) -> list[str]:
    """Deterministic KDD-format lines with the configured category mix."""
    rng = np.random.default_rng(seed)
    counts = {c: int(round(n * w)) for c, w in CATEGORY_MIX}
    drift = n - sum(counts.values())
    counts["DoS"] += drift
    lines = []
    for cat, _w in CATEGORY_MIX:
        for _ in range(counts[cat]):
            rec, label = _MAKERS[cat](rng)
            lines.append(_format(rec, label))
    order = np.random.default_rng(seed + 1).permutation(len(lines))
    return [lines[i] for i in order]


def write_fixture(path, n: int = 2000, seed: int = 7) -> None:
    """Write a gzip fixture with stable bytes (no embedded mtime)."""
    data = ("\n".join(synth_lines(n, seed)) + "\n").encode()
    path = Path(path)
    with open(path, "wb") as raw:
        with gzip.GzipFile(fileobj=raw, mode="wb", filename="", mtime=0) as gz:
            gz.write(data)
