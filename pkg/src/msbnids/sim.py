"""Deterministic multi-agent intrusion-detection simulator.

Hosts run agents over an in-process message bus: system-monitoring agents
discretize and route connection features per subscription, intrusion-
monitoring agents hold one subnet of the sectioned model each and query the
class posterior, a registry mediates discovery, and per-host trust managers
exchange heartbeats and run agreement rounds that isolate compromised hosts.

Everything is driven by a single event loop (one connection record per
event) in id order, so a (config, seed) pair fully determines every alert,
verdict, and metric.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .bayes import Variable, fit_cpts
from .errors import ModelFormatError
from .kdd import (
    CATEGORIES,
    FIELD_NAMES,
    ConnectionRecord,
    Discretizer,
    read_records,
    stratified_sample,
)
from .modelio import msbn_to_dict
from .msbn import LinkedJunctionForest, Msbn, Subnet, compile_ljf
from .trust import (
    Claim,
    KeyedHashSigner,
    Order,
    PeerTrafficSample,
    SignedProof,
    TrustDomain,
    belief_is_malformed,
    detect_local_compromise,
    run_dtm_round,
)

CLASS_VAR = "category"

#: default 3-subnet sectioning by feature group
FEATURE_GROUPS: dict[str, tuple[str, ...]] = {
    "content": tuple(FIELD_NAMES[0:22]),
    "traffic": tuple(FIELD_NAMES[22:31]),
    "host": tuple(FIELD_NAMES[31:41]),
}

#: published reference operating points, printed next to benchmark results
REFERENCE_RATES = {
    "DoS": {"detection_rate_pct": 98.25, "false_positive_pct": 10.25},
    "R2L": {"detection_rate_pct": 7.31, "false_positive_pct": 12.43},
    "U2R": {"detection_rate_pct": 86.42, "false_positive_pct": 10.57},
    "probe": {"detection_rate_pct": 94.28, "false_positive_pct": 11.87},
    "normal": {"detection_rate_pct": 97.80, "false_positive_pct": 7.31},
}


def build_model(
    records: Sequence[ConnectionRecord],
    structure: Mapping | None = None,
    k_bins: int = 5,
    groups: Mapping[str, Sequence[str]] | None = None,
    alpha: float = 1.0,
    class_states: Sequence[str] | None = None,
) -> tuple[Msbn, Discretizer]:
    """Fit the class-to-feature model on records and section it by group.

    The class variable points at every feature; each feature group becomes
    one subnet sharing only the class variable, so every interface is the
    single-node d-sepset {category}.
    """
    structure = dict(structure or {})
    groups = {k: tuple(v) for k, v in (groups or structure.get(
        "groups", FEATURE_GROUPS)).items()}
    features = [f for g in sorted(groups) for f in groups[g]]
    if len(set(features)) != len(features):
        raise ModelFormatError("feature groups overlap")
    if class_states is None:
        class_states = structure.get("class_states") or [
            c for c in CATEGORIES if any(r.category == c for r in records)
        ]
    disc = Discretizer.fit(records, k=k_bins, fields=features)
    # single-state features are constants with no probabilistic content;
    # dropping them keeps degenerate binnings (k=1) compilable
    groups = {
        g: tuple(f for f in fs if len(disc.states(f)) >= 2)
        for g, fs in groups.items()
    }
    features = [f for g in sorted(groups) for f in groups[g]]
    variables = [Variable(CLASS_VAR, tuple(class_states))]
    variables += [Variable(f, disc.states(f)) for f in features]
    edges = [(CLASS_VAR, f) for f in features]
    assignments = []
    for rec in records:
        row = disc.transform(rec, features)
        row[CLASS_VAR] = rec.category
        assignments.append(row)
    net = fit_cpts(variables, edges, assignments, alpha=alpha)
    owner = sorted(groups)[0]
    subnets = tuple(
        Subnet(
            g,
            (CLASS_VAR,) + groups[g],
            frozenset(groups[g]) | ({CLASS_VAR} if g == owner else frozenset()),
        )
        for g in sorted(groups)
    )
    ids = sorted(groups)
    links = tuple((ids[i], ids[i + 1]) for i in range(len(ids) - 1))
    return Msbn(net, subnets, links), disc


# --------------------------------------------------------------------------
# agents, bus, world


MESSAGE_KINDS = (
    "register", "locate-query", "locate-reply", "belief-subscribe",
    "belief-update", "heartbeat", "trust-claim",
)


@dataclass(frozen=True)
class AgentSpec:
    id: str
    role: str                      # system-monitoring | intrusion-monitoring | registry | dtm
    host: int
    subnet: str | None = None
    monitored: tuple[str, ...] = ()
    theta: float = 0.5


@dataclass
class AgentMessage:
    kind: str
    sender: str
    recipient: str
    payload: object
    signature: str | None = None


@dataclass
class Alert:
    kind: str                      # known-attack | anomaly
    category: str | None
    posterior: float
    event: int
    agent: str
    disposition: str = "pending"

    def to_json(self) -> str:
        return json.dumps(
            {
                "event": self.event, "kind": self.kind,
                "category": self.category,
                "posterior": round(self.posterior, 9),
                "agent": self.agent, "disposition": self.disposition,
            },
            sort_keys=True,
        )


@dataclass
class RunConfig:
    dataset: str
    sample_size: int = 2000
    seed: int = 1
    k_bins: int = 5
    theta: float = 0.5
    communicate_every: int = 25
    dtm_every: int = 100
    heartbeat_timeout: int = 3
    alert_policy: str = "auto-reject"
    refit_quorum: int = 50
    train_fraction: float = 2 / 3
    structure: str | None = None
    duplicates: dict[str, list[int]] = field(default_factory=dict)
    servers: dict[str, list[int]] | None = None
    injections: list[dict] = field(default_factory=list)
    hold_out: str | None = None

    @classmethod
    def from_dict(cls, doc: Mapping) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ModelFormatError(f"unknown config keys {sorted(extra)}")
        if "dataset" not in doc:
            raise ModelFormatError("config is missing 'dataset'")
        return cls(**{k: doc[k] for k in doc})

    def digest_source(self) -> dict:
        return {k: getattr(self, k) for k in sorted(self.__dataclass_fields__)}


def load_run_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"cannot load config '{path}': {exc}") from None
    return RunConfig.from_dict(doc)


class MessageBus:
    """Synchronous in-process delivery with a full deterministic log."""

    def __init__(self, signer: KeyedHashSigner):
        self.signer = signer
        self.log: list[AgentMessage] = []
        self.counts: dict[str, int] = {k: 0 for k in MESSAGE_KINDS}

    def send(self, msg: AgentMessage, sender_host: int, recipient_host: int):
        if msg.kind not in MESSAGE_KINDS:
            raise ValueError(f"unknown message kind '{msg.kind}'")
        if sender_host != recipient_host:
            msg.signature = self.signer.sign(
                sender_host, repr((msg.kind, msg.sender, msg.recipient)).encode()
            )
        self.counts[msg.kind] += 1
        self.log.append(msg)


class World:
    """One simulation universe: model, agents, trust domain, event loop."""

    def __init__(self, msbn: Msbn, disc: Discretizer,
                 records: Sequence[ConnectionRecord], config: RunConfig,
                 train_records: Sequence[ConnectionRecord] = ()):
        self.config = config
        self.msbn = msbn
        self.disc = disc
        self.records = list(records)
        self.train_records = list(train_records)
        self.ljf: LinkedJunctionForest = compile_ljf(msbn)
        self.class_states = list(msbn.net.variable(CLASS_VAR).states)

        subnet_ids = sorted(s.id for s in msbn.subnets)
        self.servers: dict[str, list[int]] = {}
        self.hosts: list[int] = [0]
        if config.servers is not None:
            if set(config.servers) != set(subnet_ids):
                raise ModelFormatError(
                    "config servers must cover exactly the subnets "
                    f"{subnet_ids}"
                )
            for sid in subnet_ids:
                self.servers[sid] = [int(h) for h in config.servers[sid]]
        else:
            nxt = 1
            for sid in subnet_ids:
                self.servers[sid] = [nxt]
                nxt += 1
        for sid, extra in sorted(config.duplicates.items()):
            for h in extra:
                h = int(h)
                if h not in self.servers[sid]:
                    self.servers[sid].append(h)
        for hs in self.servers.values():
            for h in hs:
                if h not in self.hosts:
                    self.hosts.append(h)
        self.hosts.sort()
        self.domain = TrustDomain(tuple(self.hosts), policy="ids-domain")
        self.bus = MessageBus(self.domain.signer)

        self.agents: dict[str, AgentSpec] = {}
        self._register_agents(subnet_ids)
        self._locate_cache: dict[tuple[str, str], str] = {}
        self._subscribers: dict[str, list[str]] = {}
        self._wire_subscriptions()

        self.t = 0
        self.alerts: list[Alert] = []
        self.decisions: list[tuple[int, str, str | None, str | None]] = []
        self.posterior_log: list[tuple[int, str, tuple[float, ...]]] = []
        self.compromised: dict[int, str] = {}
        self.isolated: set[int] = set()
        self.last_heard: dict[int, int] = {h: -1 for h in self.hosts}
        self.sig_failures: dict[tuple[int, int], int] = {}
        self.bad_beliefs: dict[tuple[int, int], SignedProof] = {}
        self.pending_novel: dict[str, list[ConnectionRecord]] = {}
        self.dtm_rounds: list = []
        self.undecidable_rounds: int = 0

    # -- wiring ------------------------------------------------------------

    def _register_agents(self, subnet_ids):
        registry = AgentSpec("registry", "registry", 0)
        self.agents[registry.id] = registry
        for h in self.hosts:
            spec = AgentSpec(f"dtm{h}", "dtm", h)
            self.agents[spec.id] = spec
        for sid in subnet_ids:
            features = tuple(
                v for v in self.msbn.by_id[sid].variables if v != CLASS_VAR
            )
            primary = self.servers[sid][0]
            mon = AgentSpec(f"mon-{sid}", "system-monitoring", primary,
                            subnet=sid, monitored=features)
            self.agents[mon.id] = mon
            self._bus_send(mon, registry, "register",
                           {"monitored": list(features)})
            for host in self.servers[sid]:
                spec = AgentSpec(f"ids-{sid}-{host}", "intrusion-monitoring",
                                 host, subnet=sid, monitored=features,
                                 theta=self.config.theta)
                self.agents[spec.id] = spec

    def _bus_send(self, frm: AgentSpec, to: AgentSpec, kind: str, payload):
        self.bus.send(AgentMessage(kind, frm.id, to.id, payload),
                      frm.host, to.host)

    def _wire_subscriptions(self):
        registry = self.agents["registry"]
        monitors = {
            spec.subnet: spec for spec in self.agents.values()
            if spec.role == "system-monitoring"
        }
        for spec in sorted(self.agents.values(), key=lambda s: s.id):
            if spec.role != "intrusion-monitoring":
                continue
            for var in spec.monitored:
                key = (spec.id, var)
                if key not in self._locate_cache:
                    self._bus_send(spec, registry, "locate-query", var)
                    producer = monitors[spec.subnet]
                    self._bus_send(registry, spec, "locate-reply", producer.id)
                    self._locate_cache[key] = producer.id
                producer_id = self._locate_cache[key]
                if spec.id not in self._subscribers.setdefault(producer_id, []):
                    self._bus_send(spec, self.agents[producer_id],
                                   "belief-subscribe", var)
                    self._subscribers[producer_id].append(spec.id)
        for subs in self._subscribers.values():
            subs.sort()

    # -- compromise and trust ---------------------------------------------

    def inject_compromise(self, host: int, strategy: str) -> "World":
        if strategy not in ("corrupt-beliefs", "equivocate-trust", "silent"):
            raise ValueError(f"unknown compromise strategy '{strategy}'")
        if host not in self.hosts:
            raise ValueError(f"host {host} is not part of this world")
        self.compromised[host] = strategy
        return self

    def _active_servers(self, sid: str) -> list[int]:
        return [h for h in self.servers[sid] if h not in self.isolated]

    def _communicate(self):
        def transform(src: str, dst: str, values: np.ndarray):
            receivers = self._active_servers(dst)
            receiver = receivers[0] if receivers else None
            for producer in self._active_servers(src):
                strategy = self.compromised.get(producer)
                if strategy == "silent":
                    continue
                if strategy == "corrupt-beliefs":
                    bad = values.copy()
                    bad.flat[0] = -abs(float(bad.flat[0])) - 0.25
                    payload = np.asarray(bad, dtype=float).tobytes()
                    proof = SignedProof(
                        producer, payload,
                        self.domain.signer.sign(producer, payload),
                        "malformed-belief",
                    )
                    if receiver is not None and belief_is_malformed(bad):
                        self.bad_beliefs[(receiver, producer)] = proof
                    continue
                if receiver is not None:
                    self._bus_send(
                        self.agents[f"ids-{src}-{producer}"],
                        self.agents[f"ids-{dst}-{receiver}"],
                        "belief-update", {"linkage": [src, dst]},
                    )
                return values
            return None

        self.ljf.communicate(transform=transform)

    def _heartbeats(self):
        for h in self.hosts:
            if h in self.isolated:
                continue
            if self.compromised.get(h) == "silent":
                continue
            self.last_heard[h] = self.t
            self.bus.counts["heartbeat"] += len(self.hosts) - 1

    def _dtm_round(self):
        active = [h for h in self.hosts if h not in self.isolated]
        behaviors: dict[int, str | None] = {}
        for h in active:
            strategy = self.compromised.get(h)
            if strategy == "equivocate-trust":
                behaviors[h] = "equivocate"
            elif strategy == "silent":
                behaviors[h] = "silent"
        loyal = [h for h in active if self.compromised.get(h) is None]
        if 2 * len(loyal) <= len(active):
            self.undecidable_rounds += 1
            return
        observations: dict[int, dict[int, Claim]] = {}
        for o in active:
            if self.compromised.get(o) is not None:
                continue
            observations[o] = {}
            for s in active:
                if s == o:
                    continue
                proof = self.bad_beliefs.get((o, s))
                sample = PeerTrafficSample(
                    peer=s,
                    signature_failures=self.sig_failures.get((o, s), 0),
                    silent_rounds=self.t - self.last_heard[s],
                    timeout=self.config.heartbeat_timeout,
                    belief=(
                        np.frombuffer(proof.payload, dtype=float)
                        if proof is not None else None
                    ),
                    belief_proof=proof,
                )
                observations[o][s] = detect_local_compromise(sample)
        result = run_dtm_round(
            self.domain, observations, behaviors,
            round_index=len(self.dtm_rounds),
        )
        self.dtm_rounds.append(result)
        self.bus.counts["trust-claim"] += result.message_count
        if result.undecidable:
            self.undecidable_rounds += 1
            return
        for h in result.newly_isolated:
            self.isolated.add(h)

    # -- knowledgebase update ----------------------------------------------

    def model_digest(self) -> str:
        doc = json.dumps(msbn_to_dict(self.msbn), sort_keys=True)
        return hashlib.sha256(doc.encode()).hexdigest()

    def dispose_alert(self, alert: Alert, record: ConnectionRecord,
                      confirm: Callable[[Alert], bool] | None = None) -> str:
        """Apply the triage policy; confirmed anomalies feed the refit path."""
        if alert.kind != "anomaly":
            alert.disposition = "confirmed"
            return alert.disposition
        policy = self.config.alert_policy
        if confirm is not None:
            confirmed = bool(confirm(alert))
        elif policy == "auto-confirm":
            confirmed = True
        elif policy.startswith("auto-confirm:"):
            allowed = policy.split(":", 1)[1].split(",")
            confirmed = record.category in allowed
        else:
            confirmed = False
        alert.disposition = "confirmed" if confirmed else "rejected"
        if confirmed:
            name = (
                record.category
                if record.category not in self.class_states
                else f"novel_{record.label}"
            )
            bucket = self.pending_novel.setdefault(name, [])
            bucket.append(record)
            if len(bucket) >= self.config.refit_quorum:
                self._refit_with(name, bucket)
                self.pending_novel[name] = []
        return alert.disposition

    def _refit_with(self, name: str, records: Sequence[ConnectionRecord]):
        """Grow the class variable by one state and recompile the model."""
        self.class_states.append(name)
        train = list(self.train_records)
        labeled = [(rec, rec.category) for rec in train]
        labeled += [(rec, name) for rec in records]
        groups = {
            s.id: tuple(v for v in s.variables if v != CLASS_VAR)
            for s in self.msbn.subnets
        }
        assignments = []
        for rec, cls in labeled:
            row = self.disc.transform(
                rec, [f for g in sorted(groups) for f in groups[g]]
            )
            row[CLASS_VAR] = cls
            assignments.append(row)
        features = [f for g in sorted(groups) for f in groups[g]]
        variables = [Variable(CLASS_VAR, tuple(self.class_states))]
        variables += [Variable(f, self.disc.states(f)) for f in features]
        edges = [(CLASS_VAR, f) for f in features]
        net = fit_cpts(variables, edges, assignments, alpha=1.0)
        self.msbn = Msbn(net, self.msbn.subnets, self.msbn.links)
        self.ljf = compile_ljf(self.msbn)
        self._wire_subscriptions()   # cache makes this locate-free

    # -- event loop ----------------------------------------------------------

    def step(self, confirm: Callable[[Alert], bool] | None = None) -> list[Alert]:
        """Process the next connection record; returns alerts it raised."""
        rec = self.records[self.t]
        self.ljf.reset_evidence(keep_messages=True)
        row = self.disc.transform(rec)
        monitors = sorted(
            (s for s in self.agents.values() if s.role == "system-monitoring"),
            key=lambda s: s.id,
        )
        for mon in monitors:
            evidence = {f: row[f] for f in mon.monitored}
            for sub_id in self._subscribers.get(mon.id, []):
                sub = self.agents[sub_id]
                if sub.host in self.isolated:
                    continue
                self._bus_send(mon, sub, "belief-update", evidence)
                assert set(evidence) <= set(
                    self.msbn.by_id[sub.subnet].variables
                ), "evidence routed outside owning sub-domain"
                self.ljf.enter_local_evidence(sub.subnet, evidence)
        if self.t % max(1, self.config.communicate_every) == 0:
            self._communicate()

        candidates = []
        for sid in sorted(self.servers):
            hosts = self._active_servers(sid)
            if not hosts:
                continue
            agent = self.agents[f"ids-{sid}-{hosts[0]}"]
            post = self.ljf.local_query(sid, CLASS_VAR)
            state, p = post.argmax()
            candidates.append((-p, agent.id, state, post))
        emitted: list[Alert] = []
        if candidates:
            candidates.sort()
            _negp, agent_id, state, post = candidates[0]
            p = -_negp
            self.posterior_log.append(
                (self.t, agent_id, tuple(round(float(x), 15) for x in post.probs))
            )
            theta = self.agents[agent_id].theta
            if p < theta:
                alert = Alert("anomaly", None, p, self.t, agent_id)
            elif state != "normal":
                alert = Alert("known-attack", state, p, self.t, agent_id)
            else:
                alert = None
            if alert is not None:
                self.dispose_alert(alert, rec, confirm)
                self.alerts.append(alert)
                emitted.append(alert)
            self.decisions.append(
                (self.t, rec.category,
                 alert.kind if alert else None,
                 alert.category if alert else None)
            )
        self._heartbeats()
        if (self.t + 1) % max(1, self.config.dtm_every) == 0:
            self._dtm_round()
        self.t += 1
        return emitted

    def run(self, confirm: Callable[[Alert], bool] | None = None) -> "World":
        while self.t < len(self.records):
            self.step(confirm)
        return self


def step_simulation(world: World) -> list[Alert]:
    return world.step()


def inject_compromise(world: World, host: int, strategy: str) -> World:
    return world.inject_compromise(host, strategy)


# --------------------------------------------------------------------------
# benchmark


@dataclass
class MetricsReport:
    rows: list[dict]
    n_test: int
    config_digest: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "config_digest": self.config_digest,
                "n_test_records": self.n_test,
                "per_category": self.rows,
            },
            indent=2, sort_keys=True,
        ) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["category", "detection_rate_pct", "false_positive_pct", "n_records"]
        )
        for row in self.rows:
            writer.writerow([
                row["category"],
                "NA" if row["detection_rate_pct"] is None
                else f"{row['detection_rate_pct']:.2f}",
                "NA" if row["false_positive_pct"] is None
                else f"{row['false_positive_pct']:.2f}",
                row["n_records"],
            ])
        return buf.getvalue()

    def rate(self, category: str, kind: str = "detection_rate_pct"):
        for row in self.rows:
            if row["category"] == category:
                return row[kind]
        return None


def split_train_test(
    records: Sequence[ConnectionRecord], train_fraction: float, seed: int,
    hold_out: str | None = None,
):
    """Deterministic per-category split; `hold_out` drops one category from
    the training side only (its records still show up in the test stream)."""
    by_cat: dict[str, list[int]] = {}
    for i, rec in enumerate(records):
        by_cat.setdefault(rec.category, []).append(i)
    rng = np.random.default_rng(seed + 1)
    train_idx: list[int] = []
    test_idx: list[int] = []
    for cat in sorted(by_cat):
        idx = np.array(by_cat[cat])
        rng.shuffle(idx)
        cut = int(round(len(idx) * train_fraction))
        train_idx.extend(int(i) for i in idx[:cut])
        test_idx.extend(int(i) for i in idx[cut:])
    train_idx.sort()
    test_idx.sort()
    train = [records[i] for i in train_idx
             if hold_out is None or records[i].category != hold_out]
    return train, [records[i] for i in test_idx]


def compute_metrics(world: World, config: RunConfig) -> MetricsReport:
    decisions = world.decisions
    n = len(decisions)
    rows = []
    categories = [c for c in CATEGORIES]
    counted = 0
    for cat in categories:
        actual = [d for d in decisions if d[1] == cat]
        counted += len(actual)
        others = [d for d in decisions if d[1] != cat]
        if cat == "normal":
            detected = sum(1 for d in actual if d[2] is None)
            fp = sum(1 for d in actual if d[2] is not None)
            det_rate = 100.0 * detected / len(actual) if actual else None
            fp_rate = 100.0 * fp / len(actual) if actual else None
        else:
            detected = sum(
                1 for d in actual if d[2] == "known-attack" and d[3] == cat
            )
            fp = sum(
                1 for d in others if d[2] == "known-attack" and d[3] == cat
            )
            det_rate = 100.0 * detected / len(actual) if actual else None
            fp_rate = 100.0 * fp / len(others) if others else None
        rows.append({
            "category": cat,
            "detection_rate_pct":
                None if det_rate is None else round(det_rate, 2),
            "false_positive_pct":
                None if fp_rate is None else round(fp_rate, 2),
            "n_records": len(actual),
        })
    assert counted == n, "per-category counts must reconcile with test size"
    digest = hashlib.sha256(
        json.dumps(config.digest_source(), sort_keys=True).encode()
    ).hexdigest()
    return MetricsReport(rows, n, digest)


def anomaly_rates_by_category(world: World) -> dict[str, float]:
    out: dict[str, float] = {}
    for cat in CATEGORIES:
        actual = [d for d in world.decisions if d[1] == cat]
        if not actual:
            continue
        out[cat] = sum(1 for d in actual if d[2] == "anomaly") / len(actual)
    return out


def build_world(config: RunConfig,
                records: Sequence[ConnectionRecord] | None = None) -> World:
    if records is None:
        records = read_records(config.dataset)
    sample = stratified_sample(records, config.sample_size, config.seed)
    train, test = split_train_test(
        sample, config.train_fraction, config.seed, config.hold_out
    )
    structure = None
    if config.structure:
        structure = json.loads(Path(config.structure).read_text())
    msbn, disc = build_model(train, structure, k_bins=config.k_bins)
    world = World(msbn, disc, test, config, train_records=train)
    for inj in config.injections:
        world.inject_compromise(int(inj["host"]), str(inj["strategy"]))
    return world


def run_benchmark(
    config: RunConfig,
    records: Sequence[ConnectionRecord] | None = None,
) -> MetricsReport:
    """Train on the stratified sample, stream the test split, report rates."""
    world = build_world(config, records)
    world.run()
    return compute_metrics(world, config)
