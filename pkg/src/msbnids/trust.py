"""Signed-message Byzantine agreement and the distributed trust layer.

One agreement instance floods a commander's order through signature chains:
a host accepts an order it has not seen, appends its own signature, and
relays to every host not already in the chain while the chain is shorter
than the traitor bound. Unforgeable signatures mean only the commander can
originate orders, so all loyal hosts end up choosing from identical order
sets.

The trust layer runs one instance per domain member and round (every member
commands its own status claim), derives per-subject verdicts (dead,
equivocating, accused), settles accusations with a follow-up test instance
decided by majority observation, and maintains the isolation list.

The protocol is simulated synchronously: rounds with per-host buffers, an
empty buffer at round end meaning absence of a message. Signatures default
to a keyed-hash backend that satisfies the unforgeability contract inside
the simulation.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ModelFormatError


class Order(enum.IntEnum):
    SAFE = 0
    COMPROMISED = 1


DEAD_COMMANDER = "dead-commander"

#: verdict labels
SAFE, COMPROMISED, DEAD = "safe", "compromised", "dead"

RELAY_STRATEGIES = ("silent", "equivocate", "corrupt-chain", "replay")


class KeyedHashSigner:
    """Keyed-hash signature backend.

    Each host's key is derived from a domain secret; inside the simulation
    nobody but the backend can produce a valid tag for a host, which is the
    unforgeability contract the agreement algorithm relies on.
    """

    def __init__(self, members: Sequence[int], secret: str = "trust-domain"):
        self._keys = {
            h: hashlib.sha256(f"{secret}/{h}".encode()).digest() for h in members
        }

    def add_member(self, host: int, secret: str = "trust-domain"):
        self._keys[host] = hashlib.sha256(f"{secret}/{host}".encode()).digest()

    def sign(self, host: int, payload: bytes) -> str:
        return hmac.new(self._keys[host], payload, hashlib.sha256).hexdigest()

    def verify(self, host: int, payload: bytes, tag: str) -> bool:
        if host not in self._keys:
            return False
        return hmac.compare_digest(self.sign(host, payload), tag)


@dataclass(frozen=True)
class SignedOrder:
    """An order plus its signature chain; chain[0] is the commander."""

    instance: str
    value: int
    blob: tuple | None
    chain: tuple[int, ...]
    sigs: tuple[str, ...]

    def content(self) -> tuple:
        return (self.value, self.blob)

    def payload(self, upto: int) -> bytes:
        return repr(
            (self.instance, int(self.value), self.blob, self.chain[: upto + 1])
        ).encode()


def make_order(
    signer: KeyedHashSigner, instance: str, commander: int, value: int,
    blob: tuple | None = None,
) -> SignedOrder:
    order = SignedOrder(instance, int(value), blob, (commander,), ())
    sig = signer.sign(commander, order.payload(0))
    return SignedOrder(instance, int(value), blob, (commander,), (sig,))


def extend_order(signer: KeyedHashSigner, order: SignedOrder, host: int) -> SignedOrder:
    chain = order.chain + (host,)
    extended = SignedOrder(order.instance, order.value, order.blob, chain, order.sigs)
    sig = signer.sign(host, extended.payload(len(chain) - 1))
    return SignedOrder(order.instance, order.value, order.blob, chain, order.sigs + (sig,))


def verify_order(
    signer: KeyedHashSigner,
    order: SignedOrder,
    commander: int | None = None,
    instance: str | None = None,
) -> bool:
    if len(order.chain) != len(order.sigs) or not order.chain:
        return False
    if len(set(order.chain)) != len(order.chain):
        return False
    if commander is not None and order.chain[0] != commander:
        return False
    if instance is not None and order.instance != instance:
        return False
    return all(
        signer.verify(h, order.payload(i), order.sigs[i])
        for i, h in enumerate(order.chain)
    )


def _tamper(sig: str) -> str:
    flip = "0" if sig[-1] != "0" else "1"
    return sig[:-1] + flip


def choice(values: set) -> "int | str":
    """Deterministic order selection from a received-order set.

    No orders means the commander never spoke; more than one distinct signed
    order is proof of equivocation, so the conservative reading is that the
    commander is compromised.
    """
    if not values:
        return DEAD_COMMANDER
    if len(values) == 1:
        item = next(iter(values))
        return item[0] if isinstance(item, tuple) else item
    return Order.COMPROMISED


@dataclass
class SmResult:
    commander: int
    m: int
    orders: dict[int, set]            # V sets, per host, of (value, blob)
    choices: dict[int, "int | str"]
    message_count: int
    discarded: int
    sig_failures: dict[int, int]      # bus-level sender -> bad messages seen
    trace: list[tuple]                # (round, from, to, instance, chain, value)


class _SmBus:
    """Synchronous delivery layer with the unforgeability assertion."""

    def __init__(self, signer: KeyedHashSigner, loyal: set[int]):
        self.signer = signer
        self.loyal = loyal
        self.produced: set[tuple[int, str]] = set()
        self.trace: list[tuple] = []
        self.count = 0

    def record_production(self, order: SignedOrder):
        for h, sig in zip(order.chain, order.sigs):
            self.produced.add((h, sig))

    def send(self, rnd: int, frm: int, to: int, order: SignedOrder, outbox):
        self.count += 1
        self.trace.append(
            (rnd, frm, to, order.instance, "|".join(map(str, order.chain)),
             int(order.value))
        )
        outbox.setdefault(to, []).append((frm, order))

    def assert_unforged(self, order: SignedOrder):
        # a verified chain may only contain signatures loyal hosts actually
        # produced; anything else is a broken simulation, not a protocol case
        for h, sig in zip(order.chain, order.sigs):
            if h in self.loyal:
                assert (h, sig) in self.produced, (
                    f"accepted message carries a signature host {h} never made"
                )


def _commander_sends(
    bus, signer, instance, commander, strategy, value, blob, others,
    replay_store,
):
    orders = []
    if strategy is None:
        order = make_order(signer, instance, commander, value, blob)
        bus.record_production(order)
        orders = [(h, order) for h in others]
    elif strategy == "silent":
        orders = []
    elif strategy == "equivocate":
        a = make_order(signer, instance, commander, Order.SAFE, None)
        b = make_order(
            signer, instance, commander, Order.COMPROMISED,
            (("claim", "fabricated"),),
        )
        bus.record_production(a)
        bus.record_production(b)
        half = (len(others) + 1) // 2
        orders = [(h, a) for h in others[:half]] + [(h, b) for h in others[half:]]
    elif strategy == "corrupt-chain":
        order = make_order(signer, instance, commander, value, blob)
        bad = SignedOrder(
            order.instance, order.value, order.blob, order.chain,
            (_tamper(order.sigs[0]),),
        )
        orders = [(h, bad) for h in others]
    elif strategy == "replay":
        stale = replay_store[0] if replay_store else None
        orders = [(h, stale) for h in others] if stale is not None else []
    elif strategy.startswith("accuse-some:"):
        subject = int(strategy.split(":", 1)[1])
        order = make_order(
            signer, instance, commander, Order.COMPROMISED,
            ((subject, "fabricated", None),),
        )
        bus.record_production(order)
        half = max(1, len(others) // 2)
        orders = [(h, order) for h in others[:half]]
    elif strategy.startswith("accuse:"):
        subject = int(strategy.split(":", 1)[1])
        order = make_order(
            signer, instance, commander, Order.COMPROMISED,
            ((subject, "fabricated", None),),
        )
        bus.record_production(order)
        orders = [(h, order) for h in others]
    else:
        raise ValueError(f"unknown commander strategy '{strategy}'")
    return orders


def run_sm_instance(
    members: Sequence[int],
    commander: int,
    m: int,
    behaviors: Mapping[int, str | None] | None = None,
    signer: KeyedHashSigner | None = None,
    value: int = Order.SAFE,
    blob: tuple | None = None,
    instance: str | None = None,
    replay_store: Sequence[SignedOrder] | None = None,
) -> SmResult:
    """Run one signed-message agreement instance to completion.

    `behaviors` marks hosts as loyal (absent/None) or gives a traitor
    strategy. Loyal hosts follow the algorithm exactly: take a direct order
    once, add unseen orders, relay with their own signature appended while
    the chain is shorter than `m` plus the commander, skipping hosts already
    in the chain. Invalid chains are discarded silently and counted.
    """
    members = sorted(members)
    n = len(members)
    if n < m + 2:
        raise ValueError(f"need at least m+2={m + 2} hosts, got {n}")
    behaviors = dict(behaviors or {})
    signer = signer or KeyedHashSigner(members)
    instance = instance or f"c{commander}"
    loyal = {h for h in members if behaviors.get(h) is None}
    bus = _SmBus(signer, loyal)

    orders: dict[int, set] = {h: set() for h in members}
    received_direct: dict[int, bool] = {h: False for h in members}
    others = [h for h in members if h != commander]
    outbox: dict[int, list] = {}
    strategy = behaviors.get(commander)
    if strategy is None:
        orders[commander].add((int(value), blob))
    for to, order in _commander_sends(
        bus, signer, instance, commander, strategy, value, blob, others,
        list(replay_store or []),
    ):
        bus.send(0, commander, to, order, outbox)

    rnd = 0
    while outbox:
        rnd += 1
        inbox, outbox = outbox, {}
        for host in members:
            buffer = inbox.get(host, [])
            # deterministic processing order regardless of arrival interleaving
            buffer.sort(key=lambda fo: (fo[1].chain, fo[1].value, str(fo[1].blob)))
            for frm, order in buffer:
                if not verify_order(signer, order, commander, instance):
                    bus.discarded = getattr(bus, "discarded", 0) + 1
                    bus_fail = getattr(bus, "sig_failures", {})
                    bus_fail[frm] = bus_fail.get(frm, 0) + 1
                    bus.sig_failures = bus_fail
                    continue
                bus.assert_unforged(order)
                if host in order.chain:
                    continue
                k = len(order.chain) - 1
                content = order.content()
                if k == 0:
                    if received_direct[host]:
                        continue
                    received_direct[host] = True
                    if content in orders[host]:
                        continue
                else:
                    if content in orders[host]:
                        continue
                orders[host].add(content)
                if k >= m:
                    continue
                my_strategy = behaviors.get(host)
                targets = [t for t in members if t not in order.chain and t != host]
                if my_strategy is None or my_strategy.startswith("accuse"):
                    relay = extend_order(signer, order, host)
                    bus.record_production(relay)
                    for t in targets:
                        bus.send(rnd, host, t, relay, outbox)
                elif my_strategy == "silent":
                    continue
                elif my_strategy == "equivocate":
                    flipped = SignedOrder(
                        order.instance,
                        int(Order.COMPROMISED if order.value == Order.SAFE
                            else Order.SAFE),
                        order.blob, order.chain, order.sigs,
                    )
                    relay = extend_order(signer, flipped, host)
                    for t in targets:
                        bus.send(rnd, host, t, relay, outbox)
                elif my_strategy == "corrupt-chain":
                    relay = extend_order(signer, order, host)
                    bad = SignedOrder(
                        relay.instance, relay.value, relay.blob, relay.chain,
                        relay.sigs[:-1] + (_tamper(relay.sigs[-1]),),
                    )
                    for t in targets:
                        bus.send(rnd, host, t, bad, outbox)
                elif my_strategy == "replay":
                    stale = replay_store[0] if replay_store else None
                    if stale is not None:
                        for t in targets:
                            bus.send(rnd, host, t, stale, outbox)
                else:
                    raise ValueError(f"unknown relay strategy '{my_strategy}'")

    return SmResult(
        commander=commander,
        m=m,
        orders=orders,
        choices={h: choice(orders[h]) for h in members},
        message_count=bus.count,
        discarded=getattr(bus, "discarded", 0),
        sig_failures=getattr(bus, "sig_failures", {}),
        trace=bus.trace,
    )


# --------------------------------------------------------------------------
# local compromise detection


@dataclass(frozen=True)
class SignedProof:
    """A signed artifact a host can present to third parties as evidence."""

    signer: int
    payload: bytes
    tag: str
    kind: str


@dataclass
class PeerTrafficSample:
    """What one host has lately seen from one peer."""

    peer: int
    signature_failures: int = 0
    silent_rounds: int = 0
    timeout: int = 3
    belief: np.ndarray | None = None
    belief_proof: SignedProof | None = None


@dataclass(frozen=True)
class Claim:
    status: int                      # Order value
    evidence: str | None = None
    proof: SignedProof | None = None


def belief_is_malformed(belief: np.ndarray, tol: float = 1e-6) -> bool:
    arr = np.asarray(belief, dtype=float)
    if arr.size == 0 or np.any(~np.isfinite(arr)):
        return True
    return bool(np.any(arr < 0) or abs(float(arr.sum()) - 1.0) > tol)


def detect_local_compromise(sample: PeerTrafficSample) -> Claim:
    """Pluggable detector bank over one peer's recent traffic."""
    if sample.signature_failures > 0:
        return Claim(Order.COMPROMISED, "signature")
    if sample.silent_rounds >= sample.timeout:
        return Claim(Order.COMPROMISED, "timeout")
    if sample.belief is not None and belief_is_malformed(sample.belief):
        return Claim(Order.COMPROMISED, "malformed-belief", sample.belief_proof)
    return Claim(Order.SAFE)


# --------------------------------------------------------------------------
# distributed trust manager


@dataclass
class TrustDomain:
    """Hosts sharing a security policy and cooperating on isolation."""

    members: tuple[int, ...]
    policy: str = "default"
    signer: KeyedHashSigner | None = None
    isolated: set[int] = field(default_factory=set)

    def __post_init__(self):
        if self.signer is None:
            self.signer = KeyedHashSigner(self.members, secret=self.policy)

    def active(self) -> list[int]:
        return sorted(set(self.members) - self.isolated)


@dataclass
class TrustVerdict:
    subject: int
    by_observer: dict[int, str]      # safe | compromised | dead
    isolate: bool


@dataclass
class DtmRoundResult:
    verdicts: list[TrustVerdict]
    newly_isolated: list[int]
    undecidable: bool
    message_count: int
    tested_subjects: list[int]
    instances: dict[str, SmResult]
    trace: list[tuple]


def _proof_entry(proof: SignedProof | None):
    if proof is None:
        return None
    return (proof.signer, proof.payload.hex(), proof.tag, proof.kind)


def _proof_from_entry(entry) -> SignedProof | None:
    if entry is None:
        return None
    signer, payload_hex, tag, kind = entry
    return SignedProof(int(signer), bytes.fromhex(payload_hex), tag, kind)


def _proof_convicts(signer: KeyedHashSigner, subject: int,
                    proof: SignedProof | None) -> bool:
    """A proof convicts when the subject's own signature covers a belief
    table that fails well-formedness."""
    if proof is None or proof.signer != subject:
        return False
    if not signer.verify(subject, proof.payload, proof.tag):
        return False
    if proof.kind != "malformed-belief":
        return False
    try:
        belief = np.frombuffer(proof.payload, dtype=float)
    except ValueError:
        return True
    return belief_is_malformed(belief)


def run_dtm_round(
    domain: TrustDomain,
    observations: Mapping[int, Mapping[int, Claim]] | None = None,
    behaviors: Mapping[int, str | None] | None = None,
    m: int | None = None,
    round_index: int = 0,
    replay_store: Sequence[SignedOrder] | None = None,
) -> DtmRoundResult:
    """One trust round: n parallel status instances, accusation tests,
    majority verdicts, isolation-list update.

    `behaviors` is ground truth used by the simulation both to drive traitor
    strategies and to flag rounds where the loyal majority assumption fails
    (the protocol itself cannot observe that).
    """
    observations = dict(observations or {})
    behaviors = dict(behaviors or {})
    active = domain.active()
    n = len(active)
    loyal = [h for h in active if behaviors.get(h) is None]
    if 2 * len(loyal) <= n:
        return DtmRoundResult([], [], True, 0, [], {}, [])
    if m is None:
        m = max(1, (n - 1) // 2) if n >= 3 else 0
    signer = domain.signer

    instances: dict[str, SmResult] = {}
    trace: list[tuple] = []
    messages = 0
    accusations: list[tuple[int, int, str, SignedProof | None]] = []

    for c in active:
        claims = observations.get(c, {})
        accused = [
            (s, claims[s]) for s in sorted(claims)
            if claims[s].status == Order.COMPROMISED and s in active and s != c
        ]
        if behaviors.get(c) is None and accused:
            value, blob = Order.COMPROMISED, tuple(
                (s, cl.evidence or "observed", _proof_entry(cl.proof))
                for s, cl in accused
            )
        else:
            value, blob = Order.SAFE, None
        inst_id = f"r{round_index}c{c}"
        result = run_sm_instance(
            active, c, m, behaviors, signer, value, blob, inst_id, replay_store
        )
        instances[inst_id] = result
        trace.extend(result.trace)
        messages += result.message_count
        # harvest accusations every loyal host agreed on
        probe = loyal[0] if loyal else active[0]
        v = result.orders[probe]
        if len(v) == 1:
            val, bl = next(iter(v))
            if val == Order.COMPROMISED and bl:
                for entry in bl:
                    if isinstance(entry, tuple) and len(entry) == 3:
                        s, tag, proof_entry = entry
                        if isinstance(s, int) and s in active and s != c:
                            accusations.append(
                                (c, s, str(tag), _proof_from_entry(proof_entry))
                            )

    # follow-up tests: one instance per accused subject, commanded by the
    # first accuser; the decision is a majority over local observations,
    # with a verifiable signed proof convicting on its own
    tested: list[int] = []
    votes: dict[int, dict[int, str]] = {}
    for subject in sorted({s for _a, s, _t, _p in accusations}):
        accusers = sorted(a for a, s, _t, _p in accusations if s == subject)
        proofs = [p for _a, s, _t, p in accusations if s == subject]
        inst_id = f"r{round_index}t{subject}"
        test = run_sm_instance(
            active, accusers[0], m, behaviors, signer,
            Order.COMPROMISED, ((subject, "test", None),), inst_id, replay_store,
        )
        instances[inst_id] = test
        trace.extend(test.trace)
        messages += test.message_count
        tested.append(subject)
        convicting = any(_proof_convicts(signer, subject, p) for p in proofs)
        votes[subject] = {}
        for o in active:
            if o == subject:
                continue
            if convicting:
                votes[subject][o] = COMPROMISED
                continue
            own = observations.get(o, {}).get(subject)
            votes[subject][o] = (
                COMPROMISED if own is not None and own.status == Order.COMPROMISED
                else SAFE
            )

    verdicts: list[TrustVerdict] = []
    newly_isolated: list[int] = []
    for subject in active:
        by_observer: dict[int, str] = {}
        inst = instances[f"r{round_index}c{subject}"]
        for o in active:
            if o == subject:
                continue
            v = inst.orders[o]
            if not v:
                by_observer[o] = DEAD
            elif len(v) > 1:
                by_observer[o] = COMPROMISED
            else:
                by_observer[o] = votes.get(subject, {}).get(o, SAFE)
        bad = sum(1 for verdict in by_observer.values() if verdict != SAFE)
        isolate = 2 * bad > len(by_observer)
        if isolate:
            newly_isolated.append(subject)
        verdicts.append(TrustVerdict(subject, by_observer, isolate))

    domain.isolated.update(newly_isolated)
    return DtmRoundResult(
        verdicts, newly_isolated, False, messages, tested, instances, trace
    )


# --------------------------------------------------------------------------
# scenario files


@dataclass
class Scenario:
    members: tuple[int, ...]
    traitors: dict[int, str]
    heartbeat_period: int = 1
    timeout_rounds: int = 3
    rounds: int = 3
    seed: int = 0
    m: int | None = None


def load_scenario(path) -> Scenario:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"cannot load scenario '{path}': {exc}") from None
    try:
        return Scenario(
            members=tuple(int(h) for h in doc["members"]),
            traitors={int(h): str(s) for h, s in doc.get("traitors", {}).items()},
            heartbeat_period=int(doc.get("heartbeat_period", 1)),
            timeout_rounds=int(doc.get("timeout_rounds", 3)),
            rounds=int(doc.get("rounds", 3)),
            seed=int(doc.get("seed", 0)),
            m=doc.get("m"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed scenario '{path}': {exc}") from None


@dataclass
class ScenarioResult:
    rounds: list[DtmRoundResult]
    isolated: list[int]
    undecidable: bool
    trace: list[tuple]


def run_scenario(scenario: Scenario) -> ScenarioResult:
    """Drive a trust domain for the configured number of rounds.

    Heartbeat observations are synthesized each round: silent traitors stop
    heartbeating and time out; every other detector input defaults to clean.
    """
    domain = TrustDomain(scenario.members)
    behaviors: dict[int, str | None] = dict(scenario.traitors)
    silent_rounds: dict[int, int] = {h: 0 for h in scenario.members}
    rounds: list[DtmRoundResult] = []
    trace: list[tuple] = []
    for r in range(scenario.rounds):
        active = domain.active()
        for h in active:
            if behaviors.get(h) == "silent":
                silent_rounds[h] += scenario.heartbeat_period
            else:
                silent_rounds[h] = 0
        observations = {
            o: {
                s: detect_local_compromise(
                    PeerTrafficSample(
                        peer=s,
                        silent_rounds=silent_rounds[s],
                        timeout=scenario.timeout_rounds,
                    )
                )
                for s in active
                if s != o
            }
            for o in active
            if behaviors.get(o) is None
        }
        result = run_dtm_round(
            domain, observations, behaviors, m=scenario.m, round_index=r
        )
        rounds.append(result)
        trace.extend(result.trace)
        if result.undecidable:
            return ScenarioResult(rounds, sorted(domain.isolated), True, trace)
    return ScenarioResult(rounds, sorted(domain.isolated), False, trace)
