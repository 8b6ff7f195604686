"""Deterministic simulator of the asynchronous gossiping network.

Messages diffuse hop by hop: the delay to each destination is the sum of
per-hop delays along its hop-shortest path through honest relays, sampled
by a counter-based PRF keyed on (run seed, message digest, destination,
hop) and clamped to the size-dependent bound lambda(size).  Every run is a
pure function of (scenario, seed), and the delivery times of a message do
not depend on unrelated traffic, which the component-independence
properties rely on.

Byzantine senders escape the envelope: a strategy may retime, withhold,
mask destinations or fork the content of its own messages.  Honest-origin
gossip is untouchable.

The event loop is a single heap of per-node step-deadline events ordered
by (time, node, step).  Tallies for all nodes of a step are evaluated in
one batched kernel call when the first deadline of that step fires; the
pool is complete by then because sends happen one full step earlier and
steps outlast the clock skew.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass

import numpy as np

from . import _kernels as kernels
from . import crypto, engine, mbba
from .crypto import KeyRegistry
from .engine import CobNodeState, CobParams, NodeTally, SendPlan

U64MAX = 0xFFFFFFFFFFFFFFFF


# ---------------------------------------------------------------------------
# Topology


def build_topology(n: int, byz: set[int], family: str, params: dict, seed: int):
    """Adjacency lists for a connected graph whose honest subgraph is connected.

    Malicious nodes may not be cut vertices: after generation the honest-
    induced subgraph is patched with deterministic extra edges between
    component representatives if necessary.
    """
    import networkx as nx

    if family == "complete":
        g = nx.complete_graph(n)
    elif family == "ring":
        g = nx.cycle_graph(n)
    elif family == "watts_strogatz":
        k = int(params.get("k", max(4, n // 10)))
        p = float(params.get("p", 0.2))
        g = nx.connected_watts_strogatz_graph(n, min(k, n - 1), p, tries=200, seed=seed)
    elif family == "geometric":
        radius = float(params.get("radius", 0.0)) or (2.0 / max(n, 4) ** 0.5)
        g = nx.random_geometric_graph(n, radius, seed=seed)
        comps = sorted(nx.connected_components(g), key=min)
        for a, b in zip(comps, comps[1:]):
            g.add_edge(min(a), min(b))
    else:
        raise ValueError(f"unknown topology family {family!r}")

    honest = [v for v in range(n) if v not in byz]
    comps = sorted(nx.connected_components(g.subgraph(honest)), key=min)
    for a, b in zip(comps, comps[1:]):
        g.add_edge(min(a), min(b))
    return [sorted(g.neighbors(v)) for v in range(n)]


def hop_matrix(adj: list[list[int]], byz: set[int]) -> np.ndarray:
    """BFS hop counts with only honest nodes relaying; -1 where unreachable."""
    from collections import deque

    n = len(adj)
    hops = np.full((n, n), -1, dtype=np.int32)
    for origin in range(n):
        dist = hops[origin]
        dist[origin] = 0
        q = deque([origin])
        while q:
            u = q.popleft()
            if u != origin and u in byz:
                continue  # malicious nodes do not relay
            for w in adj[u]:
                if dist[w] < 0:
                    dist[w] = dist[u] + 1
                    q.append(w)
    return hops


# ---------------------------------------------------------------------------
# Trace


class Trace:
    """Append-only event log; its digest is the run's determinism witness."""

    def __init__(self, record_receives: bool = False):
        self.records: list[tuple] = []
        self.record_receives = record_receives
        self._h = hashlib.blake2b(digest_size=32)

    def add(self, t_abs, t_local, node, kind, instance, step, size_bytes, digest8, note=""):
        rec = (float(t_abs), float(t_local), node, kind, instance, step, size_bytes, digest8, note)
        self.records.append(rec)
        line = "|".join(
            (
                f"{rec[0]:.17g}",
                f"{rec[1]:.17g}",
                str(node),
                kind,
                instance,
                step,
                str(size_bytes),
                digest8,
                note,
            )
        )
        self._h.update(line.encode())
        self._h.update(b"\n")

    def digest(self) -> str:
        return self._h.hexdigest()

    def sends(self):
        return [r for r in self.records if r[3] == "send"]

    def write_jsonl(self, path):
        keys = ("t_abs", "t_local", "node", "kind", "instance", "step", "size_bytes", "digest", "note")
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(dict(zip(keys, rec)), sort_keys=True))
                fh.write("\n")


# ---------------------------------------------------------------------------
# Adversary strategies


@dataclass
class TransportPlan:
    """One wire variant of a logical send."""

    payload_ids: np.ndarray | None
    bits: np.ndarray | None
    flags: np.ndarray | None
    dest_mask: np.ndarray | None  # bool (n,), None = everyone
    delay: float = 0.0


class Strategy:
    """Byzantine behavior hooks; the base class behaves honestly."""

    name = "honest"

    def message_plans(self, net, node, step_key, plan: SendPlan, params):
        return [TransportPlan(plan.payload_ids, plan.bits, plan.flags, None, 0.0)]

    def block_release(self, net, node, slot, shard, honest_local: float, slot_duration: float):
        """Local-clock release time of a shard block; None withholds it."""
        return honest_local


class CrashStrategy(Strategy):
    name = "crash"

    def message_plans(self, net, node, step_key, plan, params):
        return []

    def block_release(self, net, node, slot, shard, honest_local, slot_duration):
        return None


class EquivocateStrategy(Strategy):
    """Conflicting content to two random halves of the network."""

    name = "equivocate"

    def message_plans(self, net, node, step_key, plan, params):
        mask = net.adv_rng.random(net.n) < 0.5
        junk_payload, junk_bits, junk_flags = _junk_content(params, step_key, plan, shared=False)
        return [
            TransportPlan(plan.payload_ids, plan.bits, plan.flags, mask, 0.0),
            TransportPlan(junk_payload, junk_bits, junk_flags, ~mask, 0.0),
        ]


class WithholdThenReleaseStrategy(Strategy):
    """Correct content, released late enough to straddle tally deadlines."""

    name = "withhold_then_release"

    def message_plans(self, net, node, step_key, plan, params):
        lo = max(0.0, net.current_step_len - 2.0 * net.lam_small)
        delay = float(net.adv_rng.uniform(lo, net.current_step_len))
        return [TransportPlan(plan.payload_ids, plan.bits, plan.flags, None, delay)]


class BitFlipStrategy(Strategy):
    """Broadcasts corrupted votes: junk values, inverted bits."""

    name = "bit_flip_votes"

    def message_plans(self, net, node, step_key, plan, params):
        junk_payload, junk_bits, junk_flags = _junk_content(params, step_key, plan, shared=True)
        return [TransportPlan(junk_payload, junk_bits, junk_flags, None, 0.0)]


class LateBlockStrategy(Strategy):
    """Honest votes, but shard blocks released at a configured local time.

    release = offset_frac * slot_duration + offset_lambdas * lambda(block).
    """

    name = "late_block"

    def __init__(self, offset_frac: float = 1.0, offset_lambdas: float = -0.5):
        self.offset_frac = offset_frac
        self.offset_lambdas = offset_lambdas

    def block_release(self, net, node, slot, shard, honest_local, slot_duration):
        return self.offset_frac * slot_duration + self.offset_lambdas * net.lam_block


class ScriptedStrategy(Strategy):
    name = "scripted"

    def __init__(self, message_fn=None, block_fn=None):
        self._message_fn = message_fn
        self._block_fn = block_fn

    def message_plans(self, net, node, step_key, plan, params):
        if self._message_fn is None:
            return super().message_plans(net, node, step_key, plan, params)
        return self._message_fn(net, node, step_key, plan, params)

    def block_release(self, net, node, slot, shard, honest_local, slot_duration):
        if self._block_fn is None:
            return honest_local
        return self._block_fn(net, node, slot, shard, honest_local, slot_duration)


def _junk_content(params, step_key, plan, shared: bool):
    """Replacement content for adversarial variants of one step message."""
    if plan.payload_ids is not None:
        tag = b"flip" if shared else b"equiv"
        junk_bytes = crypto.digest(params.digest, tag, repr(step_key).encode())[:8]
        vid = params.interner.intern(junk_bytes)
        return np.full(params.m, vid, dtype=np.int32), None, None
    flipped = (1 - np.asarray(plan.bits)).astype(np.int8)
    flags = np.zeros(params.m, dtype=np.int8) if plan.flags is not None else None
    return None, flipped, flags


STRATEGIES = {
    "honest": Strategy,
    "crash": CrashStrategy,
    "equivocate": EquivocateStrategy,
    "withhold_then_release": WithholdThenReleaseStrategy,
    "bit_flip_votes": BitFlipStrategy,
    "late_block": LateBlockStrategy,
    "scripted": ScriptedStrategy,
}

_HONEST = Strategy()


# ---------------------------------------------------------------------------
# Message pools


class Pool:
    """All wire variants of one (instance, step), with delivery rows."""

    def __init__(self, n: int):
        self.n = n
        self.senders: list[int] = []
        self.payloads: list = []  # (m,) int32 rows, or (bits, digest, sig) for finals
        self.deliveries: list[np.ndarray] = []
        self.vrf64: list[int] = []
        self.vrf_bytes: list[bytes] = []
        self.sizes: list[int] = []
        self.digests: set[bytes] = set()
        self._arrays = None
        self._tallies: dict = {}
        self._groups = None

    def add(self, sender, payload_row, delivery_row, vrf_u64, size, digest,
            vrf_out: bytes = b"") -> bool:
        if digest in self.digests:
            return False  # gossip duplicate suppression
        self.digests.add(digest)
        self.senders.append(sender)
        self.payloads.append(payload_row)
        self.deliveries.append(delivery_row)
        self.vrf64.append(vrf_u64)
        self.vrf_bytes.append(vrf_out)
        self.sizes.append(size)
        self._arrays = None
        self._tallies.clear()
        self._groups = None
        return True

    def final_groups(self):
        """Finals grouped by content: {(bits, digest): (row idxs, arrivals)}.

        Rows are deduplicated per sender (first emitted wins) and the
        arrival matrix is stacked once per pool version.
        """
        if self._groups is None:
            by_content: dict[tuple, list[int]] = {}
            for i, payload in enumerate(self.payloads):
                by_content.setdefault((payload[0], payload[1]), []).append(i)
            self._groups = {
                key: (rows, np.stack([self.deliveries[i] for i in rows]))
                for key, rows in (
                    (k, _dedup_rows(v, self.senders)) for k, v in by_content.items()
                )
            }
        return self._groups

    def arrays(self):
        if self._arrays is None:
            if not self.senders:
                self._arrays = (
                    np.zeros(0, dtype=np.int32),
                    np.zeros((0, 1), dtype=np.int32),
                    np.zeros((0, self.n), dtype=np.float64),
                    np.zeros(0, dtype=np.uint64),
                )
            else:
                senders = np.array(self.senders, dtype=np.int32)
                order = np.argsort(senders, kind="stable")
                payloads = np.stack([self.payloads[i] for i in order]).astype(np.int32)
                deliveries = np.stack([self.deliveries[i] for i in order])
                vrf = np.array([self.vrf64[i] for i in order], dtype=np.uint64)
                self._arrays = (senders[order], payloads, deliveries, vrf)
        return self._arrays

    def tally(self, deadlines: np.ndarray, num_values: int) -> np.ndarray:
        """(n, m, V) counts at per-node deadlines; one kernel call per step."""
        key = (float(deadlines[0]), num_values)
        hit = self._tallies.get(key)
        if hit is None:
            senders, payloads, deliveries, _ = self.arrays()
            hit = kernels.tally_votes(deliveries, deadlines, senders, payloads, num_values)
            self._tallies[key] = hit
        return hit

    def min_vrf(self, deadlines: np.ndarray):
        """(mins, present): per-node minimum sortition output among timely rows."""
        senders, _, deliveries, vrf = self.arrays()
        if len(senders) == 0:
            return np.zeros(self.n, dtype=np.uint64), np.zeros(self.n, dtype=bool)
        counted = deliveries <= deadlines[None, :]
        masked = np.where(counted, vrf[:, None], np.uint64(U64MAX))
        return masked.min(axis=0), counted.any(axis=0)


# ---------------------------------------------------------------------------
# Network


class Network:
    """Transport state shared by every instance of one run."""

    def __init__(
        self,
        n: int,
        byz: set[int],
        adj,
        registry: KeyRegistry,
        seed: int,
        lam_base: float,
        lam_per_byte: float,
        d_min: float,
        d_max: float,
        strategies: dict[int, Strategy],
        trace: Trace,
        compute_delta: float = 0.0,
    ):
        self.n = n
        self.byz = byz
        self.adj = adj
        self.hops = hop_matrix(adj, byz)
        self.registry = registry
        self.lam_base = lam_base
        self.lam_per_byte = lam_per_byte
        self.d_min = d_min
        self.d_max = d_max
        self.strategies = strategies
        self.trace = trace
        self.compute_delta = compute_delta
        self.delay_seed = crypto.u64_from(crypto.digest(b"delays", seed.to_bytes(8, "big")))
        self.adv_rng = np.random.default_rng(
            crypto.u64_from(crypto.digest(b"adversary", seed.to_bytes(8, "big")))
        )
        self.offsets = np.zeros(n, dtype=np.float64)  # abs time at local 0
        self.honest_mask = np.array([v not in byz for v in range(n)], dtype=bool)
        self._fifo_floor: dict[int, np.ndarray] = {}
        # Keep worst-case path delays strictly inside the diffusion bound so
        # the envelope clamp never has to fire: scale the per-hop window down
        # when the realized topology is deep.
        max_hops = max(1, int(self.hops.max()))
        if d_max * max_hops > lam_base:
            scale = lam_base / (d_max * max_hops)
            self.d_max = d_max * scale
            self.d_min = min(d_min, self.d_max)
        self.lam_small = self.lam(512)
        self.lam_block = self.lam(512)  # refined by the chain layer
        self.current_step_len = 2.0 * self.lam_small  # refined per instance

    def lam(self, size_bytes: int) -> float:
        return self.lam_base + size_bytes * self.lam_per_byte

    def local(self, node: int, t_abs: float) -> float:
        off = self.offsets[node]
        if not (np.isfinite(t_abs) and np.isfinite(off)):
            return float("inf")
        return t_abs - off

    def strategy(self, node: int) -> Strategy:
        if node in self.byz:
            return self.strategies.get(node, _HONEST)
        return _HONEST

    def deliver(self, origin, t_send, size, digest, dest_mask=None, delay=0.0) -> np.ndarray:
        msg_seed = (self.delay_seed ^ crypto.u64_from(digest)) & U64MAX
        cap = self.lam(size)
        row = np.asarray(
            kernels.delivery_times(
                t_send + delay, self.hops[origin], msg_seed, self.d_min, self.d_max, cap
            )
        )
        if dest_mask is not None:
            row = row.copy()
            keep = np.asarray(dest_mask, dtype=bool).copy()
            keep[origin] = True
            row[~keep] = np.inf
        if origin in self.byz:
            # Honest nodes relay whatever they hold: a byzantine-origin
            # message re-diffuses within lambda(size) of its earliest honest
            # receipt, so selective delivery only buys a bounded head start.
            direct = row[self.honest_mask]
            if direct.size and np.isfinite(direct).any():
                t_first = float(direct.min())
                row = np.minimum(row, t_first + cap)
        else:
            # FIFO per (origin -> destination): an honest sender's later
            # message never overtakes an earlier one.  The clamp respects
            # the envelope because earlier sends carry earlier bounds.
            last = self._fifo_floor.get(origin)
            if last is not None:
                row = np.maximum(row, last)
            self._fifo_floor[origin] = row
        return row


# ---------------------------------------------------------------------------
# Instance runner

MBBA_BASE_INDEX = 4  # deadline index of ("mbba", 0, 0)


def _step_index(step_key) -> int:
    if step_key[0] == "mgc":
        return step_key[1]
    if step_key[0] == "mbba":
        return MBBA_BASE_INDEX + step_key[1] * 3 + step_key[2]
    raise ValueError(step_key)


def _key_for_index(idx: int) -> tuple:
    if idx < MBBA_BASE_INDEX:
        return ("mgc", idx)
    return ("mbba", (idx - MBBA_BASE_INDEX) // 3, (idx - MBBA_BASE_INDEX) % 3)


def _step_label(step_key) -> str:
    if step_key[0] == "mgc":
        return f"mgc-{step_key[1]}"
    if step_key[0] == "mbba":
        return f"mbba-{step_key[1]}-{step_key[2]}"
    return "final"


def mgc_message_size_bound(params: CobParams) -> int:
    # Worst case: every component carries a 64-byte value.
    return 32 + 4 + 1 + 2 + params.m * 66 + 100 + crypto.SIG_SIZE


@dataclass
class InstanceResult:
    params: CobParams
    states: dict[int, CobNodeState]
    outputs: dict[int, engine.CobOutput]
    assembly_times: np.ndarray | None
    liveness_failures: list[int]
    certified: bool
    bits: tuple | None = None
    theta_digest: bytes | None = None
    certificate: engine.Certificate | None = None  # canonical, full supporter set


class InstanceRunner:
    """Drives one instance at every node over a shared event heap."""

    def __init__(self, net: Network, params: CobParams, observations, start_abs):
        self.net = net
        self.params = params
        self.pools: dict[tuple, Pool] = {}
        self.start_abs = np.asarray(start_abs, dtype=np.float64)
        self.step_len = 2.0 * net.lam(mgc_message_size_bound(params)) + net.compute_delta
        self.label = f"{params.instance.purpose}/{params.instance.epoch}/{params.instance.slot}"
        self.states = {v: engine.cob_start(params, v, observations[v]) for v in range(net.n)}

    def pool(self, step_key) -> Pool:
        p = self.pools.get(step_key)
        if p is None:
            p = Pool(self.net.n)
            self.pools[step_key] = p
        return p

    def deadlines_for(self, step_key) -> np.ndarray:
        return self.start_abs + _step_index(step_key) * self.step_len

    # -- sends --------------------------------------------------------------
    def dispatch(self, node: int, t_abs: float, plans: list[SendPlan]):
        net, params = self.net, self.params
        net.current_step_len = self.step_len
        for plan in plans:
            for tp in net.strategy(node).message_plans(net, node, plan.step_key, plan, params):
                self._emit(node, t_abs, plan, tp)

    def _emit(self, node: int, t_abs: float, plan: SendPlan, tp: TransportPlan):
        params, net = self.params, self.net
        key = plan.step_key
        if key[0] == "mgc":
            encoded = engine.encode_mgc_message(params, key[1], node, tp.payload_ids, plan.proof)
            row = np.asarray(tp.payload_ids, dtype=np.int32)
        elif key[0] == "mbba":
            encoded = engine.encode_mbba_message(
                params, key[1], key[2], node, tp.bits, tp.flags, plan.proof
            )
            row = (
                np.asarray(tp.bits, dtype=np.int32) + 2 * np.asarray(tp.flags, dtype=np.int32)
            )
        else:
            encoded = engine.encode_final_body(params, node, tp.bits, plan.theta_digest, plan.proof)
            row = None
        sig = net.registry.sign(node, encoded)
        digest = crypto.digest(encoded, sig)
        size = len(encoded) + len(sig)
        delivery = net.deliver(node, t_abs, size, digest, tp.dest_mask, tp.delay)
        if key[0] == "final":
            row = (bytes(int(b) for b in tp.bits), plan.theta_digest, sig)
        pool = self.pool(key)
        if pool.add(node, row, delivery, crypto.u64_from(plan.proof.pseudo_vrf_output), size,
                    digest, plan.proof.pseudo_vrf_output):
            net.trace.add(
                t_abs, net.local(node, t_abs), node, "send", self.label,
                _step_label(key), size, digest[:8].hex(),
            )
            if net.trace.record_receives:
                for dest in range(net.n):
                    t_d = delivery[dest]
                    if dest != node and np.isfinite(t_d):
                        net.trace.add(
                            t_d, net.local(dest, t_d), dest, "recv", self.label,
                            _step_label(key), size, digest[:8].hex(),
                        )

    # -- tallies --------------------------------------------------------------
    def node_tally(self, step_key, node: int) -> NodeTally:
        params = self.params
        pool = self.pool(step_key)
        deadlines = self.deadlines_for(step_key)
        if step_key[0] == "mgc":
            counts = pool.tally(deadlines, len(params.interner))
            return NodeTally(counts=counts[node])
        counts = pool.tally(deadlines, 4)
        c = counts[node]
        tally = NodeTally(
            zeros=c[:, 0] + c[:, 2],
            ones=c[:, 1] + c[:, 3],
            flagged_zeros=c[:, 2],
            flagged_ones=c[:, 3],
        )
        if step_key[2] == mbba.PHASE_COIN:
            mins, present = pool.min_vrf(deadlines)
            tally.coin_min_vrf = int(mins[node]) if present[node] else None
        return tally

    def _maybe_adopt_from_finals(self, node: int, t_abs: float):
        """Straggler catch-up from the accumulating final pool.

        Returns ("output", plans) when a full certificate quorum was
        adopted, ("halted", plans) when only the decided bits were adopted
        (the node halts and contributes its own final), or None.
        """
        pool = self.pools.get(engine.FINAL_STEP)
        state = self.states[node]
        if pool is None or len(pool.senders) < self.params.t_adopt:
            return None
        groups = pool.final_groups()
        census = sorted(
            (
                (int(np.count_nonzero(arrivals[:, node] <= t_abs)), key, rows, arrivals)
                for key, (rows, arrivals) in groups.items()
            ),
            key=lambda g: (-g[0], g[1]),
        )
        for count, (bits_bytes, theta_digest), rows, arrivals in census:
            if count >= self.params.t_cert:
                bits = tuple(bits_bytes)
                held = [i for i in rows if pool.deliveries[i][node] <= t_abs]
                cert = self._certificate(bits, theta_digest, held)
                if engine.adopt_certificate(state, bits, theta_digest, cert):
                    plans = []
                    if state.final_payload is None and state.bits is not None:
                        # back the certificate with this node's own final too
                        state.bits = np.array(list(bits_bytes), dtype=np.int8)
                        state.decided = np.ones(self.params.m, dtype=bool)
                        state.halted = True
                        plans = engine._final_send(state)
                    return ("output", plans)
            elif not state.halted and count >= self.params.t_adopt:
                if state.bits is not None:
                    return ("halted", engine.adopt_decided_bits(state, bits_bytes))
        return None

    def _certificate(self, bits, theta_digest, rows) -> engine.Certificate:
        pool = self.pools[engine.FINAL_STEP]
        votes = [
            engine.FinalVote(pool.senders[i], pool.vrf_bytes[i], pool.payloads[i][2])
            for i in rows
        ]
        return engine.Certificate(self.params.instance, tuple(bits), theta_digest, votes)

    # -- event loop -------------------------------------------------------------
    def run(self, horizon: float = np.inf) -> InstanceResult:
        net = self.net
        heap: list[tuple] = []
        for v in range(net.n):
            heapq.heappush(heap, (float(self.start_abs[v]), v, ("start",)))
        liveness: list[int] = []
        while heap:
            t, v, key = heapq.heappop(heap)
            if not np.isfinite(t):
                continue  # node unreachable from every honest relay
            if t > horizon:
                net.trace.add(t, net.local(v, t), v, "timeout-horizon", self.label, "-", 0, "")
                break
            state = self.states[v]
            if key == ("start",):
                net.trace.add(t, net.local(v, t), v, "timeout", self.label, "start", 0, "")
                self.dispatch(v, t, engine.initial_send(state))
                heapq.heappush(heap, (float(self.start_abs[v] + self.step_len), v, ("mgc", 1)))
                continue
            if state.stage == engine.DONE:
                continue
            if key[0] == "mbba":
                action = self._maybe_adopt_from_finals(v, t)
                if action is not None:
                    kind, plans = action
                    self.dispatch(v, t, plans)
                    if kind == "halted" and state.iteration < mbba.ITERATION_CAP:
                        nxt = state.current_step_key()
                        heapq.heappush(
                            heap,
                            (float(self.start_abs[v] + _step_index(nxt) * self.step_len), v, nxt),
                        )
                    continue
            if state.halted:
                # Decided bits keep being echoed with final flags until the
                # node holds a certificate, so stragglers can catch up.
                plans = engine.on_echo_deadline(state)
                if plans is None:
                    continue
                self.dispatch(v, t, plans)
                nxt = state.current_step_key()
                heapq.heappush(
                    heap, (float(self.start_abs[v] + _step_index(nxt) * self.step_len), v, nxt)
                )
                continue
            tally = self.node_tally(key, v)
            if key[0] == "mbba" and key[2] == mbba.PHASE_COIN and tally.coin_min_vrf is None:
                net.trace.add(t, net.local(v, t), v, "note", self.label,
                              _step_label(key), 0, "", "empty coin phase")
            decisions_before = len(state.decision_log)
            try:
                plans = engine.on_step_deadline(state, key, tally)
            except mbba.LivenessError as exc:
                liveness.append(v)
                net.trace.add(t, net.local(v, t), v, "liveness-failure", self.label,
                              _step_label(key), 0, "", str(exc))
                continue
            for it, ph, comp, bit in state.decision_log[decisions_before:]:
                net.trace.add(t, net.local(v, t), v, "decide", self.label,
                              _step_label(key), 0, "", f"component {comp} -> {bit}")
            self.dispatch(v, t, plans)
            if state.stage != engine.DONE:
                nxt = state.current_step_key()
                if state.halted and state.iteration >= mbba.ITERATION_CAP:
                    continue  # echo budget exhausted
                heapq.heappush(
                    heap, (float(self.start_abs[v] + _step_index(nxt) * self.step_len), v, nxt)
                )
        return self._finish(liveness)

    # -- certificate assembly -----------------------------------------------------
    def _finish(self, liveness: list[int]) -> InstanceResult:
        net, params = self.net, self.params
        pool = self.pools.get(engine.FINAL_STEP)
        outputs: dict[int, engine.CobOutput] = {}
        if pool is None or not pool.senders:
            return InstanceResult(params, self.states, outputs, None, liveness, False)
        quorum_key, rows, arrivals = None, None, None
        for gkey, (idxs, arr) in sorted(pool.final_groups().items()):
            if len(idxs) >= params.t_cert:
                quorum_key, rows, arrivals = gkey, idxs, arr
                break
        if quorum_key is None:
            return InstanceResult(params, self.states, outputs, None, liveness, False)
        bits_bytes, theta_digest = quorum_key
        bits = tuple(bits_bytes)
        assembly = np.sort(arrivals, axis=0)[params.t_cert - 1, :]
        canonical = self._certificate(bits, theta_digest, rows)
        for v in range(net.n):
            t_v = float(assembly[v])
            if not np.isfinite(t_v):
                net.trace.add(0.0, 0.0, v, "no-certificate", self.label, "final", 0, "")
                continue
            state = self.states[v]
            held = [i for i in rows if pool.deliveries[i][v] <= t_v]
            cert = self._certificate(bits, theta_digest, held)
            if engine.adopt_certificate(state, bits, theta_digest, cert):
                outputs[v] = state.output
                net.trace.add(t_v, net.local(v, t_v), v, "output", self.label,
                              "final", 0, theta_digest[:8].hex())
            else:
                net.trace.add(t_v, net.local(v, t_v), v, "output-mismatch", self.label,
                              "final", 0, theta_digest[:8].hex())
        return InstanceResult(
            params, self.states, outputs, assembly, liveness, True, bits, theta_digest,
            canonical,
        )


def _dedup_rows(rows: list[int], senders: list[int]) -> list[int]:
    seen, out = set(), []
    for i in rows:
        if senders[i] not in seen:
            seen.add(senders[i])
            out.append(i)
    return out


def synchronize(net: Network, chain_id: bytes, entropy: bytes, committee: float,
                initial_skew: float, rng) -> InstanceResult:
    """Bootstrap: agree on "start"; certificate arrival resets every clock.

    Clocks begin with arbitrary offsets up to initial_skew (a coarse prior
    synchronization); after the reset, honest skew is bounded by the
    diffusion spread of final votes.
    """
    net.offsets = np.asarray(rng.uniform(0.0, initial_skew, net.n), dtype=np.float64)
    inst = engine.CobInstanceId(chain_id, 0, -1, "synchronization_setup")
    params = CobParams(inst, 1, entropy, net.registry, committee)
    observations = [[b"start"] for _ in range(net.n)]
    runner = InstanceRunner(net, params, observations, net.offsets.copy())
    result = runner.run()
    if not result.certified:
        raise mbba.LivenessError("synchronization setup failed to certify")
    net.offsets = result.assembly_times.copy()
    for v in range(net.n):
        net.trace.add(float(net.offsets[v]), 0.0, v, "clock-reset", "setup", "final", 0, "")
    return result
