"""Scenario configuration: the experiment vocabulary of the simulator.

A scenario is a JSON document, strictly validated; every piece of
randomness in a run flows from the single seed through named sub-streams
(topology, byzantine set, adversary, observations), so any component can
be varied in isolation without disturbing the others.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import chain as chain_mod
from . import crypto, engine, netsim
from .crypto import KeyRegistry


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        self.field_name = field_name
        super().__init__(f"config field {field_name!r}: {message}")


ADVERSARIES = ("honest", "crash", "equivocate", "withhold_then_release",
               "bit_flip_votes", "late_block", "mixed")
TOPOLOGIES = ("complete", "ring", "watts_strogatz", "geometric")
MODES = ("simulate", "chain")


@dataclass
class ScenarioConfig:
    mode: str = "simulate"
    n: int = 100
    byzantine_fraction: float = 0.0
    adversary: str = "honest"
    topology: str = "watts_strogatz"
    topology_params: dict = field(default_factory=dict)
    lam_base: float = 1.0
    lam_per_byte: float = 1e-4
    d_min: float = 0.02
    d_max: float = 0.1
    compute_delta: float = 0.0
    committee: float = 40.0
    committee_final: float | None = None  # None = full population
    setup_committee: float | None = None  # None = full population
    initial_skew: float = 0.5
    m: int = 8
    observation_plan: list | str = "unanimous"
    instances: int = 1
    seed: int = 0
    horizon: float = float("inf")
    unsafe_byzantine: bool = False
    record_receives: bool = False
    ablate_node: int | None = None
    late_block_offset_frac: float = 1.0
    late_block_offset_lambdas: float = -0.5
    # chain mode
    epochs: int = 1
    num_shards: int = 4
    num_slots: int = 10
    chain_committee: float | None = None  # None = full population
    slot_duration: float = 40.0
    alpha: int = 20
    extra_shard_params: int = 1
    block_size: int = 256
    chain_id: str = "cobsim"

    def validate(self):
        def req(cond, fname, msg):
            if not cond:
                raise ConfigError(fname, msg)

        req(self.mode in MODES, "mode", f"must be one of {MODES}")
        req(self.n >= 1, "n", "need at least one node")
        req(0.0 <= self.byzantine_fraction <= 1.0, "byzantine_fraction", "must be in [0, 1]")
        if self.byzantine_fraction >= 1 / 3 and not self.unsafe_byzantine:
            raise ConfigError(
                "byzantine_fraction",
                "fractions >= 1/3 violate the fault assumption; pass unsafe_byzantine "
                "to run a violation experiment",
            )
        req(self.adversary in ADVERSARIES, "adversary", f"must be one of {ADVERSARIES}")
        req(self.topology in TOPOLOGIES, "topology", f"must be one of {TOPOLOGIES}")
        req(self.lam_base > 0, "lam_base", "must be positive")
        req(self.lam_per_byte >= 0, "lam_per_byte", "must be non-negative")
        req(0 <= self.d_min <= self.d_max, "d_min", "need 0 <= d_min <= d_max")
        req(self.d_max > 0, "d_max", "must be positive")
        if self.mode == "simulate":
            req(0 < self.committee <= self.n, "committee", "must be in (0, n]")
            if self.committee_final is not None:
                req(0 < self.committee_final <= self.n, "committee_final", "must be in (0, n]")
            req(self.m >= 1, "m", "need at least one component")
            req(self.instances >= 1, "instances", "need at least one instance")
        req(self.initial_skew >= 0, "initial_skew", "must be non-negative")
        if self.ablate_node is not None:
            req(0 <= self.ablate_node < self.n, "ablate_node", "must be a node id")
        if self.mode == "chain":
            if self.chain_committee is not None:
                req(0 < self.chain_committee <= self.n, "chain_committee", "must be in (0, n]")
            req(self.epochs >= 1, "epochs", "need at least one epoch")
            req(self.num_shards >= 1, "num_shards", "need at least one shard")
            req(self.num_slots >= 1, "num_slots", "need at least one slot")
            req(self.alpha >= 3, "alpha", "layout reserves three general components")
            req(self.extra_shard_params >= 0, "extra_shard_params", "must be non-negative")
            req(self.block_size >= 1, "block_size", "must be positive")
            req(self.slot_duration > 0, "slot_duration", "must be positive")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f for f in cls.__dataclass_fields__}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown field")
        cfg = cls(**data)
        return cfg.validate()

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"not valid JSON: line {exc.lineno} col {exc.colno}")
        if not isinstance(data, dict):
            raise ConfigError("<file>", "top level must be an object")
        return cls.from_dict(data)


def _substream(seed: int, label: bytes) -> np.random.Generator:
    return np.random.default_rng(crypto.u64_from(crypto.digest(label, seed.to_bytes(8, "big", signed=False))))


def byzantine_set(config: ScenarioConfig, seed: int) -> set[int]:
    count = int(config.n * config.byzantine_fraction)
    if count == 0:
        return set()
    rng = _substream(seed, b"byzset")
    return set(rng.choice(config.n, size=count, replace=False).tolist())


def build_strategies(config: ScenarioConfig, byz: set[int]) -> dict[int, netsim.Strategy]:
    if not byz:
        return {}
    if config.adversary == "mixed":
        names = ["crash", "equivocate", "withhold_then_release", "bit_flip_votes"]
        return {
            v: _make_strategy(names[i % len(names)], config)
            for i, v in enumerate(sorted(byz))
        }
    return {v: _make_strategy(config.adversary, config) for v in byz}


def _make_strategy(name: str, config: ScenarioConfig) -> netsim.Strategy:
    if name == "late_block":
        return netsim.LateBlockStrategy(
            config.late_block_offset_frac, config.late_block_offset_lambdas
        )
    return netsim.STRATEGIES[name]()


def build_network(config: ScenarioConfig, seed: int, byz: set[int] | None = None,
                  strategies: dict | None = None) -> netsim.Network:
    byz = byzantine_set(config, seed) if byz is None else byz
    registry = KeyRegistry(config.n, crypto.digest(b"registry", seed.to_bytes(8, "big")))
    topo_seed = int(_substream(seed, b"topology").integers(0, 2**31 - 1))
    adj = netsim.build_topology(config.n, byz, config.topology, config.topology_params, topo_seed)
    trace = netsim.Trace(record_receives=config.record_receives)
    return netsim.Network(
        config.n, byz, adj, registry, seed,
        config.lam_base, config.lam_per_byte, config.d_min, config.d_max,
        strategies if strategies is not None else build_strategies(config, byz),
        trace, config.compute_delta,
    )


# ---------------------------------------------------------------------------
# Observations


def _expand_plan(plan, m: int) -> list[dict]:
    if isinstance(plan, str):
        if plan == "mixed":
            third = max(1, m // 3)
            return [
                {"kind": "unanimous"} if i < third
                else ({"kind": "split"} if i < 2 * third else {"kind": "random"})
                for i in range(m)
            ]
        return [{"kind": plan}] * m
    if len(plan) != m:
        raise ConfigError("observation_plan", f"expected {m} entries, got {len(plan)}")
    return list(plan)


def observation_matrix(config: ScenarioConfig, seed: int) -> list[list[bytes | None]]:
    """Per-node observation vectors from the scenario's observation plan."""
    rng = _substream(seed, b"observations")
    plan = _expand_plan(config.observation_plan, config.m)
    columns = []
    for i, entry in enumerate(plan):
        kind = entry.get("kind", "unanimous")
        if kind == "unanimous":
            value = bytes.fromhex(entry["value"]) if "value" in entry else \
                crypto.digest(b"obs", i.to_bytes(4, "big"), seed.to_bytes(8, "big"))[:8]
            col = [value] * config.n
        elif kind == "bot":
            col = [None] * config.n
        elif kind == "split":
            raw = entry.get("values")
            vals = [bytes.fromhex(v) if v is not None else None for v in raw] if raw else [
                crypto.digest(b"obsA", i.to_bytes(4, "big"))[:8],
                crypto.digest(b"obsB", i.to_bytes(4, "big"))[:8],
            ]
            col = [vals[rng.integers(0, len(vals))] for _ in range(config.n)]
        elif kind == "random":
            width = int(entry.get("alphabet", 3))
            vals = [crypto.digest(b"obsR", i.to_bytes(4, "big"), k.to_bytes(4, "big"))[:8]
                    for k in range(width)]
            col = [vals[rng.integers(0, width)] for _ in range(config.n)]
        else:
            raise ConfigError("observation_plan", f"unknown kind {kind!r} at component {i}")
        columns.append(col)
    return [[columns[i][v] for i in range(config.m)] for v in range(config.n)]


# ---------------------------------------------------------------------------
# Runs


@dataclass
class SimulateResult:
    config: ScenarioConfig
    seed: int
    net: netsim.Network
    results: list[netsim.InstanceResult]
    trace: netsim.Trace

    @property
    def ok(self) -> bool:
        honest = [v for v in range(self.config.n) if v not in self.net.byz]
        for res in self.results:
            if not res.certified:
                return False
            if any(v not in res.outputs for v in honest):
                return False
        return True


def run_simulate(config: ScenarioConfig, seed: int | None = None) -> SimulateResult:
    """Bootstrap the clocks, then run the configured instances in sequence."""
    seed = config.seed if seed is None else seed
    net = build_network(config, seed)
    if config.ablate_node is not None and config.ablate_node not in net.byz:
        net.byz = set(net.byz) | {config.ablate_node}
        net.strategies = dict(net.strategies)
        net.strategies[config.ablate_node] = netsim.CrashStrategy()
        # Ablation silences the node's sends but keeps it relaying, so the
        # delivery fabric (hop counts) is untouched.
    chain_id = config.chain_id.encode()
    entropy = crypto.digest(b"entropy", chain_id, seed.to_bytes(8, "big"))
    rng = _substream(seed, b"clocks")
    setup_committee = config.setup_committee or config.n
    netsim.synchronize(net, chain_id, entropy, setup_committee, config.initial_skew, rng)
    observations = observation_matrix(config, seed)
    results = []
    for k in range(config.instances):
        inst = engine.CobInstanceId(chain_id, 0, k, "slot_timing")
        params = engine.CobParams(
            inst, config.m, entropy, net.registry, config.committee, config.committee_final
        )
        runner = netsim.InstanceRunner(net, params, observations, net.offsets.copy())
        res = runner.run(config.horizon)
        results.append(res)
        if res.certified:
            entropy = crypto.digest(entropy, res.theta_digest)
            net.offsets = res.assembly_times.copy()
    return SimulateResult(config, seed, net, results, net.trace)


def run_chain_scenario(config: ScenarioConfig, seed: int | None = None) -> chain_mod.ChainResult:
    seed = config.seed if seed is None else seed
    if config.mode != "chain":
        raise ConfigError("mode", "chain scenario required")
    net = build_network(config, seed)
    entropy = crypto.digest(b"genesis-cfg", config.chain_id.encode(), seed.to_bytes(8, "big"))
    cfg0 = chain_mod.genesis_config(
        entropy, config.n, config.num_shards, config.num_slots, config.slot_duration,
        config.alpha, config.extra_shard_params,
    )
    return chain_mod.run_chain(
        net, config.chain_id.encode(), config.epochs, cfg0,
        committee=config.chain_committee,
        block_size=config.block_size,
        rng=_substream(seed, b"clocks"),
        setup_skew=config.initial_skew,
        horizon=config.horizon,
    )
