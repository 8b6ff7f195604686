"""Seed-derived committee selection with verifiable proofs.

Each node is selected for a protocol step independently with probability
tau/N, by comparing a keyed hash of the step seed against an integer
threshold.  The construction is a pseudo-VRF: output = H(secret, seed),
deterministic per (seed, node) and uniform across distinct seeds, so
committee sizes are binomial exactly as the analysis assumes.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import crypto
from .crypto import KeyRegistry

_TWO64 = 1 << 64


@dataclass(frozen=True)
class SortitionSeed:
    """Identifies one selection context: (round, step) within a protocol instance."""

    round_id: int
    step_id: int
    context_tag: bytes
    epoch_entropy: bytes

    def __post_init__(self):
        if self.round_id < 0 or self.step_id < 0:
            raise ValueError("round_id and step_id must be non-negative")
        if len(self.epoch_entropy) != 32:
            raise ValueError("epoch_entropy must be 32 bytes")

    def encode(self) -> bytes:
        return (
            self.round_id.to_bytes(8, "big")
            + self.step_id.to_bytes(8, "big")
            + len(self.context_tag).to_bytes(2, "big")
            + self.context_tag
            + self.epoch_entropy
        )


@dataclass(frozen=True)
class SortitionProof:
    node_id: int
    pseudo_vrf_output: bytes
    signature: bytes

    def encode(self) -> bytes:
        return self.node_id.to_bytes(4, "big") + self.pseudo_vrf_output + self.signature


PROOF_BYTES = 4 + 32 + crypto.SIG_SIZE


def _check_params(expected_committee: float, population: int):
    if population <= 0:
        raise ValueError("population must be positive")
    if not expected_committee > 0:
        raise ValueError("expected committee size must be positive")
    if expected_committee > population:
        raise ValueError("expected committee size cannot exceed the population")


def selection_threshold(expected_committee: float, population: int) -> int:
    """Integer threshold t such that P(u64 output < t) = tau/N exactly for integral tau."""
    _check_params(expected_committee, population)
    return int(expected_committee * _TWO64) // population


def draw(
    seed: SortitionSeed,
    node_id: int,
    registry: KeyRegistry,
    expected_committee: float,
    population: int,
) -> SortitionProof | None:
    """Return a proof iff this node is selected for the step, else None."""
    _check_params(expected_committee, population)
    secret = registry.secret(node_id)
    seed_bytes = seed.encode()
    output = crypto.keyed_digest(secret, b"sortition", seed_bytes)
    if crypto.u64_from(output) >= selection_threshold(expected_committee, population):
        return None
    sig = crypto.sign(secret, b"sortition-proof" + seed_bytes + output)
    return SortitionProof(node_id, output, sig)


def verify(
    seed: SortitionSeed,
    proof: SortitionProof,
    registry: KeyRegistry,
    expected_committee: float,
    population: int,
) -> bool:
    """True iff draw() at the claimed node would have produced exactly this proof."""
    try:
        _check_params(expected_committee, population)
    except ValueError:
        return False
    if not 0 <= proof.node_id < registry.num_nodes:
        return False
    secret = registry.secret(proof.node_id)
    seed_bytes = seed.encode()
    expected = crypto.keyed_digest(secret, b"sortition", seed_bytes)
    if expected != proof.pseudo_vrf_output:
        return False
    if crypto.u64_from(expected) >= selection_threshold(expected_committee, population):
        return False
    return registry.verify(
        proof.node_id, b"sortition-proof" + seed_bytes + expected, proof.signature
    )


def committee(
    seed: SortitionSeed,
    registry: KeyRegistry,
    expected_committee: float,
    population: int,
) -> dict[int, SortitionProof]:
    """Proofs for every selected node; simulator-side convenience over per-node draw."""
    out = {}
    for node in range(population):
        proof = draw(seed, node, registry, expected_committee, population)
        if proof is not None:
            out[node] = proof
    return out
