import numpy as np
import pytest

from cobsim import crypto, sortition
from cobsim.crypto import KeyRegistry
from cobsim.sortition import SortitionProof, SortitionSeed


def seed_for(r=0, s=0, entropy=b"\x07" * 32):
    return SortitionSeed(r, s, b"ctx", entropy)


def test_full_committee_selects_everyone(registry):
    seed = seed_for()
    for node in range(registry.num_nodes):
        proof = sortition.draw(seed, node, registry, registry.num_nodes, registry.num_nodes)
        assert proof is not None
        assert sortition.verify(seed, proof, registry, registry.num_nodes, registry.num_nodes)


def test_zero_committee_rejected(registry):
    with pytest.raises(ValueError):
        sortition.draw(seed_for(), 0, registry, 0, registry.num_nodes)
    with pytest.raises(ValueError):
        sortition.draw(seed_for(), 0, registry, 10, 0)
    with pytest.raises(ValueError):
        sortition.draw(seed_for(), 0, registry, 50, 40)


def test_draw_deterministic(registry):
    seed = seed_for(3, 1)
    a = sortition.draw(seed, 5, registry, 20, registry.num_nodes)
    b = sortition.draw(seed, 5, registry, 20, registry.num_nodes)
    assert a == b


def test_committee_size_statistics():
    # N=1000, tau=100: mean within [95, 105], every sample within [50, 160].
    # The bounds correspond to binomial tails far below 1e-8 per draw.
    n, tau, trials = 1000, 100, 400
    registry = KeyRegistry(n, crypto.digest(b"stats"))
    sizes = []
    for t in range(trials):
        seed = SortitionSeed(t, 0, b"stats", crypto.digest(b"e", t.to_bytes(4, "big")))
        size = len(sortition.committee(seed, registry, tau, n))
        sizes.append(size)
        assert 50 <= size <= 160
    assert 95 <= np.mean(sizes) <= 105


def test_verify_rejects_bit_flips(registry):
    seed = seed_for(1, 2)
    tau, n = registry.num_nodes, registry.num_nodes
    proof = sortition.draw(seed, 7, registry, tau, n)
    flipped_out = bytes([proof.pseudo_vrf_output[0] ^ 1]) + proof.pseudo_vrf_output[1:]
    assert not sortition.verify(seed, SortitionProof(7, flipped_out, proof.signature), registry, tau, n)
    flipped_sig = bytes([proof.signature[0] ^ 1]) + proof.signature[1:]
    assert not sortition.verify(seed, SortitionProof(7, proof.pseudo_vrf_output, flipped_sig), registry, tau, n)
    assert not sortition.verify(seed, SortitionProof(8, proof.pseudo_vrf_output, proof.signature), registry, tau, n)


def test_proof_not_replayable_across_steps(registry):
    tau, n = registry.num_nodes, registry.num_nodes
    for r in range(3):
        for s in range(3):
            proof = sortition.draw(seed_for(r, s), 3, registry, tau, n)
            for r2 in range(3):
                for s2 in range(3):
                    ok = sortition.verify(seed_for(r2, s2), proof, registry, tau, n)
                    assert ok == (r == r2 and s == s2)


def test_mutation_fuzz_soundness(registry):
    rng = np.random.default_rng(0)
    seed = seed_for(9, 1)
    tau, n = 30, registry.num_nodes
    proofs = [p for p in (sortition.draw(seed, v, registry, tau, n) for v in range(n)) if p]
    assert proofs
    for proof in proofs:
        for _ in range(10):
            which = rng.integers(0, 3)
            out = bytearray(proof.pseudo_vrf_output)
            sig = bytearray(proof.signature)
            node = proof.node_id
            if which == 0:
                out[rng.integers(0, len(out))] ^= 1 << rng.integers(0, 8)
            elif which == 1:
                sig[rng.integers(0, len(sig))] ^= 1 << rng.integers(0, 8)
            else:
                node = (node + 1 + int(rng.integers(0, n - 1))) % n
            mutated = SortitionProof(node, bytes(out), bytes(sig))
            if mutated != proof:
                assert not sortition.verify(seed, mutated, registry, tau, n)


def test_entropy_bit_resamples_selection():
    # Flipping one entropy bit re-rolls the selected set: overlap statistics
    # must look like independent sampling, not a perturbation.
    n, tau = 200, 60
    registry = KeyRegistry(n, crypto.digest(b"resample"))
    p = tau / n
    agree = 0
    trials = 300
    for t in range(trials):
        base = bytearray(crypto.digest(b"ent", t.to_bytes(4, "big")))
        s1 = SortitionSeed(0, 0, b"x", bytes(base))
        base[0] ^= 1
        s2 = SortitionSeed(0, 0, b"x", bytes(base))
        c1 = set(sortition.committee(s1, registry, tau, n))
        c2 = set(sortition.committee(s2, registry, tau, n))
        agree += len(c1 & c2)
    # Under independence the expected per-trial overlap is n*p^2.
    expected = trials * n * p * p
    sd = (trials * n * p * p * (1 - p * p)) ** 0.5
    assert abs(agree - expected) < 5 * sd


def test_independence_across_nodes():
    # Joint selection frequency of node pairs factorizes.
    n, tau = 50, 20
    registry = KeyRegistry(n, crypto.digest(b"pairs"))
    trials = 2000
    sel = np.zeros((trials, n), dtype=bool)
    for t in range(trials):
        seed = SortitionSeed(t, 0, b"ind", crypto.digest(b"e", t.to_bytes(4, "big")))
        for v in sortition.committee(seed, registry, tau, n):
            sel[t, v] = True
    p = tau / n
    joint = (sel[:, 0] & sel[:, 1]).mean()
    se = (p * p * (1 - p * p) / trials) ** 0.5
    assert abs(joint - p * p) < 5 * se
