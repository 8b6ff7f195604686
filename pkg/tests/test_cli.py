import json

import pytest

from cobsim import cli, scenario


def write_config(tmp_path, name, data):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


SIM = {
    "mode": "simulate", "n": 24, "byzantine_fraction": 0.2, "adversary": "crash",
    "committee": 24, "m": 3, "observation_plan": "unanimous", "seed": 4,
}
CHAIN = {
    "mode": "chain", "n": 33, "byzantine_fraction": 0.27, "adversary": "mixed",
    "epochs": 2, "num_shards": 4, "num_slots": 5, "slot_duration": 40.0, "seed": 5,
}


def test_config_unknown_field_rejected():
    with pytest.raises(scenario.ConfigError):
        scenario.ScenarioConfig.from_dict({"mode": "simulate", "bogus": 1})


def test_config_byzantine_guard():
    with pytest.raises(scenario.ConfigError) as err:
        scenario.ScenarioConfig.from_dict({**SIM, "byzantine_fraction": 0.4})
    assert "unsafe_byzantine" in str(err.value)
    cfg = scenario.ScenarioConfig.from_dict(
        {**SIM, "byzantine_fraction": 0.4, "unsafe_byzantine": True}
    )
    assert cfg.byzantine_fraction == 0.4


def test_simulate_exit_codes(tmp_path):
    good = write_config(tmp_path, "good.json", SIM)
    out = str(tmp_path / "trace.jsonl")
    assert cli.main(["simulate", "--config", good, "--out", out]) == cli.EXIT_OK
    assert (tmp_path / "trace.jsonl").exists()

    malformed = tmp_path / "bad.json"
    malformed.write_text("{not json")
    assert cli.main(["simulate", "--config", str(malformed)]) == cli.EXIT_CONFIG

    bad_field = write_config(tmp_path, "bad2.json", {**SIM, "committee": 0})
    assert cli.main(["simulate", "--config", bad_field]) == cli.EXIT_CONFIG

    unsafe = write_config(tmp_path, "unsafe.json", {**SIM, "byzantine_fraction": 0.4})
    assert cli.main(["simulate", "--config", unsafe]) == cli.EXIT_CONFIG
    # the override flag permits the violation experiment; with 40% of nodes
    # crashed the quorum is unreachable, which is a liveness failure, not a
    # config failure
    assert cli.main(["simulate", "--config", unsafe, "--unsafe-byzantine"]) == cli.EXIT_LIVENESS


def test_chain_verify_roundtrip(tmp_path):
    cfg = write_config(tmp_path, "chain.json", CHAIN)
    dump = str(tmp_path / "dump.json")
    reg = str(tmp_path / "reg.json")
    assert cli.main(["chain", "--config", cfg, "--out", dump, "--registry-out", reg]) == cli.EXIT_OK

    data = json.loads((tmp_path / "dump.json").read_text())
    assert len(data["blocks"]) == 10
    last_slots = [b for b in data["blocks"] if b["slot"] == 5]
    assert all(b["epoch_data"] is not None for b in last_slots)

    assert cli.main(["verify", "--chain", dump, "--registry", reg]) == cli.EXIT_OK

    # single byte corruption -> exit 1
    data["blocks"][4]["shard_digests"][1] = bytes(32).hex()
    corrupted = tmp_path / "bad_dump.json"
    corrupted.write_text(json.dumps(data))
    assert cli.main(["verify", "--chain", str(corrupted), "--registry", reg]) == cli.EXIT_VERIFY

    # supporter removal below quorum -> exit 1
    data2 = json.loads((tmp_path / "dump.json").read_text())
    data2["blocks"][0]["certificate"]["supporters"] = \
        data2["blocks"][0]["certificate"]["supporters"][:5]
    thinned = tmp_path / "thin_dump.json"
    thinned.write_text(json.dumps(data2))
    assert cli.main(["verify", "--chain", str(thinned), "--registry", reg]) == cli.EXIT_VERIFY


def test_chain_crash_creator_continues(tmp_path):
    cfg = write_config(tmp_path, "chain2.json",
                       {**CHAIN, "adversary": "crash", "epochs": 1, "seed": 6})
    dump = str(tmp_path / "dump2.json")
    assert cli.main(["chain", "--config", cfg, "--out", dump]) == cli.EXIT_OK
    data = json.loads((tmp_path / "dump2.json").read_text())
    assert len(data["blocks"]) == 5
    blanks = sum(1 for b in data["blocks"] for d in b["shard_digests"] if d is None)
    assert blanks > 0  # crashed creators show up as blanked shard digests


def test_bench_cli(tmp_path):
    out = str(tmp_path / "costs.csv")
    jout = str(tmp_path / "costs.json")
    assert cli.main(["bench", "--shards", "1:100", "--out", out, "--json-out", jout]) == cli.EXIT_OK
    lines = (tmp_path / "costs.csv").read_text().strip().splitlines()
    assert len(lines) == 201  # header + 2 rows per shard count

    assert cli.main(["bench", "--shards", ""]) == cli.EXIT_CONFIG
    bad_model = tmp_path / "model.json"
    bad_model.write_text(json.dumps({"sig_bytes": -5}))
    assert cli.main(["bench", "--model", str(bad_model), "--shards", "1:4"]) == cli.EXIT_CONFIG


def test_identical_invocations_identical_outputs(tmp_path):
    cfg = write_config(tmp_path, "det.json", SIM)
    a, b = str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl")
    assert cli.main(["simulate", "--config", cfg, "--out", a]) == cli.EXIT_OK
    assert cli.main(["simulate", "--config", cfg, "--out", b]) == cli.EXIT_OK
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_seed_override_changes_runs(tmp_path):
    cfg = write_config(tmp_path, "seed.json", SIM)
    a, b = str(tmp_path / "sa.jsonl"), str(tmp_path / "sb.jsonl")
    assert cli.main(["simulate", "--config", cfg, "--seed", "100", "--out", a]) == cli.EXIT_OK
    assert cli.main(["simulate", "--config", cfg, "--seed", "101", "--out", b]) == cli.EXIT_OK
    assert (tmp_path / "sa.jsonl").read_bytes() != (tmp_path / "sb.jsonl").read_bytes()
