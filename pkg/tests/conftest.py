import pytest

from tct import protocol
from tct.vcgen import VerifierConfig
from tct.vm import execute_transaction

PROXY_HYP = "0 <= totalSupply < 2^255 && 0 <= _value < 2^255 && 0 <= _fee < 2^255"
NONREENTRANT_HYP = "0 <= totalSupply < 2^255 && _to != msg.sender"
HARMLESS_HYP = "balances[msg.sender] == 0"


@pytest.fixture(scope="session")
def scenario():
    return protocol.load_scenario(protocol.default_scenario_path())


@pytest.fixture
def world(scenario):
    return scenario.world()


@pytest.fixture
def recorded():
    return VerifierConfig("recorded")


@pytest.fixture
def sim(scenario, recorded):
    return protocol.Simulator(protocol.Node(scenario.world(), verifier=recorded))


@pytest.fixture(scope="session")
def runs(scenario):
    """label -> (tx, pre-state, post-state, receipt) for every scripted step."""
    out = {}
    for item in scenario.script:
        pre = scenario.world()
        tx = scenario.transaction(item)
        post, receipt = execute_transaction(pre, tx)
        out[item["label"]] = (tx, pre, post, receipt)
    return out


def preload(sim, scenario, *names):
    hashes = {}
    for spec in scenario.theorems:
        if spec["name"] in names:
            res = protocol.prove_theorem(sim, scenario, spec)
            assert res.ok, (spec["name"], res.outcome, res.log.text())
            hashes[spec["name"]] = res.theorem_hash
    return hashes
