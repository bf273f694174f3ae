"""Regenerate src/tct/data/recorded_verdicts.json with the bundled z3 checker.

Every VC the test suite and the demos send to the verifier is produced here
and proved live; the resulting digest -> verdict table lets the suite run
without a solver.  Run after any change to VC emission:

    python tools/record_verdicts.py
"""

from __future__ import annotations

import sys
import time

from tct import protocol
from tct.theorems import Theorem
from tct.vcgen import VerifierConfig, default_fixture_path

# (scenario step, hypothesis) pairs proved through flow B besides the scenario's theorems
EXTRA = [
    ("attack2", "0 <= totalSupply < 2^255 && _to != msg.sender"),
    ("attack2", "balances[msg.sender] == 0"),
    ("attack2-empty", "balances[msg.sender] == 0"),
    ("benign-proxy", "0 <= _value"),
    ("attack1", "0 <= totalSupply < 2^255"),
]


def main() -> int:
    path = default_fixture_path()
    path.write_text("{}\n")
    cfg = VerifierConfig("z3", record=str(path))
    sc = protocol.load_scenario(protocol.default_scenario_path())
    sim = protocol.Simulator(protocol.Node(sc.world(), verifier=cfg, default_allowance=10**9))
    jobs = [(spec["witness"], spec["hypothesis"]) for spec in sc.theorems] + EXTRA
    for label, hyp in jobs:
        tx = sc.transaction(sc.step(label))
        receipt = sim.node.test_run(tx)
        cand = Theorem(tx.to, tx.selector, protocol.canonical_hypothesis(hyp), (receipt.path_hash,))
        t0 = time.monotonic()
        res = sim.flow_b(tx, receipt.trace, cand)
        print(f"{label:16s} {res.verdict.outcome if res.verdict else res.outcome:10s} "
              f"{time.monotonic() - t0:6.2f}s  {hyp}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
