"""In-process simulation of the issuer / Web-API service / node protocol.

Flow A: the service test-runs a transaction, picks a stored theorem whose
hypothesis holds and whose path hashes contain the run's path hash, and the
issuer submits the transaction with that theorem hash attached.  The node
commits only if the theorem exists, its hypothesis holds on the node's own
state, and the executed path hash is one of the theorem's.

Flow B: a candidate theorem arrives with the code trace it was derived from.
The node checks the trace's path hash, charges prover gas, replays the trace
into a VC and stores the theorem if the verifier says valid.

Flow C: flow B on a trace the node produces itself by test-running the
transaction, followed by flow A with the new theorem.

Every step is appended to a :class:`ProtocolLog`; the log contains no timing
or randomness, so replaying a scenario reproduces it line for line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import speclang
from .concolic import ReplayError, replay
from .manifest import ContractManifest, FunctionAbi, load_manifest
from .theorems import Repository, Theorem, canonical_hypothesis
from .vcgen import BRIDGE_ERROR, INVALID, OUT_OF_GAS, VALID, Verdict, VerifierConfig, emit_text, verify, weave
from .vm import Receipt, Transaction, TraceEvent, WorldState, execute_transaction, path_hash_of
from .words import fmt_address, hex_to_int

# outcome -> process exit code
COMMITTED = "Committed"
ACCEPTED = "Accepted"
HYPOTHESIS_FAILED = "HypothesisFailed"
PATH_HASH_MISMATCH = "PathHashMismatch"
VERDICT_INVALID = "VerdictInvalid"
BRIDGE_FAILURE = "BridgeError"
NO_APPLICABLE_THEOREM = "NoApplicableTheorem"
THEOREM_NOT_IN_REPO = "TheoremNotInRepo"
EXECUTION_REVERTED = "ExecutionReverted"
OUT_OF_PROVER_GAS = "OutOfProverGas"

EXIT_CODES = {
    COMMITTED: 0,
    ACCEPTED: 0,
    HYPOTHESIS_FAILED: 2,
    PATH_HASH_MISMATCH: 3,
    VERDICT_INVALID: 4,
    BRIDGE_FAILURE: 5,
    NO_APPLICABLE_THEOREM: 6,
    THEOREM_NOT_IN_REPO: 6,
    EXECUTION_REVERTED: 7,
    OUT_OF_PROVER_GAS: 8,
}

PROVER_GAS_PER_PROOF = 100
DEFAULT_PROVER_ALLOWANCE = 1_000


# ------------------------------------------------------------------- wire

def encode_attachment(theorem_hash: bytes) -> bytes:
    """The theorem hash field carried by a transaction."""
    if len(theorem_hash) != 32:
        raise ValueError("theorem hash must be 32 bytes")
    return bytes(theorem_hash)


def encode_reply(theorem_hash: bytes) -> bytes:
    """The service's answer to a theorem lookup."""
    if len(theorem_hash) != 32:
        raise ValueError("theorem hash must be 32 bytes")
    return bytes(theorem_hash)


# -------------------------------------------------------------------- log

@dataclass(frozen=True)
class LogRecord:
    flow: str
    step: int
    actor: str
    event: str
    detail: str = ""

    def line(self) -> str:
        return f"{self.flow}\t{self.step}\t{self.actor}\t{self.event}\t{self.detail}".rstrip("\t")


@dataclass
class ProtocolLog:
    records: list[LogRecord] = field(default_factory=list)

    def add(self, flow: str, actor: str, event: str, detail: str = "") -> None:
        step = 1 + sum(1 for r in self.records if r.flow == flow)
        self.records.append(LogRecord(flow, step, actor, event, detail))

    def text(self) -> str:
        return "".join(r.line() + "\n" for r in self.records)

    def events(self) -> list[str]:
        return [r.event for r in self.records]

    def wire_bytes(self) -> int:
        """Bytes of protocol payload that travelled with the transaction."""
        total = 0
        for r in self.records:
            if r.event in ("ReplyTheorem", "SubmitTx") and "bytes=" in r.detail:
                total += int(r.detail.split("bytes=")[1].split()[0])
        return total


@dataclass
class FlowResult:
    outcome: str
    log: ProtocolLog
    theorem_hash: bytes | None = None
    receipt: Receipt | None = None
    verdict: Verdict | None = None
    vc_text: str | None = None

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.outcome]

    @property
    def ok(self) -> bool:
        return self.outcome in (COMMITTED, ACCEPTED)


# ---------------------------------------------------------------- helpers

def entry_function(world: WorldState, tx: Transaction) -> tuple[ContractManifest, FunctionAbi]:
    m = world.manifests.get(tx.to)
    if m is None:
        raise KeyError(f"no manifest for {fmt_address(tx.to)}")
    return m, m.function(tx.selector)


def eval_context(world: WorldState, tx: Transaction) -> speclang.EvalContext:
    """Hypothesis context: parameters, then derived names, then ``world`` state."""
    _, fn = entry_function(world, tx)
    params = dict(zip(fn.param_names, tx.args))
    ctx = speclang.EvalContext(params, world, tx.to, tx.origin, tx.origin)
    for text in fn.assignments:
        name, expr = speclang.parse_assignment(text)
        ctx.derive(name, speclang.eval_value(expr, ctx))
    return ctx


def _hx(b: bytes | None) -> str:
    return "0x" + b.hex() if b else "-"


def _tx_text(world: WorldState, tx: Transaction) -> str:
    try:
        m, fn = entry_function(world, tx)
        name = f"{m.name}.{fn.name}"
    except KeyError:
        name = f"{fmt_address(tx.to)}:0x{tx.selector.hex()}"
    args = ",".join(hex(a) for a in tx.args)
    return f"{name}({args}) from {fmt_address(tx.origin)}"


# ------------------------------------------------------------------ node

class Node:
    """Holds the committed world state and the theorem repository."""

    def __init__(self, world: WorldState, repo: Repository | None = None,
                 verifier: VerifierConfig | None = None,
                 prover_gas_per_proof: int = PROVER_GAS_PER_PROOF,
                 default_allowance: int = DEFAULT_PROVER_ALLOWANCE):
        self.world = world
        self.repo = repo if repo is not None else Repository()
        self.verifier = verifier or VerifierConfig.from_env()
        self.prover_gas_per_proof = prover_gas_per_proof
        self.default_allowance = default_allowance
        self.allowances: dict[int, int] = {}
        self.verifier_calls = 0

    def test_run(self, tx: Transaction) -> Receipt:
        """Execute ``tx`` without committing anything."""
        _, receipt = execute_transaction(self.world, tx)
        return receipt

    def allowance(self, submitter: int) -> int:
        return self.allowances.get(submitter, self.default_allowance)

    def submit(self, tx: Transaction, log: ProtocolLog, flow: str = "A") -> FlowResult:
        """The node side of flow A: check theorem, hypothesis, then path hash."""
        th = self.repo.get(tx.theorem_hash) if tx.theorem_hash else None
        if th is None or th.entry != (tx.to, tx.selector):
            log.add(flow, "node", "Reject", f"{THEOREM_NOT_IN_REPO} {_hx(tx.theorem_hash)}")
            return FlowResult(THEOREM_NOT_IN_REPO, log, tx.theorem_hash)
        try:
            holds = speclang.eval_hypothesis(th.hypothesis, eval_context(self.world, tx))
        except speclang.SpecError as exc:
            log.add(flow, "node", "Reject", f"{HYPOTHESIS_FAILED} {exc}")
            return FlowResult(HYPOTHESIS_FAILED, log, tx.theorem_hash)
        if not holds:
            log.add(flow, "node", "Reject", f"{HYPOTHESIS_FAILED} {th.hypothesis}")
            return FlowResult(HYPOTHESIS_FAILED, log, tx.theorem_hash)
        log.add(flow, "node", "HypothesisHolds", th.hypothesis)
        post, receipt = execute_transaction(self.world, tx)
        if not receipt.committed:
            log.add(flow, "node", "Reject", f"{EXECUTION_REVERTED} {receipt.reason}")
            return FlowResult(EXECUTION_REVERTED, log, tx.theorem_hash, receipt)
        if receipt.path_hash not in th.path_hashes:
            log.add(flow, "node", "Revert", f"{PATH_HASH_MISMATCH} {_hx(receipt.path_hash)}")
            return FlowResult(PATH_HASH_MISMATCH, log, tx.theorem_hash, receipt)
        self.world = post
        log.add(flow, "node", "Commit", f"path={_hx(receipt.path_hash)} gas={receipt.gas_used}")
        return FlowResult(COMMITTED, log, tx.theorem_hash, receipt)

    def prove(self, tx: Transaction, trace: list[TraceEvent], candidate: Theorem,
              log: ProtocolLog, flow: str = "B") -> FlowResult:
        """The node side of flow B."""
        ph = path_hash_of(trace)
        if len(candidate.path_hashes) != 1 or candidate.path_hashes[0] != ph:
            log.add(flow, "node", "Reject", f"{PATH_HASH_MISMATCH} trace={_hx(ph)}")
            return FlowResult(PATH_HASH_MISMATCH, log)
        if candidate.entry != (tx.to, tx.selector):
            log.add(flow, "node", "Reject", f"{PATH_HASH_MISMATCH} theorem entry differs from trace entry")
            return FlowResult(PATH_HASH_MISMATCH, log)
        left = self.allowance(tx.origin)
        if left < self.prover_gas_per_proof:
            log.add(flow, "node", "Reject", f"{OUT_OF_PROVER_GAS} allowance={left}")
            return FlowResult(OUT_OF_PROVER_GAS, log)
        self.allowances[tx.origin] = left - self.prover_gas_per_proof
        log.add(flow, "node", "ChargeProverGas", f"{self.prover_gas_per_proof} left={left - self.prover_gas_per_proof}")
        try:
            _, fn = entry_function(self.world, tx)
            line = replay(trace, self.world.manifests, tx)
            vc = emit_text(weave(line, self.world.manifests, fn, candidate.hypothesis,
                                 dict(zip(fn.param_names, tx.args))))
        except (ReplayError, speclang.SpecError, KeyError) as exc:
            verdict = Verdict(BRIDGE_ERROR, detail=f"translation failed: {exc}")
            log.add(flow, "node", "Reject", f"{BRIDGE_FAILURE} {verdict.detail}")
            return FlowResult(BRIDGE_FAILURE, log, verdict=verdict)
        self.verifier_calls += 1
        verdict = verify(vc, self.verifier)
        log.add(flow, "node", "Verdict", verdict.outcome + (f" assert={verdict.failing_assert}"
                                                             if verdict.failing_assert is not None else ""))
        if verdict.outcome == VALID:
            h = self.repo.add_theorem(candidate.entry, candidate.hypothesis, ph)
            log.add(flow, "node", "StoreTheorem", _hx(h))
            return FlowResult(ACCEPTED, log, h, verdict=verdict, vc_text=vc)
        outcome = {INVALID: VERDICT_INVALID, OUT_OF_GAS: OUT_OF_PROVER_GAS}.get(verdict.outcome, BRIDGE_FAILURE)
        log.add(flow, "node", "Reject", outcome)
        return FlowResult(outcome, log, verdict=verdict, vc_text=vc)


class WebApiService:
    """Finds theorems for issuers.  Reads node state; never commits."""

    def __init__(self, node: Node, test_run: bool = True):
        self.node = node
        self.test_run = test_run

    def find_theorem(self, tx: Transaction) -> bytes | None:
        repo = self.node.repo
        entry = (tx.to, tx.selector)
        if not repo.for_entry(entry):
            return None
        try:
            candidates = repo.find_applicable(entry, eval_context(self.node.world, tx))
        except (speclang.SpecError, KeyError):
            return None
        if not self.test_run:
            return candidates[0] if candidates else None
        receipt = self.node.test_run(tx)
        if not receipt.committed:
            return None
        for h in candidates:
            if receipt.path_hash in repo.theorems[h].path_hashes:
                return h
        return None


# ----------------------------------------------------------------- flows

class Simulator:
    """One node, one service, any number of issuers, all in process."""

    def __init__(self, node: Node, service_test_run: bool = True):
        self.node = node
        self.service = WebApiService(node, service_test_run)

    def flow_a(self, tx: Transaction, theorem_hash: bytes | None = None,
               log: ProtocolLog | None = None) -> FlowResult:
        """Submit ``tx``; ask the service for a theorem unless one is given."""
        log = log if log is not None else ProtocolLog()
        world = self.node.world
        if theorem_hash is None:
            log.add("A", "issuer", "RequestTheorem", _tx_text(world, tx))
            theorem_hash = self.service.find_theorem(tx)
            if theorem_hash is None:
                log.add("A", "service", "Reject", NO_APPLICABLE_THEOREM)
                return FlowResult(NO_APPLICABLE_THEOREM, log)
            log.add("A", "service", "ReplyTheorem", f"{_hx(theorem_hash)} bytes={len(encode_reply(theorem_hash))}")
        else:
            log.add("A", "issuer", "UseTheorem", _hx(theorem_hash))
        tx = replace(tx, theorem_hash=theorem_hash)
        log.add("A", "issuer", "SubmitTx", f"{_tx_text(world, tx)} bytes={len(encode_attachment(theorem_hash))}")
        return self.node.submit(tx, log)

    def flow_b(self, tx: Transaction, trace: list[TraceEvent], candidate: Theorem,
               log: ProtocolLog | None = None) -> FlowResult:
        log = log if log is not None else ProtocolLog()
        log.add("B", "issuer", "SubmitTheorem",
                f"{_hx(candidate.path_hashes[0] if candidate.path_hashes else None)} {candidate.hypothesis}")
        return self.node.prove(tx, trace, candidate, log)

    def flow_c(self, tx: Transaction, hypothesis: str, log: ProtocolLog | None = None) -> FlowResult:
        """Prove a theorem for ``tx`` from its own test run, then submit via flow A."""
        log = log if log is not None else ProtocolLog()
        hyp = canonical_hypothesis(hypothesis)
        log.add("C", "issuer", "SubmitTxWithHypothesis", f"{_tx_text(self.node.world, tx)} {hyp}")
        try:
            holds = speclang.eval_hypothesis(hyp, eval_context(self.node.world, tx))
        except speclang.SpecError as exc:
            log.add("C", "node", "Reject", f"{HYPOTHESIS_FAILED} {exc}")
            return FlowResult(HYPOTHESIS_FAILED, log)
        if not holds:
            log.add("C", "node", "Reject", f"{HYPOTHESIS_FAILED} {hyp}")
            return FlowResult(HYPOTHESIS_FAILED, log)
        receipt = self.node.test_run(tx)
        if not receipt.committed:
            log.add("C", "node", "Reject", f"{EXECUTION_REVERTED} {receipt.reason}")
            return FlowResult(EXECUTION_REVERTED, log, receipt=receipt)
        log.add("C", "node", "TestRun", f"path={_hx(receipt.path_hash)} events={len(receipt.trace)}")
        candidate = Theorem(tx.to, tx.selector, hyp, (receipt.path_hash,))
        proved = self.node.prove(tx, receipt.trace, candidate, log, flow="C")
        if not proved.ok:
            return proved
        result = self.flow_a(tx, proved.theorem_hash, log)
        result.verdict, result.vc_text = proved.verdict, proved.vc_text
        return result


# -------------------------------------------------------------- scenario

@dataclass
class Scenario:
    """Contracts, initial storage and a transaction script (see docs/formats.md)."""

    manifests: list[ContractManifest]  # one per deployed instance
    storage: list[dict]
    script: list[dict]
    theorems: list[dict]
    path: Path | None = None

    names: list[str] = field(default_factory=list)  # instance names, parallel to manifests

    def __post_init__(self) -> None:
        if not self.names:
            self.names = [m.name for m in self.manifests]

    def world(self) -> WorldState:
        w = WorldState()
        for m in self.manifests:
            w.deploy(m.address, m.bytecode() if m.bytecode_ref else b"", m)
        for item in self.storage:
            m = self.contract(item["contract"])
            keys = [self.resolve(k) for k in item.get("keys", [])]
            w.write_var(m.address, item["var"], self.resolve(item["value"]), *keys)
        return w

    def resolve(self, value) -> int:
        """Integers, hex/decimal strings, ``2^k`` and contract names all become ints."""
        if isinstance(value, int):
            return value
        text = str(value).strip()
        if text in self.names:
            return self.contract(text).address
        if "+" in text:
            return sum(self.resolve(p) for p in text.split("+"))
        if "^" in text:
            base, exp = text.split("^")
            return int(base) ** int(exp)
        return hex_to_int(text)

    def contract(self, name: str) -> ContractManifest:
        """Look up a deployed instance by its scenario name."""
        for inst, m in zip(self.names, self.manifests):
            if inst == name:
                return m
        raise KeyError(name)

    def transaction(self, item: dict) -> Transaction:
        m = self.contract(item["to"])
        fn = m.function(item["function"])
        return Transaction(self.resolve(item["origin"]), m.address, fn.selector,
                           tuple(self.resolve(a) for a in item.get("args", [])))

    def step(self, label: str) -> dict:
        for item in self.script:
            if item.get("label") == label:
                return item
        raise KeyError(f"no script step {label!r}")


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    raw = json.loads(path.read_text())
    manifests, names = [], []
    for c in raw["contracts"]:
        m = load_manifest(path.parent / c["manifest"])
        if "address" in c:  # another instance of the same contract class
            m = replace(m, address=hex_to_int(c["address"]))
        manifests.append(m)
        names.append(c.get("name", m.name))
    if len(set(names)) != len(names) or len({m.address for m in manifests}) != len(manifests):
        raise ValueError(f"{path}: contract instance names and addresses must be unique")
    return Scenario(manifests, raw.get("storage", []), raw.get("script", []), raw.get("theorems", []), path, names)


def default_scenario_path() -> Path:
    from importlib import resources
    return Path(str(resources.files("tct") / "data" / "scenario.json"))


def prove_theorem(sim: Simulator, scenario: Scenario, spec: dict, log: ProtocolLog | None = None) -> FlowResult:
    """Establish a theorem listed in the scenario by test-running its witness transaction (flow B)."""
    tx = scenario.transaction(scenario.step(spec["witness"]))
    receipt = sim.node.test_run(tx)
    candidate = Theorem(tx.to, tx.selector, canonical_hypothesis(spec["hypothesis"]), (receipt.path_hash,))
    return sim.flow_b(tx, receipt.trace, candidate, log)
