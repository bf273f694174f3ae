"""Command line interface: ``tct asm|run|trace|translate|prove|repo|sim|demo``."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import protocol
from .asm import AsmError, assemble, disassemble_text
from .concolic import check_against_concrete, replay
from .theorems import Repository, RepositoryError, Theorem, load_theorem_file
from .vcgen import (BRIDGE_ERROR, INVALID, OUT_OF_GAS, VALID, VerifierConfig, emit_text, post_declaration_lines,
                    verify, weave)
from .vm import WorldState, dump_trace, execute_transaction, load_trace
from .words import fmt_address

VERDICT_EXIT = {VALID: 0, INVALID: 4, BRIDGE_ERROR: 5, OUT_OF_GAS: 8}

scenario_option = click.option("--scenario", "scenario_path", type=click.Path(exists=True, dir_okay=False),
                               default=None, help="Scenario JSON (default: bundled MultiVulnToken scenario).")
verifier_option = click.option("--verifier", type=click.Choice(["recorded", "z3", "command"]), default=None,
                               help="Verifier backend (default: $TCT_VERIFIER or recorded).")
verifier_cmd_option = click.option("--verifier-cmd", default=None, help="External verifier command line.")
timeout_option = click.option("--timeout", type=float, default=60.0, show_default=True,
                              help="Prover time limit in seconds.")


def _scenario(path: str | None) -> protocol.Scenario:
    return protocol.load_scenario(path or protocol.default_scenario_path())


def _verifier(backend: str | None, cmd: str | None, timeout: float) -> VerifierConfig:
    cfg = VerifierConfig.from_env()
    if backend:
        cfg.backend = backend
    if cmd:
        cfg.command = cmd
        cfg.backend = backend or "command"
    cfg.timeout = timeout
    return cfg


def _tx(sc: protocol.Scenario, label: str):
    try:
        return sc.transaction(sc.step(label))
    except KeyError as exc:
        raise click.UsageError(str(exc)) from exc


def _balances(sc: protocol.Scenario, world: WorldState, holders: list[int]) -> list[str]:
    tok = sc.contract("MultiVulnToken")
    return [f"  balances[{fmt_address(h)}] = {world.read(tok.address, 'balances', (h,))}" for h in holders]


@click.group()
@click.version_option(package_name="tct")
def main() -> None:
    """Theorem-carrying transactions on a desk-scale EVM."""


# ------------------------------------------------------------------ asm

@main.command("asm")
@click.argument("source", type=click.File("r"))
@click.option("-o", "--output", type=click.File("w"), default="-", help="Hex output (default stdout).")
@click.option("-d", "--disassemble", is_flag=True, help="Treat SOURCE as hex bytecode and print mnemonics.")
def asm_cmd(source, output, disassemble: bool) -> None:
    """Assemble a .asm file to hex bytecode (or disassemble with -d)."""
    text = source.read()
    try:
        if disassemble:
            output.write(disassemble_text(bytes.fromhex(text.strip().removeprefix("0x"))))
        else:
            output.write(assemble(text).hex() + "\n")
    except (AsmError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc


# ------------------------------------------------------------------ run / trace

@main.command("run")
@scenario_option
@click.argument("label")
@click.option("--state-out", type=click.Path(dir_okay=False), help="Write the post-state snapshot JSON here.")
def run_cmd(scenario_path, label: str, state_out) -> None:
    """Execute scenario step LABEL directly (no theorem checks) and print the receipt."""
    sc = _scenario(scenario_path)
    world = sc.world()
    tx = _tx(sc, label)
    post, receipt = execute_transaction(world, tx)
    click.echo(f"status: {receipt.status}" + (f" ({receipt.reason})" if receipt.reason else ""))
    click.echo(f"path_hash: 0x{receipt.path_hash.hex()}")
    click.echo(f"gas_used: {receipt.gas_used}")
    click.echo(f"events: {len(receipt.trace)}")
    if state_out:
        Path(state_out).write_text(post.to_json())
    sys.exit(0 if receipt.committed else protocol.EXIT_CODES[protocol.EXECUTION_REVERTED])


@main.command("trace")
@scenario_option
@click.argument("label")
@click.option("-o", "--output", type=click.File("w"), default="-")
def trace_cmd(scenario_path, label: str, output) -> None:
    """Dump the execution trace of scenario step LABEL (one event per line)."""
    sc = _scenario(scenario_path)
    _, receipt = execute_transaction(sc.world(), _tx(sc, label))
    output.write(dump_trace(receipt.trace))


# ------------------------------------------------------------------ translate / prove

@main.command("translate")
@scenario_option
@click.argument("trace_file", type=click.File("r"))
@click.option("--label", required=True, help="Scenario step that produced the trace (supplies the tx).")
@click.option("--hypothesis", required=True, help="Hypothesis over parameters and storage.")
@click.option("-o", "--output", type=click.File("w"), default="-")
@click.option("--check/--no-check", default=True, show_default=True,
              help="Check the straight-line code against the concrete run first.")
def translate_cmd(scenario_path, trace_file, label: str, hypothesis: str, output, check: bool) -> None:
    """Turn a trace into a Boogie VC."""
    sc = _scenario(scenario_path)
    world = sc.world()
    tx = _tx(sc, label)
    trace = load_trace(trace_file.read())
    line = replay(trace, world.manifests, tx)
    if check:
        report = check_against_concrete(line, world, tx)
        if not report.ok:
            raise click.ClickException("straight-line code disagrees with the trace: " + "; ".join(report.mismatches))
    fn = world.manifests[tx.to].function(tx.selector)
    text = emit_text(weave(line, world.manifests, fn, hypothesis, dict(zip(fn.param_names, tx.args))))
    output.write(text)
    click.echo(f"post-declaration lines: {post_declaration_lines(text)}", err=True)


@main.command("prove")
@click.argument("vc_file", type=click.File("r"))
@verifier_option
@verifier_cmd_option
@timeout_option
def prove_cmd(vc_file, verifier, verifier_cmd, timeout) -> None:
    """Verify a VC file and print the verdict as JSON."""
    verdict = verify(vc_file.read(), _verifier(verifier, verifier_cmd, timeout))
    click.echo(json.dumps(verdict.to_json()))
    sys.exit(VERDICT_EXIT[verdict.outcome])


# ------------------------------------------------------------------ repo

@main.group("repo")
def repo_group() -> None:
    """Manage a theorem repository file."""


repo_option = click.option("--repo", "repo_path", type=click.Path(dir_okay=False), required=True)


@repo_group.command("add")
@repo_option
@click.argument("theorem_file", type=click.Path(exists=True, dir_okay=False))
def repo_add(repo_path, theorem_file) -> None:
    """Add a theorem (exchange-format JSON) without proving it."""
    try:
        repo = Repository.load(repo_path)
        digest = repo.add(load_theorem_file(theorem_file))
        repo.persist()
    except RepositoryError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo("0x" + digest.hex())


@repo_group.command("list")
@repo_option
def repo_list(repo_path) -> None:
    """List theorems: hash, entry, path count, hypothesis."""
    try:
        repo = Repository.load(repo_path)
    except RepositoryError as exc:
        raise click.ClickException(str(exc)) from exc
    for digest, th in repo:
        click.echo(f"0x{digest.hex()}\t{fmt_address(th.address)}:0x{th.selector.hex()}\t"
                   f"{len(th.path_hashes)}\t{th.hypothesis}")


@repo_group.command("find")
@repo_option
@scenario_option
@click.argument("label")
def repo_find(repo_path, scenario_path, label) -> None:
    """Print hashes of theorems whose hypothesis holds for scenario step LABEL."""
    sc = _scenario(scenario_path)
    world = sc.world()
    tx = _tx(sc, label)
    repo = Repository.load(repo_path)
    hits = repo.find_applicable((tx.to, tx.selector), protocol.eval_context(world, tx))
    for h in hits:
        click.echo("0x" + h.hex())
    sys.exit(0 if hits else protocol.EXIT_CODES[protocol.NO_APPLICABLE_THEOREM])


# ------------------------------------------------------------------ sim

def _node(sc: protocol.Scenario, repo_path, cfg: VerifierConfig) -> protocol.Node:
    repo = Repository.load(repo_path) if repo_path else Repository()
    return protocol.Node(sc.world(), repo, cfg)


def _preload(sim: protocol.Simulator, sc: protocol.Scenario, names: tuple[str, ...]) -> dict[str, bytes]:
    """Prove the named scenario theorems through flow B; return name -> hash."""
    out: dict[str, bytes] = {}
    for spec in sc.theorems:
        if spec["name"] in names:
            res = protocol.prove_theorem(sim, sc, spec)
            if not res.ok:
                raise click.ClickException(f"could not establish theorem {spec['name']}: {res.outcome}")
            out[spec["name"]] = res.theorem_hash
    missing = set(names) - set(out)
    if missing:
        raise click.UsageError(f"unknown theorem name(s): {', '.join(sorted(missing))}")
    return out


@main.group("sim")
def sim_group() -> None:
    """Run one protocol flow on a scenario."""


def _sim_common(f):
    for opt in (scenario_option, verifier_option, verifier_cmd_option, timeout_option,
                click.option("--repo", "repo_path", type=click.Path(dir_okay=False), default=None,
                             help="Repository file to start from and save to."),
                click.option("--preload", multiple=True, help="Scenario theorem to prove first (repeatable).")):
        f = opt(f)
    return f


def _finish(result: protocol.FlowResult, node: protocol.Node, repo_path) -> None:
    click.echo(result.log.text(), nl=False)
    click.echo(f"outcome: {result.outcome}")
    if repo_path:
        node.repo.persist(repo_path)
    sys.exit(result.exit_code)


@sim_group.command("flowA")
@_sim_common
@click.argument("label")
@click.option("--theorem", "theorem_name", default=None, help="Attach this preloaded theorem instead of asking the service.")
def sim_flow_a(scenario_path, verifier, verifier_cmd, timeout, repo_path, preload, label, theorem_name) -> None:
    """Flow A: find a theorem for LABEL and submit."""
    sc = _scenario(scenario_path)
    node = _node(sc, repo_path, _verifier(verifier, verifier_cmd, timeout))
    sim = protocol.Simulator(node)
    names = tuple(preload) + ((theorem_name,) if theorem_name and theorem_name not in preload else ())
    hashes = _preload(sim, sc, names)
    _finish(sim.flow_a(_tx(sc, label), hashes.get(theorem_name) if theorem_name else None), node, repo_path)


@sim_group.command("flowB")
@_sim_common
@click.argument("label")
@click.option("--hypothesis", required=True)
def sim_flow_b(scenario_path, verifier, verifier_cmd, timeout, repo_path, preload, label, hypothesis) -> None:
    """Flow B: prove HYPOTHESIS on the trace of LABEL and store the theorem."""
    sc = _scenario(scenario_path)
    node = _node(sc, repo_path, _verifier(verifier, verifier_cmd, timeout))
    sim = protocol.Simulator(node)
    _preload(sim, sc, tuple(preload))
    tx = _tx(sc, label)
    receipt = node.test_run(tx)
    candidate = Theorem(tx.to, tx.selector, protocol.canonical_hypothesis(hypothesis), (receipt.path_hash,))
    _finish(sim.flow_b(tx, receipt.trace, candidate), node, repo_path)


@sim_group.command("flowC")
@_sim_common
@click.argument("label")
@click.option("--hypothesis", default=None, help="Default: the step's own hypothesis field.")
def sim_flow_c(scenario_path, verifier, verifier_cmd, timeout, repo_path, preload, label, hypothesis) -> None:
    """Flow C: test-run LABEL, prove HYPOTHESIS on it, then submit."""
    sc = _scenario(scenario_path)
    node = _node(sc, repo_path, _verifier(verifier, verifier_cmd, timeout))
    sim = protocol.Simulator(node)
    _preload(sim, sc, tuple(preload))
    hyp = hypothesis or sc.step(label).get("hypothesis")
    if not hyp:
        raise click.UsageError("no --hypothesis given and the step has none")
    _finish(sim.flow_c(_tx(sc, label), hyp), node, repo_path)


# ------------------------------------------------------------------ demo

@main.group("demo")
def demo_group() -> None:
    """Reproduce the two MultiVulnToken attacks, with and without protection."""


@demo_group.command("attack1")
@scenario_option
@click.option("--protected", is_flag=True, help="Submit through flow A with the bounded transferProxy theorem.")
@verifier_option
def demo_attack1(scenario_path, protected: bool, verifier) -> None:
    """Integer overflow in transferProxy."""
    sc = _scenario(scenario_path)
    item = sc.step("attack1")
    tx = sc.transaction(item)
    holders = [sc.resolve(item["args"][0]), sc.resolve(item["args"][1])]
    if not protected:
        world = sc.world()
        post, receipt = execute_transaction(world, tx)
        click.echo(f"unprotected transferProxy: {receipt.status}")
        for text in _balances(sc, post, holders):
            click.echo(text)
        sys.exit(0 if receipt.committed else protocol.EXIT_CODES[protocol.EXECUTION_REVERTED])
    node = protocol.Node(sc.world(), verifier=_verifier(verifier, None, 60.0))
    sim = protocol.Simulator(node)
    hashes = _preload(sim, sc, ("transferProxy-bounded",))
    before = node.world
    result = sim.flow_a(tx, hashes["transferProxy-bounded"])
    click.echo(result.log.text(), nl=False)
    click.echo(f"outcome: {result.outcome}; state unchanged: {node.world == before}")
    sys.exit(result.exit_code)


@demo_group.command("attack2")
@scenario_option
@click.option("--protected", is_flag=True, help="Submit through flow A with the non-reentrant clear theorem.")
@verifier_option
def demo_attack2(scenario_path, protected: bool, verifier) -> None:
    """Reentrancy through clear()."""
    sc = _scenario(scenario_path)
    item = sc.step("attack2")
    tx = sc.transaction(item)
    attacker = sc.resolve(item["origin"])
    holders = [attacker, sc.resolve(item["args"][0])]
    if not protected:
        post, receipt = execute_transaction(sc.world(), tx)
        click.echo(f"unprotected clear: {receipt.status}")
        for text in _balances(sc, post, holders):
            click.echo(text)
        sys.exit(0 if receipt.committed else protocol.EXIT_CODES[protocol.EXECUTION_REVERTED])
    node = protocol.Node(sc.world(), verifier=_verifier(verifier, None, 60.0))
    sim = protocol.Simulator(node)
    hashes = _preload(sim, sc, ("clear-nonreentrant",))
    before = node.world
    result = sim.flow_a(tx, hashes["clear-nonreentrant"])
    click.echo(result.log.text(), nl=False)
    click.echo(f"outcome: {result.outcome}; state unchanged: {node.world == before}")
    sys.exit(result.exit_code)


if __name__ == "__main__":
    main()
