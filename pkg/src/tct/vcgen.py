"""Weave straight-line code with hypotheses and properties into a Boogie VC.

Layout of an emitted program::

    <axiom library>                    data/axioms.bpl, byte for byte
    <extra function declarations>      only for evmmul/evmdiv/... when used
    <globals>                          referenced state variables and parameters
    procedure straightline_code ()
    modifies ...;
    {
      <locals: tx_origin, entry_contract, temps>
      // def-vars                     scalar state named in the hypothesis
      // hypothesis                   one assume per top-level conjunct
      // insert invariant of entry contract
      <body>
      // (post) insert invariant of entry contract
      // postconditions
    }

Every global carries a ``where`` clause bounding it to its word range.
"""

from __future__ import annotations

import json
import os
import re
import shlex
import subprocess
import sys
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from . import speclang
from .concolic import ADDR, BOOL, StraightLine, render_stmt
from .manifest import ContractManifest, FunctionAbi, StorageVar
from .words import keccak256

AXIOM_FILE = "axioms.bpl"

_EXTRA_FUNCTIONS = {
    "evmmul": (
        "function evmmul(a,b:uint256) returns (uint256);\n"
        "axiom (forall a,b: uint256 :: Zero<=a && Zero<=b && a*b < TwoE256 ==> evmmul(a,b) == a*b);\n"
    ),
    "evmdiv": (
        "function evmdiv(a,b:uint256) returns (uint256);\n"
        "axiom (forall a,b: uint256 :: Zero<=a && a<TwoE256 && Zero<b && b<TwoE256 ==> evmdiv(a,b) == a div b);\n"
        "axiom (forall a: uint256 :: evmdiv(a,Zero) == Zero);\n"
    ),
    "evmand": "function evmand(a,b:uint256) returns (uint256);\n",
    "evmor": "function evmor(a,b:uint256) returns (uint256);\n",
}


_ZERO_BOUND = re.compile(r"^Zero <= (\w+)$")


class VcError(Exception):
    pass


class UnqualifiedVariable(VcError):
    pass


def axiom_library() -> str:
    return (resources.files("tct") / "data" / AXIOM_FILE).read_text()


@dataclass
class VcProgram:
    preamble: str
    extra_functions: list[str]
    globals: list[tuple[str, str, str]]  # (name, type, where)
    locals: list[tuple[str, str]]
    defvars: list[tuple[str, str, str]]
    hyp: list[str]
    inv_pre: list[tuple[str, list[str]]]  # (section comment, assumes)
    body: list[str]
    inv_post: list[tuple[str, list[str]]]
    post: list[str]
    body_kinds: list[str] = field(default_factory=list)


_SORT_TYPE = {"uint": "uint256", ADDR: "address", BOOL: "bool"}


def _global_decl(cls: str, var: StorageVar) -> tuple[str, str, str]:
    name = f"{cls}.{var.name}"
    keys = ["address"] + list(var.key_types)
    typ = " ".join(f"[{k}]" for k in keys) + f" {var.value_type}"
    bound = "TwoE160" if var.value_type == "address" else "TwoE256"
    binders = [f"k{i}" for i in range(len(keys))]
    sel = name + "".join(f"[{b}]" for b in binders)
    where = (f"(forall {', '.join(f'{b}:{k}' for b, k in zip(binders, keys))} :: "
             f"Zero <= {sel} && {sel} < {bound})")
    return name, typ, where


def _scalar_decl(name: str, typ: str) -> tuple[str, str, str]:
    bound = "TwoE160" if typ == "address" else "TwoE256"
    return name, typ, f"Zero <= {name} && {name} < {bound}"


def weave(
    body: StraightLine,
    manifests: dict[int, ContractManifest],
    entry: FunctionAbi,
    hypothesis: speclang.Expr | str,
    concrete_names: dict[str, int] | None = None,
) -> VcProgram:
    """Combine ``body`` with the hypothesis, touched-class invariants and postconditions.

    ``concrete_names`` maps address-valued parameters and derived names to
    their values in the generating transaction; it is used only to find the
    contract class behind ``X.var`` references.
    """
    by_name = {m.name: m for m in manifests.values()}
    if body.entry_class not in by_name:
        raise UnqualifiedVariable(f"no manifest for entry class {body.entry_class}")
    for (cls, var) in body.globals_used:
        if cls not in by_name or by_name[cls].var(var) is None:
            raise UnqualifiedVariable(f"{cls}.{var} has no manifest entry")

    concrete_names = concrete_names or {}

    def class_vars(cls: str) -> dict[str, speclang.ClassVar]:
        m = by_name.get(cls)
        if m is None:
            raise speclang.UnboundName(f"unknown contract class {cls}")
        return m.class_vars()

    def class_of(name: str) -> str | None:
        addr = concrete_names.get(name)
        m = manifests.get(addr) if addr is not None else None
        return m.name if m else None

    derived = dict(entry.declared_names())
    params = dict(entry.params)
    lowered = speclang.Lowered()

    # derived names become def-vars assigned from their defining expressions
    derived_defs: list[tuple[str, str, str]] = []
    if entry.assignments:
        ctx0 = speclang.LoweringContext(body.entry_class, "entry_contract", params, class_vars, class_of, {})
        for text in entry.assignments:
            name, expr = speclang.parse_assignment(text)
            if name not in derived:
                raise speclang.UnboundName(f"assignment to undeclared name {name!r}")
            tmp = speclang.Lowered()
            low = speclang._Lowerer(ctx0, "invariant-pre", tmp)
            derived_defs.append((name, derived[name], low.lower(expr).text))
            lowered.globals_used |= tmp.globals_used
            lowered.defvars.extend(d for d in tmp.defvars if d not in lowered.defvars)

    ctx = speclang.LoweringContext(body.entry_class, "entry_contract", params, class_vars, class_of, derived)
    hyp_out = speclang.lower_to_vc(hypothesis, "hypothesis", ctx, lowered)
    # a lower bound of zero on a word-typed name is implied by its where clause
    word_names = set(params) | {n for n, _, _ in lowered.defvars}
    hyp = [text for _, text in hyp_out.statements
           if not (m := _ZERO_BOUND.match(text)) or m.group(1) not in word_names]

    inv_pre: list[tuple[str, list[str]]] = []
    inv_post: list[tuple[str, list[str]]] = []
    entry_node_text = "entry_contract"
    for cls, ref_node, _addr in body.classes:
        m = by_name[cls]
        if not m.invariants:
            continue
        ref = entry_node_text if cls == body.entry_class and ref_node.kind == "entry" else _ref_text(ref_node)
        cctx = speclang.LoweringContext(cls, ref, params if ref == entry_node_text else {}, class_vars, class_of,
                                        derived if ref == entry_node_text else {})
        pre = speclang.Lowered(defvars=lowered.defvars, snapshots=lowered.snapshots, globals_used=lowered.globals_used)
        post = speclang.Lowered(defvars=lowered.defvars, snapshots=lowered.snapshots, globals_used=lowered.globals_used)
        for text in m.invariants:
            speclang.lower_to_vc(text, "invariant-pre", cctx, pre)
            speclang.lower_to_vc(text, "invariant-post", cctx, post)
        label = "entry contract" if ref == entry_node_text else f"{cls} at {ref}"
        inv_pre.append((f"insert invariant of {label}", [t for _, t in pre.statements]))
        inv_post.append((f"(post) insert invariant of {label}", [t for _, t in post.statements]))

    post_out = speclang.Lowered(defvars=lowered.defvars, snapshots=lowered.snapshots, globals_used=lowered.globals_used)
    for text in entry.postconditions:
        speclang.lower_to_vc(text, "postcondition", ctx, post_out)
    post = [t for _, t in post_out.statements]

    # globals: referenced state, then parameters (declared in Boogie as globals)
    used: dict[tuple[str, str], StorageVar] = dict(body.globals_used)
    for cls, var in sorted(lowered.globals_used):
        used.setdefault((cls, var), by_name[cls].var(var))
    globals_ = [_global_decl(cls, used[(cls, var)]) for cls, var in sorted(used)]
    globals_ += [_scalar_decl(name, typ) for name, typ in body.params]

    locals_ = [("tx_origin", "address"), ("entry_contract", "address")]
    locals_ += [(name, _SORT_TYPE[sort]) for name, sort in body.temps]

    defvars = [(n, t, init) for n, t, init in derived_defs]
    defvars += [(n, t, init) for n, t, init in lowered.defvars]
    defvars += [(n, t, init) for n, t, init in lowered.snapshots]

    extra = [_EXTRA_FUNCTIONS[f] for f in sorted(body.functions_used) if f in _EXTRA_FUNCTIONS]
    return VcProgram(
        preamble=axiom_library(),
        extra_functions=extra,
        globals=globals_,
        locals=locals_,
        defvars=defvars,
        hyp=hyp,
        inv_pre=inv_pre,
        body=[render_stmt(s) for s in body.statements],
        inv_post=inv_post,
        post=post,
        body_kinds=[s.kind for s in body.statements],
    )


def _ref_text(node) -> str:
    if node.kind == "mask":
        node = node.children[0]
    if node.temp:
        return node.temp
    if node.kind in ("env", "entry", "param"):
        return node.data
    if node.kind == "const":
        return str(node.value)
    raise UnqualifiedVariable(f"cannot name contract reference {node!r}")


def emit_text(vc: VcProgram) -> str:
    out: list[str] = [vc.preamble.rstrip("\n"), ""]
    if vc.extra_functions:
        out += [f.rstrip("\n") for f in vc.extra_functions] + [""]
    for name, typ, where in vc.globals:
        out.append(f"var {name}: {typ} where {where};")
    out.append("")
    out.append("procedure straightline_code ()")
    out.append("modifies " + ", ".join(g[0] for g in vc.globals) + ";" if vc.globals else "")
    out.append("{")
    tx_where = {"tx_origin": "Zero <= tx_origin && tx_origin < TwoE160",
                "entry_contract": "Zero <= entry_contract && entry_contract < TwoE160"}
    for name, typ in vc.locals:
        w = tx_where.get(name)
        out.append(f"  var {name}: {typ}" + (f" where {w};" if w else ";"))
    out.append("")
    if vc.defvars:
        out.append("  // def-vars")
        for name, typ, _ in vc.defvars:
            out.append(f"  var {name}: {typ};")
        for name, _, init in vc.defvars:
            out.append(f"  {name} := {init};")
        out.append("")
    out.append("  // hypothesis")
    for h in vc.hyp:
        out.append(f"  assume({h});")
    out.append("")
    for comment, lines in vc.inv_pre:
        out.append(f"  // {comment}")
        out += [f"  assume({t});" for t in lines]
        out.append("")
    for stmt, kind in zip(vc.body, vc.body_kinds):
        out.append(f"  {stmt}")
        if kind in ("assume", "store"):
            out.append("")
    if vc.body and vc.body_kinds[-1] not in ("assume", "store"):
        out.append("")
    for comment, lines in vc.inv_post:
        out.append(f"  // {comment}")
        out += [f"  assert({t});" for t in lines]
    if vc.post:
        out.append("  // postconditions")
        out += [f"  assert({t});" for t in vc.post]
    out.append("}")
    return "\n".join(out) + "\n"


def post_declaration_lines(vc_text: str) -> int:
    """Lines after the last local declaration, up to and including the closing brace."""
    lines = vc_text.rstrip("\n").split("\n")
    start = lines.index("{") if "{" in lines else next(i for i, l in enumerate(lines) if l.strip() == "{")
    last_decl = start
    for i in range(start + 1, len(lines)):
        if lines[i].strip().startswith("var "):
            last_decl = i
    return len(lines) - 1 - last_decl


def assert_count(vc_text: str) -> int:
    return sum(1 for line in vc_text.splitlines() if line.strip().startswith("assert("))


# ------------------------------------------------------------------- verify


@dataclass(frozen=True)
class Verdict:
    outcome: str  # valid | invalid | out_of_prover_gas | bridge_error
    failing_assert: int | None = None
    detail: str = ""

    def to_json(self) -> dict:
        d = {"outcome": self.outcome}
        if self.failing_assert is not None:
            d["failing_assert"] = self.failing_assert
        if self.detail:
            d["detail"] = self.detail
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Verdict":
        return cls(d["outcome"], d.get("failing_assert"), d.get("detail", ""))


VALID = "valid"
INVALID = "invalid"
OUT_OF_GAS = "out_of_prover_gas"
BRIDGE_ERROR = "bridge_error"


@dataclass
class VerifierConfig:
    """Which backend proves VCs.

    backend: ``command`` (external Boogie-compatible program; ``{file}`` in
    the command is replaced by the VC path, otherwise the path is appended),
    ``recorded`` (look up keccak256 of the VC text in a JSON fixture), or
    ``z3`` (the bundled checker, run as a subprocess).
    """

    backend: str = "recorded"
    command: str | None = None
    fixtures: str | None = None
    timeout: float = 60.0
    record: str | None = None  # append live verdicts to this fixture file

    @classmethod
    def from_env(cls) -> "VerifierConfig":
        backend = os.environ.get("TCT_VERIFIER", "recorded")
        if backend not in ("recorded", "z3", "command"):
            return cls("command", command=backend)
        return cls(backend, command=os.environ.get("TCT_VERIFIER_CMD"),
                   fixtures=os.environ.get("TCT_VERDICT_FIXTURES"),
                   record=os.environ.get("TCT_VERDICT_RECORD"))


def vc_digest(vc_text: str) -> str:
    return "0x" + keccak256(vc_text.encode()).hex()


def default_fixture_path() -> Path:
    return Path(str(resources.files("tct") / "data" / "recorded_verdicts.json"))


_BOOGIE_SUMMARY = re.compile(r"finished with (\d+) verified, (\d+) errors?")
_BOOGIE_ERROR = re.compile(r"\((\d+),\d+\): Error")


def parse_boogie_output(output: str, vc_text: str) -> Verdict:
    m = _BOOGIE_SUMMARY.search(output)
    if "timed out" in output.lower() or "out of resource" in output.lower():
        return Verdict(OUT_OF_GAS, detail="verifier timeout")
    if not m:
        return Verdict(BRIDGE_ERROR, detail=output.strip()[-500:] or "no verifier summary line")
    verified, errors = int(m.group(1)), int(m.group(2))
    if errors == 0 and verified > 0:
        return Verdict(VALID)
    lines = vc_text.splitlines()
    first = None
    for em in _BOOGIE_ERROR.finditer(output):
        lineno = int(em.group(1))
        idx = sum(1 for l in lines[:lineno] if l.strip().startswith("assert("))
        first = idx if first is None else min(first, idx)
    return Verdict(INVALID, failing_assert=first)


def _run_command(argv: list[str], vc_text: str, timeout: float) -> Verdict:
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "vc.bpl"
        path.write_text(vc_text)
        argv = [a.replace("{file}", str(path)) for a in argv]
        if str(path) not in argv:
            argv.append(str(path))
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout)
        except FileNotFoundError as exc:
            return Verdict(BRIDGE_ERROR, detail=f"verifier not found: {exc.filename}")
        except subprocess.TimeoutExpired:
            return Verdict(OUT_OF_GAS, detail=f"no verdict within {timeout:g}s")
        return parse_boogie_output(proc.stdout + proc.stderr, vc_text)


def record_verdict(path: str | Path, vc_text: str, verdict: Verdict) -> None:
    """Add one digest -> verdict entry to a fixture file (sorted, stable JSON)."""
    path = Path(path)
    table = json.loads(path.read_text()) if path.exists() and path.stat().st_size else {}
    table[vc_digest(vc_text)] = verdict.to_json()
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(table, indent=1, sort_keys=True) + "\n")
    os.replace(tmp, path)


def verify(vc_text: str, config: VerifierConfig | None = None) -> Verdict:
    config = config or VerifierConfig.from_env()
    verdict = _verify(vc_text, config)
    if config.record and config.backend != "recorded" and verdict.outcome != BRIDGE_ERROR:
        record_verdict(config.record, vc_text, verdict)
    return verdict


def _verify(vc_text: str, config: VerifierConfig) -> Verdict:
    if config.backend == "recorded":
        path = Path(config.fixtures) if config.fixtures else default_fixture_path()
        try:
            table = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            return Verdict(BRIDGE_ERROR, detail=f"cannot read verdict fixtures: {exc}")
        entry = table.get(vc_digest(vc_text))
        if entry is None:
            return Verdict(BRIDGE_ERROR, detail=f"no recorded verdict for {vc_digest(vc_text)}")
        return Verdict.from_json(entry)
    if config.backend == "z3":
        argv = [sys.executable, "-m", "tct.z3check", "--timeout", str(config.timeout)]
        return _run_command(argv, vc_text, config.timeout + 30)
    if config.backend == "command":
        if not config.command:
            return Verdict(BRIDGE_ERROR, detail="no verifier command configured")
        return _run_command(shlex.split(config.command), vc_text, config.timeout)
    return Verdict(BRIDGE_ERROR, detail=f"unknown verifier backend {config.backend!r}")
