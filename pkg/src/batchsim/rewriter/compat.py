"""Backward-compatibility checks between a contract and its rewritten form."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Mapping, Sequence

from batchsim.errors import AccessDenied, Revert
from batchsim.rewriter.interp import execute
from batchsim.rewriter.ir import ContractIR
from batchsim.rewriter.rewrite import twin_name


def _outcome(c, function, caller, state, args, from_override=None, now=0):
    try:
        tr = execute(c, function, caller, state, args, from_override=from_override, now=now)
    except (Revert, AccessDenied) as exc:
        return ("revert", type(exc).__name__), dict(state)
    return ("ok", tr.output), tr.end_state


def check_equivalence(
    c: ContractIR,
    c_byd: ContractIR,
    function: str,
    owner: int,
    state: Mapping[tuple, int],
    args: Sequence[int],
    dispatcher: int,
    now: int = 0,
) -> bool:
    """True iff owner calling ``function`` on ``c`` matches the Dispatcher calling its twin.

    A function without a twin (it never touches msg.sender) is compared
    against itself called by the Dispatcher.
    """
    ref = _outcome(c, function, owner, state, args, now=now)
    name = twin_name(function)
    if c_byd.has_function(name):
        got = _outcome(c_byd, name, dispatcher, state, args, from_override=owner, now=now)
    else:
        got = _outcome(c_byd, function, dispatcher, state, args, now=now)
    return ref == got


@dataclass(frozen=True)
class ProgramCall:
    function: str
    owner: int
    args: tuple[int, ...]
    now: int = 0


@dataclass
class FuzzReport:
    combinations: int
    equal: int
    divergent: list[tuple[bool, ...]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.divergent and self.equal == self.combinations


def _run(c, program, routing, state, dispatcher):
    st = dict(state)
    outputs = []
    for call, batched in zip(program, routing):
        name = twin_name(call.function)
        if batched and c.has_function(name):
            out, st = _outcome(c, name, dispatcher, st, call.args, from_override=call.owner, now=call.now)
        else:
            out, st = _outcome(c, call.function, call.owner, st, call.args, now=call.now)
        outputs.append(out)
    return st, outputs


def fuzz_routing(
    program: Sequence[ProgramCall],
    c: ContractIR,
    c_byd: ContractIR,
    state: Mapping[tuple, int],
    dispatcher: int,
) -> FuzzReport:
    """Route each call externally or through the Dispatcher, over all 2^N choices.

    Every routing must reach the state that running the whole program
    externally against the original contract reaches.
    """
    if len(program) > 4:
        raise ValueError("test programs are limited to 4 calls")
    ref_state, ref_out = _run(c, program, (False,) * len(program), state, dispatcher)
    report = FuzzReport(combinations=2 ** len(program), equal=0)
    for routing in product((False, True), repeat=len(program)):
        st, out = _run(c_byd, program, routing, state, dispatcher)
        if st == ref_state and out == ref_out:
            report.equal += 1
        else:
            report.divergent.append(routing)
    return report
