"""Deterministic interpreter for contract IR with gas metering."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from batchsim.costmodel import DEFAULT_MODEL, GasCostModel, GasOp, meter
from batchsim.errors import AccessDenied, Revert
from batchsim.primitives import MAX_WORD, digest, word_bytes
from batchsim.rewriter.ir import (
    Assign,
    BinOp,
    Const,
    ContractIR,
    FunctionIR,
    Hash,
    If,
    InternalCall,
    MsgSender,
    Not,
    Now,
    OnlyCaller,
    Require,
    Return,
    StorageRead,
    StorageWrite,
    Transfer,
    Var,
)

Storage = dict[tuple, int]

# ether balances live in the same state map under this pseudo-variable
ETHER = "__ether__"
MAX_CALL_DEPTH = 64


@dataclass
class ExecTrace:
    end_state: Storage
    output: int | None
    gas: int
    ops: list[GasOp] = field(default_factory=list)


class _Returned(Exception):
    def __init__(self, value):
        self.value = value


def _u256(v: int) -> int:
    if not 0 <= v <= MAX_WORD:
        raise Revert(f"arithmetic out of range: {v}")
    return v


_OPS = {
    "+": lambda a, b: _u256(a + b),
    "-": lambda a, b: _u256(a - b),
    "*": lambda a, b: _u256(a * b),
    "==": lambda a, b: int(a == b),
    "!=": lambda a, b: int(a != b),
    "<": lambda a, b: int(a < b),
    "<=": lambda a, b: int(a <= b),
    ">": lambda a, b: int(a > b),
    ">=": lambda a, b: int(a >= b),
    "and": lambda a, b: int(bool(a) and bool(b)),
    "or": lambda a, b: int(bool(a) or bool(b)),
}


class _Frame:
    __slots__ = ("contract", "sender", "self_addr", "now", "state", "ops", "depth")

    def __init__(self, contract, sender, self_addr, now, state, ops):
        self.contract = contract
        self.sender = sender
        self.self_addr = self_addr
        self.now = now
        self.state = state
        self.ops = ops
        self.depth = 0

    def eval(self, e, env):
        t = type(e)
        if t is Const:
            return e.value
        if t is Var:
            try:
                return env[e.name]
            except KeyError:
                raise Revert(f"unbound name {e.name!r}") from None
        if t is MsgSender:
            return self.sender
        if t is Now:
            return self.now
        if t is BinOp:
            return _OPS[e.op](self.eval(e.left, env), self.eval(e.right, env))
        if t is Not:
            return int(not self.eval(e.operand, env))
        if t is Hash:
            vals = [self.eval(a, env) for a in e.args]
            self.ops.append(GasOp("sha3", len(vals)))
            return int.from_bytes(digest(b"".join(word_bytes(v) for v in vals)), "big")
        raise TypeError(f"unknown expression {e!r}")

    def run(self, body, env):
        for s in body:
            t = type(s)
            if t is Assign:
                env[s.target] = self.eval(s.value, env)
            elif t is Require:
                if not self.eval(s.cond, env):
                    raise Revert(s.message or "require failed")
            elif t is OnlyCaller:
                if self.sender != s.address:
                    raise AccessDenied(f"caller {self.sender:#x} is not {s.address:#x}")
            elif t is StorageRead:
                key = (s.var, *(self.eval(k, env) for k in s.keys))
                self.ops.append(GasOp("sload", 1))
                env[s.target] = self.state.get(key, 0)
            elif t is StorageWrite:
                key = (s.var, *(self.eval(k, env) for k in s.keys))
                new = _u256(self.eval(s.value, env))
                old = self.state.get(key, 0)
                self.ops.append(GasOp("sset" if old == 0 and new != 0 else "reset", 1))
                if new:
                    self.state[key] = new
                else:
                    self.state.pop(key, None)
            elif t is InternalCall:
                args = [self.eval(a, env) for a in s.args]
                out = self.call(self.contract.function(s.name), args)
                if s.target is not None:
                    env[s.target] = out if out is not None else 0
            elif t is Transfer:
                to, amount = self.eval(s.to, env), self.eval(s.amount, env)
                src, dst = (ETHER, self.self_addr), (ETHER, to)
                if self.state.get(src, 0) < amount:
                    raise Revert("insufficient contract ether")
                self.ops.append(GasOp("call", 0))
                self.state[src] = self.state.get(src, 0) - amount
                self.state[dst] = self.state.get(dst, 0) + amount
            elif t is Return:
                raise _Returned(self.eval(s.value, env))
            elif t is If:
                self.run(s.then if self.eval(s.cond, env) else s.orelse, env)
            else:
                raise TypeError(f"unknown statement {s!r}")

    def call(self, fn: FunctionIR, args: Sequence[int]):
        if len(args) != len(fn.params):
            raise Revert(f"{fn.name} expects {len(fn.params)} args, got {len(args)}")
        self.depth += 1
        if self.depth > MAX_CALL_DEPTH:
            raise Revert("call depth exceeded")
        env = dict(zip(fn.param_names, args))
        try:
            for use in fn.modifiers_applied:
                mod = self.contract.modifier(use.name)
                margs = [self.eval(a, env) for a in use.args]
                menv = dict(zip(mod.param_names, margs))
                try:
                    self.run(mod.body, menv)
                except _Returned:
                    pass
            try:
                self.run(fn.body, env)
            except _Returned as r:
                return r.value
            return None
        finally:
            self.depth -= 1


def execute(
    c: ContractIR,
    function: str,
    caller: int,
    state: Mapping[tuple, int],
    args: Sequence[int] = (),
    *,
    from_override: int | None = None,
    self_addr: int = 0,
    now: int = 0,
    model: GasCostModel = DEFAULT_MODEL,
) -> ExecTrace:
    """Run ``function`` as called by ``caller`` on a copy of ``state``.

    ``from_override`` is prepended to ``args``, the convention for calling a
    rewritten twin on behalf of an account. Raises Revert or AccessDenied
    on failure; the input state is never modified. Only external functions
    can be entered this way.
    """
    fn = c.function(function)
    if fn.visibility != "external":
        raise Revert(f"{function} is not externally callable")
    if from_override is not None:
        args = (from_override, *args)
    ops: list[GasOp] = []
    frame = _Frame(c, caller, self_addr, now, dict(state), ops)
    try:
        out = frame.call(fn, list(args))
    except (Revert, AccessDenied) as exc:
        exc.gas = meter(ops, model)
        exc.ops = ops
        raise
    return ExecTrace(frame.state, out, meter(ops, model), ops)
