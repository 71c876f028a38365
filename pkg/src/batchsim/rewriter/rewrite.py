"""Source-level rewrite producing Dispatcher-callable ``ByD`` twins.

For every function or modifier that (transitively) depends on
``msg.sender``, a twin named ``<name>ByD`` is added with:

1. an extra leading ``from`` parameter,
2. every ``msg.sender`` reference replaced by ``from``,
3. an ``OnlyCaller(dispatcher)`` guard as the first statement (functions only),
4. calls to other rewritten functions and modifiers routed to their twins
   with ``from`` forwarded.

A function whose first parameter is already named ``from`` (``transferFrom``)
is never twinned; calls into it are kept as they are.
"""

from __future__ import annotations

from dataclasses import replace

from batchsim.errors import RewriteError
from batchsim.primitives import Address
from batchsim.rewriter.ir import (
    Assign,
    BinOp,
    ContractIR,
    FunctionIR,
    Hash,
    If,
    InternalCall,
    ModifierUse,
    MsgSender,
    Not,
    OnlyCaller,
    Require,
    Return,
    StorageRead,
    StorageWrite,
    Transfer,
    Var,
)

SUFFIX = "ByD"
FROM = "from"


def twin_name(name: str) -> str:
    return name + SUFFIX


def _exprs_of(stmt):
    t = type(stmt)
    if t in (Assign, Return):
        return (stmt.value,)
    if t is Require:
        return (stmt.cond,)
    if t is StorageRead:
        return stmt.keys
    if t is StorageWrite:
        return (*stmt.keys, stmt.value)
    if t is InternalCall:
        return stmt.args
    if t is Transfer:
        return (stmt.to, stmt.amount)
    if t is If:
        return (stmt.cond,)
    return ()


def _expr_uses_sender(e) -> bool:
    t = type(e)
    if t is MsgSender:
        return True
    if t is BinOp:
        return _expr_uses_sender(e.left) or _expr_uses_sender(e.right)
    if t is Not:
        return _expr_uses_sender(e.operand)
    if t is Hash:
        return any(_expr_uses_sender(a) for a in e.args)
    return False


def _walk(body):
    for s in body:
        yield s
        if type(s) is If:
            yield from _walk(s.then)
            yield from _walk(s.orelse)


def _is_exempt(fn: FunctionIR) -> bool:
    return bool(fn.params) and fn.params[0][0] == FROM


def _modifier_order(c: ContractIR) -> list[str]:
    """Modifiers in dependency order; raises on cyclic modifier application."""
    order, state = [], {}

    def visit(name, path):
        if state.get(name) == "done":
            return
        if state.get(name) == "active":
            raise RewriteError(f"cyclic modifier recursion: {' -> '.join(path + [name])}")
        state[name] = "active"
        for use in c.modifier(name).modifiers_applied:
            if not c.has_modifier(use.name):
                raise RewriteError(f"unknown modifier {use.name!r}")
            visit(use.name, path + [name])
        state[name] = "done"
        order.append(name)

    for m in c.modifiers:
        visit(m.name, [])
    return order


def sender_dependent(c: ContractIR) -> tuple[set[str], set[str]]:
    """Names of functions and modifiers that transitively reference msg.sender."""
    _modifier_order(c)
    funcs: set[str] = set()
    mods: set[str] = set()

    def depends(fn: FunctionIR) -> bool:
        if any(u.name in mods for u in fn.modifiers_applied):
            return True
        for s in _walk(fn.body):
            if any(_expr_uses_sender(e) for e in _exprs_of(s)):
                return True
            if type(s) is InternalCall and s.name in funcs:
                return True
        return False

    changed = True
    while changed:
        changed = False
        for m in c.modifiers:
            if m.twin_of is None and m.name not in mods and depends(m):
                mods.add(m.name)
                changed = True
        for f in c.functions:
            if f.twin_of is None and not _is_exempt(f) and f.name not in funcs and depends(f):
                funcs.add(f.name)
                changed = True
    return funcs, mods


def _rx(e):
    t = type(e)
    if t is MsgSender:
        return Var(FROM)
    if t is BinOp:
        return BinOp(e.op, _rx(e.left), _rx(e.right))
    if t is Not:
        return Not(_rx(e.operand))
    if t is Hash:
        return Hash(tuple(_rx(a) for a in e.args))
    return e


def _rbody(body, funcs):
    out = []
    for s in body:
        t = type(s)
        if t is Assign:
            out.append(Assign(s.target, _rx(s.value)))
        elif t is Require:
            out.append(Require(_rx(s.cond), s.message))
        elif t is StorageRead:
            out.append(StorageRead(s.target, s.var, tuple(_rx(k) for k in s.keys)))
        elif t is StorageWrite:
            out.append(StorageWrite(s.var, tuple(_rx(k) for k in s.keys), _rx(s.value)))
        elif t is InternalCall:
            args = tuple(_rx(a) for a in s.args)
            if s.name in funcs:
                out.append(InternalCall(twin_name(s.name), (Var(FROM), *args), s.target))
            else:
                out.append(InternalCall(s.name, args, s.target))
        elif t is Transfer:
            out.append(Transfer(_rx(s.to), _rx(s.amount)))
        elif t is Return:
            out.append(Return(_rx(s.value)))
        elif t is If:
            out.append(If(_rx(s.cond), _rbody(s.then, funcs), _rbody(s.orelse, funcs)))
        else:
            out.append(s)
    return tuple(out)


def _rmods(uses, mods):
    return tuple(
        ModifierUse(twin_name(u.name), (Var(FROM), *(_rx(a) for a in u.args)))
        if u.name in mods
        else ModifierUse(u.name, tuple(_rx(a) for a in u.args))
        for u in uses
    )


def _twin(fn: FunctionIR, funcs, mods, guard: int | None) -> FunctionIR:
    if FROM in fn.param_names:
        raise RewriteError(f"{fn.name} already has a parameter named {FROM!r}")
    body = _rbody(fn.body, funcs)
    if guard is not None:
        body = (OnlyCaller(guard), *body)
    return FunctionIR(
        name=twin_name(fn.name),
        params=((FROM, "address"), *fn.params),
        body=body,
        modifiers_applied=_rmods(fn.modifiers_applied, mods),
        visibility=fn.visibility,
        twin_of=fn.name,
    )


def rewrite(c: ContractIR, dispatcher_addr: Address | int) -> ContractIR:
    """Return the derived contract: all original members plus their ByD twins."""
    guard = dispatcher_addr if isinstance(dispatcher_addr, int) else Address(dispatcher_addr).to_int()
    validate(c)
    funcs, mods = sender_dependent(c)
    funcs = {f for f in funcs if not c.has_function(twin_name(f))}
    mods = {m for m in mods if not c.has_modifier(twin_name(m))}
    # calls must route to twins that exist, whether new or already present
    all_funcs = funcs | {f.twin_of for f in c.functions if f.twin_of}
    all_mods = mods | {m.twin_of for m in c.modifiers if m.twin_of}
    new_mods = tuple(
        _twin(c.modifier(name), all_funcs, all_mods, None) for name in _modifier_order(c) if name in mods
    )
    new_funcs = tuple(_twin(f, all_funcs, all_mods, guard) for f in c.functions if f.name in funcs)
    if not new_funcs and not new_mods:
        return c
    name = c.name if c.name.endswith(SUFFIX) else c.name + SUFFIX
    return replace(
        c,
        name=name,
        functions=c.functions + new_funcs,
        modifiers=c.modifiers + new_mods,
        parent=c.name if name != c.name else c.parent,
        _index=None,
    )


def validate(c: ContractIR) -> None:
    declared = set(c.storage_vars)
    for fn in (*c.functions, *c.modifiers):
        for use in fn.modifiers_applied:
            if not c.has_modifier(use.name):
                raise RewriteError(f"{fn.name}: unknown modifier {use.name!r}")
        for s in _walk(fn.body):
            if type(s) in (StorageRead, StorageWrite) and s.var not in declared:
                raise RewriteError(f"{fn.name}: undeclared storage variable {s.var!r}")
            if type(s) is InternalCall and not c.has_function(s.name):
                raise RewriteError(f"{fn.name}: call to unknown function {s.name!r}")
