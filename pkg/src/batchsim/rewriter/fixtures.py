"""Bundled fixture contracts: an ERC20 token, an HTLC, and an IDEX-like exchange."""

from __future__ import annotations

import random

from batchsim.primitives import digest, word_bytes
from batchsim.rewriter.ir import (
    BinOp,
    Const,
    ContractIR,
    FunctionIR,
    Hash,
    InternalCall,
    ModifierUse,
    MsgSender,
    Not,
    Now,
    Require,
    Return,
    StorageRead,
    StorageWrite,
    Var,
)

S = MsgSender()
V = Var


def _op(op):
    return lambda a, b: BinOp(op, a, b)


add, sub, eq, ge = _op("+"), _op("-"), _op("=="), _op(">=")


def fn(name, params, *body, mods=(), visibility="external"):
    return FunctionIR(
        name=name,
        params=tuple((p, "uint256") for p in params),
        body=tuple(body),
        modifiers_applied=tuple(ModifierUse(m) for m in mods),
        visibility=visibility,
    )


def _debit(var, who, amount, tmp):
    return (
        StorageRead(tmp, var, (who,)),
        Require(ge(V(tmp), amount), f"insufficient {var}"),
        StorageWrite(var, (who,), sub(V(tmp), amount)),
    )


def _credit(var, who, amount, tmp):
    return (
        StorageRead(tmp, var, (who,)),
        StorageWrite(var, (who,), add(V(tmp), amount)),
    )


def erc20() -> ContractIR:
    """Minimal token with a blacklist modifier, shaped after the rewriting example."""
    no_blacklisted = FunctionIR(
        name="noBlacklisted",
        body=(StorageRead("bl", "isBlackListed", (S,)), Require(Not(V("bl")), "blacklisted")),
    )
    only_owner = FunctionIR(
        name="onlyOwner",
        body=(StorageRead("own", "owner"), Require(eq(V("own"), S), "not owner")),
    )
    functions = (
        fn("transfer", ["to", "value"],
           InternalCall("basicTransfer", (V("to"), V("value"))),
           Return(Const(1)),
           mods=["noBlacklisted"]),
        fn("basicTransfer", ["to", "value"],
           *_debit("balances", S, V("value"), "fb"),
           *_credit("balances", V("to"), V("value"), "tb"),
           visibility="internal"),
        fn("approve", ["spender", "value"],
           StorageWrite("allowed", (S, V("spender")), V("value")),
           Return(Const(1))),
        fn("transferFrom", ["from", "to", "value"],
           StorageRead("al", "allowed", (V("from"), S)),
           Require(ge(V("al"), V("value")), "allowance"),
           StorageWrite("allowed", (V("from"), S), sub(V("al"), V("value"))),
           *_debit("balances", V("from"), V("value"), "fb"),
           *_credit("balances", V("to"), V("value"), "tb"),
           Return(Const(1))),
        fn("balanceOf", ["who"],
           StorageRead("b", "balances", (V("who"),)),
           Return(V("b"))),
        fn("addBlackList", ["who"],
           StorageWrite("isBlackListed", (V("who"),), Const(1)),
           mods=["onlyOwner"]),
        fn("removeBlackList", ["who"],
           StorageWrite("isBlackListed", (V("who"),), Const(0)),
           mods=["onlyOwner"]),
    )
    return ContractIR(
        name="Token",
        storage_vars=("balances", "allowed", "isBlackListed", "owner"),
        functions=functions,
        modifiers=(no_blacklisted, only_owner),
    )


def htlc() -> ContractIR:
    """Hashed time-lock contract over an internal balance ledger."""
    functions = (
        fn("newContract", ["id", "receiver", "hashlock", "timelock", "amount"],
           StorageRead("st", "hstate", (V("id"),)),
           Require(eq(V("st"), Const(0)), "exists"),
           Require(ge(V("amount"), Const(1)), "zero amount"),
           *_debit("balances", S, V("amount"), "b"),
           StorageWrite("hsender", (V("id"),), S),
           StorageWrite("hreceiver", (V("id"),), V("receiver")),
           StorageWrite("hlock", (V("id"),), V("hashlock")),
           StorageWrite("htime", (V("id"),), V("timelock")),
           StorageWrite("hamount", (V("id"),), V("amount")),
           StorageWrite("hstate", (V("id"),), Const(1)),
           Return(V("id"))),
        fn("withdraw", ["id", "preimage"],
           StorageRead("st", "hstate", (V("id"),)),
           Require(eq(V("st"), Const(1)), "not open"),
           StorageRead("r", "hreceiver", (V("id"),)),
           Require(eq(V("r"), S), "not receiver"),
           StorageRead("hl", "hlock", (V("id"),)),
           Require(eq(Hash((V("preimage"),)), V("hl")), "bad preimage"),
           StorageWrite("hstate", (V("id"),), Const(2)),
           StorageRead("amt", "hamount", (V("id"),)),
           *_credit("balances", S, V("amt"), "b"),
           Return(Const(1))),
        fn("refund", ["id"],
           StorageRead("st", "hstate", (V("id"),)),
           Require(eq(V("st"), Const(1)), "not open"),
           StorageRead("s", "hsender", (V("id"),)),
           Require(eq(V("s"), S), "not sender"),
           StorageRead("t", "htime", (V("id"),)),
           Require(ge(Now(), V("t")), "timelock"),
           StorageWrite("hstate", (V("id"),), Const(3)),
           StorageRead("amt", "hamount", (V("id"),)),
           *_credit("balances", S, V("amt"), "b"),
           Return(Const(1))),
        fn("balanceOf", ["who"],
           StorageRead("b", "balances", (V("who"),)),
           Return(V("b"))),
    )
    return ContractIR(
        name="HTLC",
        storage_vars=("balances", "hsender", "hreceiver", "hlock", "htime", "hamount", "hstate"),
        functions=functions,
    )


def idex() -> ContractIR:
    """Exchange with deposits, admin-settled trades, and withdrawals."""
    only_admin = FunctionIR(
        name="onlyAdmin",
        body=(StorageRead("adm", "admin"), Require(eq(V("adm"), S), "not admin")),
    )
    functions = (
        fn("deposit", ["amount"],
           *_debit("wallet", S, V("amount"), "w"),
           *_credit("tokens", S, V("amount"), "t"),
           Return(Const(1))),
        fn("withdraw", ["amount"],
           *_debit("tokens", S, V("amount"), "t"),
           *_credit("wallet", S, V("amount"), "w"),
           Return(Const(1))),
        fn("trade", ["maker", "taker", "amount", "order"],
           StorageRead("f", "filled", (V("order"),)),
           Require(eq(V("f"), Const(0)), "filled"),
           StorageWrite("filled", (V("order"),), Const(1)),
           *_debit("tokens", V("maker"), V("amount"), "tm"),
           *_credit("tokens", V("taker"), V("amount"), "tt"),
           Return(Const(1)),
           mods=["onlyAdmin"]),
    )
    return ContractIR(
        name="Exchange",
        storage_vars=("wallet", "tokens", "filled", "admin"),
        functions=functions,
        modifiers=(only_admin,),
    )


FIXTURES = {"erc20": erc20, "htlc": htlc, "idex": idex}


# -- seeded states and calls for property tests ------------------------------


def accounts(n: int = 5, base: int = 0x1000) -> list[int]:
    return [base + i for i in range(n)]


def random_case(kind: str, rng: random.Random, owners: list[int]):
    """One (function, owner, state, args) case for ``kind``, drawn from ``rng``."""
    pick = rng.choice
    amount = lambda: rng.choice([0, 1, rng.randrange(1, 1000), rng.randrange(1000, 10**6)])  # noqa: E731
    state: dict[tuple, int] = {}
    if kind == "erc20":
        for a in owners:
            if rng.random() < 0.85:
                state[("balances", a)] = rng.randrange(1, 10**6)
            if rng.random() < 0.15:
                state[("isBlackListed", a)] = 1
            for b in owners:
                if rng.random() < 0.3:
                    state[("allowed", a, b)] = rng.randrange(1, 10**6)
        state[("owner",)] = pick(owners)
        # transferFrom is never twinned, so it has no Dispatcher counterpart to compare
        func = pick(["transfer", "approve", "balanceOf", "addBlackList", "removeBlackList"])
        args = {
            "transfer": lambda: (pick(owners), amount()),
            "approve": lambda: (pick(owners), amount()),
            "balanceOf": lambda: (pick(owners),),
            "addBlackList": lambda: (pick(owners),),
            "removeBlackList": lambda: (pick(owners),),
        }[func]()
    elif kind == "htlc":
        for a in owners:
            state[("balances", a)] = rng.randrange(0, 10**6)
        preimages = {}
        for hid in range(1, 4):
            if rng.random() < 0.7:
                pre = rng.randrange(1, 2**64)
                preimages[hid] = pre
                state[("hsender", hid)] = pick(owners)
                state[("hreceiver", hid)] = pick(owners)
                state[("hlock", hid)] = htlc_hash(pre)
                state[("htime", hid)] = rng.randrange(0, 200)
                state[("hamount", hid)] = rng.randrange(1, 10**4)
                state[("hstate", hid)] = rng.choice([1, 1, 1, 2, 3])
        func = pick(["newContract", "withdraw", "refund", "balanceOf"])
        hid = rng.randrange(1, 6)
        args = {
            "newContract": lambda: (hid, pick(owners), htlc_hash(rng.randrange(1, 99)), rng.randrange(0, 200), amount()),
            "withdraw": lambda: (hid, preimages.get(hid, 7) if rng.random() < 0.8 else 12345),
            "refund": lambda: (hid,),
            "balanceOf": lambda: (pick(owners),),
        }[func]()
    elif kind == "idex":
        for a in owners:
            state[("wallet", a)] = rng.randrange(0, 10**6)
            if rng.random() < 0.8:
                state[("tokens", a)] = rng.randrange(1, 10**6)
        for o in range(1, 4):
            if rng.random() < 0.3:
                state[("filled", o)] = 1
        state[("admin",)] = pick(owners)
        func = pick(["deposit", "withdraw", "trade"])
        args = {
            "deposit": lambda: (amount(),),
            "withdraw": lambda: (amount(),),
            "trade": lambda: (pick(owners), pick(owners), amount(), rng.randrange(1, 5)),
        }[func]()
    else:
        raise ValueError(f"unknown fixture {kind!r}")
    return func, pick(owners), state, args


def htlc_hash(preimage: int) -> int:
    return int.from_bytes(digest(word_bytes(preimage)), "big")
