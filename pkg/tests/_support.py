"""Helpers shared by the rewriter tests and the acceptance run."""

from __future__ import annotations

import random
from dataclasses import replace

from batchsim.rewriter.compat import ProgramCall, check_equivalence, fuzz_routing
from batchsim.rewriter.fixtures import accounts, erc20, htlc, idex, random_case
from batchsim.rewriter.ir import InternalCall
from batchsim.rewriter.rewrite import rewrite

DISPATCHER = 0xD15
FIXTURES = {"erc20": erc20, "htlc": htlc, "idex": idex}


def equivalence_failures(kind: str, c, c_byd, cases: int, seed: int = 0) -> int:
    rng = random.Random(seed)
    owners = accounts()
    bad = 0
    for _ in range(cases):
        func, owner, state, args = random_case(kind, rng, owners)
        now = rng.randrange(0, 300)
        bad += not check_equivalence(c, c_byd, func, owner, state, args, DISPATCHER, now=now)
    return bad


def random_program(kind: str, rng: random.Random, owners: list[int], length: int):
    _, _, state, _ = random_case(kind, rng, owners)
    calls = []
    for _ in range(length):
        func, owner, _, args = random_case(kind, rng, owners)
        calls.append(ProgramCall(func, owner, tuple(args), now=rng.randrange(0, 300)))
    return calls, state


def routing_failures(kind: str, c, c_byd, programs: int, seed: int = 0) -> tuple[int, int]:
    """Returns (divergent programs, total routings tried)."""
    rng = random.Random(seed)
    owners = accounts()
    bad = tried = 0
    for _ in range(programs):
        prog, state = random_program(kind, rng, owners, rng.randint(1, 4))
        rep = fuzz_routing(prog, c, c_byd, state, DISPATCHER)
        assert rep.combinations <= 16
        tried += rep.combinations
        bad += not rep.ok
    return bad, tried


def buggy_erc20_rewrite():
    """A rewrite whose transfer twin forgets the explicit sender and debits the Dispatcher."""
    good = rewrite(erc20(), DISPATCHER)
    twin = good.function("transferByD")
    body = tuple(
        InternalCall("basicTransfer", s.args[1:], s.target) if isinstance(s, InternalCall) else s
        for s in twin.body
    )
    funcs = tuple(replace(f, body=body) if f.name == "transferByD" else f for f in good.functions)
    return replace(good, functions=funcs, _index=None)


# -- a chain with one token and funded callers ---------------------------------

from batchsim.chainsim import ChainState  # noqa: E402
from batchsim.core import (  # noqa: E402
    DISPATCHER_ADDRESS,
    BatchMessage,
    BatchSignPayload,
    Invocation,
    assemble_batch_tx,
    encode_invocation,
    encode_sign_payload,
    sign_transaction,
)
from batchsim.dispatcher import Dispatcher, DispatchMode, b2_entry_message, encode_b2_data  # noqa: E402
from batchsim.identity import sign  # noqa: E402
from batchsim.primitives import Address, selector  # noqa: E402

TOKEN = Address.from_label("test-token")
TRANSFER = selector("transfer")


def token_chain(mode: DispatchMode, callers, **kw) -> ChainState:
    chain = ChainState(dispatcher=Dispatcher(mode), **kw)
    st = {}
    for kp in callers:
        st[("balances", kp.address.to_int())] = 10**9
        st[("allowed", kp.address.to_int(), DISPATCHER_ADDRESS.to_int())] = 10**9
        chain.fund(kp.address, 10**30)
    chain.deploy(TOKEN, rewrite(erc20(), DISPATCHER_ADDRESS), st)
    return chain


def signed_batch(mode: DispatchMode, batcher, callers, chain, invs, price: int = 1):
    """A correctly signed batch transaction for ``mode`` carrying ``invs``."""
    nonce = chain.next_nonce(batcher.address)
    keys = {kp.address: kp for kp in callers}
    if mode is DispatchMode.BASELINE_B2:
        bmsg = BatchMessage(tuple((inv, inv.caller_nonce) for inv in invs), nonce)
        sigs = [sign(keys[inv.caller], b2_entry_message(inv.call, inv.caller_nonce)) for inv in invs]
        return sign_transaction(batcher, nonce, DISPATCHER_ADDRESS, 0, price, encode_b2_data(bmsg, sigs))
    payload = BatchSignPayload(tuple(inv.call for inv in invs), nonce)
    if mode is DispatchMode.IDEAL:
        sigs = [sign(keys[inv.caller], encode_invocation(inv.call)) for inv in invs]
    else:
        msg = encode_sign_payload(payload)
        sigs = [sign(keys[inv.caller], msg) if inv.caller in keys else bytes(65) for inv in invs]
    return assemble_batch_tx(payload, sigs, batcher, price, account_nonce=nonce).tx


def transfers(callers, n: int, recipient: Address | None = None):
    to = (recipient or callers[0].address).to_int()
    return [
        Invocation(callers[i % len(callers)].address, TOKEN, TRANSFER, (to, 1 + i), caller_nonce=i // len(callers))
        for i in range(n)
    ]
