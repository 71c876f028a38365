"""Contract IR, the ByD rewrite, and backward-compatibility harnesses."""

from batchsim.rewriter.compat import FuzzReport, ProgramCall, check_equivalence, fuzz_routing
from batchsim.rewriter.interp import ExecTrace, execute
from batchsim.rewriter.ir import ContractIR, FunctionIR, dumps, load, loads, save
from batchsim.rewriter.rewrite import rewrite, sender_dependent, twin_name

__all__ = [
    "ContractIR",
    "ExecTrace",
    "FunctionIR",
    "FuzzReport",
    "ProgramCall",
    "check_equivalence",
    "dumps",
    "execute",
    "fuzz_routing",
    "load",
    "loads",
    "rewrite",
    "save",
    "sender_dependent",
    "twin_name",
]
