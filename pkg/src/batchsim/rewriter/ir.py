"""A miniature contract IR and its JSON document form.

Values are unsigned 256-bit integers. Addresses are stored as their integer
value. Storage is a flat mapping ``(var, *keys) -> int`` where a missing
slot reads as zero.

JSON schema: every node is an object whose ``"kind"`` names the node class
(``Const``, ``Var``, ``MsgSender``, ``Now``, ``BinOp``, ``Not``, ``Hash``,
``Assign``, ``Require``, ``OnlyCaller``, ``StorageRead``, ``StorageWrite``,
``InternalCall``, ``Transfer``, ``Return``, ``If``, ``ModifierUse``,
``FunctionIR``, ``ContractIR``); the remaining keys are the node's fields,
with nested nodes and lists of nodes encoded recursively.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Union

# -- expressions -------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: int


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class MsgSender:
    """The ``msg.sender`` reference the rewriter replaces."""


@dataclass(frozen=True)
class Now:
    """Current block timestamp."""


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Not:
    operand: "Expr"


@dataclass(frozen=True)
class Hash:
    args: tuple["Expr", ...]


Expr = Union[Const, Var, MsgSender, Now, BinOp, Not, Hash]

# -- statements --------------------------------------------------------------


@dataclass(frozen=True)
class Assign:
    target: str
    value: Expr


@dataclass(frozen=True)
class Require:
    cond: Expr
    message: str = ""


@dataclass(frozen=True)
class OnlyCaller:
    """Abort with AccessDenied unless the immediate caller is ``address``."""

    address: int


@dataclass(frozen=True)
class StorageRead:
    target: str
    var: str
    keys: tuple[Expr, ...] = ()


@dataclass(frozen=True)
class StorageWrite:
    var: str
    keys: tuple[Expr, ...]
    value: Expr


@dataclass(frozen=True)
class InternalCall:
    name: str
    args: tuple[Expr, ...] = ()
    target: str | None = None


@dataclass(frozen=True)
class Transfer:
    """Move ether held by the contract to ``to``."""

    to: Expr
    amount: Expr


@dataclass(frozen=True)
class Return:
    value: Expr


@dataclass(frozen=True)
class If:
    cond: Expr
    then: tuple["Stmt", ...]
    orelse: tuple["Stmt", ...] = ()


Stmt = Union[Assign, Require, OnlyCaller, StorageRead, StorageWrite, InternalCall, Transfer, Return, If]

# -- declarations ------------------------------------------------------------


@dataclass(frozen=True)
class ModifierUse:
    name: str
    args: tuple[Expr, ...] = ()


@dataclass(frozen=True)
class FunctionIR:
    name: str
    params: tuple[tuple[str, str], ...] = ()
    body: tuple[Stmt, ...] = ()
    modifiers_applied: tuple[ModifierUse, ...] = ()
    visibility: str = "external"
    twin_of: str | None = None

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(p for p, _ in self.params)


@dataclass(frozen=True)
class ContractIR:
    name: str
    storage_vars: tuple[str, ...]
    functions: tuple[FunctionIR, ...]
    modifiers: tuple[FunctionIR, ...] = ()
    parent: str | None = None
    _index: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        names = [f.name for f in self.functions]
        if len(names) != len(set(names)):
            raise ValueError(f"duplicate function names in {self.name}")
        object.__setattr__(
            self,
            "_index",
            {"f": {f.name: f for f in self.functions}, "m": {m.name: m for m in self.modifiers}},
        )

    def function(self, name: str) -> FunctionIR:
        return self._index["f"][name]

    def has_function(self, name: str) -> bool:
        return name in self._index["f"]

    def modifier(self, name: str) -> FunctionIR:
        return self._index["m"][name]

    def has_modifier(self, name: str) -> bool:
        return name in self._index["m"]


# -- JSON --------------------------------------------------------------------

_NODES = {
    cls.__name__: cls
    for cls in (
        Const, Var, MsgSender, Now, BinOp, Not, Hash,
        Assign, Require, OnlyCaller, StorageRead, StorageWrite, InternalCall, Transfer, Return, If,
        ModifierUse, FunctionIR, ContractIR,
    )
}


def to_doc(node):
    if isinstance(node, tuple):
        return [to_doc(x) for x in node]
    if type(node).__name__ in _NODES:
        doc = {"kind": type(node).__name__}
        for f in fields(node):
            if not f.name.startswith("_"):
                doc[f.name] = to_doc(getattr(node, f.name))
        return doc
    return node


def from_doc(doc):
    if isinstance(doc, list):
        return tuple(from_doc(x) for x in doc)
    if isinstance(doc, dict):
        cls = _NODES[doc["kind"]]
        return cls(**{k: from_doc(v) for k, v in doc.items() if k != "kind"})
    return doc


def dumps(contract: ContractIR) -> str:
    return json.dumps(to_doc(contract), indent=1, sort_keys=True)


def loads(text: str) -> ContractIR:
    c = from_doc(json.loads(text))
    if not isinstance(c, ContractIR):
        raise ValueError("document is not a contract")
    return c


def load(path: str | Path) -> ContractIR:
    return loads(Path(path).read_text())


def save(contract: ContractIR, path: str | Path) -> None:
    Path(path).write_text(dumps(contract) + "\n")
