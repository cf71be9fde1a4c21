"""Intermediate representation for the supported C subset."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Union

OPCODES = (
    "assign", "binop", "unop", "cast", "ptradd", "ptrdiff", "load", "store",
    "alloc", "branch", "jump", "check", "fail", "ignore", "nondet", "halt",
)

CMP_OPS = ("<", "<=", ">", ">=", "==", "!=")
NEGATE_CMP = {"<": ">=", "<=": ">", ">": "<=", ">=": "<", "==": "!=", "!=": "=="}
SWAP_CMP = {"<": ">", "<=": ">=", ">": "<", ">=": "<=", "==": "==", "!=": "!="}


# ---------------------------------------------------------------- types

@dataclass(frozen=True)
class IntType:
    bits: int = 32
    signed: bool = True

    @property
    def lo(self) -> int:
        return -(1 << (self.bits - 1)) if self.signed else 0

    @property
    def hi(self) -> int:
        return (1 << (self.bits - 1)) - 1 if self.signed else (1 << self.bits) - 1

    def wrap(self, v: int) -> int:
        v &= (1 << self.bits) - 1
        if self.signed and v > self.hi:
            v -= 1 << self.bits
        return v

    def __str__(self) -> str:
        return f"{'i' if self.signed else 'u'}{self.bits}"


@dataclass(frozen=True)
class PtrType:
    target: "CType"

    def __str__(self) -> str:
        return f"{self.target}*"


@dataclass(frozen=True)
class StructType:
    name: str

    def __str__(self) -> str:
        return f"struct {self.name}"


@dataclass(frozen=True)
class VoidType:
    def __str__(self) -> str:
        return "void"


CType = Union[IntType, PtrType, StructType, VoidType]

INT = IntType(32, True)
UINT = IntType(32, False)


def is_ptr(t: CType) -> bool:
    return isinstance(t, PtrType)


@dataclass(frozen=True)
class StructDef:
    """A record type; nested struct fields are already flattened to dotted names."""

    name: str
    fields: tuple[tuple[str, CType], ...]

    def field_type(self, name: str) -> CType:
        for fname, t in self.fields:
            if fname == name:
                return t
        raise KeyError(name)

    def pointer_fields(self) -> list[str]:
        return [f for f, t in self.fields if is_ptr(t)]


# ---------------------------------------------------------------- operands

@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Const:
    value: int

    def __str__(self) -> str:
        return str(self.value)


@dataclass(frozen=True)
class Null:
    def __str__(self) -> str:
        return "NULL"


Operand = Union[Var, Const, Null]


@dataclass(frozen=True)
class Instr:
    """One IR instruction.

    ``op`` holds the arithmetic or comparison operator, ``field`` the record
    field for memory accesses, ``ctype`` the result or element type and
    ``kind`` the guarded predicate of a ``check`` ("ptr" or "overflow").
    For ``check`` the successors are (ok, failing).
    """

    id: int
    opcode: str
    dst: str | None = None
    args: tuple[Operand, ...] = ()
    succs: tuple[int, ...] = ()
    op: str | None = None
    field: str | None = None
    ctype: CType | None = None
    kind: str | None = None
    line: int = 0

    def uses(self) -> list[str]:
        return [a.name for a in self.args if isinstance(a, Var)]

    def render(self) -> str:
        parts = [self.opcode]
        if self.dst is not None:
            parts.append(f"{self.dst} =")
        extra = [x for x in (self.kind, self.op) if x]
        if self.field:
            extra.append(f".{self.field}")
        parts.extend(extra)
        parts.extend(str(a) for a in self.args)
        if self.ctype is not None and self.opcode in ("cast", "alloc", "nondet", "load"):
            parts.append(f":{self.ctype}")
        text = f"{self.id}: {' '.join(parts)}"
        if self.succs:
            text += " -> " + ", ".join(str(s) for s in self.succs)
        return text


@dataclass(frozen=True)
class LoopInfo:
    loop_id: int
    entrance: int
    iteration: int
    end: int
    header: int
    relevant: frozenset[str]
    body: frozenset[int] = frozenset()


# ---------------------------------------------------------------- shapes

@dataclass(frozen=True)
class ScalarParam:
    local: str
    ctype: IntType


@dataclass(frozen=True)
class ArrayParam:
    """A record with pointer field X and length field n_X, flattened to locals."""

    name: str
    ptr_local: str
    len_local: str
    elem: CType
    len_type: IntType


@dataclass(frozen=True)
class LinkedParam:
    local: str
    struct: str


ParamShape = Union[ScalarParam, ArrayParam, LinkedParam]


@dataclass(frozen=True)
class InputShape:
    params: tuple[ParamShape, ...] = ()

    def arrays(self) -> list[ArrayParam]:
        return [p for p in self.params if isinstance(p, ArrayParam)]

    def linked(self) -> list[LinkedParam]:
        return [p for p in self.params if isinstance(p, LinkedParam)]


@dataclass(frozen=True)
class ProgramIR:
    instrs: tuple[Instr, ...]
    entry: int
    locals: dict = field(default_factory=dict, compare=False, hash=False)
    structs: dict = field(default_factory=dict, compare=False, hash=False)
    loops: tuple[LoopInfo, ...] = ()
    shape: InputShape = InputShape()
    overflow_checks: bool = False

    def __getitem__(self, idx: int) -> Instr:
        return self.instrs[idx]

    def __len__(self) -> int:
        return len(self.instrs)

    def dump(self) -> str:
        return "\n".join(ins.render() for ins in self.instrs)

    def with_instrs(self, instrs: Iterable[Instr], entry: int | None = None) -> "ProgramIR":
        return replace(self, instrs=tuple(instrs), entry=self.entry if entry is None else entry)

    def loop_by_marker(self) -> dict[int, tuple[str, LoopInfo]]:
        out: dict[int, tuple[str, LoopInfo]] = {}
        for lp in self.loops:
            out[lp.entrance] = ("entrance", lp)
            out[lp.iteration] = ("iteration", lp)
            out[lp.end] = ("end", lp)
        return out

    def local_type(self, name: str) -> CType:
        return self.locals[name]

    def validate(self) -> None:
        n = len(self.instrs)
        for i, ins in enumerate(self.instrs):
            assert ins.id == i, f"id mismatch at {i}"
            assert ins.opcode in OPCODES, ins.opcode
            for s in ins.succs:
                assert 0 <= s < n, f"bad successor {s} in {ins.render()}"
            if ins.opcode in ("fail", "halt"):
                assert not ins.succs
            if ins.opcode == "ignore":
                assert len(ins.succs) == 1 and self.instrs[ins.succs[0]].opcode == "halt"


def successors(ins: Instr) -> tuple[int, ...]:
    return ins.succs


def renumber(instrs: list[Instr], keep: list[int], entry: int, redirect: dict[int, int]) -> tuple[list[Instr], int, dict[int, int]]:
    """Compact ``instrs`` down to indices in ``keep``.

    ``redirect`` maps removed ids to the id control should flow to instead.
    Returns the new list, new entry and the old->new id map.
    """

    def target(i: int) -> int:
        seen = set()
        while i in redirect:
            if i in seen:
                break
            seen.add(i)
            i = redirect[i]
        return i

    new_id = {old: new for new, old in enumerate(keep)}
    out = []
    for old in keep:
        ins = instrs[old]
        succs = tuple(new_id[target(s)] for s in ins.succs)
        out.append(replace(ins, id=new_id[old], succs=succs))
    return out, new_id[target(entry)], new_id
