"""C subset frontend: parsing, rejection rules, inlining and lowering to IR."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Optional

from pycparser import c_ast, c_parser

from .ir import (
    INT, ArrayParam, Const, CType, InputShape, Instr, IntType, LinkedParam, LoopInfo,
    Null, Operand, ProgramIR, PtrType, ScalarParam, StructDef, StructType, Var, VoidType,
    is_ptr,
)


class Diagnostic(Exception):
    def __init__(self, line: int, message: str, category: str = "unsupported-syntax"):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message
        self.category = category

    def render(self, path: str = "<input>") -> str:
        return f"{path}:{self.line}: {self.category}: {self.message}"


@dataclass
class HarnessSpec:
    params: list[tuple[str, CType]]
    shape: InputShape
    overflow_checks: bool = False
    structs: dict = field(default_factory=dict)


# ---------------------------------------------------------------- preprocessing

_PRELUDE_TYPES = {
    "size_t": "unsigned long", "ssize_t": "long", "bool": "int",
    "int8_t": "signed char", "int16_t": "short", "int32_t": "int", "int64_t": "long",
    "uint8_t": "unsigned char", "uint16_t": "unsigned short", "uint32_t": "unsigned int",
    "uint64_t": "unsigned long", "uintptr_t": "unsigned long", "intptr_t": "long",
}
_BUILTIN_MACROS = {"NULL": "((void*)0)", "true": "1", "false": "0"}
_IDENT = re.compile(r"[A-Za-z_]\w*")


@dataclass
class _Macro:
    params: Optional[list[str]]
    body: str


def _split_args(text: str, start: int) -> tuple[list[str], int] | None:
    """Parse a parenthesized macro argument list starting at ``text[start] == '('``."""
    depth = 0
    args, cur = [], []
    i = start
    while i < len(text):
        ch = text[i]
        if ch == "(":
            depth += 1
            if depth > 1:
                cur.append(ch)
        elif ch == ")":
            depth -= 1
            if depth == 0:
                args.append("".join(cur).strip())
                return args, i + 1
            cur.append(ch)
        elif ch == "," and depth == 1:
            args.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
        i += 1
    return None


def _expand(text: str, macros: dict[str, _Macro], active: frozenset = frozenset()) -> str:
    out = []
    pos = 0
    for m in _IDENT.finditer(text):
        if m.start() < pos:
            continue
        name = m.group(0)
        if name not in macros or name in active:
            continue
        mac = macros[name]
        if mac.params is None:
            out.append(text[pos:m.start()])
            out.append(_expand(mac.body, macros, active | {name}))
            pos = m.end()
            continue
        j = m.end()
        while j < len(text) and text[j] in " \t":
            j += 1
        if j >= len(text) or text[j] != "(":
            continue
        parsed = _split_args(text, j)
        if parsed is None:
            continue
        args, end = parsed
        if args == [""] and not mac.params:
            args = []
        body = mac.body
        if len(args) == len(mac.params):
            mapping = dict(zip(mac.params, (_expand(a, macros, active) for a in args)))
            body = _IDENT.sub(lambda mm: "(" + mapping[mm.group(0)] + ")" if mm.group(0) in mapping else mm.group(0), body)
        out.append(text[pos:m.start()])
        out.append(_expand(body, macros, active | {name}))
        pos = end
    out.append(text[pos:])
    return "".join(out)


def preprocess(source: str) -> str:
    """Strip includes, expand simple #define macros and keep line numbering."""
    lines = source.split("\n")
    # join backslash continuations but keep the line count
    joined: list[str] = []
    i = 0
    while i < len(lines):
        line = lines[i]
        extra = 0
        while line.endswith("\\") and i + extra + 1 < len(lines):
            extra += 1
            line = line[:-1] + " " + lines[i + extra]
        joined.append(line)
        joined.extend([""] * extra)
        i += extra + 1
    macros = {k: _Macro(None, v) for k, v in _BUILTIN_MACROS.items()}
    body_lines = []
    for lineno, line in enumerate(joined, 1):
        stripped = line.strip()
        if stripped.startswith("#"):
            directive = stripped[1:].strip()
            if directive.startswith("define"):
                rest = directive[len("define"):].strip()
                mm = re.match(r"([A-Za-z_]\w*)(\(([^)]*)\))?\s*(.*)$", rest)
                if not mm:
                    raise Diagnostic(lineno, "malformed #define", "parse-error")
                params = None
                if mm.group(2) is not None and rest[len(mm.group(1))] == "(":
                    params = [p.strip() for p in mm.group(3).split(",") if p.strip()]
                macros[mm.group(1)] = _Macro(params, mm.group(4))
            elif directive.startswith("undef"):
                macros.pop(directive[len("undef"):].strip(), None)
            elif directive.startswith(("include", "pragma")) or directive == "":
                pass
            else:
                raise Diagnostic(lineno, f"unsupported preprocessor directive '#{directive.split()[0]}'", "unsupported-syntax")
            body_lines.append("")
        else:
            body_lines.append(line)
    text = "\n".join(body_lines)
    text = _strip_comments(text)
    text = _expand(text, macros)
    prelude = []
    for name, ty in _PRELUDE_TYPES.items():
        if re.search(rf"\b{name}\b", text) and not re.search(rf"typedef[^;]*\b{name}\s*;", text):
            prelude.append(f"typedef {ty} {name};")
    return "\n".join(prelude) + '\n# 1 "<input>"\n' + text


def _strip_comments(text: str) -> str:
    def repl(m):
        s = m.group(0)
        if s.startswith("/"):
            return re.sub(r"[^\n]", " ", s)
        return s
    return re.sub(r'//[^\n]*|/\*.*?\*/|"(?:\\.|[^"\\])*"|\'(?:\\.|[^\'\\])*\'', repl, text, flags=re.S)


# ---------------------------------------------------------------- types

_INT_NAMES = {
    ("char",): IntType(8, True), ("signed", "char"): IntType(8, True), ("unsigned", "char"): IntType(8, False),
    ("short",): IntType(16, True), ("unsigned", "short"): IntType(16, False),
    ("int",): IntType(32, True), ("signed",): IntType(32, True), ("unsigned",): IntType(32, False),
    ("long",): IntType(64, True), ("unsigned", "long"): IntType(64, False),
    ("_Bool",): IntType(8, False),
}

_NONDET_TYPES = {
    "int": IntType(32, True), "uint": IntType(32, False), "unsigned": IntType(32, False),
    "unsigned_int": IntType(32, False), "char": IntType(8, True), "uchar": IntType(8, False),
    "unsigned_char": IntType(8, False), "short": IntType(16, True), "ushort": IntType(16, False),
    "long": IntType(64, True), "ulong": IntType(64, False), "bool": IntType(8, False),
    "size_t": IntType(64, False), "sizet": IntType(64, False), "int32": IntType(32, True),
    "uint32": IntType(32, False), "int8": IntType(8, True), "uint8": IntType(8, False),
}

FAIL_NAMES = ("__VERIFIER_fail", "fail", "__VERIFIER_error", "reach_error")
IGNORE_NAMES = ("__VERIFIER_ignore", "ignore")
ASSUME_NAMES = ("__VERIFIER_assume", "assume")
ASSERT_NAMES = ("__VERIFIER_assert", "assert")


def _line(node) -> int:
    return node.coord.line if node is not None and node.coord is not None else 0


def _int_from_names(names: list[str], line: int) -> CType:
    names = [n for n in names if n not in ("const", "volatile", "register", "static", "extern", "inline")]
    if "float" in names or "double" in names:
        raise Diagnostic(line, "floating point types are not supported")
    if names == ["void"]:
        return VoidType()
    key = list(names)
    if key.count("long") >= 1:
        key = [n for n in key if n != "long"] + ["long"]
    key = [n for n in key if n != "int"] or ["int"]
    if "signed" in key and len(key) > 1:
        key.remove("signed")
    t = _INT_NAMES.get(tuple(key))
    if t is None:
        raise Diagnostic(line, f"unsupported type '{' '.join(names)}'")
    return t


def common_type(a: IntType, b: IntType) -> IntType:
    a, b = promote(a), promote(b)
    if a == b:
        return a
    if a.signed == b.signed:
        return a if a.bits >= b.bits else b
    u, s = (a, b) if not a.signed else (b, a)
    if u.bits >= s.bits:
        return u
    return s


def promote(t: IntType) -> IntType:
    return INT if t.bits < 32 else t


# ---------------------------------------------------------------- lowering

class _Label:
    __slots__ = ("pos", "name")

    def __init__(self, name: str = ""):
        self.pos: int | None = None
        self.name = name


_FALL = "fallthrough"


@dataclass
class _Pending:
    opcode: str
    dst: str | None = None
    args: tuple = ()
    succs: tuple = (_FALL,)
    op: str | None = None
    field: str | None = None
    ctype: CType | None = None
    kind: str | None = None
    line: int = 0


@dataclass
class _StructVal:
    """A struct value held in flattened locals (or operands for rvalues)."""

    sname: str
    parts: dict  # field -> Operand


@dataclass
class _Frame:
    fname: str
    prefix: str
    scopes: list = field(default_factory=list)
    ret_var: object = None  # str, _StructVal or None
    exit_label: _Label | None = None
    loop_stack: list = field(default_factory=list)  # (break_label, continue_label)
    tail_header: _Label | None = None
    tail_cont: _Label | None = None
    params: list = field(default_factory=list)
    ret_type: CType | None = None


class Lowerer:
    MAX_INLINE_DEPTH = 40

    def __init__(self, ast: c_ast.FileAST, overflow_checks: bool = False):
        self.ast = ast
        self.overflow_checks = overflow_checks
        self.structs: dict[str, StructDef] = {}
        self.raw_structs: dict[str, list] = {}
        self.typedefs: dict[str, c_ast.Node] = {}
        self.enums: dict[str, int] = {}
        self.funcs: dict[str, c_ast.FuncDef] = {}
        self.protos: dict[str, c_ast.FuncDecl] = {}
        self.code: list[_Pending] = []
        self.labels_at: list = []
        self.locals: dict[str, CType] = {}
        self.frames: list[_Frame] = []
        self.loop_ranges: list[list] = []
        self.counter = 0
        self.inline_counts: dict[str, int] = {}
        self._anon = 0

    # -- declarations ---------------------------------------------------
    def collect(self) -> None:
        for ext in self.ast.ext:
            if isinstance(ext, c_ast.FuncDef):
                name = ext.decl.name
                if name in self.funcs:
                    raise Diagnostic(_line(ext), f"redefinition of function '{name}'", "parse-error")
                self._check_no_bad_types(ext.decl.type, _line(ext))
                self.funcs[name] = ext
            elif isinstance(ext, c_ast.Typedef):
                self._register_tagged(ext.type)
                self._check_no_bad_types(ext.type, _line(ext))
                self.typedefs[ext.name] = ext.type
                inner = ext.type.type if isinstance(ext.type, c_ast.TypeDecl) else None
                if isinstance(inner, c_ast.Struct) and inner.name is None:
                    inner.name = ext.name
                    self._register_tagged(ext.type)
            elif isinstance(ext, c_ast.Decl):
                self._register_tagged(ext.type)
                if isinstance(ext.type, c_ast.FuncDecl):
                    self._check_no_bad_types(ext.type, _line(ext))
                    self.protos[ext.name] = ext.type
                elif ext.name is not None:
                    self._check_no_bad_types(ext.type, _line(ext))
                    raise Diagnostic(_line(ext), f"global variable '{ext.name}' is not supported")
            elif isinstance(ext, c_ast.Pragma):
                continue
            else:
                raise Diagnostic(_line(ext), f"unsupported top-level construct {type(ext).__name__}")
        for name in list(self.raw_structs):
            self._struct_def(name, 0)

    def _check_no_bad_types(self, t, line) -> None:
        """Reject unions, function pointers and array types anywhere in a declaration."""
        if t is None:
            return
        if isinstance(t, c_ast.Union):
            raise Diagnostic(_line(t) or line, "union types are not supported")
        if isinstance(t, c_ast.ArrayDecl):
            dim = t.dim
            if dim is not None and not isinstance(dim, c_ast.Constant):
                raise Diagnostic(_line(t) or line, "variable-length arrays are not supported")
            raise Diagnostic(_line(t) or line, "array types are not supported; use a pointer and length record")
        if isinstance(t, c_ast.PtrDecl) and isinstance(t.type, c_ast.FuncDecl):
            raise Diagnostic(_line(t) or line, "function pointers are not supported")
        if isinstance(t, c_ast.FuncDecl):
            if t.args is not None:
                for p in t.args.params:
                    if isinstance(p, (c_ast.Decl, c_ast.Typename)):
                        self._check_no_bad_types(p.type, _line(p) or line)
            self._check_no_bad_types(t.type, line)
            return
        if isinstance(t, (c_ast.PtrDecl, c_ast.TypeDecl, c_ast.Typename)):
            self._check_no_bad_types(t.type, line)
            return
        if isinstance(t, c_ast.Struct) and t.decls:
            for d in t.decls:
                self._check_no_bad_types(d.type, _line(d) or line)
        if isinstance(t, c_ast.IdentifierType) and any(n in ("float", "double") for n in t.names):
            raise Diagnostic(line, "floating point types are not supported")

    def _register_tagged(self, t) -> None:
        while isinstance(t, (c_ast.PtrDecl, c_ast.TypeDecl, c_ast.ArrayDecl, c_ast.Typename)):
            t = t.type
        if isinstance(t, c_ast.Union):
            raise Diagnostic(_line(t), "union types are not supported")
        if isinstance(t, c_ast.Struct) and t.decls is not None:
            self._check_no_bad_types(t, _line(t))
            name = t.name
            if name is None:
                self._anon += 1
                name = t.name = f"anon{self._anon}"
            self.raw_structs[name] = t.decls
            for d in t.decls:
                self._register_tagged(d.type)
        if isinstance(t, c_ast.Enum) and t.values is not None:
            nxt = 0
            for e in t.values.enumerators:
                if e.value is not None:
                    nxt = self._const_eval(e.value)
                self.enums[e.name] = nxt
                nxt += 1

    def _struct_def(self, name: str, line: int) -> StructDef:
        if name in self.structs:
            return self.structs[name]
        if name not in self.raw_structs:
            raise Diagnostic(line, f"incomplete struct '{name}'")
        fields: list[tuple[str, CType]] = []
        self.structs[name] = StructDef(name, ())  # placeholder for self reference
        for d in self.raw_structs[name]:
            t = self.ctype(d.type, _line(d))
            if isinstance(t, StructType):
                inner = self._struct_def(t.name, _line(d))
                fields.extend((f"{d.name}.{f}", ft) for f, ft in inner.fields)
            else:
                fields.append((d.name, t))
        sd = StructDef(name, tuple(fields))
        self.structs[name] = sd
        return sd

    def ctype(self, t, line: int) -> CType:
        if isinstance(t, (c_ast.TypeDecl, c_ast.Typename)):
            return self.ctype(t.type, line)
        if isinstance(t, c_ast.PtrDecl):
            if isinstance(t.type, c_ast.FuncDecl):
                raise Diagnostic(line, "function pointers are not supported")
            return PtrType(self.ctype(t.type, line))
        if isinstance(t, c_ast.ArrayDecl):
            self._check_no_bad_types(t, line)
        if isinstance(t, c_ast.Union):
            raise Diagnostic(line, "union types are not supported")
        if isinstance(t, c_ast.Struct):
            if t.name is None:
                raise Diagnostic(line, "anonymous struct not supported here")
            return StructType(t.name)
        if isinstance(t, c_ast.Enum):
            return INT
        if isinstance(t, c_ast.IdentifierType):
            if len(t.names) == 1 and t.names[0] in self.typedefs:
                return self.ctype(self.typedefs[t.names[0]], line)
            return _int_from_names(list(t.names), line)
        if isinstance(t, c_ast.FuncDecl):
            raise Diagnostic(line, "function pointers are not supported")
        raise Diagnostic(line, f"unsupported type construct {type(t).__name__}")

    def _const_eval(self, e) -> int:
        if isinstance(e, c_ast.Constant):
            return _parse_int_constant(e)[0]
        if isinstance(e, c_ast.UnaryOp) and e.op == "-":
            return -self._const_eval(e.expr)
        if isinstance(e, c_ast.ID) and e.name in self.enums:
            return self.enums[e.name]
        if isinstance(e, c_ast.BinaryOp):
            from .concrete import arith
            return arith(e.op, self._const_eval(e.left), self._const_eval(e.right))
        raise Diagnostic(_line(e), "expected an integer constant expression")

    # -- emission -------------------------------------------------------
    def emit(self, opcode: str, line: int, **kw) -> int:
        self.code.append(_Pending(opcode, line=line, **kw))
        return len(self.code) - 1

    def place(self, label: _Label) -> None:
        label.pos = len(self.code)

    def jump(self, label: _Label, line: int) -> int:
        return self.emit("jump", line, succs=(label,))

    def fresh_local(self, base: str, t: CType) -> str:
        name = base
        k = 1
        while name in self.locals:
            k += 1
            name = f"{base}.{k}"
        self.locals[name] = t
        return name

    def temp(self, t: CType) -> str:
        self.counter += 1
        name = f"%t{self.counter}"
        self.locals[name] = t
        return name

    # -- scopes ---------------------------------------------------------
    @property
    def frame(self) -> _Frame:
        return self.frames[-1]

    def lookup(self, name: str, line: int):
        for scope in reversed(self.frame.scopes):
            if name in scope:
                return scope[name]
        if name in self.enums:
            return ("enum", self.enums[name])
        raise Diagnostic(line, f"undeclared identifier '{name}'", "parse-error")

    def declare(self, name: str, t: CType, line: int, exact: str | None = None):
        base = exact or (name if not self.frame.prefix else f"{self.frame.prefix}{name}")
        if isinstance(t, StructType):
            sd = self._struct_def(t.name, line)
            parts = {}
            for f, ft in sd.fields:
                local = self.fresh_local(f"{base}.{f}", ft)
                parts[f] = Var(local)
            entry = ("struct", _StructVal(t.name, parts))
        elif isinstance(t, VoidType):
            raise Diagnostic(line, "void variable")
        else:
            entry = ("var", self.fresh_local(base, t), t)
        self.frame.scopes[-1][name] = entry
        return entry

    # -- entry point ----------------------------------------------------
    def lower_program(self) -> tuple[ProgramIR, HarnessSpec]:
        self.collect()
        if "test" not in self.funcs:
            raise Diagnostic(1, "no function named 'test'", "shape-violation")
        self._check_recursion()
        fn = self.funcs["test"]
        frame = _Frame("test", "")
        frame.scopes.append({})
        self.frames.append(frame)
        params = []
        for p in self._param_decls(fn):
            t = self.ctype(p.type, _line(p))
            entry = self.declare(p.name, t, _line(p), exact=p.name)
            params.append((p.name, t, entry))
        shape = self._harness_shape(params, _line(fn))
        exit_label = _Label("exit")
        frame.exit_label = exit_label
        frame.ret_type = self.ctype(fn.decl.type.type, _line(fn))
        self.lower_stmt(fn.body, tail=False)
        self.place(exit_label)
        halt = self.emit("halt", _line(fn))
        instrs = self._resolve(halt)
        ir = ProgramIR(tuple(instrs), 0, dict(self.locals), dict(self.structs), (), shape, self.overflow_checks)
        ir = self._attach_loops(ir)
        spec = HarnessSpec([(n, t) for n, t, _ in params], shape, self.overflow_checks, dict(self.structs))
        return ir, spec

    def _param_decls(self, fn: c_ast.FuncDef) -> list:
        args = fn.decl.type.args
        if args is None:
            return []
        out = []
        for p in args.params:
            if isinstance(p, c_ast.EllipsisParam):
                raise Diagnostic(_line(p), "variadic functions are not supported")
            if isinstance(p, c_ast.Typename) or p.name is None:
                if isinstance(self.ctype(p.type, _line(p)), VoidType):
                    continue
                raise Diagnostic(_line(p), "unnamed parameter")
            out.append(p)
        return out

    def _resolve(self, halt_idx: int) -> list[Instr]:
        n = len(self.code)
        out = []
        for i, p in enumerate(self.code):
            succs = []
            for s in p.succs:
                if s == _FALL:
                    succs.append(i + 1 if i + 1 < n else halt_idx)
                elif isinstance(s, _Label):
                    assert s.pos is not None, f"unplaced label {s.name}"
                    succs.append(s.pos if s.pos < n else halt_idx)
                else:
                    succs.append(s)
            if p.opcode in ("halt", "fail"):
                succs = []
            out.append(Instr(i, p.opcode, p.dst, tuple(p.args), tuple(succs), p.op, p.field, p.ctype, p.kind, p.line))
        return out

    def _attach_loops(self, ir: ProgramIR) -> ProgramIR:
        loops = []
        for k, (entrance, header, iteration, end) in enumerate(self.loop_ranges):
            loops.append(LoopInfo(k, entrance, iteration, end, header, frozenset(), frozenset()))
        return annotate_loops(replace(ir, loops=tuple(loops)))

    # -- harness --------------------------------------------------------
    def _harness_shape(self, params, line: int) -> InputShape:
        shapes = []
        for name, t, entry in params:
            if isinstance(t, IntType):
                shapes.append(ScalarParam(entry[1], t))
            elif isinstance(t, StructType):
                sd = self._struct_def(t.name, line)
                arr = detect_array_record(sd)
                parts = entry[1].parts
                if arr is not None:
                    x, nx = arr
                    shapes.append(ArrayParam(name, parts[x].name, parts[nx].name, sd.field_type(x).target, sd.field_type(nx)))
                    continue
                for f, ft in sd.fields:
                    if isinstance(ft, IntType):
                        shapes.append(ScalarParam(parts[f].name, ft))
                    elif isinstance(ft, PtrType) and isinstance(ft.target, StructType):
                        self._check_linked(ft.target.name, line)
                        shapes.append(LinkedParam(parts[f].name, ft.target.name))
                    else:
                        raise Diagnostic(line, f"harness field '{name}.{f}' must be an integer or a pointer to a record", "shape-violation")
            elif isinstance(t, PtrType) and isinstance(t.target, StructType):
                self._check_linked(t.target.name, line)
                shapes.append(LinkedParam(entry[1], t.target.name))
            else:
                raise Diagnostic(line, f"harness parameter '{name}' must be an integer, array record or pointer to a record", "shape-violation")
        return InputShape(tuple(shapes))

    def _check_linked(self, sname: str, line: int, seen=None) -> None:
        seen = set() if seen is None else seen
        if sname in seen:
            return
        seen.add(sname)
        sd = self._struct_def(sname, line)
        if detect_array_record(sd) is not None:
            raise Diagnostic(line, f"pointer to array record '{sname}' is not a supported input shape", "shape-violation")
        for f, ft in sd.fields:
            if isinstance(ft, PtrType):
                if not isinstance(ft.target, StructType):
                    raise Diagnostic(line, f"field '{sname}.{f}' points to a non-record type in a linked input", "shape-violation")
                self._check_linked(ft.target.name, line, seen)

    def _check_recursion(self) -> None:
        graph: dict[str, set[str]] = {}
        for name, fn in self.funcs.items():
            calls = set()

            class V(c_ast.NodeVisitor):
                def visit_FuncCall(self, node):
                    if isinstance(node.name, c_ast.ID):
                        calls.add(node.name.name)
                    self.generic_visit(node)

            V().visit(fn.body)
            graph[name] = {c for c in calls if c in self.funcs}
        for start in graph:
            todo = [c for c in graph[start] if c != start]
            visited = set()
            while todo:
                cur = todo.pop()
                if cur == start:
                    raise Diagnostic(_line(self.funcs[start]), f"mutual recursion involving '{start}' is not supported")
                if cur in visited:
                    continue
                visited.add(cur)
                todo.extend(c for c in graph.get(cur, ()) if c != cur)

    # -- statements -----------------------------------------------------
    def lower_stmt(self, s, tail: bool) -> None:
        if s is None or isinstance(s, c_ast.EmptyStatement):
            return
        line = _line(s)
        if isinstance(s, c_ast.Compound):
            self.frame.scopes.append({})
            items = s.block_items or []
            for k, item in enumerate(items):
                nxt = items[k + 1] if k + 1 < len(items) else None
                item_tail = (tail and nxt is None) or (isinstance(nxt, c_ast.Return) and nxt.expr is None)
                self.lower_stmt(item, item_tail)
            self.frame.scopes.pop()
        elif isinstance(s, c_ast.Decl):
            self.lower_decl(s)
        elif isinstance(s, c_ast.DeclList):
            for d in s.decls:
                self.lower_decl(d)
        elif isinstance(s, c_ast.If):
            t, f, end = _Label("then"), _Label("else"), _Label("endif")
            self.lower_cond(s.cond, t, f)
            self.place(t)
            self.lower_stmt(s.iftrue, tail)
            self.jump(end, line)
            self.place(f)
            self.lower_stmt(s.iffalse, tail)
            self.place(end)
        elif isinstance(s, c_ast.While):
            self.lower_loop(s.cond, s.stmt, None, line, do_while=False)
        elif isinstance(s, c_ast.DoWhile):
            self.lower_loop(s.cond, s.stmt, None, line, do_while=True)
        elif isinstance(s, c_ast.For):
            self.frame.scopes.append({})
            if isinstance(s.init, c_ast.DeclList):
                for d in s.init.decls:
                    self.lower_decl(d)
            elif s.init is not None:
                self.lower_expr(s.init, want=False)
            self.lower_loop(s.cond, s.stmt, s.next, line, do_while=False)
            self.frame.scopes.pop()
        elif isinstance(s, c_ast.Break):
            if not self.frame.loop_stack:
                raise Diagnostic(line, "break outside loop")
            self.jump(self.frame.loop_stack[-1][0], line)
        elif isinstance(s, c_ast.Continue):
            conts = [c for _, c in self.frame.loop_stack if c is not None]
            if not conts:
                raise Diagnostic(line, "continue outside loop")
            self.jump(conts[-1], line)
        elif isinstance(s, c_ast.Return):
            self.lower_return(s, line)
        elif isinstance(s, c_ast.Switch):
            self.lower_switch(s, line, tail)
        elif isinstance(s, (c_ast.Goto, c_ast.Label)):
            raise Diagnostic(line, "goto and labels are not supported")
        elif isinstance(s, c_ast.FuncCall) and tail and self._is_self_call(s):
            self.lower_tail_call(s, line)
        else:
            self.lower_expr(s, want=False)

    def _is_self_call(self, e) -> bool:
        return isinstance(e, c_ast.FuncCall) and isinstance(e.name, c_ast.ID) and any(
            f.fname == e.name.name for f in self.frames[1:]) and self.frame.fname == e.name.name

    def lower_decl(self, d: c_ast.Decl) -> None:
        line = _line(d)
        if isinstance(d.type, c_ast.FuncDecl):
            return
        self._register_tagged(d.type)
        self._check_no_bad_types(d.type, line)
        if d.name is None:
            return
        t = self.ctype(d.type, line)
        if d.init is not None and isinstance(t, StructType):
            val = self.lower_struct_init(d.init, t.name, line)
            entry = self.declare(d.name, t, line)
            self.assign_struct(entry[1], val, line)
            return
        val = None
        if d.init is not None:
            if isinstance(d.init, c_ast.InitList):
                raise Diagnostic(line, "initializer list for scalar")
            val = self.lower_expr(d.init)
        entry = self.declare(d.name, t, line)
        if val is not None:
            self.assign_local(entry[1], t, val, line)

    def lower_struct_init(self, init, sname: str, line: int) -> _StructVal:
        if isinstance(init, c_ast.InitList):
            sd = self._struct_def(sname, line)
            parts = {}
            top_fields = []
            for d in self.raw_structs[sname]:
                top_fields.append(d.name)
            vals = list(init.exprs)
            for fname in top_fields:
                sub = [f for f, _ in sd.fields if f == fname or f.startswith(fname + ".")]
                if vals:
                    v = vals.pop(0)
                    if isinstance(v, c_ast.NamedInitializer):
                        raise Diagnostic(line, "designated initializers are not supported")
                    if len(sub) == 1 and sub[0] == fname:
                        parts[fname] = self.coerce(self.lower_expr(v), sd.field_type(fname), line)
                    else:
                        raise Diagnostic(line, "nested struct initializer lists are not supported")
                else:
                    for f in sub:
                        parts[f] = Null() if is_ptr(sd.field_type(f)) else Const(0)
            return _StructVal(sname, parts)
        return self.lower_struct_expr(init)

    def lower_loop(self, cond, body, nxt, line: int, do_while: bool) -> None:
        header, body_l, cont, end_l, iter_l = (_Label(n) for n in ("header", "body", "cont", "end", "iter"))
        entrance = self.emit("jump", line, succs=(header,))
        self.place(header)
        header_pos = len(self.code)
        if not do_while:
            if cond is None:
                self.jump(body_l, line)
            else:
                self.lower_cond(cond, body_l, end_l)
        self.place(body_l)
        self.frame.loop_stack.append((end_l, cont))
        self.lower_stmt(body, tail=False)
        self.frame.loop_stack.pop()
        self.place(cont)
        if nxt is not None:
            self.lower_expr(nxt, want=False)
        if do_while and cond is not None:
            self.lower_cond(cond, iter_l, end_l)
        self.place(iter_l)
        iteration = self.emit("jump", line, succs=(header,))
        self.place(end_l)
        end = self.emit("jump", line)
        self.loop_ranges.append([entrance, header_pos, iteration, end])

    def lower_switch(self, s: c_ast.Switch, line: int, tail: bool) -> None:
        v = self.lower_expr(s.cond)
        val = self.materialize(v, line)
        end = _Label("swend")
        cases = []
        items = s.stmt.block_items if isinstance(s.stmt, c_ast.Compound) else [s.stmt]
        for it in items or []:
            if isinstance(it, (c_ast.Case, c_ast.Default)):
                cases.append((it, _Label("case")))
        default = None
        for it, lab in cases:
            if isinstance(it, c_ast.Default):
                default = lab
                continue
            k = self._const_eval(it.expr)
            nxt = _Label("next")
            self.emit("branch", line, args=(val[0], Const(k)), op="==", succs=(lab, nxt))
            self.place(nxt)
        self.jump(default or end, line)
        self.frame.loop_stack.append((end, None))
        self.frame.scopes.append({})
        labels = dict((id(it), lab) for it, lab in cases)
        for it in items or []:
            if isinstance(it, (c_ast.Case, c_ast.Default)):
                self.place(labels[id(it)])
                for sub in it.stmts or []:
                    self.lower_stmt(sub, False)
            else:
                self.lower_stmt(it, False)
        self.frame.scopes.pop()
        self.frame.loop_stack.pop()
        self.place(end)

    def lower_return(self, s: c_ast.Return, line: int) -> None:
        fr = self.frame
        if s.expr is not None and self._is_self_call(s.expr):
            self.lower_tail_call(s.expr, line)
            return
        if s.expr is not None and fr.ret_var is not None:
            if isinstance(fr.ret_var, _StructVal):
                self.assign_struct(fr.ret_var, self.lower_struct_expr(s.expr), line)
            else:
                self.assign_local(fr.ret_var, fr.ret_type, self.lower_expr(s.expr), line)
        elif s.expr is not None:
            self.lower_expr(s.expr, want=False)
        self.jump(fr.exit_label, line)

    def lower_tail_call(self, call: c_ast.FuncCall, line: int) -> None:
        fr = self.frame
        if fr.tail_header is None:
            raise Diagnostic(line, "recursion that is not tail recursion is not supported")
        args = call.args.exprs if call.args else []
        if len(args) != len(fr.params):
            raise Diagnostic(line, f"wrong number of arguments to '{fr.fname}'")
        vals = []
        for a, (pname, pt, entry) in zip(args, fr.params):
            if isinstance(pt, StructType):
                sv = self.lower_struct_expr(a)
                tmp = _StructVal(sv.sname, {f: Var(self.materialize(v, line, self._field_type(sv.sname, f))[0].name) for f, v in sv.parts.items()})
                vals.append(tmp)
            else:
                v = self.coerce(self.lower_expr(a), pt, line)
                tmp = self.temp(pt)
                self.emit("assign", line, dst=tmp, args=(v,), ctype=pt)
                vals.append(Var(tmp))
        for v, (pname, pt, entry) in zip(vals, fr.params):
            if isinstance(pt, StructType):
                self.assign_struct(entry[1], v, line)
            else:
                self.emit("assign", line, dst=entry[1], args=(v,), ctype=pt)
        self.jump(fr.tail_cont, line)

    # -- conditions -----------------------------------------------------
    def lower_cond(self, e, t: _Label, f: _Label) -> None:
        line = _line(e)
        if isinstance(e, c_ast.BinaryOp) and e.op == "&&":
            mid = _Label("and")
            self.lower_cond(e.left, mid, f)
            self.place(mid)
            self.lower_cond(e.right, t, f)
            return
        if isinstance(e, c_ast.BinaryOp) and e.op == "||":
            mid = _Label("or")
            self.lower_cond(e.left, t, mid)
            self.place(mid)
            self.lower_cond(e.right, t, f)
            return
        if isinstance(e, c_ast.UnaryOp) and e.op == "!":
            self.lower_cond(e.expr, f, t)
            return
        if isinstance(e, c_ast.BinaryOp) and e.op in ("<", "<=", ">", ">=", "==", "!="):
            a, b = self.lower_compare_operands(e.left, e.right, line)
            if isinstance(a, Const) and isinstance(b, Const):
                from .concrete import _cmp
                self.jump(t if _cmp(e.op, a.value, b.value) else f, line)
                return
            self.emit("branch", line, args=(a, b), op=e.op, succs=(t, f))
            return
        v, ty = self.lower_expr(e)
        if isinstance(v, Const):
            self.jump(t if v.value != 0 else f, line)
            return
        zero = Null() if is_ptr(ty) else Const(0)
        self.emit("branch", line, args=(v, zero), op="!=", succs=(t, f))

    def lower_compare_operands(self, left, right, line: int):
        a, ta = self.lower_expr(left)
        b, tb = self.lower_expr(right)
        if is_ptr(ta) or is_ptr(tb):
            if not is_ptr(ta):
                a = self._null_or_reject(a, line)
            if not is_ptr(tb):
                b = self._null_or_reject(b, line)
            return a, b
        ct = common_type(ta, tb)
        return self.coerce((a, ta), ct, line), self.coerce((b, tb), ct, line)

    def _null_or_reject(self, v, line):
        if isinstance(v, Const) and v.value == 0:
            return Null()
        raise Diagnostic(line, "comparison between pointer and non-null integer")

    # -- expressions ----------------------------------------------------
    def materialize(self, val, line: int, t: CType | None = None) -> tuple[Operand, CType]:
        """Copy a value into a fresh temporary (used when operands could change)."""
        if isinstance(val, tuple):
            v, vt = val
        else:
            v, vt = val, t
        tmp = self.temp(vt)
        self.emit("assign", line, dst=tmp, args=(v,), ctype=vt)
        return Var(tmp), vt

    def coerce(self, val: tuple[Operand, CType], target: CType, line: int) -> Operand:
        v, t = val
        if isinstance(target, IntType):
            if is_ptr(t):
                if isinstance(v, Null):
                    return Const(0)
                raise Diagnostic(line, "casting a pointer to an integer is not supported")
            if t == target:
                return v
            if isinstance(v, Const):
                return Const(target.wrap(v.value))
            tmp = self.temp(target)
            self.emit("cast", line, dst=tmp, args=(v,), ctype=target)
            return Var(tmp)
        if is_ptr(target):
            if isinstance(t, IntType):
                if isinstance(v, Const) and v.value == 0:
                    return Null()
                raise Diagnostic(line, "casting a non-null integer to a pointer is not supported")
            return v
        raise Diagnostic(line, f"cannot convert to {target}")

    def assign_local(self, name: str, t: CType, val, line: int) -> None:
        v = self.coerce(val, t, line)
        self.emit("assign", line, dst=name, args=(v,), ctype=t)

    def assign_struct(self, dst: _StructVal, src: _StructVal, line: int) -> None:
        if dst.sname != src.sname:
            raise Diagnostic(line, "struct type mismatch")
        # read all sources first so self-overlapping copies behave
        staged = {}
        for f, v in src.parts.items():
            if isinstance(v, Var) and any(isinstance(d, Var) and d.name == v.name for d in dst.parts.values()):
                staged[f] = self.materialize(v, line, self._field_type(src.sname, f))[0]
            else:
                staged[f] = v
        for f, d in dst.parts.items():
            self.emit("assign", line, dst=d.name, args=(staged[f],), ctype=self._field_type(dst.sname, f))

    def _field_type(self, sname: str, f: str) -> CType:
        return self.structs[sname].field_type(f)

    def lower_expr(self, e, want: bool = True) -> tuple[Operand, CType]:
        line = _line(e)
        if isinstance(e, c_ast.Constant):
            if e.type == "string":
                raise Diagnostic(line, "string literals are not supported")
            if e.type == "char":
                return Const(_parse_char(e.value, line)), INT
            if e.type in ("float", "double"):
                raise Diagnostic(line, "floating point constants are not supported")
            v, t = _parse_int_constant(e)
            return Const(v), t
        if isinstance(e, c_ast.ID):
            ent = self.lookup(e.name, line)
            if ent[0] == "enum":
                return Const(ent[1]), INT
            if ent[0] == "struct":
                raise Diagnostic(line, f"struct '{e.name}' used as a scalar")
            return Var(ent[1]), ent[2]
        if isinstance(e, c_ast.Cast):
            target = self.ctype(e.to_type, line)
            self._check_no_bad_types(e.to_type, line)
            if isinstance(target, VoidType):
                self.lower_expr(e.expr, want=False)
                return Const(0), INT
            if isinstance(e.expr, c_ast.FuncCall) and isinstance(e.expr.name, c_ast.ID) and e.expr.name.name == "malloc":
                return self.lower_malloc(e.expr, line, hint=target)
            val = self.lower_expr(e.expr)
            if isinstance(target, IntType) and is_ptr(val[1]) and not isinstance(val[0], Null):
                raise Diagnostic(line, "casting a non-null pointer to an integer is not supported")
            if is_ptr(target):
                if is_ptr(val[1]):
                    return val[0], target
                return self.coerce(val, target, line), target
            return self.coerce(val, target, line), target
        if isinstance(e, c_ast.UnaryOp):
            return self.lower_unary(e, line, want)
        if isinstance(e, c_ast.BinaryOp):
            return self.lower_binary(e, line)
        if isinstance(e, c_ast.Assignment):
            return self.lower_assignment(e, line)
        if isinstance(e, c_ast.TernaryOp):
            ta = self.lower_expr_type(e.iftrue, line)
            tb = self.lower_expr_type(e.iffalse, line)
            if is_ptr(ta) or is_ptr(tb):
                rt = ta if is_ptr(ta) else tb
            else:
                rt = common_type(ta, tb)
            tmp = self.temp(rt)
            t_l, f_l, end = _Label("tt"), _Label("tf"), _Label("tend")
            self.lower_cond(e.cond, t_l, f_l)
            self.place(t_l)
            self.assign_local(tmp, rt, self.lower_expr(e.iftrue), line)
            self.jump(end, line)
            self.place(f_l)
            self.assign_local(tmp, rt, self.lower_expr(e.iffalse), line)
            self.place(end)
            return Var(tmp), rt
        if isinstance(e, c_ast.FuncCall):
            return self.lower_call(e, line, want)
        if isinstance(e, c_ast.ArrayRef):
            p, elem = self.element_pointer(e, line)
            return self.load(p, None, elem, line)
        if isinstance(e, c_ast.StructRef):
            lv = self.lower_lvalue(e)
            return self.read_lvalue(lv, line)
        if isinstance(e, c_ast.ExprList):
            out = (Const(0), INT)
            for sub in e.exprs:
                out = self.lower_expr(sub)
            return out
        raise Diagnostic(line, f"unsupported expression {type(e).__name__}")

    def bool_value(self, e, line: int) -> tuple[Operand, CType]:
        tmp = self.temp(INT)
        t_l, f_l, end = _Label("bt"), _Label("bf"), _Label("bend")
        self.lower_cond(e, t_l, f_l)
        self.place(t_l)
        self.emit("assign", line, dst=tmp, args=(Const(1),), ctype=INT)
        self.jump(end, line)
        self.place(f_l)
        self.emit("assign", line, dst=tmp, args=(Const(0),), ctype=INT)
        self.place(end)
        return Var(tmp), INT

    def lower_unary(self, e: c_ast.UnaryOp, line: int, want: bool):
        op = e.op
        if op == "sizeof":
            return Const(self.sizeof(e.expr, line)), IntType(64, False)
        if op == "!":
            return self.bool_value(e, line)
        if op == "&":
            raise Diagnostic(line, "taking addresses with '&' is not supported")
        if op == "*":
            p, pt = self.lower_expr(e.expr)
            if not is_ptr(pt):
                raise Diagnostic(line, "dereference of a non-pointer")
            if isinstance(pt.target, StructType):
                raise Diagnostic(line, "struct value dereference used as a scalar")
            return self.load(p, None, pt.target, line)
        if op in ("p++", "p--", "++", "--"):
            lv = self.lower_lvalue(e.expr)
            old = self.read_lvalue(lv, line)
            if op.startswith("p") and want:
                old = self.materialize(old, line)
            delta = 1 if "+" in op else -1
            new = self.add_const(old, delta, line)
            self.write_lvalue(lv, new, line)
            return old if op.startswith("p") else new
        if op in ("-", "~", "+"):
            v, t = self.lower_expr(e.expr)
            if not isinstance(t, IntType):
                raise Diagnostic(line, f"unary '{op}' on a pointer")
            pt = promote(t)
            v = self.coerce((v, t), pt, line)
            if op == "+":
                return v, pt
            if isinstance(v, Const):
                return Const(pt.wrap(-v.value if op == "-" else ~v.value)), pt
            tmp = self.temp(pt)
            self.emit("unop", line, dst=tmp, args=(v,), op=op, ctype=pt)
            return Var(tmp), pt
        raise Diagnostic(line, f"unsupported unary operator '{op}'")

    def add_const(self, val, delta: int, line: int):
        v, t = val
        if is_ptr(t):
            tmp = self.temp(t)
            self.emit("ptradd", line, dst=tmp, args=(v, Const(abs(delta))), op="+" if delta > 0 else "-", ctype=t)
            return Var(tmp), t
        pt = promote(t)
        a = self.coerce((v, t), pt, line)
        tmp = self.temp(pt)
        self.emit("binop", line, dst=tmp, args=(a, Const(abs(delta))), op="+" if delta > 0 else "-", ctype=pt)
        return Var(tmp), pt

    def sizeof(self, node, line: int) -> int:
        t = self.ctype(node, line) if isinstance(node, (c_ast.Typename, c_ast.TypeDecl)) else self.lower_expr_type(node, line)
        return self._size_of_type(t)

    def lower_expr_type(self, node, line):
        """Type of ``node`` without keeping any code it would emit."""
        saved = (len(self.code), dict(self.locals), self.counter, len(self.loop_ranges), dict(self.inline_counts))
        try:
            _, t = self.lower_expr(node)
        finally:
            del self.code[saved[0]:]
            self.locals = saved[1]
            self.counter = saved[2]
            del self.loop_ranges[saved[3]:]
            self.inline_counts = saved[4]
        return t

    def _size_of_type(self, t: CType) -> int:
        if isinstance(t, IntType):
            return t.bits // 8
        if is_ptr(t):
            return 8
        if isinstance(t, StructType):
            return sum(self._size_of_type(ft) for _, ft in self.structs[t.name].fields) or 1
        return 1

    def lower_binary(self, e: c_ast.BinaryOp, line: int):
        op = e.op
        if op in ("&&", "||", "<", "<=", ">", ">=", "==", "!="):
            return self.bool_value(e, line)
        a, ta = self.lower_expr(e.left)
        b, tb = self.lower_expr(e.right)
        return self.arith(op, (a, ta), (b, tb), line)

    def arith(self, op: str, left, right, line: int):
        a, ta = left
        b, tb = right
        if is_ptr(ta) or is_ptr(tb):
            if is_ptr(ta) and is_ptr(tb) and op == "-":
                rt = IntType(64, True)
                tmp = self.temp(rt)
                self.emit("ptrdiff", line, dst=tmp, args=(a, b), ctype=rt)
                return Var(tmp), rt
            if op in ("+", "-") and is_ptr(ta) and isinstance(tb, IntType):
                return self.ptr_add(a, ta, b, op, line)
            if op == "+" and is_ptr(tb) and isinstance(ta, IntType):
                return self.ptr_add(b, tb, a, op, line)
            raise Diagnostic(line, f"unsupported pointer arithmetic '{op}'")
        if op in ("<<", ">>"):
            rt = promote(ta)
            b = self.coerce((b, tb), promote(tb), line)
        else:
            rt = common_type(ta, tb)
            b = self.coerce((b, tb), rt, line)
        a = self.coerce((a, ta), rt, line)
        if isinstance(a, Const) and isinstance(b, Const):
            from .concrete import Stuck, arith
            try:
                return Const(rt.wrap(arith(op, a.value, b.value))), rt
            except Stuck:
                pass
        tmp = self.temp(rt)
        self.emit("binop", line, dst=tmp, args=(a, b), op=op, ctype=rt)
        return Var(tmp), rt

    def ptr_add(self, p, pt, k, op, line):
        if isinstance(pt.target, VoidType):
            raise Diagnostic(line, "arithmetic on void pointers is not supported")
        if isinstance(k, Const) and k.value == 0:
            return p, pt
        tmp = self.temp(pt)
        if isinstance(k, Const) and k.value < 0:
            k = Const(-k.value)
            op = "-" if op == "+" else "+"
        self.emit("ptradd", line, dst=tmp, args=(p, k), op=op, ctype=pt)
        return Var(tmp), pt

    def element_pointer(self, e: c_ast.ArrayRef, line: int):
        base, bt = self.lower_expr(e.name)
        idx, it = self.lower_expr(e.subscript)
        if is_ptr(it) and isinstance(bt, IntType):
            base, bt, idx, it = idx, it, base, bt
        if not is_ptr(bt):
            raise Diagnostic(line, "subscript of a non-pointer")
        p, _ = self.ptr_add(base, bt, idx, "+", line)
        return p, bt.target

    def load(self, p: Operand, fld: str | None, t: CType, line: int):
        if isinstance(p, Null):
            raise Diagnostic(line, "dereference of a null constant")
        tmp = self.temp(t)
        self.emit("load", line, dst=tmp, args=(p,), field=fld, ctype=t)
        return Var(tmp), t

    # -- lvalues --------------------------------------------------------
    def lower_lvalue(self, e):
        """Returns ('local', name, t) | ('mem', ptr, field, t) | ('slocal', _StructVal) | ('smem', ptr, prefix, sname)."""
        line = _line(e)
        if isinstance(e, c_ast.ID):
            ent = self.lookup(e.name, line)
            if ent[0] == "var":
                return ("local", ent[1], ent[2])
            if ent[0] == "struct":
                return ("slocal", ent[1])
            raise Diagnostic(line, f"cannot assign to '{e.name}'")
        if isinstance(e, c_ast.UnaryOp) and e.op == "*":
            p, pt = self.lower_expr(e.expr)
            if not is_ptr(pt):
                raise Diagnostic(line, "dereference of a non-pointer")
            if isinstance(pt.target, StructType):
                return ("smem", p, "", pt.target.name)
            return ("mem", p, None, pt.target)
        if isinstance(e, c_ast.ArrayRef):
            p, elem = self.element_pointer(e, line)
            if isinstance(elem, StructType):
                return ("smem", p, "", elem.name)
            return ("mem", p, None, elem)
        if isinstance(e, c_ast.StructRef):
            if e.type == "->":
                p, pt = self.lower_expr(e.name)
                if not (is_ptr(pt) and isinstance(pt.target, StructType)):
                    raise Diagnostic(line, "'->' on a non-struct pointer")
                base = ("smem", p, "", pt.target.name)
            else:
                base = self.lower_lvalue(e.name)
            fname = e.field.name
            if base[0] == "slocal":
                sv = base[1]
                ft = self._member_type(sv.sname, fname, line)
                if isinstance(ft, StructType):
                    parts = {f[len(fname) + 1:]: v for f, v in sv.parts.items() if f.startswith(fname + ".")}
                    return ("slocal", _StructVal(ft.name, parts))
                return ("local", sv.parts[fname].name, ft)
            if base[0] == "smem":
                _, p, prefix, sname = base
                ft = self._member_type(sname, fname, line)
                if isinstance(ft, StructType):
                    return ("smem", p, prefix + fname + ".", ft.name)
                return ("mem", p, prefix + fname if prefix else fname, ft)
            raise Diagnostic(line, "member access on a non-struct")
        raise Diagnostic(line, f"unsupported lvalue {type(e).__name__}")

    def _member_type(self, sname: str, fname: str, line: int) -> CType:
        for d in self.raw_structs.get(sname, []):
            if d.name == fname:
                return self.ctype(d.type, line)
        raise Diagnostic(line, f"struct '{sname}' has no field '{fname}'")

    def read_lvalue(self, lv, line: int):
        if lv[0] == "local":
            return Var(lv[1]), lv[2]
        if lv[0] == "mem":
            _, p, fld, t = lv
            return self.load(p, fld, t, line)
        raise Diagnostic(line, "struct value used as a scalar")

    def write_lvalue(self, lv, val, line: int) -> None:
        if lv[0] == "local":
            self.assign_local(lv[1], lv[2], val, line)
        elif lv[0] == "mem":
            _, p, fld, t = lv
            v = self.coerce(val, t, line)
            self.emit("store", line, args=(p, v), field=fld, ctype=t)
        else:
            raise Diagnostic(line, "struct value used as a scalar")

    def lower_struct_expr(self, e) -> _StructVal:
        line = _line(e)
        if isinstance(e, c_ast.FuncCall):
            out = self.lower_call(e, line, True)
            if not isinstance(out, _StructVal):
                raise Diagnostic(line, "expected a struct value")
            return out
        if isinstance(e, c_ast.Assignment) and e.op == "=":
            self.lower_assignment(e, line)
            return self.lower_struct_expr(e.lvalue)
        lv = self.lower_lvalue(e)
        if lv[0] == "slocal":
            return lv[1]
        if lv[0] == "smem":
            _, p, prefix, sname = lv
            sd = self._struct_def(sname, line)
            parts = {}
            for f, ft in sd.fields:
                parts[f] = self.load(p, prefix + f, ft, line)[0]
            return _StructVal(sname, parts)
        raise Diagnostic(line, "expected a struct value")

    def write_struct(self, lv, val: _StructVal, line: int) -> None:
        if lv[0] == "slocal":
            self.assign_struct(lv[1], val, line)
        else:
            _, p, prefix, sname = lv
            for f, ft in self._struct_def(sname, line).fields:
                self.emit("store", line, args=(p, val.parts[f]), field=prefix + f, ctype=ft)

    def lower_assignment(self, e: c_ast.Assignment, line: int):
        lv = self.lower_lvalue(e.lvalue)
        if lv[0] in ("slocal", "smem"):
            if e.op != "=":
                raise Diagnostic(line, "compound assignment on a struct")
            val = self.lower_struct_expr(e.rvalue)
            self.write_struct(lv, val, line)
            return Const(0), INT
        if e.op == "=":
            if isinstance(e.rvalue, c_ast.FuncCall) and isinstance(e.rvalue.name, c_ast.ID) and e.rvalue.name.name == "malloc":
                val = self.lower_malloc(e.rvalue, line, hint=lv[-1])
            else:
                val = self.lower_expr(e.rvalue)
        else:
            cur = self.read_lvalue(lv, line)
            rhs = self.lower_expr(e.rvalue)
            val = self.arith(e.op[:-1], cur, rhs, line)
        t = lv[-1]
        v = self.coerce(val, t, line)
        self.write_lvalue(lv, (v, t), line)
        if lv[0] == "local":
            return Var(lv[1]), t
        return v, t

    # -- calls ----------------------------------------------------------
    def lower_call(self, e: c_ast.FuncCall, line: int, want: bool):
        if not isinstance(e.name, c_ast.ID):
            raise Diagnostic(line, "indirect calls are not supported")
        name = e.name.name
        args = e.args.exprs if e.args else []
        if name in FAIL_NAMES:
            self.emit("fail", line, succs=())
            return Const(0), INT
        if name in IGNORE_NAMES:
            self.emit("ignore", line, succs=(self.frames[0].exit_label,))
            return Const(0), INT
        if name in ASSUME_NAMES or name in ASSERT_NAMES:
            if len(args) != 1:
                raise Diagnostic(line, f"'{name}' takes one argument")
            ok, bad = _Label("ok"), _Label("bad")
            self.lower_cond(args[0], ok, bad)
            self.place(bad)
            if name in ASSUME_NAMES:
                self.emit("ignore", line, succs=(self.frames[0].exit_label,))
            else:
                self.emit("fail", line, succs=())
            self.place(ok)
            return Const(0), INT
        if name.startswith("nondet_") or name.startswith("__VERIFIER_nondet_"):
            t = self._nondet_type(name, line)
            tmp = self.temp(t)
            self.emit("nondet", line, dst=tmp, ctype=t)
            return Var(tmp), t
        if name == "malloc":
            return self.lower_malloc(e, line, hint=None)
        if name in ("free", "calloc", "realloc"):
            raise Diagnostic(line, f"'{name}' is not supported")
        if name in self.funcs:
            return self.inline(name, args, line, want)
        raise Diagnostic(line, f"call to undefined function '{name}'")

    def _nondet_type(self, name: str, line: int) -> CType:
        if name in self.protos:
            t = self.ctype(self.protos[name].type, line)
            if isinstance(t, IntType):
                return t
        suffix = name.split("nondet_", 1)[1]
        if suffix in _NONDET_TYPES:
            return _NONDET_TYPES[suffix]
        if suffix in self.typedefs:
            t = self.ctype(self.typedefs[suffix], line)
            if isinstance(t, IntType):
                return t
        raise Diagnostic(line, f"unknown nondet intrinsic '{name}'")

    def lower_malloc(self, e: c_ast.FuncCall, line: int, hint: CType | None):
        args = e.args.exprs if e.args else []
        if len(args) != 1:
            raise Diagnostic(line, "malloc takes one argument")
        size = args[0]
        elem = None
        count = None

        def sizeof_type(node):
            if isinstance(node, c_ast.UnaryOp) and node.op == "sizeof":
                return self.ctype(node.expr, line) if isinstance(node.expr, c_ast.Typename) else self.lower_expr_type(node.expr, line)
            return None

        elem = sizeof_type(size)
        if elem is None and isinstance(size, c_ast.BinaryOp) and size.op == "*":
            for a, b in ((size.left, size.right), (size.right, size.left)):
                et = sizeof_type(a)
                if et is not None:
                    elem = et
                    count = self.coerce(self.lower_expr(b), IntType(64, False), line)
                    break
        if elem is None:
            raise Diagnostic(line, "malloc size must be sizeof(T) or n * sizeof(T)")
        if hint is not None and is_ptr(hint) and not isinstance(hint.target, VoidType):
            if hint.target != elem:
                raise Diagnostic(line, "malloc element type does not match the target pointer")
        pt = PtrType(elem)
        tmp = self.temp(pt)
        if isinstance(elem, StructType) and count is None:
            self.emit("alloc", line, dst=tmp, ctype=elem)
        else:
            self.emit("alloc", line, dst=tmp, args=(count if count is not None else Const(1),), ctype=elem)
        return Var(tmp), pt

    def inline(self, name: str, args: list, line: int, want: bool):
        fn = self.funcs[name]
        if len(self.frames) > self.MAX_INLINE_DEPTH:
            raise Diagnostic(line, "inlining depth exceeded")
        if any(fr.fname == name for fr in self.frames):
            raise Diagnostic(line, f"recursion in '{name}' that is not tail recursion is not supported")
        params = self._param_decls(fn)
        if len(params) != len(args):
            raise Diagnostic(line, f"wrong number of arguments to '{name}'")
        ptypes = [self.ctype(p.type, _line(p)) for p in params]
        # evaluate arguments in the caller frame
        vals = []
        for a, pt in zip(args, ptypes):
            if isinstance(pt, StructType):
                vals.append(self.lower_struct_expr(a))
            else:
                if isinstance(a, c_ast.FuncCall) and isinstance(a.name, c_ast.ID) and a.name.name == "malloc":
                    vals.append(self.coerce(self.lower_malloc(a, line, pt), pt, line))
                else:
                    vals.append(self.coerce(self.lower_expr(a), pt, line))
        k = self.inline_counts.get(name, 0) + 1
        self.inline_counts[name] = k
        frame = _Frame(name, f"{name}{k}::")
        frame.scopes.append({})
        frame.exit_label = _Label("ret")
        rt = self.ctype(fn.decl.type.type, line)
        frame.ret_type = rt
        self.frames.append(frame)
        try:
            for p, pt, v in zip(params, ptypes, vals):
                entry = self.declare(p.name, pt, line)
                frame.params.append((p.name, pt, entry))
                if isinstance(pt, StructType):
                    self.assign_struct(entry[1], v, line)
                else:
                    self.emit("assign", line, dst=entry[1], args=(v,), ctype=pt)
            if isinstance(rt, StructType):
                sd = self._struct_def(rt.name, line)
                frame.ret_var = _StructVal(rt.name, {f: Var(self.fresh_local(f"{frame.prefix}ret.{f}", ft)) for f, ft in sd.fields})
            elif not isinstance(rt, VoidType):
                frame.ret_var = self.fresh_local(f"{frame.prefix}ret", rt)
            if self._has_tail_self_call(fn.body, name):
                self._lower_tail_loop(fn, frame, line)
            else:
                self.lower_stmt(fn.body, tail=True)
            self.place(frame.exit_label)
        finally:
            self.frames.pop()
        if isinstance(frame.ret_var, _StructVal):
            return frame.ret_var
        if frame.ret_var is None:
            return Const(0), INT
        return Var(frame.ret_var), rt

    def _lower_tail_loop(self, fn, frame: _Frame, line: int) -> None:
        """Tail-recursive bodies become a marked loop; returns leave through its end."""
        header, cont, end_l = _Label("theader"), _Label("tcont"), _Label("tend")
        real_exit = frame.exit_label
        entrance = self.emit("jump", line, succs=(header,))
        self.place(header)
        header_pos = len(self.code)
        frame.tail_header = header
        frame.tail_cont = cont
        frame.exit_label = end_l
        self.lower_stmt(fn.body, tail=True)
        self.jump(end_l, line)
        self.place(cont)
        iteration = self.emit("jump", line, succs=(header,))
        self.place(end_l)
        end = self.emit("jump", line, succs=(real_exit,))
        frame.exit_label = real_exit
        self.loop_ranges.append([entrance, header_pos, iteration, end])

    @staticmethod
    def _has_tail_self_call(body, name: str) -> bool:
        found = []

        class V(c_ast.NodeVisitor):
            def visit_FuncCall(self, node):
                if isinstance(node.name, c_ast.ID) and node.name.name == name:
                    found.append(node)
                self.generic_visit(node)

        V().visit(body)
        return bool(found)


def detect_array_record(sd: StructDef) -> tuple[str, str] | None:
    """(X, n_X) when ``sd`` is exactly one pointer field X and one integer field n_X."""
    ptrs = [f for f, t in sd.fields if is_ptr(t)]
    if len(ptrs) != 1 or len(sd.fields) != 2:
        return None
    x = ptrs[0]
    nx = f"n_{x}"
    try:
        t = sd.field_type(nx)
    except KeyError:
        return None
    target = sd.field_type(x).target
    if not isinstance(t, IntType) or isinstance(target, VoidType) or is_ptr(target):
        return None
    return x, nx


def detect_array_records(harness: HarnessSpec) -> dict[str, tuple]:
    """Classify each harness parameter: scalar, array record, linked record or scalar record."""
    out: dict[str, tuple] = {}
    for name, t in harness.params:
        if isinstance(t, StructType):
            sd = harness.structs[t.name]
            arr = detect_array_record(sd)
            if arr is not None:
                out[name] = ("array-record",) + arr
            elif sd.pointer_fields():
                out[name] = ("linked-record",)
            else:
                out[name] = ("scalar-record",)
        elif isinstance(t, PtrType):
            out[name] = ("linked-record",)
        else:
            out[name] = ("scalar",)
    return out


def annotate_loops(ir: ProgramIR) -> ProgramIR:
    """Fill in each loop's body and written-locals set from its marker range."""
    loops = []
    for lp in ir.loops:
        body = frozenset(range(lp.header, lp.end))
        relevant = frozenset(ir.instrs[i].dst for i in body if ir.instrs[i].dst)
        loops.append(replace(lp, body=body, relevant=relevant))
    return replace(ir, loops=tuple(loops))


def _parse_char(text: str, line: int) -> int:
    body = text[1:-1]
    if body.startswith("\\"):
        esc = {"n": 10, "t": 9, "r": 13, "0": 0, "\\": 92, "'": 39, '"': 34, "a": 7, "b": 8, "f": 12, "v": 11}
        if body[1:] in esc:
            return esc[body[1:]]
        if body[1] == "x":
            return int(body[2:], 16)
        if body[1:].isdigit():
            return int(body[1:], 8)
        raise Diagnostic(line, f"unsupported character escape {text}")
    if len(body) != 1:
        raise Diagnostic(line, f"multi-character constant {text}")
    v = ord(body)
    return v - 256 if v > 127 else v


def _parse_int_constant(e: c_ast.Constant) -> tuple[int, IntType]:
    text = e.value.lower()
    suffix = ""
    while text and text[-1] in "ul":
        suffix = text[-1] + suffix
        text = text[:-1]
    if text.startswith("0x"):
        v = int(text, 16)
    elif text.startswith("0") and len(text) > 1:
        v = int(text, 8)
    else:
        v = int(text)
    unsigned = "u" in suffix
    long = "l" in suffix
    if long or v > 0xFFFFFFFF or (not unsigned and v > 0x7FFFFFFF and not text.startswith("0x")):
        t = IntType(64, not unsigned)
    elif v > 0x7FFFFFFF:
        t = IntType(32, False)
    else:
        t = IntType(32, not unsigned)
    return v, t


def parse_and_lower(source: str, overflow_checks: bool = False) -> tuple[ProgramIR, HarnessSpec]:
    """Parse C text and lower it to IR; raises Diagnostic on rejection."""
    text = preprocess(source)
    try:
        ast = c_parser.CParser().parse(text, filename="<input>")
    except Exception as exc:  # pycparser raises ParseError with "file:line:col: msg"
        msg = str(exc)
        m = re.search(r":(\d+):(\d+)?:?\s*(.*)", msg)
        line = int(m.group(1)) if m else 0
        raise Diagnostic(line, m.group(3) if m else msg, "parse-error") from None
    lowerer = Lowerer(ast, overflow_checks)
    return lowerer.lower_program()


def load_program(source: str, overflow_checks: bool = False, optimize: bool = True) -> tuple[ProgramIR, HarnessSpec]:
    """Full pipeline: lower, instrument and run the pre-pass."""
    from .passes import dataflow_optimize, instrument_checks

    ir, spec = parse_and_lower(source, overflow_checks)
    ir = instrument_checks(ir, overflow_checks)
    if optimize:
        ir = dataflow_optimize(ir)
    ir.validate()
    return ir, spec
