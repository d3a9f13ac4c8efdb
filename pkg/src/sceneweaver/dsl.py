"""The scene-editing language: grammar, parser, printer, static validator.

Grammar (EBNF):
    program := stmt*
    stmt    := ident "=" expr | expr | "for" ident "in" int ".." int "{" stmt* "}"
    expr    := call | ident | literal | expr binop expr | "-" expr | "(" expr ")"
    call    := ident "(" [expr {"," expr}] ")"

Literals are decimal numbers, double-quoted strings with backslash escapes,
true/false, and bracketed vectors `[x, y, z]` (or lists of vectors for
trajectories). `#` starts a comment. Loops are bounded; the builtin set is
closed, so programs cannot reach the host environment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import DslSyntaxError

MAX_LOOP = 64

KEYWORDS = ("for", "in", "true", "false")
_SYMBOLS = ("..", "=", "(", ")", "[", "]", "{", "}", ",", "+", "-", "*", "/")


# --- tokens ---------------------------------------------------------------


@dataclass
class Token:
    kind: str  # ident, number, string, symbol, keyword, eof
    text: str
    line: int
    col: int


def tokenize(source: str) -> list:
    tokens = []
    line, col = 1, 1
    i = 0
    n = len(source)
    while i < n:
        ch = source[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and source[i] != "\n":
                i += 1
            continue
        start_col = col
        if ch == '"':
            j = i + 1
            out = []
            while j < n and source[j] != '"':
                if source[j] == "\\" and j + 1 < n:
                    esc = source[j + 1]
                    out.append({"n": "\n", "t": "\t", '"': '"', "\\": "\\"}.get(esc, esc))
                    j += 2
                else:
                    if source[j] == "\n":
                        raise DslSyntaxError("unterminated string", line, start_col,
                                             expected=('"',))
                    out.append(source[j])
                    j += 1
            if j >= n:
                raise DslSyntaxError("unterminated string", line, start_col,
                                     expected=('"',))
            tokens.append(Token("string", "".join(out), line, start_col))
            col += j + 1 - i
            i = j + 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and source[i + 1].isdigit()):
            j = i
            seen_dot = False
            while j < n and (source[j].isdigit() or (source[j] == "." and not seen_dot
                                                     and not source[j:j + 2] == "..")):
                if source[j] == ".":
                    seen_dot = True
                j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    while k < n and source[k].isdigit():
                        k += 1
                    j = k
            tokens.append(Token("number", source[i:j], line, start_col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            text = source[i:j]
            kind = "keyword" if text in KEYWORDS else "ident"
            tokens.append(Token(kind, text, line, start_col))
            col += j - i
            i = j
            continue
        matched = None
        for sym in _SYMBOLS:
            if source.startswith(sym, i):
                matched = sym
                break
        if matched is None:
            raise DslSyntaxError(f"unexpected character {ch!r}", line, col)
        tokens.append(Token("symbol", matched, line, start_col))
        i += len(matched)
        col += len(matched)
    tokens.append(Token("eof", "", line, col))
    return tokens


# --- AST --------------------------------------------------------------------
# Source positions are excluded from equality so printed-and-reparsed
# programs compare equal to the original AST.


@dataclass
class Number:
    value: float
    line: int = field(default=0, compare=False)


@dataclass
class Text:
    value: str
    line: int = field(default=0, compare=False)


@dataclass
class Boolean:
    value: bool
    line: int = field(default=0, compare=False)


@dataclass
class VectorLit:
    items: list  # expressions
    line: int = field(default=0, compare=False)


@dataclass
class Var:
    name: str
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass
class Call:
    name: str
    args: list
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass
class BinOp:
    op: str
    left: object
    right: object
    line: int = field(default=0, compare=False)


@dataclass
class Neg:
    operand: object
    line: int = field(default=0, compare=False)


@dataclass
class Assign:
    name: str
    expr: object
    line: int = field(default=0, compare=False)


@dataclass
class ExprStmt:
    expr: object
    line: int = field(default=0, compare=False)


@dataclass
class ForLoop:
    var: str
    start: int
    stop: int
    body: list
    line: int = field(default=0, compare=False)


@dataclass
class Program:
    statements: list


# --- parser -----------------------------------------------------------------


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self, ahead=0) -> Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def expect(self, kind, text=None) -> Token:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text if text is not None else kind
            raise DslSyntaxError(
                f"expected {want!r}, found {tok.text or tok.kind!r}",
                tok.line, tok.col, expected=(want,))
        return self.advance()

    def parse_program(self) -> Program:
        stmts = []
        while self.peek().kind != "eof":
            stmts.append(self.parse_stmt())
        return Program(stmts)

    def parse_stmt(self):
        tok = self.peek()
        if tok.kind == "keyword" and tok.text == "for":
            return self.parse_for()
        if tok.kind == "ident" and self.peek(1).kind == "symbol" \
                and self.peek(1).text == "=":
            name = self.advance()
            self.advance()  # "="
            return Assign(name.text, self.parse_expr(), line=name.line)
        expr = self.parse_expr()
        return ExprStmt(expr, line=tok.line)

    def parse_for(self):
        kw = self.expect("keyword", "for")
        var = self.expect("ident")
        self.expect("keyword", "in")
        start = self._int_literal()
        self.expect("symbol", "..")
        stop = self._int_literal()
        self.expect("symbol", "{")
        body = []
        while not (self.peek().kind == "symbol" and self.peek().text == "}"):
            if self.peek().kind == "eof":
                raise DslSyntaxError("unterminated loop body", kw.line, kw.col,
                                     expected=("}",))
            body.append(self.parse_stmt())
        self.expect("symbol", "}")
        return ForLoop(var.text, start, stop, body, line=kw.line)

    def _int_literal(self) -> int:
        neg = False
        if self.peek().kind == "symbol" and self.peek().text == "-":
            self.advance()
            neg = True
        tok = self.expect("number")
        val = float(tok.text)
        if val != int(val):
            raise DslSyntaxError("loop bounds must be integers", tok.line, tok.col,
                                 expected=("integer",))
        return -int(val) if neg else int(val)

    def parse_expr(self):
        return self.parse_additive()

    def parse_additive(self):
        left = self.parse_multiplicative()
        while self.peek().kind == "symbol" and self.peek().text in ("+", "-"):
            op = self.advance()
            right = self.parse_multiplicative()
            left = BinOp(op.text, left, right, line=op.line)
        return left

    def parse_multiplicative(self):
        left = self.parse_unary()
        while self.peek().kind == "symbol" and self.peek().text in ("*", "/"):
            op = self.advance()
            right = self.parse_unary()
            left = BinOp(op.text, left, right, line=op.line)
        return left

    def parse_unary(self):
        tok = self.peek()
        if tok.kind == "symbol" and tok.text == "-":
            self.advance()
            return Neg(self.parse_unary(), line=tok.line)
        return self.parse_primary()

    def parse_primary(self):
        tok = self.peek()
        if tok.kind == "number":
            self.advance()
            return Number(float(tok.text), line=tok.line)
        if tok.kind == "string":
            self.advance()
            return Text(tok.text, line=tok.line)
        if tok.kind == "keyword" and tok.text in ("true", "false"):
            self.advance()
            return Boolean(tok.text == "true", line=tok.line)
        if tok.kind == "symbol" and tok.text == "(":
            self.advance()
            inner = self.parse_expr()
            self.expect("symbol", ")")
            return inner
        if tok.kind == "symbol" and tok.text == "[":
            self.advance()
            items = []
            if not (self.peek().kind == "symbol" and self.peek().text == "]"):
                items.append(self.parse_expr())
                while self.peek().kind == "symbol" and self.peek().text == ",":
                    self.advance()
                    items.append(self.parse_expr())
            self.expect("symbol", "]")
            return VectorLit(items, line=tok.line)
        if tok.kind == "ident":
            self.advance()
            if self.peek().kind == "symbol" and self.peek().text == "(":
                self.advance()
                args = []
                if not (self.peek().kind == "symbol" and self.peek().text == ")"):
                    args.append(self.parse_expr())
                    while self.peek().kind == "symbol" and self.peek().text == ",":
                        self.advance()
                        args.append(self.parse_expr())
                self.expect("symbol", ")")
                return Call(tok.text, args, line=tok.line, col=tok.col)
            return Var(tok.text, line=tok.line, col=tok.col)
        raise DslSyntaxError(f"unexpected token {tok.text or tok.kind!r}",
                             tok.line, tok.col,
                             expected=("expression",))


def parse_program(source: str) -> Program:
    return _Parser(tokenize(source)).parse_program()


# --- pretty printer ----------------------------------------------------------


def _fmt_number(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def print_expr(e) -> str:
    if isinstance(e, Number):
        return _fmt_number(e.value)
    if isinstance(e, Text):
        esc = e.value.replace("\\", "\\\\").replace('"', '\\"') \
            .replace("\n", "\\n").replace("\t", "\\t")
        return f'"{esc}"'
    if isinstance(e, Boolean):
        return "true" if e.value else "false"
    if isinstance(e, VectorLit):
        return "[" + ", ".join(print_expr(i) for i in e.items) + "]"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.name}(" + ", ".join(print_expr(a) for a in e.args) + ")"
    if isinstance(e, BinOp):
        left = print_expr(e.left)
        right = print_expr(e.right)
        if isinstance(e.left, (BinOp, Neg)):
            left = f"({left})"
        if isinstance(e.right, (BinOp, Neg)):
            right = f"({right})"
        return f"{left} {e.op} {right}"
    if isinstance(e, Neg):
        inner = print_expr(e.operand)
        if isinstance(e.operand, (BinOp, Neg)):
            inner = f"({inner})"
        return f"-{inner}"
    raise TypeError(f"unknown expression node {type(e).__name__}")


def print_program(prog: Program, indent: int = 0) -> str:
    lines = []
    pad = "    " * indent
    for stmt in prog.statements:
        if isinstance(stmt, Assign):
            lines.append(f"{pad}{stmt.name} = {print_expr(stmt.expr)}")
        elif isinstance(stmt, ExprStmt):
            lines.append(f"{pad}{print_expr(stmt.expr)}")
        elif isinstance(stmt, ForLoop):
            lines.append(f"{pad}for {stmt.var} in {stmt.start}..{stmt.stop} {{")
            lines.append(print_program(Program(stmt.body), indent + 1))
            lines.append(f"{pad}}}")
        else:
            raise TypeError(f"unknown statement node {type(stmt).__name__}")
    return "\n".join(lines)


# --- builtin catalog ----------------------------------------------------------

# Value kinds used by signatures and the validator.
NUMBER, TEXT, BOOLEAN, VEC3, POINTLIST = "Number", "Text", "Boolean", "Vec3", "PointList"
OBJECT, MATERIAL, ROTATION, SCENE, UNIT = "Object", "Material", "Rotation", "Scene", "Unit"
ANY = "Any"


@dataclass
class BuiltinSignature:
    name: str
    params: tuple          # full parameter kind tuple
    result: str
    required: int = -1     # number of non-optional params (-1 = all)
    doc: str = ""

    def __post_init__(self):
        if self.required < 0:
            self.required = len(self.params)


_SIGS = [
    ("detect_object", (SCENE, TEXT), OBJECT, 2,
     "Detect and extract a named instance from the scene."),
    ("sample_point_on_object", (SCENE, OBJECT), VEC3, 2,
     "Sample a flat, unobstructed point on the object's upper surface."),
    ("sample_point_above_object", (SCENE, OBJECT, NUMBER), VEC3, 2,
     "Sample a surface point raised by a vertical offset (default 0.5 m)."),
    ("retrieve_asset", (SCENE, TEXT, BOOLEAN, BOOLEAN), OBJECT, 2,
     "Fetch the best-matching catalog asset, scaled to real-world size."),
    ("retrieve_chatsim_asset", (SCENE, TEXT), OBJECT, 2,
     "Fetch a driving asset from the vehicle sub-catalog."),
    ("insert_object", (SCENE, OBJECT), UNIT, 2,
     "Register an object in the scene."),
    ("update_object", (SCENE, OBJECT), UNIT, 2,
     "Re-sync a registered object's record."),
    ("remove_object", (SCENE, OBJECT, BOOLEAN), UNIT, 2,
     "Remove an extracted instance and patch the exposed region."),
    ("allow_physics", (OBJECT,), OBJECT, 1,
     "Mark the object as a rigid body for simulation."),
    ("allow_fracture", (OBJECT,), OBJECT, 1,
     "Let hard impacts shatter the object during simulation."),
    ("make_break", (OBJECT,), OBJECT, 1,
     "Shatter the object into pieces immediately."),
    ("make_melting", (OBJECT,), OBJECT, 1,
     "Annotate the object with a melt event (not rendered)."),
    ("add_fire", (SCENE, OBJECT), UNIT, 2,
     "Attach a fire event to the object."),
    ("add_smoke", (SCENE, OBJECT), UNIT, 2,
     "Attach a smoke event to the object."),
    ("add_event", (SCENE, OBJECT, TEXT, NUMBER, NUMBER), UNIT, 3,
     "Attach a named event over an optional frame range."),
    ("set_static_animation", (OBJECT,), OBJECT, 1,
     "Clear any trajectory; the object stays where it is placed."),
    ("set_moving_animation", (OBJECT, POINTLIST), OBJECT, 2,
     "Move the object along a smooth path through the given points."),
    ("init_material", (NUMBER, NUMBER, NUMBER), MATERIAL, 0,
     "New material; optional metallic, roughness, specular values."),
    ("retrieve_material", (SCENE, TEXT), MATERIAL, 2,
     "Fetch the best-matching material from the catalog."),
    ("apply_material", (OBJECT, MATERIAL), OBJECT, 2,
     "Apply a material to the object."),
    ("get_object_center_position", (OBJECT,), VEC3, 1,
     "World-space center of the object's bounding box."),
    ("get_object_bottom_position", (OBJECT,), VEC3, 1,
     "World-space bounding-box center at its lowest z."),
    ("translate_object", (OBJECT, VEC3), OBJECT, 2,
     "Shift the object by a world-space vector."),
    ("rotate_object", (OBJECT, ROTATION), OBJECT, 2,
     "Rotate the object in place."),
    ("scale_object", (OBJECT, NUMBER), OBJECT, 2,
     "Scale the object uniformly."),
    ("make_copy", (OBJECT,), OBJECT, 1,
     "Deep copy with a fresh object id."),
    ("get_random_2D_rotation", (), ROTATION, 0,
     "Uniform random yaw about +z."),
    ("get_random_3D_rotation", (), ROTATION, 0,
     "Uniform random orientation."),
    ("get_camera_position", (SCENE,), VEC3, 1,
     "Position of the primary camera."),
    ("get_vehicle_position", (SCENE,), VEC3, 1,
     "Camera position projected to the ground plane (z = 0)."),
    ("get_direction", (SCENE, TEXT), VEC3, 2,
     "Unit vector for front/back/left/right/up/down in the camera frame."),
]

BUILTINS = {name: BuiltinSignature(name, params, result, required, doc)
            for name, params, result, required, doc in _SIGS}


# --- static validator ---------------------------------------------------------


def _literal_kind(e, diags, env):
    if not isinstance(e, VectorLit):
        return None
    kinds = [infer_kind(i, diags, env) for i in e.items]
    if len(kinds) == 3 and all(k == NUMBER for k in kinds):
        return VEC3
    if kinds and all(k == VEC3 for k in kinds):
        return POINTLIST
    diags.append(f"line {e.line}: bracket literal must be [x, y, z] numbers "
                 "or a list of such vectors")
    return ANY


def infer_kind(e, diags, env):
    if isinstance(e, Number):
        return NUMBER
    if isinstance(e, Text):
        return TEXT
    if isinstance(e, Boolean):
        return BOOLEAN
    if isinstance(e, VectorLit):
        return _literal_kind(e, diags, env)
    if isinstance(e, Var):
        if e.name not in env:
            diags.append(f"line {e.line}: variable {e.name!r} used before assignment")
            return ANY
        return env[e.name]
    if isinstance(e, Neg):
        k = infer_kind(e.operand, diags, env)
        if k not in (NUMBER, VEC3, ANY):
            diags.append(f"line {e.line}: unary minus needs a number or vector, got {k}")
        return k
    if isinstance(e, BinOp):
        lk = infer_kind(e.left, diags, env)
        rk = infer_kind(e.right, diags, env)
        if ANY in (lk, rk):
            return ANY
        if lk == NUMBER and rk == NUMBER:
            return NUMBER
        if e.op in ("+", "-") and lk == VEC3 and rk == VEC3:
            return VEC3
        if e.op in ("*", "/") and {lk, rk} == {VEC3, NUMBER}:
            if e.op == "/" and lk == NUMBER:
                diags.append(f"line {e.line}: cannot divide a number by a vector")
                return ANY
            return VEC3
        if e.op == "*" and lk == VEC3 and rk == VEC3:
            diags.append(f"line {e.line}: no product defined between two vectors")
            return ANY
        diags.append(f"line {e.line}: operator {e.op!r} undefined for {lk} and {rk}")
        return ANY
    if isinstance(e, Call):
        sig = BUILTINS.get(e.name)
        arg_kinds = [infer_kind(a, diags, env) for a in e.args]
        if sig is None:
            diags.append(f"line {e.line}: unknown builtin {e.name!r}")
            return ANY
        if not (sig.required <= len(e.args) <= len(sig.params)):
            if sig.required == len(sig.params):
                want = str(sig.required)
            else:
                want = f"{sig.required} to {len(sig.params)}"
            diags.append(f"line {e.line}: {e.name} takes {want} argument(s), "
                         f"got {len(e.args)}")
            return sig.result
        for i, (got, want) in enumerate(zip(arg_kinds, sig.params)):
            if got not in (want, ANY):
                diags.append(f"line {e.line}: {e.name} argument {i + 1} must be "
                             f"{want}, got {got}")
        return sig.result
    raise TypeError(f"unknown expression node {type(e).__name__}")


def _validate_block(stmts, diags, env):
    for stmt in stmts:
        if isinstance(stmt, Assign):
            env[stmt.name] = infer_kind(stmt.expr, diags, env)
        elif isinstance(stmt, ExprStmt):
            infer_kind(stmt.expr, diags, env)
        elif isinstance(stmt, ForLoop):
            span = stmt.stop - stmt.start
            if span < 0:
                diags.append(f"line {stmt.line}: loop range is empty "
                             f"({stmt.start}..{stmt.stop})")
            if span > MAX_LOOP:
                diags.append(f"line {stmt.line}: loop bound {span} exceeds the "
                             f"maximum of {MAX_LOOP}")
            env[stmt.var] = NUMBER
            _validate_block(stmt.body, diags, env)
        else:
            raise TypeError(f"unknown statement node {type(stmt).__name__}")


def validate_program(prog: Program, predefined=("scene",)) -> list:
    """Static diagnostics; an empty list means the program may execute."""
    diags = []
    env = {name: SCENE for name in predefined}
    _validate_block(prog.statements, diags, env)
    return diags
