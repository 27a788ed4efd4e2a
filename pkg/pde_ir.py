"""Symbolic PDE systems: expression AST, spec-file parser and validation."""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Any, Iterator, Optional, Union

logger = logging.getLogger(__name__)

UNARY_FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "sinh", "cosh", "tanh", "abs")
BINARY_FUNCTIONS = ("max", "min")
BINARY_OPERATORS = ("+", "-", "*", "/", "^")
RESERVED_NAMES = {"pi", "norm", "grad", "piecewise", "else", *UNARY_FUNCTIONS, *BINARY_FUNCTIONS}

# Binding power of binary operators; unary minus sits between "*" and "^".
_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
_UNARY_MINUS_PRECEDENCE = 3


class PdeSyntaxError(ValueError):
    """Malformed text, positioned by byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UndeclaredNameError(PdeSyntaxError):
    """A name that no declaration houses."""

    def __init__(self, name: str, offset: int):
        super().__init__(f"Undeclared name {name!r}", offset)
        self.name = name


class UnsupportedOperatorError(PdeSyntaxError):
    """Mixed partials, derivative order >= 3, or derivatives of non-applications."""


class SystemValidationError(ValueError):
    """Raised by ValidationReport.raise_for_problems."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


# ---------------------------------------------------------------------------
# Expression AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class IndVar:
    name: str


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class DepVarApp:
    """u(x, 0): string arguments are free independent variables, floats are pinned."""

    name: str
    args: tuple[Union[str, float], ...]

    @property
    def pinned(self) -> dict[int, float]:
        return {i: a for i, a in enumerate(self.args) if not isinstance(a, str)}


@dataclass(frozen=True)
class Derivative:
    operand: DepVarApp
    var: str
    order: int


@dataclass(frozen=True)
class BinaryOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class UnaryFn:
    """Elementary function of one argument; ``neg`` is unary minus."""

    fn: str
    operand: "Expr"


@dataclass(frozen=True)
class BinaryFn:
    fn: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class GradNorm:
    """Euclidean norm of the gradient of an application over ``vars``."""

    operand: DepVarApp
    vars: tuple[str, ...]


@dataclass(frozen=True)
class Piecewise:
    """``branches`` are (upper breakpoint, value) pairs over half-open intervals."""

    selector: "Expr"
    branches: tuple[tuple[float, "Expr"], ...]
    otherwise: "Expr"


Expr = Union[Const, IndVar, Param, DepVarApp, Derivative, BinaryOp, UnaryFn, BinaryFn, GradNorm, Piecewise]


def iter_nodes(expr: Expr) -> Iterator[Expr]:
    """Pre-order walk over an expression."""
    yield expr
    if isinstance(expr, (Derivative, GradNorm)):
        yield from iter_nodes(expr.operand)
    elif isinstance(expr, UnaryFn):
        yield from iter_nodes(expr.operand)
    elif isinstance(expr, (BinaryOp, BinaryFn)):
        yield from iter_nodes(expr.left)
        yield from iter_nodes(expr.right)
    elif isinstance(expr, Piecewise):
        yield from iter_nodes(expr.selector)
        for _, value in expr.branches:
            yield from iter_nodes(value)
        yield from iter_nodes(expr.otherwise)


def applications(expr: Expr) -> list[DepVarApp]:
    """Every dependent-variable application in ``expr``, derivative operands included."""
    return [node for node in iter_nodes(expr) if isinstance(node, DepVarApp)]


def format_expression(expr: Expr) -> str:
    """Pretty-print an expression in the spec-file grammar."""
    if isinstance(expr, Const):
        return repr(float(expr.value))
    if isinstance(expr, (IndVar, Param)):
        return expr.name
    if isinstance(expr, DepVarApp):
        return f"{expr.name}({', '.join(_format_arg(a) for a in expr.args)})"
    if isinstance(expr, Derivative):
        return f"D{expr.var * expr.order}({format_expression(expr.operand)})"
    if isinstance(expr, BinaryOp):
        return f"({format_expression(expr.left)} {expr.op} {format_expression(expr.right)})"
    if isinstance(expr, UnaryFn):
        if expr.fn == "neg":
            return f"(-{format_expression(expr.operand)})"
        return f"{expr.fn}({format_expression(expr.operand)})"
    if isinstance(expr, BinaryFn):
        return f"{expr.fn}({format_expression(expr.left)}, {format_expression(expr.right)})"
    if isinstance(expr, GradNorm):
        return f"norm(grad({format_expression(expr.operand)}, {', '.join(expr.vars)}))"
    if isinstance(expr, Piecewise):
        parts = [f"{repr(float(a))}:{format_expression(v)}" for a, v in expr.branches]
        parts.append(f"else:{format_expression(expr.otherwise)}")
        return f"piecewise({format_expression(expr.selector)}; {', '.join(parts)})"
    raise TypeError(f"Not an expression node: {expr!r}")


def _format_arg(arg: Union[str, float]) -> str:
    return arg if isinstance(arg, str) else repr(float(arg))


# ---------------------------------------------------------------------------
# System model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Equation:
    """``lhs = rhs``; its residual is lhs - rhs."""

    lhs: Expr
    rhs: Expr

    def __str__(self) -> str:
        return f"{format_expression(self.lhs)} = {format_expression(self.rhs)}"


@dataclass(frozen=True)
class IntervalDomain:
    variable: str
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"Domain of {self.variable} needs lower < upper, got [{self.lower}, {self.upper}]")

    @property
    def extent(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class DependentVar:
    name: str
    args: tuple[str, ...]


@dataclass(frozen=True)
class PhysicalParam:
    name: str
    default: Optional[float] = None


@dataclass(frozen=True)
class Declarations:
    """Name sets the expression parser resolves against."""

    ivars: tuple[str, ...] = ()
    dvars: tuple[DependentVar, ...] = ()
    params: tuple[str, ...] = ()

    def dvar(self, name: str) -> Optional[DependentVar]:
        return next((d for d in self.dvars if d.name == name), None)


@dataclass(frozen=True)
class PdeSystem:
    equations: tuple[Equation, ...]
    boundary_conditions: tuple[Equation, ...]
    domains: tuple[IntervalDomain, ...]
    independent_vars: tuple[str, ...]
    dependent_vars: tuple[DependentVar, ...]
    physical_params: tuple[PhysicalParam, ...] = ()

    def domain(self, var: str) -> IntervalDomain:
        for d in self.domains:
            if d.variable == var:
                return d
        raise KeyError(f"No domain for {var!r}")

    def dvar(self, name: str) -> DependentVar:
        for d in self.dependent_vars:
            if d.name == name:
                return d
        raise KeyError(f"Unknown dependent variable {name!r}")

    @property
    def param_defaults(self) -> dict[str, float]:
        return {p.name: p.default for p in self.physical_params if p.default is not None}

    def declarations(self) -> Declarations:
        return Declarations(
            ivars=self.independent_vars,
            dvars=self.dependent_vars,
            params=tuple(p.name for p in self.physical_params),
        )

    def with_defaults(self, overrides: dict[str, float]) -> "PdeSystem":
        """Copy with some physical-parameter defaults replaced."""
        unknown = set(overrides) - {p.name for p in self.physical_params}
        if unknown:
            raise ValueError(f"Unknown physical parameters: {sorted(unknown)}")
        params = tuple(
            PhysicalParam(p.name, float(overrides.get(p.name, p.default))) for p in self.physical_params
        )
        return PdeSystem(
            self.equations, self.boundary_conditions, self.domains,
            self.independent_vars, self.dependent_vars, params,
        )


# ---------------------------------------------------------------------------
# Tokenizer and expression parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""\s*(?:
    (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)|
    (?P<ident>[A-Za-z_][A-Za-z0-9_]*)|
    (?P<op>[-+*/^(),;:=\[\]])
    )""",
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    offset: int


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


def _tokenize(text: str, base_offset: int = 0) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        match = _TOKEN_RE.match(text, pos)
        if not match or match.lastgroup is None:
            start = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise PdeSyntaxError(f"Unexpected character {text[start]!r}", base_offset + _byte_offset(text, start))
        kind = match.lastgroup
        tokens.append(_Token(kind, match.group(kind), base_offset + _byte_offset(text, match.start(kind))))
        pos = match.end()
    tokens.append(_Token("eof", "", base_offset + _byte_offset(text, len(text))))
    return tokens


class _ExpressionParser:
    """Precedence-climbing parser over one expression or equation."""

    def __init__(self, text: str, declarations: Declarations, base_offset: int = 0):
        self.declarations = declarations
        self.tokens = _tokenize(text, base_offset)
        self.i = 0

    # token helpers
    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.peek()
        if tok.text != text or tok.kind == "eof":
            found = tok.text or "end of input"
            raise PdeSyntaxError(f"Expected {text!r}, found {found!r}", tok.offset)
        return self.advance()

    def at_end(self) -> None:
        tok = self.peek()
        if tok.kind != "eof":
            raise PdeSyntaxError(f"Unexpected {tok.text!r}", tok.offset)

    # grammar
    def expression(self, min_precedence: int = 1) -> Expr:
        left = self.prefix()
        while True:
            tok = self.peek()
            precedence = _PRECEDENCE.get(tok.text) if tok.kind == "op" else None
            if precedence is None or precedence < min_precedence:
                return left
            self.advance()
            right = self.expression(precedence + 1)
            left = BinaryOp(tok.text, left, right)

    def prefix(self) -> Expr:
        tok = self.advance()
        if tok.kind == "number":
            value = float(tok.text)
            if not math.isfinite(value):
                raise PdeSyntaxError(f"Number {tok.text!r} is out of range", tok.offset)
            return Const(value)
        if tok.kind == "op" and tok.text == "(":
            inner = self.expression()
            self.expect(")")
            return inner
        if tok.kind == "op" and tok.text == "-":
            return UnaryFn("neg", self.expression(_UNARY_MINUS_PRECEDENCE))
        if tok.kind == "ident":
            return self.identifier(tok)
        found = tok.text or "end of input"
        raise PdeSyntaxError(f"Unexpected {found!r}", tok.offset)

    def identifier(self, tok: _Token) -> Expr:
        name = tok.text
        decl = self.declarations
        if name == "pi":
            return Const(math.pi)
        if name in decl.ivars:
            return IndVar(name)
        if name in decl.params:
            return Param(name)
        dvar = decl.dvar(name)
        if dvar is not None:
            return self.application(dvar, tok)
        if name in UNARY_FUNCTIONS:
            self.expect("(")
            operand = self.expression()
            self.expect(")")
            return UnaryFn(name, operand)
        if name in BINARY_FUNCTIONS:
            self.expect("(")
            left = self.expression()
            self.expect(",")
            right = self.expression()
            self.expect(")")
            return BinaryFn(name, left, right)
        if name == "norm":
            return self.grad_norm()
        if name == "piecewise":
            return self.piecewise()
        derivative = self.decode_derivative(tok)
        if derivative is not None:
            var, order = derivative
            self.expect("(")
            operand_tok = self.peek()
            operand = self.expression()
            self.expect(")")
            return self.make_derivative(operand, var, order, operand_tok)
        raise UndeclaredNameError(name, tok.offset)

    def application(self, dvar: DependentVar, tok: _Token) -> DepVarApp:
        self.expect("(")
        args: list[Union[str, float]] = []
        while True:
            arg_tok = self.peek()
            arg = self.expression()
            position = len(args)
            if position >= len(dvar.args):
                raise PdeSyntaxError(f"{dvar.name} takes {len(dvar.args)} arguments", arg_tok.offset)
            if isinstance(arg, IndVar):
                if arg.name != dvar.args[position]:
                    raise PdeSyntaxError(
                        f"Argument {position + 1} of {dvar.name} must be {dvar.args[position]} or a constant",
                        arg_tok.offset,
                    )
                args.append(arg.name)
            else:
                value = fold_constant(arg, arg_tok.offset)
                if value is None:
                    raise PdeSyntaxError(
                        f"Argument {position + 1} of {dvar.name} must be {dvar.args[position]} or a constant",
                        arg_tok.offset,
                    )
                args.append(value)
            if self.peek().text == ",":
                self.advance()
                continue
            break
        closing = self.expect(")")
        if len(args) != len(dvar.args):
            raise PdeSyntaxError(f"{dvar.name} takes {len(dvar.args)} arguments, got {len(args)}", closing.offset)
        return DepVarApp(dvar.name, tuple(args))

    def decode_derivative(self, tok: _Token) -> Optional[tuple[str, int]]:
        name = tok.text
        if not name.startswith("D") or len(name) < 2:
            return None
        suffix = name[1:]
        ivars = self.declarations.ivars
        if suffix in ivars:
            return suffix, 1
        for var in ivars:
            if suffix == var * 2:
                return var, 2
        for var in ivars:
            if len(suffix) > 2 * len(var) and suffix == var * (len(suffix) // len(var)):
                raise UnsupportedOperatorError(f"Derivative order >= 3 in {name!r}", tok.offset)
        for first in ivars:
            rest = suffix[len(first):]
            if suffix.startswith(first) and rest in ivars and rest != first:
                raise UnsupportedOperatorError(f"Mixed partial derivative {name!r}", tok.offset)
        return None

    def make_derivative(self, operand: Expr, var: str, order: int, tok: _Token) -> Derivative:
        if isinstance(operand, Derivative):
            if operand.var != var:
                raise UnsupportedOperatorError("Mixed partial derivative", tok.offset)
            order += operand.order
            operand = operand.operand
        if order > 2:
            raise UnsupportedOperatorError("Derivative order >= 3", tok.offset)
        if not isinstance(operand, DepVarApp):
            raise UnsupportedOperatorError(
                "Derivative operand must be a dependent-variable application", tok.offset
            )
        dvar = self.declarations.dvar(operand.name)
        if dvar is None or var not in dvar.args:
            raise UnsupportedOperatorError(f"{operand.name} does not depend on {var}", tok.offset)
        return Derivative(operand, var, order)

    def grad_norm(self) -> GradNorm:
        self.expect("(")
        grad_tok = self.advance()
        if grad_tok.text != "grad":
            raise PdeSyntaxError("norm() takes grad(...)", grad_tok.offset)
        self.expect("(")
        app_tok = self.peek()
        operand = self.expression()
        if not isinstance(operand, DepVarApp):
            raise UnsupportedOperatorError("grad() operand must be a dependent-variable application", app_tok.offset)
        dvar = self.declarations.dvar(operand.name)
        variables: list[str] = []
        while self.peek().text == ",":
            self.advance()
            var_tok = self.advance()
            if var_tok.kind != "ident" or var_tok.text not in dvar.args:
                raise UndeclaredNameError(var_tok.text, var_tok.offset)
            variables.append(var_tok.text)
        self.expect(")")
        self.expect(")")
        return GradNorm(operand, tuple(variables) or tuple(dvar.args))

    def piecewise(self) -> Piecewise:
        self.expect("(")
        selector = self.expression()
        self.expect(";")
        branches: list[tuple[float, Expr]] = []
        otherwise: Optional[Expr] = None
        while True:
            tok = self.peek()
            if tok.kind == "ident" and tok.text == "else":
                self.advance()
                self.expect(":")
                otherwise = self.expression()
                break
            bound = fold_constant(self.expression(), tok.offset)
            if bound is None:
                raise PdeSyntaxError("Piecewise breakpoints must be constants", tok.offset)
            if branches and bound <= branches[-1][0]:
                raise PdeSyntaxError("Piecewise breakpoints must increase", tok.offset)
            self.expect(":")
            branches.append((bound, self.expression()))
            self.expect(",")
        self.expect(")")
        return Piecewise(selector, tuple(branches), otherwise)


def fold_constant(expr: Expr, offset: int = 0) -> Optional[float]:
    """
    Value of an expression built only from constants, else None.

    Undefined or non-finite results (``1/0``, ``sqrt(-1)``, ``(-1)^0.5``,
    ``exp(1000)``) raise PdeSyntaxError at ``offset``.
    """
    try:
        value = _fold(expr)
    except (ArithmeticError, ValueError) as exc:
        raise PdeSyntaxError(f"Constant {format_expression(expr)} is undefined ({exc})", offset) from exc
    if value is not None and not math.isfinite(value):
        raise PdeSyntaxError(f"Constant {format_expression(expr)} is not finite", offset)
    return value


def _fold(expr: Expr) -> Optional[float]:
    if isinstance(expr, Const):
        return float(expr.value)
    if isinstance(expr, UnaryFn):
        inner = _fold(expr.operand)
        if inner is None:
            return None
        if expr.fn == "neg":
            return -inner
        return float(getattr(math, "fabs" if expr.fn == "abs" else expr.fn)(inner))
    if isinstance(expr, BinaryOp):
        left, right = _fold(expr.left), _fold(expr.right)
        if left is None or right is None:
            return None
        return {
            "+": lambda: left + right,
            "-": lambda: left - right,
            "*": lambda: left * right,
            "/": lambda: left / right,
            "^": lambda: math.pow(left, right),
        }[expr.op]()
    if isinstance(expr, BinaryFn):
        left, right = _fold(expr.left), _fold(expr.right)
        if left is None or right is None:
            return None
        return max(left, right) if expr.fn == "max" else min(left, right)
    return None


def parse_expression(text: str, declarations: Declarations, base_offset: int = 0) -> Expr:
    """Parse one expression against the given declarations."""
    parser = _ExpressionParser(text, declarations, base_offset)
    expr = parser.expression()
    parser.at_end()
    return expr


def parse_equation(text: str, declarations: Declarations, base_offset: int = 0) -> Equation:
    """Parse ``lhs = rhs``."""
    parser = _ExpressionParser(text, declarations, base_offset)
    lhs = parser.expression()
    parser.expect("=")
    rhs = parser.expression()
    parser.at_end()
    return Equation(lhs, rhs)


# ---------------------------------------------------------------------------
# Spec files
# ---------------------------------------------------------------------------

_DVAR_RE = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s*\(([^)]*)\)")
_DOMAIN_RE = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s+in\s+\[(.*)\]\s*$")
_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*$")


def parse_system(text: str) -> PdeSystem:
    """
    Parse a PDE spec file.

    Statements, one per line, ``#`` starts a comment:
    ``params``, ``ivars``, ``dvars``, ``domain <v> in [a, b]``,
    ``default <p> = <real>``, ``eq <lhs> = <rhs>``, ``bc <lhs> = <rhs>``.
    Declarations are collected first so statement order does not matter.
    """
    lines = []
    offset = 0
    for raw in text.splitlines(keepends=True):
        body = raw.split("#", 1)[0].rstrip()
        if body.strip():
            indent = len(body) - len(body.lstrip())
            lines.append((body.strip(), offset + _byte_offset(raw, indent)))
        offset += len(raw.encode("utf-8"))

    ivars: list[str] = []
    dvars: list[DependentVar] = []
    params: list[str] = []
    defaults: dict[str, float] = {}
    arg_offsets: dict[str, int] = {}
    default_offsets: dict[str, int] = {}
    domain_lines: list[tuple[str, int]] = []
    equation_lines: list[tuple[str, str, int]] = []

    for body, line_offset in lines:
        keyword, _, rest = body.partition(" ")
        rest_offset = line_offset + len(keyword) + 1 + (len(rest) - len(rest.lstrip()))
        rest = rest.strip()
        if keyword in ("params", "ivars"):
            names = [n for n in re.split(r"[\s,]+", rest) if n]
            for name in names:
                if not _NAME_RE.match(name) or name in RESERVED_NAMES:
                    raise PdeSyntaxError(f"Invalid name {name!r}", rest_offset + rest.find(name))
            (params if keyword == "params" else ivars).extend(names)
        elif keyword == "dvars":
            matches = list(_DVAR_RE.finditer(rest))
            if not matches:
                raise PdeSyntaxError("dvars expects name(args...)", rest_offset)
            for match in matches:
                args = tuple(a.strip() for a in match.group(2).split(",") if a.strip())
                index = match.start(2)
                for piece in match.group(2).split(","):
                    if piece.strip():
                        arg_offsets.setdefault(piece.strip(), rest_offset + _byte_offset(rest, index + piece.find(piece.strip())))
                    index += len(piece) + 1
                dvars.append(DependentVar(match.group(1), args))
        elif keyword == "domain":
            domain_lines.append((rest, rest_offset))
        elif keyword == "default":
            name, eq_sign, value = rest.partition("=")
            if not eq_sign:
                raise PdeSyntaxError("default expects <param> = <real>", rest_offset)
            value_offset = rest_offset + _byte_offset(rest, len(name) + 1 + len(value) - len(value.lstrip()))
            folded = fold_constant(parse_expression(value.strip(), Declarations(), value_offset), value_offset)
            if folded is None:
                raise PdeSyntaxError("default value must be a constant", value_offset)
            defaults[name.strip()] = folded
            default_offsets[name.strip()] = rest_offset
        elif keyword in ("eq", "bc"):
            equation_lines.append((keyword, rest, rest_offset))
        else:
            raise PdeSyntaxError(f"Unknown statement {keyword!r}", line_offset)

    for dvar in dvars:
        for arg in dvar.args:
            if arg not in ivars:
                raise UndeclaredNameError(arg, arg_offsets[arg])
    for name in defaults:
        if name not in params:
            raise UndeclaredNameError(name, default_offsets[name])

    declarations = Declarations(tuple(ivars), tuple(dvars), tuple(params))
    domains = []
    for rest, rest_offset in domain_lines:
        match = _DOMAIN_RE.match(rest)
        if not match:
            raise PdeSyntaxError("domain expects <ivar> in [a, b]", rest_offset)
        var = match.group(1)
        if var not in ivars:
            raise UndeclaredNameError(var, rest_offset)
        bounds = _split_top_level(match.group(2))
        if len(bounds) != 2:
            raise PdeSyntaxError("domain expects two bounds", rest_offset)
        values = []
        for bound in bounds:
            bound_offset = rest_offset + _byte_offset(rest, rest.find(bound))
            folded = fold_constant(parse_expression(bound, Declarations(), bound_offset), bound_offset)
            if folded is None:
                raise PdeSyntaxError("domain bounds must be constants", bound_offset)
            values.append(folded)
        domains.append(IntervalDomain(var, values[0], values[1]))

    equations, bcs = [], []
    for keyword, rest, rest_offset in equation_lines:
        equation = parse_equation(rest, declarations, rest_offset)
        (equations if keyword == "eq" else bcs).append(equation)

    system = PdeSystem(
        equations=tuple(equations),
        boundary_conditions=tuple(bcs),
        domains=tuple(domains),
        independent_vars=tuple(ivars),
        dependent_vars=tuple(dvars),
        physical_params=tuple(PhysicalParam(p, defaults.get(p)) for p in params),
    )
    logger.debug(f"Parsed system with {len(equations)} equations and {len(bcs)} boundary conditions")
    return system


def _split_top_level(text: str) -> list[str]:
    parts, depth, current = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(current).strip())
            current = []
        else:
            current.append(ch)
    parts.append("".join(current).strip())
    return parts


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    problems: list[str] = field(default_factory=list)
    interior_count: int = 0
    boundary_count: int = 0

    @property
    def ok(self) -> bool:
        return not self.problems

    def raise_for_problems(self) -> None:
        if self.problems:
            raise SystemValidationError(self.problems)


def _is_endpoint(value: float, domain: IntervalDomain) -> bool:
    tol = 1e-12 * max(1.0, abs(domain.lower), abs(domain.upper))
    return abs(value - domain.lower) <= tol or abs(value - domain.upper) <= tol


def validate_system(system: PdeSystem, net_specs: dict[str, Any]) -> ValidationReport:
    """
    Check a system against its per-dependent-variable network specs.

    ``net_specs`` maps dependent-variable names to objects with ``in_dim`` and
    ``out_dim`` (``mlp_jet.MlpSpec``).
    """
    report = ValidationReport(
        interior_count=len(system.equations),
        boundary_count=len(system.boundary_conditions),
    )
    problems = report.problems
    ivars = set(system.independent_vars)
    params = {p.name for p in system.physical_params}
    dvars = {d.name: d for d in system.dependent_vars}

    domain_counts: dict[str, int] = {}
    for d in system.domains:
        if d.variable not in ivars:
            problems.append(f"unhoused name: domain for undeclared variable {d.variable!r}")
        domain_counts[d.variable] = domain_counts.get(d.variable, 0) + 1
    for var in system.independent_vars:
        if domain_counts.get(var, 0) != 1:
            problems.append(f"independent variable {var!r} needs exactly one domain, has {domain_counts.get(var, 0)}")

    for p in system.physical_params:
        if p.default is None:
            problems.append(f"physical parameter {p.name!r} has no default")

    for dvar in system.dependent_vars:
        for arg in dvar.args:
            if arg not in ivars:
                problems.append(f"unhoused name: {dvar.name} depends on undeclared {arg!r}")
        spec = net_specs.get(dvar.name)
        if spec is None:
            problems.append(f"no network spec for dependent variable {dvar.name!r}")
            continue
        if spec.in_dim != len(dvar.args):
            problems.append(
                f"dimension mismatch: network for {dvar.name} takes {spec.in_dim} inputs, "
                f"{dvar.name} is applied to {len(dvar.args)}"
            )
        if spec.out_dim < 1:
            problems.append(f"network for {dvar.name} has no outputs")
    for name in net_specs:
        if name not in dvars:
            problems.append(f"unhoused name: network for undeclared dependent variable {name!r}")

    def check_expr(expr: Expr, where: str) -> None:
        for node in iter_nodes(expr):
            if isinstance(node, IndVar) and node.name not in ivars:
                problems.append(f"unhoused name {node.name!r} in {where}")
            elif isinstance(node, Param) and node.name not in params:
                problems.append(f"unhoused name {node.name!r} in {where}")
            elif isinstance(node, DepVarApp):
                dvar = dvars.get(node.name)
                if dvar is None:
                    problems.append(f"unhoused name {node.name!r} in {where}")
                    continue
                if len(node.args) != len(dvar.args):
                    problems.append(f"{node.name} applied to {len(node.args)} arguments in {where}")
                    continue
                for declared, arg in zip(dvar.args, node.args):
                    if isinstance(arg, str) and arg != declared:
                        problems.append(f"{node.name} arguments out of declared order in {where}")
            elif isinstance(node, Derivative):
                dvar = dvars.get(node.operand.name)
                if node.order not in (1, 2):
                    problems.append(f"unsupported derivative order {node.order} in {where}")
                if dvar is not None and node.var not in dvar.args:
                    problems.append(f"derivative of {dvar.name} along undeclared {node.var!r} in {where}")
            elif isinstance(node, GradNorm):
                dvar = dvars.get(node.operand.name)
                if dvar is not None and not set(node.vars) <= set(dvar.args):
                    problems.append(f"gradient of {dvar.name} along undeclared variables in {where}")

    for i, eq in enumerate(system.equations):
        check_expr(eq.lhs, f"equation {i + 1}")
        check_expr(eq.rhs, f"equation {i + 1}")

    for i, bc in enumerate(system.boundary_conditions):
        where = f"boundary condition {i + 1}"
        check_expr(bc.lhs, where)
        check_expr(bc.rhs, where)
        apps = applications(bc.lhs) + applications(bc.rhs)
        if not apps:
            problems.append(f"unpinned boundary condition: {where} mentions no dependent variable")
        for app in apps:
            dvar = dvars.get(app.name)
            if dvar is None or len(app.args) != len(dvar.args):
                continue
            pinned = app.pinned
            if not pinned:
                problems.append(f"unpinned boundary condition: {where} leaves {app.name} free in every argument")
                continue
            for position, value in pinned.items():
                var = dvar.args[position]
                if domain_counts.get(var) != 1:
                    continue
                if not _is_endpoint(value, system.domain(var)):
                    problems.append(
                        f"unpinned boundary condition: {where} pins {var}={value} which is not an endpoint"
                    )

    if report.ok:
        logger.debug(f"System valid: {report.interior_count} equations, {report.boundary_count} boundary conditions")
    return report
