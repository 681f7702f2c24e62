"""Exception hierarchy shared by every ESN module."""

from __future__ import annotations


class EsnError(Exception):
    """Base class for all ESN errors."""


class EsnSyntaxError(EsnError):
    def __init__(self, message: str, line: int, column: int, expected: str = ""):
        self.line = line
        self.column = column
        self.expected = expected
        detail = f" (expected {expected})" if expected else ""
        super().__init__(f"line {line}, column {column}: {message}{detail}")


class SafetyError(EsnError):
    def __init__(self, rule: str, variable: str, reason: str = "unsafe variable"):
        self.rule = rule
        self.variable = variable
        super().__init__(f"{reason} {variable} in rule: {rule}")


class MixedPredicateError(EsnError):
    def __init__(self, predicate: tuple[str, int]):
        self.predicate = predicate
        super().__init__(
            f"predicate {predicate[0]}/{predicate[1]} is both extensional and intensional"
        )


class NonTerminatingRiskError(EsnError):
    def __init__(self, rule: str):
        self.rule = rule
        super().__init__(f"recursive rule with arithmetic assignment: {rule}")


class UnstratifiableError(EsnError):
    def __init__(self, cycle: list[tuple[str, int]]):
        self.cycle = cycle
        names = ", ".join(f"{f}/{n}" for f, n in cycle)
        super().__init__(f"negation on a dependency cycle through: {names}")


StratificationError = UnstratifiableError


class QueryError(EsnError):
    pass


class EsnArithmeticError(EsnError, ArithmeticError):
    def __init__(self, op: str, operands: tuple = (), location: str = "", reason: str = ""):
        self.op = op
        self.operands = operands
        self.location = location
        self.reason = reason or "arithmetic error"
        shown = ", ".join(str(o) for o in operands)
        msg = f"{self.reason} in {op}({shown})"
        if location:
            msg += f" at {location}"
        super().__init__(msg)

    def at(self, location: str) -> "EsnArithmeticError":
        return EsnArithmeticError(self.op, self.operands, location, self.reason)


class NotDerivedError(EsnError, KeyError):
    def __str__(self) -> str:
        return f"fact not derived: {self.args[0]}"


class ConflictError(EsnError):
    pass


class UnknownRuleset(EsnError):
    pass


class RedefinitionError(EsnError):
    pass


class SchemaError(EsnError):
    def __init__(self, record: object, field: str, message: str = "", line: int = 0):
        self.record = record
        self.field = field
        self.line = line
        where = f"line {line}: " if line else ""
        super().__init__(f"{where}field {field!r}: {message or 'invalid'} in record {record!r}")


class NonMonotonicTimeError(EsnError):
    pass


class GridError(EsnError):
    pass


class MissingGridError(EsnError):
    pass


class UnknownScenarioId(EsnError):
    pass


class LeakError(EsnError):
    def __init__(self, fact: object):
        self.fact = fact
        super().__init__(f"sensitive fact would be exported: {fact}")


class PatchError(EsnError):
    pass


class PolicyError(EsnError):
    pass
