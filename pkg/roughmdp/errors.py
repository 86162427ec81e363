"""
Erros do pacote roughmdp.

Hierarquia pequena: tudo que é problema de entrada vira ValidationError (exit 2),
tudo que é falha numérica vira NumericalError (exit 3). Erros de I/O continuam
sendo OSError (exit 4).
"""

from __future__ import annotations

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


class RoughMDPError(Exception):
    """Base de todos os erros do pacote."""


class ValidationError(RoughMDPError, ValueError):
    def __init__(self, message: str, field: str | None = None) -> None:
        super().__init__(message)
        self.field = field

    def __str__(self) -> str:
        msg = super().__str__()
        if self.field:
            return f"[{self.field}] {msg}"
        return msg


class DomainError(ValidationError):
    """Argumento fora do domínio da função (ex.: tempo fora de [0,1])."""


class NumericalError(RoughMDPError, ArithmeticError):
    def __init__(self, message: str, stage: str | None = None, seed: int | None = None) -> None:
        super().__init__(message)
        self.stage = stage
        self.seed = seed

    def __str__(self) -> str:
        msg = super().__str__()
        extra = []
        if self.stage:
            extra.append(f"etapa={self.stage}")
        if self.seed is not None:
            extra.append(f"seed={self.seed}")
        if extra:
            return f"{msg} ({', '.join(extra)})"
        return msg


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    if isinstance(exc, NumericalError):
        return EXIT_NUMERIC
    if isinstance(exc, OSError):
        return EXIT_IO
    return 1
