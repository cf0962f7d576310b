"""Exception types shared across the package."""

from __future__ import annotations


class PreconditionError(ValueError):
    """An argument violates an operation's documented precondition."""


class SpecError(ValueError):
    """A list of layer shapes does not chain."""


class UnsupportedArchitectureError(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(ParseError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, message: str, round_index: int | None = None,
                 epoch: int | None = None, client_id: int | None = None):
        self.round_index = round_index
        self.epoch = epoch
        self.client_id = client_id
        ctx = []
        if client_id is not None:
            ctx.append(f"client={client_id}")
        if round_index is not None:
            ctx.append(f"round={round_index}")
        if epoch is not None:
            ctx.append(f"epoch={epoch}")
        if ctx:
            message = f"{message} ({', '.join(ctx)})"
        super().__init__(message)
