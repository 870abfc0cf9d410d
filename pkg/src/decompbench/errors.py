"""Exception types shared across the toolkit."""


class DecompBenchError(Exception):
    """Base class for all toolkit errors."""


class MissingTool(DecompBenchError):
    """A required executable or environment setting is absent.

    Signals an environment problem: the CLI maps this to exit code 2.
    """

    def __init__(self, name: str, hint: str = ""):
        self.name = name
        msg = f"required tool or setting not available: {name}"
        if hint:
            msg += f" ({hint})"
        super().__init__(msg)


class IngestError(DecompBenchError):
    """A source record cannot be admitted (malformed layout, ambiguous symbol scan)."""


class CompileFailed(DecompBenchError):
    """Compiler exited nonzero; carries the captured diagnostics."""

    def __init__(self, message: str, stderr: str = ""):
        self.stderr = stderr
        super().__init__(message)


class SymbolNotFound(DecompBenchError):
    """Requested function symbol is not present in the artifact."""

    def __init__(self, symbol: str, available=()):
        self.symbol = symbol
        self.available = tuple(available)
        shown = ", ".join(self.available) if self.available else "(none)"
        super().__init__(f"symbol {symbol!r} not found; available symbols: {shown}")


class NormalizationSuspect(DecompBenchError):
    """More than the tolerated share of disassembly lines failed to parse."""


class EmptyListing(DecompBenchError):
    """Normalization produced a listing with no tokens."""


class EmptyDocument(DecompBenchError):
    """MinHash requested over an empty shingle set."""


class IncomparableSignatures(DecompBenchError):
    """Signatures built with different permutation counts or seeds."""


class KindMismatch(DecompBenchError):
    """A prompt renderer received input of the wrong kind."""


class InputEmpty(DecompBenchError):
    """A prompt renderer received empty or whitespace-only input."""


class ToolFailure(DecompBenchError):
    """An external tool exited nonzero; carries its captured log."""

    def __init__(self, message: str, log: str = ""):
        self.log = log
        super().__init__(message)


class BackendTimeout(DecompBenchError):
    """A backend job exceeded its wall-clock budget."""


class ApiError(DecompBenchError):
    """Completion endpoint rejected the request (4xx or malformed reply); not retried."""

    def __init__(self, message: str, status_code: int = 0, body: str = ""):
        self.status_code = status_code
        self.body = body
        super().__init__(message)


class TransportError(DecompBenchError):
    """Completion endpoint unreachable after exhausting retries."""


class UnusableCandidate(DecompBenchError):
    """No plausible function definition found in a decompiled candidate."""


class UnparseableJudgement(DecompBenchError):
    """Readability judge reply lacks a valid final score line."""


class EmptyRun(DecompBenchError):
    """Aggregation requested over zero outcomes."""


class ReportIntegrityError(DecompBenchError):
    """Report inputs are inconsistent (unmatched records or mixed runs)."""
