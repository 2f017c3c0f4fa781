"""Exception types shared across the package.

I/O failures are deliberately left as the builtin OSError family; the
classes here cover domain errors only.
"""


class LedgerGuardError(Exception):
    """Base class for all domain errors raised by this package."""


class EncodingOverflow(LedgerGuardError):
    """A length or sequence-number field exceeds its fixed-width capacity."""


class MalformedBlock(LedgerGuardError):
    """Byte sequence is not a well-formed canonical block encoding."""


class ChainMismatch(LedgerGuardError):
    """Appended block does not extend the chain (wrong number or previous hash)."""


class BadSignature(LedgerGuardError):
    """Orderer signature over the block header failed verification."""


class UnknownOrderer(LedgerGuardError):
    """Trust store has no entry for the requested orderer id."""


class OutOfRange(LedgerGuardError):
    """Block number is not present in the store's index."""


class NumberMismatch(LedgerGuardError):
    """Replacement block's header number differs from the target slot."""


class UnreadableTail(LedgerGuardError):
    """A size-changing replacement needs tail blocks that cannot be read."""


class NumberGap(LedgerGuardError):
    """Link check invoked on headers whose numbers are not consecutive."""


class MissingEntry(LedgerGuardError):
    """Checkpoint set has no entry for the requested file."""


class NoValidSource(LedgerGuardError):
    """Every peer was exhausted without yielding a valid block candidate."""

    def __init__(self, number: int, reasons: dict[str, str]):
        super().__init__(f"no peer served a valid copy of block {number}")
        self.number = number
        self.reasons = reasons


class CycleInProgress(LedgerGuardError):
    """A guard cycle was triggered while another one is still running."""


class NonEmptyOutput(LedgerGuardError):
    """Ledger generation target directory already contains files."""


class TransportError(LedgerGuardError):
    """Peer request failed at the transport level (connect, timeout, framing)."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason
