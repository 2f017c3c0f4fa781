"""File-backed blockchain ledger with corruption detection and peer recovery."""

__version__ = "0.1.0"
