"""Four-card SD array behind a mux: files land on the active card, the mux
advances to another card with room when it fills, and the array reports
storage-full only when no card can take the file."""

from __future__ import annotations

from dataclasses import dataclass, field

DEFAULT_CARD_BYTES = 32_000_000_000
DEFAULT_CARD_COUNT = 4


@dataclass
class SdCard:
    capacity_bytes: int = DEFAULT_CARD_BYTES
    used_bytes: int = 0
    files: list = field(default_factory=list)  # (name, size) in arrival order

    @property
    def free_bytes(self) -> int:
        return self.capacity_bytes - self.used_bytes


@dataclass(frozen=True)
class WriteResult:
    """Outcome of one file write: where it landed, or storage_full."""

    accepted: bool
    card_index: int = -1
    switched_from: int = -1  # previous active card when the mux advanced

    @property
    def storage_full(self) -> bool:
        return not self.accepted

    @property
    def switched(self) -> bool:
        return self.switched_from >= 0


class SdCardArray:
    def __init__(self, cards: list[SdCard] | None = None):
        self.cards = cards if cards is not None else \
            [SdCard() for _ in range(DEFAULT_CARD_COUNT)]
        self.active_index = 0

    @property
    def total_capacity_bytes(self) -> int:
        return sum(c.capacity_bytes for c in self.cards)

    @property
    def total_used_bytes(self) -> int:
        return sum(c.used_bytes for c in self.cards)

    @property
    def total_free_bytes(self) -> int:
        return self.total_capacity_bytes - self.total_used_bytes

    def write_file(self, name: str, size_bytes: int) -> WriteResult:
        """Place one file; advances the mux when the active card lacks room."""
        if size_bytes <= 0:
            raise ValueError(f"size_bytes must be > 0, got {size_bytes}")
        n = len(self.cards)
        for hop in range(n):
            idx = (self.active_index + hop) % n
            card = self.cards[idx]
            if card.free_bytes >= size_bytes:
                card.files.append((name, size_bytes))
                card.used_bytes += size_bytes
                switched_from = self.active_index if hop else -1
                self.active_index = idx
                return WriteResult(True, idx, switched_from)
        return WriteResult(False)

    def file_count(self) -> int:
        return sum(len(c.files) for c in self.cards)

    def snapshot(self) -> list[dict]:
        return [
            {
                "index": i,
                "capacity_bytes": c.capacity_bytes,
                "used_bytes": c.used_bytes,
                "files": len(c.files),
                "active": i == self.active_index,
            }
            for i, c in enumerate(self.cards)
        ]
