"""Virtual serial EEPROM: 65,536 words of 8 bits, erased state 0xFF."""

from __future__ import annotations

EEPROM_SIZE = 65_536
PAGE_SIZE = 128  # write granularity of the real part


class VirtualEeprom:
    """Byte-addressable persistence with a per-address write counter.

    Writes are all-or-nothing per call: out-of-range requests change nothing.
    Power-cut modelling is done by the caller issuing page-sized writes and
    stopping between them.
    """

    def __init__(self):
        self._cells = bytearray(b"\xff" * EEPROM_SIZE)
        self._write_count = [0] * EEPROM_SIZE

    @property
    def size(self) -> int:
        return EEPROM_SIZE

    def read(self, addr: int, length: int) -> bytes:
        if addr < 0 or length < 0 or addr + length > EEPROM_SIZE:
            raise ValueError(f"read [{addr}, {addr + length}) outside 0..{EEPROM_SIZE}")
        return bytes(self._cells[addr:addr + length])

    def write(self, addr: int, data: bytes) -> None:
        if addr < 0 or addr + len(data) > EEPROM_SIZE:
            raise ValueError(f"write [{addr}, {addr + len(data)}) outside 0..{EEPROM_SIZE}")
        self._cells[addr:addr + len(data)] = data
        for i in range(addr, addr + len(data)):
            self._write_count[i] += 1

    def write_count(self, addr: int) -> int:
        return self._write_count[addr]

    def erase(self) -> None:
        """Factory reset: all cells back to 0xFF."""
        for i in range(EEPROM_SIZE):
            if self._cells[i] != 0xFF:
                self._write_count[i] += 1
        self._cells = bytearray(b"\xff" * EEPROM_SIZE)
