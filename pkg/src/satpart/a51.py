"""Majority-clocked three-register LFSR generators (A5/1 and small surrogates).

Conventions (pinned by the known A5/1 collision pairs, see README):

* cells are numbered 1..L inside each register; a shift moves cell j to
  cell j+1 and writes the XOR of the feedback taps into cell 1;
* the key is the state at t=0, laid out R1|R2|R3 with cell 1 first; in hex
  the first key bit is the most significant bit;
* each step first clocks the registers whose clocking bit agrees with the
  majority, then emits the XOR of the output cells.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .circuit import Circuit, CircuitBuilder


@dataclass(frozen=True)
class LfsrSpec:
    length: int
    feedback_taps: tuple[int, ...]
    clock_tap: int
    output_tap: int

    def __post_init__(self):
        taps = tuple(sorted(set(self.feedback_taps), reverse=True))
        object.__setattr__(self, "feedback_taps", taps)
        if self.length < 1:
            raise ValueError("register length must be positive")
        if not taps or self.length not in taps:
            raise ValueError("feedback taps must include the register length")
        for t in (*taps, self.clock_tap, self.output_tap):
            if not 1 <= t <= self.length:
                raise ValueError(f"tap {t} outside 1..{self.length}")


@dataclass(frozen=True)
class GeneratorSpec:
    registers: tuple[LfsrSpec, LfsrSpec, LfsrSpec]
    keystream_len: int

    def __post_init__(self):
        if len(self.registers) != 3:
            raise ValueError("generator needs exactly three registers")
        if self.keystream_len < 1:
            raise ValueError("keystream_len must be >= 1")

    @property
    def key_length(self) -> int:
        return sum(r.length for r in self.registers)

    @property
    def offsets(self) -> tuple[int, int, int]:
        l1, l2, _ = (r.length for r in self.registers)
        return (0, l1, l1 + l2)

    def with_keystream_len(self, m: int) -> GeneratorSpec:
        return GeneratorSpec(self.registers, m)


def global_to_local(lengths: Sequence[int], cell: int) -> tuple[int, int]:
    """Map a 1-based global cell number to (register index, local cell)."""
    for i, n in enumerate(lengths):
        if cell <= n:
            return i, cell
        cell -= n
    raise ValueError("cell beyond the last register")


def a51_spec(keystream_len: int = 114) -> GeneratorSpec:
    lengths = (19, 22, 23)
    feedback = ((19, 18, 17, 14), (22, 21), (23, 22, 21, 8))
    clock = [global_to_local(lengths, c) for c in (9, 30, 52)]
    output = [global_to_local(lengths, c) for c in (19, 41, 64)]
    regs = tuple(
        LfsrSpec(lengths[i], feedback[i], clock[i][1], output[i][1]) for i in range(3)
    )
    return GeneratorSpec(regs, keystream_len)


def toy_spec(
    lengths: Sequence[int] = (5, 6, 7),
    feedback: Sequence[Sequence[int]] = ((5, 3), (6, 5), (7, 6, 5, 2)),
    clock: Sequence[int] = (3, 3, 4),
    output: Sequence[int] | None = None,
    keystream_len: int | None = None,
) -> GeneratorSpec:
    if any(n < 3 for n in lengths):
        raise ValueError("toy registers need length >= 3")
    output = tuple(lengths) if output is None else tuple(output)
    if keystream_len is None:
        keystream_len = 2 * sum(lengths)
    regs = tuple(LfsrSpec(lengths[i], tuple(feedback[i]), clock[i], output[i]) for i in range(3))
    return GeneratorSpec(regs, keystream_len)


PRESETS = {"a51": a51_spec, "toy": toy_spec}


@dataclass(frozen=True)
class GeneratorState:
    cells: tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]
    t: int = 0

    @classmethod
    def from_key(cls, spec: GeneratorSpec, key: Sequence[int]) -> GeneratorState:
        if len(key) != spec.key_length:
            raise ValueError(f"key has {len(key)} bits, generator needs {spec.key_length}")
        cells = tuple(
            tuple(int(b) for b in key[o : o + r.length]) for o, r in zip(spec.offsets, spec.registers)
        )
        return cls(cells, 0)


def majority(a: int, b: int, c: int) -> int:
    return (a & b) | (a & c) | (b & c)


def step(state: GeneratorState, spec: GeneratorSpec) -> tuple[GeneratorState, int]:
    clock_bits = [cells[r.clock_tap - 1] for cells, r in zip(state.cells, spec.registers)]
    maj = majority(*clock_bits)
    new = []
    for cells, r, b in zip(state.cells, spec.registers, clock_bits):
        if b == maj:
            fb = 0
            for t in r.feedback_taps:
                fb ^= cells[t - 1]
            cells = (fb,) + cells[:-1]
        new.append(cells)
    out = 0
    for cells, r in zip(new, spec.registers):
        out ^= cells[r.output_tap - 1]
    return GeneratorState(tuple(new), state.t + 1), out


def keystream(spec: GeneratorSpec, key: Sequence[int]) -> list[int]:
    state = GeneratorState.from_key(spec, key)
    bits = []
    for _ in range(spec.keystream_len):
        state, b = step(state, spec)
        bits.append(b)
    return bits


def keystream_batch(spec: GeneratorSpec, keys: np.ndarray) -> np.ndarray:
    """Vectorised keystream for a (K, n) 0/1 key matrix; returns (K, m) uint8."""
    keys = np.asarray(keys, dtype=np.uint8)
    if keys.ndim != 2 or keys.shape[1] != spec.key_length:
        raise ValueError(f"expected keys of shape (K, {spec.key_length})")
    regs = [keys[:, o : o + r.length].copy() for o, r in zip(spec.offsets, spec.registers)]
    out = np.empty((keys.shape[0], spec.keystream_len), dtype=np.uint8)
    for t in range(spec.keystream_len):
        b = [reg[:, r.clock_tap - 1] for reg, r in zip(regs, spec.registers)]
        maj = (b[0] & b[1]) | (b[0] & b[2]) | (b[1] & b[2])
        for i, (reg, r) in enumerate(zip(regs, spec.registers)):
            move = b[i] == maj
            fb = np.bitwise_xor.reduce(reg[:, [tp - 1 for tp in r.feedback_taps]], axis=1)
            shifted = np.concatenate([fb[:, None], reg[:, :-1]], axis=1)
            regs[i] = np.where(move[:, None], shifted, reg)
        o = regs[0][:, spec.registers[0].output_tap - 1].copy()
        o ^= regs[1][:, spec.registers[1].output_tap - 1]
        o ^= regs[2][:, spec.registers[2].output_tap - 1]
        out[:, t] = o
    return out


def all_keys(n: int) -> np.ndarray:
    """Every n-bit key as rows of a (2^n, n) matrix, row index = key as MSB-first integer."""
    idx = np.arange(1 << n, dtype=np.uint64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.uint64)
    return ((idx[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)


def build_circuit(spec: GeneratorSpec) -> Circuit:
    """Circuit with ``key_length`` inputs and ``keystream_len`` outputs.

    Irregular clocking is unrolled with one multiplexer per cell and step:
    ``cell' = tau ? shifted-in value : cell``.
    """
    b = CircuitBuilder()
    regs = [[b.input() for _ in range(r.length)] for r in spec.registers]
    for _ in range(spec.keystream_len):
        clock_bits = [cells[r.clock_tap - 1] for cells, r in zip(regs, spec.registers)]
        maj = b.maj3(*clock_bits)
        for i, r in enumerate(spec.registers):
            cells = regs[i]
            tau = b.not_(b.xor(clock_bits[i], maj))
            fb = b.xor_all([cells[t - 1] for t in r.feedback_taps])
            shifted = [fb] + cells[:-1]
            regs[i] = [b.mux(tau, s, c) for s, c in zip(shifted, cells)]
        outs = [cells[r.output_tap - 1] for cells, r in zip(regs, spec.registers)]
        b.output(b.xor_all(outs))
    return b.build()


def key_from_hex(text: str, n: int = 64) -> list[int]:
    text = text.strip().lower().removeprefix("0x")
    value = int(text, 16)
    if value >> n:
        raise ValueError(f"hex key wider than {n} bits")
    return [(value >> (n - 1 - i)) & 1 for i in range(n)]


def key_to_hex(bits: Sequence[int]) -> str:
    value = 0
    for b in bits:
        value = (value << 1) | int(b)
    return format(value, f"0{(len(bits) + 3) // 4}X")


def bits_from_str(text: str) -> list[int]:
    text = "".join(text.split())
    if any(ch not in "01" for ch in text):
        raise ValueError("bit string may only contain 0 and 1")
    return [int(ch) for ch in text]


def bits_to_str(bits: Sequence[int]) -> str:
    return "".join(str(int(b)) for b in bits)
