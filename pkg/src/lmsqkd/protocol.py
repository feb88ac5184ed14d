"""Session orchestration: rounds, sifting, check bits, QBER and privacy amplification."""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np

from . import quantum_sim as qs
from .errors import AbortInsufficientSample, ContractViolation
from .rng import Party, party_generator, round_stream, round_uniforms
from .strategies import AttackStrategy, SideInfo, StrategyKind, build_state, emit_joint_state

TRANSCRIPT_VERSION = 1
_CHUNK = 16384


class OperatorChoice(str, Enum):
    I = "I"
    H = "H"

    @property
    def gate(self) -> qs.UnitaryGate:
        return qs.hadamard() if self is OperatorChoice.H else qs.identity(2)


@dataclass(frozen=True)
class SessionConfig:
    n_rounds: int
    p_a: float = 0.5
    p_b: float = 0.5
    check_fraction: float = 0.5
    qber_threshold: float = 0.08
    pa_security_margin: int = 0
    master_seed: int = 0
    min_check_bits: int = 100

    def __post_init__(self) -> None:
        if int(self.n_rounds) < 1:
            raise ContractViolation("n_rounds must be at least 1")
        for name in ("p_a", "p_b", "qber_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ContractViolation(f"{name} must lie in [0, 1], got {v!r}")
        if not 0.0 < self.check_fraction < 1.0:
            raise ContractViolation(f"check_fraction must lie in (0, 1), got {self.check_fraction!r}")
        if self.pa_security_margin < 0:
            raise ContractViolation("pa_security_margin must be non-negative")
        if self.min_check_bits < 1:
            raise ContractViolation("min_check_bits must be at least 1")
        if not 0 <= self.master_seed < 2**64:
            raise ContractViolation("master_seed must be a 64-bit unsigned integer")


@dataclass(frozen=True, slots=True)
class RoundRecord:
    index: int
    alice_op: OperatorChoice
    bob_op: OperatorChoice
    alice_bit: int
    bob_bit: int
    tp_guess_alice: Optional[int] = None
    tp_guess_bob: Optional[int] = None

    def to_json(self) -> dict:
        doc = {"i": self.index, "a_op": self.alice_op.value, "b_op": self.bob_op.value,
               "a": self.alice_bit, "b": self.bob_bit}
        if self.tp_guess_alice is not None:
            doc["tp_a"] = self.tp_guess_alice
            doc["tp_b"] = self.tp_guess_bob
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "RoundRecord":
        return cls(doc["i"], OperatorChoice(doc["a_op"]), OperatorChoice(doc["b_op"]),
                   doc["a"], doc["b"], doc.get("tp_a"), doc.get("tp_b"))


# ---------------------------------------------------------------------------
# Rounds
# ---------------------------------------------------------------------------

def _choose(u: float, p_h: float) -> OperatorChoice:
    return OperatorChoice.H if u < p_h else OperatorChoice.I


def run_round(index: int, strategy: AttackStrategy, config: SessionConfig) -> RoundRecord:
    """Simulate one round gate by gate.

    Random draws come from the per-(seed, party, round) streams, so this
    agrees bit for bit with :func:`run_rounds`.
    """
    src = round_stream(config.master_seed, Party.SOURCE, index)
    alice = round_stream(config.master_seed, Party.ALICE, index)
    bob = round_stream(config.master_seed, Party.BOB, index)

    state, side = emit_joint_state(strategy, src)
    a_op = _choose(alice.random(), config.p_a)
    b_op = _choose(bob.random(), config.p_b)
    state = qs.apply_to_subsystem(state, a_op.gate, 0)
    state = qs.apply_to_subsystem(state, b_op.gate, 1)
    a_bit, state = qs.measure_z(state, 0, alice)
    b_bit, _ = qs.measure_z(state, 1, bob)
    guess = side.choice if strategy.declares_guesses else None
    return RoundRecord(index, a_op, b_op, a_bit, b_bit, guess, guess)


def _first_outcome_threshold(state: qs.PureState, subsystem: int) -> float:
    # Mirrors measure_z: outcome 0 iff u < normalized P(0).
    probs = qs.outcome_probabilities(state, subsystem)
    return float((probs / float(probs.sum()))[0])


@lru_cache(maxsize=512)
def _outcome_table(strategy: AttackStrategy, side: SideInfo, a_h: bool, b_h: bool) -> tuple[float, float, float]:
    """(P(a=0), P(b=0 | a=0), P(b=0 | a=1)) thresholds for one round type."""
    state = build_state(strategy, side)
    state = qs.apply_to_subsystem(state, (OperatorChoice.H if a_h else OperatorChoice.I).gate, 0)
    state = qs.apply_to_subsystem(state, (OperatorChoice.H if b_h else OperatorChoice.I).gate, 1)
    t_a = _first_outcome_threshold(state, 0)
    p_a = qs.outcome_probabilities(state, 0)
    t_b = []
    for k in (0, 1):
        if p_a[k] < 1e-12:
            t_b.append(1.0)  # branch unreachable
        else:
            t_b.append(_first_outcome_threshold(qs.collapse(state, 0, k), 1))
    return t_a, t_b[0], t_b[1]


def run_rounds(strategy: AttackStrategy, config: SessionConfig, start: int, stop: int) -> list[RoundRecord]:
    """Rounds ``start..stop-1``, batched.

    The quantum part is evaluated once per distinct round type (source
    choice, channel flip, operator pair) and the Born thresholds are then
    applied to every round's own uniforms.
    """
    if stop <= start:
        return []
    seed = config.master_seed
    us = round_uniforms(seed, Party.SOURCE, start, stop)
    ua = round_uniforms(seed, Party.ALICE, start, stop)
    ub = round_uniforms(seed, Party.BOB, start, stop)

    a_h = ua[:, 0] < config.p_a
    b_h = ub[:, 0] < config.p_b
    kind = strategy.kind
    if strategy.declares_guesses:
        choice = (us[:, 0] >= 0.5).astype(np.int64)
    else:
        choice = np.full(len(us), 2, dtype=np.int64)
    if kind is StrategyKind.NOISE:
        flipped = us[:, 1] < strategy.noise_flip_prob
    else:
        flipped = np.zeros(len(us), dtype=bool)

    code = choice * 8 + flipped * 4 + a_h * 2 + b_h
    t_a = np.empty(len(us))
    t_b0 = np.empty(len(us))
    t_b1 = np.empty(len(us))
    for c in np.unique(code):
        c = int(c)
        side = SideInfo(choice=None if c >> 3 == 2 else c >> 3, flipped=bool(c & 4))
        ta, tb0, tb1 = _outcome_table(strategy, side, bool(c & 2), bool(c & 1))
        m = code == c
        t_a[m], t_b0[m], t_b1[m] = ta, tb0, tb1

    a_bit = (ua[:, 1] >= t_a).astype(np.int64)
    b_bit = (ub[:, 1] >= np.where(a_bit == 0, t_b0, t_b1)).astype(np.int64)

    ops = (OperatorChoice.I, OperatorChoice.H)
    if strategy.declares_guesses:
        guesses = choice.tolist()
    else:
        guesses = [None] * len(us)
    return [
        RoundRecord(start + k, ops[ah], ops[bh], a, b, g, g)
        for k, (ah, bh, a, b, g) in enumerate(
            zip(a_h.tolist(), b_h.tolist(), a_bit.tolist(), b_bit.tolist(), guesses)
        )
    ]


def generate_rounds(strategy: AttackStrategy, config: SessionConfig, threads: int = 1) -> list[RoundRecord]:
    """All ``n_rounds`` rounds, optionally split across worker threads."""
    n = config.n_rounds
    bounds = [(s, min(s + _CHUNK, n)) for s in range(0, n, _CHUNK)]
    if threads <= 1 or len(bounds) == 1:
        parts = [run_rounds(strategy, config, s, e) for s, e in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: run_rounds(strategy, config, *b), bounds))
    return [r for part in parts for r in part]


# ---------------------------------------------------------------------------
# Classical post-processing
# ---------------------------------------------------------------------------

def sift(rounds: Iterable[RoundRecord]) -> list[int]:
    """Indices of rounds where both participants applied the same operator."""
    return [r.index for r in rounds if r.alice_op is r.bob_op]


def check_count(n_sifted: int, check_fraction: float) -> int:
    """round-half-up(check_fraction * n_sifted)."""
    return int(math.floor(check_fraction * n_sifted + 0.5))


def select_check_bits(
    sifted: Sequence[int], config: SessionConfig, rng: Optional[np.random.Generator] = None
) -> tuple[list[int], list[int]]:
    """Split the sifted indices into (check, key), both in ascending order.

    The draw stands in for the participants agreeing on positions over the
    authenticated channel; by default it comes from the session seed.
    """
    n_check = check_count(len(sifted), config.check_fraction)
    if n_check < config.min_check_bits:
        raise AbortInsufficientSample(
            f"{n_check} check bits from {len(sifted)} sifted rounds; need {config.min_check_bits}"
        )
    if rng is None:
        rng = party_generator(config.master_seed, Party.CHECK)
    arr = np.asarray(sifted, dtype=np.int64)
    perm = rng.permutation(len(arr))
    check = np.sort(arr[perm[:n_check]])
    key = np.sort(arr[perm[n_check:]])
    return check.tolist(), key.tolist()


def _index_rounds(rounds: Sequence[RoundRecord]):
    if all(r.index == k for k, r in enumerate(rounds)):
        return rounds
    return {r.index: r for r in rounds}


def public_discussion(rounds: Sequence[RoundRecord], check: Sequence[int]) -> float:
    """Fraction of check positions where Alice's and Bob's bits differ."""
    if len(check) == 0:
        raise AbortInsufficientSample("no check bits to compare")
    lookup = _index_rounds(rounds)
    errors = sum(1 for i in check if lookup[i].alice_bit != lookup[i].bob_bit)
    return errors / len(check)


@dataclass(frozen=True)
class ToeplitzSeed:
    """Defines the output_len x input_len binary Toeplitz matrix ``T[i, j] = bits[i - j + input_len - 1]``."""

    bits: tuple[int, ...]
    input_len: int
    output_len: int

    def __post_init__(self) -> None:
        bits = tuple(int(b) for b in self.bits)
        expected = self.input_len + self.output_len - 1 if self.output_len > 0 else 0
        if len(bits) != expected:
            raise ContractViolation(
                f"Toeplitz seed for {self.output_len}x{self.input_len} needs {expected} bits, got {len(bits)}"
            )
        if any(b not in (0, 1) for b in bits):
            raise ContractViolation("seed bits must be 0 or 1")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def random(cls, input_len: int, output_len: int, rng: np.random.Generator) -> "ToeplitzSeed":
        n = input_len + output_len - 1 if output_len > 0 else 0
        return cls(tuple(rng.integers(0, 2, size=n).tolist()), input_len, output_len)

    def matrix(self) -> np.ndarray:
        i = np.arange(self.output_len)[:, None]
        j = np.arange(self.input_len)[None, :]
        return np.asarray(self.bits, dtype=np.uint8)[i - j + self.input_len - 1]


def _bits_to_int(bits: Sequence[int]) -> int:
    """Bit k of the result is bits[k]."""
    if len(bits) == 0:
        return 0
    return int("".join("1" if b else "0" for b in reversed(bits)), 2)


def toeplitz_hash(bits: Sequence[int], seed: ToeplitzSeed) -> list[int]:
    """Multiply by the seed's Toeplitz matrix over GF(2).

    Row i of the matrix dotted with x is the parity of seed window
    ``bits[i : i + n]`` against x reversed, so each output bit is one
    big-integer AND plus a popcount.
    """
    n = len(bits)
    if n != seed.input_len:
        raise ContractViolation(f"input has {n} bits, seed expects {seed.input_len}")
    if seed.output_len == 0:
        return []
    s = _bits_to_int(seed.bits)
    x_rev = _bits_to_int(list(reversed(bits)))
    return [((s >> i) & x_rev).bit_count() & 1 for i in range(seed.output_len)]


def pa_output_length(n_raw: int, estimated_qber: float, margin: int) -> int:
    rate = 1.0 - 2.0 * qs.binary_entropy(estimated_qber)
    return max(0, math.floor(n_raw * rate) - margin)


def privacy_amplify(
    raw_key: Sequence[int], estimated_qber: float, config: SessionConfig, seed: Optional[ToeplitzSeed] = None
) -> list[int]:
    """Compress the raw key to floor(n (1 - 2 h(Q))) - margin bits by Toeplitz hashing."""
    if len(raw_key) == 0:
        raise ContractViolation("raw key is empty")
    if estimated_qber > config.qber_threshold:
        raise ContractViolation(f"QBER {estimated_qber} exceeds threshold {config.qber_threshold}")
    ell = pa_output_length(len(raw_key), estimated_qber, config.pa_security_margin)
    if seed is None:
        seed = ToeplitzSeed.random(len(raw_key), ell, party_generator(config.master_seed, Party.HASH))
    elif (seed.input_len, seed.output_len) != (len(raw_key), ell):
        raise ContractViolation(
            f"seed is {seed.output_len}x{seed.input_len}, need {ell}x{len(raw_key)}"
        )
    return toeplitz_hash(raw_key, seed)


# ---------------------------------------------------------------------------
# Sessions
# ---------------------------------------------------------------------------

def theoretical_efficiency(p_a, p_b, check_fraction) -> Fraction:
    """Expected key bits per qubit with a noiseless channel.

    Each round spends two qubits; a round survives sifting with probability
    p_a p_b + (1 - p_a)(1 - p_b) and then lands in the key with probability
    1 - check_fraction. Exact when given Fractions.
    """
    match = p_a * p_b + (1 - p_a) * (1 - p_b)
    return match * (1 - check_fraction) / 2


def _bits_to_hex(bits: Sequence[int]) -> str:
    if len(bits) == 0:
        return ""
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes().hex()


def _hex_to_bits(text: str, n: int) -> list[int]:
    if n == 0:
        return []
    raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
    return np.unpackbits(raw)[:n].astype(int).tolist()


@dataclass
class SessionTranscript:
    config: SessionConfig
    strategy: dict
    rounds: list[RoundRecord]
    sifted_indices: list[int]
    check_indices: list[int]
    estimated_qber: Optional[float]
    accepted: bool
    raw_key: list[int]
    final_key: list[int]
    qubit_efficiency: Fraction
    abort_reason: Optional[str] = None
    # Fraction of raw-key positions where Bob's bit differs (no reconciliation step exists).
    raw_key_mismatch: Optional[float] = None

    def summary(self) -> dict:
        qber = "nan" if self.estimated_qber is None else f"{self.estimated_qber:.6f}"
        return {
            "rounds": self.config.n_rounds,
            "sifted": len(self.sifted_indices),
            "check": len(self.check_indices),
            "qber": qber,
            "accepted": str(self.accepted).lower(),
            "raw_key_length": len(self.raw_key),
            "key_length": len(self.final_key),
            "efficiency": f"{self.qubit_efficiency.numerator}/{self.qubit_efficiency.denominator}",
        }

    def to_json(self, include_rounds: bool = False) -> dict:
        doc: dict = {"version": TRANSCRIPT_VERSION, "config": asdict(self.config), "strategy": self.strategy}
        if include_rounds:
            doc["rounds"] = [r.to_json() for r in self.rounds]
        doc.update({
            "sifted": list(self.sifted_indices),
            "check": list(self.check_indices),
            "qber": self.estimated_qber,
            "accepted": self.accepted,
            "abort_reason": self.abort_reason,
            "raw_key": _bits_to_hex(self.raw_key),
            "raw_key_bits": len(self.raw_key),
            "raw_key_mismatch": self.raw_key_mismatch,
            "final_key": _bits_to_hex(self.final_key),
            "final_key_bits": len(self.final_key),
            "efficiency": {"num": self.qubit_efficiency.numerator, "den": self.qubit_efficiency.denominator},
        })
        return doc

    def dumps(self, include_rounds: bool = False) -> str:
        return json.dumps(self.to_json(include_rounds), separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, doc) -> "SessionTranscript":
        if isinstance(doc, str):
            doc = json.loads(doc)
        if doc.get("version") != TRANSCRIPT_VERSION:
            raise ContractViolation(f"unsupported transcript version {doc.get('version')!r}")
        eff = doc["efficiency"]
        return cls(
            config=SessionConfig(**doc["config"]),
            strategy=doc["strategy"],
            rounds=[RoundRecord.from_json(r) for r in doc.get("rounds", [])],
            sifted_indices=list(doc["sifted"]),
            check_indices=list(doc["check"]),
            estimated_qber=doc["qber"],
            accepted=bool(doc["accepted"]),
            raw_key=_hex_to_bits(doc["raw_key"], doc["raw_key_bits"]),
            final_key=_hex_to_bits(doc["final_key"], doc["final_key_bits"]),
            qubit_efficiency=Fraction(eff["num"], eff["den"]),
            abort_reason=doc.get("abort_reason"),
            raw_key_mismatch=doc.get("raw_key_mismatch"),
        )


def run_session(config: SessionConfig, strategy: AttackStrategy, threads: int = 1) -> SessionTranscript:
    """Run all four protocol steps and return the transcript.

    An insufficient check sample or a QBER above threshold ends the session
    with ``accepted = False`` and an empty final key; restarting is up to the
    caller.
    """
    rounds = generate_rounds(strategy, config, threads=threads)
    sifted = sift(rounds)

    def finish(check, qber, accepted, raw, final, reason=None, mismatch=None):
        return SessionTranscript(
            config=config, strategy=strategy.describe(), rounds=rounds, sifted_indices=sifted,
            check_indices=check, estimated_qber=qber, accepted=accepted, raw_key=raw,
            final_key=final, qubit_efficiency=Fraction(len(final), 2 * config.n_rounds),
            abort_reason=reason, raw_key_mismatch=mismatch,
        )

    try:
        check, key_idx = select_check_bits(sifted, config)
        qber = public_discussion(rounds, check)
    except AbortInsufficientSample as exc:
        return finish([], None, False, [], [], reason=f"insufficient_sample: {exc}")

    raw = [rounds[i].alice_bit for i in key_idx]
    mismatch = (sum(rounds[i].alice_bit != rounds[i].bob_bit for i in key_idx) / len(key_idx)) if key_idx else None
    if qber > config.qber_threshold:
        return finish(check, qber, False, raw, [], reason="qber_above_threshold", mismatch=mismatch)
    final = privacy_amplify(raw, qber, config) if raw else []
    return finish(check, qber, True, raw, final, mismatch=mismatch)
