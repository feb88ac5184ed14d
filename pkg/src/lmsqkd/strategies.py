"""Source/channel behaviours: what the third party actually sends each round."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np

from . import quantum_sim as qs
from .errors import ContractViolation

ANCILLA_DIM = 4
_H = 1.0 / math.sqrt(2.0)


class StrategyKind(str, Enum):
    HONEST = "honest"
    FAKE_PHOTON_Z = "fake-z"
    FAKE_PHOTON_X = "fake-x"
    COLLECTIVE = "collective"
    NOISE = "noise"


@dataclass(frozen=True)
class CollectiveParams:
    """Entangling attack ``sum_i a_i |b_i>|e_i>`` with b_i in (00, 01, 10, 11).

    Stored as tuples so the params are hashable and usable as cache keys;
    ``amplitudes`` and ``ancillas`` give numpy views.
    """

    a: tuple[complex, ...]
    e: tuple[tuple[complex, ...], ...]

    def __post_init__(self) -> None:
        a = tuple(complex(x) for x in self.a)
        e = tuple(tuple(complex(x) for x in row) for row in self.e)
        if len(a) != 4 or len(e) != 4 or any(len(row) != ANCILLA_DIM for row in e):
            raise ContractViolation("collective params need 4 amplitudes and 4 ancilla vectors of length 4")
        if not all(math.isfinite(z.real) and math.isfinite(z.imag) for z in a + sum(e, ())):
            raise ContractViolation("non-finite collective parameter")
        total = sum(abs(z) ** 2 for z in a)
        if abs(total - 1.0) > 1e-12:
            raise ContractViolation(f"|a_0|^2 + ... + |a_3|^2 = {total!r}, expected 1")
        for i, row in enumerate(e):
            n = sum(abs(z) ** 2 for z in row)
            if abs(n - 1.0) > 1e-12:
                raise ContractViolation(f"ancilla state e_{i} has norm^2 {n!r}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "e", e)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array(self.a, dtype=np.complex128)

    @property
    def ancillas(self) -> np.ndarray:
        """Row i is |e_i>."""
        return np.array(self.e, dtype=np.complex128)

    @classmethod
    def from_arrays(cls, a, e) -> "CollectiveParams":
        a = np.asarray(a, dtype=np.complex128).reshape(4)
        e = np.asarray(e, dtype=np.complex128).reshape(4, ANCILLA_DIM)
        return cls(tuple(a.tolist()), tuple(tuple(r) for r in e.tolist()))

    @classmethod
    def from_json(cls, doc) -> "CollectiveParams":
        """Parse ``{"a": [[re, im] x4], "e": [[[re, im] x4] x4]}``."""
        if isinstance(doc, str):
            doc = json.loads(doc)
        try:
            a = [complex(float(re), float(im)) for re, im in doc["a"]]
            e = [[complex(float(re), float(im)) for re, im in row] for row in doc["e"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ContractViolation(f"malformed collective params: {exc}") from exc
        return cls(tuple(a), tuple(tuple(r) for r in e))

    def to_json(self) -> dict:
        return {
            "a": [[z.real, z.imag] for z in self.a],
            "e": [[[z.real, z.imag] for z in row] for row in self.e],
        }


def no_disturbance_params(e0=None, phase0: float = 0.0, phase3: float = 0.0, e1=None, e2=None) -> CollectiveParams:
    """Params on the undetectable manifold a_1 = a_2 = 0, a_0|e_0> = a_3|e_3>."""
    e0 = np.array([1, 0, 0, 0], dtype=np.complex128) if e0 is None else np.asarray(e0, dtype=np.complex128)
    e0 = e0 / np.linalg.norm(e0)
    a0 = _H * np.exp(1j * phase0)
    a3 = _H * np.exp(1j * phase3)
    e3 = (a0 / a3) * e0
    e1 = np.array([0, 1, 0, 0], dtype=np.complex128) if e1 is None else np.asarray(e1, dtype=np.complex128)
    e2 = np.array([0, 0, 1, 0], dtype=np.complex128) if e2 is None else np.asarray(e2, dtype=np.complex128)
    return CollectiveParams.from_arrays(
        [a0, 0, 0, a3], [e0, e1 / np.linalg.norm(e1), e2 / np.linalg.norm(e2), e3]
    )


def full_information_params() -> CollectiveParams:
    """a_0 = a_3 = 1/sqrt(2) with orthogonal e_0, e_3: TP learns every II-mode bit."""
    return CollectiveParams.from_arrays([_H, 0, 0, _H], np.eye(4))


@dataclass(frozen=True)
class AttackStrategy:
    kind: StrategyKind
    collective_params: Optional[CollectiveParams] = None
    noise_flip_prob: Optional[float] = None

    def __post_init__(self) -> None:
        kind = StrategyKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is StrategyKind.COLLECTIVE:
            if not isinstance(self.collective_params, CollectiveParams):
                raise ContractViolation("collective strategy requires CollectiveParams")
        elif self.collective_params is not None:
            raise ContractViolation(f"{kind.value} strategy takes no collective params")
        if kind is StrategyKind.NOISE:
            p = self.noise_flip_prob
            if p is None or not 0.0 <= p <= 1.0:
                raise ContractViolation("noise strategy requires a flip probability in [0, 1]")
        elif self.noise_flip_prob is not None:
            raise ContractViolation(f"{kind.value} strategy takes no flip probability")

    @classmethod
    def honest(cls) -> "AttackStrategy":
        return cls(StrategyKind.HONEST)

    @classmethod
    def fake_photon(cls, basis: str) -> "AttackStrategy":
        basis = basis.lower()
        if basis not in ("z", "x"):
            raise ContractViolation(f"fake-photon basis must be 'z' or 'x', got {basis!r}")
        return cls(StrategyKind.FAKE_PHOTON_Z if basis == "z" else StrategyKind.FAKE_PHOTON_X)

    @classmethod
    def collective(cls, params: CollectiveParams) -> "AttackStrategy":
        return cls(StrategyKind.COLLECTIVE, collective_params=params)

    @classmethod
    def noise(cls, flip_prob: float) -> "AttackStrategy":
        return cls(StrategyKind.NOISE, noise_flip_prob=float(flip_prob))

    @property
    def declares_guesses(self) -> bool:
        """Whether the source knows which product state it sent."""
        return self.kind in (StrategyKind.FAKE_PHOTON_Z, StrategyKind.FAKE_PHOTON_X)

    def describe(self) -> dict:
        doc: dict = {"kind": self.kind.value}
        if self.collective_params is not None:
            doc["params"] = self.collective_params.to_json()
        if self.noise_flip_prob is not None:
            doc["flip"] = self.noise_flip_prob
        return doc


class SideInfo(NamedTuple):
    """What the source knows about a round it emitted.

    ``choice`` is the fake-photon pair index (0 for |00>/|++>, 1 for |11>/|-->);
    ``flipped`` marks a channel error on Bob's travel qubit.
    """

    choice: Optional[int] = None
    flipped: bool = False


def _ancilla_ground() -> np.ndarray:
    v = np.zeros(ANCILLA_DIM, dtype=np.complex128)
    v[0] = 1.0
    return v


def collective_state(params: CollectiveParams) -> qs.PureState:
    """sum_i a_i |b_i> |e_i> on 2 x 2 x 4."""
    a = params.amplitudes
    e = params.ancillas
    t = np.zeros((2, 2, ANCILLA_DIM), dtype=np.complex128)
    for i in range(4):
        t[i >> 1, i & 1, :] = a[i] * e[i]
    return qs.PureState((2, 2, ANCILLA_DIM), t)


def build_state(strategy: AttackStrategy, side: SideInfo) -> qs.PureState:
    """Deterministic part of an emission, given the random choices in ``side``."""
    kind = strategy.kind
    if kind is StrategyKind.COLLECTIVE:
        return collective_state(strategy.collective_params)
    if kind is StrategyKind.FAKE_PHOTON_Z:
        bit = [1.0, 0.0] if side.choice == 0 else [0.0, 1.0]
        return qs.product_state(bit, bit, _ancilla_ground())
    if kind is StrategyKind.FAKE_PHOTON_X:
        sign = 1.0 if side.choice == 0 else -1.0
        ket = [_H, sign * _H]
        return qs.product_state(ket, ket, _ancilla_ground())
    state = qs.tensor(qs.bell_phi_plus(), qs.PureState((ANCILLA_DIM,), _ancilla_ground()))
    if kind is StrategyKind.NOISE and side.flipped:
        # Y = iXZ flips the bit in both the I and H frames.
        state = qs.apply_to_subsystem(state, qs.pauli_y(), 1)
    return state


def draw_side_info(strategy: AttackStrategy, u_choice: float, u_flip: float) -> SideInfo:
    kind = strategy.kind
    if kind in (StrategyKind.FAKE_PHOTON_Z, StrategyKind.FAKE_PHOTON_X):
        return SideInfo(choice=0 if u_choice < 0.5 else 1)
    if kind is StrategyKind.NOISE:
        return SideInfo(flipped=u_flip < strategy.noise_flip_prob)
    return SideInfo()


def emit_joint_state(strategy: AttackStrategy, rng) -> tuple[qs.PureState, SideInfo]:
    """Emit one round's 2 x 2 x 4 state from the source.

    Honest and noise rounds start from |Phi+>|E_0>; noise then applies a
    bit-and-phase flip to Bob's travel qubit with probability
    ``noise_flip_prob``. Fake-photon rounds send |00>/|11> or |++>/|-->
    uniformly. ``rng`` must provide ``random()``; two draws are consumed.
    """
    u_choice = rng.random()
    u_flip = rng.random()
    side = draw_side_info(strategy, u_choice, u_flip)
    return build_state(strategy, side), side
