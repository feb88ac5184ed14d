"""Leakage and detectability of the third party's attacks.

Collective attacks are scored analytically (sifted error rates, Holevo
information on Alice's key bit) and by sampling the third party's probe
measurement. Fake-photon attacks are scored by the closed-form detection
probability and by Monte-Carlo sessions run through the protocol engine.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import quantum_sim as qs
from .errors import ContractViolation
from .protocol import OperatorChoice, SessionConfig, run_rounds
from .rng import derive_seed
from .strategies import (
    AttackStrategy,
    CollectiveParams,
    SideInfo,
    StrategyKind,
    build_state,
    collective_state,
)

Mode = Literal["II", "HH"]
MODES: tuple[Mode, ...] = ("II", "HH")


@dataclass(frozen=True)
class LeakageReport:
    qber_ii: float
    qber_hh: float
    holevo_bits: float
    empirical_guess_accuracy: float
    holevo_ii: float = 0.0
    holevo_hh: float = 0.0

    @property
    def max_qber(self) -> float:
        return max(self.qber_ii, self.qber_hh)


def collective_qber(params: CollectiveParams, mode: Mode) -> float:
    """Sifted error probability under the collective attack, from the branch norms."""
    a = params.amplitudes
    e = params.ancillas
    v = a[:, None] * e  # v[i] = a_i |e_i>
    if mode == "II":
        err = float(np.vdot(v[1], v[1]).real + np.vdot(v[2], v[2]).real)
        total = float(sum(np.vdot(v[i], v[i]).real for i in range(4)))
    elif mode == "HH":
        signs = np.array([[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]])
        branch = [float(np.linalg.norm(s @ v) ** 2) / 4.0 for s in signs]  # |00>, |01>, |10>, |11>
        err = branch[1] + branch[2]
        total = sum(branch)
    else:
        raise ContractViolation(f"mode must be 'II' or 'HH', got {mode!r}")
    return err / total


def _mode_state(params: CollectiveParams, mode: Mode) -> np.ndarray:
    """Attacked state after both participants' operators, as a (2, 2, 4) tensor."""
    state = collective_state(params)
    if mode == "HH":
        h = qs.hadamard()
        state = qs.apply_to_subsystem(qs.apply_to_subsystem(state, h, 0), h, 1)
    return np.array(state.tensor)


def holevo_for_mode(params: CollectiveParams, mode: Mode) -> float:
    """chi = S(sum_k p_k rho_k) - sum_k p_k S(rho_k) for the probe given Alice's bit k."""
    t = _mode_state(params, mode)
    rhos = []
    probs = []
    for k in (0, 1):
        block = t[k]  # rows indexed by Bob's bit, columns by probe basis
        rho = block.T @ block.conj()
        p = float(np.trace(rho).real)
        probs.append(p)
        rhos.append(rho)
    mixed = rhos[0] + rhos[1]
    chi = qs.von_neumann_entropy(mixed)
    for p, rho in zip(probs, rhos):
        if p > 1e-15:
            chi -= p * qs.von_neumann_entropy(rho / p)
    return max(chi, 0.0)


def holevo_leakage(params: CollectiveParams) -> tuple[float, float, float]:
    """(average over II and HH, II value, HH value)."""
    ii = holevo_for_mode(params, "II")
    hh = holevo_for_mode(params, "HH")
    return 0.5 * (ii + hh), ii, hh


def probe_basis(params: CollectiveParams) -> np.ndarray:
    """Orthonormal basis (rows) from Gram-Schmidt on e_0..e_3, completed with |0>..|3>."""
    candidates = list(params.ancillas) + list(np.eye(4, dtype=np.complex128))
    basis: list[np.ndarray] = []
    for v in candidates:
        w = np.array(v, dtype=np.complex128)
        for b in basis:
            w = w - np.vdot(b, w) * b
        n = np.linalg.norm(w)
        if n > 1e-9:
            basis.append(w / n)
        if len(basis) == 4:
            break
    return np.array(basis)


def leakage_report(params: CollectiveParams, n_samples: int, rng: np.random.Generator) -> LeakageReport:
    """Analytic error rates and Holevo information plus a sampled guessing attack.

    The sampled attack: the third party measures its probe in
    :func:`probe_basis`, learns the mode from the public sifting, and guesses
    the maximum-a-posteriori value of Alice's bit.
    """
    avg, ii, hh = holevo_leakage(params)
    basis = probe_basis(params)
    correct = 0
    if n_samples > 0:
        modes = rng.integers(0, 2, size=n_samples)
        for m_idx, mode in enumerate(MODES):
            count = int(np.sum(modes == m_idx))
            if count == 0:
                continue
            t = _mode_state(params, mode)
            amp = np.einsum("jd,abd->abj", basis.conj(), t)
            joint = np.abs(amp) ** 2  # P(a, b, j)
            joint = joint / joint.sum()
            p_aj = joint.sum(axis=1)
            guess = (p_aj[1] > p_aj[0]).astype(int)  # ties go to 0
            flat = joint.reshape(-1)
            draws = rng.choice(flat.size, size=count, p=flat)
            a_bits = draws // (2 * 4)
            j = draws % 4
            correct += int(np.sum(guess[j] == a_bits))
    accuracy = correct / n_samples if n_samples > 0 else float("nan")
    return LeakageReport(
        qber_ii=collective_qber(params, "II"),
        qber_hh=collective_qber(params, "HH"),
        holevo_bits=avg,
        empirical_guess_accuracy=accuracy,
        holevo_ii=ii,
        holevo_hh=hh,
    )


# ---------------------------------------------------------------------------
# Fake-photon attack
# ---------------------------------------------------------------------------

def fake_photon_detection_prob(m: int) -> float:
    """1 - (1/4)^m for m compared check bits."""
    if m < 0:
        raise ContractViolation("m must be non-negative")
    return 1.0 - 0.25 ** m


def check_bit_reveal_prob(strategy: AttackStrategy, p_a: float = 0.5, p_b: float = 0.5) -> float:
    """Exact probability that one sifted check bit shows a mismatch.

    Enumerates source choices, operator pairs and Born outcomes through the
    same state tables the protocol engine samples from.
    """
    choices = (0, 1) if strategy.declares_guesses else (None,)
    flips = (False, True) if strategy.kind is StrategyKind.NOISE else (False,)
    p_flip = strategy.noise_flip_prob or 0.0
    err = 0.0
    sifted = 0.0
    for c in choices:
        pc = 1.0 / len(choices)
        for f in flips:
            pf = (p_flip if f else 1.0 - p_flip) if len(flips) == 2 else 1.0
            for a_h, pa in ((False, 1 - p_a), (True, p_a)):
                pb = p_b if a_h else 1 - p_b
                w = pc * pf * pa * pb
                state = build_state(strategy, SideInfo(choice=c, flipped=f))
                op = (OperatorChoice.H if a_h else OperatorChoice.I).gate
                state = qs.apply_to_subsystem(qs.apply_to_subsystem(state, op, 0), op, 1)
                probs = state.probabilities().sum(axis=tuple(range(2, len(state.dims))))
                err += w * float(probs[0, 1] + probs[1, 0])
                sifted += w
    if sifted == 0.0:
        raise ContractViolation("operator probabilities leave no sifted rounds")
    return err / sifted


def detection_trial(strategy: AttackStrategy, m: int, seed: int, p_a: float = 0.5, p_b: float = 0.5) -> bool:
    """One session: collect the first m sifted rounds as check bits; detected if any differ."""
    config = SessionConfig(n_rounds=1, p_a=p_a, p_b=p_b, master_seed=seed, min_check_bits=1)
    need = m
    start = 0
    block = max(8, 4 * m)
    while need > 0:
        for r in run_rounds(strategy, config, start, start + block):
            if r.alice_op is r.bob_op:
                if r.alice_bit != r.bob_bit:
                    return True
                need -= 1
                if need == 0:
                    break
        start += block
    return False


def empirical_detection_rate(
    strategy: AttackStrategy,
    m: int,
    trials: int,
    seed: int,
    p_a: float = 0.5,
    p_b: float = 0.5,
    threads: int = 1,
) -> float:
    """Fraction of ``trials`` independent sessions in which the attack is caught."""
    if trials < 1:
        raise ContractViolation("trials must be at least 1")
    seeds = [derive_seed(seed, m, t) for t in range(trials)]

    def run(s: int) -> bool:
        return detection_trial(strategy, m, s, p_a, p_b)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            hits = sum(pool.map(run, seeds, chunksize=256))
    else:
        hits = sum(map(run, seeds))
    return hits / trials


def detection_table(
    basis: str, ms: list[int], trials: int, seed: int, threads: int = 1
) -> list[tuple[int, float, float, float]]:
    """Rows of (m, closed-form prediction, exact per-check model, empirical rate)."""
    strategy = AttackStrategy.fake_photon(basis)
    r = check_bit_reveal_prob(strategy)
    rows = []
    for m in ms:
        emp = empirical_detection_rate(strategy, m, trials, seed, threads=threads)
        rows.append((m, fake_photon_detection_prob(m), 1.0 - (1.0 - r) ** m, emp))
    return rows

