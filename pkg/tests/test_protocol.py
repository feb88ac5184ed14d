import json
import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.linalg import toeplitz

from lmsqkd import quantum_sim as qs
from lmsqkd.errors import AbortInsufficientSample, ContractViolation
from lmsqkd.protocol import (
    OperatorChoice,
    RoundRecord,
    SessionConfig,
    SessionTranscript,
    ToeplitzSeed,
    generate_rounds,
    pa_output_length,
    privacy_amplify,
    public_discussion,
    run_round,
    run_rounds,
    run_session,
    select_check_bits,
    sift,
    theoretical_efficiency,
    toeplitz_hash,
)
from lmsqkd.strategies import AttackStrategy, full_information_params, no_disturbance_params

I, H = OperatorChoice.I, OperatorChoice.H

STRATEGIES = [
    AttackStrategy.honest(),
    AttackStrategy.noise(0.3),
    AttackStrategy.fake_photon("z"),
    AttackStrategy.fake_photon("x"),
    AttackStrategy.collective(full_information_params()),
    AttackStrategy.collective(no_disturbance_params()),
]


def forced(p_a, p_b, n=2000, seed=1):
    return SessionConfig(n_rounds=n, p_a=p_a, p_b=p_b, master_seed=seed)


def rec(i, a_op, b_op, a=0, b=0):
    return RoundRecord(i, a_op, b_op, a, b)


# --- rounds ------------------------------------------------------------------

class TestRounds:
    @pytest.mark.parametrize("p", [0.0, 1.0])
    def test_matching_operators_give_equal_bits(self, p):
        cfg = forced(p, p)
        rounds = run_rounds(AttackStrategy.honest(), cfg, 0, cfg.n_rounds)
        assert all(r.alice_op is r.bob_op for r in rounds)
        assert all(r.alice_bit == r.bob_bit for r in rounds)

    def test_mismatched_operators_agree_half_the_time(self):
        cfg = forced(0.0, 1.0, n=100_000, seed=3)
        rounds = run_rounds(AttackStrategy.honest(), cfg, 0, cfg.n_rounds)
        assert all(r.alice_op is I and r.bob_op is H for r in rounds)
        agree = np.mean([r.alice_bit == r.bob_bit for r in rounds])
        assert abs(agree - 0.5) <= 0.005

    @pytest.mark.parametrize("strategy", STRATEGIES, ids=lambda s: s.kind.value)
    def test_scalar_and_batched_paths_agree(self, strategy):
        cfg = SessionConfig(n_rounds=200, master_seed=99)
        scalar = [run_round(i, strategy, cfg) for i in range(200)]
        assert scalar == run_rounds(strategy, cfg, 0, 200)

    @pytest.mark.parametrize("strategy", STRATEGIES[:3], ids=lambda s: s.kind.value)
    def test_chunking_does_not_change_rounds(self, strategy):
        cfg = SessionConfig(n_rounds=500, master_seed=5)
        whole = run_rounds(strategy, cfg, 0, 500)
        pieces = run_rounds(strategy, cfg, 0, 137) + run_rounds(strategy, cfg, 137, 400) + run_rounds(strategy, cfg, 400, 500)
        assert whole == pieces

    def test_thread_count_does_not_change_rounds(self):
        cfg = SessionConfig(n_rounds=40_000, master_seed=8)
        assert generate_rounds(AttackStrategy.honest(), cfg, threads=1) == generate_rounds(
            AttackStrategy.honest(), cfg, threads=8
        )

    def test_guesses_only_for_fake_photon_sources(self):
        cfg = SessionConfig(n_rounds=50, master_seed=2)
        for s in STRATEGIES:
            rounds = run_rounds(s, cfg, 0, 50)
            has = [r.tp_guess_alice is not None for r in rounds]
            assert all(has) if s.declares_guesses else not any(has)

    def test_fake_z_guess_is_exact_on_identity_rounds(self):
        cfg = SessionConfig(n_rounds=2000, master_seed=4, p_a=0.0, p_b=0.0)
        rounds = run_rounds(AttackStrategy.fake_photon("z"), cfg, 0, 2000)
        assert all(r.tp_guess_alice == r.alice_bit == r.bob_bit for r in rounds)

    def test_different_seeds_differ(self):
        a = run_rounds(AttackStrategy.honest(), SessionConfig(n_rounds=64, master_seed=1), 0, 64)
        b = run_rounds(AttackStrategy.honest(), SessionConfig(n_rounds=64, master_seed=2), 0, 64)
        assert a != b


# --- sifting, check bits, discussion ----------------------------------------

class TestSifting:
    def test_sift_example(self):
        rounds = [rec(0, I, I), rec(1, I, H), rec(2, H, H), rec(3, H, I)]
        assert sift(rounds) == [0, 2]

    def test_sift_empty(self):
        assert sift([]) == []

    def test_kept_fraction(self):
        cfg = SessionConfig(n_rounds=100_000, master_seed=12)
        rounds = generate_rounds(AttackStrategy.honest(), cfg)
        assert abs(len(sift(rounds)) / cfg.n_rounds - 0.5) <= 0.005

    def test_kept_fraction_asymmetric_probabilities(self):
        cfg = SessionConfig(n_rounds=100_000, master_seed=13, p_a=0.2, p_b=0.7)
        frac = len(sift(generate_rounds(AttackStrategy.honest(), cfg))) / cfg.n_rounds
        expected = 0.2 * 0.7 + 0.8 * 0.3
        assert abs(frac - expected) < 5 * math.sqrt(expected * (1 - expected) / cfg.n_rounds)


class TestCheckSelection:
    def test_half_split(self):
        cfg = SessionConfig(n_rounds=10, min_check_bits=1)
        sifted = list(range(0, 200, 2))
        check, key = select_check_bits(sifted, cfg)
        assert len(check) == 50 and len(key) == 50
        assert not set(check) & set(key)
        assert sorted(check + key) == sifted

    def test_single_index_goes_to_check(self):
        cfg = SessionConfig(n_rounds=10, min_check_bits=1)
        assert select_check_bits([7], cfg) == ([7], [])

    def test_deterministic_given_seed(self):
        cfg = SessionConfig(n_rounds=10, min_check_bits=1, master_seed=42)
        sifted = list(range(300))
        assert select_check_bits(sifted, cfg) == select_check_bits(sifted, cfg)
        other = SessionConfig(n_rounds=10, min_check_bits=1, master_seed=43)
        assert select_check_bits(sifted, cfg) != select_check_bits(sifted, other)

    def test_rounding_is_half_up(self):
        cfg = SessionConfig(n_rounds=10, min_check_bits=1, check_fraction=0.5)
        check, key = select_check_bits(list(range(5)), cfg)
        assert (len(check), len(key)) == (3, 2)

    def test_insufficient_sample(self):
        cfg = SessionConfig(n_rounds=10, min_check_bits=100)
        with pytest.raises(AbortInsufficientSample):
            select_check_bits(list(range(150)), cfg)
        with pytest.raises(AbortInsufficientSample):
            select_check_bits([], SessionConfig(n_rounds=10, min_check_bits=1))


class TestPublicDiscussion:
    def test_honest_session_is_error_free(self):
        cfg = SessionConfig(n_rounds=20_000, master_seed=21)
        rounds = generate_rounds(AttackStrategy.honest(), cfg)
        check, _ = select_check_bits(sift(rounds), cfg)
        assert public_discussion(rounds, check) == 0.0

    def test_all_flipped(self):
        rounds = [rec(i, I, I, 0, 1) for i in range(10)]
        assert public_discussion(rounds, list(range(10))) == 1.0

    def test_noise_rate_recovered(self):
        cfg = SessionConfig(n_rounds=40_000, master_seed=22)
        rounds = generate_rounds(AttackStrategy.noise(0.05), cfg)
        sifted = sift(rounds)
        check = sifted[:10_000]
        assert len(check) == 10_000
        assert abs(public_discussion(rounds, check) - 0.05) <= 0.01

    def test_empty_check_set(self):
        with pytest.raises(AbortInsufficientSample):
            public_discussion([rec(0, I, I)], [])

    def test_non_contiguous_round_list(self):
        rounds = [rec(5, I, I, 1, 1), rec(9, H, H, 0, 1)]
        assert public_discussion(rounds, [5, 9]) == 0.5


# --- privacy amplification ----------------------------------------------------

def _oracle_toeplitz(bits, seed: ToeplitzSeed):
    n, m = seed.input_len, seed.output_len
    s = np.asarray(seed.bits)
    t = toeplitz(s[n - 1:], s[n - 1::-1])  # first column, first row
    return ((t @ np.asarray(bits)) % 2).tolist()


class TestPrivacyAmplification:
    @pytest.mark.parametrize("n,m", [(1, 1), (5, 3), (64, 64), (257, 100), (1000, 31)])
    def test_hash_matches_dense_toeplitz_product(self, n, m):
        rng = np.random.default_rng(n * 1000 + m)
        seed = ToeplitzSeed.random(n, m, rng)
        x = rng.integers(0, 2, size=n).tolist()
        assert toeplitz_hash(x, seed) == _oracle_toeplitz(x, seed)
        np.testing.assert_array_equal(seed.matrix(), toeplitz(np.asarray(seed.bits)[n - 1:], np.asarray(seed.bits)[n - 1::-1]))

    def test_hash_is_gf2_linear(self):
        rng = np.random.default_rng(0)
        seed = ToeplitzSeed.random(300, 120, rng)
        x = rng.integers(0, 2, 300)
        y = rng.integers(0, 2, 300)
        hx = np.array(toeplitz_hash(x.tolist(), seed))
        hy = np.array(toeplitz_hash(y.tolist(), seed))
        np.testing.assert_array_equal(np.array(toeplitz_hash((x ^ y).tolist(), seed)), hx ^ hy)

    def test_seed_length_checked(self):
        with pytest.raises(ContractViolation):
            ToeplitzSeed((0, 1, 1), 3, 3)

    def test_zero_qber_keeps_full_length(self):
        cfg = SessionConfig(n_rounds=10)
        raw = np.random.default_rng(1).integers(0, 2, 250).tolist()
        assert len(privacy_amplify(raw, 0.0, cfg)) == 250

    @pytest.mark.parametrize("n", [1, 100, 1000, 5000])
    def test_qber_at_bound_leaves_nothing(self, n):
        cfg = SessionConfig(n_rounds=10, qber_threshold=0.11)
        assert privacy_amplify([1] * n, 0.11, cfg) == []

    def test_output_length_formula(self):
        for n, q, margin in [(1000, 0.02, 0), (1000, 0.05, 17), (333, 0.0, 400)]:
            expected = max(0, math.floor(n * (1 - 2 * qs.binary_entropy(q))) - margin)
            assert pa_output_length(n, q, margin) == expected

    def test_same_inputs_same_output(self):
        cfg = SessionConfig(n_rounds=10, master_seed=3)
        raw = np.random.default_rng(2).integers(0, 2, 400).tolist()
        assert privacy_amplify(raw, 0.01, cfg) == privacy_amplify(raw, 0.01, cfg)

    def test_single_flip_changes_half_the_output(self):
        rng = np.random.default_rng(5)
        n, ell = 200, 100
        raw = rng.integers(0, 2, n)
        flipped = raw.copy()
        flipped[rng.integers(n)] ^= 1
        diffs = []
        for _ in range(1000):
            seed = ToeplitzSeed.random(n, ell, rng)
            diffs.append(np.sum(np.array(toeplitz_hash(raw.tolist(), seed)) != np.array(toeplitz_hash(flipped.tolist(), seed))))
        # mean of 1000 Binomial(100, 1/2) draws: sd 0.16
        assert abs(np.mean(diffs) - ell / 2) < 1.0

    def test_preconditions(self):
        cfg = SessionConfig(n_rounds=10, qber_threshold=0.05)
        with pytest.raises(ContractViolation):
            privacy_amplify([], 0.0, cfg)
        with pytest.raises(ContractViolation):
            privacy_amplify([0, 1], 0.06, cfg)
        with pytest.raises(ContractViolation):
            privacy_amplify([0, 1, 1], 0.0, cfg, seed=ToeplitzSeed((0, 1), 2, 1))


# --- sessions -----------------------------------------------------------------

class TestSession:
    def test_honest_key_length_and_efficiency(self):
        n = 4000
        t = run_session(SessionConfig(n_rounds=n, master_seed=7), AttackStrategy.honest())
        tol = 3 * math.sqrt(n * 3 / 16)
        assert t.accepted and t.estimated_qber == 0.0
        assert abs(len(t.final_key) - n / 4) <= tol
        assert t.qubit_efficiency == Fraction(len(t.final_key), 2 * n)
        assert abs(float(t.qubit_efficiency) - 1 / 8) <= tol / (2 * n)

    def test_high_noise_aborts(self):
        t = run_session(SessionConfig(n_rounds=4000, master_seed=7), AttackStrategy.noise(0.2))
        assert not t.accepted
        assert t.final_key == []
        assert t.estimated_qber > 0.08
        assert t.abort_reason == "qber_above_threshold"

    def test_small_session_aborts_on_sample_size(self):
        t = run_session(SessionConfig(n_rounds=50, master_seed=1), AttackStrategy.honest())
        assert not t.accepted and t.final_key == [] and t.estimated_qber is None
        assert t.abort_reason.startswith("insufficient_sample")

    def test_low_noise_accepted_with_reported_mismatch(self):
        t = run_session(SessionConfig(n_rounds=20_000, master_seed=4), AttackStrategy.noise(0.02))
        assert t.accepted
        assert 0 < t.raw_key_mismatch < 0.05
        assert len(t.final_key) == pa_output_length(len(t.raw_key), t.estimated_qber, 0)

    @pytest.mark.parametrize("strategy", STRATEGIES, ids=lambda s: s.kind.value)
    def test_structural_invariants(self, strategy):
        t = run_session(SessionConfig(n_rounds=3000, master_seed=17, qber_threshold=0.6), strategy)
        rounds = t.rounds
        sifted = set(t.sifted_indices)
        for r in rounds:
            assert (r.index in sifted) == (r.alice_op is r.bob_op)
        assert set(t.check_indices) <= sifted
        key_idx = sorted(sifted - set(t.check_indices))
        assert t.raw_key == [rounds[i].alice_bit for i in key_idx]
        assert len(t.raw_key) + len(t.check_indices) == len(t.sifted_indices)
        if t.accepted:
            assert len(t.final_key) == pa_output_length(len(t.raw_key), t.estimated_qber, 0)
        else:
            assert t.final_key == []

    def test_honest_sifted_rounds_never_disagree(self):
        t = run_session(SessionConfig(n_rounds=30_000, master_seed=30), AttackStrategy.honest())
        assert all(t.rounds[i].alice_bit == t.rounds[i].bob_bit for i in t.sifted_indices)

    def test_raw_key_looks_uniform(self):
        ones = total = 0
        for seed in range(20):
            t = run_session(SessionConfig(n_rounds=4000, master_seed=seed), AttackStrategy.honest())
            ones += sum(t.raw_key)
            total += len(t.raw_key)
        assert abs(ones / total - 0.5) <= 5 * math.sqrt(0.25 / total)

    def test_deterministic_across_threads(self):
        cfg = SessionConfig(n_rounds=50_000, master_seed=77)
        a = run_session(cfg, AttackStrategy.noise(0.03), threads=1)
        b = run_session(cfg, AttackStrategy.noise(0.03), threads=8)
        assert a.dumps(include_rounds=True) == b.dumps(include_rounds=True)


class TestTranscriptJson:
    def test_schema(self):
        t = run_session(SessionConfig(n_rounds=1000, master_seed=3), AttackStrategy.honest())
        doc = json.loads(t.dumps())
        assert doc["version"] == 1
        assert "rounds" not in doc
        for key in ("config", "sifted", "check", "qber", "accepted", "raw_key", "final_key", "efficiency"):
            assert key in doc
        assert doc["efficiency"] == {"num": t.qubit_efficiency.numerator, "den": t.qubit_efficiency.denominator}
        verbose = json.loads(t.dumps(include_rounds=True))
        assert verbose["rounds"][0].keys() == {"i", "a_op", "b_op", "a", "b"}

    def test_round_trip(self):
        t = run_session(SessionConfig(n_rounds=1500, master_seed=9), AttackStrategy.fake_photon("x"))
        back = SessionTranscript.from_json(t.dumps(include_rounds=True))
        assert back.dumps(include_rounds=True) == t.dumps(include_rounds=True)
        assert back.rounds == t.rounds

    def test_hex_key_encoding(self):
        t = run_session(SessionConfig(n_rounds=1000, master_seed=3), AttackStrategy.honest())
        doc = json.loads(t.dumps())
        bits = np.unpackbits(np.frombuffer(bytes.fromhex(doc["final_key"]), dtype=np.uint8))[: doc["final_key_bits"]]
        assert bits.tolist() == t.final_key

    def test_version_checked(self):
        with pytest.raises(ContractViolation):
            SessionTranscript.from_json({"version": 2})


def test_theoretical_efficiency():
    assert theoretical_efficiency(Fraction(1, 2), Fraction(1, 2), Fraction(1, 2)) == Fraction(1, 8)
    assert theoretical_efficiency(Fraction(1, 2), Fraction(1, 2), Fraction(1)) == 0


@pytest.mark.parametrize("kwargs", [
    {"n_rounds": 0},
    {"n_rounds": 10, "p_a": 1.5},
    {"n_rounds": 10, "check_fraction": 0.0},
    {"n_rounds": 10, "check_fraction": 1.0},
    {"n_rounds": 10, "min_check_bits": 0},
    {"n_rounds": 10, "master_seed": -1},
])
def test_config_validation(kwargs):
    with pytest.raises(ContractViolation):
        SessionConfig(**kwargs)
