import random

import numpy as np
import pytest

from ppadmm import paillier as pl
from ppadmm import protocol as pr
from ppadmm.admm import DistributedAdmm, Problem, split_problem
from ppadmm.transport import LatencyModel, SimulatedNetwork, Tag, TcpNetwork

ITERS = 8


@pytest.fixture(scope="module")
def setup():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((10, 12))
    x = np.zeros(12)
    x[[1, 5, 9]] = [1.0, -2.0, 0.5]
    prob = Problem(A, A @ x)
    keys = pl.keygen(256, random.Random(3), strict=False)
    cfg = pr.SessionConfig(3, 256, 10 ** 12, -6.0, 6.0, iter_max=ITERS)
    return prob, keys, cfg


@pytest.fixture(scope="module")
def runs(setup):
    prob, keys, cfg = setup
    out = {}
    for variant in pr.VARIANTS:
        c = pr.SessionConfig(**{**cfg.__dict__, "variant": variant})
        out[variant] = pr.run_session(prob, c, keys, seed=5)
    return out


def test_config_text_round_trip(setup):
    cfg = setup[2]
    assert pr.SessionConfig.from_text(cfg.to_text()) == cfg
    other = pr.SessionConfig(**{**cfg.__dict__, "delta": 10 ** 11})
    assert other.digest() != cfg.digest()


def test_config_validation():
    with pytest.raises(ValueError):
        pr.SessionConfig(3, 256, 10, -1, 1, variant="fast")
    with pytest.raises(ValueError):
        pr.SessionConfig(0, 256, 10, -1, 1)


@pytest.mark.parametrize("variant", pr.VARIANTS)
def test_session_matches_integer_reference(setup, runs, variant):
    prob, keys, cfg = setup
    ref = pr.quantized_reference(prob, cfg, keys.public.n)
    res = runs[variant]
    assert res.q_history == ref.q_history
    assert np.array_equal(res.history, ref.history)


def test_session_tracks_float_admm(setup, runs):
    prob = setup[0]
    plain = DistributedAdmm(prob, split_problem(prob, 3)).run(ITERS)
    assert np.max(np.abs(runs["basic"].history - plain)) < 1e-9


def test_variants_agree_and_collab_saves_master_work(runs):
    basic, collab = runs["basic"], runs["collaborative"]
    assert np.array_equal(basic.history, collab.history)
    assert collab.master_ops.cost < basic.master_ops.cost
    assert "n2" not in collab.master_ops.counts
    assert collab.edge_ops[0].counts.get("p2", 0) > 0


def test_ciphertexts_identical_across_variants(runs):
    def zv(res):
        return [e.payload for e in res.transcript.envelopes(src="master")
                if e.tag in (Tag.ZVCipher, Tag.AlphaCipher)]
    assert zv(runs["basic"]) == zv(runs["collaborative"])


def test_message_counts(runs):
    K = 3
    for variant, per_iter in (("basic", 2 * K), ("collaborative", 5 * K)):
        envs = runs[variant].transcript.envelopes()
        loop = [e for e in envs if e.tag in (Tag.XCipher, Tag.ReducedX, Tag.ObfuscatedZV,
                                             Tag.ReducedZV)
                or (e.tag == Tag.ZVCipher and e.iteration > 1)]
        # the last iteration sends nothing back out
        expected = per_iter * ITERS - (per_iter - (2 if variant == "collaborative" else 1) * K)
        assert len(loop) == expected


def test_edges_never_see_plain_state(runs):
    for env in runs["basic"].transcript.envelopes(src="master"):
        assert env.tag in (Tag.InitTask, Tag.AlphaCipher, Tag.ZVCipher, Tag.Done)


def test_latency_identity(setup):
    prob, keys, cfg = setup
    net = SimulatedNetwork(3, LatencyModel(5.0))
    try:
        res = pr.run_session(prob, cfg, keys, net, seed=5)
    finally:
        net.close()
    tr = res.trace
    assert tr.accounted_total() == pytest.approx(tr.t_total, rel=1e-3)
    for it in tr.iterations:
        assert it.comm >= 0.0099
        assert len(it.edge_wait) == 1 and it.edge_wait[0] >= 0


def test_tcp_session_matches_sim(setup, runs):
    prob, keys, cfg = setup
    net = TcpNetwork(3)
    try:
        res = pr.run_session(prob, cfg, keys, net, seed=5)
    finally:
        net.close()
    assert np.array_equal(res.history, runs["basic"].history)


def test_overflow_refused(setup):
    prob, _, cfg = setup
    keys = pl.keygen(64, random.Random(1))
    with pytest.raises(pl.PlaintextOverflowError):
        pr.run_session(prob, cfg, keys)


def test_clamped_session_still_matches_reference(setup):
    prob, keys, cfg = setup
    tight = pr.SessionConfig(**{**cfg.__dict__, "z_min": -0.5, "z_max": 0.5, "iter_max": 3})
    res = pr.run_session(prob, tight, keys, seed=1)
    ref = pr.quantized_reference(prob, tight, keys.public.n)
    assert res.clamps.clamped > 0
    assert np.array_equal(res.history, ref.history)


def test_obfuscation_preserves_powers(setup):
    pk, sk, crt = setup[1]
    period = pk.n * sk.carmichael
    rng = random.Random(0)
    vals = [rng.randrange(1 << 50) for _ in range(5)]
    masked, masks = pr.obfuscate(vals, period, 64, rng)
    assert all(m > v for m, v in zip(masked, vals))
    assert pr.deobfuscate(masked, masks, period) == vals
    for v, m in zip(vals, masked):
        assert pow(pk.g, m, pk.n2) == pow(pk.g, v, pk.n2)
    assert pr.obfuscate(vals, period, 0, rng)[0] == vals


def test_reduce_exponents_matches_direct(setup):
    pk, sk, crt = setup[1]
    eng = pl.PowEngine()
    exps = [3, 10 ** 30, crt.phi_p2 + 7]
    assert pr.reduce_exponents(exps, crt.g_p2, crt.p2, crt.phi_p2, eng) == \
        [pow(pk.g, e, crt.p2) for e in exps]


def test_decode_block_uses_clipped_inputs():
    from ppadmm.quantize import QuantSpec, combined_quantized_update, gamma1, gamma2
    spec = QuantSpec(10 ** 12, -1.0, 1.0)
    B = np.array([[0.5]])
    z, v, alpha = np.array([3.0]), np.array([0.2]), np.array([0.1])
    q = combined_quantized_update(gamma1(alpha, spec), gamma2(B, spec), *pr.quantize_zv(z, v, spec))
    x = pr.decode_block(q, spec, B, z, v)
    assert x[0] == pytest.approx(0.1 + 0.5 * (1.0 - 0.2), abs=1e-9)
