import json
import zlib
from collections import Counter

import numpy as np
import pytest
from scipy.stats import chi2

from byzagg.attacks import MESSAGE_STRATEGIES, strategy
from byzagg.errors import ConfigInvalid, OverflowSuspected, ProtocolAbort
from byzagg.field import M61, PrimeField, interpolate
from byzagg.quantizer import QuantConfig, dequantize, quantize
from byzagg.robust import nnm_mix
from byzagg.protocol import (
    FEDERATOR,
    ByzantineBehavior,
    PrivateAggregationRound,
    ProtocolConfig,
    Transcript,
    check_sizes,
    comm_accounting,
    fit_exponent,
    plaintext_round,
    run_round,
)

FM, F31 = PrimeField(M61), PrimeField(31)


def random_inputs(n, d, rng, spread=100):
    return [FM.embed_signed(rng.integers(-spread, spread + 1, d)) for _ in range(n)]


def test_size_checks():
    check_sizes(7, 2, 1, "krum")
    with pytest.raises(ConfigInvalid):
        check_sizes(6, 2, 1, "krum")
    with pytest.raises(ConfigInvalid):
        check_sizes(7, 2, 1, "multikrum")
    with pytest.raises(ConfigInvalid):
        check_sizes(7, 1, 1, "median")
    with pytest.raises(ConfigInvalid):
        ProtocolConfig(n=7, b=1, z=1, d=3, field=FM, quant=QuantConfig(9, 1.0, F31))


def test_inputs_are_validated():
    cfg = ProtocolConfig(n=5, b=1, z=1, d=2, field=FM)
    with pytest.raises(ConfigInvalid):
        PrivateAggregationRound(cfg, [[1, 2]] * 4, 0, 0)
    with pytest.raises(ConfigInvalid):
        PrivateAggregationRound(cfg, [[1, 2, 3]] * 5, 0, 0)


@pytest.mark.parametrize("rule,n", [("krum", 7), ("multikrum", 8)])
@pytest.mark.parametrize("name", sorted(MESSAGE_STRATEGIES))
def test_oracle_equivalence(rule, n, name):
    rng = np.random.default_rng(zlib.crc32(f"{rule}/{name}".encode()))
    cfg = ProtocolConfig(n=n, b=2, z=1, d=4, field=FM, rule=rule)
    for seed in range(3):
        inputs = random_inputs(n, 4, rng)
        res = run_round(cfg, inputs, shared_seed=seed, seed=seed, behavior=strategy(name, {n - 1, n}))
        expect, selected, norm = plaintext_round(cfg, inputs, res.active, res.b_eff)
        assert res.aggregate_field.tolist() == expect.tolist()
        assert res.selected == selected and res.normalizer == norm


def test_honest_round_details():
    rng = np.random.default_rng(0)
    cfg = ProtocolConfig(n=7, b=2, z=1, d=3, field=FM)
    inputs = random_inputs(7, 3, rng)
    res = run_round(cfg, inputs, shared_seed=1, seed=2)
    ints = np.array([FM.unembed_signed(x) for x in inputs], dtype=np.int64)
    diff = ints[:, None, :] - ints[None, :, :]
    assert res.distances.tolist() == (diff**2).sum(axis=2).tolist()
    assert all(s[0] == j + 1 for j, s in enumerate(res.neighbor_sets))
    assert len(res.selected) == 1 and res.excluded == [] and res.b_eff == 2
    mixed = nnm_mix(ints, 2)
    assert FM.unembed_signed(res.aggregate_field).tolist() == mixed[res.selected[0] - 1].tolist()


def test_every_client_holds_all_shares():
    cfg = ProtocolConfig(n=5, b=1, z=1, d=2, field=FM)
    rnd = PrivateAggregationRound(cfg, random_inputs(5, 2, np.random.default_rng(1)), 0, 0)
    rnd.step1_share_gradients()
    assert all(v.shape == (5, 2) for v in rnd.gradient_shares.values())
    # z + 1 shares reconstruct each dealer's gradient
    for k in range(5):
        got = [interpolate(FM, [1, 2], [rnd.gradient_shares[1][k][c], rnd.gradient_shares[2][k][c]])[0] for c in range(2)]
        assert got == list(rnd.inputs[k])


def test_quantized_end_to_end():
    rng = np.random.default_rng(3)
    qc = QuantConfig(1024, 1.0, FM)
    cfg = ProtocolConfig(n=7, b=2, z=1, d=5, field=FM, quant=qc)
    inputs = [quantize(rng.normal(0, 0.3, 5), qc, rng) for _ in range(7)]
    res = run_round(cfg, inputs, shared_seed=4, seed=5, behavior=strategy("all-shares", {6, 7}))
    expect, _, norm = plaintext_round(cfg, inputs)
    assert np.array_equal(res.g_sigma, dequantize(expect, qc, terms=norm) / norm)


def test_inconsistent_dealer_excluded():
    cfg = ProtocolConfig(n=7, b=2, z=1, d=2, field=FM)
    res = run_round(cfg, random_inputs(7, 2, np.random.default_rng(5)), 0, 0,
                    behavior=ByzantineBehavior(frozenset({7}), dealing="inconsistent"))
    assert res.excluded == [7] and res.active == [1, 2, 3, 4, 5, 6] and res.b_eff == 1


def test_victim_dealing_is_repaired():
    cfg = ProtocolConfig(n=7, b=2, z=1, d=2, field=FM)
    res = run_round(cfg, random_inputs(7, 2, np.random.default_rng(6)), 0, 0,
                    behavior=ByzantineBehavior(frozenset({7}), dealing="victim"))
    assert res.excluded == []
    rows = [m for m in res.transcript.messages if m.kind == "vss-public-row"]
    assert rows and all(m.sender == 7 for m in rows)


def test_restart_then_exclusion():
    cfg = ProtocolConfig(n=7, b=2, z=1, d=2, field=FM, restart_on_vss_failure=True)
    inputs = random_inputs(7, 2, np.random.default_rng(7))
    res = run_round(cfg, inputs, 0, 0, behavior=ByzantineBehavior(frozenset({6, 7}), dealing="inconsistent"))
    assert res.vss_restarts == 1 and res.excluded == [6, 7] and res.b_eff == 0
    expect, selected, _ = plaintext_round(cfg, inputs, res.active, res.b_eff)
    assert res.aggregate_field.tolist() == expect.tolist() and res.selected == selected


def test_too_many_bad_dealers_abort():
    cfg = ProtocolConfig(n=7, b=2, z=1, d=2, field=FM)
    with pytest.raises(ProtocolAbort) as info:
        run_round(cfg, random_inputs(7, 2, np.random.default_rng(8)), 0, 0,
                  behavior=ByzantineBehavior(frozenset({5, 6, 7}), dealing="inconsistent"))
    assert info.value.step == "step1"


@pytest.mark.parametrize("flag", ["distance_shares", "responses", "aggregate_shares"])
def test_b_plus_one_corruptions_abort(flag):
    cfg = ProtocolConfig(n=7, b=2, z=1, d=3, field=FM)
    rng = np.random.default_rng(9)
    for seed in range(5):
        with pytest.raises(ProtocolAbort):
            run_round(cfg, random_inputs(7, 3, rng), seed, seed,
                      behavior=ByzantineBehavior(frozenset({5, 6, 7}), **{flag: True}))


def test_overflow_suspected():
    cfg = ProtocolConfig(n=5, b=1, z=1, d=2, field=F31)
    inputs = [F31.embed_signed(np.array(v)) for v in ([0, 0], [4, 2], [0, 0], [0, 0], [0, 0])]
    with pytest.raises(OverflowSuspected):
        run_round(cfg, inputs, 0, 0)


def test_step5_returns_padded_neighbor_sum():
    rng = np.random.default_rng(10)
    cfg = ProtocolConfig(n=9, b=2, z=2, d=3, field=FM)
    inputs = random_inputs(9, 3, rng)
    rnd = PrivateAggregationRound(cfg, inputs, 3, 4, behavior=ByzantineBehavior(frozenset({1, 4}), responses=True))
    rnd.step1_share_gradients()
    rnd.step2_distance_shares()
    sets = rnd.step3_reconstruct_and_select()
    for jpos, j in enumerate(rnd.active):
        pad = rnd.step4_pad(j)
        got = rnd.step5_private_sum_retrieval(jpos, j, pad)
        plain = sum(np.asarray(inputs[k - 1], dtype=object) for k in sets[jpos])
        assert got.tolist() == ((plain + 7 * pad) % M61).tolist()
        assert pad.tolist() != rnd.step4_pad(j % 9 + 1).tolist()


def test_federator_never_sees_unpadded_gradients():
    rng = np.random.default_rng(11)
    cfg = ProtocolConfig(n=7, b=2, z=1, d=4, field=FM)
    inputs = random_inputs(7, 4, rng)
    res = run_round(cfg, inputs, 1, 1)
    seen = res.transcript.observation_vector(FEDERATOR, steps=(5, 6, 7))
    for x in inputs:
        assert not any(seen[i : i + 4] == list(x) for i in range(len(seen) - 3))


def test_private_final_aggregation():
    rng = np.random.default_rng(12)
    base = dict(n=7, b=2, z=1, d=3, field=FM)
    inputs = random_inputs(7, 3, rng)
    plain = run_round(ProtocolConfig(**base), inputs, 2, 2)
    private = run_round(ProtocolConfig(**base, private_final_aggregation=True), inputs, 2, 2,
                        behavior=ByzantineBehavior(frozenset({3}), responses=True))
    assert private.aggregate_field.tolist() == plain.aggregate_field.tolist()
    kinds = {m.kind for m in private.transcript.messages if m.step == 8}
    assert "selection" not in kinds and "query" in kinds
    assert "selection" in {m.kind for m in plain.transcript.messages}


def test_nnm_off_skips_mixing_steps():
    rng = np.random.default_rng(13)
    cfg = ProtocolConfig(n=8, b=2, z=1, d=3, field=FM, rule="multikrum", nnm=False)
    inputs = random_inputs(8, 3, rng)
    res = run_round(cfg, inputs, 0, 0)
    assert {m.step for m in res.transcript.messages} == {1, 2, 8}
    assert res.mixture_distances is None and res.normalizer == 1
    expect, selected, _ = plaintext_round(cfg, inputs)
    assert res.aggregate_field.tolist() == expect.tolist() and res.selected == selected


def _top_coefficients(rerandomize, runs=2000):
    """Degree-2z coefficient of the pair (1, 2) distance polynomial, per run."""
    cfg = ProtocolConfig(n=5, b=1, z=1, d=1, field=F31, nnm=False, rerandomize=rerandomize)
    inputs = [F31.embed_signed(np.array([v])) for v in (1, 0, 0, 1, 2)]
    tops = []
    for seed in range(runs):
        res = run_round(cfg, inputs, seed, seed)
        shares = [m.payload[0] for m in res.transcript.messages if m.kind == "distance-shares"]
        tops.append(interpolate(F31, [1, 2, 3], shares[:3])[2])
    return tops


def test_rerandomization_hides_cross_terms():
    squares = {x * x % 31 for x in range(31)}
    leaky = _top_coefficients(False)
    # without lambda the top coefficient is (r_1 - r_2)^2, always a square
    assert set(leaky) <= squares and len(squares) == 16
    masked = _top_coefficients(True)
    counts = np.bincount(masked, minlength=31)
    stat = ((counts - len(masked) / 31) ** 2 / (len(masked) / 31)).sum()
    assert chi2.sf(stat, 30) > 0.01
    assert not set(masked) <= squares


def test_transcripts_are_deterministic(tmp_path):
    rng = np.random.default_rng(14)
    cfg = ProtocolConfig(n=7, b=2, z=1, d=2, field=FM)
    inputs = random_inputs(7, 2, rng)
    beh = strategy("all-shares", {6, 7})
    a = run_round(cfg, inputs, 5, 6, behavior=beh).transcript
    b = run_round(cfg, inputs, 5, 6, behavior=beh).transcript
    assert a.to_jsonl(True) == b.to_jsonl(True)
    assert a.to_jsonl(True) != run_round(cfg, inputs, 5, 7, behavior=beh).transcript.to_jsonl(True)
    path = tmp_path / "t.jsonl"
    a.dump_jsonl(path)
    first = json.loads(path.read_text().splitlines()[0])
    assert set(first) == {"seq", "from", "to", "step", "round_tag", "kind", "size_bytes"}


def test_transcript_send_and_accounting():
    t = Transcript(elem_bytes=8)
    t.send(1, 2, 1, "share", np.zeros(3))
    t.send(1, (1, 2, 3), 1, "vss-vote", None, 1)
    t.send(2, 2, 1, "share", np.zeros(3))  # self-delivery is not a message
    t.send(FEDERATOR, 3, 5, "query", np.zeros(2))
    assert len(t.messages) == 3
    rep = comm_accounting(t)
    assert rep.sent == {1: 24 + 8, FEDERATOR: 16}
    assert rep.received == {2: 24 + 4, 3: 4 + 16}
    assert rep.total(1) == 32 and rep.federator == 16
    assert rep.per_user([1, 2, 3]) == pytest.approx((32 + 28 + 20) / 3)
    assert [m.seq for m in t.observations(3)] == [1, 2]
    assert t.observation_vector(3) == [1, 0, 0]
    assert t.messages[1].record()["to"] == [2, 3]


def test_vss_bytes_scale_with_d():
    rng = np.random.default_rng(15)
    out = []
    for d in (10, 20):
        cfg = ProtocolConfig(n=7, b=2, z=1, d=d, field=FM)
        res = run_round(cfg, random_inputs(7, d, rng), 0, 0, keep_payloads=False)
        step1 = comm_accounting(res.transcript).by_step
        out.append(np.mean([step1[i][1] for i in range(1, 8)]))
    assert out[1] / out[0] == pytest.approx(2, rel=0.15)


def test_fit_exponent():
    xs = [2, 4, 8, 16]
    assert fit_exponent(xs, [3 * x**2 for x in xs]) == pytest.approx(2.0)


def test_elem_bytes_accounting():
    cfg = ProtocolConfig(n=5, b=1, z=1, d=3, field=FM)
    res = run_round(cfg, random_inputs(5, 3, np.random.default_rng(16)), 0, 0)
    shares = [m for m in res.transcript.messages if m.kind == "aggregate-share"]
    assert all(m.size_bytes == 3 * 8 for m in shares)
    assert Counter(m.receiver for m in shares) == {FEDERATOR: 5}
