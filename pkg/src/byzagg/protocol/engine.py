"""The eight-step private, Byzantine-resilient NNM aggregation round.

Parties are clients ``1..n`` and the federator ``"F"``.  The simulator is
lockstep: each step runs every party's local computation and delivers its
messages through a :class:`Transcript` before the next step starts.

Clients share a :class:`SharedRandomness` source; the federator only holds
its own private generator, so it can never derive pads, masks or
re-randomizers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field
from itertools import combinations

import numpy as np

from .. import robust
from ..errors import ConfigInvalid, DecodingFailure, OverflowSuspected, ProtocolAbort
from ..field import PrimeField, rs_decode_batch
from ..quantizer import QuantConfig, dequantize, validate_field_size
from ..sharing import (
    SharedRandomness,
    bivariate_eval,
    deal_bivariate,
    evaluate_shares,
    make_pad,
    mask_polynomial,
    rerandomizer_values,
    row_polynomial,
    row_polynomials,
    shamir_polynomial,
    verify_shares,
)
from .transcript import FEDERATOR, Transcript, comm_accounting

log = logging.getLogger(__name__)

RULES = ("krum", "multikrum")


@dataclass(frozen=True)
class ProtocolConfig:
    n: int
    b: int
    z: int
    d: int
    field: PrimeField
    rule: str = "krum"
    nnm: bool = True
    quant: QuantConfig | None = None
    restart_on_vss_failure: bool = False
    private_final_aggregation: bool = False
    rerandomize: bool = True  # test hook: False sets every re-randomizer to zero

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        check_sizes(self.n, self.b, self.z, self.rule)
        if self.d < 1:
            raise ConfigInvalid("model dimension must be positive")
        if self.quant is not None:
            if self.quant.field != self.field:
                raise ConfigInvalid("quantizer and protocol use different fields")
            validate_field_size(self.quant, self.n, self.b, self.d)


def check_sizes(n: int, b: int, z: int, rule: str) -> None:
    if rule not in RULES:
        raise ConfigInvalid(f"rule must be one of {RULES}, got {rule!r}")
    if z < 1 or b < 0:
        raise ConfigInvalid("need z >= 1 and b >= 0")
    if not n > max(3 * b, 2 * (z + b)):
        raise ConfigInvalid(f"need n > max(3b, 2(z+b)); got n={n}, b={b}, z={z}")
    if rule == "krum" and n < b + 3:
        raise ConfigInvalid(f"Krum needs n >= b + 3 (n={n}, b={b})")
    if rule == "multikrum" and n < 2 * b + 4:
        raise ConfigInvalid(f"Multi-Krum needs n >= 2b + 4 (n={n}, b={b})")


@dataclass(frozen=True)
class ByzantineBehavior:
    """What the Byzantine clients do with protocol messages.

    ``dealing`` is ``"honest"``, ``"inconsistent"`` (independent random rows
    to every other client) or ``"victim"`` (one wrong row to the lowest honest
    id, repaired during the complaint round).  ``corruption`` picks the error
    pattern for corrupted values: ``"random"`` field elements or ``"shift"``
    (add a fixed nonzero offset).
    """

    clients: frozenset = frozenset()
    dealing: str = "honest"
    vss_lies: bool = False
    distance_shares: bool = False
    responses: bool = False
    aggregate_shares: bool = False
    corruption: str = "random"

    def is_byzantine(self, client: int) -> bool:
        return client in self.clients


HONEST = ByzantineBehavior()


@dataclass
class RoundResult:
    aggregate_field: np.ndarray
    aggregate_int: np.ndarray
    g_sigma: np.ndarray | None
    selected: list[int]
    active: list[int]
    excluded: list[int]
    b_eff: int
    distances: np.ndarray
    mixture_distances: np.ndarray | None
    neighbor_sets: list[list[int]] | None
    transcript: Transcript
    vss_restarts: int = 0
    bytes: dict = dc_field(default_factory=dict)

    @property
    def normalizer(self) -> int:
        n_active = len(self.active)
        return len(self.selected) * ((n_active - self.b_eff) if self.mixture_distances is not None else 1)


class PrivateAggregationRound:
    """One execution of the protocol over given (already quantized) inputs.

    ``inputs[i - 1]`` is the field vector client ``i`` deals, honest or not.
    """

    def __init__(
        self,
        cfg: ProtocolConfig,
        inputs,
        shared_seed: int,
        seed: int,
        round_id: int = 0,
        behavior: ByzantineBehavior = HONEST,
        keep_payloads: bool = True,
    ):
        if len(inputs) != cfg.n:
            raise ConfigInvalid(f"expected {cfg.n} inputs, got {len(inputs)}")
        self.cfg = cfg
        self.F = cfg.field
        self.inputs = [self.F.array(np.atleast_1d(x)) for x in inputs]
        if any(x.shape != (cfg.d,) for x in self.inputs):
            raise ConfigInvalid(f"inputs must have dimension {cfg.d}")
        self.sr = SharedRandomness(shared_seed)
        self.seed = seed
        self.round_id = round_id
        self.behavior = behavior
        self.transcript = Transcript(self.F.elem_bytes, keep_payloads)
        self._fed_rng = self._rng(0)
        self._adv_rng = self._rng(-1)
        self.attempt = 0

        self.active: list[int] = list(range(1, cfg.n + 1))
        self.excluded: list[int] = []
        self.b_eff = cfg.b
        self.gradient_shares: dict[int, np.ndarray] = {}
        self.mixture_shares: dict[int, np.ndarray] = {}
        self.distances = None
        self.mixture_distances = None
        self.neighbors = None
        self.selection = None

    # helpers ----------------------------------------------------------------

    def _rng(self, party: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, self.round_id, party + 1]))

    def _client_rng(self, client: int, purpose: int) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence([self.seed, self.round_id, client + 1, purpose, self.attempt])
        )

    def _corrupt(self, value: np.ndarray) -> np.ndarray:
        if self.behavior.corruption == "shift":
            return (value + 1) % self.F.q
        return self.F.random(self._adv_rng, np.shape(value))

    def _decode(self, step: str, values: np.ndarray, degree: int) -> np.ndarray:
        """RS-decode rows of ``values`` (rows x active clients); abort on failure."""
        try:
            return rs_decode_batch(self.F, self.active, values, degree, self.b_eff)
        except DecodingFailure as exc:
            raise ProtocolAbort(step, str(exc)) from exc

    def _unembed_distances(self, step: str, consts: np.ndarray) -> np.ndarray:
        ints = self.F.unembed_signed(consts)
        if any(int(v) < 0 for v in ints):
            raise OverflowSuspected(f"{step}: decoded distance wrapped around the field")
        return ints

    # step 1 -----------------------------------------------------------------

    def step1_share_gradients(self) -> None:
        """Verifiable sharing of every gradient among all clients."""
        cfg, F = self.cfg, self.F
        clients = list(range(1, cfg.n + 1))
        liars = self.behavior.clients if self.behavior.vss_lies else ()
        outcomes = {}
        for k in clients:
            coeffs = deal_bivariate(F, self.inputs[k - 1], cfg.z, self._client_rng(k, 1))
            rows = row_polynomials(F, coeffs, clients)
            if self.behavior.is_byzantine(k) and self.behavior.dealing == "inconsistent":
                for i in clients:
                    if i != k:
                        rows[i] = F.random(self._adv_rng, rows[i].shape)
            elif self.behavior.is_byzantine(k) and self.behavior.dealing == "victim":
                victim = min(i for i in clients if not self.behavior.is_byzantine(i))
                rows[victim] = F.random(self._adv_rng, rows[victim].shape)
            outcome = verify_shares(
                F,
                k,
                rows,
                cfg.b,
                answer=lambda i, j, c=coeffs: bivariate_eval(F, c, i, j),
                publish_row=lambda i, c=coeffs: row_polynomial(F, c, i),
                liars=liars,
                rng=self._adv_rng,
            )
            self.transcript.extend(1, f"step1/dealer{k}", outcome.messages)
            outcomes[k] = outcome

        excluded = [k for k in clients if not outcomes[k].accepted]
        if len(excluded) > cfg.b:
            raise ProtocolAbort("step1", f"{len(excluded)} dealers failed verification (b={cfg.b})")
        self.excluded = excluded
        self.active = [k for k in clients if k not in excluded]
        self.b_eff = cfg.b - len(excluded)
        if excluded:
            log.info("excluded dealers %s; %d clients remain", excluded, len(self.active))
        self.gradient_shares = {
            i: np.array([outcomes[k].share(i) for k in self.active], dtype=object) for i in self.active
        }

    # steps 2 and 8 (distance part) -----------------------------------------------

    def _distance_round(self, step: int, held: dict[int, np.ndarray], tag: str) -> np.ndarray:
        F, cfg = self.F, self.cfg
        n_act = len(self.active)
        pairs = list(combinations(range(n_act), 2))
        ia = [p[0] for p in pairs]
        ib = [p[1] for p in pairs]
        received = []
        for i in self.active:
            shares = held[i]
            diff = shares[ia] - shares[ib]
            value = (diff * diff).sum(axis=1) % F.q
            if cfg.rerandomize:
                value = (value + rerandomizer_values(F, cfg.z, self.sr, tag, len(pairs), i, self.round_id, self.attempt)) % F.q
            if self.behavior.is_byzantine(i) and self.behavior.distance_shares:
                value = self._corrupt(value)
            self.transcript.send(i, FEDERATOR, step, "distance-shares", value, len(pairs))
            received.append(value)
        consts = self._decode(f"step{step}", np.array(received, dtype=object).T, 2 * cfg.z)[:, 0]
        ints = self._unembed_distances(f"step{step}", consts)
        dist = np.zeros((n_act, n_act), dtype=object)
        for (a, b), v in zip(pairs, ints):
            dist[a, b] = dist[b, a] = int(v)
        return dist

    def step2_distance_shares(self) -> None:
        self.distances = self._distance_round(2, self.gradient_shares, "rerand-distance")

    def step3_reconstruct_and_select(self) -> list[list[int]]:
        """Neighbor sets from the decoded distances (decoding happens on receipt)."""
        sets = robust.neighbor_sets(self.distances, self.b_eff)
        self.neighbors = [[self.active[k - 1] for k in s] for s in sets]
        return self.neighbors

    # steps 4-7 ----------------------------------------------------------------

    def _sum_retrieval(self, step: int, indicator: np.ndarray, stored: dict[int, np.ndarray], pad, mask_tag: str, idx: int):
        """Private retrieval of sum_l indicator_l * (stored_l + pad).

        Queries are degree-z sharings of the indicator; responses carry a
        shared zero-constant degree-2z mask so only the constant is decodable.
        """
        F, cfg = self.F, self.cfg
        qcoef = shamir_polynomial(F, indicator, cfg.z, self._fed_rng)
        queries = evaluate_shares(F, qcoef, self.active)
        mask = mask_polynomial(F, cfg.z, cfg.d, self.sr, mask_tag, self.round_id, self.attempt, idx)
        mask_values = evaluate_shares(F, mask, self.active)
        responses = []
        for pos, i in enumerate(self.active):
            self.transcript.send(FEDERATOR, i, step, "query", queries[pos], round_tag=f"step{step}/{idx}")
        for pos, i in enumerate(self.active):
            data = stored[i] if pad is None else (stored[i] + pad) % F.q
            resp = (queries[pos].dot(data) + mask_values[pos]) % F.q
            if self.behavior.is_byzantine(i) and self.behavior.responses:
                resp = self._corrupt(resp)
            self.transcript.send(i, FEDERATOR, step, "response", resp, round_tag=f"step{step}/{idx}")
            responses.append(resp)
        return self._decode(f"step{step}", np.array(responses, dtype=object).T, 2 * cfg.z)[:, 0]

    def steps4_to_7(self) -> None:
        """Padded sum retrieval, re-encoding and unpadding for every client j."""
        F, cfg = self.F, self.cfg
        n_act = len(self.active)
        scale = n_act - self.b_eff
        mixtures = {i: [] for i in self.active}
        for jpos, j in enumerate(self.active):
            pad = self.step4_pad(j)
            padded_sum = self.step5_private_sum_retrieval(jpos, j, pad)
            shares = self.step6_reencode_and_share(j, padded_sum)
            for pos, i in enumerate(self.active):
                mixtures[i].append(self.step7_unpad(shares[pos], pad, scale))
        self.mixture_shares = {i: np.array(v, dtype=object) for i, v in mixtures.items()}

    def step4_pad(self, j: int) -> np.ndarray:
        # all clients derive the same m_j locally; nothing is sent
        return make_pad(self.F, self.cfg.d, self.sr, j, self.round_id, self.attempt)

    def step5_private_sum_retrieval(self, jpos: int, j: int, pad: np.ndarray) -> np.ndarray:
        members = {self.active.index(k) for k in self.neighbors[jpos]}
        indicator = np.array([1 if p in members else 0 for p in range(len(self.active))], dtype=object)
        return self._sum_retrieval(5, indicator, self.gradient_shares, pad, "response-mask", j)

    def step6_reencode_and_share(self, j: int, padded_sum: np.ndarray) -> np.ndarray:
        coeffs = shamir_polynomial(self.F, padded_sum, self.cfg.z, self._fed_rng)
        shares = evaluate_shares(self.F, coeffs, self.active)
        for pos, i in enumerate(self.active):
            self.transcript.send(FEDERATOR, i, 6, "mixture-share", shares[pos], round_tag=f"step6/{j}")
        return shares

    def step7_unpad(self, share: np.ndarray, pad: np.ndarray, scale: int) -> np.ndarray:
        return (share - scale * pad) % self.F.q

    # step 8 -------------------------------------------------------------------

    def step8_robust_aggregate(self) -> RoundResult:
        F, cfg = self.F, self.cfg
        if cfg.nnm:
            self.mixture_distances = self._distance_round(8, self.mixture_shares, "rerand-mixture-distance")
            held, dist = self.mixture_shares, self.mixture_distances
        else:
            held, dist = self.gradient_shares, self.distances
        sel = robust.select(cfg.rule, dist, self.b_eff)
        positions = [s - 1 for s in sel.selected]
        self.selection = [self.active[p] for p in positions]

        if cfg.private_final_aggregation:
            indicator = np.array([1 if p in positions else 0 for p in range(len(self.active))], dtype=object)
            total = self._sum_retrieval(8, indicator, held, None, "final-mask", 0)
        else:
            self.transcript.send(FEDERATOR, tuple(self.active), 8, "selection", list(self.selection), len(self.selection))
            sums = []
            for i in self.active:
                value = held[i][positions].sum(axis=0) % F.q
                if self.behavior.is_byzantine(i) and self.behavior.aggregate_shares:
                    value = self._corrupt(value)
                self.transcript.send(i, FEDERATOR, 8, "aggregate-share", value)
                sums.append(value)
            total = self._decode("step8", np.array(sums, dtype=object).T, cfg.z)[:, 0]

        n_act = len(self.active)
        terms = len(positions) * ((n_act - self.b_eff) if cfg.nnm else 1)
        g_sigma = None
        if cfg.quant is not None:
            g_sigma = dequantize(total, cfg.quant, terms=terms) / terms
        report = comm_accounting(self.transcript)
        return RoundResult(
            aggregate_field=total,
            aggregate_int=F.unembed_signed(total),
            g_sigma=g_sigma,
            selected=list(self.selection),
            active=list(self.active),
            excluded=list(self.excluded),
            b_eff=self.b_eff,
            distances=self.distances,
            mixture_distances=self.mixture_distances,
            neighbor_sets=self.neighbors,
            transcript=self.transcript,
            vss_restarts=self.attempt,
            bytes={"sent": report.sent, "received": report.received},
        )

    # driver ---------------------------------------------------------------------

    def run(self) -> RoundResult:
        self.step1_share_gradients()
        if self.excluded and self.cfg.restart_on_vss_failure:
            # one restart with fresh randomness; persistent failures fall back to exclusion
            self.attempt = 1
            self.step1_share_gradients()
        check_sizes(len(self.active), self.b_eff, self.cfg.z, self.cfg.rule)
        self.step2_distance_shares()
        if self.cfg.nnm:
            self.step3_reconstruct_and_select()
            self.steps4_to_7()
        return self.step8_robust_aggregate()


def run_round(cfg: ProtocolConfig, inputs, shared_seed: int, seed: int, **kwargs) -> RoundResult:
    return PrivateAggregationRound(cfg, inputs, shared_seed, seed, **kwargs).run()


def plaintext_round(cfg: ProtocolConfig, inputs, active=None, b_eff: int | None = None):
    """The oracle: R o NNM on the unembedded inputs of the active clients.

    Returns ``(sum_field, selected_ids, normalizer)``.
    """
    F = cfg.field
    active = list(range(1, cfg.n + 1)) if active is None else list(active)
    b = cfg.b if b_eff is None else b_eff
    ints = np.array([F.unembed_signed(F.array(np.atleast_1d(inputs[i - 1]))) for i in active], dtype=object)
    peak = max((abs(int(v)) for v in ints.ravel()), default=0)
    if ints.shape[1] * (2 * len(active) * peak) ** 2 < 2**62:
        ints = ints.astype(np.int64)  # exact and much faster than Python ints
    total, sel, _ = robust.compose(ints, b, cfg.rule, cfg.nnm)
    selected = [active[j - 1] for j in sel.selected]
    norm = len(selected) * ((len(active) - b) if cfg.nnm else 1)
    return F.array(total), selected, norm
