"""
In-process distributed runtime.

Site actors and the coordinator exchange typed messages whose payloads are
serialized field by field against a closed schema; the ledger records the
scalar count and serialized size of every message.
"""

import io
import math
import time
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import structlog
from joblib import Parallel, delayed

from distheat.core.errors import (
    DimensionError,
    DistHeatError,
    NonContractiveError,
    SiteFailure,
    ValidationError,
)
from distheat.models.estimate import HeatEstimate
from distheat.models.site import LocalSummary, SiteDataset, SiteState, site_sort_key
from distheat.schemas.config import RunConfig
from distheat.schemas.protocol import (
    COORDINATOR_ID,
    PAYLOAD_SCHEMA,
    FieldShape,
    Message,
    MessageKind,
    RunLedger,
)
from distheat.services import aggregate, site

logger = structlog.get_logger(__name__)

# Seed stream salts for site-local randomness
SPLIT_STREAM = 3
HOLDOUT_STREAM = 4
CV_STREAM = 5


def audit_payload(kind: MessageKind, fields: Mapping[str, object], p: int) -> Dict[str, np.ndarray]:
    """Reject anything outside the schema: unknown fields, wrong shapes, raw blocks"""
    schema = PAYLOAD_SCHEMA[MessageKind(kind)]
    names = [name for name, _ in schema]
    extra = set(fields) - set(names)
    missing = set(names) - set(fields)
    if extra or missing:
        raise ValidationError(
            f"{kind.value} payload mismatch: unexpected={sorted(extra)} missing={sorted(missing)}"
        )
    checked = {}
    for name, shape in schema:
        value = np.asarray(fields[name], dtype=np.float64)
        expected = () if shape == FieldShape.scalar else (p, p)
        if value.shape != expected:
            raise DimensionError(
                f"{kind.value}.{name} has shape {value.shape}, schema requires {expected}"
            )
        checked[name] = value
    return checked


def encode_payload(kind: MessageKind, fields: Mapping[str, object], p: int) -> bytes:
    """Serialize schema fields in schema order with np.save (no pickling)"""
    checked = audit_payload(kind, fields, p)
    buffer = io.BytesIO()
    for name, _ in PAYLOAD_SCHEMA[MessageKind(kind)]:
        np.save(buffer, checked[name], allow_pickle=False)
    return buffer.getvalue()


def decode_payload(kind: MessageKind, payload: bytes) -> Dict[str, np.ndarray]:
    buffer = io.BytesIO(payload)
    return {
        name: np.load(buffer, allow_pickle=False)
        for name, _ in PAYLOAD_SCHEMA[MessageKind(kind)]
    }


def make_message(
    kind: MessageKind,
    sender: str,
    receiver: str,
    round: int,
    fields: Mapping[str, object],
    p: int,
) -> Message:
    payload = encode_payload(kind, fields, p)
    scalars = sum(int(np.asarray(fields[name]).size) for name, _ in PAYLOAD_SCHEMA[kind])
    return Message(
        kind=kind,
        sender=sender,
        receiver=receiver,
        round=round,
        scalars=scalars,
        nbytes=len(payload),
        payload=payload,
    )


class SiteActor:
    """Owns one site's raw rows; emits only schema messages"""

    def __init__(self, dataset: SiteDataset, config: RunConfig, index: int, rounds: int):
        self.dataset = dataset
        self.config = config
        self.index = index
        self.rounds = rounds
        self.state: Optional[SiteState] = None
        self.current: Optional[np.ndarray] = None
        self.millis = 0.0
        self.log = logger.bind(site_id=dataset.site_id, site_index=index)

    @property
    def site_id(self) -> str:
        return self.dataset.site_id

    def _seed(self, stream: int) -> List[int]:
        return [self.config.seed, stream, self.index]

    def _timed(self, fn, *args):
        if not self.config.record_timing:
            return fn(*args)
        start = time.perf_counter()
        try:
            return fn(*args)
        finally:
            self.millis = (time.perf_counter() - start) * 1000.0

    def local_round(self) -> List[Message]:
        try:
            return self._timed(self._local_round)
        except Exception as exc:
            raise SiteFailure(self.site_id, exc) from exc

    def _local_round(self) -> List[Message]:
        cfg = self.config
        dataset = self.dataset
        messages = []

        if cfg.level_scaling.enabled:
            dataset, sigma_hold, n_hold = site.holdout_split(
                dataset, cfg.level_scaling.holdout_fraction, self._seed(HOLDOUT_STREAM)
            )
            messages.append(
                make_message(
                    MessageKind.holdout_upload,
                    self.site_id,
                    COORDINATOR_ID,
                    1,
                    {"n_holdout": n_hold, "sigma_holdout": sigma_hold},
                    dataset.p,
                )
            )

        lambdas = site.site_lambdas(dataset, cfg.lambda_rule, cfg.lasso, self._seed(CV_STREAM))
        state = site.fit_nodewise(dataset, lambdas, cfg.lasso)
        site.debias(state)
        site.estimate_variances(state)
        if self.rounds > 1:
            site.split_and_refit(
                dataset, state, cfg.kappa, lambdas, cfg.lasso, self._seed(SPLIT_STREAM)
            )
        self.state = state
        for warning in state.warnings:
            self.log.warning("Site numerical warning", detail=warning)

        summary = site.summarize(state)
        messages.insert(
            0,
            make_message(
                MessageKind.summary_upload,
                self.site_id,
                COORDINATOR_ID,
                1,
                {
                    "n_m": summary.n_m,
                    "kappa_m": summary.kappa_m,
                    "omega_bar": summary.omega_bar,
                    "v_hat": summary.v_hat,
                },
                dataset.p,
            ),
        )
        return messages

    def receive(self, message: Message) -> None:
        fields = decode_payload(message.kind, message.payload)
        self.current = fields["omega_tilde"]

    def iterate(self, t: int) -> Message:
        try:
            return self._timed(self._iterate, t)
        except Exception as exc:
            raise SiteFailure(self.site_id, exc) from exc

    def _iterate(self, t: int) -> Message:
        if self.state is None or self.current is None:
            raise DistHeatError("site has no broadcast estimate to refine")
        bar = site.iterate_debias(self.state, self.current)
        return make_message(
            MessageKind.iter_upload,
            self.site_id,
            COORDINATOR_ID,
            t,
            {"omega_bar": bar},
            self.state.p,
        )

    def local_estimate(self) -> np.ndarray:
        """Symmetrized node-wise estimate; simulation harness access only"""
        om = self.state.omega_hat
        return (om + om.T) / 2.0


class Coordinator:
    """Aggregates uploads and broadcasts integrated estimates"""

    def __init__(self, config: RunConfig, p: int):
        self.config = config
        self.p = p
        self.aggregator = aggregate.HeatAggregator(config.shrinkage, config.level_scaling)
        self.summaries: List[LocalSummary] = []
        self.estimates: List[HeatEstimate] = []

    def receive_round1(self, messages: Sequence[Message]) -> None:
        for message in messages:
            fields = decode_payload(message.kind, message.payload)
            if message.kind == MessageKind.summary_upload:
                self.summaries.append(
                    LocalSummary(
                        site_id=message.sender,
                        n_m=int(fields["n_m"]),
                        omega_bar=fields["omega_bar"],
                        v_hat=fields["v_hat"],
                        kappa_m=float(fields["kappa_m"]),
                    )
                )
            elif message.kind == MessageKind.holdout_upload:
                self.aggregator.add_holdout(
                    message.sender, int(fields["n_holdout"]), fields["sigma_holdout"]
                )
            else:
                raise ValidationError(f"unexpected {message.kind.value} in round 1")

    def aggregate_round1(self) -> HeatEstimate:
        estimate = self.aggregator.round1(self.summaries)
        self.estimates.append(estimate)
        return estimate

    def aggregate_iteration(self, messages: Sequence[Message]) -> HeatEstimate:
        uploads = []
        for message in messages:
            if message.kind != MessageKind.iter_upload:
                raise ValidationError(f"unexpected {message.kind.value} during iteration")
            uploads.append((message.sender, decode_payload(message.kind, message.payload)["omega_bar"]))
        estimate = self.aggregator.iterate(self.estimates[-1], uploads, self.summaries)
        self.estimates.append(estimate)
        return estimate

    def broadcasts(self, estimate: HeatEstimate) -> List[Message]:
        return [
            make_message(
                MessageKind.estimate_broadcast,
                COORDINATOR_ID,
                site_id,
                estimate.round,
                {"omega_tilde": estimate.omega_tildes[m]},
                self.p,
            )
            for m, site_id in enumerate(estimate.site_ids)
        ]


class DistributedRun:
    """Synchronous rounds between site actors and one coordinator"""

    def __init__(self, datasets: Sequence[SiteDataset], config: Optional[RunConfig] = None, rounds: int = 1):
        if len(datasets) == 0:
            raise ValidationError("at least one site dataset is required")
        if rounds < 1:
            raise ValidationError("rounds must be >= 1")
        ordered = sorted(datasets, key=lambda d: site_sort_key(d.site_id))
        ids = [d.site_id for d in ordered]
        if len(set(ids)) != len(ids):
            raise ValidationError("site ids must be unique")
        p = ordered[0].p
        for d in ordered:
            if d.p != p:
                raise DimensionError(f"site {d.site_id} has p={d.p}, expected {p}")

        self.config = config or RunConfig()
        self.rounds = rounds
        self.p = p
        self.actors = [SiteActor(d, self.config, i, rounds) for i, d in enumerate(ordered)]
        self.coordinator = Coordinator(self.config, p)
        self.ledger = RunLedger()

    def _parallel(self, fn):
        return Parallel(n_jobs=self.config.threads, prefer="threads")(
            delayed(fn)(actor) for actor in self.actors
        )

    def _record(self, messages: Sequence[Message], t: int) -> None:
        for message in messages:
            if self.config.record_timing and message.sender != COORDINATOR_ID:
                actor = next(a for a in self.actors if a.site_id == message.sender)
                message.millis = actor.millis
            self.ledger.record(message)
        self.ledger.round_entry(t)

    def _timed_phase(self, t: int, phase: str, fn):
        if not self.config.record_timing:
            return fn()
        start = time.perf_counter()
        result = fn()
        self.ledger.round_entry(t).phase_millis[phase] = (time.perf_counter() - start) * 1000.0
        return result

    def _broadcast(self, estimate: HeatEstimate) -> None:
        messages = self.coordinator.broadcasts(estimate)
        by_site = {actor.site_id: actor for actor in self.actors}
        for message in messages:
            by_site[message.receiver].receive(message)
        self._record(messages, estimate.round)

    def execute(self) -> List[HeatEstimate]:
        uploads = self._timed_phase(1, "sites", lambda: self._parallel(lambda a: a.local_round()))
        round1 = [msg for batch in uploads for msg in batch]
        self._record(round1, 1)
        self.coordinator.receive_round1(round1)
        estimate = self._timed_phase(1, "coordinator", self.coordinator.aggregate_round1)
        self._broadcast(estimate)
        logger.info("Round complete", round=1, M=len(self.actors), p=self.p)

        for t in range(2, self.rounds + 1):
            messages = self._timed_phase(t, "sites", lambda: self._parallel(lambda a: a.iterate(t)))
            self._record(messages, t)
            estimate = self._timed_phase(
                t, "coordinator", lambda: self.coordinator.aggregate_iteration(messages)
            )
            self._broadcast(estimate)
            logger.info("Round complete", round=t, M=len(self.actors), p=self.p)

        return list(self.coordinator.estimates)

    def local_estimates(self) -> np.ndarray:
        return np.stack([actor.local_estimate() for actor in self.actors])


def run_iteheat(
    datasets: Sequence[SiteDataset], T: int, config: Optional[RunConfig] = None
) -> Tuple[List[HeatEstimate], RunLedger]:
    run = DistributedRun(datasets, config, rounds=T)
    estimates = run.execute()
    return estimates, run.ledger


def run_heat(
    datasets: Sequence[SiteDataset], config: Optional[RunConfig] = None
) -> Tuple[HeatEstimate, RunLedger]:
    estimates, ledger = run_iteheat(datasets, 1, config)
    return estimates[0], ledger


def ledger_closed_form(M: int, p: int, T: int, holdout: bool = False) -> int:
    """Scalars exchanged by a T-round run over M sites"""
    total = M * (2 * p * p + 2) + M * p * p + (T - 1) * 2 * M * p * p
    if holdout:
        total += M * (p * p + 1)
    return total


def suggest_rounds(M: int, p: int, n: float, N: float, s0_hint: int) -> int:
    """Round count after which the iteration-dependent error term is negligible"""
    if M < 1 or p < 2 or n <= 0 or N <= 0 or s0_hint < 0:
        raise ValidationError("suggest_rounds needs M >= 1, p >= 2, n > 0, N > 0, s0 >= 0")
    log_p = math.log(p)
    contraction = s0_hint * math.sqrt(log_p / n)
    if contraction >= 1.0:
        raise NonContractiveError(contraction)
    if s0_hint == 0:
        return 2

    numerator = math.sqrt(M + log_p) + s0_hint * math.sqrt(M / n) * log_p
    denominator = math.sqrt(log_p) + (M / math.sqrt(N)) * log_p
    ratio = math.log(numerator / denominator) / math.log(math.sqrt(n / log_p) / s0_hint)
    return max(2, math.ceil(1.0 + ratio))
