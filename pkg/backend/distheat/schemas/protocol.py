from enum import Enum
from typing import Dict, List, Tuple

from pydantic import BaseModel, Field


class MessageKind(str, Enum):
    summary_upload = "SummaryUpload"
    estimate_broadcast = "EstimateBroadcast"
    iter_upload = "IterUpload"
    holdout_upload = "HoldoutUpload"


class FieldShape(str, Enum):
    scalar = "scalar"
    matrix = "matrix"  # p x p


# The closed set of payload fields per message kind. Nothing outside this schema
# can be encoded, so no message can carry an n_m x p block of raw samples.
PAYLOAD_SCHEMA: Dict[MessageKind, Tuple[Tuple[str, FieldShape], ...]] = {
    # kappa_m rides in the summary upload; there is no separate kappa message kind
    MessageKind.summary_upload: (
        ("n_m", FieldShape.scalar),
        ("kappa_m", FieldShape.scalar),
        ("omega_bar", FieldShape.matrix),
        ("v_hat", FieldShape.matrix),
    ),
    MessageKind.iter_upload: (("omega_bar", FieldShape.matrix),),
    MessageKind.estimate_broadcast: (("omega_tilde", FieldShape.matrix),),
    MessageKind.holdout_upload: (
        ("n_holdout", FieldShape.scalar),
        ("sigma_holdout", FieldShape.matrix),
    ),
}

COORDINATOR_ID = "coordinator"


def schema_scalar_count(kind: MessageKind, p: int) -> int:
    """Closed-form payload size in scalars"""
    return sum(
        1 if shape == FieldShape.scalar else p * p
        for _, shape in PAYLOAD_SCHEMA[MessageKind(kind)]
    )


class Message(BaseModel):
    kind: MessageKind
    sender: str
    receiver: str
    round: int = Field(..., ge=1)
    scalars: int = Field(..., ge=0)
    nbytes: int = Field(..., ge=0)
    millis: float = 0.0
    payload: bytes = Field(default=b"", exclude=True, repr=False)

    def ledger_row(self) -> Dict[str, object]:
        return {
            "round": self.round,
            "kind": self.kind.value,
            "sender": self.sender,
            "receiver": self.receiver,
            "scalars": self.scalars,
            "bytes": self.nbytes,
            "millis": self.millis,
        }


class LedgerRound(BaseModel):
    round: int
    messages: List[Message] = Field(default_factory=list)
    phase_millis: Dict[str, float] = Field(default_factory=dict)

    @property
    def total_scalars(self) -> int:
        return sum(msg.scalars for msg in self.messages)

    @property
    def total_bytes(self) -> int:
        return sum(msg.nbytes for msg in self.messages)


class RunLedger(BaseModel):
    rounds: List[LedgerRound] = Field(default_factory=list)

    def round_entry(self, t: int) -> LedgerRound:
        for entry in self.rounds:
            if entry.round == t:
                return entry
        entry = LedgerRound(round=t)
        self.rounds.append(entry)
        self.rounds.sort(key=lambda r: r.round)
        return entry

    def record(self, message: Message) -> None:
        self.round_entry(message.round).messages.append(message)

    @property
    def messages(self) -> List[Message]:
        return [msg for entry in self.rounds for msg in entry.messages]

    @property
    def total_scalars(self) -> int:
        return sum(entry.total_scalars for entry in self.rounds)

    @property
    def total_bytes(self) -> int:
        return sum(entry.total_bytes for entry in self.rounds)

    def rows(self) -> List[Dict[str, object]]:
        return [msg.ledger_row() for msg in self.messages]
