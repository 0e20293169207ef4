"""Endpoint derivation for a single line of therapy under an estimand strategy.

Time origin is always line_start; durations are in months (days / 30.4375).
Responder classification treats an Unknown or absent best response as
no usable assessment.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .cohort import LineRecord, days_to_months
from .errors import DataError
from .plan import Endpoint, IntercurrentStrategy

_INF = float("inf")


@dataclass(frozen=True)
class TimeToEvent:
    time_months: float
    event: bool

    def __post_init__(self):
        if not (self.time_months >= 0 and self.time_months < _INF):
            raise DataError(f"time_months must be finite and >= 0, got {self.time_months}")


class ResponseStatus(enum.Enum):
    RESPONDER = "responder"
    NON_RESPONDER = "non_responder"
    UNEVALUABLE = "unevaluable"


def _months_from_start(line: LineRecord, date_days: int) -> float:
    delta = date_days - line.line_start
    if delta < 0:
        raise DataError(
            f"event precedes line_start for patient {line.patient_id} "
            f"line {line.line_number}"
        )
    return days_to_months(delta)


def derive_response(line: LineRecord, endpoint: Endpoint) -> ResponseStatus:
    """Non-responder rule: response must be recorded strictly before new
    therapy and before progression; otherwise the patient counts as a
    non-responder. No usable assessment at all -> unevaluable.
    """
    if endpoint is Endpoint.CR:
        qualifying = ("CR",)
    elif endpoint is Endpoint.ORR:
        qualifying = ("CR", "PR")
    else:
        raise ValueError(f"derive_response requires a binary endpoint, got {endpoint}")

    if line.best_response is None or line.best_response == "UNK":
        return ResponseStatus.UNEVALUABLE
    if line.best_response not in qualifying:
        return ResponseStatus.NON_RESPONDER
    # Qualifying label; require the assessment to precede new therapy and
    # progression (strictly), when those dates exist.
    if line.response_date is None:
        if line.new_therapy_date is None and line.progression_date is None:
            return ResponseStatus.RESPONDER
        return ResponseStatus.NON_RESPONDER
    if line.new_therapy_date is not None and line.response_date >= line.new_therapy_date:
        return ResponseStatus.NON_RESPONDER
    if line.progression_date is not None and line.response_date >= line.progression_date:
        return ResponseStatus.NON_RESPONDER
    return ResponseStatus.RESPONDER


def derive_pfs(line: LineRecord, strategy: IntercurrentStrategy) -> TimeToEvent:
    """Progression-free survival under the hypothetical or composite strategy.

    Ties between new therapy and progression/death on the same day resolve
    to the event (censoring applies only when new therapy is strictly first).
    """
    if strategy not in (
        IntercurrentStrategy.HYPOTHETICAL_CENSOR,
        IntercurrentStrategy.COMPOSITE_EVENT,
    ):
        raise ValueError(f"strategy {strategy} not legal for PFS")

    prog = line.progression_date if line.progression_date is not None else None
    death = line.death_date if line.death_date is not None else None
    nt = line.new_therapy_date

    event_date = min((d for d in (prog, death) if d is not None), default=None)

    if strategy is IntercurrentStrategy.HYPOTHETICAL_CENSOR:
        if nt is not None and (event_date is None or nt < event_date):
            return TimeToEvent(_months_from_start(line, nt), False)
        if event_date is not None:
            return TimeToEvent(_months_from_start(line, event_date), True)
        return TimeToEvent(_months_from_start(line, line.last_contact_date), False)

    # Composite: new therapy counts as an event.
    candidates = [d for d in (prog, death, nt) if d is not None]
    if candidates:
        return TimeToEvent(_months_from_start(line, min(candidates)), True)
    return TimeToEvent(_months_from_start(line, line.last_contact_date), False)


def derive_os(line: LineRecord) -> TimeToEvent:
    """All-cause mortality under the treatment-policy strategy (new therapy ignored)."""
    if line.death_date is not None:
        return TimeToEvent(_months_from_start(line, line.death_date), True)
    return TimeToEvent(_months_from_start(line, line.last_contact_date), False)


def apply_admin_censor(tte: TimeToEvent, cutoff_months: float) -> TimeToEvent:
    """Administrative censoring; an event exactly at the cutoff is kept."""
    if cutoff_months <= 0:
        raise ValueError("cutoff_months must be positive")
    if tte.time_months > cutoff_months:
        return TimeToEvent(cutoff_months, False)
    return tte


def derive_tte(line: LineRecord, endpoint: Endpoint,
               strategy: IntercurrentStrategy) -> TimeToEvent:
    if endpoint is Endpoint.OS:
        return derive_os(line)
    if endpoint is Endpoint.PFS:
        return derive_pfs(line, strategy)
    raise ValueError(f"{endpoint} is not a time-to-event endpoint")
