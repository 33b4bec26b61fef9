"""Label-synchronous alignment engine.

Per segment: a forward scorer scans the transcript under teacher-forcing
until its eos prediction fires (final token), a backward scorer scans back
from there until eos fires again (initial token), and the median of the
backward scorer's reference-token posteriors gates acceptance. A queue of
candidate start positions couples consecutive segments: accepted segments
reset it to the position after their final token, rejected candidates
append theirs, so misfits (noise, laughter) are skipped without losing
track of the transcript.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

from .core import (
    LsalignError,
    Segment,
    Span,
    TokenSequence,
    ValidationError,
    Vocabulary,
    detokenize,
    validate_recording_segments,
)
from .scorer import Direction, PosteriorRow, PosteriorScorer, ScorerRequest

EosRule = Callable[[PosteriorRow], bool]

REASON_BELOW_THRESHOLD = "below-threshold"
REASON_TRANSCRIPT_EXHAUSTED = "transcript-exhausted"
REASON_QUEUE_OVERFLOW = "queue-overflow"


class QueueOverflow(LsalignError):
    """Start-position queue exceeded its cap; carries the partial result."""

    def __init__(self, message: str, result: AlignmentResult) -> None:
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class AlignerConfig:
    theta: float = 0.7
    max_token_rate: float = 25.0
    eos_rule: str = "argmax"  # "argmax" | "threshold"
    p_eos_min: float = 0.5  # only used by the threshold rule
    dedup_queue: bool = True
    queue_cap: int = 64

    def __post_init__(self) -> None:
        if not 0.0 <= self.theta <= 1.0:
            raise ValidationError(f"theta must be in [0, 1], got {self.theta}")
        if self.max_token_rate <= 0:
            raise ValidationError(f"max_token_rate must be positive, got {self.max_token_rate}")
        if self.eos_rule not in ("argmax", "threshold"):
            raise ValidationError(f"unknown eos rule: {self.eos_rule!r}")
        if not 0.0 <= self.p_eos_min <= 1.0:
            raise ValidationError(f"p_eos_min must be in [0, 1], got {self.p_eos_min}")
        if self.queue_cap < 1:
            raise ValidationError(f"queue_cap must be >= 1, got {self.queue_cap}")


@dataclass(frozen=True)
class CandidateResult:
    """One evaluated start position: spans, posteriors, confidence.

    An empty-span candidate (backward eos fired before any token was
    consumed) has no posteriors and confidence 0; it is always rejected.
    """

    l_start: int
    l_e: int
    l_s: int
    capped: bool
    backward_posteriors: tuple[float, ...]
    confidence: float

    def __post_init__(self) -> None:
        if not (self.l_start <= self.l_e and self.l_s <= self.l_e):
            raise ValidationError(
                f"inconsistent candidate positions l_start={self.l_start} "
                f"l_s={self.l_s} l_e={self.l_e}"
            )
        n = len(self.backward_posteriors)
        if n and n != self.l_e - self.l_s + 1:
            raise ValidationError(
                f"candidate has {n} posteriors for span [{self.l_s}, {self.l_e}]"
            )

    @property
    def empty_span(self) -> bool:
        return not self.backward_posteriors


@dataclass(frozen=True)
class AlignedPair:
    segment_id: str
    span: Span
    confidence: float
    text: str


@dataclass(frozen=True)
class RejectedSegment:
    segment_id: str
    candidates: tuple[CandidateResult, ...]
    reason: str


@dataclass(frozen=True)
class AlignmentResult:
    recording_id: str
    accepted: tuple[AlignedPair, ...]
    rejected: tuple[RejectedSegment, ...]
    final_queue: tuple[int, ...]
    trace: tuple[str, ...]
    partial: bool = False


def make_eos_rule(config: AlignerConfig) -> EosRule:
    if config.eos_rule == "argmax":
        return lambda row: row.eos_is_argmax()
    p_min = config.p_eos_min
    return lambda row: row.eos_mass >= p_min


def scan_cap(duration_sec: float, max_token_rate: float) -> int:
    """Token budget for one scan; bounds runaway scans when eos never fires."""
    return max(1, math.ceil(duration_sec * max_token_rate))


def confidence(backward_posteriors: Sequence[float]) -> float:
    """Median of the backward scorer's reference-token posteriors.

    Even count averages the two central values; an empty list (empty-span
    candidate) is defined as 0.
    """
    if not backward_posteriors:
        return 0.0
    ordered = sorted(backward_posteriors)
    n = len(ordered)
    mid = n // 2
    if n % 2 == 1:
        return ordered[mid]
    return (ordered[mid - 1] + ordered[mid]) / 2.0


def estimate_final(
    fwd: PosteriorScorer,
    segment: Segment,
    l_start: int,
    transcript: TokenSequence,
    cap: int,
    eos_rule: EosRule,
) -> tuple[int, bool]:
    """Scan forward from l_start until eos fires; the token being read when
    it fires is the final token. Returns (l_e, capped); capped means the
    scan hit the token budget or the end of the transcript without eos.
    """
    length = len(transcript)
    if not 1 <= l_start <= length:
        raise ValidationError(f"l_start {l_start} outside [1, {length}]")
    if cap < 1:
        raise ValidationError(f"cap must be >= 1, got {cap}")
    stop = min(length, l_start + cap - 1)
    prefix: list[int] = []
    for l in range(l_start, stop + 1):
        prefix.append(transcript.token_id_at(l))
        row = fwd.next_posterior(
            ScorerRequest(segment.segment_id, Direction.FORWARD, tuple(prefix))
        )
        if eos_rule(row):
            return l, False
    return stop, True


def estimate_initial(
    bwd: PosteriorScorer,
    segment: Segment,
    l_e: int,
    floor: int,
    cap: int,
    transcript: TokenSequence,
    eos_rule: EosRule,
) -> tuple[int, tuple[float, ...]] | None:
    """Scan backward from l_e until eos fires; the token being read when it
    fires is the initial token.

    At each step the posterior mass the scorer assigns to the reference
    token is recorded before that token is consumed; the list is returned
    in consumption order (highest position first). Returns None when eos
    fires on the very first query, before any token is consumed (empty
    span). The scan never passes below ``floor`` and consumes at most
    ``cap`` tokens; hitting either limit returns that position.
    """
    if not 1 <= floor <= l_e <= len(transcript):
        raise ValidationError(f"invalid backward scan bounds floor={floor} l_e={l_e}")
    if cap < 1:
        raise ValidationError(f"cap must be >= 1, got {cap}")
    row = bwd.next_posterior(ScorerRequest(segment.segment_id, Direction.BACKWARD, ()))
    if eos_rule(row):
        return None
    stop = max(floor, l_e - cap + 1)
    prefix: list[int] = []
    posteriors: list[float] = []
    for l in range(l_e, stop - 1, -1):
        token_id = transcript.token_id_at(l)
        posteriors.append(row.mass(token_id))
        prefix.append(token_id)
        row = bwd.next_posterior(
            ScorerRequest(segment.segment_id, Direction.BACKWARD, tuple(prefix))
        )
        if eos_rule(row):
            return l, tuple(posteriors)
    return stop, tuple(posteriors)


def candidate_accepted(candidate: CandidateResult, theta: float) -> bool:
    """Gate: empty-span candidates never pass; otherwise confidence >= theta."""
    if candidate.empty_span:
        return False
    return candidate.confidence >= theta


def evaluate_candidate(
    fwd: PosteriorScorer,
    bwd: PosteriorScorer,
    segment: Segment,
    l_start: int,
    floor: int,
    transcript: TokenSequence,
    cap: int,
    eos_rule: EosRule,
) -> CandidateResult:
    """Run Steps 1-3 for one start position."""
    l_e, capped = estimate_final(fwd, segment, l_start, transcript, cap, eos_rule)
    backward = estimate_initial(bwd, segment, l_e, floor, cap, transcript, eos_rule)
    if backward is None:
        return CandidateResult(l_start, l_e, l_e, capped, (), 0.0)
    l_s, posteriors = backward
    return CandidateResult(l_start, l_e, l_s, capped, posteriors, confidence(posteriors))


def align_recording(
    segments: Sequence[Segment],
    transcript: TokenSequence,
    fwd: PosteriorScorer,
    bwd: PosteriorScorer,
    config: AlignerConfig,
    vocab: Vocabulary,
    *,
    mode: str = "char",
) -> AlignmentResult:
    """Align one recording's segments to its transcript (Steps 1-3 per
    candidate, start-position queue across segments).

    Candidate start positions are taken from the queue in FIFO order,
    including positions appended while the current segment is being
    processed. Acceptance resets the queue to the position after the final
    token (kept even past the transcript end, where it marks exhaustion);
    rejection appends it unless it falls past the end. The backward scan is
    floored at the earliest pending start so accepted spans can never
    overlap.

    Raises QueueOverflow (carrying the partial result, remaining segments
    auto-rejected) if the queue would outgrow ``config.queue_cap``.
    """
    segs = validate_recording_segments(segments)
    transcript.validate_against(vocab)
    recording_id = segs[0].recording_id
    eos_rule = make_eos_rule(config)
    length = len(transcript)

    queue: list[int] = [1]
    accepted: list[AlignedPair] = []
    rejected: list[RejectedSegment] = []
    trace: list[str] = []
    overflowed = False

    for segment in segs:
        sid = segment.segment_id
        if overflowed:
            rejected.append(RejectedSegment(sid, (), REASON_QUEUE_OVERFLOW))
            trace.append(f"segment={sid} rejected reason={REASON_QUEUE_OVERFLOW}")
            continue
        if not queue or min(queue) > length:
            # the accept-path reset may leave a single position past the
            # transcript end; nothing is left to align
            rejected.append(RejectedSegment(sid, (), REASON_TRANSCRIPT_EXHAUSTED))
            trace.append(f"segment={sid} rejected reason={REASON_TRANSCRIPT_EXHAUSTED}")
            continue
        cap = scan_cap(segment.duration_sec, config.max_token_rate)
        candidates: list[CandidateResult] = []
        winner: CandidateResult | None = None
        index = 0
        while index < len(queue):
            l_start = queue[index]
            index += 1
            floor = min(queue)
            cand = evaluate_candidate(
                fwd, bwd, segment, l_start, floor, transcript, cap, eos_rule
            )
            candidates.append(cand)
            decision = "accept" if candidate_accepted(cand, config.theta) else "reject"
            trace.append(
                f"segment={sid} l_start={cand.l_start} floor={floor} cap={cap} "
                f"l_e={cand.l_e} capped={int(cand.capped)} l_s={cand.l_s} "
                f"empty_span={int(cand.empty_span)} confidence={cand.confidence!r} "
                f"decision={decision}"
            )
            if decision == "accept":
                winner = cand
                break
            nxt = cand.l_e + 1
            if nxt > length:
                trace.append(f"segment={sid} queue discard {nxt} beyond transcript")
            elif config.dedup_queue and nxt in queue:
                trace.append(f"segment={sid} queue skip duplicate {nxt}")
            elif len(queue) + 1 > config.queue_cap:
                overflowed = True
                trace.append(
                    f"segment={sid} queue overflow: cap {config.queue_cap} "
                    f"exceeded appending {nxt}"
                )
                break
            else:
                queue.append(nxt)
                trace.append(f"segment={sid} queue append {nxt}")
        if winner is not None:
            pair = AlignedPair(
                segment_id=sid,
                span=Span(winner.l_s, winner.l_e),
                confidence=winner.confidence,
                text=detokenize(transcript.slice_ids(winner.l_s, winner.l_e), vocab, mode),
            )
            accepted.append(pair)
            queue = [winner.l_e + 1]
            trace.append(
                f"segment={sid} accepted span=[{winner.l_s},{winner.l_e}] "
                f"confidence={winner.confidence!r} queue reset {queue}"
            )
        else:
            reason = REASON_QUEUE_OVERFLOW if overflowed else REASON_BELOW_THRESHOLD
            rejected.append(RejectedSegment(sid, tuple(candidates), reason))
            trace.append(f"segment={sid} rejected reason={reason} candidates={len(candidates)}")

    result = AlignmentResult(
        recording_id=recording_id,
        accepted=tuple(accepted),
        rejected=tuple(rejected),
        final_queue=tuple(queue),
        trace=tuple(trace),
        partial=overflowed,
    )
    _assert_result_invariants(result, segs, config)
    if overflowed:
        raise QueueOverflow(
            f"recording {recording_id}: queue cap {config.queue_cap} exceeded", result
        )
    return result


def _assert_result_invariants(
    result: AlignmentResult, segments: Sequence[Segment], config: AlignerConfig
) -> None:
    prev_end = 0
    for pair in result.accepted:
        if pair.span.l_s <= prev_end:
            raise AssertionError(
                f"accepted spans overlap or are out of order at {pair.segment_id}"
            )
        prev_end = pair.span.l_e
        if not (config.theta <= pair.confidence <= 1.0):
            raise AssertionError(
                f"accepted pair {pair.segment_id} confidence {pair.confidence} "
                f"violates gate theta={config.theta}"
            )
    decided = {p.segment_id for p in result.accepted}
    decided.update(r.segment_id for r in result.rejected)
    expected = {s.segment_id for s in segments}
    if decided != expected or len(result.accepted) + len(result.rejected) != len(segments):
        raise AssertionError("every segment must appear exactly once in accepted or rejected")
