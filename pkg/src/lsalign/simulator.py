"""Synthetic corpora with ground truth, plus oracle scorers.

The simulator stands in for trained forward/backward models: segments are
opaque ids with durations, and an oracle answers posterior queries straight
from the ground-truth spans. Noise is injected as deterministic
per-position events (hashed from the corpus seed), so identical corpora
always yield identical rows, in-process or over the wire.
"""

from __future__ import annotations

import hashlib
import random
import statistics
from dataclasses import dataclass

from .aligner import (
    REASON_BELOW_THRESHOLD,
    REASON_QUEUE_OVERFLOW,
    REASON_TRANSCRIPT_EXHAUSTED,
    AlignedPair,
    AlignerConfig,
    AlignmentResult,
    CandidateResult,
    RejectedSegment,
    make_eos_rule,
    scan_cap,
)
from .core import (
    LsalignError,
    Segment,
    Span,
    TokenSequence,
    ValidationError,
    Vocabulary,
    detokenize,
)
from .scorer import Direction, PosteriorRow, PosteriorScorer, ScorerRequest, UnknownSegment


class TooLargeForOracle(LsalignError):
    """Instance exceeds the reference interpreter's size bounds."""


@dataclass(frozen=True)
class SimConfig:
    n_recordings: int = 10
    tokens_per_utterance: tuple[int, int] = (3, 9)
    utterances_per_recording: tuple[int, int] = (3, 5)
    vocab_size: int = 12
    filler_segment_prob: float = 0.0
    eps_eos_miss: float = 0.0
    eps_eos_false: float = 0.0
    concentration: float = 0.95
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_recordings < 1:
            raise ValidationError("n_recordings must be >= 1")
        for name in ("tokens_per_utterance", "utterances_per_recording"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ValidationError(f"{name} range invalid: ({lo}, {hi})")
        if self.vocab_size < 2:
            raise ValidationError("vocab_size must be >= 2")
        for name in ("filler_segment_prob", "eps_eos_miss", "eps_eos_false"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValidationError(f"{name} must be in [0, 1), got {v}")
        if not 0.0 < self.concentration <= 1.0:
            raise ValidationError(f"concentration must be in (0, 1], got {self.concentration}")


@dataclass(frozen=True)
class SimRecording:
    recording_id: str
    segments: tuple[Segment, ...]
    transcript: TokenSequence
    truth: tuple[Span | None, ...]  # parallel to segments; None marks a filler

    def truth_by_segment(self) -> dict[str, Span | None]:
        return {s.segment_id: t for s, t in zip(self.segments, self.truth)}


@dataclass(frozen=True)
class SimCorpus:
    config: SimConfig
    vocab: Vocabulary
    recordings: tuple[SimRecording, ...]


SECONDS_PER_TOKEN = 0.15


def _token_string(i: int) -> str:
    if i < 26:
        return chr(ord("a") + i)
    return f"t{i}"


def generate_corpus(config: SimConfig) -> SimCorpus:
    """Pseudorandom corpus, fully determined by config.seed.

    Utterance spans tile each recording's transcript in order; filler
    segments (no transcript tokens) are interleaved with probability
    filler_segment_prob. Durations are proportional to span length
    (0.15 s/token plus jitter); fillers get short random durations. All
    times are rounded to milliseconds so serialization round-trips exactly.
    """
    rng = random.Random(config.seed)
    vocab = Vocabulary(tuple(_token_string(i) for i in range(config.vocab_size)))
    recordings = []
    for r in range(config.n_recordings):
        rec_id = f"rec{r:04d}"
        n_utts = rng.randint(*config.utterances_per_recording)
        utt_lens = [rng.randint(*config.tokens_per_utterance) for _ in range(n_utts)]
        ids = tuple(rng.randrange(config.vocab_size) for _ in range(sum(utt_lens)))
        transcript = TokenSequence(ids)

        segments: list[Segment] = []
        truth: list[Span | None] = []
        cursor = round(rng.uniform(0.0, 0.2), 3)
        seg_idx = 0

        def add_segment(duration: float, span: Span | None) -> None:
            nonlocal cursor, seg_idx
            start = cursor
            end = round(start + max(duration, 0.05), 3)
            segments.append(Segment(start, end, f"{rec_id}_s{seg_idx:04d}", rec_id))
            truth.append(span)
            seg_idx += 1
            cursor = round(end + rng.uniform(0.01, 0.1), 3)

        pos = 1
        for ulen in utt_lens:
            if rng.random() < config.filler_segment_prob:
                add_segment(rng.uniform(0.3, 1.0), None)
            add_segment(SECONDS_PER_TOKEN * ulen + rng.uniform(0.0, 0.1), Span(pos, pos + ulen - 1))
            pos += ulen
        if rng.random() < config.filler_segment_prob:
            add_segment(rng.uniform(0.3, 1.0), None)

        recordings.append(SimRecording(rec_id, tuple(segments), transcript, tuple(truth)))
    return SimCorpus(config, vocab, tuple(recordings))


class OracleScorer:
    """Posterior oracle backed by ground truth; serves both directions.

    In-span queries concentrate mass ``concentration`` on the true next
    token and fire eos at the span boundary; queries whose position falls
    outside the segment's span get a flat, low-information row (the
    "audio" carries no evidence there). A prefix is located in the
    transcript by preferring the anchoring consistent with the span
    boundary the scan should have started from, falling back to the
    leftmost exact match; prefixes that match nowhere get a pure-eos row.

    eps_eos_miss / eps_eos_false are probabilities of per-position noise
    events (boundary rows losing their eos spike / other rows gaining
    one), drawn by hashing (seed, segment, direction, position). Absent an
    event, eos mass is exactly (1 - eps_eos_miss) at the boundary and
    eps_eos_false elsewhere. Filler segments fire eos on the first
    backward query and are flat otherwise.
    """

    def __init__(self, corpus: SimCorpus) -> None:
        cfg = corpus.config
        self._eps_miss = cfg.eps_eos_miss
        self._eps_false = cfg.eps_eos_false
        self._c = cfg.concentration
        self._vocab_size = corpus.vocab.size
        self._seed = cfg.seed
        self._noisy = self._eps_miss > 0.0 or self._eps_false > 0.0
        self._entries: dict[str, tuple[tuple[int, ...], Span | None]] = {}
        for rec in corpus.recordings:
            for seg, span in zip(rec.segments, rec.truth):
                self._entries[seg.segment_id] = (rec.transcript.ids, span)

    def next_posterior(self, req: ScorerRequest) -> PosteriorRow:
        entry = self._entries.get(req.segment_id)
        if entry is None:
            raise UnknownSegment(f"oracle knows no segment {req.segment_id!r}")
        ids, span = entry
        if span is None:
            return self._filler_row(req)
        return self._utterance_row(req, ids, span)

    # -- row construction ------------------------------------------------

    def _filler_row(self, req: ScorerRequest) -> PosteriorRow:
        if req.direction is Direction.BACKWARD and not req.prefix:
            return self._flat_row(1.0 - self._eps_miss)
        return self._flat_row(self._eps_false)

    def _utterance_row(
        self, req: ScorerRequest, ids: tuple[int, ...], span: Span
    ) -> PosteriorRow:
        a, b = span.l_s, span.l_e
        length = len(ids)
        if req.direction is Direction.FORWARD:
            pos = self._anchor_forward(ids, req.prefix, a)
            if pos is None:
                return self._pure_eos_row()
            boundary = pos == b
            target = pos + 1
            in_span = a <= target <= b or boundary
        else:
            pos = self._anchor_backward(ids, req.prefix, b)
            if pos is None:
                return self._pure_eos_row()
            boundary = pos == a
            target = pos - 1
            in_span = a <= target <= b or boundary
        eos_mass = self._eos_mass(req.segment_id, req.direction, pos, boundary)
        if in_span and 1 <= target <= length:
            return self._concentrated_row(ids[target - 1], eos_mass)
        return self._flat_row(eos_mass)

    def _eos_mass(self, segment_id: str, direction: Direction, pos: int, boundary: bool) -> float:
        spike = 1.0 - self._eps_miss
        base = self._eps_false
        if not self._noisy:
            return spike if boundary else base
        u = self._draw(segment_id, direction, pos)
        if boundary:
            return base if u < self._eps_miss else spike
        return spike if u < self._eps_false else base

    def _draw(self, segment_id: str, direction: Direction, pos: int) -> float:
        key = f"{self._seed}|{segment_id}|{direction.value}|{pos}".encode("utf-8")
        digest = hashlib.blake2b(key, digest_size=8).digest()
        return int.from_bytes(digest, "big") / 2.0**64

    def _concentrated_row(self, target_id: int, eos_mass: float) -> PosteriorRow:
        v = self._vocab_size
        rest = (1.0 - eos_mass) * (1.0 - self._c) / (v - 1)
        probs = [rest] * (v + 1)
        probs[target_id] = (1.0 - eos_mass) * self._c
        probs[v] = eos_mass
        return self._normalized(probs)

    def _flat_row(self, eos_mass: float) -> PosteriorRow:
        v = self._vocab_size
        share = (1.0 - eos_mass) / v
        probs = [share] * (v + 1)
        probs[v] = eos_mass
        return self._normalized(probs)

    def _pure_eos_row(self) -> PosteriorRow:
        probs = [0.0] * (self._vocab_size + 1)
        probs[-1] = 1.0
        return PosteriorRow(tuple(probs))

    @staticmethod
    def _normalized(probs: list[float]) -> PosteriorRow:
        total = sum(probs)
        return PosteriorRow(tuple(p / total for p in probs))

    # -- prefix anchoring --------------------------------------------------

    @staticmethod
    def _anchor_forward(ids: tuple[int, ...], prefix: tuple[int, ...], a: int) -> int | None:
        """Position of the last prefix token; prefers a scan anchored at the
        true span start, else the leftmost exact match."""
        k = len(prefix)
        if k == 0:
            return None
        if a + k - 1 <= len(ids) and ids[a - 1 : a - 1 + k] == prefix:
            return a + k - 1
        for s in range(1, len(ids) - k + 2):
            if ids[s - 1 : s - 1 + k] == prefix:
                return s + k - 1
        return None

    @staticmethod
    def _anchor_backward(ids: tuple[int, ...], prefix: tuple[int, ...], b: int) -> int | None:
        """Position of the last consumed (lowest) token; an empty prefix is
        the virtual position past the span end, predicting the final token."""
        k = len(prefix)
        if k == 0:
            return b + 1
        text_order = tuple(reversed(prefix))
        if b - k + 1 >= 1 and ids[b - k : b] == text_order:
            return b - k + 1
        for s in range(1, len(ids) - k + 2):
            if ids[s - 1 : s - 1 + k] == text_order:
                return s
        return None


def reference_align(
    recording: SimRecording,
    fwd: PosteriorScorer,
    bwd: PosteriorScorer,
    config: AlignerConfig,
    vocab: Vocabulary,
    *,
    mode: str = "whitespace",
    max_tokens: int = 8,
    max_segments: int = 3,
) -> AlignmentResult:
    """Straight-line transcription of the alignment pseudocode, for tiny
    instances only. No shared scan/queue code with align_recording: this is
    the equivalence oracle it is checked against.
    """
    transcript = recording.transcript
    length = len(transcript)
    n_segments = len(recording.segments)
    if length > max_tokens or n_segments > max_segments:
        raise TooLargeForOracle(
            f"instance has L={length}, N={n_segments}; bounds are "
            f"L<={max_tokens}, N<={max_segments}"
        )
    eos_fires = make_eos_rule(config)

    queue: list[int] = [1]
    accepted: list[AlignedPair] = []
    rejected: list[RejectedSegment] = []
    overflowed = False
    n = 1
    while n <= n_segments:
        segment = recording.segments[n - 1]
        if overflowed:
            rejected.append(RejectedSegment(segment.segment_id, (), REASON_QUEUE_OVERFLOW))
            n = n + 1
            continue
        if len(queue) == 0 or min(queue) > length:
            rejected.append(RejectedSegment(segment.segment_id, (), REASON_TRANSCRIPT_EXHAUSTED))
            n = n + 1
            continue
        cap = scan_cap(segment.duration_sec, config.max_token_rate)
        candidates: list[CandidateResult] = []
        stored = False
        i = 0
        while i < len(queue):
            l_start = queue[i]
            floor = min(queue)

            # Step 1: forward scan for the final token.
            l_e = None
            capped = False
            consumed: list[int] = []
            scan_end = min(length, l_start + cap - 1)
            for l in range(l_start, scan_end + 1):
                consumed.append(transcript.token_id_at(l))
                row = fwd.next_posterior(
                    ScorerRequest(segment.segment_id, Direction.FORWARD, tuple(consumed))
                )
                if eos_fires(row):
                    l_e = l
                    break
            if l_e is None:
                l_e = scan_end
                capped = True

            # Step 2: backward scan for the initial token.
            row = bwd.next_posterior(ScorerRequest(segment.segment_id, Direction.BACKWARD, ()))
            if eos_fires(row):
                l_s = l_e
                posteriors: tuple[float, ...] = ()
            else:
                back_stop = max(floor, l_e - cap + 1)
                consumed = []
                recorded: list[float] = []
                l_s = back_stop
                for l in range(l_e, back_stop - 1, -1):
                    token_id = transcript.token_id_at(l)
                    recorded.append(row.mass(token_id))
                    consumed.append(token_id)
                    row = bwd.next_posterior(
                        ScorerRequest(segment.segment_id, Direction.BACKWARD, tuple(consumed))
                    )
                    if eos_fires(row):
                        l_s = l
                        break
                posteriors = tuple(recorded)

            # Step 3: confidence = median of the recorded posteriors.
            if len(posteriors) == 0:
                conf = 0.0
            else:
                conf = float(statistics.median(posteriors))
            cand = CandidateResult(l_start, l_e, l_s, capped, posteriors, conf)
            candidates.append(cand)

            if len(posteriors) > 0 and conf >= config.theta:
                accepted.append(
                    AlignedPair(
                        segment.segment_id,
                        Span(l_s, l_e),
                        conf,
                        detokenize(transcript.slice_ids(l_s, l_e), vocab, mode),
                    )
                )
                queue = [l_e + 1]
                stored = True
                break
            nxt = l_e + 1
            if nxt <= length and not (config.dedup_queue and nxt in queue):
                if len(queue) + 1 > config.queue_cap:
                    overflowed = True
                    break
                queue.append(nxt)
            i = i + 1
        if not stored:
            reason = REASON_QUEUE_OVERFLOW if overflowed else REASON_BELOW_THRESHOLD
            rejected.append(RejectedSegment(segment.segment_id, tuple(candidates), reason))
        n = n + 1

    return AlignmentResult(
        recording_id=recording.recording_id,
        accepted=tuple(accepted),
        rejected=tuple(rejected),
        final_queue=tuple(queue),
        trace=(),
        partial=overflowed,
    )


def results_equivalent(a: AlignmentResult, b: AlignmentResult) -> bool:
    """Equality modulo trace (the reference interpreter emits none)."""
    return (
        a.recording_id == b.recording_id
        and a.accepted == b.accepted
        and a.rejected == b.rejected
        and a.final_queue == b.final_queue
        and a.partial == b.partial
    )
