"""Alignment quality metrics: edit distance, CER, NRR, span accuracy.

Hypotheses and references may be TokenSequence objects or plain sequences
of hashable symbols; empty hypotheses are allowed (rejected segments).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .aligner import AlignmentResult
from .core import Span, TokenSequence


def _symbols(seq: TokenSequence | Sequence) -> tuple:
    if isinstance(seq, TokenSequence):
        return seq.ids
    return tuple(seq)


@dataclass(frozen=True)
class EditCounts:
    subs: int
    ins: int
    dels: int

    @property
    def total(self) -> int:
        return self.subs + self.ins + self.dels

    def __add__(self, other: EditCounts) -> EditCounts:
        return EditCounts(self.subs + other.subs, self.ins + other.ins, self.dels + other.dels)


def edit_distance(hyp: TokenSequence | Sequence, ref: TokenSequence | Sequence) -> EditCounts:
    """Minimal-cost Levenshtein counts for transforming ref into hyp.

    Insertions are hypothesis tokens with no reference counterpart;
    deletions are reference tokens missing from the hypothesis. Ties in
    total cost prefer substitutions over deletion/insertion pairs, which
    pins the split deterministically (given the total and the substitution
    count, the rest is forced by the length difference) and keeps
    edit_distance(a, b) equal to edit_distance(b, a) with ins/dels swapped.
    """
    a = _symbols(hyp)
    b = _symbols(ref)
    # cell = (total, subs, ins, dels); prefer low total, then high subs --
    # given those two and the length difference, ins/dels are forced
    prev = [(j, 0, 0, j) for j in range(len(b) + 1)]
    for i in range(1, len(a) + 1):
        cur = [(i, 0, i, 0)]
        ai = a[i - 1]
        for j in range(1, len(b) + 1):
            bt, bs, bi, bd = prev[j - 1]
            if ai != b[j - 1]:
                bt += 1
                bs += 1
            ut, us, ui, ud = prev[j]
            ut += 1
            if ut < bt or (ut == bt and us > bs):
                bt, bs, bi, bd = ut, us, ui + 1, ud
            lt, ls, li, ld = cur[j - 1]
            lt += 1
            if lt < bt or (lt == bt and ls > bs):
                bt, bs, bi, bd = lt, ls, li, ld + 1
            cur.append((bt, bs, bi, bd))
        prev = cur
    _, subs, ins, dels = prev[len(b)]
    return EditCounts(subs, ins, dels)


def cer(hyp: TokenSequence | Sequence, ref: TokenSequence | Sequence) -> float:
    """Token error rate of one hypothesis: edits / max(1, len(ref))."""
    counts = edit_distance(hyp, ref)
    return counts.total / max(1, len(_symbols(ref)))


def pooled_cer(pairs: Iterable[tuple[Sequence, Sequence]]) -> float:
    """Corpus-level CER: pooled edit counts over pooled reference length."""
    edits = 0
    ref_len = 0
    for hyp, ref in pairs:
        edits += edit_distance(hyp, ref).total
        ref_len += len(_symbols(ref))
    return edits / max(1, ref_len)


def nrr(result: AlignmentResult, transcript: TokenSequence) -> float:
    """Non-rejected token rate: accepted span tokens over transcript length."""
    covered = sum(len(pair.span) for pair in result.accepted)
    return covered / len(transcript)


def span_accuracy(
    result: AlignmentResult, truth: Mapping[str, Span | None]
) -> tuple[int, int]:
    """(exact matches, true utterance count) for one recording.

    Only ground-truth utterance segments count; a rejected utterance is a
    miss, fillers are ignored.
    """
    accepted = {pair.segment_id: pair.span for pair in result.accepted}
    matches = 0
    total = 0
    for segment_id, span in truth.items():
        if span is None:
            continue
        total += 1
        if accepted.get(segment_id) == span:
            matches += 1
    return matches, total


@dataclass(frozen=True)
class SegmentEval:
    recording_id: str
    segment_id: str
    status: str  # "accepted" | "rejected"
    truth_span: Span | None
    hyp_span: Span | None
    edits: EditCounts
    ref_len: int


@dataclass(frozen=True)
class EvalReport:
    nrr: float
    cer_non_rejected: float | None
    cer_with_rejected_as_deletions: float | None
    span_exact_match: float | None
    per_segment: tuple[SegmentEval, ...]

    def to_json_dict(self) -> dict:
        def opt(x: float | None) -> float | None:
            return None if x is None else round(x, 6)

        return {
            "nrr": round(self.nrr, 6),
            "cer_non_rejected": opt(self.cer_non_rejected),
            "cer_with_rejected_as_deletions": opt(self.cer_with_rejected_as_deletions),
            "span_exact_match": opt(self.span_exact_match),
            "segments": [
                {
                    "recording_id": s.recording_id,
                    "segment_id": s.segment_id,
                    "status": s.status,
                    "truth_span": None if s.truth_span is None else [s.truth_span.l_s, s.truth_span.l_e],
                    "hyp_span": None if s.hyp_span is None else [s.hyp_span.l_s, s.hyp_span.l_e],
                    "subs": s.edits.subs,
                    "ins": s.edits.ins,
                    "dels": s.edits.dels,
                    "ref_len": s.ref_len,
                }
                for s in self.per_segment
            ],
        }

    def render_table(self) -> str:
        def fmt(x: float | None) -> str:
            return "n/a" if x is None else f"{x:.4f}"

        lines = [
            "metric                            value",
            "--------------------------------  ------",
            f"nrr                               {fmt(self.nrr)}",
            f"cer_non_rejected                  {fmt(self.cer_non_rejected)}",
            f"cer_with_rejected_as_deletions    {fmt(self.cer_with_rejected_as_deletions)}",
            f"span_exact_match                  {fmt(self.span_exact_match)}",
        ]
        return "\n".join(lines)


def evaluate_with_truth(
    items: Sequence[tuple[AlignmentResult, TokenSequence, Mapping[str, Span | None]]],
) -> EvalReport:
    """Corpus evaluation against ground-truth spans.

    Per segment the hypothesis is the accepted span's tokens (empty when
    rejected) and the reference is the true span's tokens (empty for
    fillers). Both CER variants pool edits over pooled reference length;
    the non-rejected variant skips rejected segments, the other counts
    their reference tokens as deletions.
    """
    per_segment: list[SegmentEval] = []
    edits_nr = EditCounts(0, 0, 0)
    ref_nr = 0
    edits_all = EditCounts(0, 0, 0)
    ref_all = 0
    covered = 0
    total_tokens = 0
    matches = 0
    utterances = 0
    for result, transcript, truth in items:
        accepted = {pair.segment_id: pair.span for pair in result.accepted}
        total_tokens += len(transcript)
        m, t = span_accuracy(result, truth)
        matches += m
        utterances += t
        for segment_id, truth_span in truth.items():
            hyp_span = accepted.get(segment_id)
            hyp_ids = () if hyp_span is None else transcript.slice_ids(hyp_span.l_s, hyp_span.l_e)
            ref_ids = () if truth_span is None else transcript.slice_ids(truth_span.l_s, truth_span.l_e)
            counts = edit_distance(hyp_ids, ref_ids)
            status = "accepted" if segment_id in accepted else "rejected"
            if status == "accepted":
                covered += len(hyp_ids)
                edits_nr = edits_nr + counts
                ref_nr += len(ref_ids)
            edits_all = edits_all + counts
            ref_all += len(ref_ids)
            per_segment.append(
                SegmentEval(
                    result.recording_id, segment_id, status, truth_span, hyp_span, counts, len(ref_ids)
                )
            )
    return EvalReport(
        nrr=covered / max(1, total_tokens),
        cer_non_rejected=edits_nr.total / max(1, ref_nr),
        cer_with_rejected_as_deletions=edits_all.total / max(1, ref_all),
        span_exact_match=(matches / utterances) if utterances else 1.0,
        per_segment=tuple(per_segment),
    )


def evaluate_without_truth(
    items: Sequence[tuple[AlignmentResult, TokenSequence]],
) -> EvalReport:
    """Evaluation with only the reference transcript: NRR plus a coarse CER
    comparing the concatenated accepted text against the whole transcript
    (unaccepted spans surface as deletions)."""
    covered = 0
    total_tokens = 0
    edits = EditCounts(0, 0, 0)
    ref_len = 0
    for result, transcript in items:
        total_tokens += len(transcript)
        hyp: list[int] = []
        for pair in result.accepted:
            hyp.extend(transcript.slice_ids(pair.span.l_s, pair.span.l_e))
            covered += len(pair.span)
        edits = edits + edit_distance(tuple(hyp), transcript.ids)
        ref_len += len(transcript)
    return EvalReport(
        nrr=covered / max(1, total_tokens),
        cer_non_rejected=None,
        cer_with_rejected_as_deletions=edits.total / max(1, ref_len),
        span_exact_match=None,
        per_segment=(),
    )
