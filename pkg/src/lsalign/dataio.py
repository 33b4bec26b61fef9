"""File formats: segments TSV, transcripts TSV, ground-truth JSON, corpus
directories, and alignment outputs.

All writers emit deterministic bytes: stable ordering, fixed float
formatting, trailing newline, UTF-8.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict
from pathlib import Path
from typing import Mapping

from .aligner import AlignedPair, AlignerConfig, AlignmentResult, CandidateResult, RejectedSegment
from .core import (
    Segment,
    Span,
    ValidationError,
    Vocabulary,
    tokenize,
    validate_recording_segments,
)
from .metrics import EvalReport
from .simulator import SimConfig, SimCorpus, SimRecording

SEGMENTS_FILE = "segments.tsv"
TRANSCRIPTS_FILE = "transcripts.tsv"
TRUTH_FILE = "ground_truth.json"
META_FILE = "meta.json"
ALIGNED_FILE = "aligned.tsv"
REJECTED_FILE = "rejected.tsv"
REPORT_FILE = "report.json"

ALIGNED_HEADER = "segment_id\tl_s\tl_e\tconfidence\ttext"
REJECTED_HEADER = "segment_id\treason\tl_start\tl_e\tl_s\tcapped\tconfidence\tbackward_posteriors"


# -- segments ---------------------------------------------------------------


def parse_segments_file(path: str | Path) -> dict[str, list[Segment]]:
    """Parse a segments TSV (segment_id, recording_id, start_sec, end_sec)
    into per-recording lists, sorted and validated."""
    path = Path(path)
    raw: dict[str, list[Segment]] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise ValidationError(f"{path}:{lineno}: expected 4 fields, got {len(fields)}")
        segment_id, recording_id, start_s, end_s = fields
        if not segment_id or not recording_id:
            raise ValidationError(f"{path}:{lineno}: empty id field")
        try:
            start = float(start_s)
            end = float(end_s)
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: bad time value") from None
        try:
            seg = Segment(start, end, segment_id, recording_id)
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
        raw.setdefault(recording_id, []).append(seg)
    if not raw:
        raise ValidationError(f"{path}: no segments found")
    out: dict[str, list[Segment]] = {}
    for recording_id in sorted(raw):
        out[recording_id] = validate_recording_segments(raw[recording_id])
    return out


def write_segments_file(path: str | Path, segments: Mapping[str, list[Segment]]) -> None:
    lines = []
    for recording_id in sorted(segments):
        for seg in segments[recording_id]:
            lines.append(
                f"{seg.segment_id}\t{seg.recording_id}\t{seg.start_sec:.3f}\t{seg.end_sec:.3f}"
            )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- transcripts -------------------------------------------------------------


def parse_transcripts_file(path: str | Path) -> dict[str, str]:
    """recording_id<TAB>text, one recording per line."""
    path = Path(path)
    out: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        recording_id, sep, text = line.partition("\t")
        if not sep or not recording_id:
            raise ValidationError(f"{path}:{lineno}: expected recording_id<TAB>text")
        if recording_id in out:
            raise ValidationError(f"{path}:{lineno}: duplicate recording {recording_id!r}")
        out[recording_id] = text
    return out


def write_transcripts_file(path: str | Path, transcripts: Mapping[str, str]) -> None:
    lines = [f"{rid}\t{transcripts[rid]}" for rid in sorted(transcripts)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- ground truth -------------------------------------------------------------


def write_truth_file(path: str | Path, truth: Mapping[str, Mapping[str, Span | None]]) -> None:
    payload = {
        "recordings": {
            rid: [
                {"segment_id": sid, "kind": "filler"}
                if span is None
                else {"segment_id": sid, "kind": "utterance", "l_s": span.l_s, "l_e": span.l_e}
                for sid, span in truth[rid].items()
            ]
            for rid in sorted(truth)
        }
    }
    Path(path).write_text(
        json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def parse_truth_file(path: str | Path) -> dict[str, dict[str, Span | None]]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    out: dict[str, dict[str, Span | None]] = {}
    for rid, entries in payload["recordings"].items():
        rec: dict[str, Span | None] = {}
        for entry in entries:
            if entry["kind"] == "filler":
                rec[entry["segment_id"]] = None
            else:
                rec[entry["segment_id"]] = Span(entry["l_s"], entry["l_e"])
        out[rid] = rec
    return out


# -- corpus directories --------------------------------------------------------


def save_corpus(corpus: SimCorpus, out_dir: str | Path) -> Path:
    """Write a simulated corpus as the same files the CLI ingests."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_segments_file(out / SEGMENTS_FILE, {r.recording_id: list(r.segments) for r in corpus.recordings})
    transcripts = {
        r.recording_id: " ".join(corpus.vocab.token_of(i) for i in r.transcript.ids)
        for r in corpus.recordings
    }
    write_transcripts_file(out / TRANSCRIPTS_FILE, transcripts)
    write_truth_file(out / TRUTH_FILE, {r.recording_id: r.truth_by_segment() for r in corpus.recordings})
    meta = {
        "format": "lsalign-corpus",
        "version": 1,
        "tokenize_mode": "whitespace",
        "vocab": list(corpus.vocab.tokens),
        "sim_config": asdict(corpus.config),
    }
    (out / META_FILE).write_text(
        json.dumps(meta, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return out


def load_corpus(corpus_dir: str | Path) -> SimCorpus:
    """Reload a corpus directory into the in-memory form."""
    corpus_dir = Path(corpus_dir)
    meta = json.loads((corpus_dir / META_FILE).read_text(encoding="utf-8"))
    if meta.get("format") != "lsalign-corpus":
        raise ValidationError(f"{corpus_dir}: not a corpus directory")
    cfg = meta["sim_config"]
    for key in ("tokens_per_utterance", "utterances_per_recording"):
        cfg[key] = tuple(cfg[key])
    config = SimConfig(**cfg)
    vocab = Vocabulary(tuple(meta["vocab"]))
    segments = parse_segments_file(corpus_dir / SEGMENTS_FILE)
    transcripts = parse_transcripts_file(corpus_dir / TRANSCRIPTS_FILE)
    truth = parse_truth_file(corpus_dir / TRUTH_FILE)
    recordings = []
    for rid in sorted(segments):
        seq, _ = tokenize(transcripts[rid], meta["tokenize_mode"], vocab, extend=False)
        rec_truth = truth[rid]
        ordered = tuple(rec_truth[seg.segment_id] for seg in segments[rid])
        recordings.append(SimRecording(rid, tuple(segments[rid]), seq, ordered))
    return SimCorpus(config, vocab, tuple(recordings))


# -- alignment outputs -----------------------------------------------------------


def aligner_config_dict(config: AlignerConfig) -> dict:
    return {
        "theta": config.theta,
        "max_token_rate": config.max_token_rate,
        "eos_rule": config.eos_rule,
        "p_eos_min": config.p_eos_min,
        "dedup_queue": config.dedup_queue,
        "queue_cap": config.queue_cap,
    }


def trace_digest(result: AlignmentResult) -> str:
    blob = "\n".join(result.trace).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def write_alignment_output(
    results: Mapping[str, AlignmentResult],
    out_dir: str | Path,
    config: AlignerConfig,
    *,
    tokenize_mode: str = "char",
    report: EvalReport | None = None,
) -> Path:
    """Write aligned.tsv, rejected.tsv and report.json for one run.

    Recordings are ordered by id and segments keep the engine's decision
    order, so repeated runs on identical inputs are byte-identical.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    aligned_lines = [ALIGNED_HEADER]
    rejected_lines = [REJECTED_HEADER]
    recordings_report = {}
    for rid in sorted(results):
        result = results[rid]
        for pair in result.accepted:
            aligned_lines.append(
                f"{pair.segment_id}\t{pair.span.l_s}\t{pair.span.l_e}"
                f"\t{pair.confidence:.4f}\t{pair.text}"
            )
        for rej in result.rejected:
            if not rej.candidates:
                rejected_lines.append(f"{rej.segment_id}\t{rej.reason}\t\t\t\t\t\t")
            for cand in rej.candidates:
                posts = ",".join(repr(p) for p in cand.backward_posteriors)
                rejected_lines.append(
                    f"{rej.segment_id}\t{rej.reason}\t{cand.l_start}\t{cand.l_e}"
                    f"\t{cand.l_s}\t{int(cand.capped)}\t{cand.confidence!r}\t{posts}"
                )
        recordings_report[rid] = {
            "n_segments": len(result.accepted) + len(result.rejected),
            "n_accepted": len(result.accepted),
            "n_rejected": len(result.rejected),
            "final_queue": list(result.final_queue),
            "partial": result.partial,
            "trace_sha256": trace_digest(result),
        }

    (out / ALIGNED_FILE).write_text("\n".join(aligned_lines) + "\n", encoding="utf-8")
    (out / REJECTED_FILE).write_text("\n".join(rejected_lines) + "\n", encoding="utf-8")

    payload: dict = {
        "aligner": aligner_config_dict(config),
        "tokenize_mode": tokenize_mode,
        "partial": any(r.partial for r in results.values()),
        "totals": {
            "recordings": len(results),
            "segments": sum(len(r.accepted) + len(r.rejected) for r in results.values()),
            "accepted": sum(len(r.accepted) for r in results.values()),
            "rejected": sum(len(r.rejected) for r in results.values()),
        },
        "recordings": recordings_report,
    }
    if report is not None:
        payload["metrics"] = report.to_json_dict()
        payload["metrics"].pop("segments", None)  # per-segment detail stays in TSVs
    (out / REPORT_FILE).write_text(
        json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return out


def parse_alignment_output(
    out_dir: str | Path,
    segment_to_recording: Mapping[str, str],
) -> tuple[dict[str, list[AlignedPair]], dict[str, list[RejectedSegment]], dict]:
    """Read a run's outputs back (round-trip check support).

    Accepted confidences come back at their 4-decimal file precision;
    rejected candidate floats round-trip exactly via repr.
    """
    out = Path(out_dir)
    accepted: dict[str, list[AlignedPair]] = {}
    for lineno, line in enumerate(
        (out / ALIGNED_FILE).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if lineno == 1:
            if line != ALIGNED_HEADER:
                raise ValidationError(f"{out / ALIGNED_FILE}: bad header")
            continue
        segment_id, l_s, l_e, conf, text = line.split("\t", 4)
        rid = segment_to_recording[segment_id]
        accepted.setdefault(rid, []).append(
            AlignedPair(segment_id, Span(int(l_s), int(l_e)), float(conf), text)
        )
    rejected: dict[str, list[RejectedSegment]] = {}
    pending: dict[str, tuple[str, str, list[CandidateResult]]] = {}
    order: list[str] = []
    for lineno, line in enumerate(
        (out / REJECTED_FILE).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if lineno == 1:
            if line != REJECTED_HEADER:
                raise ValidationError(f"{out / REJECTED_FILE}: bad header")
            continue
        segment_id, reason, l_start, l_e, l_s, capped, conf, posts = line.split("\t", 7)
        if segment_id not in pending:
            pending[segment_id] = (segment_to_recording[segment_id], reason, [])
            order.append(segment_id)
        if l_start:
            posteriors = tuple(float(p) for p in posts.split(",")) if posts else ()
            pending[segment_id][2].append(
                CandidateResult(
                    int(l_start), int(l_e), int(l_s), bool(int(capped)), posteriors, float(conf)
                )
            )
    for segment_id in order:
        rid, reason, cands = pending[segment_id]
        rejected.setdefault(rid, []).append(RejectedSegment(segment_id, tuple(cands), reason))
    report = json.loads((out / REPORT_FILE).read_text(encoding="utf-8"))
    return accepted, rejected, report
