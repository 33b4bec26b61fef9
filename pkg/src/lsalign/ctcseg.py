"""Frame-synchronous baseline: Viterbi alignment over a blank-interleaved
trellis of frame-wise token posteriors.

The dynamic program runs in log space, so probabilities never underflow
even for very long posterior matrices. Repeated-token transitions follow
the standard rule (a blank is mandatory between identical consecutive
labels) and ties break toward staying in the current state.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import LsalignError, TokenSequence, ValidationError

ROW_SUM_TOLERANCE = 1e-6
MAGIC = b"CTCP1"


class InfeasibleAlignment(LsalignError):
    """No valid path: token sequence too long for the frame count, or every
    candidate path has zero probability."""


@dataclass(frozen=True)
class FramePosteriors:
    """T frames of probabilities over V tokens plus blank (last column)."""

    matrix: np.ndarray
    frame_shift_sec: float

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 2:
            raise ValidationError(f"posterior matrix must be T x (V+1), got shape {m.shape}")
        if self.frame_shift_sec <= 0:
            raise ValidationError(f"frame_shift_sec must be positive, got {self.frame_shift_sec}")
        if np.any(m < 0):
            raise ValidationError("posterior matrix has negative entries")
        sums = m.sum(axis=1)
        bad = np.nonzero(np.abs(sums - 1.0) > ROW_SUM_TOLERANCE)[0]
        if bad.size:
            raise ValidationError(
                f"posterior row {int(bad[0])} sums to {sums[bad[0]]!r}, expected 1"
            )
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def n_frames(self) -> int:
        return self.matrix.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.matrix.shape[1] - 1

    @property
    def blank_id(self) -> int:
        return self.matrix.shape[1] - 1


@dataclass(frozen=True)
class TokenTiming:
    position: int  # 1-based transcript position
    start_frame: int
    end_frame: int  # half-open
    score: float


def ctc_align(post: FramePosteriors, tokens: TokenSequence | None) -> list[TokenTiming]:
    """Max-probability monotonic alignment of tokens to frames.

    Returns one half-open frame interval per token, in order; the per-token
    score is the minimum per-frame probability of that token over its
    interval (a conservative quality gate).
    """
    if tokens is None or len(tokens) == 0:
        raise InfeasibleAlignment("token sequence is empty")
    labels = list(tokens.ids)
    blank = post.blank_id
    for tok in labels:
        if not 0 <= tok < post.vocab_size:
            raise ValidationError(f"token id {tok} outside posterior vocabulary")
    repeats = sum(1 for x, y in zip(labels, labels[1:]) if x == y)
    t_frames = post.n_frames
    if len(labels) + repeats > t_frames:
        raise InfeasibleAlignment(
            f"{len(labels)} tokens ({repeats} repeats) cannot fit in {t_frames} frames"
        )

    expanded = [blank]
    for tok in labels:
        expanded.append(tok)
        expanded.append(blank)
    expanded_arr = np.asarray(expanded)
    n_states = len(expanded)

    with np.errstate(divide="ignore"):
        log_probs = np.log(post.matrix)
    emit = log_probs[:, expanded_arr]  # T x S

    neg_inf = -np.inf
    # skip transition s-2 -> s allowed only into a non-blank differing from s-2
    allow_skip = np.zeros(n_states, dtype=bool)
    for s in range(2, n_states):
        allow_skip[s] = expanded[s] != blank and expanded[s] != expanded[s - 2]

    alpha = np.full(n_states, neg_inf)
    alpha[0] = emit[0, 0]
    if n_states > 1:
        alpha[1] = emit[0, 1]
    back = np.zeros((t_frames, n_states), dtype=np.uint8)  # 0=stay, 1=from s-1, 2=from s-2
    for t in range(1, t_frames):
        stay = alpha
        from1 = np.concatenate(([neg_inf], alpha[:-1]))
        from2 = np.concatenate(([neg_inf, neg_inf], alpha[:-2]))
        from2 = np.where(allow_skip, from2, neg_inf)
        stacked = np.vstack((stay, from1, from2))
        choice = np.argmax(stacked, axis=0)  # first max: ties stay put
        back[t] = choice
        alpha = stacked[choice, np.arange(n_states)] + emit[t]

    # n_states = 2L+1 >= 3; valid endings are the final blank or final label
    best_final = n_states - 1 if alpha[n_states - 1] >= alpha[n_states - 2] else n_states - 2
    if not np.isfinite(alpha[best_final]):
        raise InfeasibleAlignment("every feasible path has zero probability")

    states = np.empty(t_frames, dtype=np.int64)
    states[-1] = best_final
    for t in range(t_frames - 1, 0, -1):
        states[t - 1] = states[t] - back[t, states[t]]

    timings: list[TokenTiming] = []
    t = 0
    while t < t_frames:
        s = int(states[t])
        if s % 2 == 1:  # label state
            start = t
            while t < t_frames and int(states[t]) == s:
                t += 1
            position = (s + 1) // 2
            token_id = labels[position - 1]
            score = float(np.min(post.matrix[start:t, token_id]))
            timings.append(TokenTiming(position, start, t, score))
        else:
            t += 1
    return timings


def write_frame_posteriors(path: str | Path, post: FramePosteriors, fmt: str = "binary") -> None:
    """Serialize posteriors: binary (magic, T, V, frame shift, float32 rows)
    or a human-readable TSV debug format."""
    path = Path(path)
    t_frames, cols = post.matrix.shape
    v = cols - 1
    if fmt == "binary":
        with path.open("wb") as fp:
            fp.write(MAGIC)
            fp.write(struct.pack("<IId", t_frames, v, post.frame_shift_sec))
            fp.write(post.matrix.astype("<f4").tobytes(order="C"))
    elif fmt == "tsv":
        lines = [f"# CTCP1 T={t_frames} V={v} frame_shift={post.frame_shift_sec!r}"]
        for row in post.matrix:
            lines.append("\t".join(repr(float(x)) for x in row))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        raise ValidationError(f"unknown posterior format: {fmt!r}")


def read_frame_posteriors(path: str | Path) -> FramePosteriors:
    """Load either serialization; rows are renormalized to absorb float32
    rounding from the binary format."""
    path = Path(path)
    blob = path.read_bytes()
    if blob.startswith(MAGIC):
        header = struct.calcsize("<IId")
        t_frames, v, frame_shift = struct.unpack("<IId", blob[len(MAGIC) : len(MAGIC) + header])
        body = blob[len(MAGIC) + header :]
        expected = t_frames * (v + 1) * 4
        if len(body) != expected:
            raise ValidationError(
                f"{path}: payload is {len(body)} bytes, expected {expected}"
            )
        matrix = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(t_frames, v + 1)
    else:
        lines = blob.decode("utf-8").splitlines()
        if not lines or not lines[0].startswith("# CTCP1"):
            raise ValidationError(f"{path}: not a posterior file (bad magic)")
        fields = dict(part.split("=", 1) for part in lines[0].split()[2:])
        frame_shift = float(fields["frame_shift"])
        rows = [[float(x) for x in line.split("\t")] for line in lines[1:] if line.strip()]
        matrix = np.asarray(rows, dtype=np.float64)
        if int(fields["T"]) != matrix.shape[0] or int(fields["V"]) + 1 != matrix.shape[1]:
            raise ValidationError(f"{path}: header does not match row data")
    sums = matrix.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise ValidationError(f"{path}: non-positive posterior row sum")
    return FramePosteriors(matrix / sums, frame_shift)
