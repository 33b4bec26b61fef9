import json

import numpy as np
import pytest

from lsalign.cli import main
from lsalign.ctcseg import FramePosteriors, write_frame_posteriors
from lsalign.dataio import save_corpus
from lsalign.simulator import SimConfig, generate_corpus


def run_cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture()
def corpus_dir(tmp_path):
    corpus = generate_corpus(
        SimConfig(n_recordings=3, utterances_per_recording=(2, 4), filler_segment_prob=0.2, seed=17)
    )
    return save_corpus(corpus, tmp_path / "corpus")


def test_simulate_align_evaluate_flow(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    assert run_cli("simulate", "--out", corpus, "--recordings", 2, "--seed", 3) == 0
    for name in ("segments.tsv", "transcripts.tsv", "ground_truth.json", "meta.json"):
        assert (corpus / name).exists()

    run = tmp_path / "run"
    code = run_cli(
        "align", "--corpus", corpus,
        "--fwd-scorer", f"oracle:{corpus}", "--bwd-scorer", f"oracle:{corpus}",
        "--out", run,
    )
    assert code == 0
    report = json.loads((run / "report.json").read_text())
    assert report["metrics"]["span_exact_match"] == 1.0
    assert report["aligner"]["theta"] == 0.7

    assert run_cli("evaluate", "--run", run, "--corpus", corpus, "--out", tmp_path / "eval.json") == 0
    out = capsys.readouterr().out
    assert "nrr" in out
    eval_report = json.loads((tmp_path / "eval.json").read_text())
    assert eval_report["nrr"] == 1.0
    assert eval_report["cer_non_rejected"] == 0.0


def test_align_is_byte_deterministic(tmp_path, corpus_dir):
    outs = []
    for name in ("run1", "run2"):
        out = tmp_path / name
        assert run_cli(
            "align", "--corpus", corpus_dir,
            "--fwd-scorer", f"oracle:{corpus_dir}", "--bwd-scorer", f"oracle:{corpus_dir}",
            "--out", out,
        ) == 0
        outs.append(out)
    for name in ("aligned.tsv", "rejected.tsv", "report.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_align_jobs_parallel_matches_serial(tmp_path, corpus_dir):
    serial = tmp_path / "serial"
    parallel = tmp_path / "parallel"
    for out, jobs in ((serial, 1), (parallel, 3)):
        assert run_cli(
            "align", "--corpus", corpus_dir,
            "--fwd-scorer", f"oracle:{corpus_dir}", "--bwd-scorer", f"oracle:{corpus_dir}",
            "--jobs", jobs, "--out", out,
        ) == 0
    for name in ("aligned.tsv", "rejected.tsv", "report.json"):
        assert (serial / name).read_bytes() == (parallel / name).read_bytes()


def test_align_explicit_paths_with_vocab(tmp_path, corpus_dir):
    out = tmp_path / "run"
    code = run_cli(
        "align",
        "--segments", corpus_dir / "segments.tsv",
        "--transcripts", corpus_dir / "transcripts.tsv",
        "--vocab", corpus_dir / "meta.json",
        "--ground-truth", corpus_dir / "ground_truth.json",
        "--fwd-scorer", f"oracle:{corpus_dir}", "--bwd-scorer", f"oracle:{corpus_dir}",
        "--out", out,
    )
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["metrics"]["span_exact_match"] == 1.0


def test_validation_error_exits_2(tmp_path):
    bad = tmp_path / "segments.tsv"
    bad.write_text("s1\trecA\t5.0\t1.0\n", encoding="utf-8")
    transcripts = tmp_path / "transcripts.tsv"
    transcripts.write_text("recA\tabc\n", encoding="utf-8")
    code = run_cli(
        "align", "--segments", bad, "--transcripts", transcripts,
        "--fwd-scorer", "scripted:/nonexistent", "--bwd-scorer", "scripted:/nonexistent",
        "--out", tmp_path / "run",
    )
    assert code == 2


def test_scorer_error_exits_3(tmp_path, corpus_dir):
    code = run_cli(
        "align", "--corpus", corpus_dir,
        "--fwd-scorer", "remote:127.0.0.1:1", "--bwd-scorer", "remote:127.0.0.1:1",
        "--timeout", 2, "--out", tmp_path / "run",
    )
    assert code == 3


def test_queue_overflow_exits_4(tmp_path):
    # a filler before the first utterance makes the head candidate fail and
    # append; queue_cap 1 forbids any append at all. The filler's scan cap
    # must land inside the transcript for an append to be attempted.
    import math

    for seed in range(300):
        corpus = generate_corpus(
            SimConfig(
                n_recordings=1, utterances_per_recording=(2, 2), tokens_per_utterance=(8, 9),
                filler_segment_prob=0.9, seed=seed,
            )
        )
        rec = corpus.recordings[0]
        if rec.truth[0] is None and len(rec.truth) >= 2:
            filler_cap = math.ceil(rec.segments[0].duration_sec * 25.0)
            if filler_cap + 1 <= len(rec.transcript):
                break
    else:
        pytest.fail("no corpus with a short leading filler found")
    corpus_dir = save_corpus(corpus, tmp_path / "corpus")
    out = tmp_path / "run"
    code = run_cli(
        "align", "--corpus", corpus_dir,
        "--fwd-scorer", f"oracle:{corpus_dir}", "--bwd-scorer", f"oracle:{corpus_dir}",
        "--queue-cap", 1, "--out", out,
    )
    assert code == 4
    report = json.loads((out / "report.json").read_text())
    assert report["partial"] is True


def test_config_file_defaults_and_flag_precedence(tmp_path, corpus_dir):
    cfg = tmp_path / "lsalign.cfg"
    cfg.write_text("theta=0.25\nqueue_cap=32\n# comment\n", encoding="utf-8")
    out = tmp_path / "run"
    assert run_cli(
        "align", "--corpus", corpus_dir,
        "--fwd-scorer", f"oracle:{corpus_dir}", "--bwd-scorer", f"oracle:{corpus_dir}",
        "--config", cfg, "--theta", 0.9, "--out", out,
    ) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["aligner"]["theta"] == 0.9  # flag wins
    assert report["aligner"]["queue_cap"] == 32  # config file fills the rest


def test_config_file_unknown_key_rejected(tmp_path, corpus_dir):
    cfg = tmp_path / "lsalign.cfg"
    cfg.write_text("thets=0.25\n", encoding="utf-8")
    assert run_cli(
        "align", "--corpus", corpus_dir,
        "--fwd-scorer", f"oracle:{corpus_dir}", "--bwd-scorer", f"oracle:{corpus_dir}",
        "--config", cfg, "--out", tmp_path / "run",
    ) == 2


def test_evaluate_with_explicit_ground_truth_paths(tmp_path, corpus_dir):
    run = tmp_path / "run"
    assert run_cli(
        "align", "--corpus", corpus_dir,
        "--fwd-scorer", f"oracle:{corpus_dir}", "--bwd-scorer", f"oracle:{corpus_dir}",
        "--out", run,
    ) == 0
    out_file = tmp_path / "eval.json"
    assert run_cli(
        "evaluate", "--run", run,
        "--segments", corpus_dir / "segments.tsv",
        "--transcripts", corpus_dir / "transcripts.tsv",
        "--ground-truth", corpus_dir / "ground_truth.json",
        "--mode", "whitespace",
        "--out", out_file,
    ) == 0
    report = json.loads(out_file.read_text())
    assert report["span_exact_match"] == 1.0


def test_no_dedup_flag_reaches_config(tmp_path, corpus_dir):
    out = tmp_path / "run"
    assert run_cli(
        "align", "--corpus", corpus_dir,
        "--fwd-scorer", f"oracle:{corpus_dir}", "--bwd-scorer", f"oracle:{corpus_dir}",
        "--no-dedup", "--out", out,
    ) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["aligner"]["dedup_queue"] is False


def test_eos_rule_threshold_flag(tmp_path, corpus_dir):
    out = tmp_path / "run"
    assert run_cli(
        "align", "--corpus", corpus_dir,
        "--fwd-scorer", f"oracle:{corpus_dir}", "--bwd-scorer", f"oracle:{corpus_dir}",
        "--eos-rule", "threshold:0.6", "--out", out,
    ) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["aligner"]["eos_rule"] == "threshold"
    assert report["aligner"]["p_eos_min"] == 0.6


def test_ctc_align_cli(tmp_path, capsys):
    rng = np.random.default_rng(3)
    matrix = rng.uniform(0.05, 1.0, size=(6, 4))
    matrix /= matrix.sum(axis=1, keepdims=True)
    post_file = tmp_path / "post.ctcp"
    write_frame_posteriors(post_file, FramePosteriors(matrix, 0.02), "binary")
    transcript = tmp_path / "transcript.txt"
    transcript.write_text("abc", encoding="utf-8")
    out_file = tmp_path / "timings.tsv"
    assert run_cli("ctc-align", "--posteriors", post_file, "--transcript", transcript, "--out", out_file) == 0
    lines = out_file.read_text().splitlines()
    assert lines[0].startswith("position\ttoken")
    assert len(lines) == 4


def test_strip_chars_removes_punctuation(tmp_path):
    segments = tmp_path / "segments.tsv"
    segments.write_text("s1\trecA\t0.0\t1.0\n", encoding="utf-8")
    transcripts = tmp_path / "transcripts.tsv"
    transcripts.write_text("recA\ta,b.c\n", encoding="utf-8")
    script = tmp_path / "rows.tsv"
    # vocabulary after stripping is a,b,c -> ids 0,1,2
    script.write_text(
        "s1\tforward\t0\t1:0.9,eos:0.05\n"
        "s1\tforward\t0 1\t2:0.9,eos:0.05\n"
        "s1\tforward\t0 1 2\teos:0.9\n"
        "s1\tbackward\t\t2:0.9,eos:0.05\n"
        "s1\tbackward\t2\t1:0.9,eos:0.05\n"
        "s1\tbackward\t2 1\t0:0.9,eos:0.05\n"
        "s1\tbackward\t2 1 0\teos:0.9\n",
        encoding="utf-8",
    )
    out = tmp_path / "run"
    assert run_cli(
        "align", "--segments", segments, "--transcripts", transcripts,
        "--mode", "char", "--strip-chars", ",.",
        "--fwd-scorer", f"scripted:{script}", "--bwd-scorer", f"scripted:{script}",
        "--out", out,
    ) == 0
    aligned = (out / "aligned.tsv").read_text().splitlines()
    assert aligned[1] == "s1\t1\t3\t0.9000\tabc"
