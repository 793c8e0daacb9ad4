import json
import os

import numpy as np
import pytest
from scipy.io import wavfile

from gesturegen import cli, corpus
from gesturegen.corpus import ProcessedCorpus, make_synthetic_corpus, write_corpus


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """A worked-through CLI workspace: corpus -> preprocess -> extractor -> model."""
    root = tmp_path_factory.mktemp("cli_ws")
    corpus_dir = root / "corpus"
    clips = make_synthetic_corpus(5, seed=21, duration=70.0)
    write_corpus(clips, corpus_dir)

    prep = root / "prep"
    assert cli.main(["preprocess", "--corpus", str(corpus_dir), "--out", str(prep),
                     "--seed", "0"]) == 0
    processed = prep / "processed.npz"

    ext_dir = root / "ext"
    assert cli.main(["train-extractor", "--processed", str(processed), "--out", str(ext_dir),
                     "--split", "all", "--epochs", "2", "--seed", "0"]) == 0

    train_dir = root / "train"
    assert cli.main(["train", "--processed", str(processed), "--out", str(train_dir),
                     "--epochs", "2", "--warmup-epochs", "1", "--batch-size", "64",
                     "--hidden-size", "16", "--num-layers", "1", "--seed", "0",
                     "--extractor", str(ext_dir / "extractor.npz")]) == 0

    # speech inputs for synthesize/style-map: first 6 s of clip 0
    clip = clips[0]
    words_path = root / "speech_words.json"
    words_path.write_text(json.dumps({
        "words": [{"text": w.text, "start": w.start, "end": w.end}
                  for w in clip.words if w.end < 6.0]}))
    audio_path = root / "speech_audio.wav"
    wavfile.write(audio_path, 16000, (clip.audio[:6 * 16000] * 32767).astype(np.int16))

    return {
        "root": root,
        "corpus": corpus_dir,
        "processed": processed,
        "extractor": ext_dir / "extractor.npz",
        "checkpoint": train_dir / "checkpoints" / "epoch_002.npz",
        "history": train_dir / "history.csv",
        "words": words_path,
        "audio": audio_path,
    }


def test_preprocess_outputs(ws):
    report = json.loads((ws["processed"].parent / "ingest_report.json").read_text())
    assert report["clips"] == 5
    assert report["windows_total"] > 0
    assert set(report) >= {"clips", "windows_total", "windows_dropped_low_motion",
                           "windows_dropped_lying"}
    manifest = json.loads((ws["processed"].parent / "manifest.json").read_text())
    assert manifest["command"] == "preprocess"
    assert manifest["seed"] == 0
    proc = ProcessedCorpus.load(ws["processed"])
    assert len(proc.train) > 0 and len(proc.val) > 0 and len(proc.test) > 0


def test_preprocess_empty_dir(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    rc = cli.main(["preprocess", "--corpus", str(empty), "--out", str(tmp_path / "o")])
    assert rc == 1
    err = capsys.readouterr().err
    assert err.startswith("error: CorpusError:")


def test_train_outputs(ws):
    assert ws["checkpoint"].exists()
    lines = ws["history"].read_text().strip().split("\n")
    assert lines[0] == "epoch,huber,nsgan_g,style,kld,total_g,total_d,fgd_val,warmup"
    rows = [ln.split(",") for ln in lines[1:]]
    assert len(rows) == 2
    assert rows[0][-1] == "1" and rows[1][-1] == "0"   # warmup flag column
    assert float(rows[0][-2]) >= 0.0                   # validation FGD present
    assert float(rows[0][2]) == 0.0                    # nsgan zero during warmup


def test_synthesize_and_determinism(ws, tmp_path):
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    args = ["synthesize", "--checkpoint", str(ws["checkpoint"]), "--words", str(ws["words"]),
            "--audio", str(ws["audio"]), "--speaker-id", "0", "--format", "json"]
    assert cli.main(args + ["--out", str(out1)]) == 0
    assert cli.main(args + ["--out", str(out2)]) == 0
    a = (out1 / "gesture.json").read_bytes()
    b = (out2 / "gesture.json").read_bytes()
    assert a == b
    doc = json.loads(a)
    assert len(doc["frames"]) == 90  # 6 s at 15 fps
    assert doc["fps"] == 15.0


def test_synthesize_style_vector(ws, tmp_path):
    out = tmp_path / "sv"
    assert cli.main(["synthesize", "--checkpoint", str(ws["checkpoint"]),
                     "--words", str(ws["words"]), "--audio", str(ws["audio"]),
                     "--style-vector", "0,0,0,0,0,0,0,0",
                     "--out", str(out), "--format", "csv"]) == 0
    assert (out / "gesture.csv").exists()


def test_synthesize_style_flag_conflicts(ws, tmp_path, capsys):
    base = ["synthesize", "--checkpoint", str(ws["checkpoint"]), "--words", str(ws["words"]),
            "--audio", str(ws["audio"]), "--out", str(tmp_path / "x")]
    assert cli.main(base) == 1
    assert cli.main(base + ["--speaker-id", "0", "--style-vector", "0,0,0,0,0,0,0,0"]) == 1
    err = capsys.readouterr().err
    assert "InvalidInputError" in err


def test_synthesize_missing_checkpoint(ws, tmp_path, capsys):
    rc = cli.main(["synthesize", "--checkpoint", str(tmp_path / "nope.npz"),
                   "--words", str(ws["words"]), "--audio", str(ws["audio"]),
                   "--speaker-id", "0", "--out", str(tmp_path / "y")])
    assert rc == 1
    assert "nope.npz" in capsys.readouterr().err


def test_evaluate(ws, tmp_path):
    out = tmp_path / "eval"
    assert cli.main(["evaluate", "--checkpoint", str(ws["checkpoint"]),
                     "--extractor", str(ws["extractor"]),
                     "--processed", str(ws["processed"]), "--out", str(out)]) == 0
    doc = json.loads((out / "metrics.json").read_text())
    assert set(doc) == {"fgd", "maej", "mae_accel", "n_real", "n_generated", "extractor_id"}
    assert doc["fgd"] >= 0 and doc["maej"] >= 0 and doc["mae_accel"] >= 0
    assert doc["n_real"] == doc["n_generated"] > 0


def test_noise_bench(ws, tmp_path):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"gaussian": [0.0, 0.001], "multiplicative": [1.0]}))
    out = tmp_path / "nb"
    assert cli.main(["noise-bench", "--extractor", str(ws["extractor"]),
                     "--processed", str(ws["processed"]), "--grid", str(grid),
                     "--out", str(out), "--split", "test", "--seed", "1"]) == 0
    lines = (out / "noise_report.csv").read_text().strip().split("\n")
    assert lines[0] == "kind,zeta,fgd,maej,mae_accel"
    assert len(lines) == 1 + 3
    doc = json.loads((out / "noise_report.json").read_text())
    clean = [r for r in doc["rows"] if r["kind"] == "gaussian" and r["zeta"] == 0.0][0]
    assert clean["maej"] == 0.0 and clean["fgd"] <= 1e-4


def test_style_map(ws, tmp_path):
    out = tmp_path / "style"
    assert cli.main(["style-map", "--checkpoint", str(ws["checkpoint"]),
                     "--words", str(ws["words"]), "--audio", str(ws["audio"]),
                     "--out", str(out)]) == 0
    doc = json.loads((out / "style_map.json").read_text())
    assert len(doc["speakers"]) == 5  # one row per speaker
    for row in doc["speakers"]:
        assert len(row["style_mean"]) == 8
        assert row["handedness"] in ("right", "left", "balanced")
        assert len(row["pca"]) == 2
        assert row["motion_variance"] >= 0


def test_text_alter_identity_and_empty(ws, tmp_path):
    proc = ProcessedCorpus.load(ws["processed"])
    word = next(t for t in proc.vocab.tokens[2:] if t not in ("<unk>",))
    ident = tmp_path / "ident.json"
    ident.write_text(json.dumps({word: word}))
    out = tmp_path / "ta1"
    assert cli.main(["text-alter", "--checkpoint", str(ws["checkpoint"]),
                     "--extractor", str(ws["extractor"]), "--processed", str(ws["processed"]),
                     "--substitutions", str(ident), "--out", str(out)]) == 0
    doc = json.loads((out / "text_alter.json").read_text())
    if doc["n_pairs"] >= 2:
        assert doc["fgd_before_after"] == pytest.approx(0.0, abs=1e-6)

    empty = tmp_path / "empty.json"
    empty.write_text("{}")
    out2 = tmp_path / "ta2"
    assert cli.main(["text-alter", "--checkpoint", str(ws["checkpoint"]),
                     "--extractor", str(ws["extractor"]), "--processed", str(ws["processed"]),
                     "--substitutions", str(empty), "--out", str(out2)]) == 0
    doc2 = json.loads((out2 / "text_alter.json").read_text())
    assert doc2["n_pairs"] == 0 and doc2["fgd_before_after"] is None


def test_config_file_precedence(ws, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 7, "ratios": "0.6,0.2,0.2"}))
    out = tmp_path / "p1"
    assert cli.main(["--config", str(cfg), "preprocess", "--corpus", str(ws["corpus"]),
                     "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 7 and man["config"]["ratios"] == "0.6,0.2,0.2"
    out2 = tmp_path / "p2"
    assert cli.main(["--config", str(cfg), "preprocess", "--corpus", str(ws["corpus"]),
                     "--out", str(out2), "--seed", "9"]) == 0
    man2 = json.loads((out2 / "manifest.json").read_text())
    assert man2["seed"] == 9  # explicit flag beats config file


def test_output_lock(ws, tmp_path, capsys):
    out = tmp_path / "locked"
    out.mkdir()
    (out / cli.LOCK_NAME).touch()
    rc = cli.main(["evaluate", "--checkpoint", str(ws["checkpoint"]),
                   "--extractor", str(ws["extractor"]),
                   "--processed", str(ws["processed"]), "--out", str(out)])
    assert rc == 1
    assert "OutputLockError" in capsys.readouterr().err


def test_manifest_written_for_every_command(ws):
    for sub in ("prep", "ext", "train"):
        assert (ws["root"] / sub / "manifest.json").exists()
