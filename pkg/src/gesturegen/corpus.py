"""Corpus ingestion, chunk extraction, splits, and the synthetic fixture corpus.

On-disk corpus layout: one directory per clip containing ``words.json``
(speaker id + timestamped words), ``audio.wav`` (mono PCM), and
``poses.csv`` (coordinates at the pose frame rate).
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from . import animation
from .errors import CorpusError, InvalidInputError, WindowOverflowError
from .poses import (
    DirVecSequence,
    PoseSequence,
    Skeleton,
    ValidityThresholds,
    coords_to_dirvecs,
    is_valid_sample,
    measure_bone_lengths,
    resample,
    spine_center,
)

PAD_TOKEN = "◇"  # fills word-sequence slots with no word
UNK_TOKEN = "<unk>"

CHUNK_LEN = 34     # frames per training window
SEED_FRAMES = 4    # leading frames given as seed poses
CHUNK_STRIDE = 10  # frames between window starts
POSE_FPS = 15.0
AUDIO_SR = 16000


@dataclass(frozen=True)
class TimedWord:
    text: str
    start: float  # seconds
    end: float

    def __post_init__(self):
        if not self.text:
            raise InvalidInputError("word text must be non-empty")
        if self.start < 0 or self.end <= self.start:
            raise InvalidInputError(f"bad word timing [{self.start}, {self.end}]")


@dataclass
class SpeechClip:
    """One contiguous utterance: poses, audio, timestamped words, speaker."""

    clip_id: str
    speaker_id: int
    words: list
    audio: np.ndarray  # mono samples
    sample_rate: int
    poses: PoseSequence

    def __post_init__(self):
        self.audio = np.asarray(self.audio, dtype=np.float32)
        if self.audio.ndim != 1:
            raise InvalidInputError("audio must be mono (1-D)")
        starts = [w.start for w in self.words]
        if any(b < a for a, b in zip(starts, starts[1:])):
            raise InvalidInputError("word start times must be non-decreasing")
        audio_dur = len(self.audio) / self.sample_rate
        if abs(audio_dur - self.poses.duration) > 0.5:
            raise InvalidInputError(
                f"audio ({audio_dur:.2f}s) and poses ({self.poses.duration:.2f}s) disagree by more than 0.5s")


@dataclass
class PaddedWordSeq:
    """Words distributed over t frame-aligned slots; empty slots hold the pad token."""

    tokens: list

    def __len__(self):
        return len(self.tokens)

    def word_texts(self) -> list:
        return [t for t in self.tokens if t != PAD_TOKEN]


@dataclass
class TrainingSample:
    """One chunk: 4 seed frames + 30 target frames with aligned words and audio."""

    seed: np.ndarray    # (4, 9, 3) directional vectors
    target: np.ndarray  # (30, 9, 3)
    words: PaddedWordSeq
    audio: np.ndarray   # fixed-length window samples
    speaker_id: int
    clip_id: str
    frame_start: int

    @property
    def window_dirvecs(self) -> np.ndarray:
        return np.concatenate([self.seed, self.target], axis=0)


@dataclass(frozen=True)
class CorpusSplit:
    train: frozenset
    val: frozenset
    test: frozenset

    def __post_init__(self):
        if self.train & self.val or self.train & self.test or self.val & self.test:
            raise InvalidInputError("splits must be pairwise disjoint")


def build_padded_words(words, window_start: float, window_end: float, t: int) -> PaddedWordSeq:
    """Place each in-window word at the slot proportional to its start time.

    Colliding words shift rightward to the next free slot; running past the
    last slot rejects the window.
    """
    if window_end <= window_start:
        raise InvalidInputError("window_end must exceed window_start")
    if t < 1:
        raise InvalidInputError("t must be at least 1")
    in_window = [w for w in words if window_start <= w.start < window_end]
    if len(in_window) > t:
        raise WindowOverflowError(f"{len(in_window)} words do not fit in {t} slots")
    span = window_end - window_start
    slots: list = [None] * t
    for w in sorted(in_window, key=lambda w: w.start):
        s = min(max(int(math.floor((w.start - window_start) / span * t)), 0), t - 1)
        while s < t and slots[s] is not None:
            s += 1
        if s == t:
            raise WindowOverflowError("no free slot to the right; window rejected")
        slots[s] = w.text
    return PaddedWordSeq([s if s is not None else PAD_TOKEN for s in slots])


def slice_audio(clip: SpeechClip, frame_start: int, t: int) -> np.ndarray:
    """Audio samples covering pose frames [frame_start, frame_start+t), zero-padded at edges."""
    return slice_audio_array(clip.audio, clip.sample_rate, clip.poses.fps, frame_start, t)


def slice_audio_array(audio: np.ndarray, sample_rate: int, fps: float,
                      frame_start: int, t: int) -> np.ndarray:
    n = int(round(sample_rate * t / fps))
    s0 = int(round(sample_rate * frame_start / fps))
    out = np.zeros(n, dtype=np.float32)
    a = max(s0, 0)
    b = min(s0 + n, len(audio))
    if b > a:
        out[a - s0:b - s0] = audio[a:b]
    return out


def extract_chunks(clip: SpeechClip, t: int = CHUNK_LEN, stride: int = CHUNK_STRIDE,
                   thresholds: ValidityThresholds | None = None,
                   skel: Skeleton | None = None,
                   counters: dict | None = None) -> list:
    """All valid t-frame windows of a clip as training samples.

    A clip shorter than t frames yields an empty list. ``counters``, when
    given, accumulates windows_total / windows_dropped_* bookkeeping.
    """
    thresholds = thresholds or ValidityThresholds()
    n_frames = len(clip.poses)
    if n_frames < t:
        return []
    dirs = coords_to_dirvecs(spine_center(clip.poses), skel).frames
    fps = clip.poses.fps
    samples = []
    for s in range(0, n_frames - t + 1, stride):
        if counters is not None:
            counters["windows_total"] = counters.get("windows_total", 0) + 1
        window = PoseSequence(clip.poses.frames[s:s + t], fps)
        ok, reason = is_valid_sample(window, thresholds)
        if not ok:
            if counters is not None:
                key = f"windows_dropped_{reason}"
                counters[key] = counters.get(key, 0) + 1
            continue
        try:
            padded = build_padded_words(clip.words, s / fps, (s + t) / fps, t)
        except WindowOverflowError:
            if counters is not None:
                counters["windows_dropped_overflow"] = counters.get("windows_dropped_overflow", 0) + 1
            continue
        samples.append(TrainingSample(
            seed=dirs[s:s + SEED_FRAMES].copy(),
            target=dirs[s + SEED_FRAMES:s + t].copy(),
            words=padded,
            audio=slice_audio(clip, s, t),
            speaker_id=clip.speaker_id,
            clip_id=clip.clip_id,
            frame_start=s,
        ))
    return samples


def _split_counts(n: int, ratios) -> list:
    # largest-remainder apportionment so counts sum to n
    raw = [r * n for r in ratios]
    counts = [int(math.floor(x)) for x in raw]
    rem = n - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in order[:rem]:
        counts[i] += 1
    # every nonzero-ratio split gets at least one clip when possible
    for i, r in enumerate(ratios):
        if r > 0 and counts[i] == 0:
            donor = max(range(len(counts)), key=lambda j: counts[j])
            if counts[donor] > 1:
                counts[donor] -= 1
                counts[i] += 1
    return counts


def split_corpus(clips, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> CorpusSplit:
    """Deterministic clip-level split keeping every speaker inside one split."""
    if abs(sum(ratios) - 1.0) > 1e-6:
        raise InvalidInputError("split ratios must sum to 1")
    if len(clips) < len(ratios):
        raise InvalidInputError("fewer clips than splits")
    by_speaker: dict = {}
    for clip in clips:
        by_speaker.setdefault(clip.speaker_id, []).append(clip.clip_id)
    speakers = sorted(by_speaker)
    if len(speakers) < sum(1 for r in ratios if r > 0):
        raise CorpusError("not enough speaker groups to fill every split")
    rng = np.random.default_rng(seed)
    order = [speakers[i] for i in rng.permutation(len(speakers))]
    targets = _split_counts(len(clips), ratios)
    buckets: list = [[] for _ in ratios]
    for spk in order:
        # whole speaker group goes to the split with the largest relative deficit
        def deficit(i):
            if targets[i] == 0:
                return -np.inf
            return (targets[i] - len(buckets[i])) / targets[i]
        k = max(range(len(ratios)), key=deficit)
        buckets[k].extend(by_speaker[spk])
    if any(not b for b, r in zip(buckets, ratios) if r > 0):
        raise CorpusError("not enough speaker groups to fill every split")
    return CorpusSplit(*(frozenset(b) for b in buckets))


_FIXTURE_VOCAB = (
    "the a and to of in we you they it this that is was are have has had "
    "said big small fast slow world people time day work idea change point "
    "great little move stop look think know feel make take good right left"
).split()

_BASE_POSE = np.array([
    [0.0, 0.0, 0.0],     # spine
    [0.0, 1.0, 0.0],     # neck
    [0.0, 1.15, 0.2],    # nose
    [0.0, 1.35, 0.2],    # head
    [-0.4, 1.0, 0.0],    # r_shoulder
    [0.4, 1.0, 0.0],     # l_shoulder
    [-0.5, 0.48, 0.1],   # r_elbow
    [0.5, 0.48, 0.1],    # l_elbow
    [-0.55, 0.02, 0.2],  # r_wrist
    [0.55, 0.02, 0.2],   # l_wrist
])


def speaker_amplitude(speaker_id: int, n_speakers: int) -> float:
    """Motion-amplitude parameter of a fixture speaker; increases with id."""
    return 0.25 + 0.75 * speaker_id / max(n_speakers - 1, 1)


def make_synthetic_corpus(n_clips: int, seed: int, duration: float = 12.0,
                          fps: float = POSE_FPS, sample_rate: int = AUDIO_SR) -> list:
    """Procedural corpus: smooth arm motion whose energy follows the audio envelope.

    Each clip has a distinct speaker id whose motion amplitude grows with
    the id, so style effects are learnable and rankable.
    """
    if n_clips < 1:
        raise InvalidInputError("n_clips must be at least 1")
    rng = np.random.default_rng(seed)
    clips = []
    for k in range(n_clips):
        dur = duration * (1.0 + 0.15 * rng.uniform())
        n_frames = int(round(dur * fps))
        dur = n_frames / fps
        tt = np.arange(n_frames) / fps
        amp = speaker_amplitude(k, n_clips)

        f1, f2 = rng.uniform(0.08, 0.2), rng.uniform(0.35, 0.7)
        p1, p2 = rng.uniform(0, 2 * np.pi, 2)
        envelope = 0.5 + 0.25 * np.sin(2 * np.pi * f1 * tt + p1) + 0.25 * np.sin(2 * np.pi * f2 * tt + p2)
        gain = amp * (0.35 + 0.65 * envelope)

        frames = np.tile(_BASE_POSE, (n_frames, 1, 1))
        for j, scale in ((8, 1.0), (9, 1.0), (6, 0.45), (7, 0.45)):
            w = rng.uniform(0.5, 1.2, 3)
            ph = rng.uniform(0, 2 * np.pi, 3)
            osc = np.stack([np.sin(2 * np.pi * w[a] * tt + ph[a]) for a in range(3)], axis=1)
            frames[:, j] += (gain * scale)[:, None] * osc * np.array([0.45, 0.5, 0.3])
        # slight head bob so no joint is perfectly static
        frames[:, 3, 1] += 0.02 * np.sin(2 * np.pi * 0.9 * tt + rng.uniform(0, 2 * np.pi))

        n_samples = int(round(dur * sample_rate))
        ta = np.arange(n_samples) / sample_rate
        env_a = 0.5 + 0.25 * np.sin(2 * np.pi * f1 * ta + p1) + 0.25 * np.sin(2 * np.pi * f2 * ta + p2)
        voice = 0.3 * np.sin(2 * np.pi * rng.uniform(120, 260) * ta)
        audio = (env_a * voice + 0.02 * env_a * rng.standard_normal(n_samples)).astype(np.float32)

        n_words = max(int(dur * rng.uniform(1.6, 2.4)), 1)
        starts = np.sort(rng.uniform(0.0, dur - 0.3, n_words))
        # keep starts at least 0.12 s apart so no two words share a frame slot
        kept = [starts[0]]
        for s in starts[1:]:
            if s - kept[-1] >= 0.12:
                kept.append(s)
        words = [TimedWord(str(rng.choice(_FIXTURE_VOCAB)), float(s), float(s) + 0.2)
                 for s in kept]

        clips.append(SpeechClip(
            clip_id=f"clip{k:03d}",
            speaker_id=k,
            words=words,
            audio=audio,
            sample_rate=sample_rate,
            poses=PoseSequence(frames, fps),
        ))
    return clips


def write_corpus(clips, root) -> None:
    os.makedirs(root, exist_ok=True)
    for clip in clips:
        d = os.path.join(root, clip.clip_id)
        os.makedirs(d, exist_ok=True)
        doc = {
            "clip_id": clip.clip_id,
            "speaker_id": clip.speaker_id,
            "fps": clip.poses.fps,
            "words": [{"text": w.text, "start": w.start, "end": w.end} for w in clip.words],
        }
        with open(os.path.join(d, "words.json"), "w") as f:
            json.dump(doc, f, sort_keys=True)
        pcm = np.clip(clip.audio, -1.0, 1.0)
        wavfile.write(os.path.join(d, "audio.wav"), clip.sample_rate,
                      (pcm * 32767).astype(np.int16))
        animation.save_pose_csv(clip.poses, os.path.join(d, "poses.csv"))


def _load_clip_dir(d: str) -> SpeechClip:
    with open(os.path.join(d, "words.json")) as f:
        doc = json.load(f)
    words = [TimedWord(w["text"], float(w["start"]), float(w["end"])) for w in doc["words"]]
    rate, audio = wavfile.read(os.path.join(d, "audio.wav"))
    audio = np.asarray(audio)
    if audio.ndim == 2:
        audio = audio.mean(axis=1)
    if np.issubdtype(audio.dtype, np.integer):
        audio = audio.astype(np.float32) / np.iinfo(np.int16).max
    audio = audio.astype(np.float32)
    if rate != AUDIO_SR:
        g = math.gcd(AUDIO_SR, int(rate))
        audio = resample_poly(audio, AUDIO_SR // g, int(rate) // g).astype(np.float32)
        rate = AUDIO_SR
    fps = float(doc.get("fps", POSE_FPS))
    poses = animation.load_pose_csv(os.path.join(d, "poses.csv"), fps)
    if not math.isclose(fps, POSE_FPS):
        poses = resample(poses, POSE_FPS)
    return SpeechClip(doc["clip_id"], int(doc["speaker_id"]), words, audio, rate, poses)


def read_corpus(root) -> tuple[list, list]:
    """Load every clip directory under ``root``; returns (clips, skipped).

    Malformed clips are skipped and reported as (dirname, reason) tuples.
    """
    if not os.path.isdir(root):
        raise CorpusError(f"corpus directory not found: {root}")
    subdirs = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
    clips, skipped = [], []
    for d in subdirs:
        try:
            clips.append(_load_clip_dir(os.path.join(root, d)))
        except Exception as exc:  # malformed clip: report, keep going
            skipped.append((d, f"{type(exc).__name__}: {exc}"))
    if not clips and not skipped:
        raise CorpusError(f"no clip directories under {root}")
    return clips, skipped


def normalize_corpus_scale(clips) -> tuple[list, float]:
    """Rescale coordinates so the corpus-mean spine-neck length is 1."""
    total, n = 0.0, 0
    for clip in clips:
        lens = measure_bone_lengths(clip.poses)[:, 0]
        total += float(lens.sum())
        n += len(lens)
    scale = total / max(n, 1)
    if scale < 1e-8:
        raise CorpusError("degenerate corpus: zero spine-neck length")
    out = [SpeechClip(c.clip_id, c.speaker_id, c.words, c.audio, c.sample_rate,
                      PoseSequence(c.poses.frames / scale, c.poses.fps))
           for c in clips]
    return out, scale


@dataclass
class Vocab:
    tokens: list
    index: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def encode(self, token: str) -> int:
        return self.index.get(token, self.index[UNK_TOKEN])

    def encode_seq(self, tokens) -> np.ndarray:
        return np.array([self.encode(t) for t in tokens], dtype=np.int64)

    @classmethod
    def build(cls, word_lists) -> "Vocab":
        seen = set()
        for words in word_lists:
            seen.update(words)
        seen.discard(PAD_TOKEN)
        seen.discard(UNK_TOKEN)
        return cls([PAD_TOKEN, UNK_TOKEN] + sorted(seen))


@dataclass
class WindowSet:
    """Training-ready arrays for a set of fixed-length windows."""

    dirvecs: np.ndarray      # (N, 34, 27) float32
    tokens: np.ndarray       # (N, 34) int64
    audio: np.ndarray        # (N, samples) float32
    speaker: np.ndarray      # (N,) int64
    clip_index: np.ndarray   # (N,) int32
    frame_start: np.ndarray  # (N,) int32

    def __len__(self):
        return len(self.dirvecs)

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.dirvecs[idx], self.tokens[idx], self.audio[idx],
                         self.speaker[idx], self.clip_index[idx], self.frame_start[idx])


def samples_to_windows(samples, vocab: Vocab, clip_ids) -> WindowSet:
    clip_pos = {cid: i for i, cid in enumerate(clip_ids)}
    n = len(samples)
    if n == 0:
        a_len = int(round(AUDIO_SR * CHUNK_LEN / POSE_FPS))
        return WindowSet(np.zeros((0, CHUNK_LEN, 27), np.float32),
                         np.zeros((0, CHUNK_LEN), np.int64),
                         np.zeros((0, a_len), np.float32),
                         np.zeros(0, np.int64), np.zeros(0, np.int32), np.zeros(0, np.int32))
    return WindowSet(
        dirvecs=np.stack([s.window_dirvecs.reshape(CHUNK_LEN, 27) for s in samples]).astype(np.float32),
        tokens=np.stack([vocab.encode_seq(s.words.tokens) for s in samples]),
        audio=np.stack([s.audio for s in samples]).astype(np.float32),
        speaker=np.array([s.speaker_id for s in samples], dtype=np.int64),
        clip_index=np.array([clip_pos[s.clip_id] for s in samples], dtype=np.int32),
        frame_start=np.array([s.frame_start for s in samples], dtype=np.int32),
    )


@dataclass
class ProcessedCorpus:
    """Preprocessed corpus: per-split windows plus shared statistics."""

    train: WindowSet
    val: WindowSet
    test: WindowSet
    vocab: Vocab
    bone_lengths: np.ndarray  # (9,) corpus-global means
    mean_dirvecs: np.ndarray  # (27,) unit-normalized mean pose
    n_speakers: int
    scale: float
    clip_ids: list
    split: dict               # clip_id -> "train" | "val" | "test"
    report: dict

    def save(self, path) -> None:
        from .serialization import save_archive
        arrays = {}
        for name in ("train", "val", "test"):
            ws: WindowSet = getattr(self, name)
            arrays[f"{name}/dirvecs"] = ws.dirvecs
            arrays[f"{name}/tokens"] = ws.tokens
            arrays[f"{name}/audio"] = ws.audio
            arrays[f"{name}/speaker"] = ws.speaker
            arrays[f"{name}/clip_index"] = ws.clip_index
            arrays[f"{name}/frame_start"] = ws.frame_start
        arrays["bone_lengths"] = self.bone_lengths.astype(np.float64)
        arrays["mean_dirvecs"] = self.mean_dirvecs.astype(np.float64)
        meta = {
            "kind": "processed_corpus",
            "vocab": self.vocab.tokens,
            "n_speakers": self.n_speakers,
            "scale": self.scale,
            "clip_ids": self.clip_ids,
            "split": self.split,
            "report": self.report,
        }
        save_archive(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "ProcessedCorpus":
        from .serialization import load_archive
        arrays, meta = load_archive(path)
        if meta is None or meta.get("kind") != "processed_corpus":
            raise CorpusError(f"not a processed corpus archive: {path}")
        sets = {}
        for name in ("train", "val", "test"):
            sets[name] = WindowSet(arrays[f"{name}/dirvecs"], arrays[f"{name}/tokens"],
                                   arrays[f"{name}/audio"], arrays[f"{name}/speaker"],
                                   arrays[f"{name}/clip_index"], arrays[f"{name}/frame_start"])
        return cls(sets["train"], sets["val"], sets["test"], Vocab(meta["vocab"]),
                   arrays["bone_lengths"], arrays["mean_dirvecs"], meta["n_speakers"],
                   meta["scale"], meta["clip_ids"], meta["split"], meta["report"])


def preprocess_corpus(clips, thresholds: ValidityThresholds | None = None,
                      ratios=(0.8, 0.1, 0.1), seed: int = 0,
                      skipped=None) -> ProcessedCorpus:
    """Normalize scale, split at the clip level, and chunk every clip."""
    thresholds = thresholds or ValidityThresholds()
    clips, scale = normalize_corpus_scale(clips)
    split = split_corpus(clips, ratios, seed)
    split_of = {}
    for cid in split.train:
        split_of[cid] = "train"
    for cid in split.val:
        split_of[cid] = "val"
    for cid in split.test:
        split_of[cid] = "test"
    clip_ids = [c.clip_id for c in clips]
    counters: dict = {"windows_total": 0, "windows_dropped_low_motion": 0,
                      "windows_dropped_lying": 0, "windows_dropped_overflow": 0}
    per_split: dict = {"train": [], "val": [], "test": []}
    for clip in clips:
        samples = extract_chunks(clip, thresholds=thresholds, counters=counters)
        per_split[split_of[clip.clip_id]].extend(samples)
    if not per_split["train"]:
        raise CorpusError("no valid training windows after filtering")

    vocab = Vocab.build([s.words.word_texts() for s in per_split["train"]])
    train_ids = set(split.train)
    lens, n_len = np.zeros(9), 0
    for clip in clips:
        if clip.clip_id in train_ids:
            m = measure_bone_lengths(clip.poses)
            lens += m.sum(axis=0)
            n_len += m.shape[0]
    bone_lengths = lens / max(n_len, 1)

    mean_d = np.mean(np.stack([s.window_dirvecs for s in per_split["train"]]), axis=(0, 1))
    mean_d = mean_d / np.linalg.norm(mean_d, axis=-1, keepdims=True)

    speakers = sorted({c.speaker_id for c in clips})
    n_speakers = max(speakers) + 1
    report = {
        "clips": len(clips),
        "windows_total": counters["windows_total"],
        "windows_dropped_low_motion": counters["windows_dropped_low_motion"],
        "windows_dropped_lying": counters["windows_dropped_lying"],
        "windows_dropped_overflow": counters["windows_dropped_overflow"],
        "windows_kept": sum(len(v) for v in per_split.values()),
        "scale": scale,
        "clips_skipped": [list(s) for s in (skipped or [])],
    }
    return ProcessedCorpus(
        train=samples_to_windows(per_split["train"], vocab, clip_ids),
        val=samples_to_windows(per_split["val"], vocab, clip_ids),
        test=samples_to_windows(per_split["test"], vocab, clip_ids),
        vocab=vocab,
        bone_lengths=bone_lengths,
        mean_dirvecs=mean_d.reshape(27),
        n_speakers=n_speakers,
        scale=scale,
        clip_ids=clip_ids,
        split=split_of,
        report=report,
    )
