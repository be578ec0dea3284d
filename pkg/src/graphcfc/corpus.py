"""Dialogue corpora: data model, JSONL I/O, synthetic generation, coarsening, splits."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

MODALITIES = ("t", "a", "v")
FORMAT_TAG = "gcfc-corpus-v1"

COARSE_LABELS = ("Positive", "Neutral", "Negative")
IEMOCAP_LABELS = ("Happy", "Sad", "Neutral", "Angry", "Excited", "Frustrated")
MELD_LABELS = ("Neutral", "Surprise", "Fear", "Sadness", "Joy", "Disgust", "Anger")


class CorpusError(ValueError):
    """Malformed or inconsistent corpus content."""


@dataclass(frozen=True)
class LabelScheme:
    names: Tuple[str, ...]
    coarsening: Dict[str, str]

    def __post_init__(self):
        missing = [n for n in self.names if n not in self.coarsening]
        if missing:
            raise CorpusError(f"coarsening is not total; unmapped: {missing}")
        bad = {v for v in self.coarsening.values() if v not in COARSE_LABELS}
        if bad:
            raise CorpusError(f"coarsening targets outside {COARSE_LABELS}: {sorted(bad)}")


IEMOCAP_SCHEME = LabelScheme(
    IEMOCAP_LABELS,
    {
        "Happy": "Positive", "Excited": "Positive",
        "Sad": "Negative", "Angry": "Negative", "Frustrated": "Negative",
        "Neutral": "Neutral",
    },
)

MELD_SCHEME = LabelScheme(
    MELD_LABELS,
    {
        "Joy": "Positive",
        "Surprise": "Negative", "Fear": "Negative", "Sadness": "Negative",
        "Disgust": "Negative", "Anger": "Negative",
        "Neutral": "Neutral",
    },
)

SCHEMES = {"iemocap": IEMOCAP_SCHEME, "meld": MELD_SCHEME}


@dataclass(frozen=True)
class Utterance:
    speaker_id: int
    label_id: int
    features: Dict[str, np.ndarray]


@dataclass
class Dialogue:
    """One conversation; per-modality features are stored row-per-utterance."""

    id: str
    speakers: np.ndarray  # (n,) int
    labels: np.ndarray  # (n,) int
    features: Dict[str, np.ndarray]  # modality -> (n, dim)
    speaker_count: int

    @property
    def n(self):
        return len(self.labels)

    @property
    def utterances(self) -> List[Utterance]:
        return [
            Utterance(int(self.speakers[i]), int(self.labels[i]),
                      {m: self.features[m][i] for m in MODALITIES})
            for i in range(self.n)
        ]


@dataclass(frozen=True)
class CorpusHeader:
    labels: Tuple[str, ...]
    dims: Dict[str, int]


@dataclass
class Corpus:
    header: CorpusHeader
    dialogues: List[Dialogue] = field(default_factory=list)

    @property
    def labels(self):
        return self.header.labels

    @property
    def num_classes(self):
        return len(self.header.labels)

    @property
    def max_speakers(self):
        return max((d.speaker_count for d in self.dialogues), default=2)

    @property
    def num_utterances(self):
        return sum(d.n for d in self.dialogues)

    def subset(self, indices):
        return Corpus(self.header, [self.dialogues[i] for i in indices])


# --------------------------------------------------------------------------
# JSONL
# --------------------------------------------------------------------------

def _fail(line_no, msg):
    raise CorpusError(f"line {line_no}: {msg}")


def _parse_header(obj, line_no):
    if not isinstance(obj, dict) or obj.get("format") != FORMAT_TAG:
        _fail(line_no, f"header must be an object with format {FORMAT_TAG!r}")
    labels = obj.get("labels")
    if not isinstance(labels, list) or not labels or not all(isinstance(x, str) for x in labels):
        _fail(line_no, "header.labels must be a non-empty list of strings")
    if len(set(labels)) != len(labels):
        _fail(line_no, "header.labels contains duplicates")
    dims = obj.get("dims")
    if not isinstance(dims, dict) or set(dims) != set(MODALITIES):
        _fail(line_no, f"header.dims must have exactly the keys {MODALITIES}")
    for m in MODALITIES:
        if not isinstance(dims[m], int) or isinstance(dims[m], bool) or dims[m] <= 0:
            _fail(line_no, f"header.dims.{m} must be a positive integer")
    return CorpusHeader(tuple(labels), {m: dims[m] for m in MODALITIES})


def _parse_dialogue(obj, header, line_no):
    if not isinstance(obj, dict):
        _fail(line_no, "dialogue line must be a JSON object")
    did = obj.get("id")
    if not isinstance(did, str):
        _fail(line_no, "dialogue.id must be a string")
    where = f"dialogue {did!r}"
    count = obj.get("speakers")
    if not isinstance(count, int) or isinstance(count, bool) or count < 2:
        _fail(line_no, f"{where}: speakers must be an integer >= 2")
    utts = obj.get("utterances")
    if not isinstance(utts, list) or not utts:
        _fail(line_no, f"{where}: utterances must be a non-empty list")
    label_index = {name: i for i, name in enumerate(header.labels)}
    speakers, labels = [], []
    feats = {m: [] for m in MODALITIES}
    for k, u in enumerate(utts):
        at = f"{where} utterance {k}"
        if not isinstance(u, dict):
            _fail(line_no, f"{at}: must be an object")
        spk = u.get("speaker")
        if not isinstance(spk, int) or isinstance(spk, bool) or not 0 <= spk < count:
            _fail(line_no, f"{at}: speaker {spk!r} outside [0, {count})")
        lab = u.get("label")
        if lab not in label_index:
            _fail(line_no, f"{at}: unknown label {lab!r}")
        for m in MODALITIES:
            if m not in u:
                _fail(line_no, f"{at}: missing modality {m!r}")
            vec = u[m]
            if not isinstance(vec, list) or len(vec) != header.dims[m]:
                got = len(vec) if isinstance(vec, list) else type(vec).__name__
                _fail(line_no, f"{at}: modality {m!r} has dimension {got}, expected {header.dims[m]}")
            try:
                arr = np.array(vec, dtype=np.float64)
            except (TypeError, ValueError):
                _fail(line_no, f"{at}: modality {m!r} contains non-numeric values")
            if not np.all(np.isfinite(arr)):
                _fail(line_no, f"{at}: modality {m!r} contains non-finite values")
            feats[m].append(arr)
        speakers.append(spk)
        labels.append(label_index[lab])
    return Dialogue(
        id=did,
        speakers=np.array(speakers, dtype=np.int64),
        labels=np.array(labels, dtype=np.int64),
        features={m: np.stack(feats[m]) for m in MODALITIES},
        speaker_count=count,
    )


def load_corpus(path) -> Corpus:
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"{path}: no such file")
    header = None
    dialogues = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                _fail(line_no, f"malformed JSON ({exc.msg})")
            if header is None:
                header = _parse_header(obj, line_no)
            else:
                dialogues.append(_parse_dialogue(obj, header, line_no))
    if header is None:
        raise CorpusError(f"{path}: empty file (missing header)")
    return Corpus(header, dialogues)


def dump_corpus(corpus: Corpus) -> str:
    lines = [json.dumps({
        "format": FORMAT_TAG,
        "labels": list(corpus.header.labels),
        "dims": dict(corpus.header.dims),
    })]
    for d in corpus.dialogues:
        utts = []
        for i in range(d.n):
            u = {"speaker": int(d.speakers[i]), "label": corpus.labels[int(d.labels[i])]}
            for m in MODALITIES:
                u[m] = [float(x) for x in d.features[m][i]]
            utts.append(u)
        lines.append(json.dumps({"id": d.id, "speakers": int(d.speaker_count), "utterances": utts}))
    return "\n".join(lines) + "\n"


def save_corpus(corpus: Corpus, path):
    Path(path).write_text(dump_corpus(corpus), encoding="utf-8")


# --------------------------------------------------------------------------
# synthetic generator
# --------------------------------------------------------------------------

@dataclass
class GeneratorConfig:
    num_dialogues: int = 200
    min_len: int = 8
    max_len: int = 12
    speakers: int = 2
    num_classes: int = 3
    dim_t: int = 24
    dim_a: int = 24
    dim_v: int = 24
    noise: float = 0.5
    signal: float = 2.0
    fine_labels: str = "none"  # "none" or a key of SCHEMES

    def validate(self):
        if self.num_classes != 3:
            raise CorpusError("synthetic generator requires num_classes == 3")
        if self.speakers < 2:
            raise CorpusError("synthetic generator requires speakers >= 2")
        if self.num_dialogues < 1 or self.min_len < 1 or self.max_len < self.min_len:
            raise CorpusError("invalid dialogue count or length range")
        if min(self.dim_t, self.dim_a, self.dim_v) < 1:
            raise CorpusError("modality dimensions must be positive")
        if self.noise < 0:
            raise CorpusError("noise must be non-negative")
        if self.fine_labels != "none" and self.fine_labels not in SCHEMES:
            raise CorpusError(f"unknown fine label scheme {self.fine_labels!r}")


def latent_label(b1, b2):
    """Coarse label from the two latent bits (index into COARSE_LABELS)."""
    if not b1:
        return COARSE_LABELS.index("Neutral")
    return COARSE_LABELS.index("Positive") if b2 else COARSE_LABELS.index("Negative")


def generate_synthetic(cfg: GeneratorConfig, seed: int) -> Corpus:
    """Corpus whose label needs two of three modalities to decode.

    Per utterance two bits (b1, b2) are drawn; text carries b1, acoustic
    carries b2, visual carries b1 xor b2, each as +/- ``signal`` on feature 0.
    The other coordinates are N(0, noise^2).
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    dims = {"t": cfg.dim_t, "a": cfg.dim_a, "v": cfg.dim_v}
    if cfg.fine_labels == "none":
        labels = COARSE_LABELS
        refine = None
    else:
        scheme = SCHEMES[cfg.fine_labels]
        labels = scheme.names
        refine = {c: [scheme.names.index(n) for n in scheme.names if scheme.coarsening[n] == c]
                  for c in COARSE_LABELS}
    dialogues = []
    for k in range(cfg.num_dialogues):
        n = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        bits = rng.integers(0, 2, size=(n, 2))
        speakers = rng.integers(0, cfg.speakers, size=n)
        carried = {"t": bits[:, 0], "a": bits[:, 1], "v": bits[:, 0] ^ bits[:, 1]}
        feats = {}
        for m in MODALITIES:
            x = cfg.noise * rng.standard_normal((n, dims[m]))
            x[:, 0] = np.where(carried[m] == 1, cfg.signal, -cfg.signal)
            feats[m] = x
        coarse = np.array([latent_label(b1, b2) for b1, b2 in bits], dtype=np.int64)
        if refine is None:
            y = coarse
        else:
            y = np.array([refine[COARSE_LABELS[c]][rng.integers(len(refine[COARSE_LABELS[c]]))]
                          for c in coarse], dtype=np.int64)
        dialogues.append(Dialogue(f"syn-{k:04d}", speakers.astype(np.int64), y, feats, cfg.speakers))
    return Corpus(CorpusHeader(tuple(labels), dims), dialogues)


# --------------------------------------------------------------------------
# coarsening and splits
# --------------------------------------------------------------------------

def coarsen_labels(corpus: Corpus, scheme: LabelScheme) -> Corpus:
    unmapped = [name for name in corpus.labels if name not in scheme.coarsening]
    if unmapped:
        raise CorpusError(f"coarsen_labels: unmapped labels {unmapped}")
    lookup = np.array([COARSE_LABELS.index(scheme.coarsening[name]) for name in corpus.labels])
    header = CorpusHeader(COARSE_LABELS, dict(corpus.header.dims))
    dialogues = [
        Dialogue(d.id, d.speakers, lookup[d.labels], d.features, d.speaker_count)
        for d in corpus.dialogues
    ]
    return Corpus(header, dialogues)


SPLIT_SCHEMES = ("sequential-80-10", "ratio-random")


def split_indices(num_dialogues: int, scheme="sequential-80-10", seed=0,
                  ratios: Sequence[float] = (0.8, 0.1, 0.1)):
    """Dialogue indices for (train, valid, test).

    sequential-80-10: the first floor(0.8 N) dialogues form the training
    pool; its first floor(0.9 * pool) are train, the rest valid; the
    remainder of the corpus is test.
    """
    if num_dialogues < 3:
        raise CorpusError(f"split needs at least 3 dialogues, got {num_dialogues}")
    if scheme == "sequential-80-10":
        pool = math.floor(0.8 * num_dialogues)
        train_end = math.floor(0.9 * pool)
        order = np.arange(num_dialogues)
        cuts = (train_end, pool)
    elif scheme == "ratio-random":
        if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
            raise CorpusError(f"ratios must be three positive numbers summing to 1, got {ratios}")
        order = np.random.default_rng(seed).permutation(num_dialogues)
        cuts = (math.floor(ratios[0] * num_dialogues),
                math.floor((ratios[0] + ratios[1]) * num_dialogues))
    else:
        raise CorpusError(f"unknown split scheme {scheme!r}; expected one of {SPLIT_SCHEMES}")
    parts = np.split(order, cuts)
    if any(len(p) == 0 for p in parts):
        raise CorpusError(f"split of {num_dialogues} dialogues leaves an empty partition")
    return tuple(p.tolist() for p in parts)


def split_corpus(corpus: Corpus, scheme="sequential-80-10", seed=0, ratios=(0.8, 0.1, 0.1)):
    idx = split_indices(len(corpus.dialogues), scheme, seed, ratios)
    return tuple(corpus.subset(i) for i in idx)
