"""Event-file parsing and cohort construction.

Input files are JSON-lines. Events carry patient_id, kind (drug, procedure,
diagnosis, index_act, relapse_drug), code, start and end dates (YYYY-MM-DD,
end >= start). The patients file carries patient_id and birth_year.

Cohort construction per patient:

1. index date T: all index_act events within ``block_days`` (42) of the
   first form one block; T is the last act in the block; any later act
   excludes the patient (more than one surgery block).
2. labels: relapse_drug events at offset d = start - T with
   1 <= d <= buckets * bucket_days land in bucket ceil(d / bucket_days);
   totals above B are clipped by removing events from the fullest bucket
   (counted).
3. history: drug/procedure/diagnosis events strictly before T, grouped by
   start day, shuffled within the day (dataset seed), truncated to
   max_events_per_day codes, the max_days most recent non-empty days kept.
   A day's duration is the longest stay (end - start) among its events.
   Unknown codes map to id 0 with a counter.

Patients are split 70/15/15 at the patient level before the vocabulary is
built, and the vocabulary counts only training-split pre-T events, so no
information leaks from validation or test.

The cohort is cached in a binary container (magic, version, JSON header,
int64 payload) whose bytes are a pure function of inputs and seed.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from collections import Counter, defaultdict
from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np

from .config import Config
from .dist import LabelVector
from .encoder import CODE_KINDS, DayInput, PatientSequence
from .rng import RngStream
from .tokens import age_token, duration_token, horizon_token

__all__ = [
    "EventRecord",
    "EventParseError",
    "VocabMap",
    "CohortEntry",
    "Cohort",
    "parse_events",
    "parse_patients",
    "compute_index",
    "build_labels",
    "build_history",
    "build_vocab",
    "split",
    "build_cohort",
    "COHORT_MAGIC",
]

KINDS = ("drug", "procedure", "diagnosis", "index_act", "relapse_drug")
COHORT_MAGIC = b"ZIMMCOHT"
COHORT_VERSION = 1


class EventParseError(ValueError):
    pass


@dataclass(frozen=True)
class EventRecord:
    patient_id: str
    kind: str
    code: str
    start: date
    end: date


def _parse_date(value, line: int, name: str) -> date:
    try:
        return date.fromisoformat(value)
    except (TypeError, ValueError):
        raise EventParseError(f"line {line}: invalid {name} date {value!r}") from None


def parse_events(path) -> list:
    """Read and validate a JSON-lines event file."""
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for i, raw in enumerate(f, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as e:
                raise EventParseError(f"line {i}: invalid JSON ({e.msg})") from None
            for fieldname in ("patient_id", "kind", "code", "start", "end"):
                if fieldname not in rec:
                    raise EventParseError(f"line {i}: missing field {fieldname!r}")
            if rec["kind"] not in KINDS:
                raise EventParseError(f"line {i}: unknown kind {rec['kind']!r}")
            start = _parse_date(rec["start"], i, "start")
            end = _parse_date(rec["end"], i, "end")
            if end < start:
                raise EventParseError(f"line {i}: end {end} before start {start}")
            out.append(EventRecord(str(rec["patient_id"]), rec["kind"],
                                   str(rec["code"]), start, end))
    return out


def parse_patients(path) -> dict:
    """patient_id -> birth_year."""
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for i, raw in enumerate(f, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as e:
                raise EventParseError(f"line {i}: invalid JSON ({e.msg})") from None
            if "patient_id" not in rec or "birth_year" not in rec:
                raise EventParseError(f"line {i}: need patient_id and birth_year")
            out[str(rec["patient_id"])] = int(rec["birth_year"])
    return out


def compute_index(events, block_days: int = 42):
    """Index date T for one patient's events, or None if excluded.

    Exclusion means more than one surgery block: some index_act starts more
    than block_days after the first one.
    """
    acts = sorted(e.start for e in events if e.kind == "index_act")
    if not acts:
        return None
    block_end = acts[0] + timedelta(days=block_days)
    if acts[-1] > block_end:
        return None
    return acts[-1]


def build_labels(events, T: date, buckets: int = 18, bucket_days: int = 30):
    """(LabelVector, clipped) from relapse_drug events after T.

    Offsets d in [1, buckets * bucket_days] land in bucket ceil(d / bucket_days);
    totals above `buckets` are clipped from the fullest bucket, ties to the
    earliest, and counted.
    """
    counts = [0] * buckets
    window = buckets * bucket_days
    for e in events:
        if e.kind != "relapse_drug":
            continue
        d = (e.start - T).days
        if 1 <= d <= window:
            counts[math.ceil(d / bucket_days) - 1] += 1
    clipped = 0
    while sum(counts) > buckets:
        counts[counts.index(max(counts))] -= 1
        clipped += 1
    return LabelVector(counts), clipped


def build_history(events, T: date, vocab: "VocabMap", config: Config, rng: RngStream):
    """(PatientSequence without age, oov_count) or (None, 0) when empty.

    Only drug/procedure/diagnosis events strictly before T enter the
    history. rng drives the within-day shuffle only.
    """
    pre = config.preprocessing
    by_day = defaultdict(list)
    for e in events:
        if e.kind in CODE_KINDS and e.start < T:
            by_day[e.start].append(e)
    if not by_day:
        return None, 0

    days = sorted(by_day)[-pre.max_days:]
    oov = 0
    out = []
    for day in days:
        evs = list(by_day[day])
        rng.shuffle(evs)
        evs = evs[: pre.max_events_per_day]
        codes = {kind: [] for kind in CODE_KINDS}
        max_stay = 0
        for e in evs:
            token = vocab.lookup(e.kind, e.code)
            if token == 0:
                oov += 1
            codes[e.kind].append(token)
            max_stay = max(max_stay, (e.end - e.start).days)
        offset = (T - day).days
        out.append(DayInput(
            drugs=tuple(codes["drug"]),
            procedures=tuple(codes["procedure"]),
            diagnoses=tuple(codes["diagnosis"]),
            horizon=horizon_token(offset),
            duration=duration_token(max_stay),
            offset=offset,
        ))
    return tuple(out), oov


class VocabMap:
    """Per-kind token -> id maps; id 0 is reserved for no-code/OOV."""

    def __init__(self, maps: dict, min_count: int):
        self.maps = maps
        self.min_count = min_count

    def lookup(self, kind: str, code: str) -> int:
        return self.maps[kind].get(code, 0)

    def sizes(self) -> dict:
        return {kind: len(m) for kind, m in self.maps.items()}

    def id_order(self, kind: str) -> list:
        return [tok for tok, _ in sorted(self.maps[kind].items(), key=lambda kv: kv[1])]

    def hashes(self) -> dict:
        out = {}
        for kind in CODE_KINDS:
            payload = json.dumps(self.id_order(kind)).encode("utf-8")
            out[kind] = hashlib.sha256(payload).hexdigest()
        return out

    def to_dict(self) -> dict:
        return {"min_count": self.min_count,
                "tokens": {kind: self.id_order(kind) for kind in CODE_KINDS}}

    @classmethod
    def from_dict(cls, d: dict) -> "VocabMap":
        maps = {
            kind: {tok: i + 1 for i, tok in enumerate(d["tokens"][kind])}
            for kind in CODE_KINDS
        }
        return cls(maps, d["min_count"])


def build_vocab(events, min_count: int = 50) -> VocabMap:
    """Count codes per kind; keep those seen >= min_count times.

    Ids are assigned from 1 by descending count, ties lexicographic.
    """
    counters = {kind: Counter() for kind in CODE_KINDS}
    for e in events:
        if e.kind in counters:
            counters[e.kind][e.code] += 1
    maps = {}
    for kind, counter in counters.items():
        kept = [(tok, c) for tok, c in counter.items() if c >= min_count]
        kept.sort(key=lambda tc: (-tc[1], tc[0]))
        maps[kind] = {tok: i + 1 for i, (tok, _) in enumerate(kept)}
    return VocabMap(maps, min_count)


@dataclass
class CohortEntry:
    patient_id: str
    T: date
    age_token: int
    seq: PatientSequence
    y: LabelVector
    split: str


def split(items, fractions=(0.70, 0.15, 0.15), seed: int = 0):
    """Seeded patient-level split into train/val/test lists."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split: fractions must sum to 1")
    n = len(items)
    order = RngStream(seed).split("split").permutation(n)
    n_train = int(math.floor(fractions[0] * n))
    n_val = int(math.floor(fractions[1] * n))
    train = [items[i] for i in order[:n_train]]
    val = [items[i] for i in order[n_train: n_train + n_val]]
    test = [items[i] for i in order[n_train + n_val:]]
    if not train or not val or not test:
        raise ValueError(f"split: degenerate sizes for n={n}")
    return train, val, test


class Cohort:
    """Built cohort: entries with split tags, the vocabulary, and counters."""

    def __init__(self, entries, vocab: VocabMap, config: Config, counters: dict, seed: int):
        self.entries = entries
        self.vocab = vocab
        self.config = config
        self.counters = counters
        self.seed = seed

    def split_entries(self, name: str) -> list:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown split {name!r}")
        return [e for e in self.entries if e.split == name]

    def save(self, path) -> None:
        header = {
            "config": self.config.to_dict(),
            "vocab": self.vocab.to_dict(),
            "vocab_hashes": self.vocab.hashes(),
            "counters": self.counters,
            "seed": self.seed,
            "patients": [
                {"id": e.patient_id, "T": e.T.isoformat(), "split": e.split}
                for e in self.entries
            ],
        }
        ints = []
        for e in self.entries:
            ints.append(e.age_token)
            ints.extend(e.y.y)
            ints.append(len(e.seq.days))
            for d in e.seq.days:
                ints.extend((d.offset, d.horizon, d.duration))
                for kind in CODE_KINDS:
                    codes = d.codes(kind)
                    ints.append(len(codes))
                    ints.extend(codes)
        payload = np.asarray(ints, dtype="<i8").tobytes()
        hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        with open(path, "wb") as f:
            f.write(COHORT_MAGIC)
            f.write(bytes([COHORT_VERSION]))
            f.write(struct.pack("<Q", len(hbytes)))
            f.write(hbytes)
            f.write(payload)

    @classmethod
    def load(cls, path) -> "Cohort":
        with open(path, "rb") as f:
            magic = f.read(8)
            if magic != COHORT_MAGIC:
                raise ValueError(f"not a cohort file: bad magic {magic!r}")
            version = f.read(1)[0]
            if version != COHORT_VERSION:
                raise ValueError(f"unsupported cohort version {version}")
            (hlen,) = struct.unpack("<Q", f.read(8))
            header = json.loads(f.read(hlen).decode("utf-8"))
            data = np.frombuffer(f.read(), dtype="<i8")

        config = Config.from_dict(header["config"])
        vocab = VocabMap.from_dict(header["vocab"])
        B = config.preprocessing.buckets
        pos = 0

        def take(k):
            nonlocal pos
            chunk = data[pos: pos + k]
            pos += k
            return chunk

        entries = []
        for meta in header["patients"]:
            age = int(take(1)[0])
            y = LabelVector(take(B).tolist())
            n_days = int(take(1)[0])
            days = []
            for _ in range(n_days):
                offset, horizon, duration = (int(v) for v in take(3))
                per_kind = {}
                for kind in CODE_KINDS:
                    k = int(take(1)[0])
                    per_kind[kind] = tuple(int(v) for v in take(k))
                days.append(DayInput(
                    drugs=per_kind["drug"],
                    procedures=per_kind["procedure"],
                    diagnoses=per_kind["diagnosis"],
                    horizon=horizon,
                    duration=duration,
                    offset=offset,
                ))
            entries.append(CohortEntry(
                patient_id=meta["id"],
                T=date.fromisoformat(meta["T"]),
                age_token=age,
                seq=PatientSequence(days=tuple(days), age_token=age),
                y=y,
                split=meta["split"],
            ))
        return cls(entries, vocab, config, header["counters"], header["seed"])


def build_cohort(events_path, patients_path, config: Config, seed: int) -> Cohort:
    """Full pipeline: parse, index, split, vocabulary, histories, labels."""
    events = parse_events(events_path)
    birth_years = parse_patients(patients_path)
    pre = config.preprocessing

    by_patient = defaultdict(list)
    for e in events:
        by_patient[e.patient_id].append(e)

    counters = {
        "patients_in": len(by_patient),
        "no_index_act": 0,
        "multi_block_excluded": 0,
        "empty_history_excluded": 0,
        "clipped_label_events": 0,
        "oov_codes": 0,
    }

    indexed = []
    for pid in sorted(by_patient):
        T = compute_index(by_patient[pid], pre.block_days)
        if T is None:
            if any(e.kind == "index_act" for e in by_patient[pid]):
                counters["multi_block_excluded"] += 1
            else:
                counters["no_index_act"] += 1
            continue
        indexed.append((pid, T))

    train_ids, val_ids, test_ids = split(indexed, seed=seed)
    split_of = {}
    for name, group in (("train", train_ids), ("val", val_ids), ("test", test_ids)):
        for pid, _ in group:
            split_of[pid] = name

    train_events = [
        e for pid, T in train_ids for e in by_patient[pid]
        if e.kind in CODE_KINDS and e.start < T
    ]
    vocab = build_vocab(train_events, pre.min_count)

    shuffle_root = RngStream(seed).split("history")
    entries = []
    for pid, T in indexed:
        days, oov = build_history(by_patient[pid], T, vocab, config,
                                  shuffle_root.split(pid))
        counters["oov_codes"] += oov
        if days is None:
            counters["empty_history_excluded"] += 1
            continue
        y, clipped = build_labels(by_patient[pid], T, pre.buckets, pre.bucket_days)
        counters["clipped_label_events"] += clipped
        age = age_token(T.year - birth_years[pid])
        entries.append(CohortEntry(
            patient_id=pid,
            T=T,
            age_token=age,
            seq=PatientSequence(days=days, age_token=age),
            y=y,
            split=split_of[pid],
        ))
    counters["patients_kept"] = len(entries)

    sizes = vocab.sizes()
    cfg = Config.from_dict(config.to_dict())
    cfg.preprocessing.drug_vocab = sizes["drug"]
    cfg.preprocessing.procedure_vocab = sizes["procedure"]
    cfg.preprocessing.diagnosis_vocab = sizes["diagnosis"]
    return Cohort(entries, vocab, cfg, counters, seed)
