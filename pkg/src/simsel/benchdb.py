"""Performance benchmark database: per-(dataset, model, condition) records.

One record stores how a model performed on a dataset under one condition,
either clean or a named attack family. Ranked queries over these records
drive candidate selection, and the overhead ledger compares the cost of
the cheap selection path against exhaustive training.
"""

import json
import math
from dataclasses import dataclass, field

from .attacks import FAMILIES as ATTACK_FAMILIES
from .errors import ConfigError, DataError, InvariantError

CLEAN = "clean"
# known attack names without a shipped implementation; records may carry
# them so externally produced results can live in the same store
RESERVED_CONDITIONS = ("cw", "elasticnet", "autopgd")

CONDITIONS = (CLEAN,) + ATTACK_FAMILIES + RESERVED_CONDITIONS

_SCALAR = (str, int, float, bool)


def _check_unit(name, value):
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise InvariantError(f"{name} must be a number, got {value!r}")
    if not 0.0 <= float(value) <= 1.0 or not math.isfinite(value):
        raise InvariantError(f"{name} must be in [0, 1], got {value!r}")


def _check_seconds(name, value):
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise InvariantError(f"{name} must be a number, got {value!r}")
    if value < 0.0 or not math.isfinite(value):
        raise InvariantError(f"{name} must be non-negative, got {value!r}")


@dataclass(frozen=True)
class PerfRecord:
    """One measurement: a model on a dataset under one condition."""

    dataset: str
    model: str
    condition: str
    seed: int
    accuracy: float
    f1_macro: float
    asr: float = None
    train_seconds: float = 0.0
    attack_seconds: float = 0.0
    tune_seconds: float = 0.0
    hyperparams: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.dataset or not isinstance(self.dataset, str):
            raise InvariantError("dataset must be a non-empty string")
        if not self.model or not isinstance(self.model, str):
            raise InvariantError("model must be a non-empty string")
        if self.condition not in CONDITIONS:
            raise InvariantError(
                f"unknown condition {self.condition!r}; expected one of {CONDITIONS}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise InvariantError(f"seed must be an integer, got {self.seed!r}")
        _check_unit("accuracy", self.accuracy)
        _check_unit("f1_macro", self.f1_macro)
        if self.condition == CLEAN:
            if self.asr is not None:
                raise InvariantError("clean records carry no asr")
        else:
            if self.asr is None:
                raise InvariantError(
                    f"attacked record ({self.condition}) requires an asr")
            _check_unit("asr", self.asr)
        for name in ("train_seconds", "attack_seconds", "tune_seconds"):
            _check_seconds(name, getattr(self, name))
        for k, v in self.hyperparams.items():
            if not isinstance(k, str) or not isinstance(v, _SCALAR):
                raise InvariantError(
                    f"hyperparams must map strings to scalars, got {k!r}={v!r}")

    @property
    def key(self):
        return (self.dataset, self.model, self.condition, self.seed)

    def to_dict(self):
        d = {
            "dataset": self.dataset,
            "model": self.model,
            "condition": self.condition,
            "seed": self.seed,
            "accuracy": float(self.accuracy),
            "f1_macro": float(self.f1_macro),
            "train_seconds": float(self.train_seconds),
            "attack_seconds": float(self.attack_seconds),
            "tune_seconds": float(self.tune_seconds),
            "hyperparams": dict(self.hyperparams),
        }
        if self.asr is not None:
            d["asr"] = float(self.asr)
        return d

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise DataError(f"record must be an object, got {type(d).__name__}")
        allowed = {"dataset", "model", "condition", "seed", "accuracy",
                   "f1_macro", "asr", "train_seconds", "attack_seconds",
                   "tune_seconds", "hyperparams"}
        unknown = set(d) - allowed
        if unknown:
            raise DataError(f"unknown record fields {sorted(unknown)}")
        missing = {"dataset", "model", "condition", "seed",
                   "accuracy", "f1_macro"} - set(d)
        if missing:
            raise DataError(f"record missing fields {sorted(missing)}")
        return cls(**d)


class BenchmarkDB:
    """Append-only record store with unique (dataset, model, condition, seed) keys."""

    def __init__(self, records=()):
        self._records = []
        self._by_key = {}
        for rec in records:
            self.append(rec)

    def __len__(self):
        return len(self._records)

    def __eq__(self, other):
        if not isinstance(other, BenchmarkDB):
            return NotImplemented
        return self._records == other._records

    @property
    def records(self):
        return tuple(self._records)

    def has_key(self, dataset, model, condition, seed):
        return (dataset, model, condition, seed) in self._by_key

    def append(self, rec: PerfRecord):
        if not isinstance(rec, PerfRecord):
            raise InvariantError(f"expected PerfRecord, got {type(rec).__name__}")
        if rec.key in self._by_key:
            raise DataError(f"duplicate record key {rec.key}")
        self._by_key[rec.key] = rec
        self._records.append(rec)

    def query(self, dataset=None, model=None, condition=None, seed=None):
        out = []
        for rec in self._records:
            if dataset is not None and rec.dataset != dataset:
                continue
            if model is not None and rec.model != model:
                continue
            if condition is not None and rec.condition != condition:
                continue
            if seed is not None and rec.seed != seed:
                continue
            out.append(rec)
        return out

    def top_k(self, dataset, condition, k):
        """Model ids ranked by recorded performance under one condition.

        Clean ranks by descending accuracy; attacked by ascending asr
        (lower asr means the attack moved fewer predictions). Ties break
        by descending accuracy, then model id. Models with several seeds
        rank by their per-model mean.
        """
        if k < 1:
            raise ConfigError(f"k must be >= 1, got {k}")
        recs = self.query(dataset=dataset, condition=condition)
        by_model = {}
        for rec in recs:
            by_model.setdefault(rec.model, []).append(rec)
        if len(by_model) < k:
            have = sorted(by_model)
            raise DataError(
                f"top_k needs {k} models for ({dataset!r}, {condition!r}), "
                f"have {len(have)}: {have}")

        def sort_key(model):
            rs = by_model[model]
            acc = sum(r.accuracy for r in rs) / len(rs)
            if condition == CLEAN:
                return (-acc, model)
            asr = sum(r.asr for r in rs) / len(rs)
            return (asr, -acc, model)

        return sorted(by_model, key=sort_key)[:k]


def save_db(db: BenchmarkDB, path):
    with open(path, "w", encoding="utf-8") as f:
        for rec in db.records:
            f.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


def load_db(path) -> BenchmarkDB:
    db = BenchmarkDB()
    try:
        f = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read database: {e}") from e
    with f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                rec = PerfRecord.from_dict(d)
            except (json.JSONDecodeError, TypeError, DataError, InvariantError) as e:
                raise DataError(f"{path}:{lineno}: bad record: {e}") from e
            try:
                db.append(rec)
            except DataError as e:
                raise DataError(f"{path}:{lineno}: {e}") from e
    return db


@dataclass(frozen=True)
class OverheadLedger:
    """Cost comparison between the cheap selection path and exhaustive training."""

    oracle_seconds: float
    relate_seconds: float
    similarity_seconds: float
    reduction_percent: float

    def __post_init__(self):
        for name in ("oracle_seconds", "relate_seconds", "similarity_seconds"):
            _check_seconds(name, getattr(self, name))
        if self.similarity_seconds > self.relate_seconds:
            raise InvariantError(
                "similarity_seconds cannot exceed relate_seconds "
                f"({self.similarity_seconds} > {self.relate_seconds})")
        expect = 100.0 * (1.0 - self.relate_seconds / self.oracle_seconds)
        if self.reduction_percent != expect:
            raise InvariantError(
                f"reduction_percent {self.reduction_percent} does not match "
                f"100*(1 - relate/oracle) = {expect}")

    def to_dict(self):
        return {
            "oracle_seconds": float(self.oracle_seconds),
            "relate_seconds": float(self.relate_seconds),
            "similarity_seconds": float(self.similarity_seconds),
            "reduction_percent": float(self.reduction_percent),
        }

    @classmethod
    def from_dict(cls, d):
        allowed = {"oracle_seconds", "relate_seconds",
                   "similarity_seconds", "reduction_percent"}
        if set(d) != allowed:
            raise DataError(f"ledger fields must be {sorted(allowed)}, got {sorted(d)}")
        return cls(**d)


def make_ledger(oracle_seconds, relate_seconds, similarity_seconds) -> OverheadLedger:
    """Build a ledger from recorded seconds; the reduction is derived, never stored twice."""
    if oracle_seconds <= 0.0:
        raise InvariantError(f"oracle_seconds must be positive, got {oracle_seconds}")
    reduction = 100.0 * (1.0 - relate_seconds / oracle_seconds)
    return OverheadLedger(
        oracle_seconds=float(oracle_seconds),
        relate_seconds=float(relate_seconds),
        similarity_seconds=float(similarity_seconds),
        reduction_percent=reduction,
    )


def overhead_report(ledgers) -> OverheadLedger:
    """Combine per-run ledgers by summing their recorded seconds."""
    ledgers = list(ledgers)
    if not ledgers:
        raise DataError("overhead_report needs at least one ledger")
    return make_ledger(
        sum(l.oracle_seconds for l in ledgers),
        sum(l.relate_seconds for l in ledgers),
        sum(l.similarity_seconds for l in ledgers),
    )
