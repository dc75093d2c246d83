"""Resilient model selection over the benchmark database.

An incoming dataset is matched to its most similar known dataset, that
dataset's three best-ranked models are re-trained on the incoming data,
and the best of the three is chosen. Exhaustive training of every model
(the expensive oracle), a seeded random pick, and the worst model bound
the result from above and below.

Four conditions are covered: clean data, one attack applied everywhere,
one attack pattern shared across datasets, and independent per-dataset
patterns. Patterns assign one attack family to each validation segment.
"""

from collections import Counter
from dataclasses import dataclass, replace

import numpy as np

from . import timing
from .attacks import AttackSpec, apply_attack_to_split
from .benchdb import CLEAN, BenchmarkDB, OverheadLedger, make_ledger
from .data import Dataset, InstanceSet, segment_validation
from .errors import ConfigError, DataError, InvariantError
from .nncore import TrainConfig
from .seeding import derive_seed, rng_from
from .simengine import METRICS, default_view, encoder_for, rank_candidates
from .zoo import default_zoo, evaluate, train_model

TOP_K = 3
CASES = (1, 2, 3, 4)


@dataclass(frozen=True)
class CaseConfig:
    """One evaluation condition plus the knobs shared by every rotation."""

    case: int
    metric: str = "embed_cosine"
    attack: AttackSpec = None
    attack_pool: tuple = ()
    k_segments: int = 5
    repeats: int = 0  # 0 resolves to the case default (1, 1, 5, 5)
    mc_trials: int = 1000
    seed: int = 0
    encoder_seed: int = 0
    split_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "attack_pool", tuple(self.attack_pool))
        if self.case not in CASES:
            raise ConfigError(f"case must be one of {CASES}, got {self.case}")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown similarity metric {self.metric!r}")
        if self.case == 1:
            if self.attack is not None or self.attack_pool:
                raise ConfigError("case 1 is clean: no attack or attack pool")
        elif self.case == 2:
            if not isinstance(self.attack, AttackSpec):
                raise ConfigError("case 2 requires exactly one attack")
            if self.attack_pool:
                raise ConfigError("case 2 takes a single attack, not a pool")
        else:
            if self.attack is not None:
                raise ConfigError(f"case {self.case} takes a pool, not a single attack")
            if not self.attack_pool:
                raise ConfigError(f"case {self.case} requires a non-empty attack pool")
            for spec in self.attack_pool:
                if not isinstance(spec, AttackSpec):
                    raise ConfigError(f"attack pool entries must be AttackSpec, got {spec!r}")
        if self.k_segments < 1:
            raise ConfigError("k_segments must be >= 1")
        if self.repeats < 0:
            raise ConfigError("repeats must be >= 0")
        if self.mc_trials < 1:
            raise ConfigError("mc_trials must be >= 1")

    @property
    def resolved_repeats(self):
        if self.repeats:
            return self.repeats
        return 1 if self.case in (1, 2) else 5

    @property
    def orientation(self):
        """Whether bigger candidate metric is better (accuracy vs attack success)."""
        return "max" if self.case == 1 else "min"


@dataclass(frozen=True)
class AttackPattern:
    """One attack family per validation segment, in segment order."""

    specs: tuple

    def __post_init__(self):
        if not self.specs:
            raise InvariantError("a pattern needs at least one segment")
        for spec in self.specs:
            if not isinstance(spec, AttackSpec):
                raise InvariantError(f"pattern entries must be AttackSpec, got {spec!r}")

    @property
    def label(self):
        return ",".join(s.family for s in self.specs)

    def family_counts(self):
        return Counter(s.family for s in self.specs)


def make_pattern(pool, k, seed) -> AttackPattern:
    """Uniform seeded draw of one pool entry per segment."""
    pool = tuple(pool)
    if not pool:
        raise ConfigError("attack pool must be non-empty")
    idx = rng_from(seed, "pattern").integers(0, len(pool), size=k)
    return AttackPattern(tuple(pool[i] for i in idx))


def pattern_for(cfg: CaseConfig, repeat: int, dataset_name: str):
    """The pattern a dataset sees in one repeat; None outside cases 3 and 4.

    Case 3 shares one pattern per repeat across every dataset; case 4
    derives an independent pattern per dataset.
    """
    if cfg.case == 3:
        return make_pattern(cfg.attack_pool, cfg.k_segments,
                            derive_seed(cfg.seed, "pattern", repeat))
    if cfg.case == 4:
        return make_pattern(cfg.attack_pool, cfg.k_segments,
                            derive_seed(cfg.seed, "pattern", repeat, dataset_name))
    return None


# ------------------------------------------------------------ conditioning

def condition_view(model, part: InstanceSet, cfg: CaseConfig, pattern,
                   dataset_name: str, repeat: int, side: str) -> InstanceSet:
    """The part as the case's condition presents it to ``model``.

    Case 1 returns the part untouched. Case 2 attacks every instance.
    Cases 3 and 4 cut the part into segments and attack each with its
    pattern entry. Attack seeds derive from each attack's own seed plus
    the stable (case seed, dataset, repeat, side, segment) labels, so
    reruns and parallel runs agree.
    """
    if cfg.case == 1:
        return part
    if cfg.case == 2:
        spec = replace(cfg.attack, seed=derive_seed(
            cfg.attack.seed, cfg.seed, "attack", dataset_name, repeat, side, 0))
        return apply_attack_to_split(model, part, spec).adversarial
    plan = segment_validation(
        part, cfg.k_segments,
        derive_seed(cfg.seed, "segments", dataset_name, repeat, side))
    adv_x = part.x.copy()
    for i, template in enumerate(pattern.specs):
        idx = list(plan.indices(i))
        spec = replace(template, seed=derive_seed(
            template.seed, cfg.seed, "attack", dataset_name, repeat, side, i))
        att = apply_attack_to_split(model, part.subset(idx), spec)
        adv_x[idx] = att.adversarial.x
    return InstanceSet(adv_x, part.y)


# ---------------------------------------------------------- top-3 selection

def mixed_top_k(db: BenchmarkDB, dataset: str, counts, k: int):
    """Models ranked by segment-count-weighted mean attack success rate.

    Each family's recorded rate is weighted by how many segments the
    pattern assigns it. Ties break by weighted adversarial accuracy
    (descending), then model id.
    """
    total = sum(counts.values())
    per_model = {}
    for family, weight in counts.items():
        recs = db.query(dataset=dataset, condition=family)
        by_model = {}
        for rec in recs:
            by_model.setdefault(rec.model, []).append(rec)
        for model, rs in by_model.items():
            asr = sum(r.asr for r in rs) / len(rs)
            acc = sum(r.accuracy for r in rs) / len(rs)
            per_model.setdefault(model, {})[family] = (asr, acc)
    complete = {m: fams for m, fams in per_model.items() if len(fams) == len(counts)}
    if len(complete) < k:
        raise DataError(
            f"mixed ranking needs {k} models covering families "
            f"{sorted(counts)} on {dataset!r}, have {sorted(complete)}")

    def sort_key(model):
        fams = complete[model]
        asr = sum(w * fams[f][0] for f, w in counts.items()) / total
        acc = sum(w * fams[f][1] for f, w in counts.items()) / total
        return (asr, -acc, model)

    return sorted(complete, key=sort_key)[:k]


def db_top_models(db: BenchmarkDB, dataset: str, cfg: CaseConfig, pattern, k=TOP_K):
    """The database's k best models for the case's ranking condition."""
    if cfg.case == 1:
        return db.top_k(dataset, CLEAN, k)
    if cfg.case == 2:
        return db.top_k(dataset, cfg.attack.family, k)
    return mixed_top_k(db, dataset, pattern.family_counts(), k)


def select_top3(incoming: Dataset, drive, db: BenchmarkDB, cfg: CaseConfig,
                repeat: int = 0, cache=None):
    """Match the incoming dataset and pull the match's top-ranked models.

    Returns (most_similar, similarity_score, top3, similarity_seconds).
    Similarity runs under the case's condition: attacked views are
    crafted against each dataset's own encoder, the only model known
    before selection. Drive encoders are reused from ``cache``; the
    incoming dataset's encoder is always trained inside the timed
    region, since a new arrival cannot have one yet.
    """
    if cache is None:
        cache = {}
    rot_cache = {key: enc for key, enc in cache.items() if key[0] != incoming.name}
    needs_encoders = cfg.metric == "embed_cosine" or cfg.case != 1
    watch = timing.Stopwatch()
    views = None
    if cfg.case != 1:
        views = {}
        for ds in (incoming, *drive):
            enc = encoder_for(ds, cfg.encoder_seed, cfg.split_seed, rot_cache)
            views[ds.name] = condition_view(
                enc, default_view(ds, cfg.split_seed), cfg,
                pattern_for(cfg, repeat, ds.name), ds.name, repeat, "similarity")
    elif needs_encoders:
        encoder_for(incoming, cfg.encoder_seed, cfg.split_seed, rot_cache)
    report = rank_candidates(incoming, drive, cfg.metric, condition_label(cfg, None),
                             cfg.encoder_seed, cfg.split_seed, views=views,
                             cache=rot_cache)
    most_similar = report.ranking[0]
    pattern = pattern_for(cfg, repeat, most_similar)
    top3 = db_top_models(db, most_similar, cfg, pattern)
    return most_similar, report.scores[most_similar], tuple(top3), watch.seconds()


def condition_label(cfg: CaseConfig, pattern):
    if cfg.case == 1:
        return CLEAN
    if cfg.case == 2:
        return cfg.attack.family
    return pattern.label if pattern is not None else "pattern"


# ------------------------------------------------------- candidate evaluation

def evaluate_model_under_case(arch, config: TrainConfig, incoming: Dataset,
                              cfg: CaseConfig, pattern, repeat: int, seed: int):
    """Train one model on the incoming data and measure it under the case.

    Returns a dict with clean metrics, the condition metric (accuracy for
    case 1, attack success rate otherwise), and the seconds spent.
    """
    watch = timing.Stopwatch()
    tm = train_model(arch, config, incoming, seed)
    clean = evaluate(tm, incoming.test)
    if cfg.case == 1:
        metric, asr, adv = clean.accuracy, None, clean
    else:
        adv_part = condition_view(tm, incoming.test, cfg, pattern,
                                  incoming.name, repeat, f"evaluation:{arch.family}")
        pred_clean = tm.predict(incoming.test.x)
        pred_adv = tm.predict(adv_part.x)
        asr = float((pred_clean != pred_adv).mean())
        adv = evaluate(tm, adv_part)
        metric = asr
    return {
        "model": arch.family,
        "accuracy": float(adv.accuracy),
        "f1_macro": float(adv.f1_macro),
        "clean_accuracy": float(clean.accuracy),
        "asr": asr,
        "metric": float(metric),
        "seconds": watch.seconds(),
    }


def compute_baselines(metrics, orientation, mc_trials, seed):
    """Oracle, worst, and a seeded Monte-Carlo mean over uniform model picks."""
    if not metrics:
        raise DataError("baselines need at least one evaluated model")
    if orientation not in ("max", "min"):
        raise ConfigError(f"orientation must be 'max' or 'min', got {orientation!r}")
    models = sorted(metrics)
    vals = np.array([metrics[m] for m in models], dtype=np.float64)
    oracle = vals.max() if orientation == "max" else vals.min()
    worst = vals.min() if orientation == "max" else vals.max()
    draws = rng_from(seed, "montecarlo").integers(0, len(models), size=mc_trials)
    # the true mean of draws lies in [min, max]; clamp away summation error
    mean = float(np.clip(vals[draws].mean(), vals.min(), vals.max()))
    return {
        "oracle": float(oracle),
        "random_mean": mean,
        "worst": float(worst),
    }


# ------------------------------------------------------------------ results

@dataclass(frozen=True)
class SelectionResult:
    """Everything one rotation produced, invariants checked on build."""

    incoming: str
    case: int
    repeat: int
    condition: str
    metric: str
    most_similar: str
    similarity_score: float
    top3: tuple
    candidate_metrics: dict
    chosen_best: str
    chosen_metric: float
    baselines: dict
    all_model_metrics: dict
    model_details: tuple
    ledger: OverheadLedger

    def __post_init__(self):
        if self.chosen_best not in self.top3:
            raise InvariantError(
                f"chosen model {self.chosen_best!r} is not one of top3 {self.top3}")
        cand = [self.candidate_metrics[m] for m in self.top3]
        best = max(cand) if self.case == 1 else min(cand)
        if self.candidate_metrics[self.chosen_best] != best:
            raise InvariantError("chosen model is not the best of the three")
        oracle, worst = self.baselines["oracle"], self.baselines["worst"]
        lo, hi = (worst, oracle) if self.case == 1 else (oracle, worst)
        for m, v in self.all_model_metrics.items():
            if not lo <= v <= hi:
                raise InvariantError(
                    f"model {m} metric {v} escapes [{lo}, {hi}]")
        if not lo <= self.baselines["random_mean"] <= hi:
            raise InvariantError("random_mean escapes the worst/oracle envelope")

    def to_dict(self):
        return {
            "incoming": self.incoming,
            "case": self.case,
            "repeat": self.repeat,
            "condition": self.condition,
            "metric": self.metric,
            "most_similar": self.most_similar,
            "similarity_score": float(self.similarity_score),
            "top3": list(self.top3),
            "candidate_metrics": {k: float(v) for k, v in self.candidate_metrics.items()},
            "chosen_best": self.chosen_best,
            "chosen_metric": float(self.chosen_metric),
            "baselines": {k: float(v) for k, v in self.baselines.items()},
            "all_model_metrics": {k: float(v) for k, v in self.all_model_metrics.items()},
            "model_details": [dict(d) for d in self.model_details],
            "ledger": self.ledger.to_dict(),
        }


def _zoo_map(zoo):
    return {arch.family: arch for arch in (zoo if zoo is not None else default_zoo())}


def _drive_hyperparams(db, dataset, model):
    recs = db.query(dataset=dataset, model=model, condition=CLEAN)
    if not recs:
        raise DataError(f"no clean record for ({dataset!r}, {model!r})")
    rec = recs[0]
    return TrainConfig(**rec.hyperparams), rec.tune_seconds


def run_one_rotation(corpus, db: BenchmarkDB, cfg: CaseConfig, incoming_name: str,
                     repeat: int = 0, cache=None, zoo=None) -> SelectionResult:
    """One arrival: match, select, evaluate candidates, bound with baselines.

    The oracle pass reuses the matched dataset's tuned hyperparameters for
    every model, exactly like the candidates do, so candidate evaluations
    are a subset of the oracle's and the cost ratio reflects three models
    against the full zoo rather than tuning differences.
    """
    by_name = {ds.name: ds for ds in corpus}
    if incoming_name not in by_name:
        raise DataError(f"unknown dataset {incoming_name!r}")
    incoming = by_name[incoming_name]
    drive = [ds for ds in corpus if ds.name != incoming_name]
    if not drive:
        raise DataError("rotation needs at least two datasets")

    most_similar, score, top3, sim_seconds = select_top3(
        incoming, drive, db, cfg, repeat, cache)
    pattern = pattern_for(cfg, repeat, incoming.name)
    archs = _zoo_map(zoo)
    all_models = sorted({r.model for r in db.query(dataset=most_similar, condition=CLEAN)})

    details = []
    for model in all_models:
        if model not in archs:
            raise DataError(f"database model {model!r} missing from the zoo")
        config, _ = _drive_hyperparams(db, most_similar, model)
        train_seed = derive_seed(cfg.seed, "train", incoming.name, model)
        details.append(evaluate_model_under_case(
            archs[model], config, incoming, cfg, pattern, repeat, train_seed))

    all_metrics = {d["model"]: d["metric"] for d in details}
    candidate_metrics = {m: all_metrics[m] for m in top3}
    if cfg.case == 1:
        chosen = min(top3, key=lambda m: (-candidate_metrics[m], m))
    else:
        chosen = min(top3, key=lambda m: (candidate_metrics[m], m))

    oracle_seconds = sum(d["seconds"] for d in details)
    relate_seconds = sim_seconds + sum(d["seconds"] for d in details if d["model"] in top3)
    baselines = compute_baselines(
        all_metrics, cfg.orientation, cfg.mc_trials,
        derive_seed(cfg.seed, "mc", incoming.name, repeat))

    return SelectionResult(
        incoming=incoming.name,
        case=cfg.case,
        repeat=repeat,
        condition=condition_label(cfg, pattern),
        metric=cfg.metric,
        most_similar=most_similar,
        similarity_score=float(score),
        top3=top3,
        candidate_metrics=candidate_metrics,
        chosen_best=chosen,
        chosen_metric=float(candidate_metrics[chosen]),
        baselines=baselines,
        all_model_metrics=all_metrics,
        model_details=tuple(details),
        ledger=make_ledger(oracle_seconds, relate_seconds, sim_seconds),
    )


def warm_encoder_cache(corpus, cfg: CaseConfig, cache=None):
    """Pre-train every dataset's encoder outside any timed region."""
    if cache is None:
        cache = {}
    if cfg.metric == "embed_cosine" or cfg.case != 1:
        for ds in corpus:
            encoder_for(ds, cfg.encoder_seed, cfg.split_seed, cache)
    return cache


def run_rotation(corpus, db: BenchmarkDB, cfg: CaseConfig, zoo=None):
    """Treat each dataset as the new arrival in turn, repeating as configured."""
    corpus = list(corpus)
    if len(corpus) < 2:
        raise DataError("rotation needs at least two datasets")
    cache = warm_encoder_cache(corpus, cfg)
    results = []
    for ds in corpus:
        for repeat in range(cfg.resolved_repeats):
            results.append(run_one_rotation(
                corpus, db, cfg, ds.name, repeat, cache, zoo))
    return results
