"""Command-line surface: generate data, build the database, run cases.

One JSON config file drives every command; a handful of flags override
single settings. All outputs are deterministic for a given config, so
reruns and parallel runs produce byte-identical files.
"""

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

from . import timing
from .attacks import FAMILIES as ATTACK_FAMILIES
from .attacks import AttackSpec, apply_attack_to_split, attack_success_rate
from .benchdb import (CLEAN, BenchmarkDB, OverheadLedger, PerfRecord, load_db,
                      overhead_report, save_db)
from .data import (SplitSpec, default_corpus_config, generate_synthetic_corpus,
                   load_dataset, save_dataset, split_train_val)
from .errors import ConfigError, DataError, InvariantError, SimselError
from .selector import (CaseConfig, run_one_rotation, run_rotation,
                       warm_encoder_cache)
from .simengine import METRICS
from .zoo import HyperGrid, default_zoo, evaluate, load_registry, train_model, tune

_CONFIG_FIELDS = {
    "seed": int,
    "out_dir": str,
    "corpus_dir": str,
    "db_path": (str, type(None)),
    "registry_path": (str, type(None)),
    "attack_families": list,
    "attack": (dict, type(None)),
    "attack_pool": list,
    "k_segments": int,
    "repeats": int,
    "mc_trials": int,
    "metric": str,
    "encoder_seed": int,
    "split_seed": int,
    "deterministic_timing": bool,
    "jobs": int,
}


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs, from one JSON file plus flag overrides."""

    seed: int = 0
    out_dir: str = "out"
    corpus_dir: str = "corpus"
    db_path: str = None
    registry_path: str = None
    attack_families: tuple = ("fgsm", "bim", "pgd")
    attack: dict = None  # case 2; falls back to the first attack family
    attack_pool: tuple = ()
    k_segments: int = 5
    repeats: int = 0
    mc_trials: int = 1000
    metric: str = "embed_cosine"
    encoder_seed: int = 0
    split_seed: int = 0
    deterministic_timing: bool = True
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "attack_families", tuple(self.attack_families))
        object.__setattr__(self, "attack_pool", tuple(self.attack_pool))
        for fam in self.attack_families:
            if fam not in ATTACK_FAMILIES:
                raise ConfigError(f"unknown attack family {fam!r}")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown similarity metric {self.metric!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    @property
    def resolved_db_path(self):
        return self.db_path or os.path.join(self.out_dir, "benchdb.jsonl")


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    unknown = set(raw) - set(_CONFIG_FIELDS)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    for key, want in _CONFIG_FIELDS.items():
        if key in raw and not isinstance(raw[key], want):
            raise ConfigError(f"{path}: {key} has the wrong type")
    return RunConfig(**raw)


def _attack_spec(d) -> AttackSpec:
    if not isinstance(d, dict) or "family" not in d:
        raise ConfigError(f"an attack needs at least a 'family', got {d!r}")
    try:
        return AttackSpec(**d)
    except TypeError as e:
        raise ConfigError(f"bad attack settings {d!r}: {e}") from e


def _case2_attack(cfg: RunConfig) -> AttackSpec:
    if cfg.attack is not None:
        return _attack_spec(cfg.attack)
    if not cfg.attack_families:
        raise ConfigError("case 2 needs an 'attack' entry or attack_families")
    return AttackSpec(family=cfg.attack_families[0])


def case_config(cfg: RunConfig, case: int) -> CaseConfig:
    attack = _case2_attack(cfg) if case == 2 else None
    pool = ()
    if case in (3, 4):
        if cfg.attack_pool:
            pool = tuple(_attack_spec(d) for d in cfg.attack_pool)
        else:
            pool = tuple(AttackSpec(family=f) for f in cfg.attack_families)
    return CaseConfig(
        case=case,
        metric=cfg.metric,
        attack=attack,
        attack_pool=pool,
        k_segments=cfg.k_segments,
        repeats=cfg.repeats,
        mc_trials=cfg.mc_trials,
        seed=cfg.seed,
        encoder_seed=cfg.encoder_seed,
        split_seed=cfg.split_seed,
    )


def _registry(cfg: RunConfig):
    if cfg.registry_path:
        return load_registry(cfg.registry_path)
    return default_zoo(), HyperGrid()


def load_corpus(cfg: RunConfig):
    manifest = os.path.join(cfg.corpus_dir, "manifest.json")
    try:
        with open(manifest, "r", encoding="utf-8") as f:
            names = json.load(f)["datasets"]
    except OSError as e:
        raise DataError(f"cannot read corpus manifest {manifest}: {e}") from e
    except (json.JSONDecodeError, KeyError) as e:
        raise DataError(f"{manifest}: bad manifest: {e}") from e
    return [load_dataset(os.path.join(cfg.corpus_dir, name)) for name in names]


# ------------------------------------------------------------------ workers

def _init_worker(deterministic):
    timing.set_deterministic(deterministic)


def _hyperparams(config):
    return {
        "optimizer": config.optimizer,
        "learning_rate": config.learning_rate,
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "l2_penalty": config.l2_penalty,
    }


def build_records(ds, arch, grid, attack_families, seed, split_seed):
    """Tune, train, and measure one model on one dataset, clean then attacked."""
    train_part, val_part = split_train_val(ds, SplitSpec(seed=split_seed))
    watch = timing.Stopwatch()
    tuned = tune(arch, train_part, val_part, (ds.n_channels, ds.length),
                 ds.n_classes, grid, seed=seed)
    tune_seconds = watch.seconds()
    tm = train_model(arch, tuned.config, ds, seed=seed)
    hp = _hyperparams(tuned.config)
    clean = evaluate(tm, ds.test)
    records = [PerfRecord(
        dataset=ds.name, model=arch.family, condition=CLEAN, seed=seed,
        accuracy=clean.accuracy, f1_macro=clean.f1_macro,
        train_seconds=tm.train_seconds, tune_seconds=tune_seconds,
        hyperparams=hp)]
    for family in attack_families:
        spec = AttackSpec(family=family, seed=seed)
        attacked = apply_attack_to_split(tm, ds.test, spec)
        adv = evaluate(tm, attacked.adversarial)
        records.append(PerfRecord(
            dataset=ds.name, model=arch.family, condition=family, seed=seed,
            accuracy=adv.accuracy, f1_macro=adv.f1_macro,
            asr=attack_success_rate(tm, attacked),
            attack_seconds=attacked.seconds, hyperparams=hp))
    return records


def _build_task(args):
    ds, arch, grid, families, seed, split_seed = args
    return build_records(ds, arch, grid, families, seed, split_seed)


_WORKER_CACHE = {}


def _rotation_task(args):
    corpus, db, case_cfg, name, repeat, zoo = args
    warm_encoder_cache(corpus, case_cfg, _WORKER_CACHE)
    result = run_one_rotation(corpus, db, case_cfg, name, repeat,
                              _WORKER_CACHE, zoo)
    return result.to_dict()


def _run_tasks(task_fn, tasks, jobs, deterministic):
    if jobs == 1 or len(tasks) <= 1:
        return [task_fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                             initargs=(deterministic,)) as pool:
        return list(pool.map(task_fn, tasks))


# ----------------------------------------------------------------- commands

def cmd_gen(cfg: RunConfig, force=False):
    os.makedirs(cfg.corpus_dir, exist_ok=True)
    existing = [e for e in os.listdir(cfg.corpus_dir) if not e.startswith(".")]
    if existing and not force:
        raise ConfigError(
            f"{cfg.corpus_dir} is not empty; pass --force to overwrite")
    corpus = generate_synthetic_corpus(default_corpus_config(), seed=cfg.seed)
    names = []
    for ds in corpus:
        save_dataset(ds, os.path.join(cfg.corpus_dir, ds.name))
        names.append(ds.name)
    manifest = {"seed": cfg.seed, "datasets": names}
    _write_json(os.path.join(cfg.corpus_dir, "manifest.json"), manifest)
    print(f"wrote {len(names)} datasets to {cfg.corpus_dir}")


def cmd_build_db(cfg: RunConfig):
    corpus = load_corpus(cfg)
    archs, grid = _registry(cfg)
    db_path = cfg.resolved_db_path
    db = load_db(db_path) if os.path.exists(db_path) else BenchmarkDB()

    conditions = (CLEAN,) + cfg.attack_families
    tasks = []
    for ds in corpus:
        for arch in archs:
            done = all(db.has_key(ds.name, arch.family, c, cfg.seed)
                       for c in conditions)
            if not done:
                tasks.append((ds, arch, grid, cfg.attack_families,
                              cfg.seed, cfg.split_seed))
    new = 0
    for records in _run_tasks(_build_task, tasks, cfg.jobs, cfg.deterministic_timing):
        for rec in records:
            if not db.has_key(*rec.key):
                db.append(rec)
                new += 1
    os.makedirs(os.path.dirname(db_path) or ".", exist_ok=True)
    save_db(db, db_path)
    print(f"database {db_path}: {len(db)} records ({new} new)")


def _rotation_rows(results):
    rows = []
    for r in results:
        led = r["ledger"]
        rows.append({
            "incoming": r["incoming"],
            "case": r["case"],
            "repeat": r["repeat"],
            "condition": r["condition"],
            "metric": r["metric"],
            "most_similar": r["most_similar"],
            "similarity_score": r["similarity_score"],
            "top3": "|".join(r["top3"]),
            "chosen_best": r["chosen_best"],
            "relate": r["chosen_metric"],
            "oracle": r["baselines"]["oracle"],
            "random_mean": r["baselines"]["random_mean"],
            "worst": r["baselines"]["worst"],
            "oracle_seconds": led["oracle_seconds"],
            "relate_seconds": led["relate_seconds"],
            "similarity_seconds": led["similarity_seconds"],
            "reduction_percent": led["reduction_percent"],
        })
    return rows


def _summary_rows(results):
    by_case = {}
    for r in results:
        by_case.setdefault(r["case"], []).append(r)
    rows = []
    for case in sorted(by_case):
        rs = by_case[case]
        n = len(rs)
        rows.append({
            "case": case,
            "metric": rs[0]["metric"],
            "rotations": n,
            "Oracle": sum(x["baselines"]["oracle"] for x in rs) / n,
            "ReLATE": sum(x["chosen_metric"] for x in rs) / n,
            "Random": sum(x["baselines"]["random_mean"] for x in rs) / n,
            "Worst": sum(x["baselines"]["worst"] for x in rs) / n,
        })
    return rows


def _write_csv(path, rows, delimiter=","):
    if not rows:
        raise DataError(f"nothing to write to {path}")
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]), delimiter=delimiter)
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v
                        for k, v in row.items()})


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _run_case_results(cfg: RunConfig, case: int, corpus, db, zoo):
    case_cfg = case_config(cfg, case)
    names = [ds.name for ds in corpus]
    tasks = [(corpus, db, case_cfg, name, repeat, zoo)
             for name in names for repeat in range(case_cfg.resolved_repeats)]
    return _run_tasks(_rotation_task, tasks, cfg.jobs, cfg.deterministic_timing)


def _emit_reports(cfg: RunConfig, results):
    out = cfg.out_dir
    os.makedirs(os.path.join(out, "results"), exist_ok=True)
    for r in results:
        name = f"case{r['case']}_{r['incoming']}_r{r['repeat']}.json"
        _write_json(os.path.join(out, "results", name), r)
    _write_csv(os.path.join(out, "rotations.csv"), _rotation_rows(results))
    _write_csv(os.path.join(out, "summary.csv"), _summary_rows(results))
    ledgers = [OverheadLedger.from_dict(r["ledger"]) for r in results]
    _write_json(os.path.join(out, "ledger.json"), overhead_report(ledgers).to_dict())


def cmd_run_case(cfg: RunConfig, case: int):
    corpus = load_corpus(cfg)
    db = load_db(cfg.resolved_db_path)
    archs, _ = _registry(cfg)
    _require_records(db, corpus, cfg, case)
    results = _run_case_results(cfg, case, corpus, db, archs)
    _emit_reports(cfg, results)
    summary = _summary_rows(results)[0]
    print(f"case {case}: Oracle={summary['Oracle']:.4f} ReLATE={summary['ReLATE']:.4f} "
          f"Random={summary['Random']:.4f} Worst={summary['Worst']:.4f}")


def _require_records(db, corpus, cfg: RunConfig, case: int):
    """Fail before any training if the database cannot serve the case."""
    if case == 1:
        needed = [CLEAN]
    elif case == 2:
        needed = [CLEAN, _case2_attack(cfg).family]
    else:
        pool = cfg.attack_pool or [{"family": f} for f in cfg.attack_families]
        needed = [CLEAN] + sorted({_attack_spec(d).family for d in pool})
    for ds in corpus:
        for cond in needed:
            if not db.query(dataset=ds.name, condition=cond):
                raise DataError(
                    f"database has no {cond!r} records for {ds.name!r}; "
                    f"run build-db first")


def cmd_compare_similarity(cfg: RunConfig):
    corpus = load_corpus(cfg)
    db = load_db(cfg.resolved_db_path)
    archs, _ = _registry(cfg)
    rows = []
    for metric in METRICS:
        mcfg = replace(cfg, metric=metric)
        for case in (1, 2, 3, 4):
            _require_records(db, corpus, mcfg, case)
            results = _run_case_results(mcfg, case, corpus, db, archs)
            n = len(results)
            oracle = sum(r["baselines"]["oracle"] for r in results) / n
            relate = sum(r["chosen_metric"] for r in results) / n
            gap = (oracle - relate) if case == 1 else (relate - oracle)
            rows.append({
                "metric": metric,
                "case": case,
                "Oracle": oracle,
                "ReLATE": relate,
                "gap": gap,
                "relate_seconds": sum(r["ledger"]["relate_seconds"] for r in results),
            })
    os.makedirs(cfg.out_dir, exist_ok=True)
    _write_csv(os.path.join(cfg.out_dir, "similarity_comparison.tsv"), rows,
               delimiter="\t")
    print(f"wrote {len(rows)} rows to "
          f"{os.path.join(cfg.out_dir, 'similarity_comparison.tsv')}")


def cmd_report(cfg: RunConfig):
    res_dir = os.path.join(cfg.out_dir, "results")
    try:
        names = sorted(os.listdir(res_dir))
    except OSError as e:
        raise DataError(f"no results under {cfg.out_dir}: {e}") from e
    results = []
    for name in names:
        if name.endswith(".json"):
            with open(os.path.join(res_dir, name), "r", encoding="utf-8") as f:
                results.append(json.load(f))
    if not results:
        raise DataError(f"no result files in {res_dir}")
    results.sort(key=lambda r: (r["case"], r["incoming"], r["repeat"]))
    _write_csv(os.path.join(cfg.out_dir, "rotations.csv"), _rotation_rows(results))
    _write_csv(os.path.join(cfg.out_dir, "summary.csv"), _summary_rows(results))
    ledgers = [OverheadLedger.from_dict(r["ledger"]) for r in results]
    _write_json(os.path.join(cfg.out_dir, "ledger.json"),
                overhead_report(ledgers).to_dict())
    print(f"rebuilt reports from {len(results)} results in {cfg.out_dir}")


# --------------------------------------------------------------- arg parsing

def _add_common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--jobs", type=int, help="worker processes (default 1)")
    p.add_argument("--metric", choices=METRICS, help="similarity metric")
    p.add_argument("--out-dir", help="output directory")
    p.add_argument("--corpus-dir", help="dataset directory")
    p.add_argument("--db-path", help="benchmark database path")
    p.add_argument("--wall-clock", action="store_true",
                   help="record real elapsed time instead of deterministic cost units")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="simsel",
        description="Resilient model selection for time-series classification")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate the synthetic corpus")
    _add_common(p)
    p.add_argument("--force", action="store_true", help="overwrite existing data")

    p = sub.add_parser("build-db", help="train the zoo and fill the database")
    _add_common(p)

    p = sub.add_parser("run-case", help="run one selection case over the corpus")
    _add_common(p)
    p.add_argument("--case", type=int, choices=(1, 2, 3, 4), required=True)

    p = sub.add_parser("compare-similarity",
                       help="run all cases under every similarity metric")
    _add_common(p)

    p = sub.add_parser("report", help="rebuild reports from saved results")
    _add_common(p)
    return parser


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    updates = {}
    for flag, key in (("seed", "seed"), ("jobs", "jobs"), ("metric", "metric"),
                      ("out_dir", "out_dir"), ("corpus_dir", "corpus_dir"),
                      ("db_path", "db_path")):
        val = getattr(args, flag, None)
        if val is not None:
            updates[key] = val
    if getattr(args, "wall_clock", False):
        updates["deterministic_timing"] = False
    return replace(cfg, **updates) if updates else cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    # encoders are keyed by dataset name; a new invocation may bring a new
    # corpus under the same names
    _WORKER_CACHE.clear()
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        timing.set_deterministic(cfg.deterministic_timing)
        os.makedirs(cfg.out_dir, exist_ok=True)
        if args.command == "gen":
            cmd_gen(cfg, force=args.force)
        elif args.command == "build-db":
            cmd_build_db(cfg)
        elif args.command == "run-case":
            cmd_run_case(cfg, args.case)
        elif args.command == "compare-similarity":
            cmd_compare_similarity(cfg)
        elif args.command == "report":
            cmd_report(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except InvariantError as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return 4
    except SimselError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
