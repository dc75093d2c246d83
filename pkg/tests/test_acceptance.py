"""End-to-end acceptance checks, one per shipped guarantee.

Each test prints a single "criterion N: PASS/FAIL (...)" line with the
measured numbers, then asserts. Heavy shared state (the full benchmark
pipeline) is built once per module.
"""

import json
import time
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from simsel import cli
from simsel.attacks import (AttackSpec, PredictOnly, boundary_attack,
                            deepfool, fgsm, iterative_attack, zoo_attack)
from simsel.benchdb import load_db
from simsel.data import default_corpus_config, generate_synthetic_corpus
from simsel.nncore import build_network, check_gradients, draw_safe_batch
from simsel.seeding import rng_from
from simsel.selector import CaseConfig, compute_baselines, run_rotation
from simsel.simengine import (cosine_similarity, dtw_distance,
                              rank_candidates, wasserstein_1d)
from simsel.zoo import ArchSpec, instantiate

from conftest import random_net


def verdict(n, ok, detail):
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {n}: {detail}"


# --------------------------------------------------------------- criterion 1

def test_criterion_1_gradients_on_100_random_networks():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        net = random_net(seed)
        rng = rng_from(seed, "c1batch")
        x, labels = draw_safe_batch(net, 3, rng)
        train_mode = seed % 3 == 0
        err = check_gradients(
            net, x, labels, train_mode=train_mode,
            mask_rng=rng_from(seed, "c1mask") if train_mode else None,
            max_coords=25, coord_rng=rng_from(seed, "c1coords"))
        worst = max(worst, err)
    elapsed = time.perf_counter() - start
    verdict(1, worst < 1e-4 and elapsed < 60,
            f"100 networks, max gradient error {worst:.3e} < 1e-4, "
            f"{elapsed:.1f}s < 60s")


# --------------------------------------------------------------- criterion 2

def _attack_victims(count, tag):
    nets = []
    for i in range(count):
        rng = rng_from(i, tag)
        c, length = int(rng.integers(1, 4)), int(rng.integers(8, 16))
        spec = instantiate(ArchSpec("mlp", width=8, depth=1), (c, length),
                           int(rng.integers(2, 4)))
        nets.append(build_network(spec, seed=i))
    return nets


class _GradCounter:
    """Prediction passthrough that counts any gradient-path call."""

    def __init__(self, net):
        self.net = self
        self._inner = net
        self.grad_calls = 0

    def predict_proba(self, x):
        return self._inner.predict_proba(x)

    def predict(self, x):
        return self._inner.predict(x)

    def input_gradient(self, *a, **k):
        self.grad_calls += 1
        return self._inner.input_gradient(*a, **k)

    def logit_input_jacobian(self, *a, **k):
        self.grad_calls += 1
        return self._inner.logit_input_jacobian(*a, **k)

    def loss_and_gradients(self, *a, **k):
        self.grad_calls += 1
        return self._inner.loss_and_gradients(*a, **k)


def test_criterion_2_attack_contracts_over_1000_trials():
    start = time.perf_counter()
    trials = 0

    # 250 trials: zero-budget single-step attack is the exact identity
    nets = _attack_victims(10, "c2id")
    identity_ok = True
    for t in range(250):
        rng = rng_from(t, "c2a")
        net = nets[t % len(nets)]
        c, length = net.spec.input_shape
        x = rng.normal(size=(c, length))
        label = int(rng.integers(0, net.n_classes))
        adv = fgsm(net, x, label, eps=0.0)
        identity_ok = identity_ok and np.array_equal(adv, x)
        trials += 1

    # 350 trials: every box-constrained family stays inside its budget
    nets = _attack_victims(10, "c2box")
    worst_excess = -np.inf
    for t in range(350):
        rng = rng_from(t, "c2b")
        net = nets[t % len(nets)]
        c, length = net.spec.input_shape
        x = rng.normal(size=(c, length))
        label = int(rng.integers(0, net.n_classes))
        family = ["fgsm", "bim", "mim", "pgd", "zoo"][int(rng.integers(0, 5))]
        eps = float(rng.uniform(0.01, 0.5))
        spec = AttackSpec(family, epsilon=eps,
                          alpha=eps * float(rng.uniform(0.1, 1.0)),
                          iters=int(rng.integers(1, 6)), query_budget=40)
        if family == "fgsm":
            adv = fgsm(net, x, label, eps)
        elif family == "zoo":
            adv = zoo_attack(net, x, label, spec, rng_from(t, "c2bz"))
        else:
            adv = iterative_attack(net, x, label, spec, rng_from(t, "c2bp"))
        worst_excess = max(worst_excess, float(np.abs(adv - x).max()) - eps)
        trials += 1

    # 200 trials: gradient-free attacks never touch a gradient method
    nets = _attack_victims(5, "c2bb")
    grad_calls = 0
    zoo_over_budget = 0
    for t in range(200):
        rng = rng_from(t, "c2c")
        counter = _GradCounter(nets[t % len(nets)])
        c, length = counter._inner.spec.input_shape
        x = rng.normal(size=(c, length))
        label = int(rng.integers(0, counter._inner.n_classes))
        if t % 2 == 0:
            oracle = PredictOnly(counter)
            spec = AttackSpec("zoo", epsilon=0.2, alpha=0.05, iters=3,
                              query_budget=60)
            zoo_attack(oracle, x, label, spec, rng_from(t, "c2cz"))
            zoo_over_budget += oracle.query_count > 60
        else:
            spec = AttackSpec("boundary", query_budget=150)
            boundary_attack(counter, x, label, spec, rng_from(t, "c2cb"))
        grad_calls += counter.grad_calls
        trials += 1

    # 200 trials: minimal-perturbation attack matches the binary-linear
    # closed form x + (1 + overshoot) * (|f| / |w|^2) * w
    df_worst = 0.0
    df_flips = 0
    for t in range(200):
        rng = rng_from(t, "c2d")
        c, length = int(rng.integers(1, 4)), int(rng.integers(6, 16))
        net = build_network(instantiate(ArchSpec("linear"), (c, length), 2),
                            seed=t)
        x = rng.normal(size=(c, length))
        logits = net.forward(x[None])[0]
        jac = net.logit_input_jacobian(x)
        k0 = int(logits.argmax())
        w = jac[1 - k0] - jac[k0]
        f = logits[1 - k0] - logits[k0]
        expected = x + 1.02 * ((abs(f) + 1e-12) / (w**2).sum()) * w
        res = deepfool(net, x)
        df_worst = max(df_worst, float(np.abs(res.x_adv - expected).max()))
        df_flips += res.flipped
        trials += 1

    elapsed = time.perf_counter() - start
    ok = (trials == 1000 and identity_ok and worst_excess <= 1e-9
          and grad_calls == 0 and zoo_over_budget == 0
          and df_worst <= 1e-8 and df_flips == 200 and elapsed < 120)
    verdict(2, ok,
            f"{trials} trials: identity exact, box excess {worst_excess:.2e} "
            f"<= 1e-9, gradient calls {grad_calls} == 0, closed-form error "
            f"{df_worst:.2e} <= 1e-8, {df_flips}/200 flips, "
            f"{elapsed:.1f}s < 120s")


# --------------------------------------------------------------- criterion 3

def brute_force_dtw(a, b):
    n, m = len(a), len(b)
    best = [np.inf]

    def walk(i, j, cost):
        d = a[i] - b[j]
        cost = cost + d * d
        if cost >= best[0]:
            return
        if i == n - 1 and j == m - 1:
            best[0] = cost
            return
        if i + 1 < n:
            walk(i + 1, j, cost)
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, cost)
        if j + 1 < m:
            walk(i, j + 1, cost)

    walk(0, 0, 0.0)
    return best[0]


def test_criterion_3_similarity_metrics_match_oracles():
    start = time.perf_counter()
    rng = rng_from(0, "c3")
    dtw_exact = 0
    for _ in range(200):
        a = rng.normal(size=int(rng.integers(1, 7)))
        b = rng.normal(size=int(rng.integers(1, 7)))
        dtw_exact += dtw_distance(a, b) == brute_force_dtw(a, b)

    w1_worst = 0.0
    for _ in range(100):
        a = np.sort(rng.normal(size=3))
        b = np.sort(rng.normal(size=3))
        w1_worst = max(w1_worst, abs(wasserstein_1d(a, b) - np.abs(a - b).mean()))
        shift = float(rng.uniform(-5, 5))
        w1_worst = max(w1_worst, abs(wasserstein_1d(a + shift, b + shift)
                                     - wasserstein_1d(a, b)))

    anchors_ok = (cosine_similarity([1.0, 0.0], [1.0, 0.0]) == 1.0
                  and cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0
                  and abs(cosine_similarity([1.0, 0.0], [1.0, 1.0]) - 2**-0.5)
                  < 1e-15)
    elapsed = time.perf_counter() - start
    ok = (dtw_exact == 200 and w1_worst <= 1e-9 and anchors_ok
          and elapsed < 60)
    verdict(3, ok,
            f"warping distance exact on {dtw_exact}/200 enumerated pairs, "
            f"transport error {w1_worst:.2e} <= 1e-9, cosine anchors exact, "
            f"{elapsed:.1f}s < 60s")


# --------------------------------------------------------------- criterion 4

def test_criterion_4_every_metric_matches_the_exact_copy():
    start = time.perf_counter()
    corpus = generate_synthetic_corpus(default_corpus_config(), seed=0)
    cache = {}
    checks = 0
    failures = []
    for probe_src in corpus:
        probe = replace(probe_src, name=f"probe_{probe_src.name}")
        for seed in range(10):
            for metric in ("embed_cosine", "dtw", "wasserstein"):
                report = rank_candidates(probe, corpus, metric, "clean",
                                         seed, cache=cache)
                checks += 1
                if report.ranking[0] != probe_src.name:
                    failures.append((probe_src.name, seed, metric,
                                     report.ranking[0]))
    elapsed = time.perf_counter() - start
    verdict(4, not failures and elapsed < 300,
            f"exact copy ranked first in {checks - len(failures)}/{checks} "
            f"probe x seed x metric checks, {elapsed:.1f}s < 300s")


# ------------------------------------------------------- criteria 5 through 7

@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    """Full pipeline: corpus on disk, benchmark database, both rotations."""
    root = tmp_path_factory.mktemp("bench")
    corpus_dir, out = str(root / "corpus"), str(root / "out")
    start = time.perf_counter()
    assert cli.main(["gen", "--corpus-dir", corpus_dir,
                     "--out-dir", out]) == 0
    assert cli.main(["build-db", "--corpus-dir", corpus_dir,
                     "--out-dir", out]) == 0
    corpus = cli.load_corpus(cli.RunConfig(corpus_dir=corpus_dir,
                                           out_dir=out))
    db = load_db(root / "out" / "benchdb.jsonl")
    case1 = run_rotation(corpus, db, CaseConfig(case=1, mc_trials=1000))
    case2 = run_rotation(corpus, db, CaseConfig(
        case=2, attack=AttackSpec("fgsm", seed=0), mc_trials=1000))
    return SimpleNamespace(case1=case1, case2=case2, db=db,
                           seconds=time.perf_counter() - start)


def test_criterion_5_rotation_protocol_invariants(bench):
    problems = []
    for res in bench.case1 + bench.case2:
        b = res.baselines
        lo, hi = ((b["worst"], b["oracle"]) if res.case == 1
                  else (b["oracle"], b["worst"]))
        if not lo <= b["random_mean"] <= hi:
            problems.append(f"{res.incoming}: random outside envelope")
        if res.chosen_best not in res.top3:
            problems.append(f"{res.incoming}: chosen not in top3")
        cand = [res.candidate_metrics[m] for m in res.top3]
        best = max(cand) if res.case == 1 else min(cand)
        if res.candidate_metrics[res.chosen_best] != best:
            problems.append(f"{res.incoming}: chosen not the candidates' best")
        if not lo <= res.chosen_metric <= hi:
            problems.append(f"{res.incoming}: chosen outside envelope")
        if res.most_similar == res.incoming:
            problems.append(f"{res.incoming}: matched itself")
    n = len(bench.case1) + len(bench.case2)
    ok = not problems and n == 14 and bench.seconds < 1800
    verdict(5, ok,
            f"{n} rotations (clean + single-attack), every envelope and "
            f"selection invariant held, pipeline {bench.seconds:.0f}s < 1800s"
            + ("" if not problems else f"; problems: {problems[:3]}"))


def test_criterion_6_selection_tracks_the_random_baseline(bench):
    relate = float(np.mean([r.chosen_metric for r in bench.case1]))
    random_mean = float(np.mean([r.baselines["random_mean"]
                                 for r in bench.case1]))
    ok = relate >= random_mean - 0.01
    verdict(6, ok,
            f"clean-case mean accuracy: selected {relate:.4f} >= "
            f"random {random_mean:.4f} - 0.01")


def test_criterion_7_selection_cost_stays_under_the_bound(bench):
    oracle = sum(r.ledger.oracle_seconds for r in bench.case1)
    relate = sum(r.ledger.relate_seconds for r in bench.case1)
    ratio = relate / oracle
    bound = 3 / 6 + 0.15
    arithmetic_ok = all(
        r.ledger.reduction_percent
        == 100.0 * (1.0 - r.ledger.relate_seconds / r.ledger.oracle_seconds)
        for r in bench.case1 + bench.case2)
    ok = ratio <= bound and arithmetic_ok
    verdict(7, ok,
            f"aggregate selected/exhaustive cost {ratio:.3f} <= {bound:.2f}, "
            f"per-rotation reduction arithmetic exact: {arithmetic_ok}")


# --------------------------------------------------------------- criterion 8

def test_criterion_8_monte_carlo_baseline_is_unbiased():
    tol = 3 * np.sqrt(0.02 / 3) / np.sqrt(1000)
    devs = []
    for seed in range(5):
        out = compute_baselines({"a": 0.6, "b": 0.7, "c": 0.8}, "max",
                                1000, seed)
        devs.append(abs(out["random_mean"] - 0.7))
    worst = max(devs)
    verdict(8, worst <= tol,
            f"5 seeds, worst |random_mean - 0.7| = {worst:.5f} <= "
            f"3 sigma / sqrt(trials) = {tol:.5f}")


# --------------------------------------------------------------- criterion 9

def test_criterion_9_runs_are_byte_reproducible(tmp_path_factory):
    start = time.perf_counter()
    root = tmp_path_factory.mktemp("repro")
    corpus_dir = str(root / "corpus")
    assert cli.main(["gen", "--corpus-dir", corpus_dir,
                     "--out-dir", str(root / "gen_out")]) == 0

    outs = []
    for name, jobs in (("serial_a", None), ("serial_b", None), ("par", "4")):
        out = root / name
        argv = ["--corpus-dir", corpus_dir, "--out-dir", str(out)]
        if jobs:
            argv += ["--jobs", jobs]
        assert cli.main(["build-db", *argv]) == 0
        assert cli.main(["run-case", "--case", "1", *argv]) == 0
        outs.append(out)

    mismatches = []
    for fname in ("benchdb.jsonl", "summary.csv", "rotations.csv",
                  "ledger.json"):
        blobs = [(o / fname).read_bytes() for o in outs]
        if not (blobs[0] == blobs[1] == blobs[2]):
            mismatches.append(fname)
    elapsed = time.perf_counter() - start
    verdict(9, not mismatches,
            f"two serial runs and one 4-worker run byte-identical across "
            f"database and reports ({elapsed:.0f}s)"
            + ("" if not mismatches else f"; mismatched: {mismatches}"))
