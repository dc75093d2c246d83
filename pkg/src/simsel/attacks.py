"""Adversarial example generation and the attack success rate.

White-box families (fgsm, bim, mim, pgd, deepfool) read input gradients
from the network. Black-box families (zoo, boundary) go through a
PredictOnly wrapper that exposes nothing but class probabilities, so a
gradient call is impossible by construction.

All perturbations act on normalized feature values; L-infinity families
clip to the epsilon box around the clean input every iteration.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from . import timing
from .data import InstanceSet
from .errors import ConfigError, DataError, InvariantError
from .seeding import derive_seed, rng_from

FAMILIES = ("fgsm", "bim", "mim", "pgd", "deepfool", "zoo", "boundary")
LINF_FAMILIES = ("fgsm", "bim", "mim", "pgd", "zoo")
_ZOO_FD_H = 1e-3


@dataclass(frozen=True)
class AttackSpec:
    family: str
    epsilon: float = 0.1
    alpha: float = 0.02
    iters: int = 10
    decay: float = 1.0
    overshoot: float = 0.02
    query_budget: int = 400
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown attack family {self.family!r}")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be non-negative")
        if self.iters < 1:
            raise ConfigError("iters must be >= 1")
        if self.query_budget < 1:
            raise ConfigError("query_budget must be >= 1")
        if self.family in ("bim", "mim", "pgd", "zoo") and self.alpha > self.epsilon:
            raise ConfigError(
                f"{self.family}: step size {self.alpha} exceeds budget {self.epsilon}"
            )

    def to_dict(self):
        return {
            "family": self.family, "epsilon": self.epsilon, "alpha": self.alpha,
            "iters": self.iters, "decay": self.decay, "overshoot": self.overshoot,
            "query_budget": self.query_budget, "seed": self.seed,
        }


def _net(model):
    return model.net if hasattr(model, "net") else model


class PredictOnly:
    """Prediction-only view of a model; counts every queried instance."""

    def __init__(self, model):
        self._proba = _net(model).predict_proba
        self.query_count = 0

    def proba(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        self.query_count += x.shape[0]
        return self._proba(x)

    def predict(self, x):
        return self.proba(x).argmax(axis=1)


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None], True
    return x, False


# ------------------------------------------------------------- white box

def fgsm(model, x, label, eps):
    """Single-step sign ascent: x + eps * sign(d loss / d x)."""
    net = _net(model)
    xb, single = _as_batch(x)
    labels = np.atleast_1d(np.asarray(label, dtype=np.intp))
    g = net.input_gradient(xb, labels)
    adv = xb + eps * np.sign(g)
    return adv[0] if single else adv


def iterative_attack(model, x, label, spec: AttackSpec, rng=None):
    """bim / mim / pgd: clipped sign steps inside the epsilon box.

    bim follows the raw gradient; mim accumulates an L1-normalized
    momentum; pgd is bim from a uniform random start (needs rng).
    """
    if spec.family not in ("bim", "mim", "pgd"):
        raise ConfigError(f"not an iterative family: {spec.family!r}")
    net = _net(model)
    xb, single = _as_batch(x)
    labels = np.atleast_1d(np.asarray(label, dtype=np.intp))
    lo, hi = xb - spec.epsilon, xb + spec.epsilon
    if spec.family == "pgd":
        if rng is None:
            raise InvariantError("pgd needs an rng for its random start")
        adv = xb + rng.uniform(-spec.epsilon, spec.epsilon, size=xb.shape)
    else:
        adv = xb.copy()
    momentum = np.zeros_like(xb)
    for _ in range(spec.iters):
        g = net.input_gradient(adv, labels)
        if spec.family == "mim":
            l1 = np.abs(g).sum(axis=(1, 2), keepdims=True)
            momentum = spec.decay * momentum + np.divide(
                g, l1, out=np.zeros_like(g), where=l1 > 0
            )
            step = np.sign(momentum)
        else:
            step = np.sign(g)
        adv = np.clip(adv + spec.alpha * step, lo, hi)
    return adv[0] if single else adv


@dataclass(frozen=True)
class DeepfoolResult:
    x_adv: np.ndarray
    flipped: bool
    iterations: int


def deepfool(model, x, max_iters=50, overshoot=0.02) -> DeepfoolResult:
    """Minimal-perturbation attack via per-step logit linearization.

    Moves toward the nearest linearized class boundary of the originally
    predicted class; the accumulated perturbation is scaled by
    (1 + overshoot). Not flipping within max_iters is a reported outcome.
    """
    net = _net(model)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[0]
    k0 = int(net.predict(x[None])[0])
    r_total = np.zeros_like(x)
    it = 0
    while it < max_iters:
        x_cur = x + (1.0 + overshoot) * r_total
        logits = net.forward(x_cur[None])[0]
        if int(logits.argmax()) != k0:
            return DeepfoolResult(x_cur, True, it)
        jac = net.logit_input_jacobian(x_cur)  # (classes, c, l)
        best = None
        for k in range(net.n_classes):
            if k == k0:
                continue
            w = jac[k] - jac[k0]
            f = logits[k] - logits[k0]
            wn = float(np.sqrt((w**2).sum()))
            if wn < 1e-12:
                continue
            score = abs(f) / wn
            if best is None or score < best[0]:
                best = (score, w, f, wn)
        if best is None:
            break
        _, w, f, wn = best
        # move to the linearized boundary f + w.delta = 0 (f <= 0 here
        # since k0 is the argmax); tiny floor keeps boundary points moving
        r_total = r_total + ((abs(f) + 1e-12) / wn**2) * w * (1.0 if f <= 0 else -1.0)
        it += 1
    x_cur = x + (1.0 + overshoot) * r_total
    flipped = int(net.predict(x_cur[None])[0]) != k0
    return DeepfoolResult(x_cur, flipped, it)


# ------------------------------------------------------------- black box

def estimate_coordinate_gradients(oracle: PredictOnly, x, label, coords, h=_ZOO_FD_H):
    """Central-difference estimates of d(-log p_label)/dx at flat coords.

    Costs exactly 2 queries per coordinate.
    """
    flat = x.reshape(-1)
    n = len(coords)
    probes = np.repeat(flat[None, :], 2 * n, axis=0)
    for j, c in enumerate(coords):
        probes[2 * j, c] += h
        probes[2 * j + 1, c] -= h
    p = oracle.proba(probes.reshape((2 * n,) + x.shape))
    tiny = np.finfo(np.float64).tiny
    losses = -np.log(p[:, label] + tiny)
    return (losses[0::2] - losses[1::2]) / (2 * h)


def zoo_attack(model, x, label, spec: AttackSpec, rng):
    """Gradient-free sign ascent from coordinate-wise difference estimates.

    Samples a coordinate subset per step, estimates gradients by symmetric
    differences, and takes clipped alpha-sign steps in the epsilon box.
    Total queries never exceed spec.query_budget.
    """
    if spec.query_budget < 2:
        raise ConfigError("zoo needs a query budget of at least 2")
    oracle = model if isinstance(model, PredictOnly) else PredictOnly(model)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[0]
    label = int(label)
    lo, hi = x - spec.epsilon, x + spec.epsilon
    n_coords = x.size
    per_step = max(1, min(n_coords, spec.query_budget // (2 * spec.iters)))
    adv = x.copy()
    budget = spec.query_budget
    for _ in range(spec.iters):
        m = min(per_step, budget // 2)
        if m < 1:
            break
        coords = rng.choice(n_coords, size=m, replace=False)
        g = estimate_coordinate_gradients(oracle, adv, label, coords)
        budget -= 2 * m
        flat = adv.reshape(-1).copy()
        flat[coords] += spec.alpha * np.sign(g)
        adv = np.clip(flat.reshape(x.shape), lo, hi)
    return adv


@dataclass(frozen=True)
class BoundaryResult:
    x_adv: np.ndarray
    succeeded: bool
    distance: float
    queries: int


def boundary_attack(model, x, label, spec: AttackSpec, rng) -> BoundaryResult:
    """Decision-based walk along the class boundary toward the input.

    Starts from seeded noise (up to 100 resamples until misclassified;
    otherwise a failure outcome). Each step proposes an orthogonal jitter
    plus a contraction toward x and is accepted only if the point stays
    misclassified and no farther away. Step sizes adapt to the recent
    acceptance rate.
    """
    oracle = model if isinstance(model, PredictOnly) else PredictOnly(model)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[0]
    base = int(oracle.predict(x[None])[0])
    scale = float(x.std()) + 1.0
    start = None
    for _ in range(100):
        cand = x + rng.normal(0.0, 3.0 * scale, size=x.shape)
        if int(oracle.predict(cand[None])[0]) != base:
            start = cand
            break
    if start is None:
        return BoundaryResult(x.copy(), False, 0.0, oracle.query_count)
    adv = start
    dist = float(np.sqrt(((adv - x) ** 2).sum()))
    delta, step_in = 0.1, 0.1
    accepts, trials = 0, 0
    proposals = 0
    while oracle.query_count < spec.query_budget and proposals < 50 * spec.query_budget:
        proposals += 1
        direction = x - adv
        d_norm = float(np.sqrt((direction**2).sum()))
        if d_norm < 1e-12:
            break
        eta = rng.normal(size=x.shape)
        eta -= (eta * direction).sum() / d_norm**2 * direction
        eta_norm = float(np.sqrt((eta**2).sum()))
        if eta_norm > 1e-12:
            eta *= delta * d_norm / eta_norm
        cand = adv + eta + step_in * (x - adv)
        cand_dist = float(np.sqrt(((cand - x) ** 2).sum()))
        trials += 1
        if cand_dist <= dist and int(oracle.predict(cand[None])[0]) != base:
            adv, dist = cand, cand_dist
            accepts += 1
        if trials == 10:
            rate = accepts / trials
            if rate > 0.5:
                delta, step_in = delta * 1.2, min(0.5, step_in * 1.2)
            elif rate < 0.2:
                delta, step_in = delta * 0.8, step_in * 0.8
            accepts, trials = 0, 0
    return BoundaryResult(adv, True, dist, oracle.query_count)


# --------------------------------------------------------------- harness

@dataclass(frozen=True)
class AttackedSplit:
    clean: InstanceSet
    adversarial: InstanceSet
    spec: AttackSpec
    linf_norms: np.ndarray
    l2_norms: np.ndarray
    flags: np.ndarray  # per-instance success indicator for search attacks
    seconds: float

    def __post_init__(self):
        if len(self.clean) != len(self.adversarial):
            raise InvariantError("clean and adversarial sizes differ")
        if self.spec.family in LINF_FAMILIES and len(self.clean):
            worst = float(self.linf_norms.max())
            if worst > self.spec.epsilon + 1e-9:
                raise InvariantError(
                    f"{self.spec.family}: perturbation {worst} exceeds "
                    f"budget {self.spec.epsilon}"
                )


def apply_attack_to_split(model, part: InstanceSet, spec: AttackSpec) -> AttackedSplit:
    """Attack every instance with a per-instance derived seed."""
    if not len(part):
        raise DataError("cannot attack an empty part")
    watch = timing.Stopwatch()
    x, y = part.x, part.y
    n = len(part)
    flags = np.ones(n, dtype=bool)
    if spec.family == "fgsm":
        adv = fgsm(model, x, y, spec.epsilon)
    elif spec.family in ("bim", "mim"):
        adv = iterative_attack(model, x, y, spec)
    elif spec.family == "pgd":
        starts = np.stack([
            rng_from(derive_seed(spec.seed, "instance", i), "start")
            .uniform(-spec.epsilon, spec.epsilon, size=x.shape[1:])
            for i in range(n)
        ])
        net = _net(model)
        lo, hi = x - spec.epsilon, x + spec.epsilon
        adv = x + starts
        for _ in range(spec.iters):
            g = net.input_gradient(adv, y)
            adv = np.clip(adv + spec.alpha * np.sign(g), lo, hi)
    elif spec.family == "deepfool":
        outs = [deepfool(model, x[i], spec.iters, spec.overshoot) for i in range(n)]
        adv = np.stack([o.x_adv for o in outs])
        flags = np.array([o.flipped for o in outs])
    elif spec.family == "zoo":
        adv = np.stack([
            zoo_attack(model, x[i], y[i], spec,
                       rng_from(derive_seed(spec.seed, "instance", i)))
            for i in range(n)
        ])
    elif spec.family == "boundary":
        outs = [
            boundary_attack(model, x[i], y[i], spec,
                            rng_from(derive_seed(spec.seed, "instance", i)))
            for i in range(n)
        ]
        adv = np.stack([o.x_adv for o in outs])
        flags = np.array([o.succeeded for o in outs])
    else:
        raise ConfigError(f"unknown attack family {spec.family!r}")
    diff = (adv - x).reshape(n, -1)
    return AttackedSplit(
        clean=part,
        adversarial=InstanceSet(adv, y.copy()),
        spec=spec,
        linf_norms=np.abs(diff).max(axis=1) if n else np.zeros(0),
        l2_norms=np.sqrt((diff**2).sum(axis=1)),
        flags=flags,
        seconds=watch.seconds(),
    )


def attack_success_rate(model, attacked: AttackedSplit, only_correct=False) -> float:
    """Fraction of instances whose prediction the attack changed."""
    if not len(attacked.clean):
        raise DataError("attack success rate needs a non-empty split")
    net = _net(model)
    pred_clean = net.predict(attacked.clean.x)
    pred_adv = net.predict(attacked.adversarial.x)
    if only_correct:
        keep = pred_clean == attacked.clean.y
        if not keep.any():
            return 0.0
        return float((pred_clean[keep] != pred_adv[keep]).mean())
    return float((pred_clean != pred_adv).mean())


# ------------------------------------------------------------ serialization

def save_attacked_split(att: AttackedSplit, path):
    """Adversarial and clean CSVs in row format plus a JSON sidecar."""
    os.makedirs(path, exist_ok=True)
    for fname, part in (("clean.csv", att.clean), ("adversarial.csv", att.adversarial)):
        with open(os.path.join(path, fname), "w", encoding="utf-8") as f:
            for xi, yi in zip(part.x, part.y):
                f.write(f"{int(yi)}," + ",".join(repr(float(v)) for v in xi.reshape(-1)) + "\n")
    sidecar = {
        "spec": att.spec.to_dict(),
        "shape": list(att.clean.x.shape[1:]),
        "linf_norms": [float(v) for v in att.linf_norms],
        "l2_norms": [float(v) for v in att.l2_norms],
        "flags": [bool(v) for v in att.flags],
        "seconds": att.seconds,
    }
    with open(os.path.join(path, "attack.json"), "w", encoding="utf-8") as f:
        json.dump(sidecar, f, sort_keys=True)
        f.write("\n")


def load_attacked_split(path) -> AttackedSplit:
    side_path = os.path.join(path, "attack.json")
    try:
        with open(side_path, "r", encoding="utf-8") as f:
            side = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"{side_path}: {e}") from e
    c, length = side["shape"]

    def read(fname):
        xs, ys = [], []
        with open(os.path.join(path, fname), "r", encoding="utf-8") as f:
            for row, line in enumerate(f):
                fields = line.strip().split(",")
                if len(fields) != c * length + 1:
                    raise DataError(f"{fname}: row {row} has wrong arity")
                ys.append(int(fields[0]))
                xs.append(np.array([float(v) for v in fields[1:]]).reshape(c, length))
        return InstanceSet(np.stack(xs), np.array(ys))

    return AttackedSplit(
        clean=read("clean.csv"),
        adversarial=read("adversarial.csv"),
        spec=AttackSpec(**side["spec"]),
        linf_norms=np.array(side["linf_norms"]),
        l2_norms=np.array(side["l2_norms"]),
        flags=np.array(side["flags"], dtype=bool),
        seconds=float(side["seconds"]),
    )
