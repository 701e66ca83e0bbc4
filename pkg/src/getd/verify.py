"""Built-in self-checks run by ``getd verify``.

Each check builds its own small random problem from a seed and compares the
library against an independent computation. ``perturb`` names a check whose
library-side result is deliberately corrupted, to prove the check can fail.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .evaluation import evaluate
from .expressiveness import construct_getd_exact, construct_ntucker_exact
from .filtering import build_filter_index
from .models import DropoutMasks, GetdModel, init_model, score
from .training import batch_loss_and_grads

CHECKS = ("expressiveness", "gradients", "equivalence", "metrics")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def _all_indices(shape):
    return np.asarray(list(itertools.product(*(range(n) for n in shape))), dtype=np.int64)


def check_expressiveness(seed: int = 0, perturb: bool = False) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for shape in [(2, 3, 3), (2, 3, 3, 3), (3, 4, 4)]:
        T = (rng.random(shape) < 0.3).astype(np.float64)
        facts = _all_indices(shape)
        for m in (construct_ntucker_exact(T), construct_getd_exact(T)):
            got = score(m, facts)
            if perturb:
                got = got + 1e-3
            worst = max(worst, float(np.max(np.abs(got - T[tuple(facts.T)]))))
    return CheckResult("expressiveness", worst <= 1e-8, f"max |score - T| = {worst:.2e}")


def check_gradients(seed: int = 0, perturb: bool = False, h: float = 1e-6, samples: int = 12) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    n_e, n_r, arity = 5, 2, 3
    facts = np.column_stack([rng.integers(0, n_r, 6), rng.integers(0, n_e, (6, arity))])
    filt = build_filter_index([facts], arity)
    for kind, kw in [("getd", {"k": 4, "ranks": 3}), ("ntucker", {}), ("ncp", {})]:
        d = 4 if kind != "getd" else 2
        m = init_model(kind, n_e, n_r, d, arity=arity, seed=seed, **kw)
        masks = DropoutMasks.sample(m, 0.2, np.random.default_rng(seed + 1))

        def loss():
            return batch_loss_and_grads(m, facts, filt, masks, weight_decay=0.01)[0]

        _, grads = batch_loss_and_grads(m, facts, filt, masks, weight_decay=0.01)
        for key, p in m.parameters().items():
            flat = p.reshape(-1)
            g = grads[key].reshape(-1)
            for i in rng.choice(flat.size, min(samples, flat.size), replace=False):
                old = flat[i]
                flat[i] = old + h
                up = loss()
                flat[i] = old - h
                down = loss()
                flat[i] = old
                numeric = (up - down) / (2 * h)
                analytic = g[i] + (1e-3 if perturb else 0.0)
                rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
                worst = max(worst, rel)
    return CheckResult("gradients", worst <= 1e-4, f"max relative error = {worst:.2e}")


def check_equivalence(seed: int = 0, perturb: bool = False) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for arity, d_e, d_r, k in [(2, 3, 4, 3), (3, 2, 2, 4), (2, 4, 4, 6)]:
        m = init_model("getd", 6, 3, d_e, d_r, k=k, ranks=3, seed=seed, arity=arity)
        facts = np.column_stack([rng.integers(0, 3, 20), rng.integers(0, 6, (20, arity))])
        ref = score(m.to_ntucker(), facts)
        if perturb:
            ref = ref * (1 + 1e-4) + 1e-4
        for materialize in (True, False):
            alt = GetdModel(arity, m.E, m.R, m.cores, materialize=materialize)
            got = score(alt, facts)
            worst = max(worst, float(np.max(np.abs(got - ref)) / max(1.0, np.max(np.abs(ref)))))
    return CheckResult("equivalence", worst <= 1e-10, f"GETD vs dense core, max relative error = {worst:.2e}")


def _brute_force_report(m, facts, known: set[tuple[int, ...]]):
    ranks = []
    for f in facts:
        for p in range(1, m.arity + 1):
            true_score = float(score(m, f[None])[0])
            rank = 1
            for c in range(m.n_entities):
                if c == f[p]:
                    continue
                g = f.copy()
                g[p] = c
                if tuple(g) in known:
                    continue
                if float(score(m, g[None])[0]) > true_score:
                    rank += 1
            ranks.append(rank)
    ranks = np.asarray(ranks)
    return float(np.mean(1.0 / ranks)), {k: float(np.mean(ranks <= k)) for k in (1, 3, 10)}


def check_metrics(seed: int = 0, perturb: bool = False) -> CheckResult:
    rng = np.random.default_rng(seed)
    m = init_model("ntucker", 12, 2, 3, arity=2, seed=seed)
    facts = np.column_stack([rng.integers(0, 2, 40), rng.integers(0, 12, (40, 2))])
    facts = np.unique(facts, axis=0)
    test, rest = facts[:10], facts[10:]
    filt = build_filter_index([rest, test], 2)
    report = evaluate(m, test, filt)
    mrr, hits = _brute_force_report(m, test, {tuple(f) for f in facts})
    if perturb:
        mrr += 1e-3
    err = max(abs(report.mrr - mrr), *(abs(report.hits[k] - hits[k]) for k in hits))
    return CheckResult("metrics", err <= 1e-12, f"filtered MRR/Hits vs brute force, max diff = {err:.2e}")


_RUNNERS = {
    "expressiveness": check_expressiveness,
    "gradients": check_gradients,
    "equivalence": check_equivalence,
    "metrics": check_metrics,
}


def run_checks(seed: int = 0, perturb: str | None = None, only=None) -> list[CheckResult]:
    if perturb is not None and perturb not in CHECKS:
        raise ValueError(f"unknown check {perturb!r}; expected one of {CHECKS}")
    names = CHECKS if only is None else tuple(only)
    return [_RUNNERS[n](seed=seed, perturb=(n == perturb)) for n in names]


__all__ = ["CHECKS", "CheckResult", "run_checks"]
