"""No-U-turn Hamiltonian Monte Carlo with warmup adaptation.

Multinomial trajectory sampling with the generalised (momentum-sum)
no-U-turn criterion, a diagonal inverse metric estimated in expanding
windows, and dual-averaging step-size adaptation. The design follows

  1. Hoffman, M.D. and Gelman, A., 2014. The No-U-turn sampler.
     JMLR 15(1), pp.1593-1623.
  2. Betancourt, M., 2017. A conceptual introduction to Hamiltonian Monte
     Carlo. arXiv:1701.02434.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

MAX_DELTA_H = 1000.0


@dataclass
class _Point:
    q: np.ndarray
    p: np.ndarray
    logp: float
    grad: np.ndarray
    p_sharp: np.ndarray  # velocity, inv_metric * p


@dataclass
class _Tree:
    left: _Point
    right: _Point
    proposal: _Point
    log_weight: float
    rho: np.ndarray


class _Counters:
    __slots__ = ("n_leapfrog", "sum_metro", "divergent")

    def __init__(self):
        self.n_leapfrog = 0
        self.sum_metro = 0.0
        self.divergent = False


def _log_add(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    hi, lo = (a, b) if a > b else (b, a)
    return hi + math.log1p(math.exp(lo - hi))


def _no_u_turn(p_sharp_minus, p_sharp_plus, rho) -> bool:
    """True while the trajectory keeps expanding at both ends."""
    return float(p_sharp_plus @ rho) > 0 and float(p_sharp_minus @ rho) > 0


@dataclass
class Transition:
    q: np.ndarray
    logp: float
    grad: np.ndarray
    accept_stat: float
    n_leapfrog: int
    tree_depth: int
    divergent: bool
    energy: float


class NUTS:
    """One chain's transition kernel.

    Parameters
    ----------
    logp_and_grad : callable
        Maps a position vector to ``(log density, gradient)``.
    inv_metric : ndarray
        Diagonal of the inverse mass matrix.
    step_size : float
    max_tree_depth : int
    """

    def __init__(self, logp_and_grad: Callable, inv_metric: np.ndarray, step_size: float,
                 max_tree_depth: int = 10):
        self.logp_and_grad = logp_and_grad
        self.inv_metric = np.asarray(inv_metric, dtype=float)
        self.step_size = float(step_size)
        self.max_tree_depth = int(max_tree_depth)

    def _point(self, q, p, logp, grad) -> _Point:
        return _Point(q, p, logp, grad, self.inv_metric * p)

    def hamiltonian(self, pt: _Point) -> float:
        # an exploding trajectory overflows to inf and is then flagged divergent
        with np.errstate(over="ignore", invalid="ignore"):
            return -pt.logp + 0.5 * float(pt.p @ pt.p_sharp)

    def leapfrog(self, pt: _Point, eps: float) -> _Point:
        p = pt.p + 0.5 * eps * pt.grad
        q = pt.q + eps * (self.inv_metric * p)
        logp, grad = self.logp_and_grad(q)
        if not np.isfinite(logp) or not np.all(np.isfinite(grad)):
            return _Point(q, p, -math.inf, np.zeros_like(q), self.inv_metric * p)
        p = p + 0.5 * eps * grad
        return self._point(q, p, logp, grad)

    def _build_tree(self, pt: _Point, depth: int, direction: int, H0: float,
                    rng: np.random.Generator, cnt: _Counters) -> tuple[_Tree, bool]:
        if depth == 0:
            new = self.leapfrog(pt, direction * self.step_size)
            cnt.n_leapfrog += 1
            h = self.hamiltonian(new) if new.logp > -math.inf else math.inf
            if math.isnan(h):
                h = math.inf
            if h - H0 > MAX_DELTA_H:
                cnt.divergent = True
            delta = H0 - h
            cnt.sum_metro += 1.0 if delta > 0 else math.exp(delta)
            tree = _Tree(new, new, new, delta, new.p.copy())
            return tree, not cnt.divergent

        first, ok = self._build_tree(pt, depth - 1, direction, H0, rng, cnt)
        if not ok:
            return first, False
        edge = first.right if direction > 0 else first.left
        second, ok = self._build_tree(edge, depth - 1, direction, H0, rng, cnt)
        if not ok:
            return second, False

        log_weight = _log_add(first.log_weight, second.log_weight)
        proposal = first.proposal
        if second.log_weight > log_weight or rng.uniform() < math.exp(second.log_weight - log_weight):
            proposal = second.proposal
        left, right = (first, second) if direction > 0 else (second, first)
        tree = _Tree(left.left, right.right, proposal, log_weight, left.rho + right.rho)
        return tree, self._check_merge(left, right, tree.rho)

    @staticmethod
    def _check_merge(left: _Tree, right: _Tree, rho) -> bool:
        return (_no_u_turn(left.left.p_sharp, right.right.p_sharp, rho)
                and _no_u_turn(left.left.p_sharp, right.left.p_sharp, left.rho + right.left.p)
                and _no_u_turn(left.right.p_sharp, right.right.p_sharp, right.rho + left.right.p))

    def transition(self, q, logp, grad, rng: np.random.Generator) -> Transition:
        p0 = rng.standard_normal(q.shape) / np.sqrt(self.inv_metric)
        start = self._point(q, p0, logp, grad)
        H0 = self.hamiltonian(start)
        tree = _Tree(start, start, start, 0.0, p0.copy())
        cnt = _Counters()
        sample = start
        depth = 0
        while depth < self.max_tree_depth:
            direction = 1 if rng.uniform() > 0.5 else -1
            edge = tree.right if direction > 0 else tree.left
            sub, ok = self._build_tree(edge, depth, direction, H0, rng, cnt)
            if not ok:
                break
            depth += 1
            if sub.log_weight > tree.log_weight:
                sample = sub.proposal
            elif rng.uniform() < math.exp(sub.log_weight - tree.log_weight):
                sample = sub.proposal
            left, right = (tree, sub) if direction > 0 else (sub, tree)
            merged = _Tree(left.left, right.right, sample,
                           _log_add(tree.log_weight, sub.log_weight), left.rho + right.rho)
            keep_going = self._check_merge(left, right, merged.rho)
            tree = merged
            if not keep_going:
                break
        accept = cnt.sum_metro / max(cnt.n_leapfrog, 1)
        return Transition(sample.q, sample.logp, sample.grad, accept, cnt.n_leapfrog, depth,
                          cnt.divergent, self.hamiltonian(sample))


class DualAveraging:
    """Step-size adaptation toward a target mean acceptance statistic."""

    def __init__(self, step_size: float, target: float, gamma: float = 0.05, t0: float = 10.0,
                 kappa: float = 0.75):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(step_size)

    def restart(self, step_size: float) -> None:
        self.mu = math.log(10.0 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat: float) -> float:
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** -self.kappa
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return math.exp(x)

    @property
    def final_step_size(self) -> float:
        return math.exp(self.x_bar)


class WindowSchedule:
    """Warmup phases: fast initial buffer, doubling slow windows, fast terminal buffer.

    Window boundaries follow the usual 75/25/50 defaults, shrunk to
    15%/75%/10% of warmup when warmup is short.
    """

    def __init__(self, n_warmup: int, init_buffer: int = 75, term_buffer: int = 50,
                 base_window: int = 25):
        if n_warmup < 20:
            self.init_buffer, self.term_buffer, self.base_window = n_warmup, 0, 0
            self.ends = []
            return
        if init_buffer + base_window + term_buffer > n_warmup:
            init_buffer = int(0.15 * n_warmup)
            term_buffer = int(0.1 * n_warmup)
            base_window = n_warmup - init_buffer - term_buffer
        self.init_buffer, self.term_buffer, self.base_window = init_buffer, term_buffer, base_window
        slow_end = n_warmup - term_buffer
        ends = []
        start, size = init_buffer, base_window
        while start < slow_end:
            end = start + size
            if end + 2 * size > slow_end:
                end = slow_end
            ends.append(end)
            start, size = end, 2 * size
        self.ends = ends

    def in_slow_phase(self, i: int) -> bool:
        return bool(self.ends) and self.init_buffer <= i < self.ends[-1]

    def window_end(self, i: int) -> bool:
        """True if iteration ``i`` (0-based) closes a slow window."""
        return (i + 1) in self.ends


class _Welford:
    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x):
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def regularized_variance(self):
        var = self.m2 / (self.n - 1)
        n = self.n
        return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


def find_reasonable_step_size(kernel: NUTS, q, logp, grad, rng, step_size: float = 1.0) -> float:
    """Double or halve the step until one leapfrog's acceptance crosses 0.8."""
    eps = step_size
    direction = 0
    for _ in range(100):
        p = rng.standard_normal(q.shape) / np.sqrt(kernel.inv_metric)
        start = kernel._point(q, p, logp, grad)
        new = kernel.leapfrog(start, eps)
        H0 = kernel.hamiltonian(start)
        h = kernel.hamiltonian(new) if new.logp > -math.inf else math.inf
        delta = H0 - h if math.isfinite(h) else -math.inf
        d = 1 if delta > math.log(0.8) else -1
        if direction == 0:
            direction = d
        elif d != direction:
            break
        eps = eps * 2.0 if direction > 0 else eps * 0.5
        if eps > 1e7 or eps < 1e-12:
            break
    return eps


@dataclass
class ChainResult:
    draws: np.ndarray          # (n_draws, dim), unconstrained, post-warmup only
    logp: np.ndarray
    accept_stat: np.ndarray
    n_leapfrog: np.ndarray
    tree_depth: np.ndarray
    divergent: np.ndarray
    energy: np.ndarray
    step_size: float
    inv_metric: np.ndarray
    warmup_divergent: int


def run_chain(logp_and_grad: Callable, q0: np.ndarray, n_warmup: int, n_draws: int,
              rng: np.random.Generator, target_accept: float = 0.8, max_tree_depth: int = 10,
              inv_metric: np.ndarray | None = None, step_size: float | None = None,
              adapt: bool = True) -> ChainResult:
    """Warm up and sample one chain; returns only post-warmup draws."""
    q = np.asarray(q0, dtype=float).copy()
    dim = q.size
    logp, grad = logp_and_grad(q)
    kernel = NUTS(logp_and_grad, np.ones(dim) if inv_metric is None else inv_metric,
                  1.0 if step_size is None else step_size, max_tree_depth)
    if adapt and n_warmup > 0:
        kernel.step_size = find_reasonable_step_size(kernel, q, logp, grad, rng,
                                                     kernel.step_size)
    da = DualAveraging(kernel.step_size, target_accept)
    schedule = WindowSchedule(n_warmup)
    welford = _Welford(dim)
    warmup_div = 0
    for i in range(n_warmup):
        tr = kernel.transition(q, logp, grad, rng)
        q, logp, grad = tr.q, tr.logp, tr.grad
        warmup_div += tr.divergent
        if not adapt:
            continue
        kernel.step_size = da.update(tr.accept_stat)
        if schedule.in_slow_phase(i):
            welford.add(q)
        if schedule.window_end(i):
            kernel.inv_metric = welford.regularized_variance()
            welford = _Welford(dim)
            kernel.step_size = find_reasonable_step_size(kernel, q, logp, grad, rng,
                                                         kernel.step_size)
            da.restart(kernel.step_size)
    if adapt and n_warmup > 0:
        kernel.step_size = da.final_step_size

    out = {k: [] for k in ("draws", "logp", "accept", "nl", "depth", "div", "energy")}
    for _ in range(n_draws):
        tr = kernel.transition(q, logp, grad, rng)
        q, logp, grad = tr.q, tr.logp, tr.grad
        out["draws"].append(q)
        out["logp"].append(logp)
        out["accept"].append(tr.accept_stat)
        out["nl"].append(tr.n_leapfrog)
        out["depth"].append(tr.tree_depth)
        out["div"].append(tr.divergent)
        out["energy"].append(tr.energy)
    return ChainResult(
        draws=np.array(out["draws"]).reshape(n_draws, dim),
        logp=np.array(out["logp"]),
        accept_stat=np.array(out["accept"]),
        n_leapfrog=np.array(out["nl"], dtype=int),
        tree_depth=np.array(out["depth"], dtype=int),
        divergent=np.array(out["div"], dtype=bool),
        energy=np.array(out["energy"]),
        step_size=kernel.step_size,
        inv_metric=kernel.inv_metric.copy(),
        warmup_divergent=int(warmup_div),
    )
