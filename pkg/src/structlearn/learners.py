"""Training algorithms: averaged structured perceptron, dual coordinate
descent for the L2-loss structured SVM, and its parallel variant that
splits inference and learning across threads.

The SVM objective is min_w 1/2 ||w||^2 + C * sum_i xi_i^2 subject to the
margin constraints w'(f(x_i,y_i) - f(x_i,y)) >= loss(y_i,y) - xi_i for
every structure y.  With squared slack the dual is smooth and each dual
variable has a closed-form coordinate update, so training alternates
between finding violated structures (inference) and sweeping cached
working sets with those updates.
"""

from __future__ import annotations

import math
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .core import (
    ContractError,
    Dataset,
    Lexicon,
    ModelArtifact,
    NumericError,
    SparseFeatureVector,
    TrainingError,
    WeightVector,
    axpy,
    difference,
    dot,
)

PRUNE_AFTER_ZERO_SWEEPS = 5
MAX_SWEEPS_PER_ROUND = 1000


@dataclass
class LearnerConfig:
    """Knobs shared by all trainers; every value is echoed into reports."""

    C: float = 0.1
    eta: float = 1.0
    epochs: Optional[int] = None  # None = per-algorithm default
    tolerance: float = 0.1
    threads: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.C > 0:
            raise ContractError("C must be positive")
        if not self.eta > 0:
            raise ContractError("eta must be positive")
        if self.epochs is not None and self.epochs < 1:
            raise ContractError("epochs must be a positive integer")
        if not self.tolerance > 0:
            raise ContractError("tolerance must be positive")
        if self.threads < 1:
            raise ContractError("threads must be a positive integer")

    def resolved_epochs(self, default: int) -> int:
        return default if self.epochs is None else self.epochs


@dataclass
class EpochStats:
    epoch: int
    primal: float
    dual: Optional[float]
    train_accuracy: float
    seconds: float


@dataclass
class TrainReport:
    """Per-epoch objective/accuracy trace plus the effective configuration.

    The seconds column counts training work only; time spent computing
    these diagnostics (objectives, accuracy, benchmark checkpoints) is
    excluded so that time-vs-quality curves compare algorithms fairly.
    """

    config: dict = field(default_factory=dict)
    rows: List[EpochStats] = field(default_factory=list)

    def add(self, row: EpochStats) -> None:
        if self.rows and row.seconds < self.rows[-1].seconds - 1e-9:
            raise ContractError("report times must be non-decreasing")
        self.rows.append(row)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for key, value in self.config.items():
                fh.write(f"# {key}={value}\n")
            fh.write("epoch,primal,dual,train_accuracy,seconds\n")
            for r in self.rows:
                dual = "" if r.dual is None else f"{r.dual:.12g}"
                fh.write(
                    f"{r.epoch},{r.primal:.12g},{dual},"
                    f"{r.train_accuracy:.12g},{r.seconds:.6f}\n"
                )


class WorkingSetEntry:
    """One cached violating structure with its dual variable."""

    __slots__ = ("structure", "diff", "loss", "diff_norm_sq", "alpha", "zero_sweeps")

    def __init__(self, structure, diff: SparseFeatureVector, loss: float):
        self.structure = structure
        self.diff = diff  # features(gold) - features(structure)
        self.loss = loss
        self.diff_norm_sq = diff.squared_norm()
        self.alpha = 0.0
        self.zero_sweeps = 0


class DualState:
    """Working sets and dual variables for one training run.

    alpha_sum[i] tracks sum_y alpha_{i,y}; under squared slack the slack
    estimate of example i is alpha_sum[i] / (2C).
    """

    def __init__(self, n_examples: int):
        self.working_sets: List[List[WorkingSetEntry]] = [[] for _ in range(n_examples)]
        self.alpha_sum = np.zeros(n_examples, dtype=np.float64)

    def contains(self, i: int, structure) -> bool:
        return any(e.structure == structure for e in self.working_sets[i])

    def admit(self, i: int, structure, diff, loss: float) -> None:
        self.working_sets[i].append(WorkingSetEntry(structure, diff, loss))

    def total_entries(self) -> int:
        return sum(len(ws) for ws in self.working_sets)

    def reconstruct(self, dimension: int) -> np.ndarray:
        """Sum of alpha-weighted difference vectors (the dual image of w)."""
        out = np.zeros(dimension, dtype=np.float64)
        for ws in self.working_sets:
            for e in ws:
                if e.alpha != 0.0:
                    idx = e.diff.indices
                    inside = idx < dimension
                    out[idx[inside]] += e.alpha * e.diff.values[inside]
        return out


def dcd_step(state: DualState, i: int, k: int, w: WeightVector, C: float) -> float:
    """Coordinate-ascent update of one dual variable; returns the dual gain.

    The coordinate's gradient is loss - w.d - alpha_sum/(2C) and its
    curvature is ||d||^2 + 1/(2C), so the unconstrained maximizer along
    the coordinate is their ratio; clipping at alpha >= 0 keeps dual
    feasibility.  The returned improvement g*delta - den*delta^2/2 is
    non-negative even for clipped steps.
    """
    entry = state.working_sets[i][k]
    gradient = entry.loss - dot(w, entry.diff) - state.alpha_sum[i] / (2.0 * C)
    denom = entry.diff_norm_sq + 1.0 / (2.0 * C)
    delta = gradient / denom
    if not math.isfinite(delta):
        raise NumericError(f"non-finite dual step on example {i}")
    if delta < -entry.alpha:
        delta = -entry.alpha
    if delta != 0.0:
        entry.alpha += delta
        state.alpha_sum[i] += delta
        axpy(w, delta, entry.diff)
    return delta * gradient - 0.5 * delta * delta * denom


def _sweep(state: DualState, w: WeightVector, C: float) -> float:
    """One pass of dcd_step over every working-set entry; prunes entries
    whose dual variable has sat at zero for several consecutive sweeps."""
    best = 0.0
    for i in range(len(state.working_sets)):
        entries = state.working_sets[i]
        for k in range(len(entries)):
            gain = dcd_step(state, i, k, w, C)
            if gain > best:
                best = gain
        if entries:
            kept = []
            for e in entries:
                if e.alpha == 0.0:
                    e.zero_sweeps += 1
                else:
                    e.zero_sweeps = 0
                if e.zero_sweeps < PRUNE_AFTER_ZERO_SWEEPS:
                    kept.append(e)
            if len(kept) != len(entries):
                state.working_sets[i] = kept
    return best


def _sweep_until_converged(state, w, C, tolerance) -> float:
    """Sweeps until the best single-coordinate gain drops below tolerance.

    Returns the FIRST sweep's best gain, which tells the caller whether
    there was anything left to optimize when the round began.
    """
    first = None
    for _ in range(MAX_SWEEPS_PER_ROUND):
        best = _sweep(state, w, C)
        if first is None:
            first = best
        if best < tolerance:
            break
    return first if first is not None else 0.0


def primal_objective(w: WeightVector, data: Dataset, fg, solver, C: float) -> float:
    """1/2 ||w||^2 + C sum_i xi_i^2 with slacks from fresh loss-augmented
    inference (the true most-violated structure, not the cached one)."""
    total = 0.5 * w.l2_squared()
    slack_sq = 0.0
    for x, y_gold in data.examples:
        y_hat, loss = solver.loss_augmented_best(w, x, y_gold)
        gold_f = fg.features(x, y_gold)
        hat_f = fg.features(x, y_hat)
        xi = loss - dot(w, gold_f) + dot(w, hat_f)
        if xi > 0.0:
            slack_sq += xi * xi
    return total + C * slack_sq


def dual_objective(state: DualState, w: WeightVector, C: float) -> float:
    """sum alpha*loss - 1/2 ||w||^2 - (1/4C) sum_i alpha_sum_i^2."""
    alpha_loss = 0.0
    for ws in state.working_sets:
        for e in ws:
            alpha_loss += e.alpha * e.loss
    penalty = float(np.dot(state.alpha_sum, state.alpha_sum)) / (4.0 * C)
    return alpha_loss - 0.5 * w.l2_squared() - penalty


def exact_match_accuracy(w: WeightVector, data: Dataset, solver) -> float:
    """Fraction of training examples whose full predicted structure is gold."""
    if not data.examples:
        return 0.0
    hits = sum(1 for x, y in data.examples if solver.best(w, x) == y)
    return hits / len(data.examples)


class _Clock:
    """Accumulates wall-clock time with explicit off-the-clock windows."""

    def __init__(self):
        self.elapsed = 0.0
        self._started = None

    def resume(self):
        if self._started is None:
            self._started = time.perf_counter()

    def pause(self):
        if self._started is not None:
            self.elapsed += time.perf_counter() - self._started
            self._started = None


def _config_echo(algorithm: str, data: Dataset, cfg: LearnerConfig, epochs: int) -> dict:
    return {
        "algorithm": algorithm,
        "task": data.task,
        "examples": len(data),
        "C": cfg.C,
        "eta": cfg.eta,
        "epochs": epochs,
        "tolerance": cfg.tolerance,
        "threads": cfg.threads,
        "seed": cfg.seed,
    }


def _trainer_meta(algorithm: str, cfg: LearnerConfig, epochs: int) -> dict:
    return {
        "algorithm": algorithm,
        "C": str(cfg.C),
        "eta": str(cfg.eta),
        "epochs": str(epochs),
        "tolerance": str(cfg.tolerance),
        "threads": str(cfg.threads),
        "seed": str(cfg.seed),
    }


def _finalize_model(
    weights: WeightVector, data: Dataset, fg, algorithm: str, cfg, epochs: int
) -> ModelArtifact:
    feature_lexicon: Lexicon = fg.feature_lexicon
    label_lexicon: Lexicon = fg.label_lexicon
    feature_lexicon.freeze()
    label_lexicon.freeze()
    weights.resize(len(feature_lexicon))
    weights.freeze()
    return ModelArtifact(
        weights=weights,
        task=data.task,
        feature_lexicon=feature_lexicon,
        label_lexicon=label_lexicon,
        trainer_meta=_trainer_meta(algorithm, cfg, epochs),
    )


EpochCallback = Callable[[int, WeightVector, Optional[DualState], EpochStats], None]


def train_perceptron(
    data: Dataset,
    fg,
    solver,
    cfg: LearnerConfig,
    on_epoch: Optional[EpochCallback] = None,
):
    """Averaged structured perceptron.

    Each epoch visits the examples in a seeded shuffled order; a mistake
    adds eta * (features(gold) - features(predicted)) to the weights.  The
    returned model averages the weight vector over every example visit,
    tracked with a lagged accumulator: after T visits the running sums
    satisfy sum_t w_t = T*w - u, so the average is (T*w - u)/T without
    ever materializing per-visit snapshots.
    """
    data.require_nonempty()
    n = len(data)
    epochs = cfg.resolved_epochs(50)
    rng = np.random.default_rng(cfg.seed)
    w = WeightVector()
    lag = WeightVector()  # u: updates weighted by (visit index - 1)
    visits = 0
    clock = _Clock()
    report = TrainReport(config=_config_echo("perceptron", data, cfg, epochs))
    for epoch in range(1, epochs + 1):
        clock.resume()
        for i in rng.permutation(n):
            x, y_gold = data.examples[int(i)]
            visits += 1
            y_hat = solver.best(w, x)
            if y_hat != y_gold:
                d = difference(fg.features(x, y_gold), fg.features(x, y_hat))
                axpy(w, cfg.eta, d)
                axpy(lag, (visits - 1) * cfg.eta, d)
        clock.pause()
        row = EpochStats(
            epoch=epoch,
            primal=primal_objective(w, data, fg, solver, cfg.C),
            dual=None,
            train_accuracy=exact_match_accuracy(w, data, solver),
            seconds=clock.elapsed,
        )
        report.add(row)
        if on_epoch is not None:
            on_epoch(epoch, w, None, row)
    total = float(visits)
    dim = max(w.dimension, lag.dimension)
    w.resize(dim)
    lag.resize(dim)
    averaged = (total * w.array[:dim] - lag.array[:dim]) / total
    model = _finalize_model(
        WeightVector.from_array(averaged), data, fg, "perceptron", cfg, epochs
    )
    return model, report


def _try_admit(
    state: DualState,
    i: int,
    y_hat,
    loss: float,
    gold_feats,
    fg,
    x,
    w: WeightVector,
    C: float,
    tolerance: float,
) -> bool:
    """Working-set admission: reject duplicates, then require the margin
    violation to exceed the example's slack estimate by the tolerance."""
    if state.contains(i, y_hat):
        return False
    d = difference(gold_feats[i], fg.features(x, y_hat))
    violation = loss - dot(w, d)
    if violation <= state.alpha_sum[i] / (2.0 * C) + tolerance:
        return False
    state.admit(i, y_hat, d, loss)
    return True


def _dcd_epoch_row(epoch, w, state, data, fg, solver, C, seconds) -> EpochStats:
    return EpochStats(
        epoch=epoch,
        primal=primal_objective(w, data, fg, solver, C),
        dual=dual_objective(state, w, C),
        train_accuracy=exact_match_accuracy(w, data, solver),
        seconds=seconds,
    )


def train_dcd(
    data: Dataset,
    fg,
    solver,
    cfg: LearnerConfig,
    on_epoch: Optional[EpochCallback] = None,
):
    """Sequential dual coordinate descent for the L2-loss structured SVM.

    Each outer iteration (a) runs loss-augmented inference over all
    examples to admit newly violated structures into the working sets, and
    (b) sweeps dcd_step over every cached entry until the best gain drops
    below the tolerance.  Stops early once an iteration admits nothing and
    starts already converged; the dual objective never decreases.
    """
    data.require_nonempty()
    n = len(data)
    epochs = cfg.resolved_epochs(100)
    rng = np.random.default_rng(cfg.seed)
    w = WeightVector()
    state = DualState(n)
    gold_feats = [fg.features(x, y) for x, y in data.examples]
    clock = _Clock()
    report = TrainReport(config=_config_echo("dcd", data, cfg, epochs))
    for epoch in range(1, epochs + 1):
        clock.resume()
        admitted = 0
        for i in rng.permutation(n):
            i = int(i)
            x, y_gold = data.examples[i]
            y_hat, loss = solver.loss_augmented_best(w, x, y_gold)
            if _try_admit(state, i, y_hat, loss, gold_feats, fg, x, w, cfg.C, cfg.tolerance):
                admitted += 1
        first_gain = _sweep_until_converged(state, w, cfg.C, cfg.tolerance)
        clock.pause()
        row = _dcd_epoch_row(epoch, w, state, data, fg, solver, cfg.C, clock.elapsed)
        report.add(row)
        if on_epoch is not None:
            on_epoch(epoch, w, state, row)
        if admitted == 0 and first_gain < cfg.tolerance:
            break
    model = _finalize_model(w, data, fg, "dcd", cfg, epochs)
    return model, report


class _WorkerPool:
    """Inference workers plus the pause/park handshake the learner uses to
    get consistent snapshots (termination checks, report rows)."""

    def __init__(self, n_workers: int):
        self.n_workers = n_workers
        self.pause = threading.Event()
        self.stop = threading.Event()
        self.cond = threading.Condition()
        self.parked = 0
        self.errors: List[BaseException] = []
        self.threads: List[threading.Thread] = []

    def worker_checkpoint(self):
        """Called by workers between inferences; blocks while paused."""
        if not self.pause.is_set():
            return
        with self.cond:
            self.parked += 1
            self.cond.notify_all()
            while self.pause.is_set() and not self.stop.is_set():
                self.cond.wait(0.005)
            self.parked -= 1
            self.cond.notify_all()

    def quiesce(self):
        self.pause.set()
        with self.cond:
            while not self.stop.is_set():
                alive = sum(1 for t in self.threads if t.is_alive())
                if self.parked >= alive or self.errors:
                    break
                self.cond.wait(0.005)

    def release(self):
        with self.cond:
            self.pause.clear()
            self.cond.notify_all()

    def shutdown(self):
        self.stop.set()
        self.release()
        for t in self.threads:
            t.join(timeout=10.0)


def _inference_worker(pool, indices, data, solver, w, out_queue):
    """Cycle over assigned examples, proposing loss-augmented structures.

    Reads of w may be stale or torn mid-update; the learner re-checks every
    proposal against current weights before admitting it, so stale
    proposals cost a queue slot at worst.  When the queue is full the
    worker parks in a blocking put instead of starting another inference
    whose result would be dropped, which hands the interpreter back to the
    learning thread.
    """
    try:
        pos = 0
        while not pool.stop.is_set() and indices:
            pool.worker_checkpoint()
            if pool.stop.is_set():
                break
            i = indices[pos % len(indices)]
            pos += 1
            x, y_gold = data.examples[i]
            y_hat, loss = solver.loss_augmented_best(w, x, y_gold)
            while not pool.stop.is_set():
                try:
                    out_queue.put((i, y_hat, loss), timeout=0.005)
                    break
                except queue.Full:
                    if pool.pause.is_set():
                        break  # drop it; the example comes around again
    except BaseException as exc:  # propagated by the learner as TrainingError
        pool.errors.append(exc)
        pool.stop.set()


def _demidcd_lockstep(data, fg, solver, cfg, on_epoch):
    """Degenerate serial schedule: one worker's inference pass is drained
    fully before each sweep round, giving a deterministic run for a seed."""
    n = len(data)
    epochs = cfg.resolved_epochs(100)
    rng = np.random.default_rng(cfg.seed)
    order = [int(i) for i in rng.permutation(n)]  # fixed worker assignment
    w = WeightVector()
    state = DualState(n)
    gold_feats = [fg.features(x, y) for x, y in data.examples]
    clock = _Clock()
    report = TrainReport(config=_config_echo("demidcd", data, cfg, epochs))
    for epoch in range(1, epochs + 1):
        clock.resume()
        admitted = 0
        for i in order:
            x, y_gold = data.examples[i]
            y_hat, loss = solver.loss_augmented_best(w, x, y_gold)
            if _try_admit(state, i, y_hat, loss, gold_feats, fg, x, w, cfg.C, cfg.tolerance):
                admitted += 1
        first_gain = _sweep_until_converged(state, w, cfg.C, cfg.tolerance)
        clock.pause()
        row = _dcd_epoch_row(epoch, w, state, data, fg, solver, cfg.C, clock.elapsed)
        report.add(row)
        if on_epoch is not None:
            on_epoch(epoch, w, state, row)
        if admitted == 0 and first_gain < cfg.tolerance:
            break
    model = _finalize_model(w, data, fg, "demidcd", cfg, epochs)
    return model, report


def train_demidcd(
    data: Dataset,
    fg,
    solver,
    cfg: LearnerConfig,
    on_epoch: Optional[EpochCallback] = None,
    lockstep: bool = False,
):
    """Parallel DCD: threads-1 inference workers feed violated structures
    through a bounded queue to one learning thread that owns the working
    sets and is the only writer of the weight vector.

    Workers score against live weights without locking (stale and torn
    reads are tolerated by design); every objective reported, and the
    termination decision, is computed with the workers parked so the
    snapshot is consistent.  An "epoch" is n consumed proposals.  The run
    stops at the epoch budget, or early when a round admitted nothing, the
    sweeps are converged, and a fresh full inference pass over the data
    (same criterion as the sequential trainer) finds nothing admissible.
    """
    data.require_nonempty()
    if cfg.threads < 2:
        raise ContractError("parallel training needs threads >= 2 (1 learner + workers)")
    if lockstep:
        if cfg.threads != 2:
            raise ContractError("lockstep scheduling is defined for threads=2 only")
        return _demidcd_lockstep(data, fg, solver, cfg, on_epoch)

    n = len(data)
    epochs = cfg.resolved_epochs(100)
    rng = np.random.default_rng(cfg.seed)
    perm = [int(i) for i in rng.permutation(n)]
    n_workers = cfg.threads - 1
    w = WeightVector()
    state = DualState(n)
    gold_feats = [fg.features(x, y) for x, y in data.examples]
    # small lookahead buffer: workers park once they get an eighth of a
    # pass ahead of the learner, keeping proposals fresh and the
    # interpreter mostly in the learning thread
    proposals: "queue.Queue" = queue.Queue(maxsize=max(16, min(n // 8, 2048)))
    pool = _WorkerPool(n_workers)
    for j in range(n_workers):
        t = threading.Thread(
            target=_inference_worker,
            args=(pool, perm[j::n_workers], data, solver, w, proposals),
            name=f"inference-{j}",
            daemon=True,
        )
        pool.threads.append(t)
    clock = _Clock()
    report = TrainReport(config=_config_echo("demidcd", data, cfg, epochs))
    epoch = 0
    consumed = 0
    admitted_since_boundary = 0
    last_gain = math.inf
    try:
        clock.resume()
        for t in pool.threads:
            t.start()
        done = False
        while not done:
            if pool.errors:
                raise TrainingError(
                    f"inference worker failed: {pool.errors[0]!r}"
                ) from pool.errors[0]
            drained = 0
            while drained < 4 * n:
                try:
                    i, y_hat, loss = proposals.get_nowait()
                except queue.Empty:
                    break
                drained += 1
                consumed += 1
                x, _ = data.examples[i]
                if _try_admit(
                    state, i, y_hat, loss, gold_feats, fg, x, w, cfg.C, cfg.tolerance
                ):
                    admitted_since_boundary += 1
            if state.total_entries():
                last_gain = _sweep(state, w, cfg.C)
            if consumed >= n * (epoch + 1):
                epoch += 1
                first_gain = _sweep_until_converged(state, w, cfg.C, cfg.tolerance)
                last_gain = min(last_gain, first_gain)
                pool.quiesce()
                try:
                    if pool.errors:
                        raise TrainingError(
                            f"inference worker failed: {pool.errors[0]!r}"
                        ) from pool.errors[0]
                    clock.pause()
                    row = _dcd_epoch_row(
                        epoch, w, state, data, fg, solver, cfg.C, clock.elapsed
                    )
                    report.add(row)
                    if on_epoch is not None:
                        on_epoch(epoch, w, state, row)
                    if epoch >= epochs:
                        done = True
                    elif admitted_since_boundary == 0 and last_gain < cfg.tolerance:
                        # same stopping rule as the sequential trainer,
                        # evaluated on this consistent snapshot
                        clock.resume()
                        fresh = 0
                        for i in range(n):
                            x, y_gold = data.examples[i]
                            y_hat, loss = solver.loss_augmented_best(w, x, y_gold)
                            if _try_admit(
                                state, i, y_hat, loss, gold_feats, fg, x, w,
                                cfg.C, cfg.tolerance,
                            ):
                                fresh += 1
                        if fresh == 0:
                            done = True
                        clock.pause()
                    clock.resume()
                finally:
                    pool.release()
                admitted_since_boundary = 0
            elif drained == 0:
                time.sleep(0.0005)
    finally:
        pool.shutdown()
    clock.pause()
    if pool.errors:
        raise TrainingError(
            f"inference worker failed: {pool.errors[0]!r}"
        ) from pool.errors[0]
    model = _finalize_model(w, data, fg, "demidcd", cfg, epochs)
    return model, report
