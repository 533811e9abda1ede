"""Lockstep simulation of ``P`` data-parallel workers exchanging delayed updates.

Each iteration: due arrivals are summed into their destination caches, then
every worker in index order reads its own cache, computes an update on its
next batch, runs it through its own optimizer state and broadcasts the delta
to all caches (its own included) with freshly sampled delays.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from stalesim import optim
from stalesim.delay import DelaySpec, DelayStream, TransitQueue, UpdateMsg
from stalesim.errors import NonFiniteError
from stalesim.metrics import ConvergenceTarget, RunTrace
from stalesim.sparse import SparseDelta, add_delta
from stalesim.workloads.base import BatchSampler, Workload, shard_items

log = logging.getLogger(__name__)


def spawn_streams(seed: int, workers: int):
    """``(init_rng, delay_rng, [worker_rng, ...])`` from independent child seeds."""
    children = np.random.SeedSequence(seed).spawn(workers + 2)
    rngs = [np.random.default_rng(c) for c in children]
    return rngs[0], rngs[1], rngs[2:]


@dataclass
class WorkerCache:
    worker_id: int
    params: np.ndarray


@dataclass
class SimState:
    iteration: int
    caches: list
    queue: TransitQueue
    worker_rngs: list
    delays: DelayStream
    opt_states: list
    workload_states: list
    samplers: list
    batches: int = 0

    @property
    def workers(self) -> int:
        return len(self.caches)

    def params(self, worker: int = 0) -> np.ndarray:
        return self.caches[worker].params


def init_state(
    workload: Workload,
    optimizer,
    delay_spec: DelaySpec,
    workers: int,
    seed: int,
    batch_size: Optional[int] = None,
) -> SimState:
    init_rng, delay_rng, worker_rngs = spawn_streams(seed, workers)
    if hasattr(delay_spec, "validate_workers"):
        delay_spec.validate_workers(workers)
    params = workload.init_params(init_rng)
    shards = shard_items(workload.n_items(), workers, init_rng)
    wstates = workload.init_worker_states(shards, params, init_rng)
    if batch_size is None:
        batch_size = workload.default_batch_size(workers)
    samplers = [
        BatchSampler(shards[p], batch_size, worker_rngs[p], shuffle=workload.shuffle_batches)
        for p in range(workers)
    ]
    opt_states = [optim.init_state(optimizer, params.size) for _ in range(workers)]
    return SimState(
        iteration=0,
        caches=[WorkerCache(p, params.copy()) for p in range(workers)],
        queue=TransitQueue(max_lag=delay_spec.max_lag),
        worker_rngs=worker_rngs,
        delays=DelayStream(delay_spec, workers, delay_rng),
        opt_states=opt_states,
        workload_states=wstates,
        samplers=samplers,
    )


def _apply_arrivals(caches, arrivals) -> None:
    """Sum each destination's dense arrivals in drain order, then add once.

    Destinations receiving the same message sequence share one summed
    vector, so caches that see identical arrivals stay bit-identical.
    """
    per_dest: dict[int, list] = {}
    for dest, msg in arrivals:
        if isinstance(msg.delta, SparseDelta):
            msg.delta.add_into(caches[dest].params)
        else:
            per_dest.setdefault(dest, []).append(msg)
    sums: dict[tuple, np.ndarray] = {}
    for dest in sorted(per_dest):
        msgs = per_dest[dest]
        if len(msgs) == 1:
            caches[dest].params += msgs[0].delta
            continue
        key = tuple(id(m) for m in msgs)
        total = sums.get(key)
        if total is None:
            total = msgs[0].delta.copy()
            for m in msgs[1:]:
                total += m.delta
            sums[key] = total
        caches[dest].params += total


def deliver(state: SimState) -> int:
    """Apply every arrival due at the current iteration; returns how many were applied."""
    arrivals = state.queue.drain(state.iteration)
    _apply_arrivals(state.caches, arrivals)
    return len(arrivals)


def step(state: SimState, workload: Workload, optimizer, delay_spec: DelaySpec) -> list:
    """Advance the simulation by one lockstep iteration.

    Returns ``(metric, value)`` pairs produced during the iteration.
    """
    deliver(state)
    t = state.iteration
    delays = state.delays.next()
    losses = []
    for p in range(state.workers):
        cache = state.caches[p].params
        batch = state.samplers[p].next()
        try:
            out = workload.compute(cache, state.workload_states[p], batch, state.worker_rngs[p])
            if out.kind == "grad":
                delta = optim.apply(state.opt_states[p], optimizer, out.vector)
            else:
                delta = out.vector
        except NonFiniteError as exc:
            raise NonFiniteError(str(exc), iteration=t, worker=p) from exc
        if isinstance(delta, SparseDelta):
            finite = delta.is_finite()
        else:
            finite = bool(np.all(np.isfinite(delta)))
        if not finite:
            raise NonFiniteError("non-finite update", iteration=t, worker=p)
        state.queue.schedule(UpdateMsg(p, t, delta), delays[p])
        if out.loss is not None:
            losses.append(out.loss)
    state.iteration += 1
    state.batches += state.workers
    if losses:
        return [("batch_loss", float(np.mean(losses)))]
    return []


def evaluate(state: SimState, workload: Workload) -> float:
    """Quality metric on worker 0's cache; never mutates the state."""
    value = workload.evaluate(state.caches[0].params, state.workload_states)
    if not np.isfinite(value):
        raise NonFiniteError(f"{workload.metric} is not finite", iteration=state.iteration)
    return float(value)


def flush(state: SimState) -> int:
    """Deliver everything still in transit, regardless of its arrival iteration."""
    arrivals = state.queue.drain(np.iinfo(np.int64).max)
    _apply_arrivals(state.caches, arrivals)
    return len(arrivals)


def simulate(
    workload: Workload,
    optimizer,
    delay_spec: DelaySpec,
    workers: int = 1,
    seed: int = 0,
    budget: int = 1000,
    batch_size: Optional[int] = None,
    target: Optional[ConvergenceTarget] = None,
    eval_interval: int = 50,
    stop_at_target: bool = True,
    run_id: str = "run",
    hooks: tuple = (),
    record_batch_loss: bool = False,
) -> RunTrace:
    """Run until ``budget`` batches (summed over workers) or until ``target`` is met.

    ``hooks`` are called as ``hook(state, trace)`` at the start of every
    iteration, after arrivals have been applied.
    """
    state = init_state(workload, optimizer, delay_spec, workers, seed, batch_size)
    trace = RunTrace(run_id)
    trace.meta.update(workers=workers, seed=seed)
    n_iters = budget // workers

    while True:
        deliver(state)
        try:
            for hook in hooks:
                hook(state, trace)
            due = state.iteration % eval_interval == 0 or state.iteration == n_iters
            if due:
                value = evaluate(state, workload)
                trace.record(state.batches, workload.metric, value)
                if target is not None and stop_at_target and target.metric == workload.metric:
                    if target.satisfied(value):
                        break
            if state.iteration >= n_iters:
                break
            for metric, value in step(state, workload, optimizer, delay_spec):
                if record_batch_loss:
                    trace.record(state.batches, metric, value)
        except NonFiniteError as exc:
            log.warning("run %s diverged: %s", run_id, exc)
            trace.diverged = True
            trace.record(state.batches, "diverged", state.iteration)
            break
    trace.meta["iterations"] = state.iteration
    trace.meta["batches"] = state.batches
    trace.state = state
    return trace
