"""Worker-selection policies and the training-time estimator that feeds them.

Two heuristics are implemented: an epoch-window rule (eligibility between a
minimum and maximum local epoch count) and a per-round time budget that only
grows when accuracy stops improving. Plus the all-workers and uniform-random
baselines.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class WorkerProfile:
    """Per-worker timing and capacity estimates driving selection.

    t_one: seconds for one full local epoch; t_transmit: seconds for one
    weights round-trip; cpu_prop: available CPU fraction in (0, 1].
    """

    worker: str
    t_one: float
    t_transmit: float
    cpu_freq: float
    cpu_prop: float
    data_count: int


@dataclass(frozen=True)
class ServerProbe:
    """Server-side timing reference: seconds to train a single sample, and the
    CPU frequency that measurement was taken at."""

    t_onedata: float
    cpu_freq_server: float

    def __post_init__(self):
        if not (self.t_onedata > 0 and self.cpu_freq_server > 0):
            raise ValueError("probe fields must be positive")


@dataclass(frozen=True)
class RMinMaxState:
    rmin: float
    rmax: float

    def __post_init__(self):
        if not (self.rmin > 0 and self.rmax > 0):
            raise ValueError("rmin and rmax must be positive")


@dataclass(frozen=True)
class TimeBasedState:
    r: int = 10
    t_budget: float = 0.0
    threshold_a: float = 0.005

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("epochs per round must be >= 1")
        if self.t_budget < 0:
            raise ValueError("time budget must be >= 0")
        if not self.threshold_a > 0:
            raise ValueError("improvement threshold must be positive")


def estimate_t_one(probe: ServerProbe, profile: WorkerProfile) -> float:
    """Estimate a worker's per-epoch training time from the server's one-sample
    probe, scaled by the CPU frequency/availability ratio and data count."""
    if not (profile.cpu_freq > 0 and 0 < profile.cpu_prop <= 1):
        raise ValueError("worker cpu fields must be positive (cpu_prop in (0, 1])")
    if profile.data_count <= 0:
        raise ValueError("cannot estimate training time without data")
    per_sample = probe.t_onedata * probe.cpu_freq_server / (profile.cpu_freq * profile.cpu_prop)
    return per_sample * profile.data_count


def select_rminmax(profiles, state: RMinMaxState) -> set[str]:
    """Epoch-window selection: a worker is in if it can finish the minimum
    epochs before the fastest worker finishes the maximum."""
    profiles = list(profiles)
    if not profiles:
        raise ValueError("no worker profiles to select from")
    t_min = {p.worker: p.t_one * state.rmin + p.t_transmit for p in profiles}
    t_max = {p.worker: p.t_one * state.rmax + p.t_transmit for p in profiles}
    t_minimum = min(t_max.values())
    return {w for w, t in t_min.items() if t <= t_minimum}


def update_rminmax(state: RMinMaxState, acc_prev: float, acc_now: float) -> RMinMaxState:
    """Widen the epoch window as accuracy grows: rmin shrinks, rmax stretches.

    The +1 on both accuracies damps the early-training surge, where a raw
    accuracy ratio would blow the window open in a couple of rounds.
    """
    ratio = (acc_prev + 1.0) / (acc_now + 1.0)
    return RMinMaxState(rmin=state.rmin * ratio, rmax=state.rmax / ratio)


def select_timebased(profiles, state: TimeBasedState) -> set[str]:
    """Budget selection: workers whose r-epoch round fits in the time budget."""
    return {
        p.worker
        for p in profiles
        if p.t_one * state.r + p.t_transmit <= state.t_budget
    }


def update_timebased(state: TimeBasedState, unselected, acc_prev: float,
                     acc_now: float) -> TimeBasedState:
    """Raise the budget to admit exactly the next-fastest worker, but only when
    the accuracy boost fell short of the threshold. No-op if nobody is left out."""
    unselected = list(unselected)
    if acc_now - acc_prev >= state.threshold_a or not unselected:
        return state
    next_in = min(p.t_one * state.r + p.t_transmit for p in unselected)
    return replace(state, t_budget=next_in)


def select_random(workers, k: int, seed: int) -> set[str]:
    """Uniform choice of k workers without replacement, deterministic per seed."""
    workers = sorted(workers)
    if k > len(workers):
        raise ValueError(f"cannot pick {k} of {len(workers)} workers")
    if k == 0:
        return set()
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(workers), size=k, replace=False)
    return {workers[i] for i in picked}


def refine_profile(profile: WorkerProfile, observed_train_seconds: float,
                   observed_transmit_seconds: float, epochs_trained: int) -> WorkerProfile:
    """Replace the estimates with what a finished round actually measured."""
    if epochs_trained < 1:
        raise ValueError("epochs_trained must be >= 1")
    if not (observed_train_seconds > 0 and observed_transmit_seconds >= 0):
        raise ValueError("observations must be positive")
    return replace(
        profile,
        t_one=observed_train_seconds / epochs_trained,
        t_transmit=observed_transmit_seconds,
    )


class AllSelector:
    """Baseline: every eligible worker, every round."""

    name = "all"

    def select(self, profiles) -> set[str]:
        return {p.worker for p in profiles}

    def update(self, acc_prev, acc_now, profiles, selected) -> None:
        pass


class RandomSelector:
    """Baseline: k workers uniformly at random each round, seeded."""

    name = "random"

    def __init__(self, k: int, seed: int = 0):
        if k < 0:
            raise ValueError("k must be >= 0")
        self.k = k
        self.seed = seed
        self._round = 0

    def select(self, profiles) -> set[str]:
        workers = [p.worker for p in profiles]
        return select_random(workers, min(self.k, len(workers)), self.seed + self._round)

    def update(self, acc_prev, acc_now, profiles, selected) -> None:
        self._round += 1


class RMinMaxSelector:
    name = "rminmax"

    def __init__(self, rmin: float = 5.0, rmax: float = 5.0):
        self.state = RMinMaxState(rmin, rmax)

    def select(self, profiles) -> set[str]:
        return select_rminmax(profiles, self.state)

    def update(self, acc_prev, acc_now, profiles, selected) -> None:
        self.state = update_rminmax(self.state, acc_prev, acc_now)


class TimeBasedSelector:
    name = "timebased"

    def __init__(self, r: int = 10, t_budget: float = 0.0, threshold_a: float = 0.005):
        self.state = TimeBasedState(r=r, t_budget=t_budget, threshold_a=threshold_a)

    def select(self, profiles) -> set[str]:
        return select_timebased(profiles, self.state)

    def update(self, acc_prev, acc_now, profiles, selected) -> None:
        left_out = [p for p in profiles if p.worker not in selected]
        self.state = update_timebased(self.state, left_out, acc_prev, acc_now)
