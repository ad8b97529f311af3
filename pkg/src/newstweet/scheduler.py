"""Choose which tracked users to top off in each scheduling window.

Two policies:

``epoch``
    Users are served in shuffled passes ("epochs"). Each pass is a fresh
    permutation of the users tracked when it starts, so every user is served
    exactly once per pass and never waits more than two passes.

``priority``
    Users are drawn without replacement, proportionally to
    :func:`activity_priority`. A floor keeps idle users drawable, and any
    user left unserved for ``starvation_windows`` windows is served ahead of
    the weighted draw, which turns "eventually" into a hard bound.

Randomness is derived from ``(seed, purpose, counter)`` only, so the same
sequence of calls yields the same batches.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field

EPOCH = "epoch"
PRIORITY = "priority"

FLOOR_FRACTION = 0.01


def activity_priority(user, recent_rate: float, floor: float = FLOOR_FRACTION) -> float:
    """Scheduling weight for a user tweeting ``recent_rate`` tweets/day.

    Strictly increasing in the rate and never below ``floor`` (> 0).
    ``user`` is accepted for interface symmetry; the weight depends only on
    the rate.
    """
    if recent_rate < 0:
        raise ValueError("recent_rate must be >= 0")
    if floor <= 0:
        raise ValueError("floor must be > 0")
    return floor + recent_rate


def _rng(seed: int, purpose: str, counter: int) -> random.Random:
    return random.Random(f"{seed}:{purpose}:{counter}")


@dataclass
class Epoch:
    permutation: list[str] = field(default_factory=list)
    cursor: int = 0
    seed: int = 0

    @property
    def remaining(self) -> int:
        return len(self.permutation) - self.cursor


class TopoffScheduler:
    def __init__(self, seed: int, policy: str = EPOCH, starvation_windows: int | None = None):
        if policy not in (EPOCH, PRIORITY):
            raise ValueError(f"unknown scheduler policy {policy!r}")
        self.seed = seed
        self.policy = policy
        self.starvation_windows = starvation_windows
        self.tracked: list[str] = []
        self._tracked_set: set[str] = set()
        self.epoch = Epoch(seed=seed)
        self.epoch_number = -1
        self.rates: dict[str, float] = {}
        self.window = 0
        self.last_served: dict[str, int] = {}
        self._previous: dict[str, int | None] = {}

    # -- registration -------------------------------------------------------

    def register_user(self, user_id) -> None:
        user_id = str(user_id)
        if user_id in self._tracked_set:
            return
        self._tracked_set.add(user_id)
        self.tracked.append(user_id)
        # joins at the next epoch; a priority-policy user counts as waiting from now
        self.last_served.setdefault(user_id, self.window)

    def set_rate(self, user_id, recent_rate: float) -> None:
        self.rates[str(user_id)] = float(recent_rate)

    def __len__(self):
        return len(self.tracked)

    # -- batches -------------------------------------------------------------

    def next_batch(self, budget_slots: int) -> list[str]:
        if budget_slots < 0:
            raise ValueError("budget_slots must be >= 0")
        if self.policy == PRIORITY:
            batch = self._priority_batch(budget_slots)
        else:
            batch = self._epoch_batch(budget_slots)
        self._previous = {u: self.last_served.get(u) for u in batch}
        for user_id in batch:
            self.last_served[user_id] = self.window
        self.window += 1
        return batch

    def _new_epoch(self):
        self.epoch_number += 1
        seed = _rng(self.seed, "epoch-seed", self.epoch_number).getrandbits(64)
        perm = sorted(self.tracked)
        random.Random(seed).shuffle(perm)
        self.epoch = Epoch(perm, 0, seed)

    def _epoch_batch(self, slots):
        if self.epoch.remaining == 0:
            if not self.tracked:
                return []
            self._new_epoch()
        take = min(slots, self.epoch.remaining)
        start = self.epoch.cursor
        self.epoch.cursor += take
        return self.epoch.permutation[start:start + take]

    def give_back(self, user_ids) -> None:
        """Return the unserved tail of the last epoch batch (e.g. the budget
        ran out) so those users are served next, within the same epoch."""
        n = len(user_ids)
        if self.policy == EPOCH and n:
            start = self.epoch.cursor - n
            if start < 0 or self.epoch.permutation[start:self.epoch.cursor] != list(user_ids):
                raise ValueError("can only give back the tail of the last batch")
            self.epoch.cursor = start
        elif self.policy == PRIORITY:
            for user_id in user_ids:
                prev = self._previous.get(user_id)
                if prev is not None:
                    self.last_served[user_id] = prev

    def scores(self) -> dict[str, float]:
        rates = [self.rates.get(u, 0.0) for u in self.tracked]
        mean = sum(rates) / len(rates) if rates else 0.0
        floor = FLOOR_FRACTION * mean if mean > 0 else FLOOR_FRACTION
        return {u: activity_priority(None, self.rates.get(u, 0.0), floor) for u in self.tracked}

    def _starvation_limit(self, slots):
        if self.starvation_windows is not None:
            return self.starvation_windows
        return 2 * math.ceil(len(self.tracked) / max(1, slots)) * 10

    def _priority_batch(self, slots):
        if not self.tracked or slots == 0:
            return []
        slots = min(slots, len(self.tracked))
        limit = self._starvation_limit(slots)
        overdue = sorted((u for u in self.tracked
                          if self.window - self.last_served.get(u, self.window) >= limit),
                         key=lambda u: (self.last_served.get(u, self.window), u))
        batch = overdue[:slots]
        chosen = set(batch)
        rng = _rng(self.seed, "priority", self.window)
        weights = self.scores()
        pool = [u for u in sorted(self.tracked) if u not in chosen]
        # weighted sampling without replacement (Efraimidis-Spirakis keys)
        keyed = sorted(pool, key=lambda u: -math.log(1.0 - rng.random()) / weights[u])
        batch.extend(keyed[:slots - len(batch)])
        return batch

    # -- persistence ----------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps({
            "seed": self.seed,
            "policy": self.policy,
            "starvation_windows": self.starvation_windows,
            "tracked": self.tracked,
            "epoch": {"permutation": self.epoch.permutation, "cursor": self.epoch.cursor,
                      "seed": self.epoch.seed},
            "epoch_number": self.epoch_number,
            "rates": self.rates,
            "window": self.window,
            "last_served": self.last_served,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TopoffScheduler":
        data = json.loads(text)
        sched = cls(data["seed"], data["policy"], data.get("starvation_windows"))
        for user_id in data["tracked"]:
            sched.register_user(user_id)
        sched.epoch = Epoch(**data["epoch"])
        sched.epoch_number = data["epoch_number"]
        sched.rates = data["rates"]
        sched.window = data["window"]
        sched.last_served = data["last_served"]
        return sched
