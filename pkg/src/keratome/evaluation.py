"""Completion-rate and adaptation metrics with per-seed uncertainty, plus
machine-readable report export.

SCR is the fraction of evaluated episodes completing the incision; the
adaptive rate AdSSR(target) counts only successes entering through the target
sector or half, over the same denominator, so AdSSR <= SCR always and the six
sub-sector rates sum exactly to SCR.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .env import StepEvent
from .eye import LEFT_SECTORS, RIGHT_SECTORS, SectorId, in_half

HALVES = ("Left", "Right")
ALL_TARGETS = (
    "Left", "LEFT1", "LEFT2", "LEFT3",
    "Right", "RIGHT1", "RIGHT2", "RIGHT3",
)


class EvalError(RuntimeError):
    pass


@dataclass(frozen=True)
class EpisodeOutcome:
    outcome: StepEvent
    entry_sector: SectorId | None
    steps: int
    env_return: float
    seed: int

    def __post_init__(self):
        if self.outcome == StepEvent.SUCCESS and self.entry_sector is None:
            raise EvalError("successful episode must carry an entry sector")


def episode_seed(seed: int, index: int) -> int:
    """Fixed, platform-stable schedule of reset seeds for evaluation."""
    return int(np.random.SeedSequence((seed, index)).generate_state(1)[0])


def run_eval(policy, env, n_episodes: int, seeds, stochastic: bool = False):
    """Roll out ``n_episodes`` per seed with no learning updates.

    ``policy`` is either a PolicyBundle or a callable mapping a flattened
    observation to a normalized action in [-1, 1]^6. Deterministic (mean
    action) mode unless ``stochastic``.
    """
    act = _as_policy_fn(policy, env)
    outcomes = []
    for seed in seeds:
        rng = np.random.default_rng(seed) if stochastic else None
        for i in range(n_episodes):
            obs = env.reset(episode_seed(seed, i))
            flat = obs.flatten()
            ret = 0.0
            steps = 0
            bounds = env.config.bounds.as_array()
            while True:
                a = act(flat, rng)
                result = env.step(np.clip(a, -1.0, 1.0) * bounds)
                ret += result.reward
                steps += 1
                if result.terminal:
                    outcomes.append(
                        EpisodeOutcome(
                            outcome=result.event,
                            entry_sector=result.entry_sector,
                            steps=steps,
                            env_return=ret,
                            seed=seed,
                        )
                    )
                    break
                flat = result.observation.flatten()
    return outcomes


def _as_policy_fn(policy, env):
    if callable(policy) and not hasattr(policy, "policy_stats"):
        return lambda obs, rng: policy(obs) if rng is None else policy(obs)
    if policy.obs_dim != env.observation_dim:
        raise EvalError(
            f"policy obs dim {policy.obs_dim} != env obs dim {env.observation_dim}"
        )

    def act(obs, rng):
        _, executed, _, _ = policy.act(obs, rng)
        return executed

    return act


def scr(outcomes) -> float:
    if not outcomes:
        raise EvalError("no outcomes")
    wins = sum(1 for o in outcomes if o.outcome == StepEvent.SUCCESS)
    return wins / len(outcomes)


def _entry_matches(o: EpisodeOutcome, target) -> bool:
    if o.entry_sector is None:
        return False
    if isinstance(target, SectorId):
        return o.entry_sector == target
    return in_half(o.entry_sector, target)


def adssr(outcomes, target) -> tuple[float, float]:
    """Per-seed fraction of episodes that succeed AND enter via ``target``;
    returns (mean, std_err) across seeds (std_err = sample std / sqrt(n))."""
    if not outcomes:
        raise EvalError("no outcomes")
    if isinstance(target, str):
        if target not in HALVES:
            raise EvalError(f"unknown half {target!r}")
    per_seed = {}
    for o in outcomes:
        per_seed.setdefault(o.seed, []).append(
            o.outcome == StepEvent.SUCCESS and _entry_matches(o, target)
        )
    rates = np.array([np.mean(per_seed[k]) for k in sorted(per_seed)])
    mean = float(rates.mean())
    if len(rates) > 1:
        std_err = float(rates.std(ddof=1) / np.sqrt(len(rates)))
    else:
        std_err = 0.0
    return mean, std_err


def scr_by_seed(outcomes) -> tuple[float, float]:
    per_seed = {}
    for o in outcomes:
        per_seed.setdefault(o.seed, []).append(o.outcome == StepEvent.SUCCESS)
    rates = np.array([np.mean(per_seed[k]) for k in sorted(per_seed)])
    mean = float(rates.mean())
    std_err = float(rates.std(ddof=1) / np.sqrt(len(rates))) if len(rates) > 1 else 0.0
    return mean, std_err


def _target_key(target) -> str:
    return target.name if isinstance(target, SectorId) else target


def parse_target(key: str):
    if key in HALVES:
        return key
    return SectorId[key]


@dataclass
class EvalReport:
    agents: list                       # column order
    n_episodes: int
    scr_values: dict = field(default_factory=dict)    # agent -> (mean, std_err)
    adssr_values: dict = field(default_factory=dict)  # target key -> agent -> (mean, std_err)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "agents": self.agents,
                "n_episodes": self.n_episodes,
                "scr": {a: list(v) for a, v in self.scr_values.items()},
                "adssr": {
                    t: {a: list(v) for a, v in row.items()}
                    for t, row in self.adssr_values.items()
                },
                "meta": self.meta,
            },
            sort_keys=True,
            indent=1,
        )

    @staticmethod
    def from_json(text: str) -> "EvalReport":
        d = json.loads(text)
        return EvalReport(
            agents=d["agents"],
            n_episodes=d["n_episodes"],
            scr_values={a: tuple(v) for a, v in d["scr"].items()},
            adssr_values={
                t: {a: tuple(v) for a, v in row.items()} for t, row in d["adssr"].items()
            },
            meta=d.get("meta", {}),
        )

    def to_csv(self) -> str:
        """Long format: metric,target,agent,mean,std_err (trade-off ready)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "target", "agent", "mean", "std_err"])
        for agent in self.agents:
            m, se = self.scr_values[agent]
            w.writerow(["SCR", "", agent, repr(m), repr(se)])
        for target, row in self.adssr_values.items():
            for agent in self.agents:
                m, se = row[agent]
                w.writerow(["AdSSR", target, agent, repr(m), repr(se)])
        return buf.getvalue()


def build_report(outcomes_by_agent: dict, n_episodes: int, targets=ALL_TARGETS,
                 meta: dict | None = None) -> EvalReport:
    """One column per agent (insertion order preserved), one AdSSR row per
    target plus the SCR row."""
    report = EvalReport(agents=list(outcomes_by_agent), n_episodes=n_episodes,
                        meta=meta or {})
    for agent, outcomes in outcomes_by_agent.items():
        report.scr_values[agent] = scr_by_seed(outcomes)
    for key in targets:
        target = parse_target(key)
        row = {}
        for agent, outcomes in outcomes_by_agent.items():
            row[agent] = adssr(outcomes, target)
        report.adssr_values[_target_key(target)] = row
    return report


def check_identities(outcomes, tol: float = 1e-9) -> None:
    """Raise if the metric identities fail on an outcome list."""
    total = scr(outcomes)
    for half in HALVES:
        if adssr(outcomes, half)[0] > total + tol:
            raise EvalError(f"AdSSR({half}) exceeds SCR")
    sub_sum = sum(adssr(outcomes, s)[0] for s in SectorId)
    half_sum = adssr(outcomes, "Left")[0] + adssr(outcomes, "Right")[0]
    if abs(sub_sum - total) > tol or abs(half_sum - total) > tol:
        raise EvalError(
            f"sector sums inconsistent: sub={sub_sum} halves={half_sum} scr={total}"
        )
