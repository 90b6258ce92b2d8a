"""Policy optimization stack: clipped-surrogate policy gradient with GAE,
an adversarial imitation discriminator, reward mixing presets, the two-stage
curriculum trainer, and demonstration-guided fine-tuning.

All randomness flows from explicit seeds; training is a pure function of
(configs, seed, demos) and checkpoints round-trip bit-identically.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from .nets import Adam, Mlp

LOG_STD_MIN, LOG_STD_MAX = -4.0, 1.0
LOG_STD_BIAS_INIT = -0.7
_LOG_2PI = float(np.log(2.0 * np.pi))

CHECKPOINT_MAGIC = b"KCKP"
CHECKPOINT_VERSION = 1


class LearningError(RuntimeError):
    """Raised on dimension mismatches or numerically broken updates."""


# Reward mixing ---------------------------------------------------------------

@dataclass(frozen=True)
class MixConfig:
    lam_gail: float
    lam_env: float

    def __post_init__(self):
        if self.lam_gail < 0 or self.lam_env < 0:
            raise ValueError("strength factors must be non-negative")


# The four named fine-tuning presets (imitation vs environment weights).
MIX_PRESETS = {
    "NonAdapt": MixConfig(0.0, 1.0),
    "BalancedAdapt": MixConfig(0.5, 0.5),
    "HighAdapt": MixConfig(0.7, 0.3),
    "PurelyAdapt": MixConfig(1.0, 0.0),
}


def mix_rewards(r_gail, r_env, mix: MixConfig):
    return r_gail * mix.lam_gail + r_env * mix.lam_env


def gail_reward(d_out, mode: str = "surrogate"):
    """Imitation reward from discriminator output(s) in (0, 1).

    'surrogate' uses the non-saturating -log(1 - D); 'raw' passes the
    probability straight through. Outputs clamped away from {0, 1}.
    """
    p = np.clip(np.asarray(d_out, dtype=np.float64), 1e-6, 1.0 - 1e-6)
    if mode == "surrogate":
        return -np.log1p(-p)
    if mode == "raw":
        return p
    raise ValueError(f"unknown gail reward mode {mode!r}")


# Policy / value / discriminator bundle ------------------------------------------

@dataclass(frozen=True)
class PpoConfig:
    clip_ratio: float = 0.2
    learning_rate: float = 3e-4
    epochs: int = 4
    minibatch: int = 256
    horizon: int = 2048
    gae_lambda: float = 0.95
    entropy_coef: float = 0.003
    value_coef: float = 0.5

    def validate(self):
        if not 0 < self.clip_ratio < 1:
            raise LearningError("clip_ratio must be in (0, 1)")
        if not 0 < self.gae_lambda <= 1:
            raise LearningError("gae_lambda must be in (0, 1]")
        if self.horizon < self.minibatch:
            raise LearningError("horizon must be >= minibatch")


@dataclass(frozen=True)
class Architecture:
    trunk: tuple = (256, 128)
    disc: tuple = (128, 64)


class PolicyBundle:
    """Shared-trunk actor-critic (6 action means + 6 log-stds, scalar value)
    plus a (observation, action) discriminator with logistic output.

    Actions live in normalized units: the executed action is
    clip(sample, -1, 1) scaled by the environment's per-axis bounds.
    """

    def __init__(self, obs_dim: int, seed: int = 0, arch: Architecture = Architecture(),
                 gail_mode: str = "surrogate",
                 obs_shift: np.ndarray | None = None,
                 obs_scale: np.ndarray | None = None):
        self.obs_dim = int(obs_dim)
        self.act_dim = 6
        self.arch = arch
        self.gail_mode = gail_mode
        self.obs_shift = None if obs_shift is None else np.asarray(obs_shift, dtype=np.float64)
        self.obs_scale = None if obs_scale is None else np.asarray(obs_scale, dtype=np.float64)
        self.trunk = Mlp([obs_dim, *arch.trunk], seed=seed, final_activation="tanh")
        self.pi_head = Mlp([arch.trunk[-1], 12], seed=seed + 1, final_scale=0.01)
        self.pi_head.biases[-1][6:] = LOG_STD_BIAS_INIT
        self.v_head = Mlp([arch.trunk[-1], 1], seed=seed + 2)
        self.disc = Mlp([obs_dim + 6, *arch.disc, 1], seed=seed + 3)
        self.adam_ac = Adam(self.ac_params())
        self.adam_d = Adam(self.disc.parameters())
        self.train_steps = 0

    def ac_params(self):
        return self.trunk.parameters() + self.pi_head.parameters() + self.v_head.parameters()

    def norm_obs(self, obs: np.ndarray) -> np.ndarray:
        """Fixed input normalization (scales are part of the checkpoint)."""
        if self.obs_shift is None:
            return obs
        return (obs - self.obs_shift) / self.obs_scale

    # Acting ------------------------------------------------------------

    def policy_stats(self, obs: np.ndarray):
        """Returns (mean, log_std, value) for a batch of observations."""
        h = self.trunk.forward(self.norm_obs(obs))
        out = self.pi_head.forward(h)
        out2 = np.atleast_2d(out)
        mean = out2[:, :6]
        log_std = np.clip(out2[:, 6:], LOG_STD_MIN, LOG_STD_MAX)
        value = np.atleast_2d(self.v_head.forward(h))[:, 0]
        if obs.ndim == 1:
            return mean[0], log_std[0], float(value[0])
        return mean, log_std, value

    def act(self, obs: np.ndarray, rng: np.random.Generator | None = None):
        """Sample (or take the mean of) the policy at one observation.

        Returns (sample, executed, logp, value): ``sample`` is the raw
        Gaussian draw used for likelihood ratios; ``executed`` is the
        clipped action actually applied and fed to the discriminator.
        """
        mean, log_std, value = self.policy_stats(obs)
        if rng is None:
            sample = mean.copy()
        else:
            sample = mean + np.exp(log_std) * rng.standard_normal(6)
        executed = np.clip(sample, -1.0, 1.0)
        logp = gaussian_logp(sample[None, :], mean[None, :], log_std[None, :])[0]
        return sample, executed, float(logp), value

    def disc_prob(self, obs: np.ndarray, act: np.ndarray) -> np.ndarray:
        x = np.concatenate([self.norm_obs(np.atleast_2d(obs)), np.atleast_2d(act)], axis=1)
        z = self.disc.forward(x)[:, 0]
        return 1.0 / (1.0 + np.exp(-z))


def gaussian_logp(x, mean, log_std):
    z = (x - mean) / np.exp(log_std)
    return -0.5 * np.sum(z * z + 2.0 * log_std + _LOG_2PI, axis=1)


def gaussian_entropy(log_std):
    return np.sum(log_std + 0.5 * (_LOG_2PI + 1.0), axis=1)


# Generalized advantage estimation ------------------------------------------------

def compute_gae(rewards, values, dones, last_value, gamma, lam):
    h = len(rewards)
    adv = np.zeros(h)
    next_value = last_value
    next_adv = 0.0
    for t in range(h - 1, -1, -1):
        mask = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * mask - values[t]
        next_adv = delta + gamma * lam * mask * next_adv
        adv[t] = next_adv
        next_value = values[t]
    returns = adv + values
    return adv, returns


# PPO update --------------------------------------------------------------------

def ppo_update(bundle: PolicyBundle, batch: dict, cfg: PpoConfig, rng: np.random.Generator):
    """One clipped-surrogate update over the rollout batch.

    ``batch`` needs: obs (N, obs_dim), actions (raw samples, N, 6),
    logp (N), advantages (N), returns (N).
    """
    cfg.validate()
    obs = batch["obs"]
    actions = batch["actions"]
    logp_old = batch["logp"]
    adv = batch["advantages"]
    returns = batch["returns"]
    n = obs.shape[0]

    std = adv.std()
    adv = (adv - adv.mean()) / (std + 1e-8)

    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "kl": 0.0, "clip_frac": 0.0}
    batches = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            idx = order[start:start + cfg.minibatch]
            if idx.size < 2:
                continue
            grads, mb_stats = actor_critic_grads(
                bundle, obs[idx], actions[idx], logp_old[idx], adv[idx], returns[idx], cfg
            )
            bundle.adam_ac.step(bundle.ac_params(), grads)
            for k in stats:
                stats[k] += mb_stats[k]
            batches += 1
    if batches:
        for k in stats:
            stats[k] /= batches
    return stats


def actor_critic_grads(bundle: PolicyBundle, mb_obs, mb_act, mb_logp_old, mb_adv,
                       mb_ret, cfg: PpoConfig):
    """Gradients of the clipped-surrogate + value + entropy objective for one
    minibatch, in bundle.ac_params() order. Shared by the update loop and by
    the finite-difference verification suite."""
    m = mb_obs.shape[0]
    h, trunk_cache = bundle.trunk.forward_cached(bundle.norm_obs(mb_obs))
    pi_out, pi_cache = bundle.pi_head.forward_cached(h)
    v_out, v_cache = bundle.v_head.forward_cached(h)

    mean = pi_out[:, :6]
    log_std_raw = pi_out[:, 6:]
    log_std = np.clip(log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
    inv_var = np.exp(-2.0 * log_std)
    diff = mb_act - mean
    logp = -0.5 * np.sum(diff * diff * inv_var + 2.0 * log_std + _LOG_2PI, axis=1)
    ratio = np.exp(logp - mb_logp_old)
    clipped = np.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio)
    surrogate = np.minimum(ratio * mb_adv, clipped * mb_adv)
    entropy = gaussian_entropy(log_std)
    values = v_out[:, 0]
    v_err = values - mb_ret

    policy_loss = -surrogate.mean()
    value_loss = float(np.mean(v_err**2))
    if not np.isfinite(policy_loss) or not np.isfinite(value_loss):
        raise LearningError(
            f"non-finite loss (policy={policy_loss}, value={value_loss}) "
            f"at train step {bundle.train_steps}"
        )

    # dLoss/dlogp: active where the unclipped branch is selected
    active = (ratio * mb_adv) <= (clipped * mb_adv) + 1e-12
    dlogp = np.where(active, -mb_adv * ratio, 0.0) / m

    g_mean = dlogp[:, None] * (diff * inv_var)
    # through log-std: d logp/d log_std = z^2 - 1; entropy adds -coef
    z2 = diff * diff * inv_var
    g_log_std = dlogp[:, None] * (z2 - 1.0) - cfg.entropy_coef / m
    g_log_std = np.where(
        (log_std_raw > LOG_STD_MIN) & (log_std_raw < LOG_STD_MAX), g_log_std, 0.0
    )
    g_pi = np.concatenate([g_mean, g_log_std], axis=1)
    g_v = (cfg.value_coef * 2.0 * v_err / m)[:, None]

    pi_grads, gh_pi = bundle.pi_head.backward(pi_cache, g_pi)
    v_grads, gh_v = bundle.v_head.backward(v_cache, g_v)
    trunk_grads, _ = bundle.trunk.backward(trunk_cache, gh_pi + gh_v)
    grads = trunk_grads + pi_grads + v_grads
    stats = {
        "policy_loss": float(policy_loss),
        "value_loss": value_loss,
        "entropy": float(entropy.mean()),
        "kl": float(np.mean(mb_logp_old - logp)),
        "clip_frac": float(np.mean(~active)),
    }
    return grads, stats


def actor_critic_loss(bundle: PolicyBundle, mb_obs, mb_act, mb_logp_old, mb_adv,
                      mb_ret, cfg: PpoConfig) -> float:
    """Scalar objective matching actor_critic_grads (for finite differences)."""
    h = bundle.trunk.forward(bundle.norm_obs(mb_obs))
    pi_out = bundle.pi_head.forward(h)
    values = bundle.v_head.forward(h)[:, 0]
    mean = pi_out[:, :6]
    log_std = np.clip(pi_out[:, 6:], LOG_STD_MIN, LOG_STD_MAX)
    logp = gaussian_logp(mb_act, mean, log_std)
    ratio = np.exp(logp - mb_logp_old)
    clipped = np.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio)
    surrogate = np.minimum(ratio * mb_adv, clipped * mb_adv)
    entropy = gaussian_entropy(log_std)
    return float(
        -surrogate.mean()
        - cfg.entropy_coef * entropy.mean()
        + cfg.value_coef * np.mean((values - mb_ret) ** 2)
    )


def discriminator_update(
    bundle: PolicyBundle,
    expert_obs: np.ndarray,
    expert_act: np.ndarray,
    policy_obs: np.ndarray,
    policy_act: np.ndarray,
    steps: int = 1,
    rng: np.random.Generator | None = None,
    minibatch: int = 256,
):
    """Logistic-loss steps separating expert (label 1) from policy (label 0).

    Returns balanced accuracy over the full inputs after the update.
    """
    if expert_obs.shape[0] == 0 or policy_obs.shape[0] == 0:
        raise LearningError("discriminator update needs non-empty batches")
    if expert_obs.shape[1] != bundle.obs_dim or policy_obs.shape[1] != bundle.obs_dim:
        raise LearningError("observation dimension mismatch for discriminator")
    rng = rng or np.random.default_rng(0)
    for _ in range(steps):
        ei = rng.integers(0, expert_obs.shape[0], size=min(minibatch, expert_obs.shape[0]))
        pi = rng.integers(0, policy_obs.shape[0], size=min(minibatch, policy_obs.shape[0]))
        obs = np.concatenate([expert_obs[ei], policy_obs[pi]], axis=0)
        act = np.concatenate([expert_act[ei], policy_act[pi]], axis=0)
        y = np.concatenate([np.ones(len(ei)), np.zeros(len(pi))])
        grads = discriminator_grads(bundle, obs, act, y)
        bundle.adam_d.step(bundle.disc.parameters(), grads)

    pe = bundle.disc_prob(expert_obs, expert_act)
    pp = bundle.disc_prob(policy_obs, policy_act)
    balanced_acc = 0.5 * (float((pe > 0.5).mean()) + float((pp <= 0.5).mean()))
    return balanced_acc


def discriminator_grads(bundle: PolicyBundle, obs: np.ndarray, act: np.ndarray,
                        y: np.ndarray):
    """Class-balanced logistic loss gradients for labeled (obs, act) rows."""
    x = np.concatenate([bundle.norm_obs(obs), act], axis=1)
    n_pos = max(int((y == 1).sum()), 1)
    n_neg = max(int((y == 0).sum()), 1)
    z, cache = bundle.disc.forward_cached(x)
    p = 1.0 / (1.0 + np.exp(-z[:, 0]))
    gz = np.where(y == 1, (p - 1.0) / n_pos, p / n_neg)[:, None] * 0.5
    grads, _ = bundle.disc.backward(cache, gz)
    return grads


def discriminator_loss(bundle: PolicyBundle, obs: np.ndarray, act: np.ndarray,
                       y: np.ndarray) -> float:
    """Scalar loss matching discriminator_grads (for finite differences)."""
    x = np.concatenate([bundle.norm_obs(obs), act], axis=1)
    z = bundle.disc.forward(x)[:, 0]
    p = np.clip(1.0 / (1.0 + np.exp(-z)), 1e-12, 1 - 1e-12)
    pos = -np.log(p[y == 1]).mean() if (y == 1).any() else 0.0
    neg = -np.log(1 - p[y == 0]).mean() if (y == 0).any() else 0.0
    return float(0.5 * (pos + neg))


# Rollout collection ------------------------------------------------------------

@dataclass
class EpisodeRecord:
    end_step: int
    env_return: float
    length: int
    outcome: int          # StepEvent value
    entry_sector: int     # -1 when no cornea contact


class EnvSession:
    """Keeps one environment's episode state across rollout boundaries."""

    def __init__(self, env, reset_rng: np.random.Generator):
        self.env = env
        self.reset_rng = reset_rng
        self.obs_flat = None
        self.env_return = 0.0
        self.length = 0

    def begin(self):
        seed = int(self.reset_rng.integers(0, 2**62))
        self.obs_flat = self.env.reset(seed).flatten()
        self.env_return = 0.0
        self.length = 0

    def step(self, action_executed: np.ndarray):
        bounds = self.env.config.bounds.as_array()
        result = self.env.step(action_executed * bounds)
        self.env_return += result.reward
        self.length += 1
        return result


def collect_rollout(session: EnvSession, bundle: PolicyBundle, horizon: int,
                    act_rng: np.random.Generator, global_step: int, episodes: list):
    """Gather ``horizon`` transitions, auto-resetting between episodes."""
    obs_dim = bundle.obs_dim
    buf = {
        "obs": np.empty((horizon, obs_dim)),
        "actions": np.empty((horizon, 6)),
        "executed": np.empty((horizon, 6)),
        "logp": np.empty(horizon),
        "values": np.empty(horizon),
        "rew_env": np.empty(horizon),
        "dones": np.zeros(horizon, dtype=bool),
    }
    if session.obs_flat is None:
        session.begin()
    for t in range(horizon):
        obs = session.obs_flat
        sample, executed, logp, value = bundle.act(obs, act_rng)
        result = session.step(executed)
        buf["obs"][t] = obs
        buf["actions"][t] = sample
        buf["executed"][t] = executed
        buf["logp"][t] = logp
        buf["values"][t] = value
        buf["rew_env"][t] = result.reward
        buf["dones"][t] = result.terminal
        global_step += 1
        if result.terminal:
            entry = -1 if result.entry_sector is None else int(result.entry_sector)
            episodes.append(
                EpisodeRecord(global_step, session.env_return, session.length,
                              int(result.event), entry)
            )
            session.begin()
        else:
            session.obs_flat = result.observation.flatten()
    # bootstrap value for the truncated tail
    _, _, last_value = bundle.policy_stats(session.obs_flat)
    buf["last_value"] = float(last_value)
    return buf, global_step


# Training loops ------------------------------------------------------------------

@dataclass
class TrainRun:
    episodes: list = field(default_factory=list)   # EpisodeRecord
    updates: list = field(default_factory=list)    # per-update stat dicts
    total_steps: int = 0


def run_training(
    env,
    bundle: PolicyBundle,
    total_steps: int,
    ppo: PpoConfig,
    mix: MixConfig,
    seed: int,
    demos: tuple[np.ndarray, np.ndarray] | None = None,
    disc_steps_per_update: int = 2,
) -> TrainRun:
    """Core loop: rollouts -> (optional imitation reward mixing) -> update.

    With lam_gail == 0 the discriminator is never evaluated or updated, so
    its parameters cannot influence the run. ``demos`` is (obs, act) arrays
    of expert data in normalized action units.
    """
    if env.observation_dim != bundle.obs_dim:
        raise LearningError(
            f"env obs dim {env.observation_dim} != bundle obs dim {bundle.obs_dim}"
        )
    use_gail = mix.lam_gail > 0.0
    if use_gail:
        if demos is None or demos[0].shape[0] == 0:
            raise LearningError("imitation mixing requires non-empty demos")
        if demos[0].shape[1] != bundle.obs_dim:
            raise LearningError(
                f"demo obs dim {demos[0].shape[1]} != bundle obs dim {bundle.obs_dim}"
            )
    ss = np.random.SeedSequence(seed)
    act_rng, reset_rng, update_rng, disc_rng = (
        np.random.default_rng(c) for c in ss.spawn(4)
    )
    session = EnvSession(env, reset_rng)
    run = TrainRun()
    gamma = env.config.gamma
    step = 0
    while step < total_steps:
        horizon = min(ppo.horizon, total_steps - step)
        horizon = max(horizon, ppo.minibatch)
        buf, step = collect_rollout(session, bundle, horizon, act_rng, step, run.episodes)
        if use_gail:
            d_prob = bundle.disc_prob(buf["obs"], buf["executed"])
            r_gail = gail_reward(d_prob, bundle.gail_mode)
            rewards = mix_rewards(r_gail, buf["rew_env"], mix)
        else:
            rewards = buf["rew_env"]
        adv, returns = compute_gae(
            rewards, buf["values"], buf["dones"], buf["last_value"], gamma, ppo.gae_lambda
        )
        batch = {
            "obs": buf["obs"],
            "actions": buf["actions"],
            "logp": buf["logp"],
            "advantages": adv,
            "returns": returns,
        }
        stats = ppo_update(bundle, batch, ppo, update_rng)
        if use_gail:
            stats["disc_acc"] = discriminator_update(
                bundle, demos[0], demos[1], buf["obs"], buf["executed"],
                steps=disc_steps_per_update, rng=disc_rng,
            )
        stats["step"] = step
        run.updates.append(stats)
        bundle.train_steps += horizon
    run.total_steps = step
    return run


def final_performance(episodes: list, window: int = 50) -> float:
    """Mean episodic environment return over the final ``window`` episodes."""
    if not episodes:
        raise LearningError("no completed episodes")
    tail = episodes[-window:]
    return float(np.mean([e.env_return for e in tail]))


def make_bundle(env, seed: int, arch: Architecture = Architecture(),
                gail_mode: str = "surrogate") -> PolicyBundle:
    """Bundle sized for an environment's observation space.

    Inputs are fed raw: the millimeter-scale pose dims carrying the control
    signal then dominate the first layer, which measurably speeds learning
    over flattening all dims to unit scale (pixels already live in [0, 1]).
    PolicyBundle still supports explicit obs_shift/obs_scale for nonstandard
    observation layouts.
    """
    return PolicyBundle(env.observation_dim, seed=seed, arch=arch, gail_mode=gail_mode)


def train_curriculum(
    low_env,
    high_env,
    budgets: tuple[int, int],
    seed: int,
    ppo: PpoConfig = PpoConfig(),
    arch: Architecture = Architecture(),
) -> tuple[PolicyBundle, TrainRun, TrainRun]:
    """Stage 1: environment-reward-only training on the simple task; stage 2
    continues the same bundle on the complex task."""
    if low_env.observation_dim != high_env.observation_dim:
        raise LearningError("observation dimensions must match across stages")
    bundle = make_bundle(low_env, seed=seed, arch=arch)
    stage1 = run_training(low_env, bundle, budgets[0], ppo, MIX_PRESETS["NonAdapt"], seed=seed)
    stage2 = run_training(high_env, bundle, budgets[1], ppo, MIX_PRESETS["NonAdapt"], seed=seed + 1)
    return bundle, stage1, stage2


def fine_tune_adapted(
    bundle: PolicyBundle,
    env,
    demos: tuple[np.ndarray, np.ndarray],
    mix: MixConfig,
    budget: int,
    seed: int,
    ppo: PpoConfig = PpoConfig(),
) -> TrainRun:
    """Demonstration-guided fine-tuning: per-step env reward and imitation
    reward are mixed by the preset's strength factors; the discriminator is
    refreshed every rollout batch."""
    return run_training(env, bundle, budget, ppo, mix, seed=seed, demos=demos)


def write_curves_csv(path, run: TrainRun, scr_window: int = 50) -> None:
    """Per-episode curve rows: step, return, length, outcome, entry sector,
    and a rolling success-rate window."""
    import csv as _csv

    with open(path, "w", newline="") as fh:
        w = _csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "env_return", "length", "outcome", "entry_sector", "scr_window"])
        window = []
        for e in run.episodes:
            window.append(1.0 if e.outcome == 2 else 0.0)  # StepEvent.SUCCESS
            if len(window) > scr_window:
                window.pop(0)
            w.writerow([
                e.end_step, repr(e.env_return), e.length, e.outcome, e.entry_sector,
                repr(sum(window) / len(window)),
            ])


def write_updates_csv(path, run: TrainRun) -> None:
    import csv as _csv

    cols = ["step", "policy_loss", "value_loss", "entropy", "kl", "clip_frac", "disc_acc"]
    with open(path, "w", newline="") as fh:
        w = _csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for u in run.updates:
            w.writerow([u.get(c, "") if c != "step" else u["step"] for c in cols])


# Checkpoint container --------------------------------------------------------------
# Layout: magic 'KCKP', u32 version, u32 header length, JSON header (utf-8),
# then float64 little-endian parameter blocks in a fixed order: trunk, policy
# head, value head, discriminator, actor-critic Adam moments, discriminator
# Adam moments. Shapes are reconstructed from the header. See docs/formats.md.

def save_checkpoint(path, bundle: PolicyBundle, meta: dict | None = None,
                    rng_state: dict | None = None) -> None:
    header = {
        "version": CHECKPOINT_VERSION,
        "obs_dim": bundle.obs_dim,
        "arch": {"trunk": list(bundle.arch.trunk), "disc": list(bundle.arch.disc)},
        "gail_mode": bundle.gail_mode,
        "obs_norm": bundle.obs_shift is not None,
        "train_steps": bundle.train_steps,
        "adam_ac_t": bundle.adam_ac.t,
        "adam_d_t": bundle.adam_d.t,
        "meta": meta or {},
        "rng_state": rng_state,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    arrays = (
        bundle.trunk.to_arrays()
        + bundle.pi_head.to_arrays()
        + bundle.v_head.to_arrays()
        + bundle.disc.to_arrays()
        + bundle.adam_ac.state_arrays()
        + bundle.adam_d.state_arrays()
    )
    if bundle.obs_shift is not None:
        arrays += [bundle.obs_shift, bundle.obs_scale]
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[PolicyBundle, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise LearningError("not a checkpoint file (bad magic)")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise LearningError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode())
        obs_dim = header["obs_dim"]
        use_norm = header.get("obs_norm", False)
        bundle = PolicyBundle(
            obs_dim,
            seed=0,
            arch=Architecture(
                trunk=tuple(header["arch"]["trunk"]), disc=tuple(header["arch"]["disc"])
            ),
            gail_mode=header["gail_mode"],
            obs_shift=np.zeros(obs_dim) if use_norm else None,
            obs_scale=np.ones(obs_dim) if use_norm else None,
        )
        targets = (
            bundle.trunk.parameters()
            + bundle.pi_head.parameters()
            + bundle.v_head.parameters()
            + bundle.disc.parameters()
            + bundle.adam_ac.m + bundle.adam_ac.v
            + bundle.adam_d.m + bundle.adam_d.v
        )
        if use_norm:
            targets += [bundle.obs_shift, bundle.obs_scale]
        for arr in targets:
            raw = fh.read(arr.size * 8)
            if len(raw) != arr.size * 8:
                raise LearningError("truncated checkpoint")
            arr[...] = np.frombuffer(raw, dtype="<f8").reshape(arr.shape)
        bundle.train_steps = header["train_steps"]
        bundle.adam_ac.t = header["adam_ac_t"]
        bundle.adam_d.t = header["adam_d_t"]
    return bundle, header
