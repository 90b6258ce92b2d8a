"""Command-line entry points.

Every run writes a provenance manifest (resolved configs, their hashes, seeds,
package version, argv) next to its outputs so any artifact can be traced back
to the exact configuration that produced it.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .demos import DemoError, DemoStore, PlannerError, scripted_expert, validate_demo
from .env import CataractEnv, EnvConfig, StepEvent
from .evaluation import EvalReport, EpisodeOutcome, build_report, run_eval
from .eye import EyeSpec, Fidelity, SectorId, build_eye, save_eye
from .learning import (
    MIX_PRESETS,
    MixConfig,
    PpoConfig,
    fine_tune_adapted,
    final_performance,
    load_checkpoint,
    save_checkpoint,
    train_curriculum,
    write_curves_csv,
    write_updates_csv,
)
from .rendering import ObservationConfig
from .session import SessionServer


def _env_config_from(args, fidelity: str) -> EnvConfig:
    """Resolve an EnvConfig from (fidelity default | --config file) + flags."""
    if getattr(args, "config", None):
        with open(args.config) as fh:
            cfg = EnvConfig.from_dict(json.load(fh))
    else:
        cfg = EnvConfig.low_poly() if fidelity == "low" else EnvConfig.high_poly()
    overrides = {}
    if getattr(args, "obs_width", None):
        overrides["observation"] = ObservationConfig(
            width=args.obs_width,
            height=args.obs_width,
            channels=getattr(args, "obs_channels", 1),
        )
    if getattr(args, "beta", None):
        overrides["beta"] = args.beta
    if getattr(args, "max_steps", None):
        overrides["max_steps"] = args.max_steps
    if overrides:
        import dataclasses

        cfg = dataclasses.replace(cfg, **overrides)
    cfg.validate()
    return cfg


def _write_manifest(out_dir, args, configs: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "argv": sys.argv[1:],
        "command": args.command,
        "version": __version__,
        "configs": configs,
    }
    with open(os.path.join(out_dir, "run_manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def _file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def cmd_build_eye(args) -> int:
    fidelity = Fidelity.LOW_POLY if args.fidelity == "low" else Fidelity.HIGH_POLY
    spec = EyeSpec.low_poly(seed=args.seed) if fidelity == Fidelity.LOW_POLY \
        else EyeSpec.high_poly(seed=args.seed)
    if args.resolution:
        import dataclasses

        spec = dataclasses.replace(spec, resolution=args.resolution)
    if args.voxel_size:
        import dataclasses

        spec = dataclasses.replace(spec, voxel_size_mm=args.voxel_size)
    grid, smap = build_eye(spec)
    save_eye(args.out, spec, grid, smap)
    left, right = smap.left_right_surface_fractions()
    print(f"built {args.fidelity}-fidelity eye {grid.dims} voxel={grid.voxel_size}mm")
    print(f"cornea surface split left/right: {left:.3f}/{right:.3f}")
    print(f"wrote {args.out} ({os.path.getsize(args.out)} bytes, hash {_file_hash(args.out)})")
    return 0


def cmd_train(args) -> int:
    low_cfg = _env_config_from(args, "low")
    high_cfg = _env_config_from(args, "high")
    ppo = PpoConfig(horizon=args.horizon, minibatch=args.minibatch)
    os.makedirs(args.out, exist_ok=True)
    if args.fidelity == "low":
        # single-stage run on the simple task only
        env = CataractEnv(low_cfg)
        from .learning import MIX_PRESETS, make_bundle, run_training

        bundle = make_bundle(env, seed=args.seed)
        run = run_training(env, bundle, args.steps, ppo, MIX_PRESETS["NonAdapt"], seed=args.seed)
        ckpt = os.path.join(args.out, "stage1.kckp")
        save_checkpoint(ckpt, bundle, meta={
            "env_config_hash": low_cfg.config_hash(),
            "obs_config_hash": low_cfg.observation.config_hash(),
            "seed": args.seed,
        })
        write_curves_csv(os.path.join(args.out, "curves_stage1.csv"), run)
        write_updates_csv(os.path.join(args.out, "updates_stage1.csv"), run)
        print(f"stage1 done: {len(run.episodes)} episodes, checkpoint hash {_file_hash(ckpt)}")
    else:
        low_env = CataractEnv(low_cfg)
        high_env = CataractEnv(high_cfg)
        bundle, s1, s2 = train_curriculum(
            low_env, high_env, (args.steps, args.high_steps), seed=args.seed, ppo=ppo
        )
        for name, run in (("stage1", s1), ("stage2", s2)):
            write_curves_csv(os.path.join(args.out, f"curves_{name}.csv"), run)
            write_updates_csv(os.path.join(args.out, f"updates_{name}.csv"), run)
        ckpt = os.path.join(args.out, "stage2.kckp")
        save_checkpoint(ckpt, bundle, meta={
            "env_config_hash": high_cfg.config_hash(),
            "obs_config_hash": high_cfg.observation.config_hash(),
            "seed": args.seed,
        })
        print(f"curriculum done, final performance "
              f"{final_performance(s2.episodes if s2.episodes else s1.episodes):.3f}, "
              f"checkpoint hash {_file_hash(ckpt)}")
    _write_manifest(args.out, args, {
        "low_env": low_cfg.to_dict(), "high_env": high_cfg.to_dict(),
        "low_hash": low_cfg.config_hash(), "high_hash": high_cfg.config_hash(),
        "seed": args.seed, "steps": args.steps,
    })
    return 0


def cmd_config(args) -> int:
    cfg = _env_config_from(args, args.fidelity)
    with open(args.out, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=1, sort_keys=True)
    print(f"wrote {args.out} (hash {cfg.config_hash()})")
    return 0


def cmd_adapt(args) -> int:
    cfg = _env_config_from(args, "high")
    bundle, header = load_checkpoint(args.base)
    if args.preset:
        mix = MIX_PRESETS[args.preset]
    else:
        mix = MixConfig(args.lam_gail, args.lam_env)
    store = DemoStore(args.demos)
    ids = store.ids(half=args.half) if args.half else store.ids(
        sector=SectorId[args.sector] if args.sector else None
    )
    if not ids:
        print("no matching demonstrations in store", file=sys.stderr)
        return 1
    obs_blocks, act_blocks = [], []
    for demo_id in ids:
        demo = store.load(demo_id, expected_obs_hash=cfg.observation.config_hash())
        obs_blocks.append(demo.obs_matrix())
        act_blocks.append(demo.action_matrix(cfg.bounds))
    demos = (np.concatenate(obs_blocks), np.concatenate(act_blocks))
    env = CataractEnv(cfg)
    ppo = PpoConfig(horizon=args.horizon, minibatch=args.minibatch)
    run = fine_tune_adapted(bundle, env, demos, mix, args.steps, seed=args.seed, ppo=ppo)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "adapted.kckp")
    save_checkpoint(ckpt, bundle, meta={
        "env_config_hash": cfg.config_hash(),
        "obs_config_hash": cfg.observation.config_hash(),
        "mix": {"lam_gail": mix.lam_gail, "lam_env": mix.lam_env},
        "base": args.base,
        "seed": args.seed,
    })
    write_curves_csv(os.path.join(args.out, "curves_adapt.csv"), run)
    write_updates_csv(os.path.join(args.out, "updates_adapt.csv"), run)
    _write_manifest(args.out, args, {
        "env": cfg.to_dict(), "env_hash": cfg.config_hash(),
        "mix": {"lam_gail": mix.lam_gail, "lam_env": mix.lam_env},
        "demos": ids, "seed": args.seed,
    })
    print(f"adapted ({mix.lam_gail}/{mix.lam_env}) on {len(ids)} demos, "
          f"checkpoint hash {_file_hash(ckpt)}")
    return 0


def cmd_eval(args) -> int:
    cfg = _env_config_from(args, args.fidelity)
    bundle, header = load_checkpoint(args.checkpoint)
    expected = header.get("meta", {}).get("obs_config_hash")
    if expected and expected != cfg.observation.config_hash():
        print(f"checkpoint expects observation config {expected}, "
              f"got {cfg.observation.config_hash()}", file=sys.stderr)
        return 1
    env = CataractEnv(cfg)
    seeds = [int(s) for s in args.seeds.split(",")]
    outcomes = run_eval(bundle, env, args.episodes, seeds, stochastic=args.stochastic)
    payload = {
        "agent": args.agent,
        "env_config_hash": cfg.config_hash(),
        "n_episodes": args.episodes,
        "seeds": seeds,
        "outcomes": [
            {
                "outcome": o.outcome.name,
                "entry_sector": o.entry_sector.name if o.entry_sector else None,
                "steps": o.steps,
                "env_return": o.env_return,
                "seed": o.seed,
            }
            for o in outcomes
        ],
    }
    with open(args.out, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
    wins = sum(1 for o in outcomes if o.outcome == StepEvent.SUCCESS)
    print(f"evaluated {len(outcomes)} episodes, successes {wins}, wrote {args.out}")
    return 0


def cmd_demo_gen(args) -> int:
    cfg = _env_config_from(args, args.fidelity)
    store = DemoStore(args.out)
    sectors = [SectorId[s] for s in args.sectors.split(",")]
    failures = 0
    for sector in sectors:
        for seed in range(args.seeds):
            try:
                demo = scripted_expert(cfg, sector, seed, surgeon_id=args.surgeon)
            except PlannerError as exc:
                print(f"FAILED {sector.name} seed {seed}: {exc}", file=sys.stderr)
                failures += 1
                continue
            demo_id = store.save(demo)
            print(f"saved {demo_id} ({len(demo.steps)} steps)")
    _write_manifest(args.out, args, {
        "env": cfg.to_dict(), "env_hash": cfg.config_hash(),
        "sectors": [s.name for s in sectors], "seeds": args.seeds,
    })
    return 1 if failures else 0


def cmd_demo_serve(args) -> int:
    cfg = _env_config_from(args, args.fidelity)
    store = DemoStore(args.store)
    server = SessionServer(cfg, store, tick_rate=args.tick_rate)
    print(f"session service on ws://{args.host}:{args.port} "
          f"(config {cfg.config_hash()}, tick {args.tick_rate} Hz)")
    server.run(args.host, args.port)
    return 0


def cmd_replay(args) -> int:
    cfg = _env_config_from(args, args.fidelity)
    store = DemoStore(args.store)
    demo = store.load(args.demo_id)
    if demo.env_config_hash != cfg.config_hash():
        print(f"refusing replay: demo recorded under config {demo.env_config_hash}, "
              f"current config is {cfg.config_hash()}", file=sys.stderr)
        return 1
    report = validate_demo(cfg, demo)
    print(json.dumps({
        "demo_id": args.demo_id,
        "valid": report.valid,
        "outcome": report.outcome,
        "entry_sector": report.entry_sector,
        "n_steps": report.n_steps,
        "reward_mismatches": report.reward_mismatches,
    }, indent=1))
    return 0 if report.valid else 1


def cmd_report(args) -> int:
    outcomes_by_agent = {}
    n_episodes = 0
    for path in args.inputs:
        with open(path) as fh:
            payload = json.load(fh)
        outs = [
            EpisodeOutcome(
                outcome=StepEvent[o["outcome"]],
                entry_sector=SectorId[o["entry_sector"]] if o["entry_sector"] else None,
                steps=o["steps"],
                env_return=o["env_return"],
                seed=o["seed"],
            )
            for o in payload["outcomes"]
        ]
        outcomes_by_agent[payload["agent"]] = outs
        n_episodes = payload["n_episodes"]
    report = build_report(outcomes_by_agent, n_episodes)
    base, _ = os.path.splitext(args.out)
    with open(base + ".json", "w") as fh:
        fh.write(report.to_json())
    with open(base + ".csv", "w") as fh:
        fh.write(report.to_csv())
    print(f"wrote {base}.json and {base}.csv "
          f"({len(report.agents)} agents x {len(report.adssr_values)} targets)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="keratome",
                                description="incision training sandbox tooling")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-eye", help="build and export a voxel eye container")
    b.add_argument("--fidelity", choices=("low", "high"), default="low")
    b.add_argument("--resolution", type=int)
    b.add_argument("--voxel-size", type=float)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.set_defaults(fn=cmd_build_eye)

    t = sub.add_parser("train", help="curriculum training (simple then complex task)")
    t.add_argument("--fidelity", choices=("low", "high"), default="high",
                   help="'low' trains stage 1 only; 'high' runs both stages")
    t.add_argument("--steps", type=int, required=True, help="stage-1 env steps")
    t.add_argument("--high-steps", type=int, default=0, help="stage-2 env steps")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--obs-width", type=int, default=None)
    t.add_argument("--obs-channels", type=int, default=1)
    t.add_argument("--beta", type=int)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--horizon", type=int, default=2048)
    t.add_argument("--minibatch", type=int, default=256)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    c = sub.add_parser("config", help="write a fidelity's default env config as JSON")
    c.add_argument("--fidelity", choices=("low", "high"), default="high")
    c.add_argument("--obs-width", type=int, default=None)
    c.add_argument("--obs-channels", type=int, default=1)
    c.add_argument("--beta", type=int)
    c.add_argument("--max-steps", type=int)
    c.add_argument("--out", required=True)
    c.set_defaults(fn=cmd_config)

    a = sub.add_parser("adapt", help="demonstration-guided fine-tuning")
    a.add_argument("--base", required=True, help="pretrained checkpoint")
    a.add_argument("--demos", required=True, help="demonstration store directory")
    a.add_argument("--preset", choices=tuple(MIX_PRESETS))
    a.add_argument("--lam-gail", type=float, default=0.5)
    a.add_argument("--lam-env", type=float, default=0.5)
    a.add_argument("--half", choices=("Left", "Right"))
    a.add_argument("--sector")
    a.add_argument("--steps", type=int, required=True)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--obs-width", type=int, default=None)
    a.add_argument("--obs-channels", type=int, default=1)
    a.add_argument("--beta", type=int)
    a.add_argument("--max-steps", type=int)
    a.add_argument("--horizon", type=int, default=2048)
    a.add_argument("--minibatch", type=int, default=256)
    a.add_argument("--config", help="env config JSON overriding the fidelity default")
    a.add_argument("--out", required=True)
    a.set_defaults(fn=cmd_adapt)

    e = sub.add_parser("eval", help="run evaluation episodes, no learning")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--fidelity", choices=("low", "high"), default="high")
    e.add_argument("--episodes", type=int, default=100)
    e.add_argument("--seeds", default="0,1,2,3,4")
    e.add_argument("--agent", default="agent")
    e.add_argument("--stochastic", action="store_true")
    e.add_argument("--obs-width", type=int, default=None)
    e.add_argument("--obs-channels", type=int, default=1)
    e.add_argument("--beta", type=int)
    e.add_argument("--max-steps", type=int)
    e.add_argument("--config", help="env config JSON overriding the fidelity default")
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_eval)

    g = sub.add_parser("demo-gen", help="generate scripted expert demonstrations")
    g.add_argument("--fidelity", choices=("low", "high"), default="high")
    g.add_argument("--sectors", default="LEFT1,LEFT2,LEFT3,RIGHT1,RIGHT2,RIGHT3")
    g.add_argument("--seeds", type=int, default=20, help="seeds per sector (0..N-1)")
    g.add_argument("--surgeon", default="scripted")
    g.add_argument("--obs-width", type=int, default=None)
    g.add_argument("--obs-channels", type=int, default=1)
    g.add_argument("--beta", type=int)
    g.add_argument("--max-steps", type=int)
    g.add_argument("--config", help="env config JSON overriding the fidelity default")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_demo_gen)

    s = sub.add_parser("demo-serve", help="interactive demonstration session service")
    s.add_argument("--fidelity", choices=("low", "high"), default="high")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8765)
    s.add_argument("--tick-rate", type=float, default=20.0)
    s.add_argument("--config", help="env config JSON overriding the fidelity default")
    s.add_argument("--store", required=True)
    s.add_argument("--obs-width", type=int, default=None)
    s.add_argument("--obs-channels", type=int, default=1)
    s.add_argument("--beta", type=int)
    s.add_argument("--max-steps", type=int)
    s.set_defaults(fn=cmd_demo_serve)

    r = sub.add_parser("replay", help="re-validate a stored demonstration")
    r.add_argument("--config", help="env config JSON overriding the fidelity default")
    r.add_argument("--store", required=True)
    r.add_argument("--demo-id", required=True)
    r.add_argument("--fidelity", choices=("low", "high"), default="high")
    r.add_argument("--obs-width", type=int, default=None)
    r.add_argument("--obs-channels", type=int, default=1)
    r.add_argument("--beta", type=int)
    r.add_argument("--max-steps", type=int)
    r.set_defaults(fn=cmd_replay)

    rp = sub.add_parser("report", help="merge eval outputs into a metric table")
    rp.add_argument("--out", required=True)
    rp.add_argument("inputs", nargs="+")
    rp.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (DemoError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
