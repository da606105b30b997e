"""Command-line harness: Monte Carlo runs, training, and self checks.

Subcommands
-----------
baseline  Monte Carlo without compensation; writes a results table.
train     Online training run; writes a checkpoint and a learning curve.
eval      Monte Carlo with a trained checkpoint, paired against an
          uncompensated run on the same seeds.
selftest  Fast self-contained checks of the core numerics.

Every output file starts with comment lines carrying the resolved config
hash and the master seed, so any result can be traced to the exact
configuration that produced it.  Re-running a command with identical
inputs reproduces identical bytes.

Exit codes: 0 success, 1 invalid input or refused request, 2 runtime
fault.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import estimator, scenario, trainer
from .config import RunConfig, compat_hash, config_hash, load_config


class CliError(Exception):
    """Invalid input or refused request (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the harness reserves 2 for faults
    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sfcsim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, cases_default, needs_ckpt=False):
        sp.add_argument("--config", default=None,
                        help="JSON config file; flags override its values")
        sp.add_argument("--case", default=cases_default,
                        help="comma-separated case ids "
                             f"(default {cases_default})")
        sp.add_argument("--episodes", type=int, default=None,
                        help="episodes per case")
        sp.add_argument("--seed", type=int, default=None,
                        help="master seed (default from config)")
        sp.add_argument("--workers", type=int, default=None,
                        help="parallel episode workers "
                             "(default: all cores)")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--checkpoint", default=None,
                        required=needs_ckpt,
                        help="estimator checkpoint (.npz)")
        sp.add_argument("--dump-trajectories", type=int, default=0,
                        metavar="K",
                        help="write per-step CSVs for the first K episodes")

    common(sub.add_parser("baseline",
                          help="uncompensated Monte Carlo"), "0,1,2,3,4,5,6")
    common(sub.add_parser("eval",
                          help="compensated Monte Carlo, paired"),
           "1,2,3,4,5,6", needs_ckpt=True)
    common(sub.add_parser("train", help="online training run"), "3")
    common(sub.add_parser("selftest", help="fast numeric self checks"), "3")
    return p


def _parse_cases(text: str) -> list[int]:
    try:
        cases = [int(tok) for tok in str(text).split(",") if tok.strip()]
    except ValueError as exc:
        raise CliError(f"bad --case value {text!r}: {exc}") from None
    if not cases:
        raise CliError("empty --case list")
    return cases


def _resolve(args) -> tuple[RunConfig, int, int]:
    """Config file + flag overrides -> (config, master seed, workers)."""
    try:
        cfg = load_config(args.config)
    except (OSError, ValueError, TypeError) as exc:
        raise CliError(f"config: {exc}") from None
    seed = cfg.master_seed if args.seed is None else args.seed
    workers = args.workers if args.workers is not None \
        else (os.cpu_count() or 1)
    if workers < 1:
        raise CliError("--workers must be >= 1")
    if args.episodes is not None and args.episodes < 1:
        raise CliError("--episodes must be >= 1")
    if args.dump_trajectories < 0:
        raise CliError("--dump-trajectories must be >= 0")
    return cfg, seed, workers


def _out_dir(args) -> Path:
    out = Path(args.out) if args.out else Path("runs") / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(out: Path, cfg: RunConfig, meta: dict) -> None:
    # the echoed file round-trips through load_config; run metadata
    # (hashes, seeds, command line) lives beside it
    (out / "config_resolved.json").write_text(
        json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "run_meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _header(cfg: RunConfig, seed: int) -> str:
    return (f"# config_hash: {config_hash(cfg)}\n"
            f"# master_seed: {seed}\n")


_RESULT_COLS = ("case", "n", "hit50_pct", "hit100_pct", "fuel_mu_kg",
                "fuel_sigma_kg", "violation_pct", "mean_miss_m",
                "median_miss_m")


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def _write_results(path: Path, rows: list[scenario.StatsRow],
                   cfg: RunConfig, seed: int) -> None:
    lines = [_header(cfg, seed) + ",".join(_RESULT_COLS)]
    for r in rows:
        lines.append(",".join(_fmt(v) for v in (
            r.case_id, r.n, r.hit50_pct, r.hit100_pct, r.fuel_mu_kg,
            r.fuel_sigma_kg, r.violation_pct, r.mean_miss_m,
            r.median_miss_m)))
    path.write_text("\n".join(lines) + "\n")


def _write_episodes(path: Path, records: list[scenario.EpisodeRecord],
                    cfg: RunConfig, seed: int) -> None:
    lines = [_header(cfg, seed)
             + "case,episode,miss_m,fuel_kg,reason,duration_s"]
    for r in records:
        lines.append(",".join((str(r.case_id), str(r.episode_index),
                               _fmt(r.miss_m), _fmt(r.fuel_used_kg),
                               r.reason, _fmt(r.duration_s))))
    path.write_text("\n".join(lines) + "\n")


_TRAJ_COLS = (["t", "theta_u_meas", "theta_v_meas", "theta_u_stab",
               "theta_v_stab"]
              + [f"eps_true_{i}" for i in range(5)]
              + [f"eps_hat_{i}" for i in range(5)]
              + ["omega_x", "omega_y", "omega_z", "fuel_kg",
                 "thruster_flags"])


def _write_trajectory(path: Path, traj: dict, cfg: RunConfig,
                      seed: int) -> None:
    lines = [_header(cfg, seed) + ",".join(_TRAJ_COLS)]
    n = len(traj["t"])
    for i in range(n):
        vals = [traj["t"][i], traj["theta_u_meas"][i],
                traj["theta_v_meas"][i], traj["theta_u_stab"][i],
                traj["theta_v_stab"][i]]
        vals += list(traj["eps_true"][i]) + list(traj["eps_hat"][i])
        vals += list(traj["omega_meas"][i])
        vals.append(traj["fuel_kg"][i])
        lines.append(",".join(_fmt(float(v)) for v in vals)
                     + f",{int(traj['flags'][i])}")
    path.write_text("\n".join(lines) + "\n")


def _write_curve(path: Path, curve: list[trainer.CurvePoint],
                 cfg: RunConfig, seed: int) -> None:
    lines = [_header(cfg, seed)
             + "episode,window_hit50_pct,window_hit100_pct,"
               "loss,loss_obs,loss_eps,mean_fuel_kg"]
    for c in curve:
        lines.append(",".join(_fmt(v) for v in (
            c.episode, c.window_hit50_pct, c.window_hit100_pct, c.loss,
            c.loss_obs, c.loss_eps, c.mean_fuel_kg)))
    path.write_text("\n".join(lines) + "\n")


# -- parallel episode execution ------------------------------------------

_POOL: dict = {}


def _pool_init(cfg_dict: dict, checkpoint: str | None) -> None:
    _POOL["cfg"] = RunConfig(**cfg_dict)
    _POOL["params"] = None
    if checkpoint is not None:
        _POOL["params"], _, _ = estimator.load_checkpoint(checkpoint)


def _pool_episode(task):
    case, idx, seed, collect = task
    rec, _ = trainer.run_episode(case, idx, seed, params=_POOL["params"],
                                 options=_POOL["cfg"],
                                 collect_trajectory=collect)
    return rec


def run_batch(case: int, episodes: int, seed: int, cfg: RunConfig,
              checkpoint: str | None, workers: int,
              dump_k: int = 0) -> list[scenario.EpisodeRecord]:
    """Episodes 0..n-1 of one case; order and results are independent of
    the worker count."""
    tasks = [(case, i, seed, i < dump_k) for i in range(episodes)]
    if workers <= 1:
        _pool_init(cfg.to_dict(), checkpoint)
        return [_pool_episode(t) for t in tasks]
    ctx = get_context()
    with ctx.Pool(processes=min(workers, episodes),
                  initializer=_pool_init,
                  initargs=(cfg.to_dict(), checkpoint)) as pool:
        return pool.map(_pool_episode, tasks, chunksize=4)


def _dump_trajectories(out: Path, label: str,
                       records: list[scenario.EpisodeRecord],
                       budget: int, cfg: RunConfig, seed: int) -> int:
    written = 0
    for rec in records:
        if written >= budget or rec.trajectory is None:
            break
        name = f"trajectory_{label}_case{rec.case_id}" \
               f"_ep{rec.episode_index}.csv"
        _write_trajectory(out / name, rec.trajectory, cfg, seed)
        written += 1
    return written


# -- subcommands -----------------------------------------------------------


def cmd_baseline(args) -> int:
    cfg, seed, workers = _resolve(args)
    cases = _parse_cases(args.case)
    episodes = args.episodes or cfg.eval_episodes
    out = _out_dir(args)
    _echo_config(out, cfg, {
        "command": "baseline", "cases": cases, "episodes": episodes,
        "master_seed": seed, "config_hash": config_hash(cfg),
        "compat_hash": compat_hash(cfg)})
    rows, all_records = [], []
    budget = args.dump_trajectories
    for case in cases:
        records = run_batch(case, episodes, seed, cfg, None, workers,
                            dump_k=budget)
        budget -= _dump_trajectories(out, "baseline", records, budget,
                                     cfg, seed)
        rows.append(scenario.aggregate_records(records))
        all_records.extend(records)
    _write_results(out / "results.csv", rows, cfg, seed)
    _write_episodes(out / "episodes.csv", all_records, cfg, seed)
    for r in rows:
        print(f"case {r.case_id}: n={r.n} hit50={r.hit50_pct:.1f}% "
              f"hit100={r.hit100_pct:.1f}% fuel={r.fuel_mu_kg:.2f}kg "
              f"viol={r.violation_pct:.1f}% median={r.median_miss_m:.3f}m")
    return 0


def cmd_eval(args) -> int:
    cfg, seed, workers = _resolve(args)
    cases = _parse_cases(args.case)
    episodes = args.episodes or cfg.eval_episodes
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise CliError(f"checkpoint not found: {ckpt}")
    params, _, meta = estimator.load_checkpoint(ckpt)
    want = compat_hash(cfg)
    got = str(meta.get("compat_hash", ""))
    if got and got != want:
        raise CliError(
            f"checkpoint was trained under config {got} but the current "
            f"config resolves to {want}; pass the matching --config or "
            "retrain")
    if params.hidden != cfg.hidden:
        raise CliError(f"checkpoint hidden size {params.hidden} != "
                       f"config hidden {cfg.hidden}")
    out = _out_dir(args)
    _echo_config(out, cfg, {
        "command": "eval", "cases": cases, "episodes": episodes,
        "master_seed": seed, "config_hash": config_hash(cfg),
        "compat_hash": want, "checkpoint": str(ckpt)})
    comp_rows, unc_rows, all_records = [], [], []
    budget = args.dump_trajectories
    for case in cases:
        comp = run_batch(case, episodes, seed, cfg, str(ckpt), workers,
                         dump_k=budget)
        budget -= _dump_trajectories(out, "eval", comp, budget, cfg, seed)
        unc = run_batch(case, episodes, seed, cfg, None, workers)
        comp_rows.append(scenario.aggregate_records(comp))
        unc_rows.append(scenario.aggregate_records(unc))
        all_records.extend(comp)
    _write_results(out / "results.csv", comp_rows, cfg, seed)
    _write_results(out / "results_uncompensated.csv", unc_rows, cfg, seed)
    _write_episodes(out / "episodes.csv", all_records, cfg, seed)
    paired = [_header(cfg, seed)
              + "case,n,hit50_comp_pct,hit50_unc_pct,delta_hit50_pp,"
                "median_comp_m,median_unc_m,fuel_comp_kg,fuel_unc_kg,"
                "viol_comp_pct,viol_unc_pct"]
    for c, u in zip(comp_rows, unc_rows):
        paired.append(",".join(_fmt(v) for v in (
            c.case_id, c.n, c.hit50_pct, u.hit50_pct,
            c.hit50_pct - u.hit50_pct, c.median_miss_m, u.median_miss_m,
            c.fuel_mu_kg, u.fuel_mu_kg, c.violation_pct,
            u.violation_pct)))
    (out / "paired.csv").write_text("\n".join(paired) + "\n")
    for c, u in zip(comp_rows, unc_rows):
        print(f"case {c.case_id}: hit50 {c.hit50_pct:.1f}% vs "
              f"{u.hit50_pct:.1f}% uncompensated "
              f"({c.hit50_pct - u.hit50_pct:+.1f}pp), median "
              f"{c.median_miss_m:.3f} vs {u.median_miss_m:.3f} m")
    return 0


def cmd_train(args) -> int:
    cfg, seed, _ = _resolve(args)
    cases = _parse_cases(args.case)
    if len(cases) != 1:
        raise CliError("train takes exactly one case")
    if args.episodes is not None:
        cfg = cfg.replace(total_episodes=args.episodes)
    params = adam = None
    offset = 0
    if args.checkpoint is not None:
        ckpt = Path(args.checkpoint)
        if not ckpt.exists():
            raise CliError(f"resume checkpoint not found: {ckpt}")
        params, adam, meta = estimator.load_checkpoint(ckpt)
        got = str(meta.get("compat_hash", ""))
        if got and got != compat_hash(cfg):
            raise CliError("resume checkpoint does not match the current "
                           "config; pass the original --config")
        offset = int(meta.get("episodes_done", 0))
    out = _out_dir(args)
    _echo_config(out, cfg, {
        "command": "train", "cases": cases,
        "episodes": cfg.total_episodes, "master_seed": seed,
        "config_hash": config_hash(cfg), "compat_hash": compat_hash(cfg)})

    def progress(episode, point):
        print(f"episode {episode}: loss={point.loss:.4f} "
              f"eps={point.loss_eps:.5f} "
              f"hit50={point.window_hit50_pct:.1f}% "
              f"hit100={point.window_hit100_pct:.1f}%", flush=True)

    result = trainer.train(cases[0], seed, cfg, params=params, adam=adam,
                           episode_offset=offset, progress=progress)
    estimator.save_checkpoint(
        out / "checkpoint.npz", result.params, adam=result.adam,
        meta={"compat_hash": compat_hash(cfg),
              "config_hash": config_hash(cfg), "master_seed": seed,
              "case_id": cases[0],
              "episodes_done": offset + cfg.total_episodes})
    _write_curve(out / "curve.csv", result.curve, cfg, seed)
    return 0


def cmd_selftest(args) -> int:
    cfg, seed, _ = _resolve(args)
    failures = 0

    def check(name, ok, detail=""):
        nonlocal failures
        line = f"{'PASS' if ok else 'FAIL'}  {name}"
        if detail:
            line += f"  ({detail})"
        print(line, flush=True)
        failures += 0 if ok else 1

    # same inputs, same bytes
    a, _ = trainer.run_episode(3, 0, seed, options=cfg)
    b, _ = trainer.run_episode(3, 0, seed, options=cfg)
    check("episode determinism",
          repr(a.miss_m) == repr(b.miss_m)
          and repr(a.fuel_used_kg) == repr(b.fuel_used_kg),
          f"miss={a.miss_m:.4f}")

    rng = np.random.default_rng(0)
    p8 = estimator.init_params(8, rng)
    seg = estimator.Segment(
        e=rng.normal(0, 0.1, (5, estimator.OBS_DIM)),
        u=rng.integers(0, 2, (5, estimator.CMD_DIM)).astype(float),
        h0=np.zeros(8),
        obs_target=rng.normal(0, 0.1, (5, estimator.OBS_DIM)),
        eps_target=rng.normal(0, 0.01, (5, estimator.OBS_DIM)),
        o0=rng.normal(0, 0.1, estimator.OBS_DIM))
    grads, _ = estimator.backward(seg, p8)
    worst = 0.0
    for name in ("W_fc1", "W_hn", "W_fch1", "W_fc4"):
        w = getattr(p8, name)
        idx = (0, 0)
        eps_fd = 1e-6
        for sign in (1.0, -1.0):
            w[idx] += sign * eps_fd
            val = estimator.segment_loss(seg, p8)[0]
            w[idx] -= sign * eps_fd
            if sign > 0:
                up = val
            else:
                dn = val
        num = (up - dn) / (2 * eps_fd)
        ana = grads[name][idx]
        worst = max(worst, abs(num - ana) / max(abs(num), 1e-12))
    check("estimator gradient vs finite difference", worst < 1e-4,
          f"rel={worst:.2e}")

    params = estimator.init_params(cfg.hidden,
                                   np.random.default_rng(cfg.init_seed))
    zeroed = params.copy()
    zeroed.W_fc4 = np.zeros_like(zeroed.W_fc4)
    zeroed.b_fc4 = np.zeros_like(zeroed.b_fc4)
    state = estimator.init_state(np.zeros(5), zeroed)
    _, eps, _ = estimator.forward_step(np.zeros(5),
                                       np.zeros(estimator.CMD_DIM),
                                       state, zeroed)
    check("zeroed head degrades to identity",
          float(np.max(np.abs(eps))) == 0.0)

    c, _ = trainer.run_episode(-1, 0, seed, options=cfg)
    check("ideal-case intercept", c.reason == "intercept" and c.miss_m < 50,
          f"miss={c.miss_m:.3f} reason={c.reason}")

    small = cfg.replace(total_episodes=1, update_every=1, hidden=16,
                        learning_rate=1e-3, buffer_passes=1)
    _, data = trainer.run_episode(3, 0, seed, mode="train",
                                  params=estimator.init_params(
                                      16, np.random.default_rng(0)),
                                  options=small)
    if data is None:
        check("single-episode overfit", False, "no training data")
    else:
        buffers = trainer.RolloutBuffers(4)
        buffers.append(data)
        p = estimator.init_params(16, np.random.default_rng(0))
        ad = estimator.AdamState.for_params(p, lr=small.learning_rate)
        first = last = None
        for _ in range(60):
            p, ad, metrics = trainer.update_params(buffers, p, ad, small)
            first = metrics["loss_before"] if first is None else first
            last = metrics["loss_after"]
        check("single-episode overfit", last < 0.25 * first,
              f"{first:.4f} -> {last:.4f}")

    print(f"{'OK' if failures == 0 else 'FAILED'}: "
          f"{5 - failures}/5 checks passed")
    return 0 if failures == 0 else 2


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"baseline": cmd_baseline, "eval": cmd_eval,
               "train": cmd_train, "selftest": cmd_selftest}[args.command]
    try:
        return handler(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # noqa: BLE001 - report faults as exit 2
        print(f"fault: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
