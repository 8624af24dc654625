"""Command-line harness.

Subcommands:

* ``train``  -- run a method x env x seed grid (resumable), evaluate, and
  render the report.
* ``eval``   -- re-evaluate a stored checkpoint.
* ``report`` -- re-render tables/plots from stored records.
* ``trace``  -- dump per-episode action traces (optionally observations and
  spectra) for a stored checkpoint.

Failures print a machine-readable JSON object on stderr and exit nonzero.
"""

import argparse
import json
import os
import sys

import numpy as np

from .bench import BenchmarkConfig, load_records, render_report, run_benchmark
from .checkpoint import atomic_write_text, load_checkpoint
from .envs import make_env
from .metrics import amplitude_spectrum, evaluate, smoothness
from .ppo import RunningNorm
from .regularizers import METHOD_GRAMMAR, parse_method


def _split_csv(values):
    out = []
    for chunk in values or []:
        out.extend(p.strip() for p in str(chunk).split(",") if p.strip())
    return out


def _parse_seeds(text):
    if text is None:
        return None
    if "," in text:
        return [int(s) for s in text.split(",") if s.strip()]
    count = int(text)
    return list(range(count))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="smoothrl",
        description="Benchmark action-smoothing methods for PPO policies "
                    f"(method grammar: {METHOD_GRAMMAR})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train and evaluate a benchmark grid")
    train.add_argument("--env", action="append",
                       help="environment name(s), comma separable")
    train.add_argument("--method", action="append",
                       help=f"method string(s); grammar: {METHOD_GRAMMAR}")
    train.add_argument("--seeds", help="seed count N (0..N-1) or comma list")
    train.add_argument("--steps", type=int, help="training steps per run")
    train.add_argument("--out", help="output directory")
    train.add_argument("--config", help="YAML config file (flags override it)")
    train.add_argument("--dr", action="store_true", default=None,
                       help="enable domain randomization during training")
    train.add_argument("--workers", type=int, help="parallel run workers")
    train.add_argument("--eval-episodes", type=int,
                       help="deterministic evaluation episodes per run")

    evalp = sub.add_parser("eval", help="evaluate a stored checkpoint")
    evalp.add_argument("--checkpoint", required=True)
    evalp.add_argument("--env", required=True)
    evalp.add_argument("--episodes", type=int, default=100)
    evalp.add_argument("--seed", type=int, default=0)
    evalp.add_argument("--out", help="write the stats JSON here as well")

    report = sub.add_parser("report", help="re-render report from records")
    report.add_argument("--out", required=True, help="results directory")

    trace = sub.add_parser("trace", help="dump evaluation action traces")
    trace.add_argument("--checkpoint", required=True)
    trace.add_argument("--env", required=True)
    trace.add_argument("--episodes", type=int, default=1)
    trace.add_argument("--seed", type=int, default=0)
    trace.add_argument("--out", required=True, help="directory for trace CSVs")
    trace.add_argument("--spectrum", action="store_true",
                       help="also dump per-dimension amplitude spectra")
    trace.add_argument("--obs", action="store_true",
                       help="also dump observation traces")
    return parser


def _load_yaml(path):
    import yaml

    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ValueError(f"config file {path} must hold a mapping")
    return doc


def _train(args):
    doc = _load_yaml(args.config) if args.config else {}
    envs = _split_csv(args.env)
    methods = _split_csv(args.method)
    if envs:
        doc["envs"] = envs
    if methods:
        doc["methods"] = methods
    seeds = _parse_seeds(args.seeds)
    if seeds is not None:
        doc["seeds"] = seeds
    if args.steps is not None:
        doc["steps"] = {env: args.steps for env in doc.get("envs", ["pendulum"])}
    if args.out is not None:
        doc["out_dir"] = args.out
    if args.dr is not None:
        doc["dr"] = args.dr
    if args.workers is not None:
        doc["workers"] = args.workers
    if args.eval_episodes is not None:
        doc["eval_episodes"] = args.eval_episodes
    config = BenchmarkConfig.from_dict(doc)

    records, skipped = run_benchmark(config)
    failed = [r for r in records if r.get("status") != "ok"]
    print(f"[bench] grid complete: {len(records)} runs "
          f"({skipped} reused, {len(failed)} failed)")
    print(f"[bench] report: {os.path.join(config.out_dir, 'report.txt')}")
    return 0


def _restore(checkpoint_path, env_name):
    tensors, meta = load_checkpoint(checkpoint_path)
    method = parse_method(meta["method"])
    probe = make_env(env_name)
    if meta.get("obs_dim") not in (None, probe.obs_dim) or \
            meta.get("act_dim") not in (None, probe.act_dim):
        raise ValueError(
            f"checkpoint was trained for obs_dim={meta.get('obs_dim')}, "
            f"act_dim={meta.get('act_dim')}; env {env_name!r} has "
            f"obs_dim={probe.obs_dim}, act_dim={probe.act_dim}"
        )
    ac = method.build(probe.obs_dim, probe.act_dim, np.random.default_rng(0))
    ac.load_state(tensors)
    norm = RunningNorm.from_state(tensors, probe.obs_dim)
    return ac, norm, meta


def _eval(args):
    ac, norm, meta = _restore(args.checkpoint, args.env)
    stats = evaluate(ac, norm, args.env, args.episodes, seed=args.seed)
    doc = {
        "format_version": 1,
        "checkpoint": args.checkpoint,
        "env": args.env,
        "method": meta.get("method"),
        "episodes": stats.episodes,
        "seed": args.seed,
        "return_mean": stats.return_mean,
        "return_std": stats.return_std,
        "sm_mean": stats.sm_mean,
        "sm_std": stats.sm_std,
        "per_dim_sm_mean": stats.per_dim_sm_mean,
    }
    text = json.dumps(doc, indent=1)
    print(text)
    if args.out:
        atomic_write_text(args.out, text)
    return 0


def _report(args):
    records = load_records(args.out)
    if not records:
        raise FileNotFoundError(f"no records under {args.out!r}")
    paths = render_report(args.out, records)
    print(f"[report] table: {paths['table']}")
    print(f"[report] csv:   {paths['csv']}")
    for p in paths["plots"]:
        print(f"[report] plot:  {p}")
    return 0


def _write_trace_csv(path, trace):
    dims = trace.shape[1]
    header = "step," + ",".join(f"dim{d}" for d in range(dims))
    lines = ["# format_version=1", header]
    for step, row in enumerate(trace):
        lines.append(f"{step}," + ",".join(repr(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _trace(args):
    ac, norm, _ = _restore(args.checkpoint, args.env)
    os.makedirs(args.out, exist_ok=True)
    probe = make_env(args.env)
    f_s = probe.sampling_frequency

    for ep in range(args.episodes):
        env = make_env(args.env, seed=np.random.SeedSequence((args.seed, 6, ep)))
        obs = env.reset()
        actions, observations = [], [obs]
        done = False
        while not done:
            mean = ac.mean_np(norm.normalize(obs).reshape(1, -1))[0]
            result = env.step(mean)
            lo, hi = -2.0, 2.0
            if hasattr(env, "max_torque"):
                lo, hi = -env.max_torque, env.max_torque
            elif hasattr(env, "max_force"):
                lo, hi = -env.max_force, env.max_force
            actions.append(np.clip(mean, lo, hi))
            observations.append(result.observation)
            obs, done = result.observation, result.done
        trace = np.asarray(actions)
        _write_trace_csv(os.path.join(args.out, f"ep{ep:04d}.csv"), trace)
        if args.obs:
            _write_trace_csv(
                os.path.join(args.out, f"ep{ep:04d}_obs.csv"),
                np.asarray(observations[:-1]),
            )
        if args.spectrum:
            spec = smoothness(trace, f_s)
            for d in range(trace.shape[1]):
                _, mags = amplitude_spectrum(trace[:, d], f_s)
                lines = ["# format_version=1", "freq_hz,amplitude"]
                for f, m in zip(spec.frequencies, mags):
                    lines.append(f"{f!r},{m!r}")
                atomic_write_text(
                    os.path.join(args.out, f"ep{ep:04d}_dim{d}_spectrum.csv"),
                    "\n".join(lines) + "\n",
                )
    print(f"[trace] wrote {args.episodes} episode trace(s) to {args.out}")
    return 0


_HANDLERS = {"train": _train, "eval": _eval, "report": _report, "trace": _trace}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except Exception as exc:
        sys.stderr.write(json.dumps({
            "error": type(exc).__name__,
            "message": str(exc),
        }) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
