"""Benchmark harness: method x env x seed grids, records, reports.

Every run produces one self-describing JSON record (plus a training-curve
CSV and a checkpoint), written atomically so a killed grid loses at most the
in-flight runs.  Completed runs are recognized by a content hash of the
run-relevant config slice and skipped on resume.  The report layer only
reads records; it never recomputes training.
"""

import hashlib
import json
import multiprocessing
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .checkpoint import atomic_write_text, save_checkpoint
from .envs import DEFAULT_OBS_NOISE, DomainRandomizationConfig, env_names, make_env, randomize
from .metrics import evaluate
from .ppo import PpoConfig, PpoTrainer, TrainingDiverged, rng_stream
from .regularizers import method_names, parse_method

FORMAT_VERSION = 1

DEFAULT_STEPS = {"pendulum": 150_000, "reacher": 400_000}


@dataclass
class BenchmarkConfig:
    envs: list = field(default_factory=lambda: ["pendulum"])
    methods: list = field(default_factory=method_names)
    seeds: list = field(default_factory=lambda: list(range(9)))
    steps: dict = field(default_factory=dict)   # env -> steps; defaults apply
    eval_episodes: int = 100
    out_dir: str = "results"
    workers: int = 1
    dr: bool = False
    dr_config: DomainRandomizationConfig = None
    ppo: PpoConfig = field(default_factory=PpoConfig)

    def __post_init__(self):
        if isinstance(self.seeds, int):
            self.seeds = list(range(self.seeds))
        if not self.seeds:
            raise ValueError("need at least one seed")
        for name in self.methods:
            parse_method(name)  # raises with the grammar on bad input
        for env in self.envs:
            if env not in env_names():
                raise ValueError(f"unknown environment {env!r}; available: {env_names()}")
        if self.eval_episodes < 1:
            raise ValueError("eval_episodes must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def steps_for(self, env):
        return int(self.steps.get(env, DEFAULT_STEPS[env]))

    def dr_config_for(self, env):
        if self.dr_config is not None:
            return self.dr_config
        return DomainRandomizationConfig(obs_noise_std=dict(DEFAULT_OBS_NOISE[env]))

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        doc.pop("format_version", None)
        if "out" in doc:
            doc["out_dir"] = doc.pop("out")
        if "dr_config" in doc and isinstance(doc["dr_config"], dict):
            raw = dict(doc["dr_config"])
            if "mass_scale_range" in raw:
                raw["mass_scale_range"] = tuple(raw["mass_scale_range"])
            doc["dr_config"] = DomainRandomizationConfig(**raw)
        if "ppo" in doc and isinstance(doc["ppo"], dict):
            doc["ppo"] = PpoConfig(**doc["ppo"])
        if "steps" in doc and isinstance(doc["steps"], int):
            doc["steps"] = {env: doc["steps"] for env in doc.get("envs", ["pendulum"])}
        return cls(**doc)


def run_name(env, method, seed):
    return f"{env}__{method.replace('+', '_')}__seed{seed}"


def run_config_slice(config, env, method, seed):
    """The exact inputs that determine a run's outcome."""
    return {
        "format_version": FORMAT_VERSION,
        "env": env,
        "method": method,
        "seed": seed,
        "steps": config.steps_for(env),
        "eval_episodes": config.eval_episodes,
        "dr": bool(config.dr),
        "dr_config": asdict(config.dr_config_for(env)) if config.dr else None,
        "ppo": asdict(config.ppo),
    }


def run_hash(config, env, method, seed):
    doc = json.dumps(run_config_slice(config, env, method, seed), sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()


def _paths(out_dir, name):
    return {
        "record": os.path.join(out_dir, "records", name + ".json"),
        "curve": os.path.join(out_dir, "curves", name + ".csv"),
        "checkpoint": os.path.join(out_dir, "checkpoints", name + ".json"),
    }


def write_curve_csv(path, rows):
    lines = ["# format_version=1", "step,mean_episode_return,loss_total,loss_rl,loss_reg"]
    for row in rows:
        lines.append(
            f"{row['step']},{row['mean_episode_return']!r},"
            f"{row['loss_total']!r},{row['loss_rl']!r},{row['loss_reg']!r}"
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_curve_csv(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("step,"):
                continue
            step, ret, total, rl, reg = line.split(",")
            rows.append({
                "step": int(step), "mean_episode_return": float(ret),
                "loss_total": float(total), "loss_rl": float(rl),
                "loss_reg": float(reg),
            })
    return rows


def run_single(config, env, method_name, seed):
    """Train + evaluate one grid cell; returns the record dict.

    Failures are captured in the record (status "failed") rather than
    raised, so one bad run cannot take down a grid.
    """
    name = run_name(env, method_name, seed)
    paths = _paths(config.out_dir, name)
    record = {
        "format_version": FORMAT_VERSION,
        "run": name,
        "env": env,
        "method": method_name,
        "seed": seed,
        "steps": config.steps_for(env),
        "eval_episodes": config.eval_episodes,
        "dr": bool(config.dr),
        "config_hash": run_hash(config, env, method_name, seed),
        "status": "failed",
        "curve_path": os.path.relpath(paths["curve"], config.out_dir),
        "checkpoint_path": os.path.relpath(paths["checkpoint"], config.out_dir),
    }
    started = time.time()
    try:
        method = parse_method(method_name)
        train_env = make_env(env, seed=np.random.SeedSequence((seed, 1)))
        if config.dr:
            train_env = randomize(
                train_env, config.dr_config_for(env), rng_stream(seed, "dr")
            )
        trainer = PpoTrainer(train_env, method, config.ppo, seed=seed)
        result = trainer.train(total_steps=config.steps_for(env))
        write_curve_csv(paths["curve"], result.curve)
        save_checkpoint(
            paths["checkpoint"], trainer.state_tensors(),
            meta={
                "env": env, "method": method_name, "seed": seed,
                "architecture": method.architecture,
                "obs_dim": train_env.obs_dim, "act_dim": train_env.act_dim,
                "steps": result.steps,
            },
        )
        stats = evaluate(
            trainer.ac, trainer.norm, env, config.eval_episodes, seed=seed
        )
        record.update(
            status="ok",
            return_mean=stats.return_mean, return_std=stats.return_std,
            sm_mean=stats.sm_mean, sm_std=stats.sm_std,
            per_dim_sm_mean=stats.per_dim_sm_mean,
            episode_returns_eval=[float(r) for r in stats.returns],
            episode_sms_eval=[float(s) for s in stats.sms],
            final_train_return=result.curve[-1]["mean_episode_return"],
        )
    except TrainingDiverged as exc:
        record.update(error=str(exc), diagnostics=exc.diagnostics)
    except Exception as exc:  # any other failure is still recorded
        record.update(error=f"{type(exc).__name__}: {exc}")
    record["wall_seconds"] = round(time.time() - started, 3)
    atomic_write_text(paths["record"], json.dumps(record, indent=1))
    return record


def _existing_ok_record(config, env, method, seed):
    path = _paths(config.out_dir, run_name(env, method, seed))["record"]
    if not os.path.exists(path):
        return None
    try:
        with open(path) as fh:
            record = json.load(fh)
    except (OSError, json.JSONDecodeError):
        return None
    if record.get("status") != "ok":
        return None
    if record.get("config_hash") != run_hash(config, env, method, seed):
        return None
    return record


def _run_cell(args):
    config_doc, env, method, seed = args
    config = _config_from_state(config_doc)
    return run_single(config, env, method, seed)


def _config_state(config):
    return {
        "envs": config.envs, "methods": config.methods, "seeds": config.seeds,
        "steps": config.steps, "eval_episodes": config.eval_episodes,
        "out_dir": config.out_dir, "workers": 1, "dr": config.dr,
        "dr_config": None if config.dr_config is None else asdict(config.dr_config),
        "ppo": asdict(config.ppo),
    }


def _config_from_state(state):
    state = dict(state)
    if state.get("dr_config") is not None:
        raw = dict(state["dr_config"])
        raw["mass_scale_range"] = tuple(raw["mass_scale_range"])
        state["dr_config"] = DomainRandomizationConfig(**raw)
    state["ppo"] = PpoConfig(**state["ppo"])
    return BenchmarkConfig(**state)


def run_benchmark(config, log=print):
    """Execute the full grid, skipping completed runs; renders the report.

    Returns (records, skipped_count).
    """
    for sub in ("records", "curves", "checkpoints"):
        os.makedirs(os.path.join(config.out_dir, sub), exist_ok=True)

    todo = []
    done = []
    for env in config.envs:
        for method in config.methods:
            for seed in config.seeds:
                existing = _existing_ok_record(config, env, method, seed)
                if existing is not None:
                    done.append(existing)
                else:
                    todo.append((env, method, seed))
    skipped = len(done)
    if skipped:
        log(f"[bench] {skipped} completed runs found; {len(todo)} to go")

    if todo:
        if config.workers > 1:
            state = _config_state(config)
            jobs = [(state, env, method, seed) for env, method, seed in todo]
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(config.workers) as pool:
                for record in pool.imap_unordered(_run_cell, jobs):
                    done.append(record)
                    _log_record(log, record)
        else:
            for env, method, seed in todo:
                record = run_single(config, env, method, seed)
                done.append(record)
                _log_record(log, record)

    render_report(config.out_dir)
    return done, skipped


def _log_record(log, record):
    if record["status"] == "ok":
        log(
            f"[bench] {record['run']}: return {record['return_mean']:.1f} "
            f"+- {record['return_std']:.1f}, Sm {record['sm_mean']:.3f} "
            f"+- {record['sm_std']:.3f} ({record['wall_seconds']:.0f}s)"
        )
    else:
        log(f"[bench] {record['run']} FAILED: {record.get('error')}")


# ---------------------------------------------------------------------------
# report


def load_records(out_dir):
    rec_dir = os.path.join(out_dir, "records")
    records = []
    if not os.path.isdir(rec_dir):
        return records
    for fname in sorted(os.listdir(rec_dir)):
        if fname.endswith(".json"):
            with open(os.path.join(rec_dir, fname)) as fh:
                records.append(json.load(fh))
    return records


def _sample_std(values):
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def aggregate_records(records):
    """(env, method) -> {return_mean/std, sm_mean/std, n_seeds} across seeds."""
    cells = {}
    for rec in records:
        if rec.get("status") != "ok":
            continue
        cells.setdefault((rec["env"], rec["method"]), []).append(rec)
    out = {}
    for key, recs in cells.items():
        rets = [r["return_mean"] for r in recs]
        sms = [r["sm_mean"] for r in recs]
        out[key] = {
            "return_mean": float(np.mean(rets)),
            "return_std": _sample_std(rets),
            "sm_mean": float(np.mean(sms)),
            "sm_std": _sample_std(sms),
            "n_seeds": len(recs),
        }
    return out


def _best_cells(cells, envs, methods):
    """Best return (max) and best smoothness (min) per env; ties break
    toward the lower std."""
    best = {}
    for env in envs:
        ret_candidates = [
            (cells[(env, m)]["return_mean"], -cells[(env, m)]["return_std"], m)
            for m in methods if (env, m) in cells
        ]
        sm_candidates = [
            (cells[(env, m)]["sm_mean"], cells[(env, m)]["sm_std"], m)
            for m in methods if (env, m) in cells
        ]
        if ret_candidates:
            best[("return", env)] = max(ret_candidates)[2]
        if sm_candidates:
            best[("sm", env)] = min(sm_candidates)[2]
    return best


def render_report(out_dir, records=None):
    """Write report.txt (table), report.csv and per-env curve plots.

    Rendering is deterministic: the same records produce byte-identical
    tables.  Missing cells render as an em dash.
    """
    if records is None:
        records = load_records(out_dir)
    cells = aggregate_records(records)
    envs = sorted({env for env, _ in cells}) or ["pendulum"]
    known = method_names()
    methods = [m for m in known if any((e, m) in cells for e in envs)]
    methods += sorted({m for _, m in cells} - set(known))
    best = _best_cells(cells, envs, methods)

    text = _render_text_table(cells, envs, methods, best)
    atomic_write_text(os.path.join(out_dir, "report.txt"), text)

    csv_lines = ["# format_version=1",
                 "env,method,n_seeds,return_mean,return_std,sm_mean,sm_std,"
                 "best_return,best_sm"]
    for env in envs:
        for method in methods:
            cell = cells.get((env, method))
            if cell is None:
                continue
            csv_lines.append(
                f"{env},{method},{cell['n_seeds']},"
                f"{cell['return_mean']:.6f},{cell['return_std']:.6f},"
                f"{cell['sm_mean']:.6f},{cell['sm_std']:.6f},"
                f"{int(best.get(('return', env)) == method)},"
                f"{int(best.get(('sm', env)) == method)}"
            )
    atomic_write_text(os.path.join(out_dir, "report.csv"),
                      "\n".join(csv_lines) + "\n")

    plot_paths = render_curve_plots(out_dir, records)
    return {
        "table": os.path.join(out_dir, "report.txt"),
        "csv": os.path.join(out_dir, "report.csv"),
        "plots": plot_paths,
    }


def _render_text_table(cells, envs, methods, best):
    lines = []
    name_w = max([len(m) for m in methods] + [10]) + 2
    col_w = 22

    def block(title, mean_key, std_key, marker_kind, arrow):
        lines.append(f"{title} {arrow}")
        header = "method".ljust(name_w) + "".join(e.rjust(col_w) for e in envs)
        lines.append(header)
        lines.append("-" * len(header))
        for method in methods:
            row = method.ljust(name_w)
            for env in envs:
                cell = cells.get((env, method))
                if cell is None:
                    row += "—".rjust(col_w)
                    continue
                mark = "*" if best.get((marker_kind, env)) == method else " "
                row += f"{cell[mean_key]:.2f} ± {cell[std_key]:.2f}{mark}".rjust(col_w)
            lines.append(row)
        lines.append("")

    block("Cumulative Return", "return_mean", "return_std", "return", "(higher is better)")
    block("Smoothness Sm", "sm_mean", "sm_std", "sm", "(lower is better)")
    lines.append("* best cell per column (ties break toward lower std)")
    return "\n".join(lines) + "\n"


def render_curve_plots(out_dir, records):
    """One SVG per environment: per-seed training curves plus the seed mean,
    one panel per method."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "smoothrl"

    by_cell = {}
    for rec in records:
        if rec.get("status") != "ok":
            continue
        curve_path = os.path.join(out_dir, rec["curve_path"])
        if not os.path.exists(curve_path):
            continue
        rows = read_curve_csv(curve_path)
        by_cell.setdefault((rec["env"], rec["method"]), []).append(
            (rec["seed"], rows)
        )

    envs = sorted({env for env, _ in by_cell})
    paths = []
    os.makedirs(os.path.join(out_dir, "plots"), exist_ok=True)
    for env in envs:
        methods = [m for m in method_names() if (env, m) in by_cell]
        if not methods:
            continue
        ncols = 4
        nrows = (len(methods) + ncols - 1) // ncols
        fig, axes = plt.subplots(
            nrows, ncols, figsize=(4 * ncols, 3 * nrows),
            sharex=True, sharey=True, squeeze=False,
        )
        for idx, method in enumerate(methods):
            ax = axes[idx // ncols][idx % ncols]
            curves = sorted(by_cell[(env, method)])
            stacks = []
            for seed, rows in curves:
                xs = [r["step"] for r in rows]
                ys = [r["mean_episode_return"] for r in rows]
                ax.plot(xs, ys, color="steelblue", alpha=0.3, linewidth=0.8)
                stacks.append(ys)
            min_len = min(len(s) for s in stacks)
            mean = np.mean([s[:min_len] for s in stacks], axis=0)
            ax.plot(xs[:min_len], mean, color="crimson", linewidth=1.8)
            ax.set_title(f"{method} ({len(curves)} seeds)", fontsize=10)
            ax.grid(alpha=0.3)
        for idx in range(len(methods), nrows * ncols):
            axes[idx // ncols][idx % ncols].axis("off")
        fig.suptitle(f"{env}: mean episode return during training")
        fig.tight_layout()
        path = os.path.join(out_dir, "plots", f"{env}_curves.svg")
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return paths
