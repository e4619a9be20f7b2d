"""``rlpgo`` command line: generate, solve, train, eval, bootstrap, plot, report."""

from __future__ import annotations

import argparse
import ast
import csv
import hashlib
import json
import logging
import math
import statistics
import sys
import time
from dataclasses import asdict, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .env import EpisodeConfig
from .graph import PoseGraph, SolveState, objective_F, odometry_init, parse_g2o, save_g2o
from .sac import EnvFactory, SACAgent, TrainConfig, evaluate, train
from .solvers import gauss_newton, levenberg_marquardt
from .synth import TRAINING_ENVS, EnvParams, generate

log = logging.getLogger("rlpgo")

RESULT_COLUMNS = ["dataset", "method", "seed", "F", "iterations", "time_s"]
RESULT_SCHEMA = "rlpgo-results-1"
DEFAULT_NODE_BUDGET = 2000


class CLIError(Exception):
    pass


# --- config files and manifests ---------------------------------------------------------------


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment. Values are Python literals or bare strings."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CLIError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            out[key.replace("-", "_")] = ast.literal_eval(val)
        except (ValueError, SyntaxError):
            out[key.replace("-", "_")] = val
    return out


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(output: Path, command: str, params: dict, inputs=(), outputs=(), seed=None, started=None):
    """Sidecar ``<output>.manifest.json``; ``manifest_hash`` covers everything but timestamps."""
    body = {
        "command": command,
        "params": {k: v for k, v in sorted(params.items()) if k not in ("func", "config")},
        "seed": seed,
        "input_hashes": {str(p): file_sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "schema": RESULT_SCHEMA,
    }
    body["manifest_hash"] = hashlib.sha256(json.dumps(body, sort_keys=True, default=str).encode()).hexdigest()
    now = datetime.now(timezone.utc).isoformat()
    body["timestamps"] = {"started": started or now, "finished": now}
    path = Path(str(output) + ".manifest.json")
    path.write_text(json.dumps(body, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _now():
    return datetime.now(timezone.utc).isoformat()


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def write_results(path, rows: list[dict], append: bool = False) -> None:
    path = Path(path)
    exists = append and path.exists() and path.stat().st_size > 0
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, extrasaction="ignore")
        if not exists:
            w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in RESULT_COLUMNS})


def write_trace(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "chi2"])
        for k, v in enumerate(trace):
            w.writerow([k, repr(float(v))])


def load_graph(path) -> PoseGraph:
    try:
        return parse_g2o(Path(path))
    except FileNotFoundError:
        raise CLIError(f"no such graph file: {path}") from None


# --- generate -----------------------------------------------------------------------------------


def _env_params(args) -> EnvParams:
    base = TRAINING_ENVS[args.env][0] if getattr(args, "env", None) else EnvParams()
    over = {k: getattr(args, k) for k in ("n", "sigma_R", "sigma_t", "d", "lc", "seed") if getattr(args, k, None) is not None}
    return base.replace(**over)


def cmd_generate(args) -> int:
    started = _now()
    params = _env_params(args)
    graph, truth = generate(params)
    out = Path(args.out)
    gt = Path(args.gt_out) if args.gt_out else out.with_name(out.stem + "_gt" + out.suffix)
    save_g2o(graph, out)
    save_g2o(graph, gt, state=truth)
    write_manifest(out, "generate", asdict(params), outputs=[out, gt], seed=params.seed, started=started)
    print(f"wrote {out} and {gt} ({graph.n} poses, {graph.m} edges)")
    return 0


# --- solve ----------------------------------------------------------------------------------------


def run_solver(graph: PoseGraph, method: str, iters: int, init: SolveState):
    if method == "gn":
        return gauss_newton(graph, init, iters)
    if method == "lm":
        return levenberg_marquardt(graph, init, iters)
    raise CLIError(f"unknown solver {method!r}")


def cmd_solve(args) -> int:
    started = _now()
    graph = load_graph(args.graph)
    init = odometry_init(graph) if args.init == "odometry" else graph.estimate
    rep = run_solver(graph, args.method, args.max_iters, init)
    dataset = args.dataset or Path(args.graph).stem
    row = {"dataset": dataset, "method": f"{args.method}{args.max_iters}", "seed": args.seed,
           "F": rep.final_chi2, "iterations": rep.iterations, "time_s": rep.wall_time}
    outs = []
    if args.csv:
        write_results(args.csv, [row], append=args.append)
        outs.append(args.csv)
    if args.trace:
        write_trace(args.trace, rep.chi2_trace)
        outs.append(args.trace)
    if args.out_g2o:
        save_g2o(graph, args.out_g2o, state=rep.final_state)
        outs.append(args.out_g2o)
    if outs:
        write_manifest(Path(outs[0]), "solve", vars(args), inputs=[args.graph], outputs=outs, seed=args.seed,
                       started=started)
    status = "converged" if rep.converged else rep.message
    print(f"{dataset} {row['method']}: F = {rep.final_chi2:.6e} after {rep.iterations} iterations "
          f"({rep.wall_time:.3f} s, {status})")
    return 0


# --- train ----------------------------------------------------------------------------------------


TRAIN_FLAGS = ("gamma", "tau", "lr", "batch", "alpha_init", "updates_per_episode", "bptt_window", "hidden",
               "lstm", "reward_scale", "grad_clip", "warmup_episodes", "buffer_episodes")


def _train_config(args) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    kw = {k: getattr(args, k) for k in known if getattr(args, k, None) is not None}
    if getattr(args, "single_critic", False):
        kw["twin_critics"] = False
    kw["seed"] = args.seed if args.seed is not None else 0
    if getattr(args, "desk", False):
        return TrainConfig.desk(**kw)
    return TrainConfig(**kw)


def _episode_config(args, default_cycles=None, default_range=None) -> EpisodeConfig:
    env_cycles, env_range = (TRAINING_ENVS[args.env][1:] if getattr(args, "env", None) else (7, 0.25))
    cycles = args.cycles or default_cycles or env_cycles
    rng = args.action_range or default_range or env_range
    return EpisodeConfig(cycles=cycles, action_range=rng, relative_bonus=getattr(args, "relative_bonus", False))


def cmd_train(args) -> int:
    started = _now()
    cfg = _train_config(args)
    params = _env_params(args)
    factory = EnvFactory(params, _episode_config(args))
    out = Path(args.out)
    curve = Path(args.curve) if args.curve else out.with_suffix(".curve.csv")

    def progress(row):
        if args.verbose:
            print(f"episode {row['episode']:4d}  reward {row['cumulative_reward']:10.1f}  final OC {row['final_oc']:.4f}")

    res = train(factory, cfg, args.episodes, checkpoint=out if args.episodes > 0 else None, curve_csv=curve,
                progress=progress)
    outs = [curve] + ([out] if args.episodes > 0 else [])
    write_manifest(curve, "train", {**asdict(cfg), **asdict(params), "episodes": args.episodes,
                                    **{f"episode_{k}": v for k, v in asdict(factory.episode).items()}},
                   outputs=outs, seed=cfg.seed, started=started)
    if args.episodes == 0:
        print("0 episodes requested; nothing trained")
    else:
        r = res.rewards
        k = max(1, len(r) // 10)
        print(f"trained {args.episodes} episodes in {res.wall_time:.1f} s; "
              f"mean reward first {k}: {r[:k].mean():.1f}, last {k}: {r[-k:].mean():.1f}; checkpoint {out}")
    return 0


# --- eval / bootstrap -----------------------------------------------------------------------------


def _guard(graph: PoseGraph, args):
    if graph.n > args.max_nodes and not args.allow_large:
        raise CLIError(
            f"graph has {graph.n} nodes, above the evaluation budget of {args.max_nodes}; "
            "pass --allow-large (or raise --max-nodes) to run it anyway"
        )


def _load_agent(path) -> tuple[SACAgent, dict]:
    from .diffnet import load_checkpoint

    try:
        _, meta = load_checkpoint(path)
    except FileNotFoundError:
        raise CLIError(f"no such checkpoint: {path}") from None
    return SACAgent.load(path), meta


def _run_eval(args, graph):
    agent, meta = _load_agent(args.checkpoint)
    ep = meta.get("episode_config", {})
    cfg = _episode_config(args, ep.get("cycles"), ep.get("action_range"))
    init = odometry_init(graph) if args.init == "odometry" else graph.estimate
    return evaluate(graph, agent, cfg, runs=args.runs, cycles_multiplier=args.cycles_multiplier, init=init)


def cmd_eval(args) -> int:
    started = _now()
    graph = load_graph(args.graph)
    _guard(graph, args)
    res = _run_eval(args, graph)
    dataset = args.dataset or Path(args.graph).stem
    rows = [
        {"dataset": dataset, "method": "rl-best", "seed": args.seed, "F": res.best_F, "iterations": 0,
         "time_s": min(res.run_time)},
        {"dataset": dataset, "method": "rl-mean", "seed": args.seed, "F": res.mean_F, "iterations": 0,
         "time_s": res.mean_time},
    ]
    outs = []
    if args.csv:
        write_results(args.csv, rows, append=args.append)
        outs.append(args.csv)
    if args.out_g2o:
        save_g2o(graph, args.out_g2o, state=res.best_state)
        outs.append(args.out_g2o)
    if outs:
        write_manifest(Path(outs[0]), "eval", vars(args), inputs=[args.graph, args.checkpoint], outputs=outs,
                       seed=args.seed, started=started)
    print(f"{dataset} rl x{args.runs}: best F = {res.best_F:.6e}, mean F = {res.mean_F:.6e}, "
          f"mean time {res.mean_time:.3f} s")
    return 0


def bootstrap(graph: PoseGraph, args):
    """Agent estimate, then the classical solver from it. Returns result rows for both stages and the sum."""
    res = _run_eval(args, graph)
    rep = run_solver(graph, args.solver, args.iters, res.best_state)
    dataset = args.dataset or "graph"
    rl_time = res.mean_time
    rows = [
        {"dataset": dataset, "method": "rl", "seed": args.seed, "F": res.best_F, "iterations": 0, "time_s": rl_time},
        {"dataset": dataset, "method": f"{args.solver}{args.iters}-from-rl", "seed": args.seed,
         "F": rep.final_chi2, "iterations": rep.iterations, "time_s": rep.wall_time},
        {"dataset": dataset, "method": f"rl+{args.solver}{args.iters}", "seed": args.seed, "F": rep.final_chi2,
         "iterations": rep.iterations, "time_s": rl_time + rep.wall_time},
    ]
    return rows, res, rep


def cmd_bootstrap(args) -> int:
    started = _now()
    graph = load_graph(args.graph)
    _guard(graph, args)
    args.dataset = args.dataset or Path(args.graph).stem
    rows, res, rep = bootstrap(graph, args)
    outs = []
    if args.csv:
        write_results(args.csv, rows, append=args.append)
        outs.append(args.csv)
    if args.out_g2o:
        save_g2o(graph, args.out_g2o, state=rep.final_state)
        outs.append(args.out_g2o)
    if outs:
        write_manifest(Path(outs[0]), "bootstrap", vars(args), inputs=[args.graph, args.checkpoint], outputs=outs,
                       seed=args.seed, started=started)
    for r in rows:
        print(f"{r['dataset']} {r['method']}: F = {r['F']:.6e}  ({r['time_s']:.3f} s)")
    return 0


# --- plot -----------------------------------------------------------------------------------------

PALETTE = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"]


def trajectory_svg(curves: list[tuple[str, np.ndarray, float]], width: int = 800, height: int = 600,
                   margin: int = 40) -> tuple[str, list[np.ndarray]]:
    """SVG with one polyline per trajectory; returns the text and the plotted vertex arrays."""
    if not curves:
        raise CLIError("nothing to plot")
    allpts = np.vstack([c[1] for c in curves])
    lo, hi = allpts.min(axis=0), allpts.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    scale = min((width - 2 * margin) / span[0], (height - 2 * margin - 20 * len(curves)) / span[1])
    plotted = []
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">', f'<rect width="{width}" height="{height}" fill="white"/>']
    for k, (label, xy, F) in enumerate(curves):
        px = margin + (xy[:, 0] - lo[0]) * scale
        py = height - margin - (xy[:, 1] - lo[1]) * scale
        pts = np.column_stack([px, py])
        plotted.append(pts)
        coords = " ".join(f"{x:.9f},{y:.9f}" for x, y in pts)
        color = PALETTE[k % len(PALETTE)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = 20 + 18 * k
        parts.append(f'<line x1="{margin}" y1="{ly}" x2="{margin + 24}" y2="{ly}" stroke="{color}" stroke-width="3"/>')
        parts.append(f'<text x="{margin + 30}" y="{ly + 4}" font-family="sans-serif" font-size="12">'
                     f'{_xml(label)}  F = {F:.3e}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n", plotted


def _xml(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def cmd_plot(args) -> int:
    started = _now()
    if not args.graphs:
        raise CLIError("plot needs at least one g2o file")
    labels = args.labels.split(",") if args.labels else [Path(p).stem for p in args.graphs]
    if len(labels) != len(args.graphs):
        raise CLIError("number of labels does not match number of files")
    curves = []
    for path, label in zip(args.graphs, labels):
        g = load_graph(path)
        curves.append((label, g.estimate.translations, objective_F(g, g.estimate)))
    svg, _ = trajectory_svg(curves)
    Path(args.out).write_text(svg)
    write_manifest(Path(args.out), "plot", vars(args), inputs=args.graphs, outputs=[args.out], started=started)
    print(f"wrote {args.out}")
    return 0


# --- report ---------------------------------------------------------------------------------------


def summarize(rows: list[dict]) -> list[dict]:
    groups: dict[tuple[str, str], list[dict]] = {}
    for r in rows:
        groups.setdefault((r["dataset"], r["method"]), []).append(r)
    out = []
    for (ds, m), rs in sorted(groups.items()):
        F = [float(r["F"]) for r in rs]
        out.append({
            "dataset": ds, "method": m, "runs": len(rs),
            "F_median": statistics.median(F), "F_mean": math.fsum(F) / len(F), "F_min": min(F), "F_max": max(F),
            "iterations_mean": statistics.fmean(float(r["iterations"]) for r in rs),
            "time_s_mean": statistics.fmean(float(r["time_s"]) for r in rs),
        })
    return out


def cmd_report(args) -> int:
    started = _now()
    rows = []
    for p in args.csvs:
        with open(p, newline="") as fh:
            rd = csv.DictReader(fh)
            missing = set(RESULT_COLUMNS) - set(rd.fieldnames or [])
            if missing:
                raise CLIError(f"{p}: missing result columns {sorted(missing)}")
            rows.extend(rd)
    if not rows:
        raise CLIError("no result rows to report")
    summary = summarize(rows)
    cols = list(summary[0])
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in summary:
            w.writerow({k: _fmt(v) for k, v in r.items()})
    lines = ["| dataset | method | runs | median F | mean F | mean iters | mean time (s) |",
             "|---|---|---|---|---|---|---|"]
    for r in summary:
        lines.append(f"| {r['dataset']} | {r['method']} | {r['runs']} | {r['F_median']:.3e} | {r['F_mean']:.3e} | "
                     f"{r['iterations_mean']:.1f} | {r['time_s_mean']:.3f} |")
    table = "\n".join(lines) + "\n"
    if args.markdown:
        Path(args.markdown).write_text(table)
    write_manifest(Path(args.out), "report", vars(args), inputs=args.csvs, outputs=[args.out], started=started)
    print(table, end="")
    return 0


# --- parser ---------------------------------------------------------------------------------------


def _add_generator_flags(p):
    p.add_argument("--env", type=int, choices=sorted(TRAINING_ENVS), help="start from a training environment row")
    p.add_argument("--n", type=int)
    p.add_argument("--sigma-R", dest="sigma_R", type=float)
    p.add_argument("--sigma-t", dest="sigma_t", type=float)
    p.add_argument("--d", type=float)
    p.add_argument("--lc", type=float)


def _add_eval_flags(p):
    p.add_argument("graph")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--cycles", type=int, help="default: the training value stored in the checkpoint")
    p.add_argument("--cycles-multiplier", type=int, default=1)
    p.add_argument("--action-range", type=float)
    p.add_argument("--init", choices=["odometry", "file"], default="odometry")
    p.add_argument("--max-nodes", type=int, default=DEFAULT_NODE_BUDGET)
    p.add_argument("--allow-large", action="store_true")
    p.add_argument("--out-g2o")
    p.add_argument("--csv")
    p.add_argument("--append", action="store_true")
    p.add_argument("--dataset")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rlpgo", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def verb(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key = value file; explicit flags override it")
        p.add_argument("--seed", type=int)
        p.set_defaults(func=func)
        return p

    p = verb("generate", cmd_generate, "write a synthetic graph and its ground truth")
    _add_generator_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--gt-out")

    p = verb("solve", cmd_solve, "run Gauss-Newton or Levenberg-Marquardt")
    p.add_argument("graph")
    p.add_argument("--method", choices=["gn", "lm"], default="lm")
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--init", choices=["odometry", "file"], default="odometry")
    p.add_argument("--csv")
    p.add_argument("--append", action="store_true")
    p.add_argument("--trace")
    p.add_argument("--out-g2o")
    p.add_argument("--dataset")

    p = verb("train", cmd_train, "train an agent on freshly sampled graphs")
    _add_generator_flags(p)
    p.add_argument("--episodes", type=int, default=300)
    p.add_argument("--cycles", type=int)
    p.add_argument("--action-range", type=float)
    p.add_argument("--relative-bonus", action="store_true")
    p.add_argument("--single-critic", action="store_true")
    p.add_argument("--desk", action="store_true", help="small-network preset that trains in minutes on a CPU")
    for name in TRAIN_FLAGS:
        typ = float if name in ("gamma", "tau", "lr", "alpha_init", "reward_scale", "grad_clip") else int
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--curve", help="reward curve CSV (default: next to the checkpoint)")

    p = verb("eval", cmd_eval, "deterministic agent runs on one graph")
    _add_eval_flags(p)

    p = verb("bootstrap", cmd_bootstrap, "agent estimate refined by GN or LM")
    _add_eval_flags(p)
    p.add_argument("--solver", choices=["gn", "lm"], default="gn")
    p.add_argument("--iters", type=int, default=50)

    p = verb("plot", cmd_plot, "overlay trajectories from g2o files as SVG")
    p.add_argument("graphs", nargs="*")
    p.add_argument("--labels")
    p.add_argument("--out", required=True)

    p = verb("report", cmd_report, "summarise result CSVs")
    p.add_argument("csvs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--markdown")
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
        dests = {a.dest for a in sub._actions}  # noqa: SLF001
        unknown = set(values) - dests
        if unknown:
            raise CLIError(f"{args.config}: unknown options {sorted(unknown)}")
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except CLIError as exc:
        print(f"rlpgo: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"rlpgo: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
