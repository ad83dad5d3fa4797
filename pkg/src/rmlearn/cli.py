"""``rmlearn`` command line interface.

Exit codes: 0 success, 2 config/validation error, 3 inference failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import blockworld as bw
from .exceptions import ConfigError, IoError, RmlearnError
from .pipeline import (PipelineConfig, compare_to_golden, expert_from_json, expert_to_json,
                       generate_demos, golden_rm, inferred_env, make_env, summarize)
from .qrm import QRMTrainer, evaluate_greedy, write_metrics_csv
from .rmcore import export_graph, load_rm, save_rm
from .trajectories import load_demonstrations, save_demonstrations

DEMO_FILES = {"csv": "demos.csv", "binary": "demos.rmd"}


def _write_json(path: Path, obj) -> None:
    try:
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _read_json(path: Path, what: str):
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise IoError(f"{what} not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _overrides(args) -> dict:
    o: dict = {"featurize": {}, "demos": {}, "cluster": {}, "rm": {}, "train": {}, "eval": {}}
    if getattr(args, "seed", None) is not None:
        o["seed"] = args.seed
    if getattr(args, "task", None) is not None:
        o["task"] = args.task
    for attr, section, key in [
        ("featurizer", "featurize", "kind"), ("noise", "featurize", "noise"),
        ("n", "demos", "n"), ("format", "demos", "format"), ("dwell", "demos", "dwell"),
        ("transit", "demos", "transit"),
        ("eps", "cluster", "eps"), ("min_points", "cluster", "min_points"),
        ("kappa", "rm", "kappa"), ("gamma", "rm", "gamma"),
        ("episodes", "train", "episodes"), ("n_seeds", "eval", "n_seeds"),
    ]:
        v = getattr(args, attr, None)
        if v is not None:
            o[section][key] = v
    if getattr(args, "no_coverage", False):
        o["demos"]["coverage"] = False
    if getattr(args, "normalize", False):
        o["cluster"]["normalize"] = True
    return o


def _demo_path(cfg: PipelineConfig, out: Path, explicit=None) -> Path:
    return Path(explicit) if explicit else out / DEMO_FILES[cfg["demos"]["format"]]


# -- commands -----------------------------------------------------------------

def cmd_demo_gen(cfg: PipelineConfig, out: Path) -> dict:
    spec = cfg.task()
    if cfg["featurize"]["kind"] != "synthetic":
        raise ConfigError("demo-gen needs the synthetic featurizer (--featurizer synthetic)")
    d = cfg["demos"]
    gen = generate_demos(spec, cfg.extractor(spec), int(d["n"]), cfg.seed, bool(d["coverage"]),
                         int(d["dwell"]), int(d["transit"]))
    path = _demo_path(cfg, out)
    save_demonstrations(gen.demos, path, d["format"])
    _write_json(out / "expert_demos.json", expert_to_json(spec, gen.expert))
    _write_json(out / "subgoal_log.json", {
        "task": spec.name,
        "trajectories": [{"id": t.id, "frames": log} for t, log in zip(gen.demos, gen.subgoal_log)],
    })
    return {"demos": str(path), "n_trajectories": len(gen.demos), "dim": gen.demos.dim}


def cmd_infer(cfg: PipelineConfig, out: Path, demos_path=None) -> dict:
    path = _demo_path(cfg, out, demos_path)
    fmt = "csv" if path.suffix.lower() == ".csv" else "binary"
    demos = load_demonstrations(path, fmt)
    learner = cfg.learner().fit(demos)
    rm = learner.reward_machine_
    sources = [p.source for p in learner.prototypes_]
    save_rm(out / "rm.json", rm, learner.labeling_, sources)
    export_graph(rm, out / "rm.dot")
    report = dict(learner.report_)
    log_path = out / "subgoal_log.json"
    if log_path.exists() and cfg["featurize"]["kind"] == "synthetic":
        spec = cfg.task()
        log = [t["frames"] for t in _read_json(log_path, "sub-goal log")["trajectories"]]
        if spec.golden and len(log) == len(demos):
            report["golden"] = compare_to_golden(rm, sources, log, spec.golden)
    _write_json(out / "infer_report.json", report)
    return report


def _build_env(cfg: PipelineConfig, out: Path, rm_path=None, golden=False):
    spec = cfg.task()
    if golden:
        rm, labeler = golden_rm(spec, float(cfg["rm"]["gamma"]))
        return make_env(spec, rm, labeler), spec
    if cfg["featurize"]["kind"] != "synthetic":
        raise ConfigError("training needs the synthetic featurizer to label environment states")
    rm, labeling = load_rm(Path(rm_path) if rm_path else out / "rm.json")
    if labeling is None:
        raise ConfigError("reward machine file carries no prototypes; cannot label states")
    return inferred_env(cfg, spec, rm, labeling), spec


def cmd_train(cfg: PipelineConfig, out: Path, rm_path=None, resume=None, golden=False,
              checkpoint=None) -> dict:
    env, spec = _build_env(cfg, out, rm_path, golden)
    tcfg = cfg.train_config()
    if resume:
        trainer = QRMTrainer.load(resume, env, tcfg)
    else:
        trainer = QRMTrainer(env, tcfg)
        expert_path = out / "expert_demos.json"
        if expert_path.exists():
            trainer.seed_demos(expert_from_json(spec, _read_json(expert_path, "expert demos")))
    trainer.run()
    ckpt = Path(checkpoint) if checkpoint else out / "checkpoint.rmq"
    trainer.save(ckpt)
    write_metrics_csv(trainer.metrics, out / "metrics.csv")
    last = trainer.metrics[-1] if trainer.metrics else None
    return {"episodes": trainer.episode, "checkpoint": str(ckpt),
            "final": None if last is None else {"episode": last[0], "total_reward": last[1],
                                                "placement_error": last[2]}}


def cmd_eval(cfg: PipelineConfig, out: Path, checkpoint=None, rm_path=None, golden=False) -> dict:
    env, _ = _build_env(cfg, out, rm_path, golden)
    trainer = QRMTrainer.load(Path(checkpoint) if checkpoint else out / "checkpoint.rmq", env)
    n = int(cfg["eval"]["n_seeds"])
    results = [evaluate_greedy(env, trainer.tables, cfg.seed + i) for i in range(n)]
    report = {
        "n_seeds": n,
        "episode": trainer.episode,
        "total_reward": summarize([r.total_reward for r in results]),
        "placement_error": summarize([r.placement_error for r in results]),
        "zero_error_seeds": sum(r.placement_error == 0 for r in results),
        "rm_trace": list(results[0].rm_trace),
    }
    _write_json(out / "eval_report.json", report)
    return report


def cmd_export(rm_path: Path, dest: Path, self_loops: bool) -> dict:
    rm, _ = load_rm(rm_path)
    export_graph(rm, dest, self_loops)
    return {"graph": str(dest), "nodes": rm.n_states,
            "edges": len(rm.transitions(self_loops))}


# -- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rmlearn", description=(
        "Infer reward machines from demonstrations and train Q-learning agents on them."))
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="config file, or a bundled task name "
                        f"({', '.join(bw.BUILTIN_TASKS)})")
        sp.add_argument("--out", default="rmlearn-out", help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--task", help="task spec file or bundled task name")
        sp.add_argument("--featurizer", choices=["synthetic", "precomputed"])
        sp.add_argument("--noise", type=float)
        sp.add_argument("--format", choices=["csv", "binary"])
        sp.add_argument("--gamma", type=float)
        sp.add_argument("--json", action="store_true", help="print a JSON report")

    sp = sub.add_parser("demo-gen", help="generate expert demonstrations")
    common(sp)
    sp.add_argument("--n", type=int, help="number of demonstrations")
    sp.add_argument("--no-coverage", action="store_true",
                    help="allow fewer demos than sub-goal orderings")
    sp.add_argument("--dwell", type=int)
    sp.add_argument("--transit", type=int)

    sp = sub.add_parser("infer", help="infer a reward machine from demonstrations")
    common(sp)
    sp.add_argument("--demos", help="demonstration file (default: <out>/demos.csv|.rmd)")
    sp.add_argument("--eps", type=float)
    sp.add_argument("--min-points", type=int)
    sp.add_argument("--kappa", type=float)
    sp.add_argument("--normalize", action="store_true")

    sp = sub.add_parser("train", help="train a Q-learning agent on the reward machine")
    common(sp)
    sp.add_argument("--rm", help="reward machine file (default: <out>/rm.json)")
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--resume", help="checkpoint to resume from")
    sp.add_argument("--checkpoint", help="where to write the checkpoint")
    sp.add_argument("--golden", action="store_true",
                    help="train on the hand-written RM with ground-truth labels")

    sp = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    common(sp)
    sp.add_argument("--rm")
    sp.add_argument("--checkpoint")
    sp.add_argument("--n-seeds", type=int)
    sp.add_argument("--golden", action="store_true")

    sp = sub.add_parser("export", help="write a reward machine as a DOT graph")
    sp.add_argument("--config", help=argparse.SUPPRESS)
    sp.add_argument("--rm", help="reward machine file (default: <out>/rm.json)")
    sp.add_argument("--out", default="rmlearn-out")
    sp.add_argument("--dest", help="graph file (default: <out>/rm.dot)")
    sp.add_argument("--self-loops", action="store_true")
    sp.add_argument("--json", action="store_true")
    return p


def _print(report: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(report, indent=2, sort_keys=True))
        return
    for k, v in report.items():
        print(f"{k}: {v}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export":
            out = Path(args.out)
            rm_path = Path(args.rm) if args.rm else out / "rm.json"
            dest = Path(args.dest) if args.dest else _out_dir(args) / "rm.dot"
            report = cmd_export(rm_path, dest, args.self_loops)
        else:
            cfg = PipelineConfig.load(args.config, _overrides(args))
            out = _out_dir(args)
            if args.command == "demo-gen":
                report = cmd_demo_gen(cfg, out)
            elif args.command == "infer":
                report = cmd_infer(cfg, out, args.demos)
            elif args.command == "train":
                report = cmd_train(cfg, out, args.rm, args.resume, args.golden, args.checkpoint)
            else:
                report = cmd_eval(cfg, out, args.checkpoint, args.rm, args.golden)
    except RmlearnError as exc:
        print(f"rmlearn {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    _print(report, args.json)
    return 0


if __name__ == "__main__":
    sys.exit(main())
