"""Command-line front door: ``gemnet-oc <subcommand> [options]``.

Exit codes: 0 success, 1 runtime failure (cause recorded in the run
manifest), 2 malformed configuration or usage.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
import traceback
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
MANIFEST_NAME = "manifest.json"


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


@dataclass
class RunManifest:
    command: str
    config: dict
    out_dir: str
    seed: int
    code_version: str = __version__
    dataset_digest: str | None = None
    started: str = field(default_factory=_now)
    finished: str | None = None
    status: str = "running"
    error: str | None = None
    outputs: dict = field(default_factory=dict)

    def write(self) -> None:
        path = Path(self.out_dir) / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True, default=str) + "\n",
                        encoding="utf-8")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def shipped_config(name: str) -> Path:
    """Path of a config file shipped with the package (``aspect_suite.yaml``, ``toy.yaml``)."""
    return Path(str(resources.files("gemnet_oc") / "configs" / name))


# --------------------------------------------------------------------------- data helpers


def _load_dataset(cfg, override: str | None):
    from .datasets import generate_synthetic, read_dataset

    path = override or cfg.dataset
    if path:
        return read_dataset(path)
    _log("no dataset directory given; generating the configured synthetic dataset in memory")
    return generate_synthetic(cfg.data)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------- subcommands


def cmd_gen_data(args, cfg, manifest):
    from .datasets import generate_synthetic, write_dataset

    ds = generate_synthetic(cfg.data)
    out = Path(args.out)
    write_dataset(ds, out)
    manifest.dataset_digest = ds.digest()
    counts = ds.counts()
    _log(f"wrote {len(ds)} frames to {out} ({', '.join(f'{k} {v}' for k, v in counts.items())})")
    print(manifest.dataset_digest)


def cmd_profile(args, cfg, manifest):
    from .datasets import profile

    ds = _load_dataset(cfg, args.dataset)
    manifest.dataset_digest = ds.digest()
    report = profile(ds, cfg.profile.radius)
    out = Path(args.out)
    (out / "profile.csv").write_text(report.to_csv(), encoding="utf-8")
    manifest.outputs["profile"] = "profile.csv"
    print(report.to_table(), end="")


def cmd_train(args, cfg, manifest):
    import torch

    from .model import GemNetOC
    from .training import train

    ds = _load_dataset(cfg, args.dataset)
    manifest.dataset_digest = ds.digest()
    train_systems = ds.split("train")
    val_systems = ds.split(cfg.eval.split)
    manifest.write()  # the manifest exists before any optimization step
    torch.manual_seed(cfg.train.seed)
    model = GemNetOC(cfg.model, seed=cfg.train.seed)
    _log(f"model: {model.num_parameters()} parameters, {len(train_systems)} train / "
         f"{len(val_systems)} {cfg.eval.split} systems")
    result = train(model, train_systems, val_systems, cfg.train, out_dir=args.out, resume=args.resume, log=_log)
    summary = {
        "initial": result.initial_metrics.to_dict(),
        "best": result.best_metrics.to_dict(),
        "best_step": result.best_step,
        "steps": result.steps,
        "throughput": result.throughput,
        "improvement_factor": result.initial_metrics.force_mae / result.best_metrics.force_mae,
        "best_checkpoint_sha256": result.best_digest,
    }
    _write_json(Path(args.out) / "metrics.json", summary)
    manifest.outputs.update(curves="curves.csv", best="best.ckpt", latest="latest.ckpt", metrics="metrics.json")
    print(f"best val force MAE {result.best_metrics.force_mae:.6g} eV/A at step {result.best_step} "
          f"(untrained {result.initial_metrics.force_mae:.6g}); checkpoint sha256 {result.best_digest}")


def _load_checkpoint(path):
    from .model.io import load_model
    from .training import Normalizer

    model, meta, _ = load_model(path)
    normalizer = Normalizer.from_dict(meta["normalizer"]) if "normalizer" in meta else None
    return model, normalizer


def cmd_eval(args, cfg, manifest):
    from .training import evaluate

    model, normalizer = _load_checkpoint(args.checkpoint)
    ds = _load_dataset(cfg, args.dataset)
    manifest.dataset_digest = ds.digest()
    split = args.split or cfg.eval.split
    systems = ds.split(split)
    metrics = evaluate(model, systems, normalizer, cfg.train.energy_threshold, cfg.train.force_threshold,
                       cfg.eval.batch_size)
    out = Path(args.out)
    row = {"split": split, **metrics.to_dict()}
    _write_csv(out / "metrics.csv", list(row), [list(row.values())])
    manifest.outputs["metrics"] = "metrics.csv"
    print(", ".join(f"{k} {v:.6g}" if isinstance(v, float) else f"{k} {v}" for k, v in row.items()))


def cmd_relax(args, cfg, manifest):
    from .datasets import potential_from_provenance
    from .errors import RelaxationError
    from .training import RelaxResult, adwt_afbt, model_force_fn, relax
    from .training.metrics import structure_distance

    ds = _load_dataset(cfg, args.dataset)
    manifest.dataset_digest = ds.digest()
    settings = cfg.relax
    oracle = potential_from_provenance(ds.provenance).energy_forces if "potential" in ds.provenance else None
    if args.checkpoint:
        model, normalizer = _load_checkpoint(args.checkpoint)
        force_fn = model_force_fn(model, normalizer)
        source = "model"
    elif oracle is not None:
        force_fn, source = oracle, "oracle"
    else:
        raise ConfigError("relax needs --checkpoint or a synthetic dataset with a recorded potential")
    by_traj = {}
    for s, sp in zip(ds.systems, ds.splits):
        if sp == settings.split and s.trajectory_id not in by_traj:
            by_traj[s.trajectory_id] = s
    starts = [by_traj[k] for k in sorted(by_traj)][: settings.n_structures]
    if not starts:
        raise ConfigError(f"split {settings.split!r} has no structures to relax")
    rng = np.random.default_rng(cfg.seed)
    if settings.perturbation:
        starts = [s.replace(positions=s.positions + settings.perturbation * rng.normal(size=s.positions.shape)
                            * (~s.fixed)[:, None]) for s in starts]
    kwargs = dict(max_steps=settings.max_steps, fmax=settings.fmax, step_rule=settings.step_rule,
                  max_step=settings.max_step, memory=settings.memory,
                  divergence_patience=settings.divergence_patience)
    results, status = [], []
    for s in starts:
        try:
            results.append(relax(force_fn, s, **kwargs))
            status.append(results[-1].reason)
        except RelaxationError as exc:  # keep going; the diverged structure is reported as such
            traj = exc.trajectory or [s]
            results.append(RelaxResult(final=traj[-1], trajectory=traj, energies=[f.energy for f in traj],
                                       max_forces=[float("nan")], converged=False, steps=len(traj) - 1,
                                       reason="diverged"))
            status.append("diverged")
    rows = [[s.trajectory_id, r.steps, int(r.converged), st, f"{r.max_forces[-1]:.6g}", f"{r.energies[-1]:.10g}"]
            for s, r, st in zip(starts, results, status)]
    summary = {"source": source, "n": len(results), "converged": int(sum(r.converged for r in results)),
               "diverged": status.count("diverged")}
    if oracle is not None:
        refs = [relax(oracle, s, max_steps=settings.reference_steps, fmax=settings.reference_fmax).final
                for s in starts]
        adwt, afbt = adwt_afbt([r.final for r in results], refs, oracle)
        summary.update(adwt=adwt, afbt=afbt)
        for row, r, ref in zip(rows, results, refs):
            row.append(f"{structure_distance(r.final, ref):.6g}")
    out = Path(args.out)
    header = ["trajectory", "steps", "converged", "status", "final_fmax", "final_energy"]
    if oracle is not None:
        header.append("distance_to_reference")
    _write_csv(out / "relax.csv", header, rows)
    _write_json(out / "relax_summary.json", summary)
    manifest.outputs.update(relax="relax.csv", summary="relax_summary.json")
    print(", ".join(f"{k} {v:.6g}" if isinstance(v, float) else f"{k} {v}" for k, v in summary.items()))


def cmd_ablate(args, cfg, manifest):
    from .analysis import run_grid, write_grid_outputs

    if cfg.grid is None:
        raise ConfigError("ablate needs a 'grid' section in the config")
    ds = _load_dataset(cfg, args.dataset)
    manifest.dataset_digest = ds.digest()
    manifest.write()
    base_model = dataclasses.asdict(cfg.model)
    base_train = dataclasses.asdict(cfg.train)
    result = run_grid(cfg.grid, ds, base_model, base_train, threads=args.threads, log=_log)
    paths = write_grid_outputs(result, args.out)
    manifest.outputs.update({k: p.name for k, p in paths.items()})
    failed = [r for r in result.records if r.status != "ok"]
    print(f"{len(result.records)} cells ({len(failed)} failed); tau matrix in {paths['tau']}")


def cmd_correlate(args, cfg, manifest):
    from .analysis import read_records, spec_from_records, summarize, write_grid_outputs

    records = read_records(args.records)
    spec = cfg.grid if cfg.grid is not None else spec_from_records(records)
    result = summarize(records, spec)
    paths = write_grid_outputs(result, args.out)
    manifest.outputs.update({k: p.name for k, p in paths.items()})
    print(f"tau matrix over {len(result.datasets)} datasets in {paths['tau']}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "profile": cmd_profile,
    "train": cmd_train,
    "eval": cmd_eval,
    "relax": cmd_relax,
    "ablate": cmd_ablate,
    "correlate": cmd_correlate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gemnet-oc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("-c", "--config", help="YAML run configuration (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="overrides every seed in the config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=None, help="bound on intra-op threads")
        return p

    add("gen-data", "generate a synthetic dataset")
    p = add("profile", "element and size profile of a dataset")
    p.add_argument("--dataset", help="dataset directory (overrides the config)")
    p = add("train", "train a model")
    p.add_argument("--dataset", help="dataset directory (overrides the config)")
    p.add_argument("--resume", action="store_true", help="continue from latest.ckpt in --out")
    p = add("eval", "evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", help="dataset directory (overrides the config)")
    p.add_argument("--split", help="split to evaluate (overrides eval.split)")
    p = add("relax", "relax structures with a model or the oracle potential")
    p.add_argument("--checkpoint", help="model checkpoint; without it the dataset's oracle potential is used")
    p.add_argument("--dataset", help="dataset directory (overrides the config)")
    p = add("ablate", "run a variant x dataset grid")
    p.add_argument("--dataset", help="dataset directory (overrides the config)")
    p = add("correlate", "rank correlation and clustering from grid records")
    p.add_argument("--records", required=True, help="records.csv from ablate")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK

    from .runconfig import RunConfig, load_config

    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return EXIT_CONFIG

    if args.threads is not None:
        import torch

        torch.set_num_threads(args.threads)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(args.command, cfg.resolved(), str(args.out), cfg.seed)
    manifest.write()
    try:
        COMMANDS[args.command](args, cfg, manifest)
    except ConfigError as exc:
        _finish(manifest, "config_error", str(exc))
        _log(f"config error: {exc}")
        return EXIT_CONFIG
    except Exception as exc:
        _finish(manifest, "failed", "".join(traceback.format_exception_only(type(exc), exc)).strip())
        _log(f"error: {type(exc).__name__}: {exc}")
        return EXIT_RUNTIME
    _finish(manifest, "ok", None)
    return EXIT_OK


def _finish(manifest: RunManifest, status: str, error):
    manifest.status, manifest.error, manifest.finished = status, error, _now()
    manifest.write()


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
