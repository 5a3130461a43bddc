"""Command-line entry point.

Every command writes into its own output directory:

    manifest.json   config snapshot, seeds, versions, timestamps, status
    metrics.csv     one row per evaluated epoch (stable schema, see CSV_FIELDS)
    summary.json    final metrics per run plus mean/std groups over seeds

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
"""

import argparse
import csv
import hashlib
import json
import logging
import os
import subprocess
import sys
import time
import traceback
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, baselines, cnn, kernels
from .config import (
    ABLATION_MODES,
    BASELINES,
    NOISE_PARAMS,
    TRAIN_KEYS,
    ConfigError,
    ExperimentConfig,
    from_mapping,
    load_config_file,
    parse_float_list,
    parse_int_list,
)
from .data import DATA_DIR_ENV, data_dir, load_pool, subset
from .errors import InvalidParameterError
from .mps_mapper import mps_param_count
from .qnn_sampler import HARDWARE_RANGES
from .training import hybrid_train, qt_param_count

log = logging.getLogger("photonic_qt")

CSV_FIELDS = ("method", "chi", "params", "epoch", "train_loss", "train_acc", "test_acc", "gen_error", "seed")
MANIFEST_VERSION = 1


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML/JSON config file or a run manifest to replay")
    p.add_argument("--out", dest="out_dir", help="output directory (default: runs/<command>-<timestamp>)")
    p.add_argument("--data-dir", help=f"MNIST IDX directory (default: ${DATA_DIR_ENV} or data/mnist)")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--seeds", help="comma list or inclusive range, e.g. 0,1,2 or 0..2")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-schedule", choices=("constant", "cosine"))
    p.add_argument("--maxfun", type=int, help="COBYLA evaluations per epoch")
    p.add_argument("--cobyla-batch", type=int)
    p.add_argument("--theta-mode", choices=("cobyla", "finite_difference", "frozen"))
    p.add_argument("--eval-every", type=int)
    p.add_argument("--quiet", action="store_true")


def _noise_flags(p: argparse.ArgumentParser) -> None:
    for name in NOISE_PARAMS:
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--shots", choices=("analytic", "sampled"))
    p.add_argument("--n-samp", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="photonic-qt", description="Photonic quantum-train experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-qt", help="train one hybrid photonic/MPS configuration")
    _common(p)
    _noise_flags(p)
    p.add_argument("--chi", type=int)

    p = sub.add_parser("train-baseline", help="train a classical baseline")
    p.add_argument("variant", choices=BASELINES)
    _common(p)
    p.add_argument("--k", dest="share_k", type=int, help="shared vectors (share)")
    p.add_argument("--retained", dest="prune_retained", type=int, help="kept weights (prune)")

    p = sub.add_parser("sweep-bond", help="train-qt over a range of bond dimensions")
    _common(p)
    _noise_flags(p)
    p.add_argument("--chi", dest="chis", help="e.g. 1..10 or 1,4,10")

    p = sub.add_parser("sweep-noise", help="train-qt over one hardware noise parameter")
    p.add_argument("variant", choices=NOISE_PARAMS)
    _common(p)
    _noise_flags(p)
    p.add_argument("--chi", type=int)
    p.add_argument("--values", dest="noise_values", help="comma list; default spans the realistic range")
    p.add_argument("--points", dest="noise_points", type=int)

    p = sub.add_parser("ablate", help="replace the photonic generator with random inputs")
    _common(p)
    p.add_argument("--chi", dest="ablation_chis", help="e.g. 2,4,8,16")
    p.add_argument("--mode", dest="ablation_mode", choices=ABLATION_MODES)

    p = sub.add_parser("report", help="aggregate finished runs")
    p.add_argument("inputs", nargs="+", help="run directories")
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--config")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--quiet", action="store_true")
    return parser


_TRAIN_FLAGS = ("epochs", "batch_size", "lr", "lr_schedule", "maxfun", "cobyla_batch", "theta_mode", "eval_every")
_TOP_FLAGS = ("out_dir", "data_dir", "n_train", "n_test", "split_seed", "share_k", "prune_retained",
              "ablation_mode", "noise_points", "chi")


def _env_data_dir(data: dict) -> None:
    # the environment beats the file; an explicit --data-dir beats both
    if os.environ.get(DATA_DIR_ENV):
        data["data_dir"] = os.environ[DATA_DIR_ENV]


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """File values first, then flags; the command and variant always come from the command line."""
    data, from_manifest = ({}, False)
    if getattr(args, "config", None):
        data, from_manifest = load_config_file(args.config)
        if from_manifest and data.get("command") != args.command:
            raise ConfigError(f"manifest is for {data.get('command')!r}, not {args.command!r}")
        if from_manifest and not getattr(args, "out_dir", None):
            data.pop("out_dir", None)  # never overwrite the original run
    data = dict(data)
    _env_data_dir(data)
    data["command"] = args.command
    if getattr(args, "variant", None):
        data["variant"] = args.variant
    for key in _TOP_FLAGS:
        if getattr(args, key, None) is not None:
            data[key] = getattr(args, key)
    if getattr(args, "seeds", None):
        data["seeds"] = parse_int_list(args.seeds)
    if getattr(args, "chis", None):
        data["chis"] = parse_int_list(args.chis)
    if getattr(args, "ablation_chis", None):
        data["ablation_chis"] = parse_int_list(args.ablation_chis)
    if getattr(args, "noise_values", None):
        data["noise_values"] = parse_float_list(args.noise_values)
    if getattr(args, "inputs", None):
        data["inputs"] = list(args.inputs)
    train = dict(data.get("train") or {})
    for key in _TRAIN_FLAGS:
        if getattr(args, key, None) is not None:
            train[key] = getattr(args, key)
    data["train"] = train
    noise = dict(data.get("noise") or {})
    for key in NOISE_PARAMS:
        if getattr(args, key, None) is not None:
            noise[key] = getattr(args, key)
    data["noise"] = noise
    shots = dict(data.get("shots") or {})
    if getattr(args, "shots", None):
        shots["mode"] = args.shots
    if getattr(args, "n_samp", None) is not None:
        shots["n_samp"] = args.n_samp
    data["shots"] = shots
    try:
        return from_mapping(data).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# --------------------------------------------------------------------------
# run plans
# --------------------------------------------------------------------------


@dataclass
class RunSpec:
    method: str
    chi: int | None
    seed: int
    kind: str  # qt | mapped | ablation
    train_config: object
    params: int
    extra: dict = field(default_factory=dict)


def noise_sweep_values(cfg: ExperimentConfig) -> list[float]:
    if cfg.noise_values:
        return [float(v) for v in cfg.noise_values]
    lo, hi = HARDWARE_RANGES[cfg.variant]
    if cfg.noise_points == 1:
        return [0.5 * (lo + hi)]
    if cfg.variant == "g2":
        return [float(v) for v in np.geomspace(lo, hi, cfg.noise_points)]
    return [float(v) for v in np.linspace(lo, hi, cfg.noise_points)]


def _noise_shot_mode(variant: str) -> str:
    # brightness and transmittance only thin out the recorded shots
    return "sampled" if variant in ("beta", "transmittance") else "analytic"


def plan_runs(cfg: ExperimentConfig) -> list[RunSpec]:
    runs = []
    if cfg.command == "train-qt":
        for seed in cfg.seeds:
            runs.append(RunSpec("qt", cfg.chi, seed, "qt", cfg.train_config(cfg.chi, seed), qt_param_count(cfg.chi)))
    elif cfg.command == "sweep-bond":
        for chi in cfg.chis:
            for seed in cfg.seeds:
                runs.append(RunSpec("qt", chi, seed, "qt", cfg.train_config(chi, seed), qt_param_count(chi)))
    elif cfg.command == "sweep-noise":
        mode = _noise_shot_mode(cfg.variant)
        lo, hi = HARDWARE_RANGES[cfg.variant]
        for seed in cfg.seeds:
            tc = cfg.train_config(cfg.chi, seed, cfg.noise_model(), cfg.shot_budget(seed, mode))
            runs.append(RunSpec("qt[noiseless]", cfg.chi, seed, "qt", tc, qt_param_count(cfg.chi), {"value": None}))
            for value in noise_sweep_values(cfg):
                noise = cfg.noise_model(**{cfg.variant: value})
                tc = cfg.train_config(cfg.chi, seed, noise, cfg.shot_budget(seed, mode))
                runs.append(RunSpec(
                    f"qt[{cfg.variant}={value:g}]", cfg.chi, seed, "qt", tc, qt_param_count(cfg.chi),
                    {"value": value, "in_range": bool(lo <= value <= hi)},
                ))
    elif cfg.command == "train-baseline":
        template = cnn.build_template()
        for seed in cfg.seeds:
            tc = cfg.train_config(cfg.chi, seed)
            if cfg.variant == "original":
                pmap, method, extra = baselines.identity_map(template), "original", {}
            elif cfg.variant == "share":
                pmap, sc = baselines.apply_weight_sharing(template, cfg.share_k)
                method = f"share[K={cfg.share_k}]"
                extra = {"layer": sc.layer, "K": sc.k, "row_len": sc.row_len, "rows": sc.rows,
                         "shared_matrix_params": sc.shared_params}
            else:
                alpha = baselines.alpha_for_retained(cfg.prune_retained, template.param_count)
                pmap, pc = baselines.apply_random_pruning(template, alpha, seed)
                method = f"prune[retained={pc.retained}]"
                extra = {"alpha": alpha, "retained": pc.retained, "removed": pc.n_removed}
            runs.append(RunSpec(method, None, seed, "mapped", tc, pmap.n_free, {**extra, "pmap": pmap}))
    elif cfg.command == "ablate":
        for chi in cfg.ablation_chis:
            for seed in cfg.seeds:
                runs.append(RunSpec(
                    f"ablation[{cfg.ablation_mode}]", chi, seed, "ablation",
                    cfg.train_config(chi, seed), mps_param_count(chi, cnn.TARGET_PARAMS),
                ))
    return runs


# --------------------------------------------------------------------------
# output files
# --------------------------------------------------------------------------


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _git_revision() -> str | None:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"], cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5
        )
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None


def _fingerprint(*splits) -> str:
    h = hashlib.sha256()
    for split in splits:
        h.update(np.ascontiguousarray(split.images).tobytes())
        h.update(np.ascontiguousarray(split.labels).tobytes())
    return h.hexdigest()


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=False) + "\n")


class MetricsWriter:
    def __init__(self, path: Path):
        self.path = path
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(CSV_FIELDS)

    def row(self, run: RunSpec, m) -> None:
        chi = "" if run.chi is None else run.chi
        # repr keeps every bit of the float, so replays compare exactly
        self._writer.writerow((
            run.method, chi, run.params, m.epoch, repr(float(m.train_loss)), repr(float(m.train_accuracy)),
            repr(float(m.test_accuracy)), repr(float(m.generalization_error)), run.seed,
        ))
        self._fh.flush()

    def raw(self, values) -> None:
        self._writer.writerow(values)

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _final_rows(rows: list[dict]) -> list[dict]:
    last = {}
    for row in rows:
        key = (row["method"], row["chi"], row["seed"])
        if key not in last or int(row["epoch"]) >= int(last[key]["epoch"]):
            last[key] = row
    return list(last.values())


def aggregate(rows: list[dict]) -> list[dict]:
    """Mean and sample standard deviation over seeds of each run's last evaluated epoch."""
    groups: dict = {}
    for row in _final_rows(rows):
        groups.setdefault((row["method"], row["chi"]), []).append(row)
    out = []
    for (method, chi), members in groups.items():
        entry = {"method": method, "chi": int(chi) if str(chi) else None,
                 "params": int(members[0]["params"]), "n_seeds": len(members),
                 "seeds": sorted(int(r["seed"]) for r in members)}
        for key in ("train_loss", "train_acc", "test_acc", "gen_error"):
            vals = np.array([float(r[key]) for r in members])
            entry[f"{key}_mean"] = float(vals.mean())
            entry[f"{key}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out.append(entry)
    return out


# --------------------------------------------------------------------------
# execution
# --------------------------------------------------------------------------


def _execute(run: RunSpec, cfg: ExperimentConfig, train, test, writer: MetricsWriter):
    on_epoch = lambda m: (writer.row(run, m), log.info(  # noqa: E731
        "%s chi=%s seed=%d epoch %d: train %.4f / %.2f%%, test %.2f%%",
        run.method, run.chi, run.seed, m.epoch, m.train_loss, m.train_accuracy, m.test_accuracy,
    ))
    if run.kind == "qt":
        history = hybrid_train(run.train_config, train, test, on_epoch=on_epoch).history
    elif run.kind == "ablation":
        history = baselines.run_ablation(
            run.train_config, train, test, mode=cfg.ablation_mode, on_epoch=on_epoch
        ).history
    else:
        history = baselines.train_mapped_cnn(run.extra["pmap"], run.train_config, train, test, on_epoch=on_epoch)[1]
    return history


def _run_record(run: RunSpec, history, wall: float) -> dict:
    rec = {"method": run.method, "chi": run.chi, "seed": run.seed, "params": run.params,
           "epochs": len(history), "wall_time_s": round(wall, 3)}
    rec.update({k: v for k, v in run.extra.items() if k != "pmap"})
    if history:
        last = history[-1]
        rec["final"] = {"train_loss": last.train_loss, "train_acc": last.train_accuracy,
                        "test_loss": last.test_loss, "test_acc": last.test_accuracy,
                        "gen_error": last.generalization_error}
    return rec


def _default_out_dir(cfg: ExperimentConfig) -> Path:
    tag = cfg.command + (f"-{cfg.variant}" if cfg.variant else "")
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
    return Path("runs") / f"{tag}-{stamp}-{os.getpid()}"


def _command_summary(cfg: ExperimentConfig, groups: list[dict]) -> dict:
    extra = {}
    if cfg.command == "sweep-noise":
        lo, hi = HARDWARE_RANGES[cfg.variant]
        ref = next((g for g in groups if g["method"] == "qt[noiseless]"), None)
        extra["parameter"] = cfg.variant
        extra["realistic_range"] = [lo, hi]
        for g in groups:
            if g["method"].startswith(f"qt[{cfg.variant}="):
                value = float(g["method"].split("=")[1].rstrip("]"))
                g["value"] = value
                g["in_realistic_range"] = bool(lo <= value <= hi)
                if ref is not None:
                    g["test_acc_drop"] = ref["test_acc_mean"] - g["test_acc_mean"]
    return extra


def run_experiment(cfg: ExperimentConfig, argv: list[str]) -> int:
    try:
        runs = plan_runs(cfg)
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(cfg.out_dir) if cfg.out_dir else _default_out_dir(cfg)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    cfg.out_dir = str(out)
    if cfg.command != "report":
        # pin every default so a replay does not depend on the code's current defaults
        resolved = cfg.train_config(cfg.chi, cfg.seeds[0])
        cfg.train = {key: getattr(resolved, key) for key in TRAIN_KEYS}
        cfg.noise = asdict(cfg.noise_model())
    cfg.data_dir = str(data_dir(cfg.data_dir).resolve()) if cfg.command != "report" else cfg.data_dir
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "tool": "photonic_qt",
        "version": __version__,
        "git_revision": _git_revision(),
        "command": cfg.command,
        "argv": argv,
        "config": cfg.to_dict(),
        "seeds": list(cfg.seeds),
        "backend": "numba" if kernels.USE_NUMBA else "numpy",
        "started": _now(),
        "finished": None,
        "status": "running",
        "error": None,
        "metrics_file": "metrics.csv",
        "summary_file": "summary.json",
    }
    manifest_path = out / "manifest.json"
    _write_json(manifest_path, manifest)
    writer = None
    try:
        writer = MetricsWriter(out / "metrics.csv")
        if cfg.command == "report":
            summary = _report(cfg, writer)
        else:
            pool = load_pool(cfg.data_dir)
            train, test = subset(pool, cfg.n_train, cfg.n_test, cfg.split_seed)
            manifest["dataset"] = {"dir": cfg.data_dir, "n_train": len(train), "n_test": len(test),
                                   "sha256": _fingerprint(train, test)}
            _write_json(manifest_path, manifest)
            records = []
            t_all = time.perf_counter()
            for run in runs:
                t0 = time.perf_counter()
                history = _execute(run, cfg, train, test, writer)
                records.append(_run_record(run, history, time.perf_counter() - t0))
            writer.close()
            groups = aggregate(read_metrics(out / "metrics.csv"))
            summary = {"command": cfg.command, "variant": cfg.variant, "runs": records, "groups": groups,
                       "wall_time_s": round(time.perf_counter() - t_all, 3)}
            summary.update(_command_summary(cfg, groups))
        _write_json(out / "summary.json", summary)
    except Exception as exc:  # runtime failure: record it, exit 1
        if writer is not None:
            writer.close()
        manifest.update(status="failed", finished=_now(), error=f"{type(exc).__name__}: {exc}")
        _write_json(manifest_path, manifest)
        log.error("run failed: %s", manifest["error"])
        log.debug("%s", traceback.format_exc())
        return 1
    manifest.update(status="ok", finished=_now())
    _write_json(manifest_path, manifest)
    log.info("wrote %s", out)
    return 0


def _report(cfg: ExperimentConfig, writer: MetricsWriter) -> dict:
    rows, sources = [], []
    for d in cfg.inputs:
        path = Path(d) / "metrics.csv"
        if not path.exists():
            raise FileNotFoundError(f"no metrics.csv under {d}")
        got = read_metrics(path)
        rows.extend(got)
        sources.append({"dir": str(d), "rows": len(got)})
    final = _final_rows(rows)
    for r in final:
        writer.raw([r[k] for k in CSV_FIELDS])
    writer.close()
    return {"command": "report", "sources": sources, "groups": aggregate(rows)}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "replay":
            data, is_manifest = load_config_file(args.manifest)
            if not is_manifest:
                raise ConfigError(f"{args.manifest} is not a run manifest")
            if args.out_dir:
                data["out_dir"] = args.out_dir
            else:
                data.pop("out_dir", None)
            _env_data_dir(data)
            cfg = from_mapping(data).validate()
        else:
            cfg = resolve_config(args)
        return run_experiment(cfg, argv)
    except ConfigError as exc:
        print(f"photonic-qt: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
