"""``pdattack`` command-line driver.

Subcommands::

    pdattack gen-data --config run.ini --out runs/
    pdattack train    --config run.ini --out runs/
    pdattack attack   --config run.ini --out runs/ --jobs 4
    pdattack report   runs/outcomes.csv other/outcomes.csv --thresholds 0.1,0.2
    pdattack report   --grid grid.csv

Configuration is an INI file with the sections ``[data]``, ``[model]``,
``[attack]`` and ``[report]`` (see ``CONFIG_SCHEMA``).  Any key can be
overridden with ``--set section.key=value``.  Unknown sections or keys are
rejected.  ``attack`` writes ``<outcomes>.manifest.ini`` next to the
outcomes; it is itself a valid config and reproduces the run.

Outputs are never appended to.  If an output file already exists in
``--out`` and ``--overwrite`` is not given, a fresh timestamped
subdirectory is created instead.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

import argparse
import configparser
import csv
import datetime
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from ._validation import ConfigError
from .attack import AttackConfig, PDGD_NORMS, attack_with_restarts
from .baseline import PGD_NORMS, PgdConfig, pgd_attack, pgd_minimal_norm
from .datasets import blobs, load_dataset, load_idx, moons, save_dataset
from .evaluation import (RobustnessReport, comparison_summary, read_grid, render_summary,
                         reports_to_csv, summarize_reports, summary_to_json)
from .models import load_model, save_model, train_classifier
from .prox import NormKind

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
METHODS = ("pdgd", "pdpgd", "pgd", "pgd-bisect")
GENERATORS = ("blobs", "moons", "idx")
OUTCOME_FIELDS = ("index", "model", "attack", "norm_kind", "label", "clean_correct", "success",
                  "norm", "iterations", "seed")


def _bool(text):
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _opt_float(text):
    return None if text.strip().lower() in ("", "none") else float(text)


def _opt_int(text):
    return None if text.strip().lower() in ("", "none") else int(text)


CONFIG_SCHEMA = {
    "data": {
        "generator": (str, "moons"),
        "n_samples": (int, 500),
        "n_features": (int, 2),
        "n_classes": (int, 2),
        "noise": (float, 0.1),
        "seed": (int, 0),
        "images": (str, ""),
        "labels": (str, ""),
        "limit": (_opt_int, None),
        "path": (str, "dataset.txt"),
    },
    "model": {
        "kind": (str, "mlp"),
        "hidden_layer_sizes": (_ints, (16,)),
        "epochs": (_opt_int, None),
        "learning_rate": (_opt_float, None),
        "batch_size": (int, 32),
        "seed": (int, 0),
        "dataset": (str, "dataset.txt"),
        "path": (str, "model.txt"),
    },
    "attack": {
        "method": (str, "pdpgd"),
        "norm": (str, "l2"),
        "group_size": (int, 1),
        "iterations": (int, 500),
        "primal_lr": (float, 0.1),
        "dual_lr": (float, 0.1),
        "dual_init": (float, 0.1),
        "init_scale": (float, 0.5),
        "restarts": (int, 1),
        "finetune_iterations": (int, 500),
        "ema_decay": (float, 0.9),
        "epsilon": (float, 0.1),
        "step": (_opt_float, None),
        "random_start": (_bool, False),
        "bisection_steps": (int, 20),
        "limit": (_opt_int, None),
        "seed": (int, 0),
        "dataset": (str, "dataset.txt"),
        "model": (str, "model.txt"),
        "outcomes": (str, "outcomes.csv"),
    },
    "report": {
        "thresholds": (_floats, ()),
        "csv": (str, "report.csv"),
        "json": (str, "summary.json"),
    },
    # written by ``attack``; accepted so a manifest can be reused as a config
    "manifest": {
        "pdattack_version": (str, ""),
        "numpy_version": (str, ""),
        "python_version": (str, ""),
        "command": (str, ""),
        "wall_time": (str, ""),
        "created": (str, ""),
    },
}


class RunConfig:
    """Typed view of the INI configuration with defaults filled in."""

    def __init__(self, raw=None):
        self.raw = {s: {} for s in CONFIG_SCHEMA}
        for section, values in (raw or {}).items():
            for key, text in values.items():
                self.set(section, key, text)

    @classmethod
    def from_file(cls, path):
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls({s: dict(parser[s]) for s in parser.sections()})

    def set(self, section, key, text):
        if section not in CONFIG_SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in CONFIG_SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        conv = CONFIG_SCHEMA[section][key][0]
        try:
            conv(text)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key} = {text!r}: {exc}") from None
        self.raw[section][key] = str(text)

    def get(self, section, key):
        conv, default = CONFIG_SCHEMA[section][key]
        return conv(self.raw[section][key]) if key in self.raw[section] else default

    def section(self, name):
        return {k: self.get(name, k) for k in CONFIG_SCHEMA[name]}

    def to_ini(self, sections, extra=None):
        """Full config of ``sections`` (defaults included) as INI text."""
        parser = configparser.ConfigParser(interpolation=None)
        for name in sections:
            parser[name] = {k: _render(v) for k, v in self.section(name).items()}
        for name, values in (extra or {}).items():
            parser[name] = values
        out = []
        for name in parser.sections():
            out.append(f"[{name}]")
            out.extend(f"{k} = {v}" for k, v in parser[name].items())
            out.append("")
        return "\n".join(out)


def _render(value):
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# -- output directory handling ----------------------------------------------------


def _output_dir(out, names, overwrite):
    """Directory to write ``names`` into without clobbering existing files."""
    os.makedirs(out, exist_ok=True)
    if overwrite or not any(os.path.exists(os.path.join(out, n)) for n in names):
        return out
    stamp = datetime.datetime.now().strftime("run-%Y%m%d-%H%M%S")
    candidate, n = os.path.join(out, stamp), 1
    while os.path.exists(candidate):
        n += 1
        candidate = os.path.join(out, f"{stamp}-{n}")
    os.makedirs(candidate)
    return candidate


def _input_path(path, out):
    """Resolve an input file, also looking inside ``--out``."""
    if os.path.isabs(path) or os.path.exists(path):
        return path
    alt = os.path.join(out, path)
    return alt if os.path.exists(alt) else path


def _require(path, what):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{what} file not found: {path}")
    return path


# -- gen-data ---------------------------------------------------------------------


def cmd_gen_data(cfg, out, overwrite):
    spec = cfg.section("data")
    gen = spec["generator"]
    if gen not in GENERATORS:
        raise ConfigError(f"unknown generator {gen!r}; choose from {', '.join(GENERATORS)}")
    if gen == "moons":
        X, y = moons(spec["n_samples"], noise=spec["noise"], seed=spec["seed"])
        k = 2
    elif gen == "blobs":
        X, y = blobs(spec["n_samples"], spec["n_features"], spec["n_classes"],
                     noise=spec["noise"], seed=spec["seed"])
        k = spec["n_classes"]
    else:
        if not spec["images"] or not spec["labels"]:
            raise ConfigError("the idx generator needs [data] images and labels")
        X, y = load_idx(_require(spec["images"], "IDX images"), _require(spec["labels"], "IDX labels"),
                        spec["limit"])
        k = max(int(y.max()) + 1, 2) if y.size else 2
    directory = _output_dir(out, [spec["path"]], overwrite)
    path = os.path.join(directory, spec["path"])
    save_dataset(path, X, y, k)
    print(f"wrote {X.shape[0]} examples with {X.shape[1]} features to {path}")
    return path


# -- train ------------------------------------------------------------------------


def cmd_train(cfg, out, overwrite):
    spec = cfg.section("model")
    X, y, k = load_dataset(_require(_input_path(spec["dataset"], out), "dataset"))
    params = {"batch_size": spec["batch_size"], "random_state": spec["seed"], "n_classes": k}
    if spec["epochs"] is not None:
        params["epochs"] = spec["epochs"]
    if spec["learning_rate"] is not None:
        params["learning_rate"] = spec["learning_rate"]
    if spec["kind"] == "mlp":
        params["hidden_layer_sizes"] = spec["hidden_layer_sizes"]
    elif spec["kind"] != "linear":
        raise ConfigError(f"unknown model kind {spec['kind']!r}")
    model = train_classifier(X, y, spec["kind"], **params)
    directory = _output_dir(out, [spec["path"]], overwrite)
    path = os.path.join(directory, spec["path"])
    save_model(model, path)
    print(f"train accuracy {model.score(X, y):.4f}; model written to {path}")
    return path


# -- attack -----------------------------------------------------------------------


def _validate_attack(spec):
    method = spec["method"]
    if method not in METHODS:
        raise ConfigError(f"unknown attack method {method!r}; choose from {', '.join(METHODS)}")
    norm = NormKind.parse(spec["norm"], spec["group_size"])
    if method == "pdgd" and norm.tag not in PDGD_NORMS:
        raise ConfigError(f"pdgd needs a differentiable norm (l2), not {norm}")
    if method in ("pgd", "pgd-bisect") and norm.tag not in PGD_NORMS:
        raise ConfigError(f"{method} supports linf and l2, not {norm}")
    if method in ("pdgd", "pdpgd"):
        AttackConfig(norm=norm, iterations=spec["iterations"], primal_lr=spec["primal_lr"],
                     dual_lr=spec["dual_lr"], dual_init=spec["dual_init"],
                     init_scale=spec["init_scale"], restarts=spec["restarts"],
                     finetune_iterations=spec["finetune_iterations"],
                     ema_decay=spec["ema_decay"], seed=spec["seed"])
    else:
        PgdConfig(norm=norm, epsilon=spec["epsilon"], step=spec["step"],
                  random_start=spec["random_start"], iterations=spec["iterations"])
        if spec["bisection_steps"] < 1:
            raise ConfigError("bisection_steps must be at least 1")
    return method, norm


_WORKER_MODEL = None


def _init_worker(model):
    global _WORKER_MODEL
    _WORKER_MODEL = model


def _attack_one(job):
    spec, norm, x, y, index = job
    model = _WORKER_MODEL
    seed = [spec["seed"], index]
    method = spec["method"]
    if method in ("pdgd", "pdpgd"):
        cfg = AttackConfig(norm=norm, iterations=spec["iterations"], primal_lr=spec["primal_lr"],
                           dual_lr=spec["dual_lr"], dual_init=spec["dual_init"],
                           init_scale=spec["init_scale"], restarts=spec["restarts"],
                           finetune_iterations=spec["finetune_iterations"],
                           ema_decay=spec["ema_decay"], seed=seed)
        o = attack_with_restarts(model, x, y, cfg, method)
        return o.success, o.norm, o.iterations_used
    inner = PgdConfig(norm=norm, epsilon=spec["epsilon"], step=spec["step"],
                      iterations=spec["iterations"], random_start=spec["random_start"], seed=seed)
    if method == "pgd":
        o = pgd_attack(model, x, y, inner)
        return o.success, o.norm, o.iterations_used
    n = pgd_minimal_norm(model, x, y, norm, spec["bisection_steps"], inner)
    return math.isfinite(n), n, spec["bisection_steps"]


def _fmt(v):
    return "inf" if v == math.inf else repr(float(v))


def cmd_attack(cfg, out, overwrite, jobs, argv):
    spec = cfg.section("attack")
    method, norm = _validate_attack(spec)
    X, y, _ = load_dataset(_require(_input_path(spec["dataset"], out), "dataset"))
    model_path = _require(_input_path(spec["model"], out), "model")
    model = load_model(model_path)
    if spec["limit"] is not None:
        X, y = X[:spec["limit"]], y[:spec["limit"]]
    if X.shape[1] != model.n_features_in_:
        raise ConfigError(f"dataset has {X.shape[1]} features, model expects {model.n_features_in_}")
    clean = model.predict(X) == y
    jobs_list = [(spec, norm, X[i], int(y[i]), i) for i in range(X.shape[0])]
    start = time.perf_counter()
    if jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(model,)) as pool:
            results = list(pool.map(_attack_one, jobs_list, chunksize=max(1, len(jobs_list) // (4 * jobs))))
    else:
        _init_worker(model)
        results = [_attack_one(j) for j in jobs_list]
    wall = time.perf_counter() - start

    manifest_name = os.path.splitext(spec["outcomes"])[0] + ".manifest.ini"
    directory = _output_dir(out, [spec["outcomes"], manifest_name], overwrite)
    model_name = os.path.splitext(os.path.basename(model_path))[0]
    label = f"{method}-{norm}"
    path = os.path.join(directory, spec["outcomes"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(OUTCOME_FIELDS)
        for i, (success, n, used) in enumerate(results):
            writer.writerow([i, model_name, label, str(norm), int(y[i]), int(clean[i]),
                             int(success), _fmt(n), used, f"{spec['seed']}:{i}"])
    manifest = {"manifest": {
        "pdattack_version": __version__,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "command": " ".join(argv),
        "wall_time": f"{wall:.3f}",
        "created": datetime.datetime.now().isoformat(timespec="seconds"),
    }}
    with open(os.path.join(directory, manifest_name), "w") as fh:
        fh.write(cfg.to_ini(["attack"], manifest))
    ok = sum(r[0] for r in results)
    print(f"{label}: {ok}/{len(results)} successful in {wall:.1f}s; outcomes written to {path}")
    return path


# -- report -----------------------------------------------------------------------


class _Row:
    __slots__ = ("success", "norm")

    def __init__(self, success, norm):
        self.success, self.norm = success, norm


def read_outcomes(path):
    """Parse an outcomes CSV into ``(model, attack, norm, outcomes, clean_correct)``."""
    with open(_require(path, "outcomes"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no outcome rows")
    missing = set(OUTCOME_FIELDS) - set(rows[0])
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    outcomes = [_Row(r["success"] == "1", float(r["norm"])) for r in rows]
    clean = [r["clean_correct"] == "1" for r in rows]
    return rows[0]["model"], rows[0]["attack"], rows[0]["norm_kind"], outcomes, clean


def cmd_report(cfg, out, overwrite, files, grid):
    spec = cfg.section("report")
    if grid:
        names, _, matrix = read_grid(_require(grid, "grid"))
        summary = comparison_summary(matrix, names)
        reports = []
    else:
        if not files:
            raise ConfigError("report needs outcome files or --grid")
        thresholds = spec["thresholds"]
        if not thresholds:
            raise ConfigError("report needs thresholds ([report] thresholds or --thresholds)")
        if list(thresholds) != sorted(thresholds):
            raise ConfigError("thresholds must be sorted ascending")
        loaded = [read_outcomes(f) for f in files]
        counts = {len(o) for _, _, _, o, _ in loaded}
        if len(counts) != 1:
            raise ValueError(f"outcome files disagree on the number of examples: {sorted(counts)}")
        reports = [RobustnessReport.from_outcomes(attack, norm, outcomes, clean, thresholds, model)
                   for model, attack, norm, outcomes, clean in loaded]
        summary = summarize_reports(reports)
    directory = _output_dir(out, [spec["csv"], spec["json"]], overwrite)
    csv_path = os.path.join(directory, spec["csv"])
    if reports:
        with open(csv_path, "w", newline="") as fh:
            fh.write(reports_to_csv(reports))
    with open(os.path.join(directory, spec["json"]), "w") as fh:
        fh.write(summary_to_json(reports, summary))
    # grids are usually given in percent already; outcome reports are fractions
    sys.stdout.write(render_summary(summary, scale=1.0 if grid else 100.0))
    return directory


# -- entry point ------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI configuration file")
    common.add_argument("--seed", type=int, help="override the seed of the command's section")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for attack")
    common.add_argument("--out", metavar="DIR", default=".", help="output directory")
    common.add_argument("--overwrite", action="store_true", help="replace existing outputs")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")
    parser = _Parser(prog="pdattack", description="Minimal-norm primal-dual adversarial attacks.")
    parser.add_argument("--version", action="version", version=f"pdattack {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen-data", parents=[common], help="generate or import a dataset")
    sub.add_parser("train", parents=[common], help="train a toy classifier")
    sub.add_parser("attack", parents=[common], help="attack every example of a dataset")
    rep = sub.add_parser("report", parents=[common], help="robustness report and comparison")
    rep.add_argument("outcomes", nargs="*", help="outcome CSV files written by attack")
    rep.add_argument("--grid", metavar="CSV", help="wide robust-accuracy grid to summarise")
    rep.add_argument("--thresholds", help="comma separated thresholds")
    return parser


_SEED_SECTION = {"gen-data": "data", "train": "model", "attack": "attack"}


def _load_config(args):
    if args.config and not os.path.isfile(args.config):
        raise ConfigError(f"config file not found: {args.config}")
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    for item in args.set:
        name, sep, value = item.partition("=")
        section, dot, key = name.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        cfg.set(section, key, value.strip())
    if args.seed is not None and args.command in _SEED_SECTION:
        cfg.set(_SEED_SECTION[args.command], "seed", str(args.seed))
    if getattr(args, "thresholds", None):
        cfg.set("report", "thresholds", args.thresholds)
    return cfg


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        cfg = _load_config(args)
        if args.command == "gen-data":
            cmd_gen_data(cfg, args.out, args.overwrite)
        elif args.command == "train":
            cmd_train(cfg, args.out, args.overwrite)
        elif args.command == "attack":
            cmd_attack(cfg, args.out, args.overwrite, args.jobs, ["pdattack", *argv])
        else:
            cmd_report(cfg, args.out, args.overwrite, args.outcomes, args.grid)
    except ConfigError as exc:
        print(f"pdattack: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"pdattack: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
