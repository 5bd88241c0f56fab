"""Command-line entry point.

Settings resolve in four layers, later ones winning: built-in defaults, a
TOML or JSON config file (``--config``), ``LAKECAUSE_*`` environment variables
(``LAKECAUSE_SEED``, ``LAKECAUSE_DISCOVERY__ALPHA``, ...) and command-line flags.
Unknown keys are rejected at every layer.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .causal import DiscoveryConfig, discover_parents, pool_lakes, save_graph
from .classify import PipelineConfig, fit_pipeline
from .core import REGIONS, load_dataset, save_dataset
from .evaluation import EvalConfig, evaluate, load_report
from .preprocess import PreprocessConfig, preprocess_lakes, read_lake_metadata, read_raw_observations
from .synth import SynthConfig, generate

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("lakecause")

ENV_PREFIX = "LAKECAUSE_"

DEFAULTS: dict = {
    "seed": 0,
    "jobs": 1,
    "paths": {
        "data": "data/dataset.csv",
        "raw": "data/raw.csv",
        "metadata": "data/metadata.csv",
        "out": "out",
        "graph": "",
        "report": "out/report.json",
    },
    "preprocess": {
        "ndwi_threshold_s2": 0.18,
        "ndwi_threshold_l8": 0.19,
        "cloud_swir_threshold": 0.1,
        "cloud_cirrus_threshold": 0.1,
        "median_window_days": 12,
        "zenith_max_deg": 70.0,
        "spike_mad_factor": 5.0,
        "order": "interpolate_first",
    },
    "discovery": {
        "tau_max": 7,
        "alpha": 0.01,
        "targets": ["hv_anom"],
        "use_s_dummy": True,
        "use_r_dummy": True,
        "use_t_dummy": True,
        "max_conds": 10,
        "scope": "all",
        "lakes_per_region": 10,
    },
    "transform": {"budget": 9996, "include_dummies": False},
    "classify": {
        "variant": "causal",
        "graph_source": "global",
        "alpha_min": 1e-3,
        "alpha_max": 1e3,
        "n_alphas": 10,
    },
    "eval": {"protocol": "global", "ratio": 0.8, "repeats": 1, "train_region": ""},
    "synth": {
        "lakes_per_class": 25,
        "regions": list(REGIONS),
        "year": 2019,
        "spurious_strength": 2.0,
        "hv_noise": SynthConfig.hv_noise,
        "s2_noise": SynthConfig.s2_noise,
        "ls_noise": SynthConfig.ls_noise,
        "format": "csv",
    },
}


class ConfigError(ValueError):
    pass


# -- configuration layers ---------------------------------------------------------


def merge(base: dict, update: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        name = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {name!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {name!r} must be a table")
            out[key] = merge(base[key], value, f"{name}.")
        else:
            out[key] = _coerce(base[key], value, name)
    return out


def _coerce(default, value, name):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
            return value.lower() in ("true", "1")
        raise ConfigError(f"{name} must be a boolean")
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, str)):
            raise ConfigError(f"{name} must be an integer")
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{name} must be an integer") from None
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{name} must be a number") from None
    if isinstance(default, list):
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        if not isinstance(value, list):
            raise ConfigError(f"{name} must be a list")
        return list(value)
    return str(value)


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            data = tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a table at top level")
    return data


def env_overrides(environ) -> dict:
    """``LAKECAUSE_SECTION__KEY=value`` (or ``LAKECAUSE_KEY`` at top level)."""
    out: dict = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        parts = name[len(ENV_PREFIX) :].lower().split("__")
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return out


def resolve(config_path: str | None, flags: dict, environ=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if config_path:
        cfg = merge(cfg, load_config_file(config_path))
    cfg = merge(cfg, env_overrides(os.environ if environ is None else environ))
    return merge(cfg, flags)


def _validated(factory, **kwargs):
    try:
        return factory(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def discovery_config(cfg: dict) -> DiscoveryConfig:
    d = cfg["discovery"]
    return _validated(
        DiscoveryConfig,
        tau_max=d["tau_max"],
        alpha=d["alpha"],
        targets=tuple(d["targets"]),
        use_s_dummy=d["use_s_dummy"],
        use_r_dummy=d["use_r_dummy"],
        use_t_dummy=d["use_t_dummy"],
        max_conds=d["max_conds"],
    )


def pipeline_config(cfg: dict) -> PipelineConfig:
    import numpy as np

    c = cfg["classify"]
    if c["n_alphas"] < 1:
        raise ConfigError("classify.n_alphas must be >= 1")
    alphas = tuple(float(a) for a in np.logspace(np.log10(c["alpha_min"]), np.log10(c["alpha_max"]), c["n_alphas"]))
    return _validated(
        PipelineConfig,
        variant=c["variant"],
        graph_source=c["graph_source"],
        discovery=discovery_config(cfg),
        discovery_lakes=cfg["discovery"]["lakes_per_region"],
        budget=cfg["transform"]["budget"],
        alphas=alphas,
        include_dummies=cfg["transform"]["include_dummies"],
        seed=cfg["seed"],
    )


# -- subcommands --------------------------------------------------------------------


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def cmd_synth(cfg: dict, args) -> int:
    s = cfg["synth"]
    if s["format"] not in ("csv", "json"):
        raise ConfigError("synth.format must be csv or json")
    scfg = _validated(
        SynthConfig,
        n_lakes_per_class_per_region=s["lakes_per_class"],
        regions=tuple(s["regions"]),
        seed=cfg["seed"],
        year=s["year"],
        spurious_strength=s["spurious_strength"],
        hv_noise=s["hv_noise"],
        s2_noise=s["s2_noise"],
        ls_noise=s["ls_noise"],
    )
    ds, truth = generate(scfg)
    out = Path(cfg["paths"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out / f"dataset.{s['format']}")
    save_graph(truth, out / "truth.json")
    _write_json(out / "run_config.json", cfg)
    counts = ds.class_counts()
    print(f"wrote {len(ds)} lakes to {out / ('dataset.' + s['format'])}")
    print("  " + ", ".join(f"{c}={n}" for c, n in counts.items()))
    print("  " + ", ".join(f"{r}={len(ds.by_region(r))}" for r in ds.regions))
    return 0


def cmd_preprocess(cfg: dict, args) -> int:
    p = cfg["preprocess"]
    pcfg = _validated(PreprocessConfig, **p)
    raw = read_raw_observations(cfg["paths"]["raw"])
    meta = read_lake_metadata(cfg["paths"]["metadata"])
    ds, dropped = preprocess_lakes(raw, meta, pcfg)
    out = Path(cfg["paths"]["data"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    _write_json(out.with_name(out.stem + ".config.json"), cfg)
    print(f"wrote {len(ds)} dense lakes to {out}")
    if dropped:
        print(f"dropped {len(dropped)} lake(s): {', '.join(dropped)}")
    return 0


def _parse_scope(scope: str) -> str | None:
    if scope == "all":
        return None
    if scope.startswith("region="):
        region = scope.split("=", 1)[1]
        if region not in REGIONS:
            raise ConfigError(f"unknown region {region!r} in scope; expected one of {', '.join(REGIONS)}")
        return region
    raise ConfigError(f"scope must be 'all' or 'region=<code>', got {scope!r}")


def cmd_discover(cfg: dict, args) -> int:
    from .classify import discovery_sample

    region = _parse_scope(cfg["discovery"]["scope"])
    dcfg = discovery_config(cfg)
    ds = load_dataset(cfg["paths"]["data"])
    if region:
        ds = ds.by_region(region)
        if not len(ds):
            raise ConfigError(f"no lakes in region {region}")
    sample = discovery_sample(ds, cfg["discovery"]["lakes_per_region"], cfg["seed"])
    graph = discover_parents(pool_lakes(sample, dcfg), dcfg, jobs=cfg["jobs"])
    graph.meta["scope"] = cfg["discovery"]["scope"]
    graph.meta["run_config"] = cfg
    out = Path(cfg["paths"]["graph"] or Path(cfg["paths"]["out"]) / "graph.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_graph(graph, out)
    print(f"{cfg['discovery']['scope']}: {graph.describe() or '(no parents)'}")
    print(f"wrote {out}")
    return 0


def cmd_train(cfg: dict, args) -> int:
    ds = load_dataset(cfg["paths"]["data"])
    artifacts = fit_pipeline(ds, pipeline_config(cfg), jobs=cfg["jobs"])
    payload = {
        "run_config": cfg,
        "variant": artifacts.variant,
        "channel_spec": [[v.value, lag] for v, lag in artifacts.channel_spec],
        "graphs": {k: g.to_dict() for k, g in artifacts.graphs.items()},
        "transform": artifacts.params.to_dict(),
        "model": artifacts.model.to_dict(),
    }
    out = Path(cfg["paths"]["out"]) / "model.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload) + "\n", encoding="utf-8")
    print(
        f"{artifacts.variant} model: {len(artifacts.channel_spec)} channels, "
        f"{artifacts.params.n_features} features, alpha={artifacts.model.alpha:g}"
    )
    print(f"wrote {out}")
    return 0


def cmd_evaluate(cfg: dict, args) -> int:
    e = cfg["eval"]
    protocol = e["protocol"].replace("-", "_")
    region = e["train_region"] or None
    if region and region not in REGIONS:
        raise ConfigError(f"unknown region {region!r}")
    ecfg = _validated(EvalConfig, pipeline=pipeline_config(cfg), ratio=e["ratio"], repeats=e["repeats"])
    ds = load_dataset(cfg["paths"]["data"])
    report = evaluate(ds, protocol, ecfg, region=region, jobs=cfg["jobs"])
    report.config["run_config"] = cfg
    out = Path(cfg["paths"]["report"])
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save(out)
    print(report.table())
    print(f"wrote {out}")
    return 0


def cmd_report(cfg: dict, args) -> int:
    src = Path(cfg["paths"]["report"])
    report = load_report(src)
    table = report.table()
    print(table)
    if args.table_out:
        Path(args.table_out).write_text(table + "\n", encoding="utf-8")
    if args.json_out:
        report.save(args.json_out)
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "discover": cmd_discover,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


# -- argument parsing -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help="worker threads; outputs do not depend on it")
    common.add_argument("--log-level", default="WARNING")

    parser = argparse.ArgumentParser(prog="lakecause", description="Causal lake-evolution classification pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic labeled dataset")
    p.add_argument("--out", dest="paths.out")
    p.add_argument("--lakes-per-class", dest="synth.lakes_per_class", type=int)
    p.add_argument("--regions", dest="synth.regions")
    p.add_argument("--spurious-strength", dest="synth.spurious_strength", type=float)
    p.add_argument("--year", dest="synth.year", type=int)
    p.add_argument("--format", dest="synth.format", choices=("csv", "json"))

    p = sub.add_parser("preprocess", parents=[common], help="densify sparse raw observations")
    p.add_argument("--raw", dest="paths.raw")
    p.add_argument("--metadata", dest="paths.metadata")
    p.add_argument("--out", dest="paths.data")
    p.add_argument("--window", dest="preprocess.median_window_days", type=int)
    p.add_argument("--order", dest="preprocess.order", choices=("interpolate_first", "median_first"))

    p = sub.add_parser("discover", parents=[common], help="discover lagged parents of the target")
    p.add_argument("--data", dest="paths.data")
    p.add_argument("--scope", dest="discovery.scope", help="'all' or 'region=<code>'")
    p.add_argument("--tau-max", dest="discovery.tau_max", type=int)
    p.add_argument("--alpha", dest="discovery.alpha", type=float)
    p.add_argument("--lakes-per-region", dest="discovery.lakes_per_region", type=int)
    p.add_argument("--out", dest="paths.graph")

    p = sub.add_parser("train", parents=[common], help="fit a pipeline on a dataset")
    p.add_argument("--data", dest="paths.data")
    p.add_argument("--variant", dest="classify.variant", choices=("causal", "baseline"))
    p.add_argument("--graph-source", dest="classify.graph_source", choices=("global", "per_region"))
    p.add_argument("--tau-max", dest="discovery.tau_max", type=int)
    p.add_argument("--alpha", dest="discovery.alpha", type=float)
    p.add_argument("--budget", dest="transform.budget", type=int)
    p.add_argument("--out", dest="paths.out")

    p = sub.add_parser("evaluate", parents=[common], help="compare causal and baseline variants")
    p.add_argument("--data", dest="paths.data")
    p.add_argument("--protocol", dest="eval.protocol", choices=("global", "region-id", "region-ood"))
    p.add_argument("--train-region", "--region", dest="eval.train_region", choices=REGIONS)
    p.add_argument("--repeats", dest="eval.repeats", type=int)
    p.add_argument("--ratio", dest="eval.ratio", type=float)
    p.add_argument("--graph-source", dest="classify.graph_source", choices=("global", "per_region"))
    p.add_argument("--tau-max", dest="discovery.tau_max", type=int)
    p.add_argument("--alpha", dest="discovery.alpha", type=float)
    p.add_argument("--budget", dest="transform.budget", type=int)
    p.add_argument("--out", dest="paths.report")

    p = sub.add_parser("report", parents=[common], help="render a saved evaluation report")
    p.add_argument("--report", dest="paths.report")
    p.add_argument("--table-out")
    p.add_argument("--json-out")
    return parser


def flag_overrides(args: argparse.Namespace) -> dict:
    flags: dict = {}
    for key, value in vars(args).items():
        if value is None:
            continue
        if "." in key:
            section, name = key.split(".", 1)
            flags.setdefault(section, {})[name] = value
        elif key in ("seed", "jobs"):
            flags[key] = value
    return flags


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args.config, flag_overrides(args))
        if cfg["jobs"] < 1:
            raise ConfigError("jobs must be >= 1")
        log.info("resolved config: %s", json.dumps(cfg, sort_keys=True))
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
