"""Command line runner ``markovshift-lab``.

Subcommands: ``run``, ``validate``, ``list-experiments`` and ``seed-report``.
Exit status is 0 on success, 2 when an invariant fails and 1 on errors.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile

import numpy as np
import scipy

from . import __version__
from .config import EXPERIMENTS, build_chain, build_observable, load, resolved, to_plain, validate
from .errors import ConfigError, MarkovShiftError

EXIT_OK, EXIT_ERROR, EXIT_INVARIANT = 0, 1, 2


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if x is None:
        return ""
    return str(x)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(x) for x in row])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(to_plain(obj), indent=2, sort_keys=True) + "\n"


def write_atomic(path: str, text: str) -> str:
    """Write ``text`` (UTF-8) through a temporary file and rename; return its sha256."""
    data = text.encode("utf-8")
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return hashlib.sha256(data).hexdigest()


def threads_from(args) -> int:
    if args.threads is not None:
        return max(1, int(args.threads))
    env = os.environ.get("MARKOVSHIFT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError("MARKOVSHIFT_THREADS", f"not an integer: {env!r}") from None
    return 1


def _load_checked(path: str, seed: int | None):
    cfg, lines = load(path)
    validate(cfg, lines, path)
    return resolved(cfg, seed)


def seed_tree(cfg: dict) -> dict:
    """Every random stream used by a run, keyed by its consumer."""
    s = cfg["seed"]
    tree = {
        "root": s,
        "chain": cfg["chain"].get("seed", s),
        "monte_carlo_replicas": {"entropy": s, "generator": "Philox", "spawn_key": "(replica,)"},
        "mixing_search": s,
    }
    if "observable" in cfg:
        tree["observable"] = cfg["observable"].get("seed", s + 1)
    n_inst = int(cfg.get("parameters", {}).get("instances", 0))
    if n_inst:
        tree["moment_instances"] = [{"entropy": s, "spawn_key": [1000 + i]} for i in range(n_inst)]
    if cfg["experiment"] == "lyapunov":
        tree["cone_pairs"] = {"entropy": s, "spawn_key": [99]}
    return tree


def execute(cfg: dict, threads: int = 1):
    """Run the pipeline of a resolved config; return the experiment Result."""
    from .experiments import PIPELINES, process_invariants
    chain = build_chain(cfg["chain"])
    fam, proc = (None, None)
    if "observable" in cfg:
        fam, proc = build_observable(cfg["observable"], chain)
    res = PIPELINES[cfg["experiment"]](cfg, chain, fam, proc, threads)
    if cfg["experiment"] != "lyapunov":
        process_invariants(res, proc)
    return res


def cmd_run(args) -> int:
    cfg = _load_checked(args.config, args.seed)
    threads = threads_from(args)
    out = args.out or cfg.get("output", {}).get("dir") or "."
    os.makedirs(out, exist_ok=True)
    res = execute(cfg, threads)
    passed = all(v["passed"] for v in res.invariants.values())
    summary = {
        "experiment": cfg["experiment"],
        "seed": cfg["seed"],
        "passed": passed,
        "invariants": res.invariants,
        "measured": res.measured,
    }
    hashes = {
        "results.csv": write_atomic(os.path.join(out, "results.csv"), csv_text(res.columns, res.rows)),
        "summary.json": write_atomic(os.path.join(out, "summary.json"), json_text(summary)),
    }
    manifest = {
        "config": cfg,
        "config_path": os.path.basename(args.config),
        "version": __version__,
        "seed": cfg["seed"],
        "seeds": seed_tree(cfg),
        "dependencies": {"numpy": np.__version__, "scipy": scipy.__version__},
        "files": hashes,
    }
    write_atomic(os.path.join(out, "manifest.json"), json_text(manifest))
    for name, v in res.invariants.items():
        print(f"{'PASS' if v['passed'] else 'FAIL'}  {name}")
    return EXIT_OK if passed else EXIT_INVARIANT


def cmd_validate(args) -> int:
    cfg = _load_checked(args.config, args.seed)
    print(f"{args.config}: ok ({cfg['experiment']})")
    return EXIT_OK


def cmd_list(args) -> int:
    width = max(map(len, EXPERIMENTS))
    for name, desc in EXPERIMENTS.items():
        print(f"{name:<{width}}  {desc}")
    return EXIT_OK


def cmd_seed_report(args) -> int:
    cfg = _load_checked(args.config, args.seed)
    sys.stdout.write(json_text(seed_tree(cfg)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="markovshift-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=False):
        p.add_argument("--config", required=True, metavar="PATH", help="experiment YAML file")
        p.add_argument("--seed", type=int, default=None, metavar="N", help="override the config seed")
        if out:
            p.add_argument("--out", default=None, metavar="DIR", help="output directory")
            p.add_argument("--threads", type=int, default=None, metavar="N",
                           help="worker threads (default: MARKOVSHIFT_THREADS or 1)")

    common(sub.add_parser("run", help="run an experiment and write its artifacts"), out=True)
    common(sub.add_parser("validate", help="check a config without running numerics"))
    sub.add_parser("list-experiments", help="list the named pipelines")
    common(sub.add_parser("seed-report", help="print the resolved random-stream tree"))
    return parser


COMMANDS = {"run": cmd_run, "validate": cmd_validate, "list-experiments": cmd_list, "seed-report": cmd_seed_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except MarkovShiftError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
