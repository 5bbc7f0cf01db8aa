"""Command-line entry point: synth, train, nmf and watch."""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import os
import signal
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DataError, Spectrum1D, Status, TimeSeriesBundle, read_jsonl, write_jsonl

log = logging.getLogger("sentinel")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_THRESHOLD, EXIT_RUNTIME = 0, 1, 2, 3, 4

ENV_VARS = {"webhook_url": "SENTINEL_WEBHOOK_URL", "data_dir": "SENTINEL_DATA_DIR"}
DEFAULTS = {
    "data_dir": "data",
    "webhook_url": "",
    "agent": "anomaly",
    "artifact": "model.json",
    "nmf_p": "4",
    "nmf_window": "",
    "watch_glob": "*",
}

# acceptance thresholds enforced by ``train --strict``
ANOMALY_EE_RECALL = 0.90
ANOMALY_EE_FDR = 0.10
ANOMALY_MIN_RECALL = 0.85
CLASSIFY_MIN_F1 = 0.95


class UsageError(Exception):
    pass


class ThresholdError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- configuration ----------------------------------------------------------------------

@dataclass
class CliConfig:
    values: dict
    provenance: dict

    def __getitem__(self, key):
        return self.values[key]

    def describe(self) -> str:
        return "\n".join(f"  {k} = {self.values[k]!r}  ({self.provenance[k]})"
                         for k in sorted(self.values))


def read_config_file(path: str | Path) -> dict:
    """key = value pairs from a [sentinel] section (or top-level keys)."""
    text = Path(path).read_text(encoding="utf-8")
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError:
        cp.read_string("[sentinel]\n" + text)
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from None
    out = {}
    for section in cp.sections():
        for key, value in cp.items(section):
            value = value.strip()
            if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
                value = value[1:-1]
            out[key] = value
    unknown = set(out) - set(DEFAULTS)
    if unknown:
        raise UsageError(f"unknown config keys {sorted(unknown)} in {path}")
    return out


def resolve_config(flags: dict, config_path: str | None = None,
                   environ=os.environ) -> CliConfig:
    """Precedence: flags > environment > config file > defaults."""
    values = dict(DEFAULTS)
    prov = {k: "default" for k in DEFAULTS}
    if config_path:
        for k, v in read_config_file(config_path).items():
            values[k], prov[k] = v, f"file {config_path}"
    for k, var in ENV_VARS.items():
        if environ.get(var):
            values[k], prov[k] = environ[var], f"env {var}"
    for k, v in flags.items():
        if v is not None and k in values:
            values[k], prov[k] = str(v), "flag"
    return CliConfig(values, prov)


# --- helpers ----------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_labeled(path: Path, kind: type) -> list:
    items = read_jsonl(path)
    for i, it in enumerate(items, 1):
        if not isinstance(it, kind):
            raise DataError(f"{path}: record {i} is not a {kind.__name__}")
        if it.label is None:
            ident = f" (id {it.id})" if getattr(it, "id", "") else ""
            raise DataError(f"{path}: record {i}{ident} has no label")
    if not items:
        raise DataError(f"{path}: no records")
    return items


def _fmt(x) -> str:
    return "n/a" if x is None else f"{x:.3f}"


def _parse_window(text: str | None):
    if not text:
        return None
    parts = text.replace(",", " ").split()
    if len(parts) != 2:
        raise UsageError(f"window must be 'LO HI', got {text!r}")
    return int(parts[0]), int(parts[1])


# --- commands ---------------------------------------------------------------------------

def cmd_synth(args, cfg: CliConfig) -> int:
    from . import synth

    out = Path(cfg["data_dir"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{args.kind}.jsonl"
    if path.exists() and not args.force:
        print(f"error: {path} exists; pass --force to overwrite", file=sys.stderr)
        return EXIT_USAGE
    extra = None
    if args.kind == "xpcs":
        items = synth.xpcs_benchmark(args.seed).items
    elif args.kind == "xafs":
        bench = synth.xafs_benchmark(args.seed)
        items = bench.items
        extra = out / "xafs.holdout.json"
        extra.write_text(json.dumps(bench.holdout) + "\n")
    else:
        items, _ = synth.gen_ramp(synth.RampSpec(), args.seed)
    n = write_jsonl(path, items)
    print(f"wrote {n} records to {path} (sha256 {_sha256(path)[:16]})")
    if extra is not None:
        print(f"wrote holdout group to {extra}")
    return EXIT_OK


def _train_anomaly(args, data: Path) -> tuple[object, list[str], list[dict]]:
    from .anomaly import DETECTORS, evaluate_detectors, fit_pipeline
    from .features import xpcs_matrix

    items = _load_labeled(data, TimeSeriesBundle)
    X = xpcs_matrix(items)
    labels = [it.label for it in items]
    t0 = time.perf_counter()
    evals = evaluate_detectors(X, labels, seed=args.seed, workers=args.workers)
    rows = [e.row() for e in evals.values()]
    print(f"{'model':<8} {'n_comp':>6} {'contam':>7} {'recall_anom':>11} {'fdr':>6}")
    for r in rows:
        print(f"{r['model']:<8} {r['n_components']:>6} {r['contamination']:>7.2f} "
              f"{_fmt(r['recall_anomaly']):>11} {_fmt(r['fdr']):>6}")
    print(f"evaluated {len(DETECTORS)} detectors in {time.perf_counter() - t0:.1f} s")
    failures = []
    ee = evals.get("ee")
    if ee is not None:
        if ee.recall_anomaly < ANOMALY_EE_RECALL:
            failures.append(f"ee recall {ee.recall_anomaly:.3f} < {ANOMALY_EE_RECALL}")
        if ee.fdr is None or ee.fdr > ANOMALY_EE_FDR:
            failures.append(f"ee fdr {_fmt(ee.fdr)} > {ANOMALY_EE_FDR}")
    for e in evals.values():
        if e.recall_anomaly < ANOMALY_MIN_RECALL:
            failures.append(f"{e.kind} recall {e.recall_anomaly:.3f} < {ANOMALY_MIN_RECALL}")
    # deployable model: refit on every normal example with the tuned settings
    chosen = evals[args.detector]
    normal = [i for i, y in enumerate(labels) if y is Status.NORMAL]
    pipe = fit_pipeline(args.detector, X[normal], chosen.tuning.best["n_components"],
                        chosen.tuning.best["contamination"], args.seed)
    return pipe, failures, rows


def _train_classify(args, data: Path) -> tuple[object, list[str], list[dict]]:
    from .classify import MODEL_NAMES, eval_suite, train_classifier

    items = _load_labeled(data, Spectrum1D)
    holdout_path = Path(args.holdout) if args.holdout else data.with_suffix(".holdout.json")
    holdout = json.loads(holdout_path.read_text()) if holdout_path.exists() else []
    suite = eval_suite(items, holdout, seed=args.seed)
    print(f"{'model':<12} {'repr':<11} {'split':<8} {'f1':>6} {'accuracy':>8}")
    for r in suite.rows:
        print(f"{r.model:<12} {r.representation:<11} {r.split:<8} "
              f"{r.f1:>6.3f} {r.accuracy:>8.3f}")
    failures = []
    for m in MODEL_NAMES:
        f = suite.get(m, "engineered", "uniform").f1
        if f < CLASSIFY_MIN_F1:
            failures.append(f"{m} engineered/uniform F1 {f:.3f} < {CLASSIFY_MIN_F1}")
    if holdout:
        eng = suite.get("k-Neighbors", "engineered", "unique").f1
        raw = suite.get("k-Neighbors", "raw", "unique").f1
        if not eng > raw:
            failures.append(f"kNN unique F1 engineered {eng:.3f} <= raw {raw:.3f}")
    clf = train_classifier(items, args.model, args.representation, args.seed)
    return clf, failures, [r.as_dict() for r in suite.rows]


def cmd_train(args, cfg: CliConfig) -> int:
    from .ingest import save_model

    default_name = "xpcs.jsonl" if args.pipeline == "anomaly" else "xafs.jsonl"
    data = Path(args.data) if args.data else Path(cfg["data_dir"]) / default_name
    if not data.exists():
        raise DataError(f"dataset {data} not found")
    if args.pipeline == "anomaly":
        body, failures, rows = _train_anomaly(args, data)
    else:
        body, failures, rows = _train_classify(args, data)
    out = Path(cfg["artifact"])
    save_model(body, out)
    print(f"wrote model artifact {out}")
    if args.metrics:
        with open(args.metrics, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
        print(f"wrote metrics table {args.metrics}")
    for f in failures:
        print(f"threshold not met: {f}", file=sys.stderr)
    if failures and args.strict:
        raise ThresholdError(f"{len(failures)} acceptance threshold(s) not met")
    return EXIT_OK


def _iter_patterns(source: Path):
    if source.is_dir():
        files = sorted((p for p in source.iterdir() if p.is_file()),
                       key=lambda p: (p.stat().st_mtime_ns, p.name))
        from .ingest import parse_file
        for p in files:
            yield from parse_file(p)
    else:
        yield from read_jsonl(source)


def cmd_nmf(args, cfg: CliConfig) -> int:
    from .agent import NmfAgent
    from .nmf import NmfConfig

    source = Path(args.data) if args.data else Path(cfg["data_dir"]) / "ramp.jsonl"
    if not source.exists():
        raise DataError(f"pattern source {source} not found")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = NmfConfig(p=int(cfg["nmf_p"]), max_iter=args.max_iter, tol=args.tol,
                       seed=args.seed, window=_parse_window(cfg["nmf_window"]))
    agent = NmfAgent(config)
    n = 0
    for item in _iter_patterns(source):
        if not isinstance(item, Spectrum1D):
            raise DataError("NMF needs spectrum records")
        try:
            agent.tell(item)
        except ValueError as exc:   # fewer patterns than components, grid mismatch
            raise DataError(str(exc)) from None
        n += 1
        rep = agent.report()
        payload = rep.to_json()
        (out / f"snapshot_{n:04d}.json").write_text(json.dumps(payload))
        with open(out / f"weights_{n:04d}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([config.meta_key] + [f"w{j}" for j in range(config.p)]
                       + ["rel_error"])
            for meta, row, err in zip(rep.payload["meta_values"], rep.payload["weights"],
                                      rep.payload["rel_errors"]):
                w.writerow([meta] + row + [err])
        with open(out / f"components_{n:04d}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index"] + [f"h{j}" for j in range(config.p)])
            comps = np.asarray(rep.payload["components"])
            for i in range(comps.shape[1]):
                w.writerow([i] + comps[:, i].tolist())
    if n == 0:
        raise DataError(f"no patterns in {source}")
    print(f"wrote {n} snapshots to {out}")
    return EXIT_OK


def cmd_watch(args, cfg: CliConfig) -> int:
    from .agent import make_agent
    from .ingest import (ArchiveSink, WatchConfig, Watcher, WebhookSink, load_model)
    from .nmf import NmfConfig

    directory = Path(args.dir) if args.dir else Path(cfg["data_dir"])
    if not directory.is_dir():
        raise DataError(f"watch directory {directory} does not exist")
    kind = cfg["agent"]
    if kind == "nmf":
        agent = make_agent("nmf", NmfConfig(p=int(cfg["nmf_p"]),
                                            window=_parse_window(cfg["nmf_window"])))
    else:
        artifact = load_model(cfg["artifact"])
        if artifact.kind != kind:
            raise DataError(f"artifact holds a {artifact.kind} model, agent is {kind}")
        extra = {"pause_after": args.pause_after} if kind == "anomaly" else {}
        agent = make_agent(kind, artifact.body, **extra)
    sinks = []
    if args.archive:
        sinks.append(ArchiveSink(args.archive))
    if cfg["webhook_url"]:
        dead = args.dead_letter or str(directory / "dead-letter.jsonl")
        sinks.append(WebhookSink(cfg["webhook_url"], dead, slack_format=args.slack))
    wc = WatchConfig(directory, cfg["watch_glob"], args.poll_interval, args.debounce)
    watcher = Watcher(wc, agent, sinks)

    def _stop(signum, frame):
        watcher._stop.set()

    old = signal.signal(signal.SIGTERM, _stop)
    try:
        watcher.run(max_polls=args.max_polls)
    except KeyboardInterrupt:
        pass
    finally:
        signal.signal(signal.SIGTERM, old)
        for sink in sinks:
            sink.close(args.drain_timeout)
    print(watcher.stats.summary())
    return EXIT_OK


# --- parser -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sentinel", description=__doc__)
    p.add_argument("--config", help="config file with key = value entries")
    p.add_argument("--data-dir", help="data directory (env SENTINEL_DATA_DIR)")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a canonical synthetic dataset")
    s.add_argument("kind", choices=("xpcs", "xafs", "ramp"), help="dataset to generate")
    s.add_argument("--seed", type=int, default=2021, help="generator seed")
    s.add_argument("--force", action="store_true", help="overwrite existing files")

    t = sub.add_parser("train", help="evaluate a pipeline and write a model artifact")
    t.add_argument("pipeline", choices=("anomaly", "classify"), help="pipeline to train")
    t.add_argument("--data", help="labeled JSON Lines dataset")
    t.add_argument("--artifact", help="output model artifact path")
    t.add_argument("--metrics", help="write the metrics table as CSV")
    t.add_argument("--seed", type=int, default=0, help="split and model seed")
    t.add_argument("--strict", action="store_true",
                   help="exit 3 if acceptance thresholds are not met")
    t.add_argument("--workers", type=int, default=1, help="threads for the tuning grid")
    t.add_argument("--detector", choices=("lof", "ee", "iforest"), default="ee",
                   help="anomaly detector to deploy")
    t.add_argument("--model", choices=("RF", "MLP", "k-Neighbors"), default="k-Neighbors",
                   help="classifier to deploy")
    t.add_argument("--representation", choices=("raw", "engineered"),
                   default="engineered", help="classifier input representation")
    t.add_argument("--holdout", help="JSON list of holdout indices for unique validation")

    n = sub.add_parser("nmf", help="run an incremental NMF session over patterns")
    n.add_argument("--data", help="JSON Lines file or directory of pattern files")
    n.add_argument("--out", default="nmf-out", help="snapshot output directory")
    n.add_argument("--p", type=int, dest="nmf_p", help="number of components")
    n.add_argument("--window", dest="nmf_window", help="column window 'LO HI'")
    n.add_argument("--max-iter", type=int, default=500, help="iterations per update")
    n.add_argument("--tol", type=float, default=1e-6, help="relative stopping tolerance")
    n.add_argument("--seed", type=int, default=0, help="initialization seed")

    w = sub.add_parser("watch", help="watch a directory and report on new files")
    w.add_argument("--dir", help="directory to watch (defaults to data_dir)")
    w.add_argument("--glob", dest="watch_glob", help="file name pattern")
    w.add_argument("--agent", choices=("anomaly", "classification", "nmf"),
                   help="agent kind")
    w.add_argument("--artifact", help="model artifact to load")
    w.add_argument("--webhook-url", help="webhook endpoint (env SENTINEL_WEBHOOK_URL)")
    w.add_argument("--slack", action="store_true", help="send Slack-style {text} bodies")
    w.add_argument("--dead-letter", help="file for undeliverable messages")
    w.add_argument("--archive", help="append every message to this JSON Lines file")
    w.add_argument("--poll-interval", type=float, default=0.5, help="seconds between polls")
    w.add_argument("--debounce", type=int, default=2,
                   help="polls a file size must stay stable")
    w.add_argument("--pause-after", type=int, default=3,
                   help="consecutive anomalies before asking to pause")
    w.add_argument("--max-polls", type=int, help="stop after this many polls")
    w.add_argument("--drain-timeout", type=float, default=10.0,
                   help="seconds to drain the webhook queue on shutdown")
    w.add_argument("--p", type=int, dest="nmf_p", help="components for the nmf agent")
    return p


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "nmf": cmd_nmf, "watch": cmd_watch}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: getattr(args, k, None) for k in DEFAULTS}
    try:
        cfg = resolve_config(flags, args.config)
        print("effective config:\n" + cfg.describe(), file=sys.stderr)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ThresholdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_THRESHOLD
    except (DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:   # noqa: BLE001 - last-resort fault code
        log.debug("runtime fault", exc_info=True)
        print(f"runtime fault: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
