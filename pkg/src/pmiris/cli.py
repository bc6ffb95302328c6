"""Command-line entry point: ``pmiris <subcommand> [options]``.

Option values resolve as: command-line flag, then environment variable
``PMIRIS_<OPTION>`` (upper case, dashes as underscores, e.g.
``PMIRIS_MAX_SHIFT``), then the JSON file given by ``--config`` (keys are
option names with underscores), then built-in defaults.

Exit status: 0 success (possibly with warnings in ``<out>/run.log``),
1 processing failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from pmiris import __version__
from pmiris.calibration import DEFAULT_CANDIDATES, Statistic, calibrate_epsilon
from pmiris.dataset import ManifestEntry, index_manifest, inventory, inventory_text, load_manifest, manifest_text
from pmiris.encoder import (
    DEFAULT_KERNEL_SIZE,
    DEFAULT_N_FILTERS,
    encode,
    learn_filters_ica,
    load_bank,
    sample_patches,
    save_bank,
    save_code,
)
from pmiris.errors import PmirisError
from pmiris.io import atomic_write_text, csv_text, load_image
from pmiris.matcher import DEFAULT_MAX_SHIFT, DEFAULT_MIN_VALID_BITS, Label, ScoreSet, exclusions_csv, read_scores, score_all, scores_csv
from pmiris.normalization import DEFAULT_COLS, DEFAULT_ROWS, load_normalized, normalize, save_normalized
from pmiris.quality import METRICS, QUALITY_HEADER, SENTINEL, quality_csv, quality_record
from pmiris.report import distribution_report
from pmiris.segmentation import ingest_segmentation, segment, write_segmentation
from pmiris.stats import d_prime, partition_by_class

log = logging.getLogger("pmiris")

ENV_PREFIX = "PMIRIS_"
SEG_SUFFIX = ".seg"
CODE_SUFFIX = ".code"

DEFAULTS = {
    "threads": 1,
    "rows": DEFAULT_ROWS,
    "cols": DEFAULT_COLS,
    "n_filters": DEFAULT_N_FILTERS,
    "kernel_size": DEFAULT_KERNEL_SIZE,
    "patches": 20000,
    "seed": 0,
    "max_shift": DEFAULT_MAX_SHIFT,
    "min_valid_bits": DEFAULT_MIN_VALID_BITS,
    "candidates": ",".join(repr(c) for c in DEFAULT_CANDIDATES),
    "statistic": Statistic.KS.value,
    "bins": 50,
}
INT_OPTIONS = {"threads", "rows", "cols", "n_filters", "kernel_size", "patches", "seed", "max_shift", "min_valid_bits", "bins"}


class ConfigError(Exception):
    """Invalid option value; the message names the flag."""


# --------------------------------------------------------------------------
# helpers


def _image_path(entry: ManifestEntry, manifest_path: Path) -> Path:
    p = Path(entry.image_path)
    return p if p.is_absolute() else manifest_path.parent / p


def _pool_map(fn, items, threads):
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(fn, items))


def _read_manifest(path: Path) -> tuple[list[ManifestEntry], dict[str, ManifestEntry]]:
    entries = load_manifest(path)
    return entries, index_manifest(entries)


def _setup_logging(out: Path, name: str) -> logging.Handler:
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter(f"%(levelname)s {name}: %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    return handler


def _check_range(args, name: str, lo=None, hi=None):
    v = getattr(args, name)
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        bounds = f">= {lo}" if hi is None else f"in [{lo}, {hi}]"
        raise ConfigError(f"--{name.replace('_', '-')} must be {bounds}, got {v}")


# --------------------------------------------------------------------------
# subcommands


def cmd_ingest(args) -> int:
    entries, _ = _read_manifest(args.manifest)
    for e in entries:
        if not _image_path(e, args.manifest).exists():
            log.warning("image not found: %s", e.image_path)
    atomic_write_text(args.out / "inventory.csv", inventory_text(inventory(entries)))
    atomic_write_text(args.out / "manifest.csv", manifest_text(entries))
    log.info("%d entries", len(entries))
    return 0


def _segment_one(args, entry):
    sid = entry.sample_id
    try:
        image = load_image(_image_path(entry, args.manifest))
        sidecar = args.sidecars / f"{sid}{SEG_SUFFIX}" if args.sidecars else None
        if sidecar is not None and sidecar.exists():
            seg = ingest_segmentation(image, sidecar)
        else:
            seg = segment(image)
        return sid, image, seg, None
    except PmirisError as exc:
        return sid, None, None, str(exc)


def cmd_segment(args) -> int:
    entries, _ = _read_manifest(args.manifest)
    results = _pool_map(lambda e: _segment_one(args, e), entries, args.threads)
    failures = []
    for sid, _, seg, err in results:
        if seg is None:
            log.warning("segmentation failed for %s: %s", sid, err)
            failures.append([sid, err])
            continue
        write_segmentation(args.out / f"{sid}{SEG_SUFFIX}", seg)
    atomic_write_text(args.out / "failures.csv", csv_text(["sample_id", "reason"], failures))
    return 0


def cmd_normalize(args) -> int:
    entries, _ = _read_manifest(args.manifest)

    def work(entry):
        sid = entry.sample_id
        sidecar = args.segmentation / f"{sid}{SEG_SUFFIX}"
        if not sidecar.exists():
            return sid, "no segmentation"
        try:
            image = load_image(_image_path(entry, args.manifest))
            norm = normalize(image, ingest_segmentation(image, sidecar), args.rows, args.cols)
            save_normalized(args.out / sid, norm)
        except PmirisError as exc:
            return sid, str(exc)
        return sid, None

    for sid, err in _pool_map(work, entries, args.threads):
        if err:
            log.warning("normalization skipped for %s: %s", sid, err)
    return 0


def cmd_quality(args) -> int:
    entries, _ = _read_manifest(args.manifest)

    def work(entry):
        sid = entry.sample_id
        image = load_image(_image_path(entry, args.manifest))
        seg = None
        try:
            if args.segmentation is not None:
                sidecar = args.segmentation / f"{sid}{SEG_SUFFIX}"
                if sidecar.exists():
                    seg = ingest_segmentation(image, sidecar)
            else:
                seg = segment(image)
        except PmirisError as exc:
            log.warning("no segmentation for %s (%s); geometry metrics set to %d", sid, exc, SENTINEL)
        if seg is None and args.segmentation is not None:
            log.warning("no segmentation for %s; geometry metrics set to %d", sid, SENTINEL)
        return sid, quality_record(image, seg)

    rows = _pool_map(work, entries, args.threads)
    atomic_write_text(args.out / "quality.csv", quality_csv(rows))
    return 0


def _normalized_stems(directory: Path) -> list[str]:
    return sorted(p.name[: -len(".tex.pgm")] for p in directory.glob("*.tex.pgm"))


def cmd_learn_bank(args) -> int:
    stems = _normalized_stems(args.normalized)
    if not stems:
        raise PmirisError(f"no normalized textures (*.tex.pgm) in {args.normalized}")
    norms = [load_normalized(args.normalized / s) for s in stems]
    patches = sample_patches([n.texture for n in norms], args.kernel_size, args.patches, args.seed, [n.validity_mask for n in norms])
    bank = learn_filters_ica(patches, args.n_filters, args.kernel_size, seed=args.seed)
    if not bank.converged:
        log.warning("ICA did not converge in %d iterations; bank is usable but flagged", bank.iterations)
    save_bank(args.out, bank)
    return 0


def cmd_encode(args) -> int:
    bank = load_bank(args.bank)
    stems = _normalized_stems(args.normalized)

    def work(stem):
        try:
            save_code(args.out / f"{stem}{CODE_SUFFIX}", encode(load_normalized(args.normalized / stem), bank))
        except PmirisError as exc:
            return stem, str(exc)
        return stem, None

    for stem, err in _pool_map(work, stems, args.threads):
        if err:
            log.warning("encoding failed for %s: %s", stem, err)
    return 0


def _code_files(directory: Path) -> dict[str, Path]:
    return {p.name[: -len(CODE_SUFFIX)]: p for p in sorted(directory.glob(f"*{CODE_SUFFIX}"))}


def cmd_match(args) -> int:
    manifest = _read_manifest(args.manifest)[1] if args.manifest else None
    probes = _code_files(args.probes)
    gallery = _code_files(args.gallery)
    scores = score_all(probes, gallery, manifest, args.max_shift, args.min_valid_bits, threads=args.threads)
    for e in scores.exclusions:
        log.warning("excluded %s vs %s: %s %s", e.probe_id, e.gallery_id, e.reason, e.detail)
    atomic_write_text(args.out / "scores.csv", scores_csv(scores))
    atomic_write_text(args.out / "exclusions.csv", exclusions_csv(scores))
    return 0


def cmd_analyze(args) -> int:
    scores = read_scores(args.scores)
    _, manifest = _read_manifest(args.manifest)
    distribution_report({"all": scores}, args.out / "overall", bins=args.bins)
    part = partition_by_class(scores.records, manifest, key=lambda r: r.probe_id)
    for r in part.exclusions:
        log.warning("score row %s vs %s not in manifest; excluded from class analysis", r.probe_id, r.gallery_id)
    by_class = {f"class_{k:02d}": ScoreSet(v, []) for k, v in part.groups.items()}
    distribution_report(by_class, args.out / "by_class", bins=args.bins)

    rows = []
    for scope, ss in [("all", scores)] + list(by_class.items()):
        g, i = ss.genuine(), ss.impostor()
        dp = d_prime(g, i) if g.size >= 2 and i.size >= 2 else float("nan")
        rows.append([scope, int(g.size), int(i.size), dp])
    atomic_write_text(args.out / "dprime.csv", csv_text(["scope", "n_genuine", "n_impostor", "d_prime"], rows))
    return 0


def _parse_candidates(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"--candidates must be a comma-separated list of numbers, got {text!r}") from None
    if not vals:
        raise ConfigError("--candidates is empty; give at least one epsilon_max value")
    if any(v <= 0 for v in vals):
        raise ConfigError("--candidates values must be positive")
    return sorted(set(vals))


def _parse_pairs(items, flag) -> dict[str, Path]:
    out = {}
    for item in items or []:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise ConfigError(f"{flag} expects NAME=PATH, got {item!r}")
        out[name] = Path(path)
    return out


def cmd_calibrate(args) -> int:
    candidates = _parse_candidates(args.candidates)
    synth_files = _parse_pairs(args.synthetic, "--synthetic")
    if not synth_files:
        raise ConfigError("--synthetic: at least one EPS=SCORES.csv is required")
    try:
        synth_by_eps = {float(k): v for k, v in synth_files.items()}
    except ValueError:
        raise ConfigError("--synthetic keys must be numeric epsilon_max values") from None
    if args.per_class and args.manifest is None:
        raise ConfigError("--per-class needs --manifest")
    selected = {}
    for eps in candidates:
        if eps in synth_by_eps:
            selected[eps] = read_scores(synth_by_eps[eps])
        else:
            log.warning("candidate %r has no --synthetic scores; skipped", eps)
    if not selected:
        raise ConfigError("--candidates: none of the candidates has --synthetic scores")
    manifest = _read_manifest(args.manifest)[1] if args.manifest else None
    result = calibrate_epsilon(read_scores(args.authentic), selected, args.per_class, manifest, args.statistic)
    result.metadata.update({"seed": args.seed, "candidate_grid": candidates})
    atomic_write_text(args.out / "calibration.json", result.to_json())
    return 0


def _read_metric_column(path: Path, metric: str) -> np.ndarray:
    import csv

    col = metric.upper()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != QUALITY_HEADER:
            raise PmirisError(f"{path} is not a quality CSV")
        vals = [float(row[col]) for row in reader]
    return np.array([v for v in vals if v != SENTINEL])


def cmd_report(args) -> int:
    sets = {}
    for name, path in _parse_pairs(args.set, "--set").items():
        if args.metric:
            if args.metric.lower() not in METRICS:
                raise ConfigError(f"--metric must be one of {', '.join(METRICS)}")
            sets[name] = _read_metric_column(path, args.metric)
        else:
            sets[name] = read_scores(path)
    if not sets:
        raise ConfigError("--set: at least one NAME=PATH is required")
    summary = distribution_report(sets, args.out, bins=args.bins)
    for w in summary.warnings:
        log.warning(w)
    return 0


# --------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmiris", description="Post-mortem iris analysis pipeline.")
    parser.add_argument("--version", action="version", version=f"pmiris {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")
    sub.required = True

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func)
        p.add_argument("--out", type=Path, required=True, help="output directory (file for learn-bank)")
        p.add_argument("--config", type=Path, help="JSON file with option defaults")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default 1)")
        return p

    p = add("ingest", cmd_ingest, "validate a manifest and write the PMI class inventory")
    p.add_argument("--manifest", type=Path, required=True)

    p = add("segment", cmd_segment, "detect (or ingest) pupil/iris segmentation")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--sidecars", type=Path, help="directory of <id>.seg sidecars to ingest instead of detecting")

    p = add("normalize", cmd_normalize, "rubber-sheet normalization of segmented irises")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--segmentation", type=Path, required=True)
    p.add_argument("--rows", type=int, default=None)
    p.add_argument("--cols", type=int, default=None)

    p = add("quality", cmd_quality, "ISO/IEC 29794-6 style quality metrics (quality.csv)")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--segmentation", type=Path, help="sidecar directory; detect when omitted")

    p = add("learn-bank", cmd_learn_bank, "learn an ICA filter bank from normalized textures")
    p.add_argument("--normalized", type=Path, required=True)
    p.add_argument("--n-filters", dest="n_filters", type=int, default=None)
    p.add_argument("--kernel-size", dest="kernel_size", type=int, default=None)
    p.add_argument("--patches", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)

    p = add("encode", cmd_encode, "binarize normalized irises into iris codes")
    p.add_argument("--normalized", type=Path, required=True)
    p.add_argument("--bank", type=Path, required=True)

    p = add("match", cmd_match, "score all probe/gallery code pairs")
    p.add_argument("--probes", type=Path, required=True)
    p.add_argument("--gallery", type=Path, required=True)
    p.add_argument("--manifest", type=Path, help="labels pairs genuine/impostor; 'unknown' without it")
    p.add_argument("--max-shift", dest="max_shift", type=int, default=None)
    p.add_argument("--min-valid-bits", dest="min_valid_bits", type=int, default=None)

    p = add("analyze", cmd_analyze, "score distributions overall and per PMI class")
    p.add_argument("--scores", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--bins", type=int, default=None)

    p = add("calibrate", cmd_calibrate, "select epsilon_max by genuine-score distribution alignment")
    p.add_argument("--authentic", type=Path, required=True, help="authentic scores.csv")
    p.add_argument("--synthetic", action="append", metavar="EPS=SCORES.csv", help="synthetic scores per candidate (repeat)")
    p.add_argument("--candidates", default=None, help="comma-separated epsilon_max grid")
    p.add_argument("--statistic", choices=[s.value for s in Statistic], default=None)
    p.add_argument("--per-class", dest="per_class", action="store_true")
    p.add_argument("--manifest", type=Path)
    p.add_argument("--seed", type=int, default=None)

    p = add("report", cmd_report, "distribution report over named score or quality CSVs")
    p.add_argument("--set", action="append", metavar="NAME=PATH")
    p.add_argument("--metric", help="quality metric column; score CSVs when omitted")
    p.add_argument("--bins", type=int, default=None)
    return parser


def resolve_options(args, environ=None) -> None:
    """Fill unset options from the environment, the config file, then defaults."""
    environ = os.environ if environ is None else environ
    config = {}
    if args.config is not None:
        try:
            config = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"--config: cannot read {args.config}: {exc}") from None
        if not isinstance(config, dict):
            raise ConfigError("--config must hold a JSON object")
    for name, default in DEFAULTS.items():
        if not hasattr(args, name) or getattr(args, name) is not None:
            continue
        flag = "--" + name.replace("_", "-")
        value, source = default, None
        env_key = ENV_PREFIX + name.upper()
        if env_key in environ:
            value, source = environ[env_key], env_key
        elif name in config:
            value, source = config[name], f"--config key '{name}'"
        if name in INT_OPTIONS:
            try:
                value = int(value)
            except (TypeError, ValueError):
                raise ConfigError(f"{flag} (from {source}) must be an integer, got {value!r}") from None
        elif name == "statistic" and value not in {s.value for s in Statistic}:
            raise ConfigError(f"{flag} (from {source}) must be one of ks, wasserstein1")
        setattr(args, name, str(value) if name == "candidates" else value)


def validate(args) -> None:
    _check_range(args, "threads", 1, 256)
    for name, lo, hi in (("rows", 8, None), ("cols", 64, None), ("n_filters", 1, None), ("kernel_size", 1, None),
                         ("patches", 1, None), ("min_valid_bits", 1, None), ("bins", 1, 10000), ("max_shift", 0, None)):
        if hasattr(args, name):
            _check_range(args, name, lo, hi)
    if hasattr(args, "kernel_size") and args.kernel_size % 2 == 0:
        raise ConfigError(f"--kernel-size must be odd, got {args.kernel_size}")
    if args.command == "calibrate":
        _parse_candidates(args.candidates)
    out = args.out if args.command != "learn-bank" else args.out.parent
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"--out: cannot create {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError(f"--out: {out} is not writable")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        resolve_options(args)
        validate(args)
    except ConfigError as exc:
        print(f"pmiris {args.command}: error: {exc}", file=sys.stderr)
        return 2
    log_dir = args.out if args.command != "learn-bank" else args.out.parent
    handler = _setup_logging(log_dir, args.command)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"pmiris {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (PmirisError, OSError, ValueError) as exc:
        log.error("%s", exc)
        print(f"pmiris {args.command}: failed: {exc}", file=sys.stderr)
        return 1
    finally:
        log.removeHandler(handler)
        handler.close()


if __name__ == "__main__":
    sys.exit(main())
