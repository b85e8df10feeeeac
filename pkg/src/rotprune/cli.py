"""Command-line entry point: ``rotprune {gen,prune,sweep,eval}``.

Exit codes: 0 success, 1 I/O or data error, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import compensation, pipeline, scoring, tensor, toy
from .pipeline import PruneConfig

log = logging.getLogger("rotprune")

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2

SWEEP_COLUMNS = (
    "ratio",
    "score",
    "variant",
    "seed",
    "n_calib",
    "in_sample_residual",
    "heldout_rel_error",
    "seconds_per_layer",
)


class UsageError(Exception):
    pass


def _floats(text: str) -> List[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> List[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _names(choices: Sequence[str]):
    def parse(text: str) -> List[str]:
        items = [t.strip() for t in text.split(",") if t.strip()]
        bad = [t for t in items if t not in choices]
        if bad or not items:
            raise argparse.ArgumentTypeError(f"invalid choice(s) {bad or text!r}; expected from {list(choices)}")
        return items

    return parse


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _model_digest(directory: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(Path(directory).iterdir()):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


# --------------------------------------------------------------------------
# config handling
# --------------------------------------------------------------------------

PRUNE_KEYS = (
    "ratio",
    "score_variant",
    "compensation_variant",
    "activation_mode",
    "rcond",
    "seed",
    "variance",
    "width_propagation",
    "compensate",
)


def _merge_config(args: argparse.Namespace, keys: Sequence[str], defaults: dict) -> dict:
    """Defaults < config file < explicit flags."""
    merged = dict(defaults)
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config}: {exc}") from exc
        unknown = set(loaded) - set(keys)
        if unknown:
            raise UsageError(f"config file {args.config}: unknown keys {sorted(unknown)}")
        merged.update(loaded)
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _prune_config(values: dict) -> PruneConfig:
    variance = values.get("variance", "population")
    if variance not in ("population", "sample"):
        raise UsageError(f"variance must be 'population' or 'sample', got {variance!r}")
    compensate = values.get("compensate")
    if isinstance(compensate, str):
        compensate = [c for c in compensate.split(",") if c]
    try:
        return PruneConfig(
            ratio=values.get("ratio", 0.2),
            score_variant=values.get("score_variant", "variance_aware"),
            compensation_variant=values.get("compensation_variant", "rot"),
            activation_mode=values.get("activation_mode", "propagated"),
            rcond=float(values.get("rcond", 1e-12)),
            seed=int(values.get("seed", 0)),
            variance_ddof=0 if variance == "population" else 1,
            width_propagation=bool(values.get("width_propagation", False)),
            compensate=compensate,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# --------------------------------------------------------------------------
# gen
# --------------------------------------------------------------------------

def cmd_gen(args: argparse.Namespace) -> int:
    dims = args.dims[0] if len(args.dims) == 1 else args.dims
    try:
        model, calib, held_out = toy.make_dataset(
            args.seed, dims, args.depth, args.nonlinearity, args.n_calib, args.n_eval, args.group_size
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.save_model(model, out / "model")
    tensor.write_tensor(out / "calib.rcpu", calib)
    tensor.write_tensor(out / "eval.rcpu", held_out)
    print(f"wrote {out}/model ({len(model.layers)} layers), calib {calib.shape}, eval {held_out.shape}, seed {args.seed}")
    return EXIT_OK


# --------------------------------------------------------------------------
# prune
# --------------------------------------------------------------------------

def cmd_prune(args: argparse.Namespace) -> int:
    config = _prune_config(_merge_config(args, PRUNE_KEYS, {}))
    model = pipeline.load_model(args.model)
    calib = tensor.read_tensor(args.calib)
    pruned, run = pipeline.prune_model(model, calib, config)
    out = pipeline.save_model(pruned, args.out)
    report_path = Path(args.report) if args.report else out / "report.jsonl"
    report_path.write_text(run.to_jsonl())
    for rec in run.layers:
        print(json.dumps(rec.to_dict(), sort_keys=True))
    return EXIT_OK


# --------------------------------------------------------------------------
# eval
# --------------------------------------------------------------------------

def cmd_eval(args: argparse.Namespace) -> int:
    model = pipeline.load_model(args.model)
    reference = pipeline.load_model(args.reference)
    inputs = tensor.read_tensor(args.eval_inputs)
    try:
        metrics = pipeline.evaluate(model, inputs, reference)
    except tensor.ShapeError as exc:
        raise tensor.ShapeError(f"evaluating {args.model} against {args.reference}: {exc}") from exc
    print(json.dumps(metrics.to_dict(), sort_keys=True))
    return EXIT_OK


# --------------------------------------------------------------------------
# sweep
# --------------------------------------------------------------------------

@dataclass
class SweepSpec:
    ratios: List[float] = field(default_factory=lambda: [0.1, 0.2, 0.3])
    score_variants: List[str] = field(default_factory=lambda: list(scoring.SCORE_VARIANTS))
    compensation_variants: List[str] = field(default_factory=lambda: list(compensation.VARIANTS))
    seeds: List[int] = field(default_factory=lambda: [0])
    # None means every calibration column.
    n_calib: List[Optional[int]] = field(default_factory=lambda: [None])
    activation_mode: str = "propagated"
    rcond: float = 1e-12

    def validate(self) -> None:
        for name in ("ratios", "score_variants", "compensation_variants", "seeds", "n_calib"):
            if not getattr(self, name):
                raise UsageError(f"sweep {name} must be non-empty")
        for r in self.ratios:
            if not 0.0 <= r < 1.0:
                raise UsageError(f"sweep ratio {r} outside [0, 1)")
        for n in self.n_calib:
            if n is not None and n < 1:
                raise UsageError(f"calibration size {n} must be positive")

    def cells(self):
        return itertools.product(self.ratios, self.score_variants, self.compensation_variants, self.seeds, self.n_calib)


def _subsample(calib: np.ndarray, n: Optional[int], seed: int) -> np.ndarray:
    total = calib.shape[1]
    if n is None or n >= total:
        return calib
    cols = np.sort(np.random.default_rng(seed).choice(total, size=n, replace=False))
    return calib[:, cols]


def run_sweep(spec: SweepSpec, model, calib, held_out, table_path: Path, omit_timing: bool = False) -> int:
    """Run every cell and append one CSV row per cell as it completes."""
    rows = 0
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        fh.flush()
        for ratio, score, variant, seed, n in spec.cells():
            config = PruneConfig(
                ratio=ratio,
                score_variant=score,
                compensation_variant=variant,
                activation_mode=spec.activation_mode,
                rcond=spec.rcond,
                seed=seed,
            )
            sub = _subsample(calib, n, seed)
            pruned, run = pipeline.prune_model(model, sub, config)
            metrics = pipeline.evaluate(pruned, held_out, model)
            writer.writerow(
                [
                    repr(float(ratio)),
                    score,
                    variant,
                    seed,
                    sub.shape[1],
                    repr(run.total_residual_after),
                    repr(metrics.rel_error),
                    "" if omit_timing else f"{run.seconds_per_layer:.6f}",
                ]
            )
            fh.flush()
            rows += 1
            log.info("ratio=%s score=%s variant=%s seed=%s n=%s rel_error=%.6g", ratio, score, variant, seed, sub.shape[1], metrics.rel_error)
    return rows


def cmd_sweep(args: argparse.Namespace) -> int:
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text())
        spec = SweepSpec(**manifest["spec"])
        inputs = manifest["inputs"]
        model_dir, calib_path, eval_path = inputs["model"], inputs["calib"], inputs["eval"]
        omit_timing = manifest.get("omit_timing", False) if args.omit_timing is None else args.omit_timing
    else:
        if not (args.model and args.calib and args.eval):
            raise UsageError("sweep needs --model, --calib and --eval (or --manifest)")
        spec = SweepSpec()
        if args.config:
            try:
                spec = SweepSpec(**json.loads(Path(args.config).read_text()))
            except TypeError as exc:
                raise UsageError(f"config file {args.config}: {exc}") from exc
        for key in ("ratios", "score_variants", "compensation_variants", "seeds", "n_calib", "activation_mode", "rcond"):
            value = getattr(args, key, None)
            if value is not None:
                setattr(spec, key, value)
        model_dir, calib_path, eval_path = args.model, args.calib, args.eval
        omit_timing = bool(args.omit_timing)
    spec.validate()

    model = pipeline.load_model(model_dir)
    calib = tensor.read_tensor(calib_path)
    held_out = tensor.read_tensor(eval_path)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "spec": asdict(spec),
        "inputs": {"model": str(model_dir), "calib": str(calib_path), "eval": str(eval_path)},
        "digests": {
            "model": _model_digest(Path(model_dir)),
            "calib": _sha256(Path(calib_path)),
            "eval": _sha256(Path(eval_path)),
        },
        "columns": list(SWEEP_COLUMNS),
        "omit_timing": omit_timing,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    rows = run_sweep(spec, model, calib, held_out, out / "table.csv", omit_timing)
    print(f"wrote {rows} rows to {out / 'table.csv'}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rotprune", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a toy model with calibration and held-out inputs")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--dims", type=_ints, default=[32], help="layer width, or depth+1 comma-separated widths")
    g.add_argument("--depth", type=int, default=4)
    g.add_argument("--nonlinearity", choices=pipeline.NONLINEARITIES, default="relu")
    g.add_argument("--n-calib", type=int, default=256)
    g.add_argument("--n-eval", type=int, default=1024)
    g.add_argument("--group-size", type=int, default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    p = sub.add_parser("prune", help="prune a model layer by layer")
    p.add_argument("--model", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--config", default=None, help="JSON file with PruneConfig fields; flags override it")
    p.add_argument("--ratio", type=float, default=None)
    p.add_argument("--score-variant", dest="score_variant", choices=scoring.SCORE_VARIANTS, default=None)
    p.add_argument("--compensation-variant", dest="compensation_variant", choices=compensation.VARIANTS, default=None)
    p.add_argument("--activation-mode", dest="activation_mode", choices=pipeline.ACTIVATION_MODES, default=None)
    p.add_argument("--rcond", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--variance", choices=("population", "sample"), default=None)
    p.add_argument("--width-propagation", dest="width_propagation", action="store_true", default=None)
    p.add_argument("--compensate", default=None, help="comma-separated layer names to compensate")
    p.set_defaults(func=cmd_prune)

    s = sub.add_parser("sweep", help="cross-product of ratios, scores and compensation variants")
    s.add_argument("--model")
    s.add_argument("--calib")
    s.add_argument("--eval")
    s.add_argument("--out", required=True)
    s.add_argument("--manifest", default=None, help="rerun from a previous run manifest")
    s.add_argument("--config", default=None, help="JSON file with SweepSpec fields; flags override it")
    s.add_argument("--ratios", type=_floats, default=None)
    s.add_argument("--score-variants", dest="score_variants", type=_names(scoring.SCORE_VARIANTS), default=None)
    s.add_argument(
        "--compensation-variants", dest="compensation_variants", type=_names(compensation.VARIANTS), default=None
    )
    s.add_argument("--seeds", type=_ints, default=None)
    s.add_argument("--n-calib", dest="n_calib", type=_ints, default=None)
    s.add_argument("--activation-mode", dest="activation_mode", choices=pipeline.ACTIVATION_MODES, default=None)
    s.add_argument("--rcond", type=float, default=None)
    s.add_argument("--omit-timing", dest="omit_timing", action="store_true", default=None,
                   help="leave seconds_per_layer empty so tables are byte-reproducible")
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("eval", help="held-out relative error against a reference model")
    e.add_argument("--model", required=True)
    e.add_argument("--reference", required=True)
    e.add_argument("--eval-inputs", dest="eval_inputs", required=True)
    e.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"rotprune: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError, tensor.NonFiniteError, tensor.SolverError) as exc:
        print(f"rotprune: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
