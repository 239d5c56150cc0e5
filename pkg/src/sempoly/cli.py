"""Command-line interface.

Subcommands: fit, moments, simulate, replicate, validate.  Exit codes are 0
on success, 1 on input errors, 2 when a fit does not converge.  Every run
derives its randomness from a single --seed; when the flag is absent a seed
is chosen and printed, and a reproducibility record (seed, options, version)
accompanies the results.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import __version__
from .empirical import DataError, center, load_csv
from .model import ModelError, parse_model
from .moments import MomentEngine
from .optimize import FitOptions, PipelineOptions, fit_pipeline
from .simulate import GENERATORS, StudySpec, generate_ganzach, generate_interaction, run_study


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    seed = int(np.random.SeedSequence().generate_state(1)[0])
    print(f"seed: {seed}", file=sys.stderr)
    return seed


def _record(seed: int | None, **options) -> dict:
    return {"seed": seed, "options": options, "version": __version__}


def _emit(args, payload: dict, text: str):
    body = json.dumps(payload, indent=2, sort_keys=True) if args.format == "json" else text
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(body + "\n")
        with open(args.out + ".meta.json", "w", encoding="utf-8") as fh:
            json.dump(payload.get("record", {}), fh, indent=2, sort_keys=True)
    else:
        print(body)


def _load_model_arg(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_model(fh.read())
    except OSError as exc:
        raise DataError(f"cannot read model file {path!r}: {exc}") from exc


def cmd_validate(args) -> int:
    try:
        model = _load_model_arg(args.model)
    except (ModelError, DataError) as exc:
        return _fail(str(exc))
    print(f"model ok: k={model.k} l={model.l} m1={model.m1} m2={model.m2}")
    print(f"free parameters ({len(model.parameters)}): " + " ".join(s.name for s in model.parameters))
    for warning in model.warnings:
        print(f"warning: {warning}")
    return 0


def cmd_moments(args) -> int:
    if args.order < 2:
        return _fail("order must be >= 2")
    try:
        model = _load_model_arg(args.model)
    except (ModelError, DataError) as exc:
        return _fail(str(exc))
    engine = MomentEngine(model)
    tensor = engine.cov_tensor(args.order)
    names = model.manifest_names
    payload = {"record": _record(None, model=args.model, order=args.order)}
    payload.update(tensor.to_dict(names))
    _emit(args, payload, tensor.render(names))
    return 0


def cmd_fit(args) -> int:
    seed = _resolve_seed(args)
    try:
        model = _load_model_arg(args.model)
        data = center(load_csv(args.data, model_names=model.manifest_names))
        options = PipelineOptions(
            restarts=args.restarts,
            seed=seed,
            warm_start=not args.no_warm_start,
            order=args.order,
            fit=FitOptions(max_iter=args.max_iter),
        )
        result = fit_pipeline(MomentEngine(model), data, args.method, options)
    except (ModelError, DataError, ValueError) as exc:
        return _fail(str(exc))
    record = _record(
        seed,
        model=args.model,
        data=args.data,
        method=args.method,
        order=args.order,
        restarts=args.restarts,
        warm_start=not args.no_warm_start,
        max_iter=args.max_iter,
    )
    payload = result.to_dict(record)
    lines = [f"method: {args.method}", f"converged: {result.converged}"]
    lines.append(f"objective: {result.objective_value!r}")
    lines.append(f"iterations: {result.iterations}  gradient_norm: {result.gradient_norm!r}")
    lines += [f"{name} = {value!r}" for name, value in result.parameters.items()]
    lines.append(f"# record: {json.dumps(record, sort_keys=True)}")
    _emit(args, payload, "\n".join(lines))
    return 0 if result.converged else 2


def cmd_simulate(args) -> int:
    seed = _resolve_seed(args)
    if args.n < 1:
        return _fail("n must be >= 1")
    generate = generate_ganzach if args.generator == "ganzach" else generate_interaction
    data = generate(args.n, seed)
    try:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(data.names)
            writer.writerows(data.values.tolist())
        with open(args.out + ".meta.json", "w", encoding="utf-8") as fh:
            json.dump(_record(seed, generator=args.generator, n=args.n), fh, indent=2, sort_keys=True)
    except OSError as exc:
        return _fail(f"cannot write {args.out!r}: {exc}")
    print(f"wrote {data.n} cases x {data.m} columns to {args.out}")
    return 0


def cmd_replicate(args) -> int:
    seed = _resolve_seed(args)
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    try:
        spec = StudySpec(
            generator=args.generator,
            n=args.n,
            reps=args.reps,
            methods=methods,
            seed=seed,
        )
        table = run_study(spec)
    except ValueError as exc:
        return _fail(str(exc))
    record = _record(seed, generator=args.generator, n=args.n, reps=args.reps, methods=list(methods))
    text = table.render_text() + "\n# record: " + json.dumps(record, sort_keys=True)
    _emit(args, table.to_dict(record), text)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sempoly",
        description="Moment-based estimation for polynomial structural equation models",
    )
    parser.add_argument("--version", action="version", version=f"sempoly {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_output_flags(p):
        p.add_argument("--format", choices=("text", "json"), default="text")
        p.add_argument("--out", default=None, help="write results to this path")

    p = sub.add_parser("fit", help="fit a model to CSV data")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=("uls", "uls3", "gls", "wls"), default="uls3")
    p.add_argument("--order", type=int, default=3, help="highest tensor order for uls3")
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--no-warm-start", action="store_true")
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--seed", type=int, default=None)
    add_output_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("moments", help="print implied moment tensors symbolically")
    p.add_argument("--model", required=True)
    p.add_argument("--order", type=int, default=2)
    add_output_flags(p)
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("simulate", help="write a synthetic dataset as CSV")
    p.add_argument("--generator", choices=GENERATORS, required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replicate", help="run a replication study and print the bias table")
    p.add_argument("--generator", choices=GENERATORS, required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--methods", default="uls,uls3")
    p.add_argument("--seed", type=int, default=None)
    add_output_flags(p)
    p.set_defaults(func=cmd_replicate)

    p = sub.add_parser("validate", help="parse a model file and report diagnostics")
    p.add_argument("model")
    p.set_defaults(func=cmd_validate)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
