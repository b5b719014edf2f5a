"""Command-line interface: ``speckern bench | verify | compare``.

Flag precedence is CLI over config file (``key=value`` lines, keys named
like the long flags) over built-in defaults.  Exit codes: 0 on success, 1 on
any verification failure, 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from speckern.bench import (
    BenchConfig,
    ConfigError,
    VerificationError,
    records_to_csv,
    run_bench,
    run_compare,
    run_verify,
)
from speckern.geometry import GeometryClass
from speckern.operators import Strategy
from speckern.shapes import Shape

_STRATEGY_NAMES = {s.value: s for s in Strategy}
_SHAPE_NAMES = {s.value: s for s in Shape}
_GEOMETRY_NAMES = {g.value: g for g in GeometryClass}

_THREADS_ENV = "SPECKERN_THREADS"


def _parse_orders(text: str) -> tuple[int, ...]:
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        orders = tuple(range(int(lo), int(hi) + 1))
    else:
        orders = tuple(int(t) for t in text.split(","))
    if not orders:
        raise ConfigError(f"empty order range {text!r}")
    return orders


def _parse_list(text: str, table: dict, what: str) -> tuple:
    out = []
    for tok in text.split(","):
        tok = tok.strip().lower()
        if tok == "all":
            return tuple(table.values())
        if tok not in table:
            raise ConfigError(f"unknown {what} {tok!r}; choose from {sorted(table)}")
        out.append(table[tok])
    return tuple(out)


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(","))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="speckern",
        description=(
            "Matrix-free spectral element operator benchmarks (throughput in "
            "output DOF/s) and verification against a dense-assembly oracle."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="key=value config file (CLI flags win)")
        p.add_argument("--op", help="operator: mass, helmholtz, or bwdtrans")
        p.add_argument("--shape", help="comma list of shapes or 'all'")
        p.add_argument("--order", help="polynomial order range a..b or comma list")
        p.add_argument("--nelem", help="comma list of element counts")
        p.add_argument("--lambda", dest="lam", help="Helmholtz reaction coefficient")
        p.add_argument("--simd-width", dest="simd_width", help="interleave width W_V")
        p.add_argument(
            "--qpoints", help="per-direction quadrature point override, comma list"
        )
        p.add_argument("--reps", help="timed repetitions (at least 3)")
        p.add_argument("--warmup", help="warmup batches (at least 1)")
        p.add_argument("--seed", help="seed for synthetic geometry and inputs")
        p.add_argument(
            "--threads",
            help=f"block worker pool size (falls back to ${_THREADS_ENV})",
        )
        p.add_argument("--csv", help="write the CSV table to this path")
        p.add_argument(
            "--raw",
            action="store_true",
            default=None,
            help="also dump per-repetition raw timings as JSON",
        )

    b = sub.add_parser("bench", help="time operator applications")
    add_common(b)
    b.add_argument("--strategy", help="comma list: stdmat, stdmat_grouped, sumfac")
    b.add_argument("--geometry", help="regular or deformed")
    b.add_argument("--form", help="Helmholtz form: coll or noncoll")

    v = sub.add_parser("verify", help="run the oracle-equivalence suite")
    add_common(v)

    c = sub.add_parser(
        "compare",
        help="benchmark two configs differing in exactly one axis "
        "(give that axis two comma-separated values)",
    )
    add_common(c)
    c.add_argument("--strategy", help="one strategy, or a pair 'a,b' to compare")
    c.add_argument("--geometry", help="one geometry, or 'regular,deformed'")
    c.add_argument("--form", help="one Helmholtz form, or 'coll,noncoll'")
    return parser


def _load_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, val = line.split("=", 1)
            values[key.strip().replace("-", "_")] = val.strip()
    return values


def _setting(args, file_vals: dict[str, str], name: str, default: str | None = None):
    cli = getattr(args, name, None)
    if cli is not None:
        return cli
    if name in file_vals:
        return file_vals[name]
    return default


def _resolve_threads(args, file_vals) -> int:
    val = _setting(args, file_vals, "threads")
    if val is None:
        val = os.environ.get(_THREADS_ENV)
    return int(val) if val is not None else 1


def _bench_config(args, file_vals, axis_overrides: dict | None = None) -> BenchConfig:
    get = lambda name, default=None: _setting(args, file_vals, name, default)
    form = get("form")
    kwargs = dict(
        op=get("op", "mass"),
        shapes=_parse_list(get("shape", "all"), _SHAPE_NAMES, "shape"),
        orders=_parse_orders(get("order", "1..4")),
        nelems=_parse_ints(get("nelem", "128")),
        strategies=_parse_list(
            get("strategy", "stdmat,stdmat_grouped,sumfac"),
            _STRATEGY_NAMES,
            "strategy",
        ),
        geometry=_parse_list(get("geometry", "regular"), _GEOMETRY_NAMES, "geometry")[
            0
        ],
        helmholtz_form=form,
        lam=float(get("lam", "1.0")),
        interleave_width=(
            int(get("simd_width")) if get("simd_width") is not None else None
        ),
        qpoints=_parse_ints(get("qpoints")) if get("qpoints") is not None else None,
        repetitions=int(get("reps", "5")),
        warmup=int(get("warmup", "1")),
        seed=int(get("seed", "0")),
        threads=_resolve_threads(args, file_vals),
    )
    if axis_overrides:
        kwargs.update(axis_overrides)
    return BenchConfig(**kwargs)


def _emit(records, args, file_vals) -> None:
    csv_text = records_to_csv(records)
    path = _setting(args, file_vals, "csv")
    if path:
        with open(path, "w") as fh:
            fh.write(csv_text)
        print(f"wrote {len(records)} records to {path}", file=sys.stderr)
    else:
        sys.stdout.write(csv_text)
    if _setting(args, file_vals, "raw"):
        raw = [
            {
                "op": r.op,
                "shape": r.shape.value,
                "P": r.order,
                "strategy": r.strategy.value,
                "nelem": r.n_elements,
                "iterations": r.iterations,
                "raw_seconds": list(r.raw_seconds),
            }
            for r in records
        ]
        target = (path + ".raw.json") if path else None
        if target:
            with open(target, "w") as fh:
                json.dump(raw, fh, indent=1)
            print(f"wrote raw timings to {target}", file=sys.stderr)
        else:
            print(json.dumps(raw), file=sys.stderr)


def _cmd_bench(args) -> int:
    file_vals = _load_config_file(args.config) if args.config else {}
    cfg = _bench_config(args, file_vals)
    records = run_bench(cfg)
    _emit(records, args, file_vals)
    return 0


def _cmd_verify(args) -> int:
    file_vals = _load_config_file(args.config) if args.config else {}
    shapes = _parse_list(
        _setting(args, file_vals, "shape", "all"), _SHAPE_NAMES, "shape"
    )
    op = _setting(args, file_vals, "op")
    ops = ("mass", "helmholtz", "bwdtrans") if op is None else (op,)
    order_text = _setting(args, file_vals, "order")
    max_order = max(_parse_orders(order_text)) if order_text else 4
    lam_text = _setting(args, file_vals, "lam")
    lams = (0.0, 1.0, 2.5) if lam_text is None else (float(lam_text),)
    report = run_verify(
        shapes=shapes,
        ops=ops,
        max_order=max_order,
        lams=lams,
        seed=int(_setting(args, file_vals, "seed", "0")),
    )
    sys.stdout.write(report.format_report())
    return 0 if report.passed else 1


def _split_pair(text: str | None) -> tuple[str, ...] | None:
    if text is None:
        return None
    parts = tuple(t.strip() for t in text.split(","))
    return parts


def _cmd_compare(args) -> int:
    file_vals = _load_config_file(args.config) if args.config else {}
    pairs = {}
    for axis, name in (
        ("geometry", "geometry"),
        ("helmholtz_form", "form"),
        ("strategies", "strategy"),
    ):
        parts = _split_pair(_setting(args, file_vals, name))
        if parts and len(parts) == 2:
            pairs[axis] = parts
        elif parts and len(parts) > 2:
            raise ConfigError(f"--{name} takes at most two comma-separated values")
    if len(pairs) != 1:
        raise ConfigError(
            "compare needs exactly one axis with two values, e.g. "
            "--form coll,noncoll or --geometry regular,deformed or "
            "--strategy sumfac,stdmat"
        )
    axis, (val_a, val_b) = next(iter(pairs.items()))

    def override(val: str) -> dict:
        if axis == "geometry":
            return {"geometry": _parse_list(val, _GEOMETRY_NAMES, "geometry")[0]}
        if axis == "helmholtz_form":
            return {"helmholtz_form": val}
        return {"strategies": _parse_list(val, _STRATEGY_NAMES, "strategy")}

    # neutralise the raw pair text so both configs share the base settings
    for name in ("geometry", "form", "strategy"):
        if getattr(args, name, None) and "," in getattr(args, name):
            setattr(args, name, None)
        file_vals.pop(name, None)
    cfg_a = _bench_config(args, file_vals, override(val_a))
    cfg_b = _bench_config(args, file_vals, override(val_b))
    axis_name, rows = run_compare(cfg_a, cfg_b)
    print(f"axis: {axis_name}")
    print("shape,P,nelem,a,b,dof_per_s_a,dof_per_s_b,ratio_b_over_a")
    for r in rows:
        print(
            f"{r.shape.value},{r.order},{r.n_elements},{r.value_a},{r.value_b},"
            f"{r.throughput_a:.6e},{r.throughput_b:.6e},{r.ratio:.4f}"
        )
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "bench":
            return _cmd_bench(args)
        if args.command == "verify":
            return _cmd_verify(args)
        if args.command == "compare":
            return _cmd_compare(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except VerificationError as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
