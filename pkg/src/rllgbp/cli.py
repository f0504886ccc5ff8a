"""Command-line front end: capacity and information-rate sweeps, exact counts,
sampling, region censuses and admissibility checks.

Tables go to ``--out`` (or standard output), logs to standard error.  Exit
codes: 0 success, 2 bad arguments, 3 some point failed (or, for
``validate``, some array is inadmissible), 4 non-convergence under
``--strict``.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .constraint_model import RllSpec, admissible_mask, format_spec, parse_spec
from .exact_oracle import OracleLimitError, brute_force_count, exact_count, transfer_matrix_count
from .free_energy import (FiniteKUnsupportedError, capacity_estimate, capacity_region_graph,
                          shannon_bounds)
from .gbp import GbpConfig, Method, Schedule, run_gbp
from .info_rate import snr_sweep
from .region_graph import validate_region_graph
from .sampler import draw_samples

log = logging.getLogger("rllgbp")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_NONCONVERGED = 0, 2, 3, 4


# -- argument syntax -------------------------------------------------------------

def parse_range(text: str, cast=int) -> list:
    """``"2..20"``, ``"2..20:2"``, ``"4,6,8"`` or a mix such as ``"2..6,10"``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, _, rest = part.partition("..")
            hi, _, step = rest.partition(":")
            lo, hi = cast(lo), cast(hi)
            step = cast(step) if step else cast(1)
            if step <= 0:
                raise ValueError(f"step must be positive in {part!r}")
            n = int(math.floor((hi - lo) / step + 1e-9)) + 1
            out.extend(lo + i * step for i in range(max(n, 0)))
        else:
            out.append(cast(part))
    if not out:
        raise ValueError(f"empty list {text!r}")
    return out


def _size_list(text: str) -> list:
    """Sizes are integers (square/cubic grids) or explicit shapes like ``20x30``."""
    out = []
    for part in text.split(","):
        if "x" in part:
            shape = tuple(int(v) for v in part.split("x"))
            if any(v < 1 for v in shape):
                raise argparse.ArgumentTypeError(f"bad shape {part!r}")
            out.append(shape)
        else:
            try:
                out.extend(parse_range(part, int))
            except ValueError as exc:
                raise argparse.ArgumentTypeError(str(exc)) from None
    for s in out:
        if isinstance(s, int) and s < 1:
            raise argparse.ArgumentTypeError(f"sizes must be >= 1, got {s}")
    return out


def _snr_list(text: str) -> list:
    try:
        return parse_range(text, float)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _constraint(text: str) -> str:
    try:
        parse_spec(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


def _shape(size, spec: RllSpec) -> tuple:
    if isinstance(size, tuple):
        if len(size) != spec.ndim:
            raise ValueError(f"shape {size} does not match a {spec.ndim}-D constraint")
        return size
    return (size,) * spec.ndim


def _size_label(size) -> str:
    return "x".join(map(str, size)) if isinstance(size, tuple) else str(size)


# -- output ------------------------------------------------------------------------

@dataclass
class TableWriter:
    """Streams rows as CSV (flushed per row) or collects them for one JSON document."""

    stream: object
    fmt: str
    columns: list
    meta: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)

    def __post_init__(self):
        if self.fmt == "csv":
            self._csv = csv.DictWriter(self.stream, fieldnames=self.columns, extrasaction="ignore",
                                       lineterminator="\n")
            self._csv.writeheader()
            self.stream.flush()

    def write(self, row: dict):
        self.rows.append(row)
        if self.fmt == "csv":
            self._csv.writerow({k: _csv_value(row.get(k)) for k in self.columns})
            self.stream.flush()

    def close(self):
        if self.fmt == "json":
            json.dump({"meta": self.meta, "rows": self.rows}, self.stream, indent=2,
                      default=_json_default)
            self.stream.write("\n")
        self.stream.flush()


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def _json_default(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def _open_out(path):
    if path in (None, "-"):
        return contextlib.nullcontext(sys.stdout)
    return open(path, "w", newline="")


# -- GBP flags ---------------------------------------------------------------------------

def _add_gbp_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("GBP")
    g.add_argument("--damping", type=float, default=0.5)
    g.add_argument("--tol", type=float, default=1e-9, help="residual tolerance")
    g.add_argument("--max-iter", type=int, default=10_000)
    g.add_argument("--schedule", choices=[s.value for s in Schedule], default="synchronous")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--method", choices=[m.value for m in Method], default="block")
    g.add_argument("--anderson", type=int, default=3, help="mixing memory, 0 disables")


def gbp_config(args) -> GbpConfig:
    return GbpConfig(damping=args.damping, tolerance=args.tol, max_iterations=args.max_iter,
                     schedule=args.schedule, seed=args.seed, method=args.method,
                     anderson=args.anderson)


# -- subcommands ------------------------------------------------------------------

CAPACITY_COLUMNS = ["m", "capacity_bits", "lower_bound", "upper_bound", "iterations", "residual",
                    "converged", "consistency_residual", "n_regions", "constraint", "method",
                    "damping", "tol", "max_iter", "schedule", "seed", "error", "seconds"]


def _capacity_point(spec_text, size, cfg):
    spec = parse_spec(spec_text)
    row = {"m": _size_label(size), "constraint": format_spec(spec), "method": cfg.method.value,
           "damping": cfg.damping, "tol": cfg.tolerance, "max_iter": cfg.max_iterations,
           "schedule": cfg.schedule.value, "seed": cfg.seed}
    t0 = time.perf_counter()
    try:
        ce = capacity_estimate(spec, _shape(size, spec), cfg)
    except Exception as exc:  # recorded in the row; the sweep goes on
        row.update(error=f"{type(exc).__name__}: {exc}", seconds=time.perf_counter() - t0)
        return row
    row.update(capacity_bits=ce.capacity_bits_per_symbol, iterations=ce.iterations,
               residual=ce.residual, converged=ce.converged,
               consistency_residual=ce.consistency_residual, n_regions=ce.n_regions,
               seconds=ce.seconds)
    try:
        b = shannon_bounds(ce)
        row.update(lower_bound=b.lower, upper_bound=b.upper)
    except FiniteKUnsupportedError:
        pass
    return row


def _finish_row(row, args, counters) -> int | None:
    if row.get("error"):
        counters["failed"] += 1
        log.error("point %s failed: %s", row.get("m", row.get("snr_db")), row["error"])
        if args.strict:
            return EXIT_PARTIAL
    elif row.get("converged") is False or row.get("non_converged"):
        counters["non_converged"] += 1
        if args.strict:
            return EXIT_NONCONVERGED
    return None


def _exit_code(counters) -> int:
    return EXIT_PARTIAL if counters["failed"] else EXIT_OK


def cmd_capacity(args) -> int:
    cfg = gbp_config(args)
    spec = parse_spec(args.constraint)
    for s in args.size:
        _shape(s, spec)
    counters = {"failed": 0, "non_converged": 0}
    with _open_out(args.out) as stream:
        out = TableWriter(stream, args.format, CAPACITY_COLUMNS,
                          {"command": "capacity", "constraint": format_spec(spec),
                           "gbp": cfg.as_dict()})
        try:
            if args.parallel and len(args.size) > 1:
                with ProcessPoolExecutor() as pool:
                    rows = pool.map(_capacity_point, [args.constraint] * len(args.size),
                                    args.size, [cfg] * len(args.size))
                    for row in rows:
                        out.write(row)
                        code = _finish_row(row, args, counters)
                        if code is not None:
                            return code
            else:
                for size in args.size:
                    row = _capacity_point(args.constraint, size, cfg)
                    out.write(row)
                    code = _finish_row(row, args, counters)
                    if code is not None:
                        return code
        finally:
            out.close()
    return _exit_code(counters)


INFORATE_COLUMNS = ["snr_db", "rate_bits", "std_error", "h_y", "h_ygx", "L", "noiseless_capacity",
                    "non_converged", "constraint", "m", "seed", "error", "seconds"]


def cmd_inforate(args) -> int:
    cfg = gbp_config(args)
    spec = parse_spec(args.constraint)
    if len(args.size) != 1:
        raise ValueError("inforate takes a single --size")
    shape = _shape(args.size[0], spec)
    if len(shape) != 2:
        raise ValueError("inforate needs a 2-D constraint")
    counters = {"failed": 0, "non_converged": 0}
    base = {"constraint": format_spec(spec), "m": _size_label(args.size[0]), "seed": args.seed}
    with _open_out(args.out) as stream:
        out = TableWriter(stream, args.format, INFORATE_COLUMNS,
                          {"command": "inforate", **base, "gbp": cfg.as_dict()})
        status = []

        def emit(est):
            row = {**base, **est.as_dict()}
            row["rate_bits"] = est.rate_bits_per_symbol
            out.write(row)
            code = _finish_row(row, args, counters)
            if code is not None:
                status.append(code)
                raise _Abort

        try:
            snr_sweep(spec, shape, args.snr, args.samples, args.seed, cfg, on_point=emit)
        except _Abort:
            return status[0]
        except Exception as exc:
            out.write({**base, "error": f"{type(exc).__name__}: {exc}"})
            log.error("inforate failed: %s", exc)
            return EXIT_PARTIAL
        finally:
            out.close()
    return _exit_code(counters)


class _Abort(Exception):
    pass


def cmd_count(args) -> int:
    spec = parse_spec(args.constraint)
    counters = {"failed": 0}
    with _open_out(args.out) as stream:
        out = TableWriter(stream, args.format, ["m", "count", "log2_count", "capacity_bits",
                                                "method", "error"],
                          {"command": "count", "constraint": format_spec(spec)})
        for size in args.size:
            row = {"m": _size_label(size)}
            try:
                shape = _shape(size, spec)
                if args.method == "brute":
                    c = brute_force_count(spec, shape)
                elif args.method == "transfer":
                    c = transfer_matrix_count(spec, *shape, max_states=args.max_states)
                else:
                    c = exact_count(spec, shape)
                n = int(np.prod(shape))
                row.update(count=str(c.value), log2_count=c.log2, capacity_bits=c.capacity(n),
                           method=c.method.value)
            except (OracleLimitError, ValueError) as exc:
                row["error"] = str(exc)
                counters["failed"] += 1
                log.error("size %s: %s", row["m"], exc)
            out.write(row)
        out.close()
    return EXIT_PARTIAL if counters["failed"] else EXIT_OK


def format_grid(x: np.ndarray) -> str:
    x = np.asarray(x)
    if x.ndim == 2:
        return "\n".join("".join(str(int(v)) for v in row) for row in x)
    # 3-D arrays: one 2-D slice per leading index, separated by '---'
    return "\n---\n".join(format_grid(s) for s in x)


def parse_grids(text: str) -> list[np.ndarray]:
    """0/1 text grids separated by blank lines; '---' lines stack 2-D slices into 3-D."""
    arrays, block = [], []
    for line in text.splitlines() + [""]:
        line = line.strip()
        if line.startswith("#"):
            continue
        if line:
            block.append(line)
            continue
        if block:
            slices, cur = [], []
            for row in block + ["---"]:
                if row == "---":
                    if cur:
                        slices.append(cur)
                    cur = []
                    continue
                if set(row) - {"0", "1"}:
                    raise ValueError(f"grid rows may only contain 0 and 1, got {row!r}")
                cur.append([int(c) for c in row])
            try:
                grids = [np.array(s, dtype=np.uint8) for s in slices]
                arr = grids[0] if len(grids) == 1 else np.stack(grids)
            except ValueError:
                raise ValueError("ragged grid") from None
            arrays.append(arr)
            block = []
    return arrays


def cmd_sample(args) -> int:
    spec = parse_spec(args.constraint)
    if len(args.size) != 1:
        raise ValueError("sample takes a single --size")
    shape = _shape(args.size[0], spec)
    rg = capacity_region_graph(spec, shape)
    bs = run_gbp(rg, gbp_config(args))
    if not bs.converged:
        log.warning("beliefs did not converge (residual %.3g)", bs.residual)
        if args.strict:
            return EXIT_NONCONVERGED
    samples = draw_samples(rg, bs, args.samples, seed=args.seed)
    with _open_out(args.out) as stream:
        stream.write("\n\n".join(format_grid(x) for x in samples))
        if samples:
            stream.write("\n")
    return EXIT_OK


def cmd_regions(args) -> int:
    spec = parse_spec(args.constraint)
    out = []
    for size in args.size:
        rg = capacity_region_graph(spec, _shape(size, spec))
        report = validate_region_graph(rg)
        out.append({"m": _size_label(size), "plan": list(rg.plan.extents), **rg.census(),
                    "validation": report.summary()})
    with _open_out(args.out) as stream:
        json.dump({"constraint": format_spec(spec), "graphs": out}, stream, indent=2,
                  default=_json_default)
        stream.write("\n")
    return EXIT_OK if all(g["validation"]["passed"] for g in out) else EXIT_PARTIAL


def cmd_validate(args) -> int:
    spec = parse_spec(args.constraint)
    text = sys.stdin.read() if args.input in (None, "-") else open(args.input).read()
    arrays = parse_grids(text)
    bad = 0
    with _open_out(args.out) as stream:
        for i, x in enumerate(arrays):
            if x.ndim != spec.ndim:
                verdict = f"error: {x.ndim}-D array for a {spec.ndim}-D constraint"
                bad += 1
            else:
                ok = bool(admissible_mask(x[None], spec)[0])
                bad += not ok
                verdict = "admissible" if ok else "inadmissible"
            stream.write(f"{i}\t{'x'.join(map(str, x.shape))}\t{verdict}\n")
    return EXIT_PARTIAL if bad else EXIT_OK


# -- entry point -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rllgbp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, sizes=True):
        sp.add_argument("--constraint", required=True, type=_constraint,
                        help='per-axis run-length pairs, e.g. "1,inf" or "1,inf,2,4"')
        if sizes:
            sp.add_argument("--size", required=True, type=_size_list,
                            help='grid sizes: "300", "2..20", "2..20:2", "4,6,8" or "20x30"')
        sp.add_argument("--out", default=None, help="output path (default: standard output)")

    c = sub.add_parser("capacity", help="GBP capacity estimates over a list of sizes")
    common(c)
    c.add_argument("--format", choices=["csv", "json"], default="csv")
    c.add_argument("--strict", action="store_true")
    c.add_argument("--parallel", action="store_true", help="run size points concurrently")
    _add_gbp_flags(c)
    c.set_defaults(func=cmd_capacity)

    r = sub.add_parser("inforate", help="AWGN information rates over an SNR sweep")
    common(r)
    r.add_argument("--snr", required=True, type=_snr_list, help='dB values, e.g. "-10..10:2" or "0,5,10"')
    r.add_argument("--samples", type=int, default=1000)
    r.add_argument("--format", choices=["csv", "json"], default="csv")
    r.add_argument("--strict", action="store_true")
    _add_gbp_flags(r)
    r.set_defaults(func=cmd_inforate)

    n = sub.add_parser("count", help="exact counts of admissible arrays")
    common(n)
    n.add_argument("--method", choices=["auto", "brute", "transfer"], default="auto")
    n.add_argument("--max-states", type=int, default=100_000)
    n.add_argument("--format", choices=["csv", "json"], default="csv")
    n.set_defaults(func=cmd_count)

    s = sub.add_parser("sample", help="approximately uniform admissible arrays")
    common(s)
    s.add_argument("--samples", type=int, default=1)
    s.add_argument("--strict", action="store_true")
    _add_gbp_flags(s)
    s.set_defaults(func=cmd_sample)

    g = sub.add_parser("regions", help="region-graph census and validity report (JSON)")
    common(g)
    g.set_defaults(func=cmd_regions)

    v = sub.add_parser("validate", help="check 0/1 text grids for admissibility")
    common(v, sizes=False)
    v.add_argument("input", nargs="?", default="-", help="grid file (default: standard input)")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
                        level=logging.WARNING - 10 * min(args.verbose, 2))
    if getattr(args, "samples", 1) < 0:
        parser.error("--samples must be nonnegative")
    if hasattr(args, "damping"):
        try:
            gbp_config(args)
        except ValueError as exc:
            parser.error(str(exc))
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"rllgbp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
