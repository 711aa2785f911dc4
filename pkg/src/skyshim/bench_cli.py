"""``skyshim-bench``: generate data, run the experiment matrix, write CSV.

Subcommands::

    skyshim-bench gen-data  [spec flags] [--config F] [--data-dir D]
    skyshim-bench run-sweep [spec flags] [--config F] [--data-dir D] [--out sweep.csv]
    skyshim-bench run-crash [spec flags] [--script rolling|none|kill-pg|FILE] [--out crash.csv]
    skyshim-bench report    sweep.csv

Every number written to the CSV comes from the metrics ledger or from a
result hash. Wall times are virtual seconds under the simulator.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, TextIO

from skyshim import metrics as m
from skyshim.cluster import ClusterConfig, ClusterHandle, FaultScript, start_cluster
from skyshim.datagen import BenchSpec, base_paths, table_digest, write_dataset
from skyshim.dataset_client import DISCOVERY, Dataset, Mode, ScanOptions, ScanResult, selectivity_filter
from skyshim.errors import QueryFailedError, SkyshimError
from skyshim.object_store import RetryPolicy

CSV_HEADER = (
    "experiment", "mode", "node_count", "selectivity", "wall_time", "client_wire_bytes",
    "client_header_bytes", "discovery_wire_bytes", "node_disk_bytes", "client_work_units",
    "node_work_units", "objects_scanned", "objects_pruned", "rows_scanned", "rows_returned",
    "retries", "result_hash",
)

RETRY_BUDGET = 3
BUILTIN_SCRIPTS = ("rolling", "none", "kill-pg")


@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""
    # set when the failure also means the CSV is missing rows
    incomplete: bool = False

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}{': ' + self.detail if self.detail else ''}"


# -- cluster & data --------------------------------------------------------------------


def cluster_config(base: ClusterConfig, spec: BenchSpec, nodes: int, data_dir: str | None) -> ClusterConfig:
    sub = str(Path(data_dir) / f"nodes-{nodes}") if data_dir else ""
    return base.replace(node_count=nodes, replication=min(base.replication, nodes),
                        stripe_unit=spec.stripe_unit, data_dir=sub)


def ensure_data(handle: ClusterHandle, spec: BenchSpec) -> bool:
    """Write the benchmark dataset unless the (persisted) cluster already has it."""
    if all(handle.mds.exists(p + ".index") for p in base_paths(spec)):
        return False
    write_dataset(handle.fs, spec)
    return True


def _row(experiment: str, mode: Mode, nodes: int, fraction: float, r: ScanResult,
         discovery_bytes: int, node_ids: Iterable[int]) -> dict:
    snap = r.metrics
    ids = sorted(node_ids)
    return {
        "experiment": experiment,
        "mode": mode.value,
        "node_count": nodes,
        "selectivity": f"{fraction:g}",
        "wall_time": f"{r.wall_time:.9f}",
        "client_wire_bytes": r.client_wire_bytes(),
        "client_header_bytes": int(snap.client(m.keyed(m.HEADER_BYTES_IN, "@scan"))),
        "discovery_wire_bytes": discovery_bytes,
        "node_disk_bytes": ";".join(str(int(snap.node(i, m.DISK_BYTES_READ))) for i in ids),
        "client_work_units": int(snap.client(m.WORK_UNITS)),
        "node_work_units": ";".join(str(int(snap.node(i, m.WORK_UNITS))) for i in ids),
        "objects_scanned": r.objects_scanned,
        "objects_pruned": r.objects_pruned,
        "rows_scanned": r.rows_scanned,
        "rows_returned": r.table.row_count,
        "retries": r.retries,
        "result_hash": table_digest(r.table),
    }


def _discover(handle: ClusterHandle, spec: BenchSpec, mode: Mode, io_depth: int) -> tuple[Dataset, int]:
    before = handle.snapshot_metrics()
    ds = handle.datasets.discover(spec.root, mode, io_depth)
    delta = handle.snapshot_metrics().delta(before)
    return ds, int(delta.client(m.keyed(m.WIRE_BYTES_IN, f"@{DISCOVERY}")))


# -- experiments ---------------------------------------------------------------------------


def run_sweep(spec: BenchSpec, base: ClusterConfig, data_dir: str | None = None,
              log: TextIO | None = None, rows: list[dict] | None = None) -> tuple[list[dict], list[Check]]:
    """Rows are appended to ``rows`` as they complete, so a caller keeps them on failure."""
    rows = [] if rows is None else rows
    checks: list[Check] = []
    for nodes in spec.node_counts:
        cfg = cluster_config(base, spec, nodes, data_dir)
        with start_cluster(cfg) as handle:
            ensure_data(handle, spec)
            hashes: dict[tuple[str, float], str] = {}
            for mode in (Mode.OFFLOAD, Mode.LOCAL):
                ds, disc = _discover(handle, spec, mode, cfg.io_depth)
                for fraction in spec.selectivities:
                    opts = ScanOptions(selectivity_filter(ds, fraction), mode=mode, io_depth=cfg.io_depth)
                    r = handle.datasets.scan(ds, opts)
                    row = _row("sweep", mode, nodes, fraction, r, disc, handle.nodes)
                    rows.append(row)
                    hashes[(mode.value, fraction)] = row["result_hash"]
                    if log:
                        print(f"nodes={nodes} mode={mode.value} sel={fraction:g} "
                              f"wire={row['client_wire_bytes']} t={row['wall_time']}", file=log)
            for fraction in spec.selectivities:
                same = hashes[("offload", fraction)] == hashes[("local", fraction)]
                checks.append(Check(f"equivalence nodes={nodes} sel={fraction:g}", same))
    return rows, checks


def rolling_script(nodes: Sequence[int], makespan: float, retry: RetryPolicy = RetryPolicy()) -> FaultScript:
    """Crash and restart every node in turn, starting a fifth of the way into a run of ``makespan``.

    One node down at a time is not enough on its own: rotating retries can
    follow the outages from replica to replica. The stagger therefore either
    spaces outages so that no retry sequence reaches a third one, or packs all
    of them into less than the retry span so the last attempt always lands
    after the final restart.
    """
    n = len(nodes)
    span = retry.span()
    period = 0.6 * makespan / n
    # outages k and k+2 are 1.5 periods apart; keep a margin over the span
    if period <= span:
        period = min(period, 0.8 * span / (n - 0.5))
    return FaultScript.rolling(nodes, start=0.2 * makespan, period=period, downtime=0.5 * period)


def kill_pg_script(handle: ClusterHandle, ds: Dataset) -> FaultScript:
    """Take down every replica of the first part object's placement group, for good."""
    plan = handle.datasets.plan(ds)
    return FaultScript.crash_all(plan.objects[0].nodes, at=0.0)


def run_crash(spec: BenchSpec, base: ClusterConfig, script: str = "rolling", data_dir: str | None = None,
              log: TextIO | None = None, rows: list[dict] | None = None) -> tuple[list[dict], list[Check]]:
    rows = [] if rows is None else rows
    nodes = base.node_count
    cfg = cluster_config(base, spec, nodes, data_dir)
    with start_cluster(cfg) as handle:
        ensure_data(handle, spec)
        ds, disc = _discover(handle, spec, Mode.OFFLOAD, cfg.io_depth)
        opts = ScanOptions(mode=Mode.OFFLOAD, io_depth=cfg.io_depth)
        baseline = handle.datasets.scan(ds, opts)
        rows.append(_row("crash-baseline", Mode.OFFLOAD, nodes, 1.0, baseline, disc, handle.nodes))
        if script == "rolling":
            faults = rolling_script(sorted(handle.nodes), baseline.wall_time)
        elif script == "none":
            faults = FaultScript()
        elif script == "kill-pg":
            faults = kill_pg_script(handle, ds)
        else:
            faults = FaultScript.parse(Path(script).read_text())
        handle.inject(faults)
        try:
            r = handle.datasets.scan(ds, opts)
        except QueryFailedError as err:
            handle.clear_faults()
            failed = ", ".join(sorted(err.failures)[:3])
            detail = f"QUERY_FAILED ({len(err.failures)} objects: {failed})"
            return rows, [Check(f"crash script={script}", False, detail, incomplete=True)]
        handle.clear_faults()
        rows.append(_row("crash", Mode.OFFLOAD, nodes, 1.0, r, disc, handle.nodes))
        if log:
            print(f"faults fired: {handle.fault_log}", file=log)
        same = table_digest(r.table) == table_digest(baseline.table)
        worst = r.max_retries_per_object()
        checks = [
            Check(f"crash script={script} result hash", same),
            Check(f"crash script={script} retries per object <= {RETRY_BUDGET}", worst <= RETRY_BUDGET,
                  f"max {worst}, total {r.retries}"),
        ]
    return rows, checks


# -- CSV & report --------------------------------------------------------------------------


def write_csv(rows: Iterable[dict], out: TextIO, incomplete: str | None = None) -> None:
    w = csv.DictWriter(out, fieldnames=CSV_HEADER, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    if incomplete:
        out.write(f"# INCOMPLETE: {incomplete}\n")


def csv_text(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()


def read_csv(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        return []
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) != CSV_HEADER:
        raise ValueError(f"unexpected CSV header: {reader.fieldnames}")
    rows = list(reader)
    for i, r in enumerate(rows, 2):
        if None in r or any(v is None for v in r.values()):
            raise ValueError(f"row {i} has the wrong number of fields")
        try:
            int(r["node_count"]), float(r["selectivity"]), int(r["client_wire_bytes"])
        except ValueError:
            raise ValueError(f"row {i} has a non-numeric field") from None
    return rows


def _sum_list(cell: str) -> int:
    return sum(int(x) for x in cell.split(";") if x)


def report(rows: list[dict], out: TextIO) -> None:
    cols = ("mode", "sel", "wall_time", "wire_bytes", "reduction", "client_work", "node_work", "scanned", "pruned")
    widths = (8, 6, 12, 14, 10, 12, 12, 8, 7)

    def emit(values) -> None:
        out.write("  ".join(str(v).rjust(w) for v, w in zip(values, widths)).rstrip() + "\n")

    if not rows:
        emit(cols)
        return
    by_nodes: dict[tuple[str, int], list[dict]] = {}
    for r in rows:
        by_nodes.setdefault((r["experiment"], int(r["node_count"])), []).append(r)
    for (exp, nodes), group in by_nodes.items():
        out.write(f"== {exp}, {nodes} node{'s' if nodes != 1 else ''} ==\n")
        emit(cols)
        local = {r["selectivity"]: int(r["client_wire_bytes"]) for r in group if r["mode"] == "local"}
        for r in group:
            wire = int(r["client_wire_bytes"])
            ref = local.get(r["selectivity"])
            factor = f"{ref / wire:.2f}x" if r["mode"] == "offload" and ref is not None and wire else "-"
            emit((r["mode"], r["selectivity"], r["wall_time"], wire, factor, r["client_work_units"],
                  _sum_list(r["node_work_units"]), r["objects_scanned"], r["objects_pruned"]))
        out.write("\n")


# -- argument handling ---------------------------------------------------------------------


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _add_common(sp: argparse.ArgumentParser) -> None:
    d = BenchSpec()
    sp.add_argument("--config", help="cluster config file (key = value)")
    sp.add_argument("--data-dir", help="persist node stores and the MDS journal here")
    sp.add_argument("--transport", choices=("sim", "tcp"))
    sp.add_argument("--rows", type=int, default=d.rows)
    sp.add_argument("--rows-per-group", type=int, default=d.rows_per_group)
    sp.add_argument("--replicate-factor", type=int, default=d.replicate_factor)
    sp.add_argument("--stripe-unit", type=int, default=d.stripe_unit)
    sp.add_argument("--selectivities", type=_floats, default=d.selectivities, help="comma-separated fractions")
    sp.add_argument("--node-counts", type=_ints, default=d.node_counts, help="comma-separated node counts")
    sp.add_argument("--seed", type=int, help="overrides the config seed; SKYSHIM_SEED overrides both")
    sp.add_argument("--codec", type=int, help="result codec used by scan_op (0 none, 1 zlib)")
    sp.add_argument("--out", help="CSV output path (default stdout)")
    sp.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="skyshim-bench", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("gen-data", "run-sweep", "run-crash"):
        _add_common(sub.add_parser(name))
    sub.choices["run-crash"].add_argument(
        "--script", default="rolling", help="rolling, none, kill-pg, or a fault script file")
    sub.choices["run-crash"].add_argument("--nodes", type=int, help="cluster size (default: config node_count)")
    rp = sub.add_parser("report")
    rp.add_argument("csv", help="CSV written by run-sweep or run-crash ('-' for stdin)")
    return ap


def resolve(args: argparse.Namespace) -> tuple[BenchSpec, ClusterConfig]:
    cfg = ClusterConfig.from_file(args.config) if args.config else ClusterConfig()
    overrides = {}
    if args.transport:
        overrides["transport"] = args.transport
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.codec is not None:
        overrides["codec"] = args.codec
    if getattr(args, "nodes", None):
        overrides["node_count"] = args.nodes
        overrides["replication"] = min(cfg.replication, args.nodes)
    cfg = cfg.replace(**overrides).with_env()
    spec = BenchSpec(rows=args.rows, rows_per_group=args.rows_per_group, replicate_factor=args.replicate_factor,
                     stripe_unit=args.stripe_unit, node_counts=args.node_counts,
                     selectivities=args.selectivities, seed=cfg.seed)
    return spec, cfg


def _emit(rows: list[dict], path: str | None, incomplete: str | None = None) -> None:
    if path:
        with open(path, "w", newline="") as f:
            write_csv(rows, f, incomplete)
    else:
        write_csv(rows, sys.stdout, incomplete)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report":
        try:
            text = sys.stdin.read() if args.csv == "-" else Path(args.csv).read_text()
            report(read_csv(text), sys.stdout)
        except (OSError, ValueError) as err:
            print(f"error: {err}", file=sys.stderr)
            return 2
        return 0
    try:
        spec, cfg = resolve(args)
        if args.command == "run-crash" and args.script not in BUILTIN_SCRIPTS:
            FaultScript.parse(Path(args.script).read_text()).validate(range(cfg.node_count))
    except (SkyshimError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    log = sys.stderr if args.verbose else None
    if args.command == "gen-data":
        for nodes in spec.node_counts:
            with start_cluster(cluster_config(cfg, spec, nodes, args.data_dir)) as handle:
                wrote = ensure_data(handle, spec)
                n_obj = sum(len(handle.nodes[i].objects()) for i in handle.nodes)
                print(f"nodes={nodes}: {'wrote' if wrote else 'kept'} {spec.replicate_factor} logical files, "
                      f"{n_obj} stored objects (incl. replicas)")
        if not args.data_dir:
            print("note: without --data-dir the data lives only for this process", file=sys.stderr)
        return 0
    runner = run_sweep if args.command == "run-sweep" else run_crash
    kwargs = {"script": args.script} if args.command == "run-crash" else {}
    rows: list[dict] = []
    try:
        _, checks = runner(spec, cfg, data_dir=args.data_dir, log=log, rows=rows, **kwargs)
    except (QueryFailedError, SkyshimError) as err:
        print(f"error: {err}", file=sys.stderr)
        _emit(rows, args.out, incomplete=str(err).replace("\n", " "))
        return 1
    _emit(rows, args.out, "; ".join(f"{c.name}: {c.detail}" for c in checks if c.incomplete) or None)
    for c in checks:
        print(c.line(), file=sys.stderr)
    return 0 if all(c.ok for c in checks) else 1


if __name__ == "__main__":
    sys.exit(main())
