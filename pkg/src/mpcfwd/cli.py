"""Batch entry point: protocol/attention benchmarks, end-to-end tuning, reports.

    mpcfwd bench-protocols --seed 1 --out results/
    mpcfwd bench-attention --n 64,128,256,512 --out results/ --plot
    mpcfwd tune --config tune.json --data train.tsv --out results/
    mpcfwd report results/a/report.json results/b/report.json --out merged/

Every command writes report.csv and report.json under --out and exits 0 on
success; failures print a machine-readable JSON error record to stderr and
exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .bench import BenchmarkReport, bench_attention, bench_protocols
from .model import ModelConfig, build_model, share_model
from .runtime import NETWORK_PRESETS, Session, estimate_time
from .tuner import (
    PlainForwardDriver,
    SecureForwardDriver,
    TuneConfig,
    accuracy,
    init_projection,
    load_dataset,
    tune,
)


def _write_report(rep: BenchmarkReport, out_dir: str):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(rep.to_json())
    (out / "report.csv").write_text(rep.to_csv())
    return out


def cmd_bench_protocols(args) -> int:
    rep = bench_protocols(seed=args.seed, tensor=args.tensor)
    out = _write_report(rep, args.out)
    for row in rep.rows:
        print(f"{row['operation']:<12} size={row['size']:<8} rounds={row['online_rounds']:<4} "
              f"bytes/party={row['bytes_per_party']:<10} err={row['accuracy_vs_oracle']:.3e}")
    print(f"wrote {out / 'report.csv'}")
    return 0


def cmd_bench_attention(args) -> int:
    n_list = tuple(int(x) for x in args.n.split(","))
    rep = bench_attention(n_list=n_list, d_head=args.d_head, M=args.features, seed=args.seed)
    out = _write_report(rep, args.out)
    for row in rep.sorted_rows():
        if row["operation"].endswith("byte_exponent"):
            print(f"{row['operation']}: slope {row['accuracy_vs_oracle']:.3f}")
        else:
            print(f"{row['operation']:<20} n={row['size']:<6} rounds={row['online_rounds']:<6} "
                  f"bytes/party={row['bytes_per_party']:<12} err={row['accuracy_vs_oracle']:.3e}")
    if args.plot:
        _plot_attention(rep, out, n_list)
    print(f"wrote {out / 'report.csv'}")
    return 0


def _plot_attention(rep: BenchmarkReport, out: Path, n_list):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    for kind, marker in (("softmax", "o"), ("rfa", "s")):
        pts = [(int(r["size"]), r["bytes_per_party"]) for r in rep.rows
               if r["operation"] == f"attention/{kind}"]
        if pts:
            xs, ys = zip(*sorted(pts))
            ax.loglog(xs, ys, marker=marker, label=kind)
    ax.set_xlabel("sequence length n")
    ax.set_ylabel("online bytes per party")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out / "attention_bytes.svg")
    plt.close(fig)


def cmd_tune(args) -> int:
    tcfg = TuneConfig.from_file(args.config) if args.config else TuneConfig()
    if args.seed is not None:
        tcfg.seed = args.seed
    if args.net is not None:
        tcfg.network_preset = args.net
    labels, seqs = load_dataset(args.data)
    mcfg = ModelConfig(
        attention_kind=tcfg.attention_kind, rfa_features=tcfg.M, rfa_sigma=tcfg.sigma,
        n_classes=int(labels.max()) + 1,
    )
    weights = build_model(mcfg, seed=tcfg.seed)
    proj = init_projection(tcfg.n_p * mcfg.d_model, tcfg.d, tcfg.seed)

    if args.plain:
        driver = PlainForwardDriver(weights, seqs)
        session = None
    else:
        session = Session(seed=tcfg.seed)
        driver = SecureForwardDriver(session, share_model(session, weights), seqs)

    t0 = time.perf_counter()
    best_z, record = tune(driver, labels, tcfg, d_model=mcfg.d_model, proj=proj)
    wall = time.perf_counter() - t0
    acc = accuracy(driver, proj, best_z, labels, tcfg, mcfg.d_model)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "tune_record.csv").write_text(record.to_csv())

    rep = BenchmarkReport()
    preset = NETWORK_PRESETS[tcfg.network_preset]
    phases = ("forward", "backward", "optimizer")
    summary = {"accuracy": acc, "wall_seconds": wall,
               "optimizer_seconds": record.optimizer_seconds}
    for phase in phases:
        if session is not None:
            led = session.ledger
            rounds = led.rounds(phase)
            nbytes = max(led.entry(phase, p).bytes_sent for p in ("s0", "s1"))
            est = estimate_time(led, preset, 0.0, phase=phase)
        else:
            rounds, nbytes, est = 0, 0, 0.0
        if phase == "optimizer":
            est += record.optimizer_seconds
        rep.add(operation=f"tune/{phase}", size=str(record.generations),
                online_rounds=rounds, bytes_per_party=nbytes, offline_bytes=0,
                accuracy_vs_oracle=acc, compute_seconds=record.optimizer_seconds
                if phase == "optimizer" else 0.0,
                **{f"est_seconds_{n}": (est if n == tcfg.network_preset else 0.0)
                   for n in ("lan3g", "wan200", "wan100")},
                seed=tcfg.seed, note=f"preset={tcfg.network_preset}")
        summary[f"{phase}_bytes"] = nbytes
        summary[f"{phase}_rounds"] = rounds
        summary[f"{phase}_est_seconds"] = est
    _write_report(rep, args.out)
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))
    return 0


def cmd_report(args) -> int:
    merged = BenchmarkReport()
    for path in args.reports:
        merged = merged.merge(BenchmarkReport.from_json(Path(path).read_text()))
    merged.rows.sort(key=lambda r: (str(r.get("operation")), str(r.get("size"))))
    out = _write_report(merged, args.out)
    print(f"merged {len(args.reports)} reports, {len(merged.rows)} rows -> {out / 'report.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpcfwd", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    bp = sub.add_parser("bench-protocols", help="microbenchmark every protocol")
    bp.add_argument("--seed", type=int, default=0)
    bp.add_argument("--tensor", type=int, default=256, help="tensor benchmark size")
    bp.add_argument("--out", default="bench_out")
    bp.set_defaults(fn=cmd_bench_protocols)

    ba = sub.add_parser("bench-attention", help="byte scaling of both attentions")
    ba.add_argument("--n", default="64,128,256,512", help="comma-separated lengths")
    ba.add_argument("--d-head", type=int, default=16)
    ba.add_argument("--features", type=int, default=256)
    ba.add_argument("--seed", type=int, default=0)
    ba.add_argument("--plot", action="store_true")
    ba.add_argument("--out", default="bench_out")
    ba.set_defaults(fn=cmd_bench_attention)

    tn = sub.add_parser("tune", help="forward-only prompt tuning")
    tn.add_argument("--config", help="JSON tuning config")
    tn.add_argument("--data", required=True, help="TSV dataset: label\\tid id id ...")
    tn.add_argument("--seed", type=int, default=None)
    tn.add_argument("--net", choices=("lan3g", "wan200", "wan100"), default=None,
                    help="network preset override")
    tn.add_argument("--plain", action="store_true", help="plaintext oracle run")
    tn.add_argument("--out", default="tune_out")
    tn.set_defaults(fn=cmd_tune)

    rp = sub.add_parser("report", help="merge benchmark reports")
    rp.add_argument("reports", nargs="+")
    rp.add_argument("--out", default="report_out")
    rp.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
