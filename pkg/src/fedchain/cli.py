"""Command-line entry point: ``fedchain <subcommand> [options]``.

Configuration files are flat ``key = value`` text. Keys may be dotted
(``round.client_count = 8``) or grouped under ``[section]`` headers, which
prefix every key below them. ``#`` starts a comment. Transfer scenarios read
``source.*`` and ``target.*`` keys first and fall back to the unprefixed key.

Recognised keys (defaults in brackets)::

    seed [0]                     deterministic [false]
    round.client_count [8]       round.quorum [client_count]
    round.local_iterations [2]   round.batch_size [32]
    round.global_rounds [20]     round.lr [0.001]
    round.cosigners [5]          model.layer_widths [8,128,128,4]
    data.n [2000]  data.d [8]  data.classes [4]  data.rot [0]  data.shift [0]
    data.validation_n [500]      data.test_fraction [0.1]
    transfer.version [latest]    transfer.seeds [0,1,2,3,4]
    target.augmented_widths [8,128,128,64,4]
    bench.param_counts [171682,814122,3239114,11192019]
    bench.runs [5]  bench.cosigners [5]  bench.validation_n [200]

The output directory is ``--out``, else ``$FEDCHAIN_OUT``, else ``./out``.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, cosi
from .fl import (CSV_COLUMNS, DataConfig, Network, RoundConfig, write_reports_csv)
from .iin import IdentityRegistry
from .ledger import Latest, Ledger, LedgerError, Version
from .nn import Hyperparameters, ModelSpec

CSV_SCHEMAS = """CSV outputs:
  run-fl          rounds.csv: {rounds}
                  (round_ms is dropped with --no-timing)
  bench-overhead  overhead.csv: model,param_count,layer_widths,asset_bytes,n_fragments,
                  entry_ms,retrieval_ms,cosi_ms,verify_ms,runs
  transfer        transfer.csv: outcome,stage,detail,committed_version,receiver_height,
                  signature_ms,reproducibility_ms,computed_acc,reported_acc
  transfer-learn  transfer_learn.csv: target,mode,seed,final_acc,final_loss,copied_layers
  keygen          keys.csv: owner_id,seed,pubkey_hex,pop_hex
""".format(rounds=",".join(CSV_COLUMNS))


class ConfigError(Exception):
    pass


def load_config(path) -> dict[str, str]:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    text = Path(path).read_text() if path else ""
    try:
        parser.read_string("[__root__]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    out = {}
    for section in parser.sections():
        prefix = "" if section == "__root__" else section + "."
        for key, value in parser.items(section):
            out[prefix + key] = value.strip()
    return out


class Settings:
    """Typed lookups over a flat config with a fallback prefix."""

    def __init__(self, raw: dict[str, str], prefix: str = ""):
        self.raw = raw
        self.prefix = prefix

    def scoped(self, prefix: str) -> Settings:
        return Settings(self.raw, prefix)

    def get(self, key, default=None, cast=str):
        for k in ([self.prefix + key] if self.prefix else []) + [key]:
            if k in self.raw:
                try:
                    return cast(self.raw[k])
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"bad value for {k}: {self.raw[k]!r} ({exc})") from exc
        return default


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(" ", "").split(",") if x)


def round_config(s: Settings, seed: int, deterministic: bool) -> RoundConfig:
    try:
        widths = s.get("model.layer_widths", (8, 128, 128, 4), _ints)
        spec = ModelSpec(widths)
        data = DataConfig(
            seed=seed, n=s.get("data.n", 2000, int), d=s.get("data.d", spec.input_dim, int),
            classes=s.get("data.classes", spec.num_classes, int), rot=s.get("data.rot", 0.0, float),
            shift=s.get("data.shift", 0.0, float), validation_n=s.get("data.validation_n", 500, int),
            test_fraction=s.get("data.test_fraction", 0.1, float))
        if data.d != spec.input_dim or data.classes != spec.num_classes:
            raise ConfigError(f"model {widths} does not fit data with d={data.d}, classes={data.classes}")
        return RoundConfig(
            client_count=s.get("round.client_count", 8, int), quorum=s.get("round.quorum", None, int),
            local_iterations=s.get("round.local_iterations", 2, int),
            batch_size=s.get("round.batch_size", 32, int), hp=Hyperparameters(learning_rate=s.get("round.lr", 0.001, float)),
            global_rounds=s.get("round.global_rounds", 20, int), spec=spec, data=data, seed=seed,
            cosigners=s.get("round.cosigners", 5, int), deterministic=deterministic)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _settings(args) -> tuple[Settings, int, bool]:
    s = Settings(load_config(args.config))
    seed = args.seed if args.seed is not None else s.get("seed", 0, int)
    deterministic = args.deterministic or s.get("deterministic", False, _bool)
    return s, seed, deterministic


def _outdir(args) -> Path:
    out = Path(args.out or os.environ.get("FEDCHAIN_OUT") or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands -----------------------------------------------------------

def cmd_run_fl(args) -> int:
    s, seed, det = _settings(args)
    cfg = round_config(s, seed, det)
    out = _outdir(args)
    log_path = out / "ledger.log"
    log_path.unlink(missing_ok=True)
    net = Network(1, cfg, IdentityRegistry(), ledger=Ledger(1, log_path=log_path))
    for r in net.run():
        print(f"round {r.round:3d} v{r.version:<3d} pre_test={r.pre_test.accuracy:.4f} "
              f"post_test={r.post_test.accuracy:.4f} pre_val={r.pre_val.accuracy:.4f} "
              f"post_val={r.post_val.accuracy:.4f}")
    net.ledger.close()
    write_reports_csv(net.reports, out / "rounds.csv", include_timing=not args.no_timing)
    net.latest_global().weights.values.astype("<f4").tofile(out / "global_weights.f32")
    if args.plot:
        _plot_rounds(net.reports, out / "rounds.png")
    print(f"wrote {out / 'rounds.csv'}, {out / 'global_weights.f32'}, {log_path}")
    return 0


def _plot_rounds(reports, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    versions = [r.version for r in reports]
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in ("pre_test", "pre_val", "post_test", "post_val"):
        ax.plot(versions, [getattr(r, name).accuracy for r in reports], label=name)
    ax.set_xlabel("global version")
    ax.set_ylabel("accuracy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_bench_overhead(args) -> int:
    from .bench import REFERENCE_PARAM_COUNTS, bench_overhead, linear_r2, write_overhead_csv
    s, seed, _ = _settings(args)
    counts = s.get("bench.param_counts", REFERENCE_PARAM_COUNTS, _ints)
    rows = bench_overhead(counts, runs=s.get("bench.runs", 5, int), cosigners=s.get("bench.cosigners", 5, int),
                          validation_n=s.get("bench.validation_n", 200, int), seed=seed)
    out = _outdir(args)
    write_overhead_csv(rows, out / "overhead.csv")
    for r in rows:
        print(f"{r.param_count:>10d} params {r.asset_bytes:>10d} B {r.n_fragments:>4d} frags  "
              f"entry {r.entry_ms:9.2f} ms  retrieval {r.retrieval_ms:9.2f} ms  "
              f"cosi {r.cosi_ms:9.2f} ms  verify {r.verify_ms:9.2f} ms")
    if len(rows) >= 3:
        size = [r.asset_bytes for r in rows]
        print(f"linear fit R^2 vs bytes: entry {linear_r2(size, [r.entry_ms for r in rows]):.4f}, "
              f"retrieval {linear_r2(size, [r.retrieval_ms for r in rows]):.4f}")
    print(f"wrote {out / 'overhead.csv'}")
    return 0


def _transfer_networks(s: Settings, seed: int, det: bool):
    src_cfg = round_config(s.scoped("source."), seed, det)
    dst_cfg = round_config(s.scoped("target."), seed, det)
    iin = IdentityRegistry()
    source = Network(1, src_cfg, iin)
    source.run()
    target = Network(2, dst_cfg, iin, with_clients=True)
    return source, target


TRANSFER_COLUMNS = ["outcome", "stage", "detail", "committed_version", "receiver_height",
                    "signature_ms", "reproducibility_ms", "computed_acc", "reported_acc"]


def cmd_transfer(args) -> int:
    from . import adversary
    from .relay import TransferRejected, transfer
    s, seed, det = _settings(args)
    source, target = _transfer_networks(s, seed, det)
    version = s.get("transfer.version", "latest")
    selector = Latest() if version == "latest" else Version(int(version))

    def tamper(resp):
        if args.tamper == "payload":
            resp = adversary.flip_weight(resp)
        elif args.tamper == "metrics":
            resp = adversary.inflate_metrics(resp, 0.05)
        if args.collude_majority:
            resp = adversary.collude_resign(resp, source)
        return resp

    client = target.clients[0].client_id if target.clients else 0
    height0 = target.ledger.height
    out = _outdir(args)
    try:
        asset, stats = transfer(target.relay, source.relay, client, selector, tamper=tamper)
        report, outcome, code = stats.report, "committed", 0
        print(f"accepted: {asset.kind.name} v{asset.version} from network {asset.network_id}, "
              f"{report.signature.detail}; {report.reproducibility.detail}")
    except TransferRejected as exc:
        report, outcome, code = exc.report, "rejected", 1
        print(f"rejected at {exc}", file=sys.stderr)
        if target.ledger.height != height0:
            raise RuntimeError("receiving ledger changed after a rejected transfer")
    stage = report.failure or "ok"
    last = report.reproducibility if report.signature.ok and report.reproducibility else report.signature
    detail = last.detail
    with open(out / "transfer.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRANSFER_COLUMNS)
        w.writerow([outcome, stage, detail, target.ledger.latest_version(source.network_id) if code == 0 else "",
                    target.ledger.height, f"{report.signature_ms:.3f}", f"{report.reproducibility_ms:.3f}",
                    repr(report.computed.accuracy) if report.computed else "",
                    repr(report.reported.accuracy) if report.reported else ""])
    return code


def cmd_transfer_learn(args) -> int:
    from .bench import TRANSFER_COLUMNS as TL_COLUMNS
    from .bench import run_transfer_learning, transfer_learning_configs, write_rows_csv
    s, seed, det = _settings(args)
    if args.config:
        src = round_config(s.scoped("source."), seed, det)
        same = round_config(s.scoped("target."), seed, det)
        aug_widths = s.get("target.augmented_widths", same.spec.layer_widths[:-1] + (64, same.spec.num_classes), _ints)
        aug = replace(same, spec=ModelSpec(aug_widths))
    else:
        src, same, aug = transfer_learning_configs(seed)
    seeds = s.get("transfer.seeds", tuple(range(seed, seed + 5)), _ints)
    rows = run_transfer_learning(src, {"same": same, "augmented": aug}, seeds)
    out = _outdir(args)
    write_rows_csv(rows, TL_COLUMNS, out / "transfer_learn.csv")
    for target in ("same", "augmented"):
        for mode in ("transferred", "scratch"):
            accs = [r["final_acc"] for r in rows if r["target"] == target and r["mode"] == mode]
            print(f"{target:>9s} {mode:>11s}: mean final accuracy {np.mean(accs):.4f} over {len(accs)} seeds")
    print(f"wrote {out / 'transfer_learn.csv'}")
    return 0


def cmd_keygen(args) -> int:
    s, seed, _ = _settings(args)
    out = _outdir(args)
    rows = []
    for i in range(args.count):
        keys = cosi.keygen(seed + i, i)
        rows.append([i, seed + i, keys.public.hex(), cosi.prove_possession(keys.secret).hex()])
        print(f"owner {i} seed {seed + i} pubkey {keys.public.hex()}")
    with open(out / "keys.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["owner_id", "seed", "pubkey_hex", "pop_hex"])
        w.writerows(rows)
    return 0


def cmd_audit(args) -> int:
    try:
        ledger = Ledger.replay(args.ledger, args.network)
    except (LedgerError, OSError, ValueError) as exc:
        print(f"cannot replay {args.ledger}: {exc}", file=sys.stderr)
        return 2
    result = ledger.audit()
    print(f"{len(result.blocks)} blocks, latest global version {ledger.latest_global_version}")
    if result.ok:
        print("chain ok")
        return 0
    print(f"chain broken at height {result.broken_at}", file=sys.stderr)
    return 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key = value config file")
    common.add_argument("--out", metavar="DIR", help="output directory (else $FEDCHAIN_OUT, else ./out)")
    common.add_argument("--deterministic", action="store_true", help="single-threaded, bitwise-reproducible mode")
    common.add_argument("--seed", type=int, metavar="N", help="master seed (overrides the config)")

    p = argparse.ArgumentParser(prog="fedchain", description=__doc__.split("\n")[0],
                                epilog=CSV_SCHEMAS, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    fl = sub.add_parser("run-fl", parents=[common], help="federated training on one network",
                        epilog=CSV_SCHEMAS, formatter_class=argparse.RawDescriptionHelpFormatter)
    fl.add_argument("--no-timing", action="store_true", help="omit the round_ms column")
    fl.add_argument("--plot", action="store_true", help="also write rounds.png")
    fl.set_defaults(func=cmd_run_fl)

    b = sub.add_parser("bench-overhead", parents=[common], help="asset entry and transfer overhead by model size",
                       epilog=CSV_SCHEMAS, formatter_class=argparse.RawDescriptionHelpFormatter)
    b.set_defaults(func=cmd_bench_overhead)

    t = sub.add_parser("transfer", parents=[common], help="one cross-network transfer, optionally adversarial",
                       epilog=CSV_SCHEMAS, formatter_class=argparse.RawDescriptionHelpFormatter)
    t.add_argument("--tamper", choices=("payload", "metrics", "none"), default="none",
                   help="modify the response in flight")
    t.add_argument("--collude-majority", action="store_true",
                   help="a bare majority of source cosigners re-sign the tampered asset")
    t.set_defaults(func=cmd_transfer)

    tl = sub.add_parser("transfer-learn", parents=[common], help="transferred vs scratch training on a shifted task",
                        epilog=CSV_SCHEMAS, formatter_class=argparse.RawDescriptionHelpFormatter)
    tl.set_defaults(func=cmd_transfer_learn)

    k = sub.add_parser("keygen", parents=[common], help="deterministic BLS key pairs")
    k.add_argument("--count", type=int, default=1)
    k.set_defaults(func=cmd_keygen)

    a = sub.add_parser("audit", parents=[common], help="replay a ledger log and check its hash chain")
    a.add_argument("--ledger", required=True, metavar="PATH", help="ledger.log written by run-fl")
    a.add_argument("--network", type=int, default=1)
    a.set_defaults(func=cmd_audit)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
