"""Command-line entry point: ``ccl-pad {synth,pairs,train,eval,ablate,rppg}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error
(diverged training, unsatisfiable pattern set, ...).  Every artifact is
written under ``--out``; wall-clock timings go to ``timing.txt`` only.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .catalog import Catalog, build_protocol_split, load_catalog, save_catalog, synth_catalog
from .evaluation import EvalReport, aggregate, evaluate_split, score_split, write_scores_csv
from .model import load_checkpoint, save_checkpoint
from .pairs import BatchBuilder, UnsatisfiablePatternError, dump_pairs
from .rppg import LightSchedule, extract_rppg, periodicity_score, psd, synth_trace
from .trainer import TrainingDivergedError, train

log = logging.getLogger("ccl_pad")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser, seed_help: str = "training seed") -> None:
    p.add_argument("--config", help="sectioned key=value config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help=seed_help)
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="config override")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ccl-pad", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="generate a synthetic catalog")
    _common(p, "catalog seed")
    p.add_argument("--subjects", type=int)

    p = sub.add_parser("pairs", help="dump sampled pairs for audit")
    _common(p)
    p.add_argument("--count", type=int, default=256)

    p = sub.add_parser("train", help="train on a protocol's training split")
    _common(p)
    p.add_argument("--cgd-audit", action="store_true", help="write per-step CGD selections")

    p = sub.add_parser("eval", help="evaluate checkpoint(s) on a protocol")
    _common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint path; for P2 three comma-separated paths")

    p = sub.add_parser("ablate", help="train and evaluate over a sweep")
    _common(p)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--sweep", help="section.key or train key with values, e.g. lambda_con=0,0.1,...,1.0")
    group.add_argument("--cgd-variant", help="comma-separated CGD variants")

    p = sub.add_parser("rppg", help="simulate an ROI trace and its spectrum")
    _common(p, "trace seed")
    return parser


# --------------------------------------------------------------------------


def expand_values(text: str) -> list[str]:
    """Split a comma list; ``a,b,...,c`` expands the arithmetic progression."""
    items = [x.strip() for x in text.split(",") if x.strip()]
    if "..." not in items:
        return items
    k = items.index("...")
    if k < 2 or k != len(items) - 2:
        raise UsageError(f"cannot expand {text!r}: need a,b,...,c")
    a, b, c = (Fraction(items[k - 2]), Fraction(items[k - 1]), Fraction(items[k + 1]))
    step = b - a
    if step <= 0 or c < b:
        raise UsageError(f"cannot expand {text!r}")
    decimal = any("." in x for x in (items[k - 2], items[k - 1], items[k + 1]))
    out = items[: k - 2]
    v = a
    while v <= c:
        out.append(str(float(v)) if decimal else str(v))
        v += step
    return out


def _prepare(args, seed_key: str | None = "train.seed"):
    overrides = list(args.set)
    if args.seed is not None and seed_key:
        overrides.append(f"{seed_key}={args.seed}")
    cp = cfgmod.load(args.config, overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return cp, out


def _echo(cp, out: Path) -> None:
    (out / "config.resolved.ini").write_text(cfgmod.dumps(cp))


def _catalog(cp) -> Catalog:
    path = cp["catalog"].get("path", "").strip()
    if path:
        return load_catalog(path)
    return synth_catalog(cfgmod.synth_config(cp), int(cp["catalog"]["seed"]))


def _split(cp, catalog):
    return build_protocol_split(cp["protocol"]["id"], catalog, int(cp["protocol"]["split_seed"]))


def cmd_synth(args) -> None:
    cp, out = _prepare(args, "catalog.seed")
    if args.subjects is not None:
        cfgmod.set_value(cp, f"catalog.subjects={args.subjects}")
    _echo(cp, out)
    save_catalog(synth_catalog(cfgmod.synth_config(cp), int(cp["catalog"]["seed"])), out / "catalog")


def cmd_pairs(args) -> None:
    cp, out = _prepare(args)
    _echo(cp, out)
    catalog = _catalog(cp)
    tcfg = cfgmod.train_config(cp, catalog.dim)
    part = _split(cp, catalog).apply(catalog, "train")
    builder = BatchBuilder(part, tcfg.patterns, tcfg.pattern_weights, tcfg.balance_pairs)
    batch = builder.sample(args.count, np.random.default_rng(tcfg.seed))
    (out / "pairs.csv").write_text("\n".join(dump_pairs(part, batch)) + "\n")


def _train_one(cp, catalog, out: Path, audit: bool = False):
    tcfg = cfgmod.train_config(cp, catalog.dim)
    state, tlog = train(catalog, _split(cp, catalog), tcfg)
    save_checkpoint(state, out / "checkpoint.bin")
    tlog.write_csv(out / "train_log.csv")
    if audit:
        tlog.write_cgd_audit(out / "cgd_audit.csv")
    return state


def cmd_train(args) -> None:
    cp, out = _prepare(args)
    _echo(cp, out)
    _train_one(cp, _catalog(cp), out, args.cgd_audit)


def _evaluate(cp, catalog, nets, out: Path) -> EvalReport:
    protocol = cp["protocol"]["id"]
    rule = cp["protocol"]["threshold_rule"]
    seed = int(cp["protocol"]["split_seed"])
    if protocol == "P2":
        subs = {}
        for pid, net in zip(("P2_1", "P2_2", "P2_3"), nets):
            split = build_protocol_split(pid, catalog, seed)
            subs[pid] = evaluate_split(net, split.apply(catalog, "dev"), split.apply(catalog, "test"), pid, rule)
            write_scores_csv(score_split(net, split.apply(catalog, "test")), out / f"scores_{pid}.csv")
        report = aggregate("P2", subs)
    else:
        split = build_protocol_split(protocol, catalog, seed)
        test = split.apply(catalog, "test")
        report = evaluate_split(nets[0], split.apply(catalog, "dev"), test, protocol, rule)
        write_scores_csv(score_split(nets[0], test), out / "scores.csv")
    report.write(out / "report.txt")
    return report


def cmd_eval(args) -> None:
    cp, out = _prepare(args)
    _echo(cp, out)
    paths = [p for p in args.checkpoint.split(",") if p]
    expected = 3 if cp["protocol"]["id"] == "P2" else 1
    if len(paths) != expected:
        raise UsageError(f"protocol {cp['protocol']['id']} needs {expected} checkpoint(s), got {len(paths)}")
    nets = [load_checkpoint(p).net for p in paths]
    _evaluate(cp, _catalog(cp), nets, out)


def cmd_ablate(args) -> None:
    cp, out = _prepare(args)
    if args.sweep:
        if "=" not in args.sweep:
            raise UsageError("--sweep needs key=v1,v2,...")
        key, values = args.sweep.split("=", 1)
        key = key if "." in key else f"train.{key}"
    else:
        key, values = "train.cgd_variant", args.cgd_variant
    values = expand_values(values)
    _echo(cp, out)
    catalog = _catalog(cp)
    summary = [f"{key},apcer,bpcer,acer,auc"]
    for value in values:
        run_cp = cfgmod.load(None)
        run_cp.read_string(cfgmod.dumps(cp))
        cfgmod.set_value(run_cp, f"{key}={value}")
        run_dir = out / f"{key.split('.')[-1]}={value}"
        run_dir.mkdir(exist_ok=True)
        _echo(run_cp, run_dir)
        if run_cp["protocol"]["id"] == "P2":
            nets = []
            for pid in ("P2_1", "P2_2", "P2_3"):
                cfgmod.set_value(run_cp, f"protocol.id={pid}")
                (run_dir / pid).mkdir(exist_ok=True)
                nets.append(_train_one(run_cp, catalog, run_dir / pid).net)
            cfgmod.set_value(run_cp, "protocol.id=P2")
        else:
            nets = [_train_one(run_cp, catalog, run_dir).net]
        r = _evaluate(run_cp, catalog, nets, run_dir)
        summary.append(f"{value},{r.apcer!r},{r.bpcer!r},{r.acer!r},{r.auc!r}")
    (out / "summary.csv").write_text("\n".join(summary) + "\n")


def cmd_rppg(args) -> None:
    cp, out = _prepare(args, "rppg.seed")
    _echo(cp, out)
    s = cp["rppg"]
    try:
        periodic = s["mode"] == "periodic"
        schedule = LightSchedule(
            s["mode"],
            float(s["frequency"]) if periodic else 0.0,
            float(s["amplitude"]) if periodic else 0.0,
            float(s["base_lux"]),
        )
        is_live = cfgmod._convert(s["is_live"], True, "is_live")
        trace = synth_trace(
            is_live,
            float(s["pulse_rate"]),
            schedule,
            duration=float(s["duration"]),
            frame_rate=float(s["frame_rate"]),
            noise=float(s["noise"]),
            rng=np.random.default_rng(int(s["seed"])),
        )
    except ValueError as exc:
        raise cfgmod.ConfigError(str(exc)) from None
    signal = extract_rppg(trace)
    freqs, power = psd(signal, trace.frame_rate)
    peak, score = periodicity_score(freqs, power)
    rows = ["t,r,g,b,rppg"]
    for i in range(signal.size):
        r, g, b = trace.rgb[:, i]
        rows.append(f"{i / trace.frame_rate!r},{r!r},{g!r},{b!r},{signal[i]!r}")
    (out / "trace.csv").write_text("\n".join(rows) + "\n")
    spec_rows = ["frequency,power"] + [f"{f!r},{p!r}" for f, p in zip(freqs, power)]
    (out / "spectrum.csv").write_text("\n".join(spec_rows) + "\n")
    (out / "summary.txt").write_text(f"peak_frequency={peak!r}\nperiodicity_score={score!r}\n")


COMMANDS = {
    "synth": cmd_synth,
    "pairs": cmd_pairs,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "rppg": cmd_rppg,
}


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        COMMANDS[args.command](args)
    except (UsageError, cfgmod.ConfigError) as exc:
        print(f"ccl-pad {args.command}: {exc}", file=sys.stderr)
        return 1
    except TrainingDivergedError as exc:
        print(f"ccl-pad {args.command}: training aborted: {exc}", file=sys.stderr)
        return 2
    except UnsatisfiablePatternError as exc:
        print(f"ccl-pad {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"ccl-pad {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    Path(args.out, "timing.txt").write_text(f"command={args.command}\nseconds={time.perf_counter() - start:.3f}\n")
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
