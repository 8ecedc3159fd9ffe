"""Command-line interface.

Every command writes its outputs under ``--out-dir`` together with a JSON
run manifest (``<command>.manifest.json``) recording the arguments, resolved
configuration, seeds, library version, output files and wall-clock time.
``mdshaping rerun <manifest>`` replays a run from its manifest.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from ._io import atomic_write_text, parse_key_values, write_csv
from .airs import gmi_gh, gmi_mc, law_from_snr, mi_mc
from .constellation import (
    FirstOrthantSet,
    cartesian_product,
    expand_orthant,
    make_prs64,
    make_psk,
    make_qam,
    make_sp_qam,
    metrics,
    random_first_orthant,
    read_constellation,
    write_constellation,
)

THREADS_ENV = "MDSHAPING_THREADS"


class CliError(Exception):
    """User-facing error; printed without a traceback."""


# --- helpers -----------------------------------------------------------------

def _float_list(text):
    """``"1,2,3"`` or ``"start:stop:step"`` (inclusive stop) to floats."""
    text = text.strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] == 0:
            raise argparse.ArgumentTypeError(f"bad range {text!r}; use start:stop:step")
        a, b, s = parts
        n = int(np.floor((b - a) / s + 1e-9)) + 1
        if n < 1:
            raise argparse.ArgumentTypeError(f"empty range {text!r}")
        return [round(a + k * s, 12) for k in range(n)]
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None


def _int_list(text):
    return [int(round(v)) for v in _float_list(text)]


def _default_threads():
    v = os.environ.get(THREADS_ENV)
    if v is None:
        return 1
    try:
        n = int(v)
    except ValueError:
        raise CliError(f"{THREADS_ENV} must be an integer, got {v!r}") from None
    if n < 1:
        raise CliError(f"{THREADS_ENV} must be >= 1")
    return n


class _Run:
    """Output bookkeeping for one command."""

    def __init__(self, args):
        self.args = args
        self.out_dir = Path(args.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.outputs = []
        self.config = {}
        self.t0 = time.perf_counter()

    def path(self, name):
        p = self.out_dir / name
        self.outputs.append(str(p))
        return p

    def manifest(self):
        m = {
            "command": self.args.command,
            "argv": self.args.argv,
            "config": self.config,
            "seeds": {"seed": self.args.seed},
            "threads": self.args.threads,
            "version": __version__,
            "outputs": self.outputs,
            "wall_clock_s": round(time.perf_counter() - self.t0, 6),
        }
        p = self.out_dir / f"{self.args.command}.manifest.json"
        atomic_write_text(p, json.dumps(m, indent=2, sort_keys=True, default=str) + "\n")
        return p


def _print_metrics(c, out=sys.stdout):
    mt = metrics(c) if c.N % 2 == 0 else None
    print(f"{c.name or 'constellation'}: M={c.M} N={c.N} m={c.m} E={c.energy:.6g}", file=out)
    if mt is not None:
        phi2 = ", ".join(f"{v:.6g}" for v in mt.phi2)
        print(f"  PAPR={10 * np.log10(mt.papr):.4f} dB  Phi2=[{phi2}]  Phi4={mt.phi4:.6g}  "
              f"Psi={mt.psi:.6g}  dmin2={mt.dmin2:.6g}", file=out)


def _load_link(args):
    from ._io import read_key_values
    from .fibersim import link_tx_from_dict

    d = {}
    if getattr(args, "config", None):
        try:
            d.update(read_key_values(args.config))
        except OSError as exc:
            raise CliError(f"cannot read config: {exc}") from None
    for kv in getattr(args, "set", None) or []:
        d.update(parse_key_values(kv, "--set"))
    link, tx = link_tx_from_dict(d)
    if getattr(args, "steps", None):
        link = replace(link, steps_per_span=args.steps)
    if getattr(args, "symbols", None):
        tx = replace(tx, n_symbols=args.symbols)
    tx = replace(tx, seed=args.seed)
    return link, tx


def _read(path):
    try:
        return read_constellation(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from None


# --- commands ------------------------------------------------------------------

def cmd_generate(args, run):
    kind = args.kind
    power = args.power
    if args.bits is None and kind not in ("prs64", "os-expand"):
        raise CliError(f"{kind} needs --bits")
    if kind == "qam":
        c = make_qam(args.bits, power)
    elif kind == "psk":
        c = make_psk(args.bits, power)
    elif kind == "pm-product":
        base = make_psk(args.bits) if args.psk else make_qam(args.bits)
        c = cartesian_product(base, base)
    elif kind == "sp-qam":
        c = make_sp_qam(args.bits, power)
    elif kind == "prs64":
        c = make_prs64(power=power)
    elif kind == "os-expand":
        if not args.input:
            raise CliError("os-expand needs --in FILE (first-orthant points and labels)")
        s1c = _read(args.input)
        c = expand_orthant(FirstOrthantSet(s1c.points, s1c.labels), power=power)
    elif kind == "random-orthant":
        if args.dims is None:
            raise CliError("random-orthant needs --dims")
        s1 = random_first_orthant(args.bits, args.dims, args.seed)
        c = expand_orthant(s1, power=power, name=f"OS{2**args.bits}-init")
    else:  # pragma: no cover - argparse restricts choices
        raise CliError(f"unknown kind {kind}")
    name = args.name or (c.name or kind)
    out = run.path(args.out or f"{name}.txt")
    write_constellation(c, out)
    run.config.update(kind=kind, bits=args.bits, dims=args.dims, power=power, name=name)
    _print_metrics(c)
    print(f"wrote {out}")


def cmd_evaluate(args, run):
    c = _read(args.constellation)
    snrs = args.snr_db if args.snr_db is not None else args.snr_sweep
    if not snrs:
        raise CliError("give --snr-db or --snr-sweep")
    methods = ("gh", "mc") if args.method == "both" else (args.method,)
    header = ["snr_db"]
    if "gh" in methods:
        header.append("gmi_gh_bit")
    if "mc" in methods:
        header += ["gmi_mc_bit", "gmi_mc_stderr_bit"]
    if args.mi:
        header += ["mi_mc_bit", "mi_mc_stderr_bit"]
    rows = []
    for s in snrs:
        law = law_from_snr(c, s)
        row = [float(s)]
        if "gh" in methods:
            row.append(gmi_gh(c, law, J=args.J, n_jobs=args.threads).value)
        if "mc" in methods:
            e = gmi_mc(c, law, args.samples, seed=args.seed, n_jobs=args.threads)
            row += [e.value, e.std_error]
        if args.mi:
            e = mi_mc(c, law, args.samples, seed=args.seed, n_jobs=args.threads)
            row += [e.value, e.std_error]
        rows.append(row)
        print(", ".join(f"{h}={v:.6g}" for h, v in zip(header, row)))
    out = run.path(args.out or "evaluate.csv")
    write_csv(out, header, rows)
    run.config.update(constellation=args.constellation, snr_db=snrs, methods=methods,
                      J=args.J, samples=args.samples, mi=args.mi)


def cmd_optimize(args, run):
    from .optimizer import OptimizerConfig, ShapingProblem, optimize, write_trace_csv

    constraint = {"none": "none", "os": "orthant-symmetry"}[args.constraint]
    if args.init != "file" and args.bits is None:
        raise CliError(f"--init {args.init} needs --bits")
    if args.init == "file":
        if not args.init_file:
            raise CliError("--init file needs --init-file")
        init = _read(args.init_file)
    elif args.init == "qam":
        if args.dims not in (None, 2):
            raise CliError("--init qam gives a 2D constellation")
        init = make_qam(args.bits)
    elif args.init == "pm-qam":
        if args.bits % 2:
            raise CliError("--init pm-qam needs an even --bits")
        q = make_qam(args.bits // 2)
        init = cartesian_product(q, q)
    elif args.init == "sp-qam":
        init = make_sp_qam(args.bits)
    else:
        if args.dims is None:
            raise CliError("--init random-orthant needs --dims")
        init = expand_orthant(random_first_orthant(args.bits, args.dims, args.seed))
    if args.bits is not None and init.m != args.bits:
        raise CliError(f"--bits {args.bits} does not match the initial constellation (m={init.m})")
    kw = {}
    if args.objective == "nli":
        from .nli import EtaSurrogate, ase_sigma2

        if not args.surrogate:
            raise CliError("--objective nli needs --surrogate FILE")
        if not args.config:
            raise CliError("--objective nli needs --config LINKFILE")
        link, tx = _load_link(args)
        sur = EtaSurrogate.load(args.surrogate)
        kw = dict(objective="nli-gmi", sigma2_ase=ase_sigma2(link, tx), surrogate=sur,
                  link=link)
    else:
        if args.snr_db is None:
            raise CliError("--objective awgn needs --snr-db")
        kw = dict(objective="awgn-gmi", snr_db=args.snr_db)
    problem = ShapingProblem(N=init.N, m=init.m, constraint=constraint, **kw)
    cfg = OptimizerConfig(
        learning_rate=args.lr, max_iter=args.max_iter, restarts=args.restarts,
        seed=args.seed, tol=args.tol, patience=args.patience, gradient=args.gradient,
        n_jobs=args.threads,
    )
    best, trace = optimize(problem, init, cfg, name=args.name)
    out = run.path(args.out or f"{best.name}.txt")
    write_constellation(best, out)
    tpath = run.path(args.trace or f"{best.name}.trace.csv")
    write_trace_csv(trace, tpath)
    run.config.update(
        objective=problem.objective, constraint=constraint, snr_db=problem.snr_db,
        init=args.init, init_file=args.init_file, bits=init.m, dims=init.N,
        sigma2_ase=problem.sigma2_ase, surrogate=args.surrogate,
        optimizer={k: getattr(cfg, k) for k in cfg.__dataclass_fields__},
        restarts_summary=trace.restarts,
    )
    print(f"best objective {trace.best_objective[-1]:.6f} bit after {len(trace)} iterations "
          f"(restart {trace.best_restart})")
    _print_metrics(best)
    print(f"wrote {out} and {tpath}")


def cmd_simulate(args, run):
    from .fibersim import distance_sweep, power_sweep, simulate

    c = _read(args.constellation)
    link, tx = _load_link(args)
    rows = []
    if args.power_sweep:
        res = power_sweep(c, link, tx, args.power_sweep, n_jobs=args.threads)
        spans = [link.n_spans] * len(res)
    elif args.distance_sweep:
        spans = args.distance_sweep
        res = distance_sweep(c, link, tx, spans, n_jobs=args.threads)
    else:
        res = [simulate(c, link, tx)]
        spans = [link.n_spans]
    for r, k in zip(res, spans):
        rows.append([r.launch_power_dbm, k, k * link.span_length_km, r.effective_snr_db, r.gmi])
        print(f"P={r.launch_power_dbm:g} dBm spans={k}: SNR_eff={r.effective_snr_db:.4f} dB "
              f"GMI={r.gmi:.4f} bit")
    out = run.path(args.out or "simulate.csv")
    write_csv(out, ["launch_power_dbm", "n_spans", "distance_km", "effective_snr_db",
                    "gmi_bit"], rows)
    run.config.update(constellation=args.constellation, link=dict(link.items()),
                      tx=dict(tx.items()), link_fingerprint=link.fingerprint())


def cmd_quantize_sweep(args, run):
    from .fibersim import TxConfig, dac_required_snr

    tx = TxConfig(n_symbols=args.symbols, seed=args.seed)
    rows = []
    for path in args.constellations:
        c = _read(path)
        name = c.name or Path(path).stem
        try:
            base = dac_required_snr(c, args.target_gmi, None, tx, noise_seed=args.seed + 1)
        except ValueError as exc:
            raise CliError(f"{name}: {exc}") from None
        rows.append([name, "none", base, 0.0])
        for b in args.bits:
            r = dac_required_snr(c, args.target_gmi, b, tx, noise_seed=args.seed + 1)
            rows.append([name, b, r, r - base])
            print(f"{name}: {b} bit DAC -> {r:.3f} dB (penalty {r - base:.3f} dB)")
    out = run.path(args.out or "quantize_sweep.csv")
    write_csv(out, ["format", "dac_bits", "required_snr_db", "penalty_db"], rows)
    run.config.update(constellations=args.constellations, target_gmi=args.target_gmi,
                      bits=args.bits, tx=dict(tx.items()))


def cmd_fit_eta(args, run):
    from .fibersim import power_sweep
    from .nli import fit_eta, nli_from_results

    c = _read(args.constellation)
    link, tx = _load_link(args)
    quiet = replace(link, amplifier="ideal" if link.amplifier != "none" else "none")
    res = power_sweep(c, quiet, tx, args.powers, n_jobs=args.threads)
    P, s = nli_from_results(res)
    fit = fit_eta(P, s)
    rows = [[r.launch_power_dbm, r.effective_snr_db, float(v)] for r, v in zip(res, s)]
    out = run.path(args.out or "fit_eta.csv")
    write_csv(out, ["launch_power_dbm", "effective_snr_db", "sigma2_nli_w"], rows)
    print(f"eta = {fit.eta:.6g} 1/W^2, R^2 = {fit.r2:.6f}")
    run.config.update(constellation=args.constellation, link=dict(link.items()),
                      tx=dict(tx.items()), powers_dbm=args.powers,
                      eta_per_w2=fit.eta, r2=fit.r2)


def cmd_calibrate_surrogate(args, run):
    from .nli import calibrate_surrogate, surrogate_features

    cs = [_read(p) for p in args.constellations]
    link, tx = _load_link(args)
    try:
        sur, fits = calibrate_surrogate(cs, link, tx, args.powers, n_jobs=args.threads)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    spath = run.path(args.out or "surrogate.txt")
    sur.save(spath, extra=[(k, v) for k, v in sur.metadata_.items()])
    pred = sur.predict(cs)
    rows = []
    for c, p, f, e in zip(args.constellations, cs, fits, pred):
        f4, f2 = surrogate_features(p)
        rows.append([p.name or Path(c).stem, f4 + 1, f2 + 1, f.eta, f.r2, float(e)])
    tpath = run.path("calibration.csv")
    write_csv(tpath, ["format", "phi4", "phi2_mean", "eta_per_w2", "r2", "eta_hat_per_w2"], rows)
    c0, c1, c2 = sur.coef_
    print(f"eta_hat = {c0:.6g} + {c1:.6g} (Phi4-1) + {c2:.6g} (Phi2-1)  "
          f"[link {sur.link_fingerprint}]")
    run.config.update(constellations=args.constellations, link=dict(link.items()),
                      tx=dict(tx.items()), powers_dbm=args.powers, coef=list(sur.coef_))


COMMANDS = {
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "optimize": cmd_optimize,
    "simulate": cmd_simulate,
    "quantize-sweep": cmd_quantize_sweep,
    "fit-eta": cmd_fit_eta,
    "calibrate-surrogate": cmd_calibrate_surrogate,
}


def _add_link_args(p, powers_default=None):
    p.add_argument("--config", help="link/transmitter key = value file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--steps", type=int, help="split-step steps per span")
    p.add_argument("--symbols", type=int, help="symbols per channel")


def build_parser():
    ap = argparse.ArgumentParser(prog="mdshaping", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    ap.add_argument("--threads", type=int, default=None,
                    help=f"worker threads (default ${THREADS_ENV} or 1)")
    ap.add_argument("--out-dir", default=".", help="output directory (default .)")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="build a constellation file")
    g.add_argument("kind", choices=["qam", "psk", "pm-product", "sp-qam", "os-expand",
                                    "random-orthant", "prs64"])
    g.add_argument("--bits", type=int, default=None, help="bits per symbol (per 2D for qam/psk/pm-product)")
    g.add_argument("--dims", type=int, help="real dimensions (random-orthant)")
    g.add_argument("--in", dest="input", help="first-orthant file (os-expand)")
    g.add_argument("--psk", action="store_true", help="pm-product of PSK instead of QAM")
    g.add_argument("--power", type=float, help="mean symbol energy")
    g.add_argument("--name")
    g.add_argument("--out", help="file name inside --out-dir")

    e = sub.add_parser("evaluate", help="GMI / MI versus SNR")
    e.add_argument("constellation")
    grp = e.add_mutually_exclusive_group()
    grp.add_argument("--snr-db", type=_float_list, help="comma list of SNRs in dB")
    grp.add_argument("--snr-sweep", type=_float_list, help="start:stop:step in dB")
    e.add_argument("--method", choices=["gh", "mc", "both"], default="gh")
    e.add_argument("--mi", action="store_true", help="add Monte-Carlo MI columns")
    e.add_argument("--samples", type=int, default=1_000_000)
    e.add_argument("-J", type=int, default=10, help="Gauss-Hermite order")
    e.add_argument("--out")

    o = sub.add_parser("optimize", help="geometric shaping")
    o.add_argument("--objective", choices=["awgn", "nli"], default="awgn")
    o.add_argument("--snr-db", type=float)
    o.add_argument("--constraint", choices=["none", "os"], default="none")
    o.add_argument("--init", choices=["qam", "pm-qam", "sp-qam", "random-orthant", "file"],
                   default="qam")
    o.add_argument("--init-file")
    o.add_argument("--bits", type=int)
    o.add_argument("--dims", type=int)
    o.add_argument("--surrogate", help="surrogate file (nli objective)")
    _add_link_args(o)
    o.add_argument("--lr", type=float, default=0.01)
    o.add_argument("--max-iter", type=int, default=2000)
    o.add_argument("--restarts", type=int, default=5)
    o.add_argument("--tol", type=float, default=1e-4)
    o.add_argument("--patience", type=int, default=50)
    o.add_argument("--gradient", choices=["analytic", "central-difference"], default="analytic")
    o.add_argument("--name")
    o.add_argument("--out")
    o.add_argument("--trace")

    s = sub.add_parser("simulate", help="split-step fiber simulation")
    s.add_argument("constellation")
    _add_link_args(s)
    grp = s.add_mutually_exclusive_group()
    grp.add_argument("--power-sweep", type=_float_list, help="launch powers in dBm")
    grp.add_argument("--distance-sweep", type=_int_list, help="span counts")
    s.add_argument("--out")

    q = sub.add_parser("quantize-sweep", help="required SNR versus DAC resolution")
    q.add_argument("constellations", nargs="+")
    q.add_argument("--target-gmi", type=float, required=True)
    q.add_argument("--bits", type=_int_list, default=[2, 3, 4, 5, 6, 8])
    q.add_argument("--symbols", type=int, default=2**16)
    q.add_argument("--out")

    f = sub.add_parser("fit-eta", help="fit the cubic NLI law from a power sweep")
    f.add_argument("constellation")
    _add_link_args(f)
    f.add_argument("--powers", type=_float_list, default=[-2, 1, 4, 7, 10])
    f.add_argument("--out")

    k = sub.add_parser("calibrate-surrogate", help="fit the NLI-coefficient surrogate")
    k.add_argument("constellations", nargs="+")
    _add_link_args(k)
    k.add_argument("--powers", type=_float_list, default=[-2, 1, 4, 7, 10])
    k.add_argument("--out")

    r = sub.add_parser("rerun", help="replay a run from its manifest")
    r.add_argument("manifest")
    return ap


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command == "rerun":
        try:
            m = json.loads(Path(args.manifest).read_text())
            replay = m["argv"]
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: cannot read manifest: {exc}", file=sys.stderr)
            return 1
        return main(replay)
    args.argv = argv
    try:
        if args.threads is None:
            args.threads = _default_threads()
        if args.threads < 1:
            raise CliError("--threads must be >= 1")
        run = _Run(args)
        COMMANDS[args.command](args, run)
        run.manifest()
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
