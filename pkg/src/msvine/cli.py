"""Command-line front end.

Commands: simulate, select, fit-em, fit-bayes, rolling, dic, report.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import pickle
import sys
from pathlib import Path

import numpy as np

from . import bayes_mcmc as bm
from . import io
from .ms_em import MSRVineModel, em_fit, initialize, simulate
from .pair_copula import ConvergenceError, CopulaError, CopulaFamily
from .regime_chain import ChainError, smoothed_to_csv_rows, stationary_distribution
from .rvine import EdgeFitError, VineError
from .scenarios import scenario
from .structure_select import Recipe, SelectionError, rolling_window, select_structure

log = logging.getLogger("msvine")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _catalogue(text):
    try:
        return tuple(CopulaFamily.from_tag(t.strip()) for t in text.split(",") if t.strip())
    except (ValueError, KeyError) as exc:
        raise UsageError(f"bad family catalogue {text!r}: {exc}") from None


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need(args, *names):
    for n in names:
        if getattr(args, n) is None:
            raise UsageError(f"--{n.replace('_', '-')} is required for {args.command}")


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(args):
    if args.rows is None or args.rows < 0:
        raise UsageError("--rows must be a nonnegative integer")
    if args.scenario is not None:
        model = scenario(args.scenario)
    else:
        _need(args, "model")
        model = io.as_switching(io.load_model(args.model))
    u, states = simulate(model, args.rows, args.seed)
    out = _out_dir(args)
    io.write_data(out / "data.csv", u)
    io.write_csv(out / "states.csv", ["t", "regime"], [[t + 1, int(s) + 1] for t, s in enumerate(states)])
    io.save_model(model, out / "model.json")
    return f"wrote {len(u)} rows to {out}"


def cmd_select(args):
    _need(args, "data")
    u = io.read_data(args.data)
    spec = select_structure(u, _catalogue(args.catalogue), args.trunc)
    out = _out_dir(args)
    io.save_model(spec, out / "model.json")
    return f"selected a {spec.d}-dimensional vine"


def _recipes_for_em(args, u):
    if args.model is not None:
        m = io.load_model(args.model)
        regimes = list(m.regimes) if isinstance(m, MSRVineModel) else [m] * args.regimes
        if len(regimes) != args.regimes and args.regimes_given:
            raise UsageError(f"--regimes {args.regimes} disagrees with the model file ({len(regimes)})")
        return regimes
    spec = select_structure(u, _catalogue(args.catalogue), args.trunc)
    return [spec] * args.regimes


def cmd_fit_em(args):
    _need(args, "data")
    u = io.read_data(args.data)
    regimes = _recipes_for_em(args, u)
    if regimes[0].d != u.shape[1]:
        raise io.DataError(f"data have {u.shape[1]} columns but the model has dimension {regimes[0].d}")
    model0 = initialize(regimes, u)
    model, trace = em_fit(model0, u, tol=args.tol, max_iter=args.max_iter)
    out = _out_dir(args)
    io.save_model(model, out / "model.json")
    io.write_csv(out / "smoothed.csv", ["t"] + [f"regime{k + 1}" for k in range(model.p)],
                 smoothed_to_csv_rows(trace.smoothed))
    io.write_csv(out / "trace.csv", ["iteration", "loglik"],
                 [[i + 1, ll] for i, ll in enumerate(trace.logliks)])
    status = "converged" if trace.converged else "did not converge"
    if not trace.converged:
        log.warning("EM stopped after %d iterations without meeting the tolerance", trace.n_iter)
    return f"EM {status} after {trace.n_iter} iterations; best iterate {trace.best_iter}"


def _write_chain(out: Path, draws, p):
    for k in range(p):
        edges, taus = bm.tau_chains(draws, k)
        header = ["iteration"] + [f"tau_{r + 1}_{c + 1}" for r, c in edges]
        io.write_csv(out / f"chain_regime{k + 1}.csv", header,
                     [[dr.iteration + 1, *row] for dr, row in zip(draws, taus)])
    io.write_csv(out / "chain_trans.csv",
                 ["iteration"] + [f"p_{i + 1}_{j + 1}" for i in range(p) for j in range(p)],
                 [[dr.iteration + 1, *np.asarray(dr.trans).ravel()] for dr in draws])
    probs = bm.posterior_state_probabilities(draws, p)
    io.write_csv(out / "states.csv", ["t"] + [f"regime{k + 1}" for k in range(p)],
                 smoothed_to_csv_rows(probs))


def cmd_fit_bayes(args):
    _need(args, "data", "model")
    u = io.read_data(args.data)
    model0 = io.as_switching(io.load_model(args.model))
    if model0.d != u.shape[1]:
        raise io.DataError(f"data have {u.shape[1]} columns but the model has dimension {model0.d}")
    try:
        cfg = bm.ChainConfig(args.iters, args.burnin, args.thin, args.seed,
                             ident_stat=args.ident_stat,
                             checkpoint=str(Path(args.out) / "checkpoint.pkl"))
    except bm.MCMCError as exc:
        raise UsageError(str(exc)) from None
    _out_dir(args)
    res = bm.gibbs_run(model0, u, cfg)
    draws = bm.ess_subsample(res.draws, args.target) if args.target else res.draws
    out = Path(args.out)
    _write_chain(out, draws, model0.p)
    summary = bm.summarize(draws)
    summary["acceptance_rate"] = [float(a) for a in res.acceptance_rate]
    summary["draws_after_thinning"] = len(res.draws)
    summary["flags"] = res.flags
    if len(draws) >= 100:
        dres = bm.dic(draws, u)
        summary.update(DIC=dres.dic, p_D=dres.p_d, mean_deviance=dres.mean_deviance)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    with open(out / "draws.pkl", "wb") as fh:
        pickle.dump(draws, fh)
    ckpt = out / "checkpoint.pkl"
    if ckpt.exists():
        ckpt.unlink()
    return f"kept {len(draws)} draws of {len(res.draws)} after burn-in and thinning"


def cmd_dic(args):
    _need(args, "data")
    if not args.chains:
        raise UsageError("dic needs at least one --chains directory")
    u = io.read_data(args.data)
    rows = []
    for path in args.chains:
        f = Path(path) / "draws.pkl"
        if not f.exists():
            raise io.DataError(f"no draws.pkl in {path}")
        with open(f, "rb") as fh:
            draws = pickle.load(fh)
        res = bm.dic(draws, u)
        rows.append([str(path), res.dic, res.p_d, res.mean_deviance])
    rows.sort(key=lambda r: r[1])
    out = _out_dir(args)
    io.write_csv(out / "dic.csv", ["model", "DIC", "p_D", "mean_deviance"], rows)
    return "\n".join(f"{r[0]}: DIC {r[1]:.2f}" for r in rows)


def _parse_candidate(text, default_cat, trunc):
    name, _, body = text.partition("=")
    if not body:
        return Recipe(name, default_cat, None, trunc)
    levels = [_catalogue(part) for part in body.split("/")]
    per_tree = {t + 1: cat for t, cat in enumerate(levels)}
    return Recipe(name, levels[-1], per_tree, trunc)


def cmd_rolling(args):
    _need(args, "data", "window")
    u = io.read_data(args.data)
    default = _catalogue(args.catalogue)
    cands = [_parse_candidate(c, default, args.trunc) for c in (args.candidate or ["default"])]
    rep = rolling_window(u, args.window, cands, workers=args.workers)
    out = _out_dir(args)
    io.write_csv(out / "rolling.csv", ["window_start", "candidate_id", "loglik"], rep.csv_rows())
    for f in rep.flags:
        log.warning(f)
    return f"{len(rep.starts)} windows x {len(cands)} candidates"


def moving_average(x, width=7):
    """Centred moving average used only for display; edges use the available neighbours."""
    x = np.asarray(x, dtype=float)
    half = width // 2
    out = np.empty_like(x)
    for t in range(len(x)):
        out[t] = x[max(0, t - half):t + half + 1].mean(axis=0)
    return out


def cmd_report(args):
    lines = []
    if args.model:
        model = io.as_switching(io.load_model(args.model))
        for k, spec in enumerate(model.regimes):
            lines.append(f"regime {k + 1}:")
            for e, pc in spec.edge_items():
                cond = ",".join(str(v) for v in sorted(e.conditioning))
                lab = f"{e.conditioned[0]},{e.conditioned[1]}" + (f"|{cond}" if cond else "")
                lines.append(f"  tree {e.tree} [{lab}] {pc.family.value} "
                             f"params={list(pc.params)} tau={pc.tau:.4f}")
        lines.append(f"transition matrix: {np.asarray(model.trans).tolist()}")
        if model.p > 1:
            lines.append(f"stationary distribution: {stationary_distribution(model.trans).tolist()}")
    if args.smoothed:
        with open(args.smoothed) as fh:
            header = fh.readline().strip().split(",")
        arr = np.loadtxt(args.smoothed, delimiter=",", skiprows=1, ndmin=2)
        sm = moving_average(arr[:, 1:], 7)
        out = _out_dir(args)
        io.write_csv(out / "smoothed_ma7.csv", header,
                     [[int(t), *row] for t, row in zip(arr[:, 0], sm)])
        lines.append(f"wrote {out / 'smoothed_ma7.csv'}")
    if not lines:
        raise UsageError("report needs --model and/or --smoothed")
    return "\n".join(lines)


COMMANDS = {
    "simulate": cmd_simulate,
    "select": cmd_select,
    "fit-em": cmd_fit_em,
    "fit-bayes": cmd_fit_bayes,
    "rolling": cmd_rolling,
    "dic": cmd_dic,
    "report": cmd_report,
}


def build_parser():
    p = _Parser(prog="msvine", description="Markov-switching R-vine copula models")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--out", default=".")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--regimes", type=int, default=None)
    p.add_argument("--trunc", type=int, default=None)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--iters", type=int, default=20000)
    p.add_argument("--burnin", type=int, default=1000)
    p.add_argument("--thin", type=int, default=5)
    p.add_argument("--target", type=int, default=1000,
                   help="approximate number of draws kept after ESS-based subsampling (0 keeps all)")
    p.add_argument("--catalogue", default="N,G,SG,G90,G270")
    p.add_argument("--ident-stat", default="abs_tau")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--rows", type=int, default=None, help="rows to simulate")
    p.add_argument("--scenario", type=int, choices=(1, 2), default=None)
    p.add_argument("--candidate", action="append",
                   help="rolling candidate NAME[=CAT1/CAT2/...], one catalogue per tree")
    p.add_argument("--chains", nargs="*", default=None)
    p.add_argument("--smoothed")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.regimes_given = args.regimes is not None
    if args.regimes is None:
        args.regimes = 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        msg = COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"msvine: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (io.DataError, VineError, CopulaError, OSError) as exc:
        print(f"msvine: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConvergenceError, EdgeFitError, ChainError, SelectionError, bm.MCMCError,
            FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"msvine: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if msg:
        print(msg)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
