"""Command-line entry point.

Exit codes: 0 success (or H0 accepted), 1 H1 accepted, 2 usage or validation
error, 3 runtime or protocol error.  Machine-readable records go to stdout,
human messages to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import secrets
import sys
from pathlib import Path

from . import __version__
from .dist.ledger import DistConfig, ProtocolError
from .dist.protocol import ConnectionClosed, MessageError, SocketChannel, TcpListener, parse_hostport
from .dist.session import Job, WorkerAborted, master_session, worker_loop
from .expr import ExprError
from .model import ModelError, instantiate, parameter_space, parse_model
from .query import QueryError, parse_query
from .semantics import Checker, SimulationError
from .smc.drivers import DEFAULT_BATCH, DEFAULT_BUFFER, run_estimation, run_hypothesis
from .smc.sprt import EstimationTask, HypothesisTask
from .sweep import (
    SweepConfig,
    SymmetricGame,
    find_nash,
    generate_topologies,
    random_topologies,
    read_topologies,
    sweep,
    sweep_csv,
    topology_sweep,
    utility_matrix,
    write_csv,
    write_topologies,
)

EXIT_OK, EXIT_H1, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _unit(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not strictly between 0 and 1")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"{text} must be >= 1")
    return v


def _add_model(p, query_required=True):
    p.add_argument("model", help="model document (JSON)")
    p.add_argument("--query", required=query_required, help="query text, or a file containing it")
    p.add_argument("--set", action="append", default=[], metavar="NAME=VALUE",
                   help="fix a parameter; matrices are written as rows of 0/1 joined by '/'")
    p.add_argument("--step-limit", type=_positive, default=None, help="discrete steps per run (default 10^7)")


def _add_seed(p):
    p.add_argument("--seed", type=_seed, default=None, help="master seed (default: fresh entropy, always echoed)")


def _add_check(p, required=True):
    p.add_argument("--theta", type=_unit, required=required, help="probability threshold")
    p.add_argument("--delta", type=float, default=None, help="half-width of the indifference region")
    p.add_argument("--delta0", type=float, default=None, help="upper half-width (overrides --delta)")
    p.add_argument("--delta1", type=float, default=None, help="lower half-width (overrides --delta)")
    p.add_argument("--beta", type=_unit, default=None, help="bound on wrongly accepting H0")
    p.add_argument("--batch", type=_positive, default=DEFAULT_BATCH, help="runs per batch")
    p.add_argument("--buffer", type=_positive, default=DEFAULT_BUFFER, help="unacknowledged batches per worker")
    p.add_argument("--safe-bounds", action="store_true", help="allow early decisions from Binomial bounds")


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="dpsmc", description="Distributed statistical model checking of priced timed automata.")
    top.add_argument("--version", action="version", version=f"dpsmc {__version__}")
    top.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)
    jobs = os.cpu_count() or 1

    p = sub.add_parser("check", help="sequential hypothesis test Pr[...] >= theta")
    _add_model(p)
    _add_check(p)
    p.add_argument("--alpha", type=_unit, required=True, help="bound on wrongly accepting H1")
    p.add_argument("--jobs", type=_positive, default=jobs, help="local worker processes")
    _add_seed(p)

    p = sub.add_parser("estimate", help="Chernoff-Hoeffding probability estimate")
    _add_model(p)
    p.add_argument("--eps", type=_unit, required=True, help="half-width of the interval")
    p.add_argument("--alpha", type=_unit, required=True, help="1 - confidence")
    p.add_argument("--jobs", type=_positive, default=jobs, help="local worker processes")
    p.add_argument("--batch", type=_positive, default=DEFAULT_BATCH, help="runs per batch")
    p.add_argument("--runs", type=_positive, default=None, help="override the number of runs")
    _add_seed(p)

    p = sub.add_parser("master", help="coordinate remote workers over TCP")
    _add_model(p)
    p.add_argument("--listen", required=True, metavar="HOST:PORT")
    p.add_argument("--workers", type=_positive, required=True)
    _add_check(p, required=False)
    p.add_argument("--alpha", type=_unit, required=True)
    p.add_argument("--eps", type=_unit, default=None, help="estimate instead of testing")
    p.add_argument("--runs", type=_positive, default=None, help="override the number of runs (estimation)")
    p.add_argument("--accept-timeout", type=float, default=300.0, help="seconds to wait for each worker")
    _add_seed(p)

    p = sub.add_parser("worker", help="serve one master session")
    p.add_argument("--connect", required=True, metavar="HOST:PORT")
    p.add_argument("--retry", type=float, default=10.0, help="seconds to keep retrying the connection")

    p = sub.add_parser("sweep", help="estimate over the whole parameter space")
    _add_model(p)
    p.add_argument("--eps", type=_unit, required=True)
    p.add_argument("--alpha", type=_unit, required=True)
    p.add_argument("--out", required=True, help="CSV file")
    p.add_argument("--jobs", type=_positive, default=jobs)
    _add_seed(p)

    p = sub.add_parser("nash", help="symmetric Nash equilibrium and optimum on a strategy grid")
    p.add_argument("model")
    p.add_argument("--players", type=_positive, required=True)
    p.add_argument("--grid", required=True, metavar="A..B:STEP", help="integer strategy grid, e.g. 1..9:1")
    p.add_argument("--query-template", required=True, help="utility query of player 0")
    p.add_argument("--eps", type=_unit, required=True)
    p.add_argument("--alpha", type=_unit, required=True)
    p.add_argument("--out", required=True, help="CSV file for the utility matrix")
    p.add_argument("--tol", type=float, default=None, help="equilibrium slack (default 2*eps)")
    p.add_argument("--scale", type=float, default=1.0, help="multiply grid values by this when reporting")
    p.add_argument("--self-param", default="P_SELF")
    p.add_argument("--other-param", default="P_OTHER")
    p.add_argument("--players-param", default="N")
    p.add_argument("--set", action="append", default=[], metavar="NAME=VALUE")
    p.add_argument("--jobs", type=_positive, default=jobs)
    _add_seed(p)

    p = sub.add_parser("topo", help="generate topologies, optionally sweeping a model over them")
    p.add_argument("--nodes", type=_positive, required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--random", type=_positive, metavar="COUNT")
    g.add_argument("--generate", action="store_true", help="recursive heuristic")
    p.add_argument("--density", type=float, default=0.5)
    p.add_argument("--asymmetric", action="store_true", help="random directed graphs")
    p.add_argument("--out", required=True, help="directory for the topology files")
    p.add_argument("--model", default=None, help="also estimate this model on every topology")
    p.add_argument("--query", default=None)
    p.add_argument("--eps", type=_unit, default=0.05)
    p.add_argument("--alpha", type=_unit, default=0.05)
    p.add_argument("--csv", default=None, help="ranking CSV (default OUT/ranking.csv)")
    p.add_argument("--set", action="append", default=[], metavar="NAME=VALUE")
    p.add_argument("--jobs", type=_positive, default=jobs)
    _add_seed(p)
    return top


# --------------------------------------------------------------------------


def _parse_value(text: str):
    t = text.strip()
    if "/" in t:
        rows = [r for r in t.split("/") if r]  # "1/" is the 1x1 matrix
        if all(r and set(r) <= {"0", "1"} for r in rows):
            return tuple(tuple(c == "1" for c in r) for r in rows)
        raise UsageError(f"bad matrix value {text!r}")
    try:
        return int(t, 0)
    except ValueError:
        raise UsageError(f"parameter values must be integers or 0/1 matrices, got {text!r}") from None


def _settings(items) -> dict:
    out = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep or not name.strip():
            raise UsageError(f"--set expects NAME=VALUE, got {item!r}")
        out[name.strip()] = _parse_value(value)
    return out


def _read_query(q: str) -> str:
    p = Path(q)
    if len(q) < 4096 and "(" not in q and p.is_file():
        return p.read_text(encoding="utf-8").strip()
    return q


def _load(path: str):
    text = Path(path).read_text(encoding="utf-8")
    pm = parse_model(text)  # reports syntax errors with line and column
    return json.loads(text), pm


def _network(args):
    doc, pm = _load(args.model)
    assignment = _settings(args.set)
    space = parameter_space(pm)
    missing = [n for n in space.names if n not in assignment]
    if missing:
        raise ModelError(f"parameters without a value: {', '.join(missing)} (use --set NAME=VALUE)")
    net = instantiate(pm, assignment)
    query = _read_query(args.query)
    return doc, pm, assignment, net, parse_query(query, net), query


def _hyp_task(args) -> HypothesisTask:
    d0 = args.delta0 if args.delta0 is not None else args.delta
    d1 = args.delta1 if args.delta1 is not None else args.delta
    if d0 is None or d1 is None:
        raise UsageError("give --delta or both --delta0 and --delta1")
    beta = args.beta if args.beta is not None else args.alpha
    return HypothesisTask(args.theta, d0, d1, args.alpha, beta)


def _seed_of(args) -> int:
    return args.seed if args.seed is not None else secrets.randbits(64)


def _engine(net, f, args):
    return Checker(net, f) if args.step_limit is None else Checker(net, f, args.step_limit)


def cmd_check(args) -> int:
    _, _, _, net, f, _ = _network(args)
    task = _hyp_task(args)
    seed = _seed_of(args)
    v = run_hypothesis(_engine(net, f, args), None, task, seed=seed, jobs=args.jobs, batch=args.batch,
                       buffer=args.buffer, safe_bounds=args.safe_bounds)
    print(v.line())
    return EXIT_H1 if v.kind == "H1" else EXIT_OK


def cmd_estimate(args) -> int:
    _, _, _, net, f, _ = _network(args)
    seed = _seed_of(args)
    v = run_estimation(_engine(net, f, args), None, EstimationTask(args.eps, args.alpha), seed=seed,
                       jobs=args.jobs, batch=args.batch, runs=args.runs)
    print(v.line())
    return EXIT_OK


def cmd_master(args) -> int:
    doc, _, assignment, _, _, query = _network(args)
    seed = _seed_of(args)
    if args.eps is not None:
        task = EstimationTask(args.eps, args.alpha)
    elif args.theta is not None:
        task = _hyp_task(args)
    else:
        raise UsageError("master needs --theta (testing) or --eps (estimation)")
    host, port = parse_hostport(args.listen)
    listener = TcpListener(host, port)
    h, p = listener.address
    print(f"listening on {h}:{p} for {args.workers} workers", file=sys.stderr, flush=True)
    cfg = DistConfig(args.workers, args.batch, args.buffer, seed, args.safe_bounds)
    try:
        v = master_session(cfg, Job(doc, query, assignment or None, args.step_limit), task, listener,
                           runs=args.runs, accept_timeout=args.accept_timeout)
    finally:
        listener.close()
    print(v.line())
    return EXIT_H1 if v.kind == "H1" else EXIT_OK


def cmd_worker(args) -> int:
    import time

    host, port = parse_hostport(args.connect)
    deadline = time.monotonic() + args.retry
    while True:
        try:
            ch = SocketChannel.connect(host, port)
            break
        except OSError:
            if time.monotonic() >= deadline:
                raise
            time.sleep(0.2)
    sent = worker_loop(ch)
    print(f"worker done batches={sent}", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args) -> int:
    _, pm = _load(args.model)
    fixed = _settings(args.set)
    seed = _seed_of(args)
    task = EstimationTask(args.eps, args.alpha)
    res = sweep(pm, _read_query(args.query), task, SweepConfig(args.jobs, seed, step_limit=args.step_limit),
                fixed=fixed)
    write_csv(sweep_csv(res), args.out)
    bad = sum(1 for r in res.rows if r.status != "ok")
    print(f"sweep rows={len(res.rows)} failed={bad} seed={seed} out={args.out} version={__version__}")
    return EXIT_OK


def _grid(text: str) -> tuple:
    try:
        span, _, step = text.partition(":")
        a, b = span.split("..")
        a, b, s = int(a), int(b), int(step or 1)
    except ValueError:
        raise UsageError(f"--grid expects integers A..B:STEP, got {text!r}") from None
    if s < 1 or b < a:
        raise UsageError("--grid needs A <= B and STEP >= 1")
    return tuple(range(a, b + 1, s))


def cmd_nash(args) -> int:
    _, pm = _load(args.model)
    fixed = _settings(args.set)
    space = parameter_space(pm)
    if args.players_param in space.names:
        fixed[args.players_param] = args.players
    elif args.players != 2:
        raise ModelError(f"model has no parameter {args.players_param!r} for the player count")
    seed = _seed_of(args)
    task = EstimationTask(args.eps, args.alpha)
    game = SymmetricGame(pm, _grid(args.grid), _read_query(args.query_template), task, args.self_param,
                         args.other_param, tuple(sorted(fixed.items())), args.scale)
    U = utility_matrix(game, seed, SweepConfig(args.jobs, seed))
    res = find_nash(U, 2 * args.eps if args.tol is None else args.tol)
    summary = res.summary(args.scale)
    write_csv(U.to_csv() + "\n" + summary + "\n", args.out)
    print(f"{summary} seed={seed} version={__version__}")
    return EXIT_OK


def cmd_topo(args) -> int:
    if args.random is not None:
        seed = _seed_of(args)
        if not 0.0 <= args.density <= 1.0:
            raise UsageError("--density must lie in [0, 1]")
        tops, rep = random_topologies(args.nodes, args.random, args.density, seed, not args.asymmetric)
        head = f"topologies={rep.total} duplicates={rep.duplicates} seed={seed}"
    else:
        seed = args.seed if args.seed is not None else 0
        tops = generate_topologies(args.nodes)
        head = f"topologies={len(tops)} base={2 ** (args.nodes - 1)}"
    write_topologies(tops, args.out)
    print(f"{head} out={args.out} version={__version__}")
    if args.model:
        if not args.query:
            raise UsageError("--model needs --query")
        _, pm = _load(args.model)
        res = topology_sweep(pm, _read_query(args.query), EstimationTask(args.eps, args.alpha),
                             read_topologies(args.out), SweepConfig(args.jobs, seed), fixed=_settings(args.set))
        path = args.csv or str(Path(args.out) / "ranking.csv")
        write_csv(sweep_csv(res, extra=("index",)), path)
        print(f"ranking rows={len(res.rows)} top_p={res.rows[0].p_hat:.6f} seed={seed} out={path}")
    return EXIT_OK


COMMANDS = {
    "check": cmd_check, "estimate": cmd_estimate, "master": cmd_master, "worker": cmd_worker,
    "sweep": cmd_sweep, "nash": cmd_nash, "topo": cmd_topo,
}


def _fail(code: int, kind: str, message: str) -> int:
    print(f"dpsmc: {kind}: {message}", file=sys.stderr)
    reason = " ".join(str(message).split())
    print(f"status=error code={code} kind={kind.replace(' ', '_')} reason={json.dumps(reason)} "
          f"version={__version__}")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        return _fail(EXIT_USAGE, "error", e)
    except SystemExit as e:  # --help / --version
        return EXIT_OK if not e.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        return _fail(EXIT_USAGE, "error", e)
    except (ModelError, QueryError, ExprError, ValueError, json.JSONDecodeError, FileNotFoundError) as e:
        return _fail(EXIT_USAGE, "invalid input", e)
    except (SimulationError, ProtocolError, MessageError, ConnectionClosed, WorkerAborted, OSError,
            ZeroDivisionError, TimeoutError) as e:
        return _fail(EXIT_RUNTIME, "runtime error", e)
    except KeyboardInterrupt:
        return _fail(EXIT_RUNTIME, "runtime error", "interrupted")
    except Exception as e:  # noqa: BLE001 - exit codes must stay total
        return _fail(EXIT_RUNTIME, "internal error", f"{type(e).__name__}: {e}")


def render_reference() -> str:
    """Markdown flag reference, one section per subcommand."""
    old = os.environ.get("COLUMNS")
    os.environ["COLUMNS"] = "100"
    try:
        parser = build_parser()
        return _reference(parser)
    finally:
        if old is None:
            del os.environ["COLUMNS"]
        else:
            os.environ["COLUMNS"] = old


def _reference(parser) -> str:
    out = ["# Command-line reference", "", "Generated from the argument parser (`python -m dpsmc.cli --help`).", ""]
    out += ["```", parser.format_help().rstrip(), "```", ""]
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for name, p in sub.choices.items():
        out += [f"## {name}", "", "```", p.format_help().rstrip(), "```", ""]
    out += ["## Exit codes", "", "| code | meaning |", "|---|---|",
            "| 0 | success, or H0 accepted (`check`) |", "| 1 | H1 accepted (`check`) |",
            "| 2 | usage or validation error |", "| 3 | runtime or protocol error |", ""]
    return "\n".join(out)


if __name__ == "__main__":
    sys.exit(main())
