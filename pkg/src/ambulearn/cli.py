"""Command-line pipeline: ``ambulearn <command> [options]``.

Every command writes its outputs plus ``manifest_<command>.json`` into
``--out``. Exit codes: 0 success, 2 usage, 3 input error, 4 infeasible model,
5 internal invariant breach.
"""
from __future__ import annotations

import argparse
import glob
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from importlib import resources

from .benchmarks import CICS, CIFS, RandomPolicy, WarmupHandover, home_bases
from .core import ScenarioConfig
from .data import (Episode, build_anticipative, build_enhanced, dagger, load_points, save_points,
                   slice_solution)
from .errors import AmbulearnError, ContractError, InputError
from .evaluation import PolicyReport, emit_report, evaluate_policy, ks_two_sample
from .ingest import dump_requests, load_config, load_requests, parse_calls, synthesize_scenario
from .learner import FeatureContext, LearnedPolicy, ModelParams, init_model, train
from .mclp import MclpInstance, bin_regions, solve_mclp
from .offline.digraph import build_digraph
from .offline.solver import OfflineSolution, solve_offline_hard, solve_offline_soft
from .simulator import run_episode

log = logging.getLogger("ambulearn")
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO,
              "debug": logging.DEBUG}


def bundled_config() -> str:
    return str(resources.files("ambulearn").joinpath("resources/tiny.json"))


def blob_hash(path) -> str:
    """Git-style content hash of a file."""
    with open(path, "rb") as f:
        data = f.read()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


class Run:
    """Tracks inputs and outputs of one command and writes its manifest."""

    def __init__(self, args):
        self.args = args
        self.inputs: list[str] = []
        self.outputs: list[str] = []
        os.makedirs(args.out, exist_ok=True)

    def read(self, path):
        if not os.path.exists(path):
            raise InputError(f"missing input: {path}")
        self.inputs.append(path)
        return path

    def out(self, name):
        path = os.path.join(self.args.out, name)
        self.outputs.append(path)
        return path

    def write_json(self, name, obj):
        with open(self.out(name), "w") as f:
            json.dump(obj, f, indent=2, sort_keys=True)
            f.write("\n")

    def manifest(self):
        path = os.path.join(self.args.out, f"manifest_{self.args.command}.json")
        body = {
            "command": self.args.command,
            "argv": self.args.argv,
            "config": self.args.config,
            "seed": self.args.seed,
            "inputs": {p: blob_hash(p) for p in sorted(set(self.inputs))},
            "outputs": {p: blob_hash(p) for p in sorted(set(self.outputs))},
        }
        with open(path, "w") as f:
            json.dump(body, f, indent=2, sort_keys=True)
            f.write("\n")


# -- helpers ---------------------------------------------------------------------------------
def _config(run):
    cfg = load_config(run.read(run.args.config))
    return cfg


def _scenario(cfg, fleet=None) -> ScenarioConfig:
    if cfg.scenario is None:
        raise InputError("configuration has no scenario section with waiting locations")
    sc = cfg.scenario
    if fleet is not None and fleet != sc.fleet_size:
        sc = sc.with_fleet(fleet)
    return sc


def _expand(patterns):
    out = []
    for p in patterns:
        hits = sorted(glob.glob(p))
        out.extend(hits if hits else [p])
    return out


def _streams(run, patterns):
    paths = _expand(patterns)
    if not paths:
        raise InputError("no request streams given")
    out = []
    for p in paths:
        with open(run.read(p)) as f:
            out.append((os.path.splitext(os.path.basename(p))[0], load_requests(f.read())))
    return out


def _context(cfg, scenario, streams) -> FeatureContext:
    history = [r for _, reqs in streams for r in reqs]
    hours = len(streams) * scenario.horizon / 3600.0
    return FeatureContext.from_history(scenario, history, hours, cfg.get("mclp", "kappa"),
                                       cfg.get("mclp", "cell_area_km2"))


def _read_json(run, path):
    with open(run.read(path)) as f:
        return json.load(f)


# -- commands --------------------------------------------------------------------------------
def cmd_ingest(run):
    cfg = _config(run)
    sc = _scenario(cfg)
    bbox = cfg.get("ingest", "bbox")
    with open(run.read(run.args.calls), newline="") as f:
        reqs = parse_calls(f, sc, dropoff_s=cfg.get("ingest", "dropoff_s"),
                           columns=cfg.get("ingest", "columns"),
                           bbox=tuple(bbox) if bbox else None)
    with open(run.out(run.args.name + ".jsonl"), "w") as f:
        f.write(dump_requests(reqs))
    log.info("ingested %d calls", len(reqs))


def cmd_synth(run):
    cfg = _config(run)
    sc = _scenario(cfg)
    n = run.args.episodes or cfg.get("synth", "episodes")
    for i in range(n):
        spec = cfg.synthetic_spec(run.args.seed * 1000 + i)
        reqs = synthesize_scenario(spec, sc.horizon, sc)
        with open(run.out(f"stream_{i:03d}.jsonl"), "w") as f:
            f.write(dump_requests(reqs))


def cmd_allocate(run):
    cfg = _config(run)
    sc = _scenario(cfg, run.args.fleet)
    streams = _streams(run, run.args.streams)
    calls = [r.origin for _, reqs in streams for r in reqs]
    regions = bin_regions(calls, cfg.get("mclp", "cell_area_km2"))
    inst = MclpInstance.from_regions(regions, sc.waiting_locations, sc.fleet_size,
                                     kappa=cfg.get("mclp", "kappa"), zeta=cfg.get("mclp", "zeta"),
                                     cap=cfg.get("mclp", "cap"), speed_kmh=sc.speed_kmh)
    alloc = solve_mclp(inst)
    body = alloc.to_json()
    body["home_bases"] = {str(m): s for m, s in alloc.home_bases().items()}
    run.write_json("allocation.json", body)


def cmd_solve_offline(run):
    cfg = _config(run)
    sc = _scenario(cfg, run.args.fleet)
    limit = run.args.node_limit or cfg.get("offline", "node_limit")
    for name, reqs in _streams(run, run.args.streams):
        g = build_digraph(sc, reqs)
        if run.args.soft:
            gamma = cfg.get("offline", "gamma") if run.args.gamma is None else run.args.gamma
            sol = solve_offline_soft(g, gamma, node_limit=limit)
        else:
            sol = solve_offline_hard(g, node_limit=limit)
        body = sol.to_json()
        body.pop("runtime_s", None)  # keep outputs byte-stable across runs
        run.write_json(f"offline_{name}.json", body)


def _offline_for(run, name, directory):
    path = os.path.join(directory, f"offline_{name}.json")
    return OfflineSolution.from_json(_read_json(run, path))


def cmd_slice(run):
    cfg = _config(run)
    sc = _scenario(cfg, run.args.fleet)
    streams = _streams(run, run.args.streams)
    ctx = _context(cfg, sc, streams)
    points = []
    for name, reqs in streams:
        sol = _offline_for(run, name, run.args.offline)
        points += slice_solution(sol, sc, reqs, ctx, episode=name)
    save_points(points, run.out("points.jsonl"))
    run.write_json("context.json", ctx.to_json())
    log.info("sliced %d points", len(points))


def _policies_pool(sc, seed):
    return [CICS(), CIFS.for_scenario(sc), RandomPolicy(seed)]


def cmd_build_dataset(run):
    cfg = _config(run)
    sc = _scenario(cfg, run.args.fleet)
    pool = load_points(run.read(run.args.points))
    if run.args.mode == "anticipative":
        pts = build_anticipative(pool, run.args.n_opt, run.args.seed)
    else:
        streams = _streams(run, run.args.streams)
        ctx = FeatureContext.from_json(sc, _read_json(run, run.args.context))
        eps = [Episode(sc, reqs, name=name) for name, reqs in streams]
        pts = build_enhanced(eps, pool, run.args.n_opt, run.args.n_subopt,
                             _policies_pool(sc, run.args.seed), ctx, seed=run.args.seed,
                             node_limit=cfg.get("offline", "node_limit"))
    save_points(pts, run.out("dataset.jsonl"))


def cmd_train(run):
    cfg = _config(run)
    sc = _scenario(cfg, run.args.fleet)
    pts = load_points(run.read(run.args.points))
    ctx_json = _read_json(run, run.args.context)
    FeatureContext.from_json(sc, ctx_json)
    m = cfg.sections["model"]
    params = init_model(run.args.model, pts, hidden=tuple(m["hidden"]),
                        activation=m["activation"], threshold=m["corr_threshold"],
                        seed=run.args.seed)
    tcfg = replace(cfg.train, seed=run.args.seed)
    res = train(pts, params, tcfg, cfg.perturb)
    params = res.params
    params.meta = dict(params.meta or {}, context=ctx_json, seed=run.args.seed,
                       best_epoch=res.best_epoch)
    params.save(run.out("model.json"))
    run.write_json("training.json", {"train_loss": res.train_loss, "val_loss": res.val_loss,
                                     "best_epoch": res.best_epoch})


def cmd_dagger(run):
    cfg = _config(run)
    sc = _scenario(cfg, run.args.fleet)
    streams = _streams(run, run.args.streams)
    ctx = _context(cfg, sc, streams)
    eps = [Episode(sc, reqs, name=name) for name, reqs in streams]
    m = cfg.sections["model"]
    res = dagger(eps, ctx, iterations=run.args.iterations, variant=run.args.model,
                 tcfg=replace(cfg.train, seed=run.args.seed), pcfg=cfg.perturb,
                 budget=run.args.budget, seed=run.args.seed,
                 node_limit=cfg.get("offline", "node_limit"), hidden=tuple(m["hidden"]))
    params = res.params
    params.meta = dict(params.meta or {}, context=ctx.to_json(), seed=run.args.seed)
    params.save(run.out("model.json"))
    save_points(res.points, run.out("dagger_points.jsonl"))
    run.write_json("dagger.json", {"sizes": res.sizes, "skipped": res.skipped,
                                   "iterations": [{k: v for k, v in t.items() if not k.endswith("_s")}
                                                  for t in res.timings]})


def _make_policy(run, sc):
    kind = run.args.policy
    if kind == "cics":
        return CICS()
    if kind == "cifs":
        bases = None
        if run.args.allocation:
            alloc = _read_json(run, run.args.allocation)
            bases = {int(k): v for k, v in alloc["home_bases"].items()}
        return CIFS(home_bases(sc, bases))
    if kind == "random":
        return RandomPolicy(run.args.seed)
    if not run.args.model:
        raise InputError("--policy learned needs --model")
    params = ModelParams.load(run.read(run.args.model))
    ctx_json = (params.meta or {}).get("context")
    if ctx_json is None:
        raise InputError("model file carries no feature context")
    return LearnedPolicy(params, FeatureContext.from_json(sc, ctx_json))


def cmd_evaluate(run):
    cfg = _config(run)
    sc = _scenario(cfg, run.args.fleet)
    streams = _streams(run, run.args.streams)
    policy = _make_policy(run, sc)
    traces = []
    for i, (name, reqs) in enumerate(streams):
        pol = policy
        if run.args.offline:
            pol = WarmupHandover(_offline_for(run, name, run.args.offline), policy, sc.warmup)
        if hasattr(pol, "reset"):
            pol.reset(run.args.seed + i)
        traces.append(run_episode(sc, reqs, pol, name=name))
    rep = evaluate_policy(traces, policy=getattr(policy, "name", run.args.policy),
                          scenario=sc.name)
    rep.fleet = sc.fleet_size
    run.outputs += emit_report([rep], run.args.out, f"report_{run.args.policy}", baselines=())


def _load_report(run, path) -> list[PolicyReport]:
    out = []
    for d in _read_json(run, path):
        out.append(PolicyReport(d["policy"], d["scenario"], d["fleet"], d["mrt_s"],
                                d["utilization"], d["served"], d.get("episodes", [])))
    return out


def cmd_compare(run):
    reports = [r for p in _expand(run.args.reports) for r in _load_report(run, p)]
    run.outputs += emit_report(reports, run.args.out, "comparison")


def _samples(run, path):
    data = _read_json(run, path)
    if data and isinstance(data, list) and isinstance(data[0], dict):
        return [x for d in data for e in d.get("episodes", []) for x in e.get("responses", [])]
    return data


def cmd_ks(run):
    res = ks_two_sample(_samples(run, run.args.a), _samples(run, run.args.b))
    run.write_json("ks.json", {"d": res.d, "p_value": res.p_value, "n": res.n, "m": res.m,
                               "reject": res.reject, "small_sample": res.small_sample})
    print(f"D={res.d:.6f} p={res.p_value:.6g} reject={res.reject}")


# -- parser ------------------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="run configuration (default: bundled tiny)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1, help="accepted; runs sequentially")
    common.add_argument("--fleet", type=int, default=None, help="override the fleet size")

    p = argparse.ArgumentParser(prog="ambulearn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="call CSV to a request stream")
    s.add_argument("--calls", required=True)
    s.add_argument("--name", default="stream_000")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("synth", parents=[common], help="synthetic request streams")
    s.add_argument("--episodes", type=int, default=None)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("allocate", parents=[common], help="MCLP home bases")
    s.add_argument("--streams", nargs="+", required=True)
    s.set_defaults(func=cmd_allocate)

    s = sub.add_parser("solve-offline", parents=[common], help="full-information solutions")
    s.add_argument("--streams", nargs="+", required=True)
    s.add_argument("--soft", action="store_true")
    s.add_argument("--gamma", type=float, default=None)
    s.add_argument("--node-limit", type=int, default=None)
    s.set_defaults(func=cmd_solve_offline)

    s = sub.add_parser("slice", parents=[common], help="training points from offline solutions")
    s.add_argument("--streams", nargs="+", required=True)
    s.add_argument("--offline", required=True, help="directory with offline_<stream>.json")
    s.set_defaults(func=cmd_slice)

    s = sub.add_parser("build-dataset", parents=[common], help="anticipative or enhanced set")
    s.add_argument("--mode", choices=["anticipative", "enhanced"], required=True)
    s.add_argument("--points", required=True)
    s.add_argument("--n-opt", type=int, required=True)
    s.add_argument("--n-subopt", type=int, default=0)
    s.add_argument("--streams", nargs="+", default=[])
    s.add_argument("--context", default=None)
    s.set_defaults(func=cmd_build_dataset)

    s = sub.add_parser("train", parents=[common], help="fit a model")
    s.add_argument("--points", required=True)
    s.add_argument("--context", required=True)
    s.add_argument("--model", choices=["lr", "mlp"], default="mlp")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("dagger", parents=[common], help="dataset aggregation")
    s.add_argument("--streams", nargs="+", required=True)
    s.add_argument("--iterations", type=int, default=5)
    s.add_argument("--budget", type=int, default=None)
    s.add_argument("--model", choices=["lr", "mlp"], default="mlp")
    s.set_defaults(func=cmd_dagger)

    s = sub.add_parser("evaluate", parents=[common], help="roll a policy over streams")
    s.add_argument("--policy", choices=["cics", "cifs", "learned", "random"], required=True)
    s.add_argument("--streams", nargs="+", required=True)
    s.add_argument("--model", default=None)
    s.add_argument("--allocation", default=None)
    s.add_argument("--offline", default=None, help="replay offline decisions during warmup")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("compare", parents=[common], help="merge reports with deviations")
    s.add_argument("--reports", nargs="+", required=True)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("ks", parents=[common], help="two-sample KS test")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.set_defaults(func=cmd_ks)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    level = os.environ.get("EMS_PIPE_LOG", "warn").lower()
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(LOG_LEVELS.get(level, logging.WARNING))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    if args.config is None:
        args.config = bundled_config()
    if args.command == "build-dataset" and args.mode == "enhanced" and (
            not args.streams or not args.context):
        parser.print_usage(sys.stderr)
        print("ambulearn: --mode enhanced needs --streams and --context", file=sys.stderr)
        return 2
    try:
        run = Run(args)
        args.func(run)
        run.manifest()
    except AmbulearnError as exc:
        log.error("%s", exc)
        return exc.exit_code if exc.exit_code != 1 else 5
    except OSError as exc:
        log.error("%s", exc)
        return 3
    except Exception as exc:  # noqa: BLE001 - any other failure is an invariant breach
        log.exception("internal error: %s", exc)
        return ContractError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
