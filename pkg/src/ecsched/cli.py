"""Command line driver.

Subcommands cover the whole workflow: generate instances, train a
sampler, sample and evaluate schemes, run the exact baselines, export
the MILP, import a solver's solution, and benchmark policies.  Exit
codes: 0 on success, 2 when no feasible result exists (or a search
refuses its budget), 3 on malformed input files.
"""

import argparse
import csv
import json
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import baselines, io, milp, sampler
from .generate import GenConfig, generate_instance, sample_demands, sample_static
from .io import FormatError
from .model import Instance, build_option_table, check_feasibility, total_cost
from .sampler import TrainConfig

EXIT_OK = 0
EXIT_NO_RESULT = 2
EXIT_FORMAT = 3


class NoResult(RuntimeError):
    """Carries the exit-2 message."""


def _config_overrides(path, config):
    """Apply JSON keys onto a dataclass config, rejecting unknown names."""
    if path is None:
        return config
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    known = {f.name: f for f in fields(config)}
    updates = {}
    for key, value in doc.items():
        if key not in known:
            raise FormatError(f"{path}: unknown config key '{key}'")
        if isinstance(value, list):
            value = tuple(value)
        updates[key] = value
    return replace(config, **updates)


def _load_instances(directory):
    root = Path(directory)
    manifest = root / "manifest.csv"
    paths = []
    if manifest.exists():
        with open(manifest) as fh:
            for row in csv.DictReader(fh):
                paths.append(root / row["path"])
    else:
        paths = sorted(root.glob("*.json"))
    if not paths:
        raise FormatError(f"{directory}: no instances found")
    return [io.read_instance(p) for p in paths]


def cmd_gen(args):
    config = _config_overrides(args.config, GenConfig())
    overrides = {}
    for flag, name in (("users", "n_users"), ("slots", "n_slots"),
                       ("types", "n_types"), ("isps", "n_isps")):
        value = getattr(args, flag)
        if value is not None:
            overrides[name] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    config = replace(config, **overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(args.count):
        inst = generate_instance(config, seed=config.seed + i)
        path = out / f"{inst.instance_id}.json"
        io.write_instance(inst, path)
        rows.append({"id": inst.instance_id, "seed": inst.seed,
                     "n_users": config.n_users, "n_slots": config.n_slots,
                     "path": path.name})
    with open(out / "manifest.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["id", "seed", "n_users", "n_slots", "path"])
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {args.count} instances to {out}")
    return EXIT_OK


def cmd_train(args):
    config = _config_overrides(args.config, TrainConfig())
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    instances = _load_instances(args.instances)
    eval_instances = _load_instances(args.eval) if args.eval else ()
    el = instances[0].topology.n_isps
    network = sampler.create_network(n_options=2 ** el - 1, n_links=el, seed=config.seed)
    history = sampler.train(network, instances, config, eval_instances)
    sampler.save_model(network, args.out)
    if args.history:
        with open(args.history, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "tau", "train_loss", "eval_loss"])
            for h in history:
                writer.writerow([h.epoch, f"{h.tau:.6f}", repr(h.train_loss), repr(h.eval_loss)])
    first = history[0]
    last = history[-1]
    print(f"trained {config.n_epochs} epochs on {len(instances)} instances")
    print(f"train loss {first.train_loss:.4f} -> {last.train_loss:.4f}")
    if eval_instances:
        print(f"eval loss {first.eval_loss:.4f} -> {last.eval_loss:.4f}")
    print(f"model written to {args.out}")
    return EXIT_OK


def _sample_best(args, instance):
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    if args.policy == "rsn":
        best, n_feasible = baselines.rsn_best_of_detailed(instance, args.samples, rng)
    else:
        if not args.model:
            raise FormatError("--model is required unless --policy rsn")
        network = sampler.load_model(args.model)
        best, n_feasible = sampler.best_of_detailed(network, instance, args.samples, rng)
    return best, n_feasible


def cmd_sample(args):
    instance = io.read_instance(args.instance)
    best, n_feasible = _sample_best(args, instance)
    if best is None:
        raise NoResult(f"no feasible scheme in {args.samples} samples")
    scheme, cost = best
    io.write_scheme(scheme, args.out, instance_id=instance.instance_id, cost=cost)
    print(f"best of {args.samples} samples: cost {cost:.4f} "
          f"({n_feasible} feasible); scheme written to {args.out}")
    return EXIT_OK


def cmd_eval(args):
    instance = io.read_instance(args.instance)
    scheme, scheme_for, _ = io.read_scheme(args.scheme)
    if scheme_for is not None and scheme_for != instance.instance_id:
        print(f"note: scheme was produced for '{scheme_for}'", file=sys.stderr)
    t, n, k = instance.dims
    if scheme.option.shape != (t, n, k):
        raise FormatError(
            f"scheme shape {scheme.option.shape} does not match instance dims {(t, n, k)}")
    report = check_feasibility(instance, scheme)
    cost = total_cost(instance, scheme)
    print(json.dumps({"cost": cost, "feasible": report.feasible,
                      "violations": report.counts()}))
    return EXIT_OK if report.feasible else EXIT_NO_RESULT


def cmd_oracle(args):
    instance = io.read_instance(args.instance)
    try:
        result = baselines.brute_force(
            instance, baselines.SearchBudget(max_combinations=args.budget))
    except baselines.BudgetExceededError as exc:
        raise NoResult(str(exc)) from exc
    if result is None:
        raise NoResult("no feasible option combination exists")
    scheme, cost = result
    io.write_scheme(scheme, args.out, instance_id=instance.instance_id, cost=cost)
    print(f"exact optimum cost {cost:.4f}; scheme written to {args.out}")
    return EXIT_OK


def cmd_export_milp(args):
    instance = io.read_instance(args.instance)
    model = milp.linearize(instance)
    milp.write_lp(model, args.out)
    print(f"{len(model.variables)} variables ({model.n_binaries()} binary), "
          f"{len(model.constraints)} rows; LP written to {args.out}")
    if args.warmstart:
        scheme, _, _ = io.read_scheme(args.warmstart)
        start_path = args.warmstart_out or str(Path(args.out).with_suffix(".mst"))
        milp.write_warmstart(model, scheme, start_path)
        print(f"warm start written to {start_path}")
    return EXIT_OK


def cmd_import_solution(args):
    instance = io.read_instance(args.instance)
    model = milp.linearize(instance)
    scheme, objective = milp.read_solution(args.solution, model)
    io.write_scheme(scheme, args.out, instance_id=instance.instance_id, cost=objective)
    print(f"imported solution with objective {objective:.4f}; scheme written to {args.out}")
    return EXIT_OK


def _bench_rows(args, instances, label):
    rows = []
    network = None
    if args.policy == "gssn":
        network = sampler.load_model(args.model)
    for idx, instance in enumerate(instances):
        rng = np.random.default_rng([args.seed if args.seed is not None else 0, idx])
        table = build_option_table(instance.topology)
        start = time.perf_counter()
        if network is None:
            best, n_feasible = baselines.rsn_best_of_detailed(
                instance, args.samples, rng, table)
        else:
            best, n_feasible = sampler.best_of_detailed(
                network, instance, args.samples, rng, table)
        elapsed = time.perf_counter() - start
        rows.append({
            "instance_id": instance.instance_id,
            "policy": label,
            "n_samples": args.samples,
            "n_feasible": n_feasible,
            "best_cost": "" if best is None else repr(best[1]),
            "wall_time_s": f"{elapsed:.6f}",
        })
    return rows


def _aggregate(rows, n_samples):
    costs = [float(r["best_cost"]) for r in rows if r["best_cost"] != ""]
    total = sum(int(r["n_feasible"]) for r in rows)
    ssfr = total / (n_samples * len(rows))
    pfr = sum(1 for r in rows if int(r["n_feasible"]) > 0) / len(rows)
    mean = float(np.mean(costs)) if costs else float("nan")
    std = float(np.std(costs)) if costs else float("nan")
    return mean, std, ssfr, pfr


def cmd_bench(args):
    if args.policy == "gssn" and not args.model:
        raise FormatError("--model is required unless --policy rsn")
    instances = _load_instances(args.instances)
    rows = _bench_rows(args, instances, args.policy)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    mean, std, ssfr, pfr = _aggregate(rows, args.samples)
    print(f"{args.policy}: {len(instances)} instances, {args.samples} samples each")
    print(f"mean best cost {mean:.4f} (std {std:.4f})")
    print(f"single-sample feasibility rate {ssfr:.4f}, per-instance feasibility rate {pfr:.4f}")
    return EXIT_OK


def cmd_generalize(args):
    network = sampler.load_model(args.model)
    base = _config_overrides(args.config, GenConfig())
    grid = [int(v) for v in args.grid.split(",") if v]
    if not grid:
        raise FormatError("--grid needs at least one value")
    axis_field = {"slots": "n_slots", "users": "n_users"}[args.axis]
    seed0 = args.seed if args.seed is not None else 0
    # slot sweeps hold the static draw fixed per instance index and
    # resample only demands; user sweeps change the topology, so both
    # static and dynamic parts are redrawn per point
    statics = None
    if args.axis == "slots":
        statics = [sample_static(base, np.random.default_rng(seed0 + i))
                   for i in range(args.count)]
    out_rows = []
    for point_idx, value in enumerate(grid):
        config = replace(base, **{axis_field: value})
        if statics is not None:
            instances = []
            for i in range(args.count):
                demands = sample_demands(
                    statics[i], np.random.default_rng([seed0, value, i]), config)
                instances.append(Instance(
                    topology=statics[i], demands=demands,
                    instance_id=f"sweep-t{value:04d}-{i:04d}",
                    seed=seed0 + i).validate())
        else:
            instances = [generate_instance(config, seed=seed0 + point_idx * args.count + i)
                         for i in range(args.count)]
        for policy in ("gssn", "rsn"):
            per_instance = []
            feasible_total = 0
            hit = 0
            for idx, instance in enumerate(instances):
                rng = np.random.default_rng([seed0, point_idx, idx, policy == "gssn"])
                table = build_option_table(instance.topology)
                if policy == "gssn":
                    best, n_feasible = sampler.best_of_detailed(
                        network, instance, args.samples, rng, table)
                else:
                    best, n_feasible = baselines.rsn_best_of_detailed(
                        instance, args.samples, rng, table)
                feasible_total += n_feasible
                if best is not None:
                    hit += 1
                    per_instance.append(best[1])
            mean = float(np.mean(per_instance)) if per_instance else float("nan")
            std = float(np.std(per_instance)) if per_instance else float("nan")
            out_rows.append({
                "axis": args.axis, "value": value, "policy": policy,
                "n_instances": args.count, "n_samples": args.samples,
                "mean_best_cost": repr(mean), "std_best_cost": repr(std),
                "ssfr": repr(feasible_total / (args.samples * args.count)),
                "pfr": repr(hit / args.count),
            })
            print(f"{args.axis}={value} {policy}: mean best cost {mean:.4f}")
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(out_rows[0].keys()))
        writer.writeheader()
        writer.writerows(out_rows)
    print(f"sweep written to {args.out}")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for all random streams")
    common.add_argument("--config", default=None, help="JSON file overriding config fields")

    parser = argparse.ArgumentParser(prog="ecsched",
                                     description="percentile-billed traffic scheduling toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate synthetic instances")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--users", type=int, default=None)
    p.add_argument("--slots", type=int, default=None)
    p.add_argument("--types", type=int, default=None)
    p.add_argument("--isps", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", parents=[common], help="train a sampling network")
    p.add_argument("--instances", required=True, help="directory of training instances")
    p.add_argument("--eval", default=None, help="directory of held-out instances")
    p.add_argument("--history", default=None, help="CSV of per-epoch losses")
    p.add_argument("--out", required=True, help="model file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", parents=[common], help="draw schemes and keep the best")
    p.add_argument("--instance", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--policy", choices=["gssn", "rsn"], default="gssn")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--out", required=True, help="scheme file")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", parents=[common], help="cost and feasibility of a scheme")
    p.add_argument("--instance", required=True)
    p.add_argument("--scheme", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle", parents=[common], help="exact optimum by enumeration")
    p.add_argument("--instance", required=True)
    p.add_argument("--budget", type=int, default=1_000_000)
    p.add_argument("--out", required=True, help="scheme file")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("export-milp", parents=[common], help="write the exact model as LP text")
    p.add_argument("--instance", required=True)
    p.add_argument("--out", required=True, help="LP file")
    p.add_argument("--warmstart", default=None, help="scheme file to convert to a starting point")
    p.add_argument("--warmstart-out", default=None, help="where to write the starting point")
    p.set_defaults(func=cmd_export_milp)

    p = sub.add_parser("import-solution", parents=[common], help="read a solver solution file")
    p.add_argument("--instance", required=True)
    p.add_argument("--solution", required=True)
    p.add_argument("--out", required=True, help="scheme file")
    p.set_defaults(func=cmd_import_solution)

    p = sub.add_parser("bench", parents=[common], help="benchmark a policy over instances")
    p.add_argument("--instances", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--policy", choices=["gssn", "rsn"], default="gssn")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--out", default=None, help="per-instance CSV")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("generalize", parents=[common],
                       help="sweep an instance-size axis with fresh instances")
    p.add_argument("--model", required=True)
    p.add_argument("--axis", choices=["slots", "users"], required=True)
    p.add_argument("--grid", required=True, help="comma-separated sizes")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--out", required=True, help="sweep CSV")
    p.set_defaults(func=cmd_generalize)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NoResult as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_RESULT


if __name__ == "__main__":
    sys.exit(main())
