"""Command-line front end: config parsing, experiment dispatch, and
delimited result files.

Subcommands: ``run`` (one Monte-Carlo experiment), ``sweep`` (grid over
epsilon, n, or power), ``gen`` (write an instance to disk), ``report``
(input-condition diagnostics), ``oracle`` (brute-force reference on a
tiny instance). Flags override config-file values. All randomness flows
from the seed; outputs are byte-deterministic for equal inputs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from .core import (
    ConfigError,
    Instance,
    Log,
    Power,
    ScaledPower,
    UtilitySpec,
    load_instance_binary,
    load_instance_csv,
    scale_instance,
)
from .datagen import GENERATOR_KINDS, PARAM_SCOPES, GeneratorConfig, generate
from .harness import (
    POLICY_IDS,
    ConditionReport,
    ExperimentConfig,
    SummaryStats,
    condition_report,
    monte_carlo,
)
from .policies import PolicyConfig
from .solver import SolverConfig, brute_force_oracle

SUMMARY_COLUMNS = [
    "policy", "epsilon", "n", "m", "p", "runs",
    "mean_rl", "std_rl", "mean_revenue", "mean_opt",
]
PLOT_COLUMNS = ["x", "series", "mean", "std"]
SWEEP_AXES = ("epsilon", "n", "power")


# ---------------------------------------------------------------------------
# config document parsing
# ---------------------------------------------------------------------------


def _check_keys(doc: dict, allowed: set, path: str) -> None:
    extra = sorted(set(doc) - allowed)
    if extra:
        where = path or "config"
        raise ConfigError(f"{where}: unknown keys: {', '.join(extra)}")


def _as_int(value, path: str, minimum: Optional[int] = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path} must be an integer")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path} must be >= {minimum}, got {value}")
    return value


def _as_number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path} must be a number")
    return float(value)


def _as_pair(value, path: str) -> tuple:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{path} must be a two-element array")
    return (_as_number(value[0], f"{path}[0]"), _as_number(value[1], f"{path}[1]"))


def _parse_generator(doc, path: str = "generator") -> GeneratorConfig:
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ConfigError(f"missing {path}.kind")
    allowed = {"kind", "m", "n", "k", "zero_prob", "base_range", "jitter", "param_scope", "seed"}
    _check_keys(doc, allowed, path)
    if "m" not in doc:
        raise ConfigError(f"missing {path}.m")
    if "n" not in doc:
        raise ConfigError(f"missing {path}.n")
    kwargs = {
        "kind": doc["kind"],
        "m": _as_int(doc["m"], f"{path}.m", minimum=1),
        "n": _as_int(doc["n"], f"{path}.n", minimum=1),
    }
    if "k" in doc:
        kwargs["k"] = _as_int(doc["k"], f"{path}.k", minimum=1)
    if "zero_prob" in doc:
        kwargs["zero_prob"] = _as_number(doc["zero_prob"], f"{path}.zero_prob")
    if "base_range" in doc:
        kwargs["base_range"] = _as_pair(doc["base_range"], f"{path}.base_range")
    if "jitter" in doc:
        kwargs["jitter"] = _as_pair(doc["jitter"], f"{path}.jitter")
    if "param_scope" in doc:
        kwargs["param_scope"] = doc["param_scope"]
    if "seed" in doc and doc["seed"] is not None:
        kwargs["seed"] = _as_int(doc["seed"], f"{path}.seed", minimum=0)
    try:
        return GeneratorConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_descriptor(doc, path: str):
    known = {"power", "log", "scaled_power"}
    _check_keys(doc, known, path)
    given = [k for k in known if k in doc]
    if len(given) != 1:
        raise ConfigError(f"{path} must contain exactly one of {sorted(known)}")
    try:
        if given[0] == "power":
            return Power(_as_number(doc["power"], f"{path}.power"))
        if given[0] == "log":
            if doc["log"] is not True:
                raise ConfigError(f"{path}.log must be true")
            return Log()
        a, p = _as_pair(doc["scaled_power"], f"{path}.scaled_power")
        return ScaledPower(a, p)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_spec(doc, m: int, path: str = "spec") -> UtilitySpec:
    if not isinstance(doc, dict):
        raise ConfigError(f"{path} must be an object")
    if "bidders" in doc:
        _check_keys(doc, {"bidders"}, path)
        entries = doc["bidders"]
        if not isinstance(entries, list) or len(entries) != m:
            raise ConfigError(f"{path}.bidders must list exactly m={m} descriptors")
        return UtilitySpec(
            tuple(_parse_descriptor(e, f"{path}.bidders[{i}]") for i, e in enumerate(entries))
        )
    return UtilitySpec.homogeneous(_parse_descriptor(doc, path), m)


def _parse_policies(doc, path: str = "policies") -> tuple:
    if not isinstance(doc, list) or not doc:
        raise ConfigError(f"{path} must be a non-empty array")
    out = []
    for i, entry in enumerate(doc):
        p = f"{path}[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{p} must be an object")
        _check_keys(entry, {"id", "epsilon", "warmup", "perturb"}, p)
        pid = entry.get("id")
        if pid not in POLICY_IDS:
            raise ConfigError(f"{p}.id must be one of {POLICY_IDS}, got {pid!r}")
        if pid in ("ola", "dla"):
            if "epsilon" not in entry:
                raise ConfigError(f"{p}: missing epsilon for policy {pid!r}")
            cfg = PolicyConfig(
                epsilon=_as_number(entry["epsilon"], f"{p}.epsilon"),
                warmup_allocation=bool(entry.get("warmup", False)),
                perturb=None if entry.get("perturb") is None
                else _as_number(entry["perturb"], f"{p}.perturb"),
            )
        else:
            for key in ("epsilon", "warmup", "perturb"):
                if key in entry:
                    raise ConfigError(f"{p}.{key} is not allowed for policy {pid!r}")
            cfg = None
        out.append((pid, cfg))
    return tuple(out)


def _parse_solver(doc, path: str = "solver") -> SolverConfig:
    _check_keys(doc, {"rel_tol", "max_iters", "init"}, path)
    kwargs = {}
    if "rel_tol" in doc:
        kwargs["rel_tol"] = _as_number(doc["rel_tol"], f"{path}.rel_tol")
    if "max_iters" in doc:
        kwargs["max_iters"] = _as_int(doc["max_iters"], f"{path}.max_iters", minimum=1)
    if "init" in doc:
        kwargs["init"] = doc["init"]
    try:
        return SolverConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_config(text) -> ExperimentConfig:
    """Parse and fully validate a JSON experiment configuration.

    Defaults mirror the documented base problem: 100 categories, zero
    probability 0.7, jitter [0.9, 1.1]. Unknown keys are rejected by
    name; range violations name the offending field.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    generator = _parse_generator(doc.get("generator", {}))
    _check_keys(
        doc,
        {"generator", "spec", "policies", "runs", "base_seed", "resample", "solver",
         "emit_decisions"},
        "",
    )
    if "spec" not in doc:
        raise ConfigError("missing spec")
    if "policies" not in doc:
        raise ConfigError("missing policies")
    if "runs" not in doc:
        raise ConfigError("missing runs")
    if "base_seed" not in doc:
        raise ConfigError("missing base_seed")
    spec = _parse_spec(doc["spec"], generator.m)
    policies = _parse_policies(doc["policies"])
    runs = _as_int(doc["runs"], "runs", minimum=1)
    base_seed = _as_int(doc["base_seed"], "base_seed", minimum=0)
    resample = doc.get("resample", "fresh_instance")
    solver = _parse_solver(doc.get("solver", {}))
    emit_decisions = bool(doc.get("emit_decisions", False))
    return ExperimentConfig(
        generator=generator,
        policies=policies,
        spec=spec,
        runs=runs,
        resample=resample,
        base_seed=base_seed,
        solver=solver,
        emit_decisions=emit_decisions,
    )


def _descriptor_doc(d) -> dict:
    if isinstance(d, Power):
        return {"power": d.p}
    if isinstance(d, Log):
        return {"log": True}
    return {"scaled_power": [d.a, d.p]}


def render_config(cfg: ExperimentConfig) -> str:
    """Canonical JSON for a config; ``parse_config`` round-trips it."""
    gen = cfg.generator
    gen_doc = {
        "kind": gen.kind, "m": gen.m, "n": gen.n, "k": gen.k,
        "zero_prob": gen.zero_prob,
        "base_range": list(gen.base_range), "jitter": list(gen.jitter),
        "param_scope": gen.param_scope,
    }
    if gen.seed is not None:
        gen_doc["seed"] = gen.seed
    descs = cfg.spec.descriptors
    if all(d == descs[0] for d in descs):
        spec_doc = _descriptor_doc(descs[0])
    else:
        spec_doc = {"bidders": [_descriptor_doc(d) for d in descs]}
    policies_doc = []
    for pid, pcfg in cfg.policies:
        entry = {"id": pid}
        if pcfg is not None:
            entry["epsilon"] = pcfg.epsilon
            if pcfg.warmup_allocation:
                entry["warmup"] = True
            if pcfg.perturb is not None:
                entry["perturb"] = pcfg.perturb
        policies_doc.append(entry)
    doc = {
        "generator": gen_doc,
        "spec": spec_doc,
        "policies": policies_doc,
        "runs": cfg.runs,
        "base_seed": cfg.base_seed,
        "resample": cfg.resample,
        "solver": {
            "rel_tol": cfg.solver.rel_tol,
            "max_iters": cfg.solver.max_iters,
            "init": cfg.solver.init,
        },
    }
    if cfg.emit_decisions:
        doc["emit_decisions"] = True
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# delimited output
# ---------------------------------------------------------------------------


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    return str(value)


def emit_csv(records, columns=None) -> bytes:
    """RFC-4180 CSV: header row, '.' decimals, 6 significant digits, LF."""
    records = list(records)
    if columns is None:
        if not records:
            raise ValueError("columns are required for an empty record list")
        columns = list(records[0].keys())
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for record in records:
        if set(record) != set(columns):
            raise ValueError("records must share one schema")
        writer.writerow([_format_cell(record[c]) for c in columns])
    return buf.getvalue().encode("utf-8")


def _jsonl(records) -> bytes:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records).encode("utf-8")


class _OutputWriter:
    """Collects payloads and writes them atomically at the end of a command."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.pending: list[tuple[Path, bytes]] = []

    def add(self, name: str, payload: bytes) -> Path:
        path = self.out_dir / name
        self.pending.append((path, payload))
        return path

    def commit(self) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        temps = []
        try:
            for path, payload in self.pending:
                tmp = path.with_name(path.name + ".tmp")
                tmp.write_bytes(payload)
                temps.append(tmp)
            for (path, _), tmp in zip(self.pending, temps):
                tmp.replace(path)
        except BaseException:
            for tmp in temps:
                tmp.unlink(missing_ok=True)
            raise


# ---------------------------------------------------------------------------
# effective configuration from flags
# ---------------------------------------------------------------------------


def _load_instance(path, scaled: bool = True) -> Instance:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"instance file not found: {path}")
    loaded = load_instance_binary(path) if path.suffix == ".bin" else load_instance_csv(path)
    # policies require max bid one; instances written by `gen` already are
    return scale_instance(loaded.bids) if scaled else loaded


def _respec(spec: UtilitySpec, m: int) -> UtilitySpec:
    if spec.m == m:
        return spec
    first = spec.descriptors[0]
    if all(d == first for d in spec.descriptors):
        return UtilitySpec.homogeneous(first, m)
    raise ConfigError("per-bidder spec does not match the overridden bidder count")


def _effective_config(args):
    if getattr(args, "config", None) is not None:
        cfg = parse_config(Path(args.config).read_bytes())
    else:
        if getattr(args, "algo", None) is None:
            raise ConfigError("need --config or --algo")
        gen = GeneratorConfig(kind="category", m=50, n=10_000)
        cfg = ExperimentConfig(
            generator=gen,
            policies=(("myopic", None),),
            spec=UtilitySpec.power(0.9, gen.m),
            runs=1,
        )

    gen = cfg.generator
    if getattr(args, "generator", None):
        gen = replace(gen, kind=args.generator)
    if getattr(args, "m", None):
        gen = replace(gen, m=args.m)
    if getattr(args, "n", None):
        gen = replace(gen, n=args.n)
    if getattr(args, "param_scope", None):
        gen = replace(gen, param_scope=args.param_scope)

    fixed = None
    resample = cfg.resample
    if getattr(args, "instance", None):
        fixed = _load_instance(args.instance)
        gen = replace(gen, m=fixed.m, n=fixed.n)
        resample = "permute_only"

    if getattr(args, "power", None) is not None:
        try:
            spec = UtilitySpec.power(args.power, gen.m)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    else:
        spec = _respec(cfg.spec, gen.m)

    policies = cfg.policies
    if getattr(args, "algo", None):
        if args.algo in ("ola", "dla"):
            if getattr(args, "epsilon", None) is None:
                raise ConfigError(f"--epsilon is required with --algo {args.algo}")
            pcfg = PolicyConfig(
                epsilon=args.epsilon,
                warmup_allocation=bool(getattr(args, "warmup", False)),
                perturb=getattr(args, "perturb", None),
            )
        else:
            pcfg = None
        policies = ((args.algo, pcfg),)
    elif (
        getattr(args, "epsilon", None) is not None
        or getattr(args, "warmup", False)
        or getattr(args, "perturb", None) is not None
    ):
        updated = []
        for pid, pcfg in policies:
            if pid in ("ola", "dla"):
                pcfg = PolicyConfig(
                    epsilon=args.epsilon if args.epsilon is not None else pcfg.epsilon,
                    warmup_allocation=bool(getattr(args, "warmup", False))
                    or pcfg.warmup_allocation,
                    perturb=getattr(args, "perturb", None)
                    if getattr(args, "perturb", None) is not None
                    else pcfg.perturb,
                )
            updated.append((pid, pcfg))
        policies = tuple(updated)

    cfg = ExperimentConfig(
        generator=gen,
        policies=policies,
        spec=spec,
        runs=args.runs if getattr(args, "runs", None) is not None else cfg.runs,
        resample=resample,
        base_seed=args.seed if getattr(args, "seed", None) is not None else cfg.base_seed,
        solver=cfg.solver,
        emit_decisions=bool(getattr(args, "emit_decisions", False)) or cfg.emit_decisions,
    )
    return cfg, fixed


def _power_label(spec: UtilitySpec):
    descs = spec.descriptors
    first = descs[0]
    if all(d == first for d in descs):
        if isinstance(first, (Power, ScaledPower)):
            return first.p
        return "log"
    return "mixed"


def _summary_rows(cfg: ExperimentConfig, stats: SummaryStats) -> list:
    label = _power_label(cfg.spec)
    rows = []
    for agg in stats.per_policy:
        rows.append(
            {
                "policy": agg.policy_id,
                "epsilon": agg.epsilon,
                "n": cfg.generator.n,
                "m": cfg.generator.m,
                "p": label,
                "runs": agg.runs,
                "mean_rl": agg.mean_rl,
                "std_rl": agg.std_rl,
                "mean_revenue": agg.mean_revenue,
                "mean_opt": agg.mean_opt,
            }
        )
    return rows


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_run(args) -> int:
    cfg, fixed = _effective_config(args)
    records: list[dict] = []
    stats = monte_carlo(cfg, fixed_instance=fixed, record_sink=records.append)
    rows = _summary_rows(cfg, stats)
    writer = _OutputWriter(args.out)
    summary_path = writer.add("summary.csv", emit_csv(rows, SUMMARY_COLUMNS))
    writer.add("runs.jsonl", _jsonl(records))
    writer.commit()
    for row in rows:
        eps = "" if row["epsilon"] is None else f" eps={row['epsilon']:g}"
        print(f"{row['policy']}{eps}: mean_rl={row['mean_rl']:.6g} std_rl={row['std_rl']:.6g}")
    print(f"wrote {summary_path}")
    return 0


def _axis_override(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "epsilon":
        policies = []
        for pid, pcfg in cfg.policies:
            if pid in ("ola", "dla"):
                pcfg = replace(pcfg, epsilon=float(value))
            policies.append((pid, pcfg))
        return replace(cfg, policies=tuple(policies))
    if axis == "n":
        return replace(cfg, generator=replace(cfg.generator, n=int(value)))
    if axis == "power":
        try:
            return replace(cfg, spec=UtilitySpec.power(float(value), cfg.generator.m))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")


def _parse_sweep(text: str):
    axis, sep, tail = text.partition("=")
    if not sep or axis not in SWEEP_AXES:
        raise ConfigError(
            f"--sweep must look like axis=v1,v2,... with axis in {SWEEP_AXES}"
        )
    parts = [p for p in tail.split(",") if p]
    if not parts:
        raise ConfigError("--sweep needs at least one value")
    try:
        values = [int(p) for p in parts] if axis == "n" else [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"--sweep values for {axis} must be numeric") from None
    return axis, values


def _cmd_sweep(args) -> int:
    cfg, fixed = _effective_config(args)
    axis, values = _parse_sweep(args.sweep)
    if fixed is not None and axis == "n":
        raise ConfigError("cannot sweep n with a fixed --instance file")
    ids = [pid for pid, _ in cfg.policies]
    dup_ids = len(set(ids)) != len(ids)
    sweep_rows = []
    plot_rows = []
    for value in values:
        cell = _axis_override(cfg, axis, value)
        stats = monte_carlo(cell, fixed_instance=fixed)
        for row in _summary_rows(cell, stats):
            sweep_rows.append(row)
            series = row["policy"]
            if dup_ids and row["epsilon"] is not None:
                series = f"{series}@eps={row['epsilon']:g}"
            plot_rows.append(
                {"x": value, "series": series, "mean": row["mean_rl"], "std": row["std_rl"]}
            )
    writer = _OutputWriter(args.out)
    sweep_path = writer.add("sweep.csv", emit_csv(sweep_rows, SUMMARY_COLUMNS))
    writer.add(f"plot_{axis}.csv", emit_csv(plot_rows, PLOT_COLUMNS))
    writer.commit()
    print(f"wrote {sweep_path} ({len(sweep_rows)} rows)")
    return 0


def _cmd_gen(args) -> int:
    if getattr(args, "config", None) is not None:
        gen = parse_config(Path(args.config).read_bytes()).generator
    else:
        gen = GeneratorConfig(kind="category", m=50, n=10_000)
    if args.generator:
        gen = replace(gen, kind=args.generator)
    if args.m:
        gen = replace(gen, m=args.m)
    if args.n:
        gen = replace(gen, n=args.n)
    if getattr(args, "param_scope", None):
        gen = replace(gen, param_scope=args.param_scope)
    seed = args.seed if args.seed is not None else (gen.seed or 0)
    instance = generate(replace(gen, seed=seed), np.random.default_rng(seed))
    buf = io.StringIO()
    np.savetxt(buf, instance.bids, fmt="%.17g", delimiter=",")
    writer = _OutputWriter(args.out)
    path = writer.add("instance.csv", buf.getvalue().encode("utf-8"))
    writer.commit()
    print(f"wrote {path} ({instance.m}x{instance.n}, kind={gen.kind}, seed={seed})")
    return 0


def _report_doc(report: ConditionReport) -> dict:
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return None
        return v

    return {
        "m": report.m,
        "n": report.n,
        "epsilon": report.epsilon,
        "b_bar": report.b_bar,
        "eta": report.eta,
        "F": clean(report.F),
        "f_note": report.f_note,
        "C_ola": report.C_ola,
        "C_dla": report.C_dla,
        "n_bound_ola": clean(report.n_bound_ola),
        "n_bound_dla": clean(report.n_bound_dla),
        "ola_satisfied": report.ola_satisfied,
        "dla_satisfied": report.dla_satisfied,
        "observed_min_u_hat": [
            {"l": ell, "min_u_hat": low, "above_threshold": ok}
            for ell, low, ok in report.observed_min_u_hat
        ],
    }


def _cmd_report(args) -> int:
    if args.instance:
        instance = _load_instance(args.instance)
    else:
        gen = GeneratorConfig(
            kind=args.generator or "category",
            m=args.m or 50,
            n=args.n or 10_000,
        )
        instance = generate(gen, np.random.default_rng(args.seed or 0))
    if args.epsilon is None:
        raise ConfigError("--epsilon is required for report")
    power = args.power if args.power is not None else 0.9
    try:
        spec = UtilitySpec.power(power, instance.m)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    report = condition_report(instance, args.epsilon, spec)
    doc = _report_doc(report)
    writer = _OutputWriter(args.out)
    path = writer.add("report.json", (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())
    writer.commit()
    f_text = "undefined" if report.F is None else f"{report.F:.6g}"
    print(f"b_bar={report.b_bar:.6g} eta={report.eta:.6g} F={f_text} ({report.f_note})")
    print(f"C_ola={report.C_ola:.6g} C_dla={report.C_dla:.6g}")
    print(f"one-time bound satisfied: {report.ola_satisfied}; dynamic: {report.dla_satisfied}")
    print(f"wrote {path}")
    return 0


def _cmd_oracle(args) -> int:
    instance = _load_instance(args.instance, scaled=False)
    power = args.power if args.power is not None else 0.9
    try:
        spec = UtilitySpec.power(power, instance.m)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    value = brute_force_oracle(instance, spec, args.grid_step)
    print(f"{value!r}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_experiment_flags(sp) -> None:
    sp.add_argument("--config", type=Path, help="JSON experiment configuration")
    sp.add_argument("--algo", choices=POLICY_IDS, help="run a single policy")
    sp.add_argument("--epsilon", type=float, help="learning fraction in (0, 0.5)")
    sp.add_argument("--n", type=int, help="number of arrivals")
    sp.add_argument("--m", type=int, help="number of bidders")
    sp.add_argument("--power", type=float, help="homogeneous power exponent")
    sp.add_argument("--generator", choices=GENERATOR_KINDS)
    sp.add_argument("--runs", type=int, help="replication count")
    sp.add_argument("--seed", type=int, help="base seed")
    sp.add_argument("--perturb", type=float, help="tie-breaking noise width")
    sp.add_argument("--warmup", action="store_true",
                    help="allocate the learning window myopically (flagged deviation)")
    sp.add_argument("--param-scope", dest="param_scope", choices=PARAM_SCOPES)
    sp.add_argument("--emit-decisions", dest="emit_decisions", action="store_true")
    sp.add_argument("--instance", type=Path, help="run on a stored instance file")
    sp.add_argument("--out", type=Path, default=Path("."), help="output directory")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="concave-match",
        description="Online matching with concave returns: experiments and diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one Monte-Carlo experiment")
    _add_experiment_flags(run_p)

    sweep_p = sub.add_parser("sweep", help="sweep one axis (epsilon, n, or power)")
    _add_experiment_flags(sweep_p)
    sweep_p.add_argument("--sweep", required=True, metavar="AXIS=V1,V2,...")

    gen_p = sub.add_parser("gen", help="write a generated instance to disk")
    gen_p.add_argument("--config", type=Path)
    gen_p.add_argument("--generator", choices=GENERATOR_KINDS)
    gen_p.add_argument("--m", type=int)
    gen_p.add_argument("--n", type=int)
    gen_p.add_argument("--seed", type=int)
    gen_p.add_argument("--param-scope", dest="param_scope", choices=PARAM_SCOPES)
    gen_p.add_argument("--out", type=Path, default=Path("."))

    report_p = sub.add_parser("report", help="input-condition diagnostics")
    report_p.add_argument("--instance", type=Path)
    report_p.add_argument("--generator", choices=GENERATOR_KINDS)
    report_p.add_argument("--m", type=int)
    report_p.add_argument("--n", type=int)
    report_p.add_argument("--seed", type=int)
    report_p.add_argument("--epsilon", type=float)
    report_p.add_argument("--power", type=float)
    report_p.add_argument("--out", type=Path, default=Path("."))

    oracle_p = sub.add_parser("oracle", help="brute-force reference on a tiny instance")
    oracle_p.add_argument("--instance", type=Path, required=True)
    oracle_p.add_argument("--power", type=float)
    oracle_p.add_argument("--grid-step", dest="grid_step", type=float, default=0.01)

    return parser


_COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "gen": _cmd_gen,
    "report": _cmd_report,
    "oracle": _cmd_oracle,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
