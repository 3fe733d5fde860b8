"""Experiment runner. Subcommands: attack, scale-search, bounds, verify, serve.

The CLI is a thin client over the core package: every command loads a
config file, hands it to library calls, and writes CSV/JSON outputs
atomically (temp file then rename). All randomness flows from config seeds.
Set PSBA_LOG to a logging level name for diagnostics.

Exit codes: 0 success, 2 config error, 3 I/O error, 4 transport error,
5 counter desync, 6 verification failure, 7 no valid pairs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import config as cfg
from . import theory
from .attack import (
    AttackConfig,
    find_optimal_scale,
    run_attack,
    synthesize_adversarial_source,
    trajectory_to_csv,
    trajectory_summary,
)
from .errors import (
    ConfigError,
    DesyncError,
    NoValidPairsError,
    PsbaError,
    TransportError,
)
from .models import AttackSpec, make_oracle
from .projections import (
    FreqLowPassProjection,
    IdentityProjection,
    SpatialProjection,
    freq_schedule,
    spatial_schedule,
)
from .tensors import SeededRng
from .verify import SUITES, run_suite

logger = logging.getLogger("psba")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_TRANSPORT = 4
EXIT_DESYNC = 5
EXIT_VERIFY = 6
EXIT_NO_PAIRS = 7


def _setup_logging():
    level = os.environ.get("PSBA_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError:
        try:
            os.unlink(tmp)
        finally:
            raise


def _build_projection(ref: cfg.ProjectionRef, out_shape):
    if ref.kind == "identity":
        return IdentityProjection(out_shape)
    if ref.kind == "spatial":
        if ref.side is None:
            raise ConfigError("spatial projection needs 'side'")
        return SpatialProjection(ref.side, out_shape)
    if ref.k is None:
        raise ConfigError("freq_lowpass projection needs 'k'")
    return FreqLowPassProjection(ref.k, out_shape)


def _make_spec(model, section: cfg.AttackSection, target):
    if section.mode == "untargeted":
        return AttackSpec.untargeted(model, target)
    if section.target_class is None:
        raise ConfigError("targeted attack needs attack.target_class")
    return AttackSpec.targeted(model, target, section.target_class)


def _make_remote_oracle(url: str, budget: int | None):
    from .service.client import RemoteOracle

    return RemoteOracle(url, budget=budget)


def cmd_attack(args) -> int:
    conf = cfg.load_config(args.config, cfg.AttackConfigFile)
    base = Path(args.config).parent
    model = conf.model.load(base)
    section = conf.attack
    seed = args.seed if args.seed is not None else section.seed

    rng = SeededRng(conf.inputs.target_seed, (71,))
    target = rng.standard_normal(model.input_dim) * conf.inputs.target_scale
    spec = _make_spec(model, section, target)
    logger.info("attack spec: mode=%s label=%d (a remote oracle must serve the same spec)",
                spec.mode, spec.label)
    source = synthesize_adversarial_source(model, spec, target, SeededRng(seed, (72,)))

    projection = _build_projection(conf.projection, model.input_shape)
    oracle_kind = args.oracle if args.oracle is not None else conf.oracle
    if oracle_kind == "local":
        oracle = make_oracle(model, spec, budget=section.budget)
    else:
        oracle = _make_remote_oracle(oracle_kind, section.budget)

    attack_conf = AttackConfig(
        num_samples=section.num_samples,
        max_queries=section.budget,
        seed=seed,
        theta=section.theta,
        success_mse=section.success_mse,
    )
    traj = run_attack(oracle, spec, source, target, projection, attack_conf, model=model)

    out_dir = Path(args.out) if args.out else base / conf.output.dir
    atomic_write(out_dir / "trajectory.csv", trajectory_to_csv(traj))
    summary = trajectory_summary(traj)
    summary["seed"] = seed
    summary["oracle"] = oracle_kind
    atomic_write(out_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"attack finished: {len(traj.records)} iterations, "
          f"{traj.total_queries} queries, final mse {traj.final_mse}")
    return EXIT_OK


def cmd_scale_search(args) -> int:
    conf = cfg.load_config(args.config, cfg.ScaleSearchConfigFile)
    base = Path(args.config).parent
    model = conf.model.load(base)
    seed = args.seed if args.seed is not None else conf.search.seed

    builder = spatial_schedule if conf.schedule.kind == "spatial" else freq_schedule
    schedule = builder(conf.schedule.scales, model.input_shape)

    # One attack spec serves every validation pair (one oracle, one anchor
    # class), so targets are resampled until they predict the anchor label.
    pair_rng = SeededRng(conf.pairs.seed, (73,))
    first = pair_rng.child(0).standard_normal(model.input_dim) * conf.pairs.scale
    spec = _make_spec(model, conf.attack, first)
    wanted = spec.label if conf.attack.mode == "untargeted" else None
    pairs = []
    i = 0
    attempts = 0
    while len(pairs) < conf.pairs.count and attempts < 100 * conf.pairs.count:
        target = pair_rng.child(attempts).standard_normal(model.input_dim) * conf.pairs.scale
        attempts += 1
        if wanted is not None and model.predict(target) != wanted:
            continue
        source = synthesize_adversarial_source(model, spec, target, pair_rng.child(1000 + i))
        pairs.append((source, target))
        i += 1
    if len(pairs) < conf.pairs.count:
        logger.warning("only %d of %d validation pairs could be drawn", len(pairs), conf.pairs.count)

    result = find_optimal_scale(
        lambda: make_oracle(model, spec),
        pairs,
        schedule,
        num_samples=conf.search.num_samples,
        num_steps=conf.search.num_steps,
        seed=seed,
        spec=spec,
    )

    out_dir = Path(args.out) if args.out else base / conf.output.dir
    lines = ["scale,latent_dim,avg_final_mse,queries,bsearch_queries,estimate_queries,step_queries"]
    for row in result.table:
        lines.append(
            f"{row.scale},{row.latent_dim},{row.avg_final_mse!r},{row.queries},"
            f"{row.bsearch_queries},{row.estimate_queries},{row.step_queries}"
        )
    atomic_write(out_dir / "scale_search.csv", "\n".join(lines) + "\n")
    atomic_write(
        out_dir / "scale_search.json",
        json.dumps({"chosen_scale": result.chosen_scale, "seed": seed}, indent=2) + "\n",
    )
    print(f"chosen scale: {result.chosen_scale}")
    return EXIT_OK


def cmd_bounds(args) -> int:
    conf = cfg.load_config(args.config, cfg.BoundsConfigFile)
    base = Path(args.config).parent
    section = conf.curves
    out_dir = Path(args.out) if args.out else base / conf.output.dir
    for ref in section.profiles:
        profile = theory.EnergyProfile(kind=ref.kind, rate=ref.rate, degree=ref.degree)
        if section.mode == "big_o":
            points = []
            for m in range(2, section.n + 1):
                params = theory.BoundParams(
                    m=m, n=section.n, delta=1.0 / m, theta=0.0,
                    beta_s=section.beta_s, beta_f=section.beta_f,
                    alphas=np.ones(m), grad_norm=1.0,
                    proj_norm=profile.proj_norm(m, section.n),
                    num_samples=section.num_samples, tail_p=section.tail_p,
                )
                res = theory.big_o_bound(params, section.calibration)
                points.append(theory.CurvePoint(m=m, bound=res.value, vacuous=res.vacuous))
        else:
            points = theory.figure_curves(
                profile,
                section.n,
                beta_s=section.beta_s,
                beta_f=section.beta_f,
                sampling_term=section.mode == "concentration",
                num_samples=section.num_samples,
                tail_p=section.tail_p,
            )
        name = f"bounds_{ref.kind}.csv"
        atomic_write(out_dir / name, theory.curves_to_csv(points))
        peak = theory.curve_argmax(points)
        print(f"{ref.kind}: argmax m = {peak}, wrote {out_dir / name}")
    return EXIT_OK


def cmd_verify(args) -> int:
    names = [args.suite] if args.suite != "all" else list(SUITES)
    failed = 0
    for name in names:
        checks = run_suite(name)
        for check in checks:
            print(check.line())
            failed += 0 if check.passed else 1
        if args.out:
            payload = [check.__dict__ for check in checks]
            atomic_write(
                Path(args.out) / f"verify_{name}.json", json.dumps(payload, indent=2) + "\n"
            )
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app, dump_stats

    conf = cfg.load_config(args.config, cfg.ServeConfigFile)
    base = Path(args.config).parent
    model = conf.model.load(base)
    spec = AttackSpec(conf.spec.mode, conf.spec.label)
    app = create_app(
        model,
        spec,
        budget=conf.service.budget,
        delay_s=conf.service.delay_ms / 1000.0,
    )
    uvicorn.run(app, host=conf.service.host, port=conf.service.port, log_level="warning")
    if conf.service.stats_dump:
        atomic_write(base / conf.service.stats_dump, dump_stats(app.state.oracle))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psba", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML or JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")

    p_attack = sub.add_parser("attack", help="run one boundary attack")
    common(p_attack)
    p_attack.add_argument(
        "--oracle", default=None, help="'local' or the base URL of a running oracle service"
    )
    p_attack.set_defaults(func=cmd_attack)

    p_scale = sub.add_parser("scale-search", help="progressive optimal-scale search")
    common(p_scale)
    p_scale.set_defaults(func=cmd_scale_search)

    p_bounds = sub.add_parser("bounds", help="emit bound-versus-scale curves")
    common(p_bounds)
    p_bounds.set_defaults(func=cmd_bounds)

    p_verify = sub.add_parser("verify", help="run a numerical verification suite")
    p_verify.add_argument("suite", choices=sorted(SUITES) + ["all"])
    p_verify.add_argument("--out", default=None)
    p_verify.set_defaults(func=cmd_verify)

    p_serve = sub.add_parser("serve", help="run the decision-oracle service")
    p_serve.add_argument("--config", required=True)
    p_serve.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoValidPairsError as exc:
        print(f"no valid pairs: {exc}", file=sys.stderr)
        return EXIT_NO_PAIRS
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except DesyncError as exc:
        print(f"counter desync: {exc}", file=sys.stderr)
        return EXIT_DESYNC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except PsbaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
