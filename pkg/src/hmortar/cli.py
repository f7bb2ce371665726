"""Command-line entry point.

Every subcommand prints a JSON report on stdout and exits 0 on success.
Failures print a single JSON error record on stderr::

    {"error": "<kind>", "message": "...", ...}

with exit code 2 for bad input (usage, config, missing files), 3 for
numerical failures (non-convergence, singular systems) and 1 when a
diagnostic check ran but did not meet its tolerance.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

EXIT_CHECK_FAILED = 1
EXIT_BAD_INPUT = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    def __init__(self, report):
        super().__init__("check did not meet its tolerance")
        self.report = report


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> list[float]:
    if text is None or text == "":
        return []
    return [float(v) for v in str(text).split(",")]


def _ints(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",")]


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    try:
        text = p.read_text()
    except (FileNotFoundError, IsADirectoryError):
        raise FileNotFoundError(f"config file not found: {p}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed config {p}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ValueError(f"config {p} must hold a JSON object")
    return cfg


def _emit(obj) -> None:
    print(json.dumps(obj, default=_jsonable))


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def _model_from_args(kind, param, beta):
    from .nonlinearity import DissipativeModel, HamiltonianModel, ZeroModel

    if kind == "harmonic":
        return HamiltonianModel.harmonic(1.0 if param is None else param)
    if kind == "pendulum":
        return HamiltonianModel.pendulum(1.0 if param is None else param)
    if kind == "dissipative":
        return DissipativeModel(beta, HamiltonianModel.harmonic(1.0 if param is None else param))
    if kind == "zero":
        return ZeroModel()
    raise UsageError(f"unknown model {kind!r}")


def _settings(args):
    from .mortar import NewtonSettings

    return NewtonSettings(rel_tol=args.rel_tol, abs_tol=args.abs_tol, max_iters=args.max_iters)


# -- subcommands ---------------------------------------------------------------------

def cmd_datagen(args):
    from .harness.data import generate_lorenz, generate_parametric_oscillator

    cfg = _load_config(args.config)
    get = lambda k, default: cfg.get(k, default) if getattr(args, k) is None else getattr(args, k)
    t_final = float(get("t_final", 10.0))
    dt = float(get("dt", 0.01))
    if args.system == "lorenz":
        ic = _floats(args.ic) if args.ic else cfg.get("ic", [1.0, 1.0, 1.0])
        seed = get("seed", None)
        traj = generate_lorenz(float(cfg.get("sigma", args.sigma)), float(cfg.get("rho", args.rho)),
                               float(cfg.get("beta", args.beta)), t_final, dt, ic, seed)
    else:
        ic = _floats(args.ic) if args.ic else cfg.get("ic", [1.0, 0.0])
        traj = generate_parametric_oscillator(float(cfg.get("omega", args.omega)),
                                              float(cfg.get("damping", args.damping)),
                                              t_final, dt, ic)
    traj.save_csv(args.out)
    _emit({"command": "datagen", "system": args.system, "out": str(args.out),
           "samples": int(traj.t.size), "dim": traj.dim})


def cmd_simulate(args):
    from .feec import assemble_blocks
    from .harness.data import Trajectory
    from .harness.training import Checkpoint, forecast

    if args.checkpoint:
        model = Checkpoint.load(_existing(args.checkpoint)).model()
    else:
        model = _model_from_args(args.model, args.param, args.damping)
    u0, j0 = _floats(args.u0), _floats(args.j0)
    if len(u0) != len(j0) or not u0:
        raise UsageError("--u0 and --j0 must be non-empty and of equal length")
    z = _floats(args.z) or None
    t, u = forecast(model, (u0, j0), z, args.n_domains, args.m, args.delta_t,
                    settings=_settings(args))
    if args.out:
        Trajectory(t, u).save_csv(args.out)
    report = {"command": "simulate", "n_domains": args.n_domains, "m": args.m,
              "delta_t": args.delta_t, "final_state": u[-1], "max_abs": float(np.max(np.abs(u)))}
    if args.energy and hasattr(model, "potential_force"):
        from .diagnostics import energy_report
        from .mortar import InterfaceState, rollout

        blocks = assemble_blocks(args.m, args.delta_t / args.m)
        states = rollout(InterfaceState.from_values(j0, u0), args.n_domains, model, z, blocks,
                         _settings(args))
        report["energy_total"] = energy_report(states, model, blocks.h).total
    _emit(report)


def _existing(path):
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"file not found: {p}")
    return p


def cmd_train(args):
    from .harness.data import Trajectory
    from .harness.training import TrainConfig, train

    cfg = _load_config(args.config)
    data_specs = cfg.pop("data", [])
    if args.data:
        zs = args.z or []
        data_specs = [{"path": p, "z": _floats(zs[i]) if i < len(zs) else []}
                      for i, p in enumerate(args.data)]
    if not data_specs:
        raise UsageError("no training data given (--data or config key 'data')")
    for key in ("steps", "seed", "lr", "batch_size"):
        if getattr(args, key) is not None:
            cfg[key] = getattr(args, key)
    tcfg = TrainConfig.from_dict(cfg)
    trajs = []
    for spec in data_specs:
        spec = {"path": spec} if isinstance(spec, str) else spec
        trajs.append(Trajectory.load_csv(_existing(spec["path"]), z=spec.get("z", [])))
    ck, records = train(tcfg, trajs, metrics_path=args.metrics, checkpoint_path=args.checkpoint,
                        settings=_settings(args))
    probes = [r["probe_loss"] for r in records if "probe_loss" in r]
    _emit({"command": "train", "steps": tcfg.steps, "checkpoint": args.checkpoint,
           "metrics": args.metrics, "final_loss": ck.metadata.get("final_loss"),
           "probe_first": probes[0] if probes else None,
           "probe_last": probes[-1] if probes else None,
           "skipped_total": int(sum(r.get("skipped", 0) for r in records))})


def cmd_forecast(args):
    from .harness.data import Trajectory
    from .harness.training import Checkpoint, forecast

    ck = Checkpoint.load(_existing(args.checkpoint))
    saved = ck.metadata.get("config", {})
    m = args.m or saved.get("m_cells")
    delta_t = args.delta_t or saved.get("delta_t")
    if not m or not delta_t:
        raise UsageError("mesh unknown: pass --m and --delta-t")
    u0, j0 = _floats(args.u0), _floats(args.j0)
    t, u = forecast(ck, (u0, j0), _floats(args.z) or None, args.n_domains, int(m),
                    float(delta_t), settings=_settings(args))
    Trajectory(t, u).save_csv(args.out)
    _emit({"command": "forecast", "out": str(args.out), "rows": int(t.size),
           "finite": bool(np.all(np.isfinite(u))),
           "min": u.min(axis=0), "max": u.max(axis=0)})


def cmd_diagnose(args):
    from . import diagnostics as dg

    if args.check == "sbp":
        rows = dg.sbp_suite(args.cases, args.seed, args.tol)
        worst = max(abs(r[1]) for r in rows)
        report = {"command": "diagnose sbp", "cases": len(rows), "max_residual": worst,
                  "tolerance": args.tol, "passed": all(r[2] for r in rows)}
    elif args.check == "energy":
        from .feec import assemble_blocks
        from .mortar import InterfaceState, rollout

        model = _model_from_args(args.model, args.param, args.damping)
        blocks = assemble_blocks(args.m, args.delta_t / args.m)
        states = rollout(InterfaceState.from_values(_floats(args.j0), _floats(args.u0)),
                         args.n_domains, model, None, blocks, _settings(args))
        rep = dg.energy_report(states, model, blocks.h)
        if args.model == "dissipative":
            passed = bool(np.all(rep.deltas <= args.tol))
        else:
            passed = abs(rep.total) < args.tol
        report = {"command": "diagnose energy", "model": args.model, "total": rep.total,
                  "max_delta": float(rep.deltas.max()), "min_delta": float(rep.deltas.min()),
                  "kinetic_endpoints": rep.kinetic_endpoints, "tolerance": args.tol,
                  "passed": passed}
        if args.model == "pendulum":
            series = dg.stieltjes_energy_series(states, model, blocks.h)
            report["stieltjes_spread"] = float(np.ptp(series))
    elif args.check == "jinverse":
        res = dg.check_j_inverse(args.m, args.h, args.variant)
        report = {"command": "diagnose jinverse", "m": args.m, "h": args.h,
                  "variant": args.variant, "max_residual": res, "tolerance": args.tol,
                  "passed": res < args.tol,
                  "interface_map": dg.interface_map_zero_model(args.m, args.h)}
    else:
        from .feec import assemble_blocks
        from .harness.training import Checkpoint
        from .mortar import InterfaceState
        from .sensitivity import gradient_norm_sweep

        if args.checkpoint:
            model = Checkpoint.load(_existing(args.checkpoint)).model()
        else:
            model = _model_from_args(args.model, args.param, args.damping)
        blocks = assemble_blocks(args.m, args.delta_t / args.m)
        sweep = gradient_norm_sweep(model, _floats(args.z) or None, blocks,
                                    InterfaceState.from_values(_floats(args.j0), _floats(args.u0)),
                                    _ints(args.n_list), _settings(args))
        report = {"command": "diagnose gradients", "norms": [[n, v] for n, v in sweep],
                  "passed": bool(all(np.isfinite(v) for _, v in sweep))}
    if not report["passed"]:
        raise CheckFailed(report)
    _emit(report)


def cmd_stats(args):
    from .harness.data import Trajectory
    from .harness.stats import switching_statistics

    traj = Trajectory.load_csv(_existing(args.data))
    st = switching_statistics(traj.t, traj.u[:, args.column], threshold=args.threshold,
                              bins=args.bins)
    report = {"command": "stats switching", **st.as_dict(), "alpha": args.alpha,
              "passed": st.passes(args.alpha)}
    if not args.full:
        report.pop("intervals")
    _emit(report)


# -- parser ------------------------------------------------------------------------------

def _newton_flags(p):
    p.add_argument("--rel-tol", type=float, default=1e-10)
    p.add_argument("--abs-tol", type=float, default=1e-12)
    p.add_argument("--max-iters", type=int, default=50)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="hmortar", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("datagen", help="write a synthetic trajectory as CSV")
    p.add_argument("system", choices=["lorenz", "oscillator"])
    p.add_argument("--config")
    p.add_argument("--t-final", dest="t_final", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--ic")
    p.add_argument("--sigma", type=float, default=10.0)
    p.add_argument("--rho", type=float, default=28.0)
    p.add_argument("--beta", type=float, default=8.0 / 3.0)
    p.add_argument("--omega", type=float, default=1.0)
    p.add_argument("--damping", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("simulate", help="roll out a closed-form model or checkpoint")
    p.add_argument("--model", default="harmonic",
                   choices=["harmonic", "pendulum", "dissipative", "zero"])
    p.add_argument("--checkpoint")
    p.add_argument("--param", type=float, help="stiffness or gravity parameter")
    p.add_argument("--damping", type=float, default=0.5)
    p.add_argument("--u0", default="1.0")
    p.add_argument("--j0", default="0.0")
    p.add_argument("--z", default="")
    p.add_argument("--n-domains", dest="n_domains", type=int, default=100)
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--delta-t", dest="delta_t", type=float, default=0.2)
    p.add_argument("--energy", action="store_true")
    p.add_argument("--out")
    _newton_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a nonlinearity on trajectory CSV files")
    p.add_argument("--config")
    p.add_argument("--data", action="append")
    p.add_argument("--z", action="append", help="conditioning vector for the matching --data")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--metrics")
    p.add_argument("--checkpoint", required=True)
    _newton_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", help="long rollout from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--u0", required=True)
    p.add_argument("--j0", required=True)
    p.add_argument("--z", default="")
    p.add_argument("--n-domains", dest="n_domains", type=int, required=True)
    p.add_argument("--m", type=int)
    p.add_argument("--delta-t", dest="delta_t", type=float)
    p.add_argument("--out", required=True)
    _newton_flags(p)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("diagnose", help="structural checks")
    p.add_argument("check", choices=["sbp", "energy", "jinverse", "gradients"])
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float)
    p.add_argument("--model", default="harmonic",
                   choices=["harmonic", "pendulum", "dissipative", "zero"])
    p.add_argument("--checkpoint")
    p.add_argument("--param", type=float)
    p.add_argument("--damping", type=float, default=0.5)
    p.add_argument("--u0", default="1.0")
    p.add_argument("--j0", default="0.0")
    p.add_argument("--z", default="")
    p.add_argument("--n-domains", dest="n_domains", type=int, default=1000)
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--h", type=float, default=0.01)
    p.add_argument("--delta-t", dest="delta_t", type=float, default=0.2)
    p.add_argument("--variant", choices=["printed", "exact"], default="printed")
    p.add_argument("--n-list", dest="n_list", default="10,50,100")
    _newton_flags(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("stats", help="trajectory statistics")
    p.add_argument("kind", choices=["switching"])
    p.add_argument("--data", required=True)
    p.add_argument("--column", type=int, default=0)
    p.add_argument("--threshold", type=float, default=1.1)
    p.add_argument("--bins", type=int, default=30)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--full", action="store_true", help="include every interval")
    p.set_defaults(func=cmd_stats)
    return ap


_DEFAULT_TOL = {"sbp": 1e-10, "energy": 1e-9, "jinverse": 1e-12, "gradients": 0.0}


def _error(kind, message, code, **extra):
    rec = {"error": kind, "message": str(message), "exit_code": code}
    rec.update(extra)
    print(json.dumps(rec, default=_jsonable), file=sys.stderr)
    return code


def main(argv=None) -> int:
    from .harness.stats import TooFewSwitches
    from .harness.training import TrainingAborted
    from .mortar import NonConvergence, SingularJacobian

    try:
        args = build_parser().parse_args(argv)
        if args.command == "diagnose" and args.tol is None:
            args.tol = _DEFAULT_TOL[args.check]
            if args.check == "energy" and args.model == "dissipative":
                args.tol = 1e-13
        args.func(args)
        return 0
    except UsageError as exc:
        return _error("usage", exc, EXIT_BAD_INPUT)
    except FileNotFoundError as exc:
        return _error("missing_file", exc, EXIT_BAD_INPUT)
    except TooFewSwitches as exc:
        return _error("too_few_switches", exc, EXIT_BAD_INPUT)
    except (ValueError, KeyError, TypeError) as exc:
        return _error("bad_input", exc, EXIT_BAD_INPUT)
    except NonConvergence as exc:
        return _error("non_convergence", exc, EXIT_NUMERICAL, domain=exc.domain,
                      residual_norm=exc.residual_norm)
    except SingularJacobian as exc:
        return _error("singular_jacobian", exc, EXIT_NUMERICAL, domain=exc.domain)
    except TrainingAborted as exc:
        return _error("training_aborted", exc, EXIT_NUMERICAL, step=exc.step,
                      skipped=exc.skipped, batch_size=exc.batch_size)
    except FloatingPointError as exc:
        return _error("floating_point", exc, EXIT_NUMERICAL)
    except CheckFailed as exc:
        print(json.dumps(exc.report, default=_jsonable))
        return _error("check_failed", exc, EXIT_CHECK_FAILED)


if __name__ == "__main__":
    sys.exit(main())
