"""Command-line front end.

Subcommands: simulate, converge, analyze, classify, presets, matrices.
All artifacts are CSV (17 significant digits) plus a JSON run manifest;
exit codes: 0 success, 1 numerical failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import analysis, diagnostics
from .config import RunManifest, build_model, load_model, serialize_model, sha256_file
from .grid import Mesh1D
from .matrices import assemble_all
from .model import (
    PRESET_NAMES,
    ModelError,
    SKTPressure,
    TumorPressure,
    preset,
    tumor_entropy_threshold,
)
from .solver import NewtonError, SolverConfig, initial_profile, run


def _fmt(x):
    return f"{float(x):.17g}"


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, (int, float, np.floating))
                              else str(v) for v in row) + "\n")


def _resolve_model(args):
    if getattr(args, "manifest", None):
        manifest = RunManifest.load(args.manifest)
        return build_model(manifest.model), manifest
    if args.config:
        spec = load_model(args.config)
    elif args.preset:
        overrides = {}
        for key, attr in (("theta", "theta"), ("theta1", "theta1"),
                          ("theta2", "theta2"), ("beta_c", "beta_c"),
                          ("beta_m", "beta_m")):
            val = getattr(args, attr, None)
            if val is not None:
                overrides[key] = val
        spec = preset(args.preset, **overrides)
    else:
        raise ModelError("need --preset, --config or --manifest")
    if getattr(args, "eta", None) is not None:
        spec = spec.with_eta(args.eta)
    return spec, None


def _model_args(p, with_params=True):
    p.add_argument("--preset", choices=PRESET_NAMES)
    p.add_argument("--config", help="model configuration file (TOML or JSON)")
    p.add_argument("--eta", type=float, default=None,
                   help="diffusive regularization strength")
    if with_params:
        p.add_argument("--theta", type=float, default=None)
        p.add_argument("--theta1", type=float, default=None)
        p.add_argument("--theta2", type=float, default=None)
        p.add_argument("--beta-c", dest="beta_c", type=float, default=None)
        p.add_argument("--beta-m", dest="beta_m", type=float, default=None)


def _simulate_parser(sub):
    p = sub.add_parser("simulate", help="run the implicit finite-volume solver")
    _model_args(p)
    p.add_argument("--manifest", help="re-run from a run.meta manifest")
    p.add_argument("--N", type=int, default=600)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--T", type=float, default=6.0)
    p.add_argument("--snapshots", default="",
                   help="comma-separated snapshot times")
    p.add_argument("--out", default="out")
    p.add_argument("--projection", action="store_true")
    p.add_argument("--jacobian", choices=("analytic", "fd"), default="analytic")
    p.add_argument("--raw-initial", action="store_true",
                   help="skip the simplex normalization of the initial data")
    p.add_argument("--pad", type=float, default=0.0,
                   help="extra solvent fraction left by the initial rescale")
    p.add_argument("--newton-max-iters", type=int, default=50)
    p.add_argument("--newton-tol", type=float, default=1e-10)
    p.add_argument("--diagnostics-every", type=int, default=10)
    p.add_argument("--allow-analysis-only", action="store_true")


def _cmd_simulate(args):
    spec, manifest = _resolve_model(args)
    if manifest is not None:
        N = manifest.n_cells
        config = SolverConfig(
            dt=manifest.dt, t_final=manifest.t_final,
            newton_tol=manifest.newton_tol,
            newton_max_iters=manifest.newton_max_iters,
            jacobian_mode=manifest.jacobian_mode,
            projection_enabled=manifest.projection_enabled,
            diagnostics_every=manifest.diagnostics_every,
            snapshot_times=tuple(manifest.snapshot_times),
            eta=manifest.eta,
        )
        raw_initial = manifest.raw_initial
        pad = manifest.pad
        preset_name = manifest.preset
    else:
        N = args.N
        snaps = tuple(float(s) for s in args.snapshots.split(",") if s.strip())
        config = SolverConfig(
            dt=args.dt, t_final=args.T,
            newton_max_iters=args.newton_max_iters,
            newton_tol=args.newton_tol,
            jacobian_mode="finite-difference" if args.jacobian == "fd" else "analytic",
            projection_enabled=args.projection,
            diagnostics_every=args.diagnostics_every,
            snapshot_times=snaps,
            eta=spec.eta if args.eta is None else args.eta,
        )
        raw_initial = args.raw_initial
        pad = args.pad
        preset_name = args.preset
    mesh = Mesh1D(N)
    initial, meta = initial_profile(mesh, normalize=not raw_initial, pad=pad)
    allow = manifest is not None or args.allow_analysis_only
    result = run(spec, mesh, config, initial,
                 allow_analysis_only=allow, metadata=meta)

    os.makedirs(args.out, exist_ok=True)
    traj_path = os.path.join(args.out, "trajectory.csv")
    diag_path = os.path.join(args.out, "diagnostics.csv")
    meta_path = os.path.join(args.out, "run.meta")
    n = spec.n
    header = ["t", "x"] + [f"u{i+1}" for i in range(n)] + ["u0"]

    def traj_rows():
        for t in sorted(result.snapshots):
            fld = result.snapshots[t]
            for j, x in enumerate(mesh.centers):
                yield (t, x, *fld.values[j], fld.solvent[j])

    _write_csv(traj_path, header, traj_rows())
    series = result.diagnostics
    _write_csv(diag_path, series.header(), series.rows())
    out_manifest = RunManifest(
        model=serialize_model(spec), n_cells=N, dt=config.dt,
        t_final=config.t_final,
        eta=spec.eta if config.eta is None else config.eta,
        snapshot_times=list(config.snapshot_times),
        projection_enabled=config.projection_enabled,
        jacobian_mode=config.jacobian_mode,
        newton_tol=config.newton_tol,
        newton_max_iters=config.newton_max_iters,
        diagnostics_every=config.diagnostics_every,
        raw_initial=raw_initial, pad=pad,
        normalization=meta, preset=preset_name,
        outputs={
            "trajectory.csv": sha256_file(traj_path),
            "diagnostics.csv": sha256_file(diag_path),
        },
    )
    out_manifest.save(meta_path)
    print(f"completed {config.t_final / config.dt:.0f} steps on N={N}; "
          f"min fraction {result.min_fraction:.3e}; artifacts in {args.out}")
    return 0


def _analyze_parser(sub):
    p = sub.add_parser("analyze", help="eigenvalue scans and thresholds")
    _model_args(p)
    p.add_argument("--scan", action="store_true")
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--region", default="",
                   help="box region u1lo,u1hi,u2lo,u2hi for the scan")
    p.add_argument("--perturb-threshold", action="store_true")
    p.add_argument("--out", default=None, help="CSV output path for --scan")


def _cmd_analyze(args):
    spec, _ = _resolve_model(args)
    code = 0
    if args.perturb_threshold:
        rep = analysis.perturbation_threshold(spec, resolution=args.resolution
                                              if args.resolution <= 32 else 16)
        print(f"eps0 = {_fmt(rep.eps0)} (alpha={_fmt(rep.alpha)}, "
              f"C1={_fmt(rep.c1)}, C2={_fmt(rep.c2)})")
        return 0
    if not args.scan:
        print("nothing to do: pass --scan or --perturb-threshold")
        return 2
    region = None
    if args.region:
        vals = [float(v) for v in args.region.split(",")]
        region = [(vals[0], vals[1]), (vals[2], vals[3])]
    pts = (analysis.box_lattice(region, args.resolution) if region is not None
           else analysis.simplex_lattice(spec.n, args.resolution))
    rows = []
    n_entropy_viol = 0
    n_stab_viol = 0
    for u in pts:
        ge = analysis._scan_value(spec, u, "entropy")
        st = analysis._scan_value(spec, u, "stability")
        n_entropy_viol += ge <= 0
        n_stab_viol += st <= 0
        rows.append((*u, ge, st))
    if args.out:
        _write_csv(args.out, ["u1", "u2", "min_eig_sym_G", "min_realpart_KinvA"], rows)
        print(f"wrote {len(rows)} lattice points to {args.out}")
    print(f"lattice points: {len(rows)}")
    print(f"entropy-definiteness violations (sym G): {n_entropy_viol}")
    print(f"positive-stability violations (K^-1 A): {n_stab_viol}")
    if n_entropy_viol == 0:
        print("verdict: entropy structure certified on this lattice")
    else:
        print("verdict: entropy structure refuted on this lattice")
    return code


def _classify_parser(sub):
    p = sub.add_parser("classify", help="two-species drag-ordering certificate")
    p.add_argument("--k01", type=float, required=True)
    p.add_argument("--k02", type=float, required=True)
    p.add_argument("--k12", type=float, required=True)
    p.add_argument("--q", required=True,
                   help="q11,q12,q21,q22 (positive entries)")


def _cmd_classify(args):
    q = np.array([float(v) for v in args.q.split(",")]).reshape(2, 2)
    cert = analysis.drag_case_certificate(args.k01, args.k02, args.k12, q)
    print(f"case: {cert.case}")
    if cert.triangle_condition is not None:
        print(f"triangle condition: {cert.triangle_condition}")
    for fam in ("a", "b", "c"):
        if fam in cert.bounds:
            print(f"bound {fam}: {_fmt(cert.bounds[fam])} "
                  f"(> 0: {cert.inequalities[fam]})")
    print(f"certified: {cert.certified}")
    if cert.reason:
        print(f"note: {cert.reason}")
    return 0


def _converge_parser(sub):
    p = sub.add_parser("converge", help="mesh convergence study")
    _model_args(p)
    p.add_argument("--meshes", default="75,150,300,600")
    p.add_argument("--ref", type=int, default=2500)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--T", type=float, default=6.0)
    p.add_argument("--out", default="convergence.csv")
    p.add_argument("--allow-analysis-only", action="store_true")


def _cmd_converge(args):
    if args.preset is None and args.config is None:
        args.preset = "tumor-jb"
        args.theta = 100.0 if args.theta is None else args.theta
    spec, _ = _resolve_model(args)
    meshes = [int(v) for v in args.meshes.split(",") if v.strip()]
    config = SolverConfig(dt=args.dt, t_final=args.T, snapshot_times=(),
                          eta=spec.eta if args.eta is None else args.eta,
                          diagnostics_every=10**9)
    result = diagnostics.convergence_study(
        spec, config, meshes, args.ref,
        allow_analysis_only=args.allow_analysis_only)
    n = spec.n
    header = ["N", "dx"] + [f"l1_error_u{i+1}" for i in range(n)] + ["fitted_rate"]
    _write_csv(args.out, header, result.rows())
    print(f"meshes {meshes} vs reference {args.ref}: "
          f"fitted L1 rate {result.rate_total:.4f} "
          f"(per species: {', '.join(f'{r:.4f}' for r in result.rates)})")
    print(f"table written to {args.out}")
    return 0


def _presets_parser(sub):
    p = sub.add_parser("presets", help="list the named model presets")
    p.add_argument("--show", default=None)


def _cmd_presets(args):
    names = [args.show] if args.show else list(PRESET_NAMES)
    for name in names:
        spec = preset(name)
        flags = " [analysis-only]" if spec.analysis_only else ""
        print(f"{name}{flags}")
        q = spec.q
        if isinstance(q, TumorPressure):
            thr = tumor_entropy_threshold(q.beta_c, q.beta_m)
            print(f"  tumor law: beta_c={q.beta_c} beta_m={q.beta_m} "
                  f"theta={q.theta} (entropy threshold theta*={thr:.3f})")
        elif isinstance(q, SKTPressure):
            print(f"  SKT law: theta1={q.theta1} theta2={q.theta2}")
        else:
            print(f"  constant q table:\n    {q.q.tolist()}")
        print(f"  r table: {spec.r.tolist()}")
        print(f"  eta: {spec.eta}")
        if spec.notes:
            print(f"  note: {spec.notes}")
    return 0


def _matrices_parser(sub):
    p = sub.add_parser("matrices", help="dump the pointwise matrices at a state")
    _model_args(p)
    p.add_argument("--u", required=True, help="comma-separated species fractions")
    p.add_argument("--out", default=None)


def _cmd_matrices(args):
    spec, _ = _resolve_model(args)
    u = np.array([float(v) for v in args.u.split(",")])
    mats = assemble_all(spec, u)
    rows = []
    for name, M in (("A", mats.A), ("K", mats.K), ("Kinv", mats.Kinv),
                    ("Hb", mats.Hb), ("G", mats.G)):
        for i in range(M.shape[0]):
            for j in range(M.shape[1]):
                rows.append((name, i + 1, j + 1, M[i, j]))
    if args.out:
        _write_csv(args.out, ["matrix", "i", "j", "value"], rows)
        print(f"wrote {args.out}")
    else:
        for name, i, j, v in rows:
            print(f"{name}[{i},{j}] = {_fmt(v)}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="crossdiffsim",
        description="volume-filling multiphase cross-diffusion: simulation "
                    "and structure certification",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _simulate_parser(sub)
    _analyze_parser(sub)
    _classify_parser(sub)
    _converge_parser(sub)
    _presets_parser(sub)
    _matrices_parser(sub)
    args = parser.parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "analyze": _cmd_analyze,
        "classify": _cmd_classify,
        "converge": _cmd_converge,
        "presets": _cmd_presets,
        "matrices": _cmd_matrices,
    }
    try:
        return handlers[args.command](args)
    except NewtonError as err:
        step = f" at step {err.step_index}" if err.step_index is not None else ""
        print(f"numerical failure{step}: {err}", file=sys.stderr)
        return 1
    except (ModelError, ValueError, OSError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
