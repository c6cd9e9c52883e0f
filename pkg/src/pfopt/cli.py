"""Command-line entry point: ``pfopt <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .config import ConfigError, load_config


def _add_config(p, required=True):
    p.add_argument("--config", "-c", required=required,
                   help="JSON .cfg file (bare names resolve to the shipped configs)")


def _cmd_run(args) -> int:
    from .io import summary_text, write_outputs
    from .optimizer import run_optimization

    cfg = load_config(args.config)
    if args.max_steps is not None:
        cfg.stepping.max_steps = args.max_steps
    if args.output is not None:
        cfg.output.dir = args.output
    cfg.validate()

    def progress(k, opt, state):
        if not args.quiet:
            print(f"step {k}: tau={opt.tau:.3e} mu={opt.mu:.4g} gamma={opt.gamma:.4g} "
                  f"vertices={opt.mesh.n_vertices}", file=sys.stderr)

    traj = run_optimization(cfg, progress)
    files = write_outputs(traj, cfg)
    sys.stdout.write(summary_text(traj, cfg))
    print(f"wrote {files['csv']}, {len(files['vtk'])} snapshots, {files['summary']}")
    return 0


def _cmd_check(args) -> int:
    from .optimizer import fd_gradient_check

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    rep = fd_gradient_check(cfg, deltas=args.deltas)
    print(f"analytic={rep.analytic:.12e}")
    for d, fd, e in zip(rep.deltas, rep.fd, rep.rel_errors):
        print(f"delta={d:.1e} fd={fd:.12e} rel_error={e:.3e}")
    print(f"uniqueness_margin={rep.margin:.4e}")
    tol = cfg.check.tolerance if args.tolerance is None else args.tolerance
    ok = rep.min_rel_error <= tol
    print(f"min_rel_error={rep.min_rel_error:.3e} tolerance={tol:.1e} {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def _cmd_asymptotics(args) -> int:
    from .asymptotics import certification_report, format_report

    sys.stdout.write(format_report(certification_report(args.potential)))
    return 0


def _load_phi(cfg, path):
    from .config import build_components
    from .optimizer import adapt_mesh

    comp = build_components(cfg)
    if path:
        from .io import read_vtk
        mesh, data = read_vtk(path)
        if "phi" not in data:
            raise ValueError(f"{path}: no 'phi' point data")
        return comp, mesh, data["phi"]
    mesh = comp.coarse_mesh
    if cfg.mesh.adapt:
        mesh = adapt_mesh(mesh, lambda m: [comp.initial_phi(m)], cfg.mesh.h_min,
                          cfg.mesh.dorfler)
    return comp, mesh, comp.initial_phi(mesh)


def _cmd_eval(args) -> int:
    from .flow import solve_state, uniqueness_margin
    from .functionals import NoInterfaceError, eval_force_surface, eval_objective
    from .io import sig5

    cfg = load_config(args.config)
    comp, mesh, phi = _load_phi(cfg, args.phi)
    mu = cfg.model.mu if args.mu is None else args.mu
    state = solve_state(mesh, phi, comp.material, mu, comp.f, comp.g, comp.newton)
    val = eval_objective(mesh, phi, state, comp.objective(cfg.model.gamma), comp.material)
    try:
        surf = eval_force_surface(mesh, phi, state, sampling=cfg.functional.surface_sampling)
    except NoInterfaceError:
        surf = float("nan")
    print(f"vertices: {mesh.n_vertices}")
    print(f"newton iterations: {state.iterations}")
    print(f"J_total: {sig5(val.total)}")
    print(f"J_porous: {sig5(val.porous)}")
    print(f"J_GL: {sig5(val.gl)}")
    print(f"F^D (volume): {sig5(val.FD)}")
    print(f"F^D (surface): {sig5(surf)}")
    print(f"F^L (volume): {sig5(val.FL)}")
    print(f"R: {sig5(val.ratio)}")
    print(f"uniqueness margin: {sig5(uniqueness_margin(state, mu, mesh))}")
    return 0


def _cmd_mesh_info(args) -> int:
    if args.vtk:
        from .io import read_vtk
        mesh = read_vtk(args.vtk)[0]
    elif args.config:
        cfg = load_config(args.config)
        _, mesh, _ = _load_phi(cfg, None)
    else:
        raise ValueError("give --config or --vtk")
    h = mesh.diameters
    print(f"vertices: {mesh.n_vertices}")
    print(f"triangles: {mesh.n_triangles}")
    print(f"area: {mesh.total_area:.12g}")
    print(f"h_min: {h.min():.6g}")
    print(f"h_max: {h.max():.6g}")
    print(f"boundary edges: {len(mesh.boundary_edges)}")
    print(f"generations: {int(np.max(mesh.generation)) if len(mesh.generation) else 0}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pfopt",
                                 description="Phase-field shape optimization in Navier-Stokes flow")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("run", help="run the optimization loop and write outputs")
    _add_config(p)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--output", help="output directory (overrides output.dir)")
    p.add_argument("--quiet", "-q", action="store_true")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("check-gradient", help="adjoint gradient vs centered differences")
    _add_config(p)
    p.add_argument("--deltas", type=float, nargs="+")
    p.add_argument("--seed", type=int)
    p.add_argument("--tolerance", type=float)
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("asymptotics", help="one-dimensional interface identities")
    p.add_argument("--potential", nargs="+", default=["obstacle", "quartic", "relaxed"],
                   choices=["obstacle", "quartic", "relaxed"])
    p.set_defaults(func=_cmd_asymptotics)

    p = sub.add_parser("eval", help="solve the state once and evaluate the functionals")
    _add_config(p)
    p.add_argument("--phi", help="legacy VTK file with a 'phi' point field "
                                 "(default: the configured initial obstacle)")
    p.add_argument("--mu", type=float)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("mesh-info", help="mesh statistics")
    _add_config(p, required=False)
    p.add_argument("--vtk")
    p.set_defaults(func=_cmd_mesh_info)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError, OSError, RuntimeError) as exc:
        print(f"pfopt {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
