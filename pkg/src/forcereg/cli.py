"""Command-line interface.

Exit codes: 0 success, 1 usage, 2 input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import RunConfig, load_node_set, read_config_file, resolve
from .errors import ConfigError, InputError, NumericalError
from .evaluation import (
    EvalReport,
    TargetSet,
    compute_errors,
    format_summary_row,
    load_fiducials,
    registration_transform,
    rows_to_csv,
    summarize_runs,
)
from .fem import build_system
from .geometry import (
    PointCloud,
    RigidTransform,
    load_point_cloud,
    load_volume_mesh,
    save_point_cloud,
    save_volume_mesh,
)
from .registration import register, surface_residual, write_trace
from .correspondence import build_correspondences
from .rigid import rigid_icp, rms_distance
from .synthesis import FIG2_VISIBILITY, ForceSpec, fig2_case, generate_case, load_truth, lobe_end_nodes, save_case

log = logging.getLogger("forcereg")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class StageError(Exception):
    """Wraps a failure with the pipeline stage it happened in."""

    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"{stage} failed: {exc}")
        self.stage = stage
        self.exc = exc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_globals(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("global options")
    g.add_argument("--config", default=argparse.SUPPRESS, help="TOML or JSON run configuration")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker processes for batch commands")
    g.add_argument("--trace", action="store_true", default=argparse.SUPPRESS,
                   help="verbose per-iteration logging and correspondence dumps")


def _add_registration_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("registration")
    g.add_argument("--kss", dest="k_ss", type=float, help="soft spring constant (default 0.01)")
    g.add_argument("--nu", dest="poisson_ratio", type=float, help="Poisson ratio (default 0.49)")
    g.add_argument("--youngs", dest="youngs_modulus", type=float, help="Young's modulus (default 1)")
    g.add_argument("--iters", dest="max_iters", type=int, help="iterations (default 200)")
    g.add_argument("--step", dest="step_mode", choices=["optimal", "fixed"])
    g.add_argument("--alpha", dest="fixed_alpha", type=float, help="step for --step fixed (default 1/L)")
    g.add_argument("--momentum", choices=["nesterov", "none"])
    g.add_argument("--gradient-point", choices=["f", "p"])
    g.add_argument("--force-mask", help="node ids allowed to carry force (default: surface)")
    g.add_argument("--fixed-nodes", help="node ids pinned by penalty springs")
    g.add_argument("--fixed-penalty", type=float)
    g.add_argument("--kss-relative", action="store_true", default=None, help="scale k_ss by mean(diag K)")
    g.add_argument("--early-stop", action="store_true", default=None)
    g.add_argument("--icp", action="store_true", default=None, help="rigidly pre-align the cloud with ICP")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="forcereg", description="Biomechanical surface registration without boundary conditions")
    parser.add_argument("--version", action="version", version=f"forcereg {__version__}")
    _add_globals(parser)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("register", help="register a mesh to an intraoperative cloud")
    _add_globals(p)
    p.add_argument("--mesh")
    p.add_argument("--cloud")
    p.add_argument("--case", help="synthetic case directory (mesh + cloud)")
    p.add_argument("--batch", help="register every case directory below this one")
    p.add_argument("--out", help="output directory (default: <case>/run)")
    _add_registration_flags(p)

    p = sub.add_parser("simulate", help="generate synthetic registration cases")
    _add_globals(p)
    p.add_argument("--out", required=True)
    p.add_argument("--mesh", help="volume mesh (default: generated liver-like phantom)")
    p.add_argument("--scenario", help="TOML/JSON scenario file")
    p.add_argument("--preset", choices=["fig2"])
    p.add_argument("--visibility", type=_floats)
    p.add_argument("--noise", type=_floats, help="noise sigma list in mm")
    p.add_argument("--seeds", type=int, help="number of seeds per (visibility, noise)")
    p.add_argument("--seed-list", type=_ints)

    p = sub.add_parser("evaluate", help="compute registration errors")
    _add_globals(p)
    p.add_argument("--run", help="registration output directory")
    p.add_argument("--truth", help="synthetic case directory with truth.json")
    p.add_argument("--fiducials", help="fiducial CSV (label,x_pre,...,z_post)")
    p.add_argument("--batch", help="directory of case dirs each holding a run subdirectory")
    p.add_argument("--run-name", default="run")
    p.add_argument("--interp", choices=["idw", "nearest"], default="idw")
    p.add_argument("--out", help="report path prefix (default: inside the run dir)")

    p = sub.add_parser("icp", help="rigid ICP alignment of a cloud to a mesh surface or cloud")
    _add_globals(p)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True, help="transform JSON")
    p.add_argument("--aligned", help="write the aligned source cloud here")
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-9)

    p = sub.add_parser("sweep", help="one-at-a-time parameter sensitivity sweep")
    _add_globals(p)
    p.add_argument("--cases", required=True, help="directory of synthetic case dirs")
    p.add_argument("--out", required=True)
    p.add_argument("--kss-grid", type=_floats)
    p.add_argument("--nu-grid", type=_floats)
    p.add_argument("--iters-grid", type=_ints)

    p = sub.add_parser("info", help="describe inputs and defaults")
    _add_globals(p)
    p.add_argument("--mesh")
    p.add_argument("--cloud")
    return parser


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _run_config(args, extra: Optional[dict] = None) -> RunConfig:
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    over = {k: getattr(args, k, None) for k in RunConfig.keys() if k not in ("mesh", "cloud", "case", "out")}
    over.update({k: getattr(args, k, None) for k in ("mesh", "cloud", "case", "out")})
    over.update(extra or {})
    return resolve(file_values, over)


def _write_vectors(path: Path, vec: np.ndarray, names: tuple[str, str, str]) -> None:
    v = vec.reshape(-1, 3)
    lines = ["node," + ",".join(names)]
    lines += [f"{i},{a!r},{b!r},{c!r}" for i, (a, b, c) in enumerate(v.tolist())]
    path.write_text("\n".join(lines) + "\n")


def read_vectors(path) -> np.ndarray:
    rows = Path(path).read_text().splitlines()[1:]
    data = np.array([[float(t) for t in r.split(",")[1:4]] for r in rows if r.strip()])
    return data.ravel()


def _check_ids(ids: Optional[np.ndarray], n: int, what: str) -> None:
    if ids is not None and len(ids) and (ids.min() < 0 or ids.max() >= n):
        raise InputError(f"{what}: node id out of range [0, {n})")


def _stage(name, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except (NumericalError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


def run_registration(cfg: RunConfig) -> dict:
    """Load inputs, register, write the run directory. Returns the metadata."""
    mesh_path, cloud_path = cfg.mesh, cfg.cloud
    if cfg.case:
        truth = load_truth(cfg.case)
        mesh_path = mesh_path or str(Path(cfg.case) / truth["mesh"])
        cloud_path = cloud_path or str(Path(cfg.case) / truth["cloud"])
    if not mesh_path or not cloud_path:
        raise InputError("register needs --mesh and --cloud (or --case)")
    out = Path(cfg.out or (Path(cfg.case) / "run" if cfg.case else "run"))
    mesh = load_volume_mesh(mesh_path)
    cloud = load_point_cloud(cloud_path)
    force_mask = load_node_set(cfg.force_mask) if cfg.force_mask else None
    fixed = load_node_set(cfg.fixed_nodes) if cfg.fixed_nodes else None
    _check_ids(force_mask, mesh.n, "force mask")
    _check_ids(fixed, mesh.n, "fixed nodes")
    rc = cfg.registration_config(force_mask=force_mask, fixed_nodes=fixed)

    pre = RigidTransform.identity()
    if cfg.icp:
        pre = _stage("rigid pre-alignment", rigid_icp, cloud, mesh.nodes[mesh.surface.node_indices])
        cloud = PointCloud(pre.apply(cloud.points), cloud.labels)

    system = _stage("stiffness factorization", build_system, mesh, rc.material, rc.k_ss,
                    fixed_nodes=fixed, fixed_penalty=rc.fixed_penalty, relative=rc.kss_relative)
    if cfg.trace:
        logging.getLogger("forcereg").setLevel(logging.DEBUG)
    result = _stage("optimization", register, mesh, cloud, rc, system=system)
    log.info("registered %d nodes to %d points in %.2f s", mesh.n, cloud.m, result.wall_time)

    out.mkdir(parents=True, exist_ok=True)
    suffix = Path(mesh_path).suffix or ".tet"
    save_volume_mesh(out / f"deformed{suffix}", mesh.deformed(result.u_final),
                     fmt="vtk" if suffix.lower() == ".vtk" else "native")
    _write_vectors(out / "u.csv", result.u_final, ("ux", "uy", "uz"))
    _write_vectors(out / "f.csv", result.f_final, ("fx", "fy", "fz"))
    write_trace(out / "trace.csv", result.trace)
    residual = surface_residual(mesh, cloud, result.u_final)
    if cfg.trace:
        build_correspondences(mesh.surface, mesh.nodes + result.u_final.reshape(-1, 3), cloud).write_csv(
            out / "correspondences.csv")
    meta = {
        "version": __version__,
        "mesh": str(Path(mesh_path).resolve()),
        "cloud": str(Path(cloud_path).resolve()),
        "n_nodes": mesh.n,
        "n_tets": mesh.n_tets,
        "m_points": cloud.m,
        "config": cfg.to_dict(),
        "iterations": result.converged_iterations,
        "J_initial": result.trace[0].J if result.trace else 0.0,
        "J_last": result.trace[-1].J if result.trace else 0.0,
        "final_mean_residual": float(residual.mean()),
        # cloud -> mesh frame; the inverse maps registered positions back to the cloud frame
        "pre_alignment": pre.to_dict(),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=1) + "\n")
    return meta


def _case_dirs(root) -> list[Path]:
    return sorted(p.parent for p in Path(root).glob("*/truth.json"))


def _register_case(args: tuple) -> str:
    cfg_dict, case_dir = args
    cfg = RunConfig(**dict(cfg_dict, case=str(case_dir), out=str(Path(case_dir) / "run"), mesh=None, cloud=None))
    run_registration(cfg)
    return str(case_dir)


def _pool_map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def evaluate_case(case_dir, run_dir, interp: str = "idw") -> EvalReport:
    """Nodal errors of a run against a synthetic truth, in the cloud frame."""
    truth = load_truth(case_dir)
    mesh = load_volume_mesh(Path(case_dir) / truth["mesh"])
    return _evaluate_nodes(mesh, truth, run_dir, interp)


def _evaluate_nodes(mesh, truth: dict, run_dir, interp: str) -> EvalReport:
    run_dir = Path(run_dir)
    meta = json.loads((run_dir / "meta.json").read_text())
    u = read_vectors(run_dir / "u.csv")
    u_true = np.asarray(truth["u"], dtype=float)
    cloud_frame = RigidTransform.from_dict(truth["rigid"])
    targets = TargetSet(mesh.nodes, cloud_frame.apply(mesh.nodes + u_true))
    back = RigidTransform.from_dict(meta["pre_alignment"]).inverse()
    W = registration_transform(mesh.nodes, u, back, mode=interp)
    return compute_errors(targets, W, {
        "case": Path(run_dir).parent.name,
        "visibility": truth["visibility_ratio"],
        "achieved_visibility": truth["achieved_visibility"],
        "noise": truth["noise_sigma"],
        "seed": truth["rng_seed"],
    })


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_register(args) -> int:
    cfg = _run_config(args)
    if args.batch:
        cases = _case_dirs(args.batch)
        if not cases:
            raise InputError(f"{args.batch}: no case directories with truth.json")
        done = _pool_map(_register_case, [(cfg.to_dict(), c) for c in cases], cfg.threads)
        for d in done:
            print(f"registered {d}")
        return EXIT_OK
    meta = run_registration(cfg)
    print(f"J {meta['J_initial']:.6g} -> {meta['J_last']:.6g} after {meta['iterations']} iterations; "
          f"mean residual {meta['final_mean_residual']:.4f} mm")
    return EXIT_OK


def _scenario(args) -> dict:
    sc = read_config_file(args.scenario) if args.scenario else {}
    allowed = {"mesh", "visibility", "noise", "seeds", "seed_list", "force", "fixed", "k_ss",
               "poisson_ratio", "preset"}
    unknown = set(sc) - allowed
    if unknown:
        raise ConfigError(f"unknown scenario keys: {', '.join(sorted(unknown))}")
    for key in ("mesh", "visibility", "noise", "seeds", "seed_list", "preset"):
        v = getattr(args, key, None)
        if v is not None:
            sc[key] = v
    return sc


def cmd_simulate(args) -> int:
    from .meshgen import liver_like_mesh

    sc = _scenario(args)
    base_seed = getattr(args, "seed", 0)
    mesh = load_volume_mesh(sc["mesh"]) if sc.get("mesh") else liver_like_mesh()
    preset = sc.get("preset")
    vis_list = sc.get("visibility") or ([FIG2_VISIBILITY] if preset == "fig2" else [0.25])
    noise_list = sc.get("noise") or [0.0]
    if sc.get("seed_list") is not None:
        seeds = list(sc["seed_list"])
    else:
        seeds = [base_seed + i for i in range(int(sc.get("seeds", 1)))]
    fixed_opt = sc.get("fixed", "lobe_end")
    if fixed_opt == "lobe_end":
        fixed = lobe_end_nodes(mesh)
    elif fixed_opt in (None, "none"):
        fixed = None
    else:
        fixed = np.asarray(fixed_opt, dtype=np.int64)
    force = dict(sc.get("force", {}))
    spec = ForceSpec(**force) if force else ForceSpec(kind="random_patches", radius=30.0)
    out = Path(args.out)
    made = []
    for vis, noise, seed in itertools.product(vis_list, noise_list, seeds):
        if preset == "fig2":
            case = _stage("forward simulation", fig2_case, mesh, vis, noise, seed)
        else:
            from .fem import ElasticMaterial

            mat = ElasticMaterial(1.0, sc.get("poisson_ratio", 0.49))
            case = _stage("forward simulation", generate_case, mesh, spec, vis, noise, seed,
                          fixed_nodes=fixed, material=mat, k_ss=sc.get("k_ss", 0.01))
        d = save_case(case, out / f"case_v{vis:g}_n{noise:g}_s{seed}")
        made.append(d)
        print(f"{d}: m={case.cloud.m} visibility={case.achieved_visibility:.3f}")
    print(f"{len(made)} cases written to {out}")
    return EXIT_OK


def _write_report(report: EvalReport, prefix: Path) -> None:
    prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{prefix}.json").write_text(report.to_json() + "\n")
    Path(f"{prefix}.csv").write_text(rows_to_csv([dict(report.metadata, **report.summary())]))


def cmd_evaluate(args) -> int:
    if args.batch:
        reports = []
        for case in _case_dirs(args.batch):
            run = case / args.run_name
            if not (run / "meta.json").exists():
                log.warning("skipping %s: no %s/meta.json", case, args.run_name)
                continue
            rep = evaluate_case(case, run, args.interp)
            _write_report(rep, run / "eval")
            reports.append(rep)
        if not reports:
            raise InputError(f"{args.batch}: nothing to evaluate")
        rows = summarize_runs(reports, ("visibility", "noise"))
        root = Path(args.batch)
        (root / "summary.csv").write_text(rows_to_csv(rows))
        (root / "summary.json").write_text(json.dumps(rows, indent=1) + "\n")
        for r in rows:
            print(f"visibility={r['visibility']:g} noise={r['noise']:g} n={r['n']}: {format_summary_row(r)}")
        return EXIT_OK
    if not args.run:
        raise InputError("evaluate needs --run (or --batch)")
    run = Path(args.run)
    if args.truth:
        report = evaluate_case(args.truth, run, args.interp)
    elif args.fiducials:
        meta = json.loads((run / "meta.json").read_text())
        mesh = load_volume_mesh(meta["mesh"])
        u = read_vectors(run / "u.csv")
        targets = load_fiducials(args.fiducials)
        back = RigidTransform.from_dict(meta["pre_alignment"]).inverse()
        report = compute_errors(targets, registration_transform(mesh.nodes, u, back, mode=args.interp),
                                {"fiducials": str(args.fiducials), "labels": targets.labels})
    else:
        raise InputError("evaluate needs --truth or --fiducials")
    _write_report(report, Path(args.out) if args.out else run / "eval")
    print(report.format_line())
    return EXIT_OK


def cmd_icp(args) -> int:
    source = load_point_cloud(args.source)
    tpath = Path(args.target)
    if tpath.suffix.lower() in (".vtk", ".tet", ".mesh"):
        mesh = load_volume_mesh(tpath)
        target = mesh.nodes[mesh.surface.node_indices]
    else:
        target = load_point_cloud(tpath).points
    T = _stage("rigid ICP", rigid_icp, source, target, max_iters=args.max_iters, tol=args.tol)
    Path(args.out).write_text(json.dumps(T.to_dict(), indent=1) + "\n")
    if args.aligned:
        save_point_cloud(args.aligned, T.apply(source.points))
    print(f"rms {rms_distance(source, target, T):.6f} mm, rotation {np.degrees(T.angle()):.4f} deg")
    return EXIT_OK


def _sweep_task(task: tuple) -> dict:
    cfg_dict, case_dir, param, value = task
    cfg = RunConfig(**dict(cfg_dict, case=None, mesh=None, cloud=None, out=None))
    truth = load_truth(case_dir)
    mesh = load_volume_mesh(Path(case_dir) / truth["mesh"])
    cloud = load_point_cloud(Path(case_dir) / truth["cloud"])
    rc = cfg.registration_config()
    result = register(mesh, cloud, rc)
    u_true = np.asarray(truth["u"], dtype=float).reshape(-1, 3)
    err = np.linalg.norm(result.u_final.reshape(-1, 3) - u_true, axis=1)
    return {"param": param, "value": value, "case": Path(case_dir).name,
            "visibility": truth["visibility_ratio"], "noise": truth["noise_sigma"],
            "mean": float(err.mean()), "std": float(err.std()), "max": float(err.max()),
            "median": float(np.median(err)), "J_last": result.trace[-1].J}


def cmd_sweep(args) -> int:
    base = _run_config(args)
    cases = _case_dirs(args.cases)
    if not cases:
        raise InputError(f"{args.cases}: no case directories with truth.json")
    grids = {"k_ss": args.kss_grid, "poisson_ratio": args.nu_grid, "max_iters": args.iters_grid}
    grids = {k: v for k, v in grids.items() if v}
    if not grids:
        raise InputError("sweep needs at least one of --kss-grid, --nu-grid, --iters-grid")
    tasks = []
    for param, values in grids.items():
        for v in values:
            cfg = dict(base.to_dict(), **{param: v})
            resolve({}, {k: val for k, val in cfg.items()})
            tasks.extend((cfg, c, param, v) for c in cases)
    rows = _stage("sweep", _pool_map, _sweep_task, tasks, base.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep_runs.csv").write_text(rows_to_csv(rows))
    reports = [EvalReport(np.array([r["mean"]]), {"param": r["param"], "value": r["value"]}) for r in rows]
    summary = summarize_runs(reports, ("param", "value"))
    (out / "sweep_summary.csv").write_text(rows_to_csv(summary))
    for r in summary:
        print(f"{r['param']}={r['value']:g} n={r['n']}: {format_summary_row(r)}")
    return EXIT_OK


def cmd_info(args) -> int:
    print(f"forcereg {__version__}")
    d = RunConfig()
    print(f"defaults: k_ss={d.k_ss} nu={d.poisson_ratio} E={d.youngs_modulus} iters={d.max_iters} "
          f"step={d.step_mode} momentum={d.momentum}")
    if getattr(args, "mesh", None):
        m = load_volume_mesh(args.mesh)
        lo, hi = m.nodes.min(axis=0), m.nodes.max(axis=0)
        print(f"mesh: {m.n} nodes, {m.n_tets} tets, volume {m.volumes().sum():.6g} mm^3")
        print(f"surface: {m.surface.n_s} nodes, {len(m.surface.triangles)} triangles, "
              f"area {m.surface.areas.sum():.6g} mm^2, closed={m.surface.is_closed_manifold()}")
        print(f"bbox: {lo.tolist()} .. {hi.tolist()}")
    if getattr(args, "cloud", None):
        c = load_point_cloud(args.cloud)
        print(f"cloud: {c.m} points, bbox {c.points.min(axis=0).tolist()} .. {c.points.max(axis=0).tolist()}")
    return EXIT_OK


COMMANDS = {
    "register": cmd_register,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "icp": cmd_icp,
    "sweep": cmd_sweep,
    "info": cmd_info,
}


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "trace", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        code = COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except NumericalError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, FileNotFoundError, IsADirectoryError, KeyError, ValueError) as exc:
        print(f"error: input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    log.info("%s finished in %.2f s", args.command, time.perf_counter() - t0)
    return code


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
