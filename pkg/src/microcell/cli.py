"""Command-line pipeline driver.

Subcommands cover the full workflow: dataset generation, single-cell
homogenization queries, model training and evaluation, macro topology
optimization, structure synthesis, and connectivity reporting. Every
command takes explicit seeds, writes outputs atomically, and exits 0 on
success, 1 on validation problems, 2 on runtime failures.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from importlib import resources

import numpy as np

from . import assembly, dataset, topopt
from .errors import MicrocellError, ValidationError
from .geometry import VoxelGrid, voxelize
from .homogenization import homogenize_grid
from .hull import PropertyHull
from .model import CellGan, evaluate_model, noise_robustness_report
from .params import ShapeParams
from .topopt import DesignField, OptimizeResult


def _require_dir(path: str) -> str:
    d = path or "."
    if not os.path.isdir(d):
        raise ValidationError(f"output directory {d!r} does not exist")
    return d


def _require_file(path: str) -> str:
    if not os.path.isfile(path):
        raise ValidationError(f"input file {path!r} does not exist")
    return path


def _write_atomic(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _csv_text(header, rows) -> str:
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(value) -> str:
    return repr(float(value))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_dataset(args) -> int:
    out = _require_dir(args.out)
    records = dataset.generate_dataset(args.n, args.seed, resolution=args.resolution,
                                       threads=args.threads)
    train, test = dataset.split(records, ratio=0.8, seed=args.seed)
    hull = dataset.convex_hull(dataset.property_array(records))
    dataset.write_csv(records, os.path.join(out, "dataset.csv"))
    hull.save(os.path.join(out, "hull.json"))
    dataset.write_scaling(os.path.join(out, "scaling.json"), records, train,
                          seed=args.seed, resolution=args.resolution)
    props = dataset.property_array(records)
    print(f"wrote {len(records)} records ({len(train)} train / {len(test)} test)")
    print(f"E_H in [{props[:, 0].min():.2f}, {props[:, 0].max():.2f}] GPa, "
          f"nu_H in [{props[:, 1].min():.3f}, {props[:, 1].max():.3f}]")
    return 0


def _parse_triple(text: str, name: str) -> list[float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ValidationError(f"--{name} needs three comma-separated values")
    return [float(p) for p in parts]


def _dump_case_displacements(grid, out_dir) -> None:
    """Debug aid: fluctuation field of each unit-strain case as VTK."""
    from .homogenization import (PeriodicCellSystem, isotropic_constitutive,
                                 lame_parameters)
    from .meshing import write_vtk_vector_field

    lam, mu = lame_parameters(200.0, 0.3)
    system = PeriodicCellSystem(grid, isotropic_constitutive(lam, mu))
    chi = system.solve(system.loads())
    n = grid.resolution
    for case in range(6):
        # node numbering is x fastest; (i, j, k, comp) layout for the writer
        field = chi[:, case].reshape(-1, 3).reshape(n, n, n, 3, order="F")
        write_vtk_vector_field(os.path.join(out_dir, f"chi_case{case + 1}.vtk"),
                               np.ascontiguousarray(field), spacing=1.0 / n)


def cmd_homogenize(args) -> int:
    rows = []
    if args.solid:
        grid = VoxelGrid(args.resolution,
                         np.ones((args.resolution,) * 3, dtype=bool))
        props = homogenize_grid(grid)
        rows.append((None, props, 1.0))
    elif args.csv:
        for params in _read_params_csv(_require_file(args.csv)):
            grid = voxelize(params, args.resolution)
            props = homogenize_grid(grid)
            rows.append((params, props, grid.volume_fraction))
    else:
        if args.alpha is None or args.t is None:
            raise ValidationError("provide --alpha and --t, or --csv, or --solid")
        params = ShapeParams(*_parse_triple(args.alpha, "alpha"),
                             *_parse_triple(args.t, "t"))
        grid = voxelize(params, args.resolution)
        props = homogenize_grid(grid)
        rows.append((params, props, grid.volume_fraction))

    out_rows = []
    for params, props, vf in rows:
        pcols = ([""] * 6 if params is None
                 else [_fmt(v) for v in params.to_array().tolist()])
        out_rows.append(pcols + [_fmt(props.E_H), _fmt(props.nu_H), _fmt(vf)])
        print(f"E_H = {props.E_H:.4f} GPa  nu_H = {props.nu_H:.5f}  vf = {vf:.5f}")
    if args.out:
        _require_dir(os.path.dirname(args.out) or ".")
        header = ["alpha1", "alpha2", "alpha3", "t1", "t2", "t3", "E_H", "nu_H", "vf"]
        _write_atomic(args.out, _csv_text(header, out_rows))
    if args.dump_displacements:
        if len(rows) != 1 or rows[0][0] is None and not args.solid:
            raise ValidationError("--dump-displacements works on a single cell")
        _require_dir(args.dump_displacements)
        if args.solid:
            grid = VoxelGrid(args.resolution,
                             np.ones((args.resolution,) * 3, dtype=bool))
        else:
            grid = voxelize(rows[0][0], args.resolution)
        _dump_case_displacements(grid, args.dump_displacements)
    return 0


def _read_params_csv(path) -> list[ShapeParams]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or not row[0].strip() or row[0].startswith("#"):
                continue
            try:
                out.append(ShapeParams.from_array([float(v) for v in row[:6]]))
            except ValueError:
                if out:
                    raise
                continue  # header line
    if not out:
        raise ValidationError(f"no parameter rows found in {path}")
    return out


def _load_split(args):
    records = dataset.read_csv(_require_file(args.dataset))
    split_seed = args.split_seed
    if split_seed is None:
        scaling_path = os.path.join(os.path.dirname(args.dataset) or ".", "scaling.json")
        split_seed = (dataset.read_scaling(scaling_path)["seed"]
                      if os.path.isfile(scaling_path) else 0)
    return dataset.split(records, ratio=0.8, seed=split_seed)


def cmd_train(args) -> int:
    train, _ = _load_split(args)
    model = CellGan(iterations=args.iterations, batch_size=args.batch_size,
                    learning_rate=args.learning_rate,
                    gamma=0.0 if args.no_regressor else args.gamma,
                    seed=args.seed)
    X = dataset.params_matrix(train)
    y = dataset.property_array(train)
    model.fit(X, y)
    _require_dir(os.path.dirname(args.out) or ".")
    model.save(args.out)
    if args.losses:
        rows = [[int(r[0]), _fmt(r[1]), _fmt(r[2]), _fmt(r[3])] for r in model.history_]
        _write_atomic(args.losses, _csv_text(["iteration", "d_loss", "g_loss", "r_loss"],
                                             rows))
    print(f"trained {args.iterations} iterations on {len(train)} records -> {args.out}")
    return 0


def _error_summary(rows) -> dict:
    ok = [r for r in rows if r["eps_E"] is not None]
    if not ok:
        raise MicrocellError("no generated cell could be homogenized")
    # failed generations count as infinitely wrong: they stay in every
    # denominator and dominate the medians when frequent
    abs_E = np.array([abs(r["eps_E"]) if r["eps_E"] is not None else np.inf
                      for r in rows])
    abs_nu = np.array([abs(r["eps_nu"]) if r["eps_nu"] is not None else np.inf
                       for r in rows])
    finite_E = abs_E[np.isfinite(abs_E)]
    finite_nu = abs_nu[np.isfinite(abs_nu)]
    return {
        "evaluated": len(ok),
        "failed": len(rows) - len(ok),
        "median_abs_eps_E": float(np.median(abs_E)),
        "median_abs_eps_nu": float(np.median(abs_nu)),
        "mean_abs_eps_E": float(finite_E.mean()),
        "mean_abs_eps_nu": float(finite_nu.mean()),
        "p90_abs_eps_E": float(np.percentile(abs_E, 90)),
        "p90_abs_eps_nu": float(np.percentile(abs_nu, 90)),
        "frac_within_5pct_E": float((abs_E <= 0.05).mean()),
        "frac_within_5pct_nu": float((abs_nu <= 0.05).mean()),
    }


def _write_errors_csv(path, rows) -> None:
    header = ["E", "nu", "E_prime", "nu_prime", "eps_E", "eps_nu",
              "alpha1", "alpha2", "alpha3", "t1", "t2", "t3"]
    out = []
    for r in rows:
        p = [_fmt(v) for v in r["params"].to_array().tolist()]
        vals = ["" if r[k] is None else _fmt(r[k])
                for k in ("E_prime", "nu_prime", "eps_E", "eps_nu")]
        out.append([_fmt(r["E"]), _fmt(r["nu"])] + vals + p)
    _write_atomic(path, _csv_text(header, out))


def cmd_eval(args) -> int:
    _, test = _load_split(args)
    if not test:
        raise ValidationError("test split is empty")
    model = CellGan.load(_require_file(args.weights))
    scaling_path = os.path.join(os.path.dirname(args.dataset) or ".", "scaling.json")
    resolution = args.resolution
    if resolution is None:
        resolution = (dataset.read_scaling(scaling_path)["resolution"]
                      if os.path.isfile(scaling_path) else 40)
    conditions = dataset.property_array(test)
    rows = evaluate_model(model, conditions, resolution=resolution, seed=args.seed)
    _require_dir(os.path.dirname(args.out) or ".")
    _write_errors_csv(args.out, rows)
    summary = _error_summary(rows)
    print(json.dumps(summary, indent=1))
    if args.summary:
        _write_atomic(args.summary, json.dumps(summary, indent=1) + "\n")
    if args.noise_report:
        report = noise_robustness_report(model, conditions=args.conditions,
                                         draws=args.draws, resolution=resolution,
                                         seed=args.seed)
        header = ["E", "nu", "draws", "mean_eps_E", "std_eps_E",
                  "mean_eps_nu", "std_eps_nu"]
        out = [[_fmt(r["E"]), _fmt(r["nu"]), r["draws"], _fmt(r["mean_eps_E"]),
                _fmt(r["std_eps_E"]), _fmt(r["mean_eps_nu"]), _fmt(r["std_eps_nu"])]
               for r in report]
        _write_atomic(args.noise_report, _csv_text(header, out))
    return 0


def _field_csv(values: np.ndarray) -> str:
    return _csv_text(None, [[_fmt(v) for v in row] for row in values])


def _read_field_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh) if row])


def bundled_problem_path(name: str):
    ref = resources.files("microcell.problems").joinpath(f"{name}.json")
    if not ref.is_file():
        available = sorted(p.name[:-5] for p in resources.files("microcell.problems").iterdir()
                           if p.name.endswith(".json"))
        raise ValidationError(f"no bundled problem {name!r}; available: {available}")
    return ref


def cmd_optimize(args) -> int:
    out = _require_dir(args.out)
    if args.bundled:
        with resources.as_file(bundled_problem_path(args.bundled)) as path:
            problem = topopt.load_problem(path)
    else:
        problem = topopt.load_problem(_require_file(args.problem))
    hull = PropertyHull.load(_require_file(args.hull))
    result: OptimizeResult = topopt.optimize(
        problem["model"], hull, bounds=problem["bounds"], config=problem["config"],
        objective=problem["objective"], u_hat=problem["u_hat"],
        query_dofs=problem["query_dofs"], initial_nu=problem["initial_nu"])
    _write_atomic(os.path.join(out, "field_E.csv"), _field_csv(result.design.E))
    _write_atomic(os.path.join(out, "field_nu.csv"), _field_csv(result.design.nu))
    hist_rows = [[h["iteration"], _fmt(h["objective"]), _fmt(h["sum_E"]), _fmt(h["step"])]
                 for h in result.history]
    _write_atomic(os.path.join(out, "history.csv"),
                  _csv_text(["iteration", "objective", "sum_E", "step"], hist_rows))
    if args.vtk:
        from .meshing import write_vtk_vector_field
        from .topopt import solve_macro

        model = problem["model"]
        u = solve_macro(model, result.design)
        nodes = u.reshape(model.nx + 1, model.ny + 1, 2)
        vectors = np.zeros((model.nx + 1, model.ny + 1, 1, 3))
        vectors[:, :, 0, :2] = nodes
        write_vtk_vector_field(os.path.join(out, "displacement.vtk"), vectors,
                               spacing=model.element_size)
    first, last = result.history[0], result.history[-1]
    print(f"objective {first['objective']:.6g} -> {last['objective']:.6g} "
          f"after {result.iterations} iterations (converged={result.converged})")
    print(f"sum_E = {last['sum_E']:.4f} (budget {problem['config'].E_avg} per element)")
    return 0


def _write_assignments(path, structure) -> None:
    header = ["element_i", "element_j", "alpha1", "alpha2", "alpha3",
              "t1", "t2", "t3", "vf", "E", "nu"]
    rows = []
    for a in structure.assignments:
        rows.append([a.element[0], a.element[1]]
                    + [_fmt(v) for v in a.params.to_array().tolist()]
                    + [_fmt(a.vf), _fmt(a.condition[0]), _fmt(a.condition[1])])
    _write_atomic(path, _csv_text(header, rows))


def read_assignments(path) -> assembly.AssembledStructure:
    cells = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            params = ShapeParams(*(float(row[k]) for k in
                                   ("alpha1", "alpha2", "alpha3", "t1", "t2", "t3")))
            cells.append(assembly.CellAssignment(
                (int(row["element_i"]), int(row["element_j"])), params,
                float(row["vf"]), (float(row["E"]), float(row["nu"])), 0))
    if not cells:
        raise ValidationError(f"no assignments found in {path}")
    nx = max(a.element[0] for a in cells) + 1
    ny = max(a.element[1] for a in cells) + 1
    cells.sort(key=lambda a: a.element)
    return assembly.AssembledStructure(nx, ny, cells)


def _write_overlap(path, rows, summary) -> None:
    header = ["ai", "aj", "bi", "bj", "axis", "overlap_pct"]
    out = [[r["cell_a"][0], r["cell_a"][1], r["cell_b"][0], r["cell_b"][1],
            r["axis"], _fmt(r["overlap"])] for r in rows]
    _write_atomic(path, _csv_text(header, out))
    print(f"{'blended' if summary['blended'] else 'unblended'} overlap: "
          f"mean {summary['mean']:.2f}% min {summary['min']:.2f}% "
          f"over {summary['count']} interfaces")


def cmd_synthesize(args) -> int:
    out = _require_dir(args.out)
    E = _read_field_csv(_require_file(os.path.join(args.fields, "field_E.csv")))
    nu = _read_field_csv(_require_file(os.path.join(args.fields, "field_nu.csv")))
    design = DesignField(E, nu)
    model = CellGan.load(_require_file(args.weights))
    structure = assembly.assign_cells(design, model, n_candidates=args.n,
                                      seed=args.seed, resolution=args.resolution)
    structure = assembly.synthesize(structure)
    _write_assignments(os.path.join(out, "assignments.csv"), structure)

    rows, summary = assembly.connectivity_report(structure, blended=False,
                                                 resolution=args.resolution)
    _write_overlap(os.path.join(out, "overlap_report.csv"), rows, summary)
    rows_b, summary_b = assembly.connectivity_report(structure, blended=True,
                                                     resolution=args.resolution)
    _write_overlap(os.path.join(out, "overlap_blended.csv"), rows_b, summary_b)

    density = assembly.structure_density(structure, resolution=args.resolution)
    meta = {"overall_density": density,
            "mean_cell_vf": structure.overall_density,
            "unblended_overlap": {k: summary[k] for k in ("min", "mean", "count")},
            "blended_overlap": {k: summary_b[k] for k in ("min", "mean", "count")}}
    print(f"overall density {density:.4f} over {len(structure.assignments)} cells")

    for fmt in (args.formats.split(",") if args.formats else []):
        ext = "vtk" if fmt == "vtk" else "stl"
        assembly.export_structure(structure, fmt,
                                  os.path.join(out, f"structure_{fmt}.{ext}"),
                                  resolution=args.resolution)

    if args.recheck:
        problem = topopt.load_problem(_require_file(args.problem))
        rows_r, achieved, _ = assembly.macro_recheck(
            structure, problem["model"], resolution=args.recheck_resolution)
        header = ["element_i", "element_j", "E_target", "nu_target",
                  "E_achieved", "nu_achieved", "eps_E", "eps_nu"]
        out_rows = [[r["element"][0], r["element"][1], _fmt(r["E_target"]),
                     _fmt(r["nu_target"]), _fmt(r["E_achieved"]), _fmt(r["nu_achieved"]),
                     _fmt(r["eps_E"]), _fmt(r["eps_nu"])] for r in rows_r]
        _write_atomic(os.path.join(out, "recheck.csv"), _csv_text(header, out_rows))
        meta["recheck_mean_abs_eps_E"] = float(
            np.mean([abs(r["eps_E"]) for r in rows_r]))
        meta["recheck_mean_abs_eps_nu"] = float(
            np.mean([abs(r["eps_nu"]) for r in rows_r]))
    _write_atomic(os.path.join(out, "synthesis.json"), json.dumps(meta, indent=1) + "\n")
    return 0


def cmd_report(args) -> int:
    structure = read_assignments(_require_file(args.assignments))
    _require_dir(os.path.dirname(args.out) or ".")
    rows, summary = assembly.connectivity_report(structure, blended=args.blended,
                                                 resolution=args.resolution)
    _write_overlap(args.out, rows, summary)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="microcell",
        description="Inverse design of functionally graded TPMS cellular structures")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="sample, homogenize, and persist a dataset")
    p.add_argument("--n", type=int, default=924, help="target number of valid records")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--resolution", type=int, default=40)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("homogenize", help="effective properties of one or more cells")
    p.add_argument("--alpha", help="alpha1,alpha2,alpha3")
    p.add_argument("--t", help="t1,t2,t3")
    p.add_argument("--csv", help="CSV of 6-column parameter rows")
    p.add_argument("--solid", action="store_true", help="all-solid reference cell")
    p.add_argument("--resolution", type=int, default=40)
    p.add_argument("--out", help="optional CSV output path")
    p.add_argument("--dump-displacements", metavar="DIR",
                   help="debug: write the six fluctuation fields as VTK")
    p.set_defaults(func=cmd_homogenize)

    p = sub.add_parser("train", help="train the conditional generative model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default="weights.json")
    p.add_argument("--losses", default="losses.csv")
    p.add_argument("--iterations", type=int, default=5000)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=2e-4)
    p.add_argument("--gamma", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-seed", type=int, default=None,
                   help="defaults to the dataset generation seed")
    p.add_argument("--no-regressor", action="store_true",
                   help="ablation: train without the property regressor")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="property errors of generated cells on the test split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", default="errors.csv")
    p.add_argument("--summary", help="optional JSON summary path")
    p.add_argument("--resolution", type=int, default=None,
                   help="defaults to the dataset resolution")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-seed", type=int, default=None)
    p.add_argument("--noise-report", help="CSV path for the noise-perturbation study")
    p.add_argument("--conditions", type=int, default=50)
    p.add_argument("--draws", type=int, default=50)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("optimize", help="macro topology optimization of (E, nu) maps")
    p.add_argument("--problem", help="problem.json path")
    p.add_argument("--bundled", help="name of a bundled problem (cantilever, "
                                     "halfsine, fullsine)")
    p.add_argument("--hull", required=True, help="hull.json from gen-dataset")
    p.add_argument("--out", default=".")
    p.add_argument("--vtk", action="store_true",
                   help="also write the displacement field as VTK")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("synthesize", help="assemble unit cells over optimized fields")
    p.add_argument("--fields", required=True,
                   help="directory containing field_E.csv and field_nu.csv")
    p.add_argument("--weights", required=True)
    p.add_argument("--out", default=".")
    p.add_argument("--n", type=int, default=10, help="candidates per element")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=20)
    p.add_argument("--formats", default="stl",
                   help="comma list of stl, stl-voxel, vtk (empty to skip)")
    p.add_argument("--recheck", action="store_true",
                   help="re-solve the macro problem with achieved properties")
    p.add_argument("--problem", help="problem.json (required with --recheck)")
    p.add_argument("--recheck-resolution", type=int, default=10)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("report", help="connectivity report from saved assignments")
    p.add_argument("--assignments", required=True)
    p.add_argument("--out", default="overlap_report.csv")
    p.add_argument("--blended", action="store_true")
    p.add_argument("--resolution", type=int, default=20)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "synthesize" and args.recheck and not args.problem:
            raise ValidationError("--recheck needs --problem")
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (MicrocellError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
