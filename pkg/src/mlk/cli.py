"""Command-line interface: gen | compress | decompress | eval | inspect | bench."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from mlk import container, fdata, pipeline
from mlk.kernels import available_backends
from mlk.lagrange import NewtonOptions


def _add_config_flags(p):
    p.add_argument("--config", type=Path, help="JSON file mirroring PipelineConfig")
    p.add_argument("--workers", type=int)
    p.add_argument("--shards", type=int)
    p.add_argument("--mode", choices=["row", "col"])
    p.add_argument("--select", dest="scheme",
                   help="training selection scheme (row, row25, ..., colrandind)")
    p.add_argument("--tau", type=float)
    p.add_argument("--latent-dim", type=int, dest="latent_dim")
    p.add_argument("--pq-bits", type=int, dest="pq_bits")
    p.add_argument("--lambda-precision", choices=["f32", "f64"],
                   dest="lambda_precision")
    p.add_argument("--epochs", type=int, dest="epochs_full")
    p.add_argument("--retrain-period", type=int, dest="retrain_period")
    p.add_argument("--step-size", type=float, dest="step_size")
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.add_argument("--seed", type=int)


def _build_config(args) -> pipeline.PipelineConfig:
    base = {}
    if args.config:
        base = json.loads(args.config.read_text())
    for key in ("workers", "shards", "mode", "scheme", "tau", "latent_dim",
                "pq_bits", "lambda_precision", "epochs_full",
                "retrain_period", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    newton = dict(base.get("newton", {}))
    if getattr(args, "step_size", None) is not None:
        newton["step"] = args.step_size
    if getattr(args, "max_iter", None) is not None:
        newton["max_iter"] = args.max_iter
    if newton:
        base["newton"] = NewtonOptions(**newton)
    return pipeline.PipelineConfig.from_dict(base)


def _emit(obj, out: Path | None):
    text = json.dumps(obj, indent=1)
    if out:
        out.write_text(text)
    else:
        print(text)


def _report_dict(report):
    d = report.to_dict()
    # the full per-image list is bulky; keep the summary up front
    d["per_image_nrmse_max"] = report.max_per_image_nrmse()
    return d


def cmd_gen(args):
    grid = fdata.make_grid(args.rows, args.cols, args.v_perp_max,
                           args.v_par_max, args.mass)
    params = fdata.SyntheticParams(rho=args.rho, noise=args.noise,
                                   seed=args.seed)
    ds = fdata.gen_synthetic(args.planes, args.nodes, grid, params)
    fdata.save_dataset(ds, args.out)
    print(f"wrote {args.out}.json / {args.out}.f64 "
          f"({ds.n_planes}x{ds.n_nodes}x{grid.rows}x{grid.cols})")
    return 0


def cmd_compress(args):
    config = _build_config(args)
    if len(args.dataset) == 1:
        ds = fdata.load_dataset(args.dataset[0])
        archive, report, _ = pipeline.compress(ds, config)
        Path(args.out).write_bytes(archive)
        _emit(_report_dict(report), args.report)
        return 0
    datasets = [fdata.load_dataset(p) for p in args.dataset]
    results = pipeline.run_timesteps(datasets, config)
    reports = []
    for i, (archive, report, mode) in enumerate(results):
        path = Path(str(args.out).replace("{}", str(i)))
        path.write_bytes(archive)
        entry = _report_dict(report)
        entry["training_mode"] = mode
        entry["archive"] = str(path)
        reports.append(entry)
    _emit(reports, args.report)
    return 0


def cmd_decompress(args):
    archive = Path(args.archive).read_bytes()
    ds = pipeline.decompress(archive)
    fdata.save_dataset(ds, args.out)
    print(f"wrote {args.out}.json / {args.out}.f64")
    return 0


def cmd_eval(args):
    orig = fdata.load_dataset(args.dataset)
    archive = Path(args.archive).read_bytes()
    report = pipeline.evaluate(orig, archive)
    _emit(_report_dict(report), args.out)
    return 0 if all(report.gates.values()) else 1


def cmd_inspect(args):
    raw = Path(args.archive).read_bytes()
    preamble, blobs = container.read_archive(raw)
    info = {
        "n_shards": preamble.n_shards,
        "decomp_mode": preamble.decomp_mode,
        "n_planes": preamble.n_planes,
        "n_nodes": preamble.n_nodes,
        "rows": preamble.grid.rows,
        "cols": preamble.grid.cols,
        "timestep": preamble.timestep,
        "tau": preamble.tau,
        "seed": preamble.seed,
        "config_digest": preamble.config_digest.hex(),
        "archive_bytes": len(raw),
        "shards": [],
    }
    for blob in blobs:
        h = container.ShardHeader.unpack(blob)
        info["shards"].append({
            "scheme": h.scheme,
            "lambda_precision": h.lambda_precision,
            "n_images": h.n_images,
            "img_rows": h.img_rows,
            "img_cols": h.img_cols,
            "latent_dim": h.latent_dim,
            "pq_bits": h.pq_bits,
            "section_lengths": dict(zip(
                ("weights", "codes", "pq_table", "residuals", "lambdas",
                 "exceptions"), h.section_lengths)),
        })
    _emit(info, args.out)
    return 0


def cmd_bench(args):
    rng = np.random.Generator(np.random.PCG64(args.seed))
    d = args.cells
    n = args.images
    f_plus = np.abs(rng.lognormal(0, 2, size=(n, d))) + 1e-9
    a = np.abs(rng.uniform(0.01, 1.0, size=(4, d)))
    b_vecs = np.einsum("kd,nd->nk", a, f_plus * rng.uniform(0.99, 1.01, (n, d)))
    q = rng.integers(-5000, 5000, size=n * d).astype(np.int64)
    idx = rng.integers(0, 16, size=n * 4).astype(np.uint16)

    out = {"cells": d, "images": n, "backends": {}}
    for name, mod in available_backends().items():
        t0 = time.perf_counter()
        iters = 0
        for i in range(n):
            _, status, it = mod.newton_solve(f_plus[i], a, b_vecs[i],
                                             1.0, 50, 1e-13)
            iters += it
        t_newton = time.perf_counter() - t0

        t0 = time.perf_counter()
        enc = mod.varint_encode(mod.zigzag_map(q))
        dec, _ = mod.varint_decode(enc, q.size)
        t_varint = time.perf_counter() - t0
        assert np.array_equal(mod.zigzag_unmap(dec), q)

        t0 = time.perf_counter()
        packed = mod.pack_indices(idx, 4)
        got = mod.unpack_indices(packed, idx.size, 4)
        t_pack = time.perf_counter() - t0
        assert np.array_equal(got, idx)

        out["backends"][name] = {
            "newton_s": t_newton,
            "newton_iters": iters,
            "varint_s": t_varint,
            "pack_s": t_pack,
        }
    if len(out["backends"]) == 2:
        py = out["backends"]["python"]
        cc = out["backends"]["compiled"]
        out["speedup"] = {k[:-2]: py[k] / cc[k] if cc[k] > 0 else float("inf")
                          for k in ("newton_s", "varint_s", "pack_s")}
    _emit(out, args.out)
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="mlk",
        description="moment-preserving histogram-stack compressor")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--planes", type=int, default=8)
    p.add_argument("--nodes", type=int, default=4096)
    p.add_argument("--rows", type=int, default=33)
    p.add_argument("--cols", type=int, default=37)
    p.add_argument("--v-perp-max", type=float, default=5.0, dest="v_perp_max")
    p.add_argument("--v-par-max", type=float, default=5.0, dest="v_par_max")
    p.add_argument("--mass", type=float, default=1.0)
    p.add_argument("--rho", type=float, default=0.003)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("compress", help="compress dataset(s) into an archive")
    p.add_argument("dataset", nargs="+")
    p.add_argument("--out", required=True,
                   help="archive path; use {} for multi-timestep runs")
    p.add_argument("--report", type=Path, help="write the JSON report here")
    _add_config_flags(p)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="reconstruct a dataset")
    p.add_argument("archive")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("eval", help="decompress and score an archive")
    p.add_argument("dataset")
    p.add_argument("archive")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="dump archive/shard headers as JSON")
    p.add_argument("archive")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("bench", help="compare kernel backends")
    p.add_argument("--images", type=int, default=2000)
    p.add_argument("--cells", type=int, default=1221)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_bench)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
