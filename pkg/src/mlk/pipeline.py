"""Per-shard compression pipeline, decompression, evaluation, and
timestep sequencing.

Shard count is a configuration value; the worker pool size only controls
execution parallelism, so archives are byte-identical for any worker
count.  Per-shard processing is pure given (shard, images, seed), and the
merger joins results in shard order.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from mlk import autoencoder as ae
from mlk import container, lagrange, quantizer, residual
from mlk.decomp import SelectionScheme, mix_seed, partition, select_training
from mlk.errors import ConfigError, FormatError
from mlk.fdata import FDataset, VelocityGrid, dataset_nbytes
from mlk.qoi import (ErrorReport, compute_qoi_batch, compression_ratio,
                     image_nrmse_batch, nrmse, qoi_error_report)

__all__ = ["PipelineConfig", "TimestepState", "compress", "decompress",
           "evaluate", "run_timesteps", "QOI_GATES"]

QOI_GATES = {"f32": 1e-8, "f64": 1e-12}
_STAGES = ("train", "encode", "pq", "find_eb", "newton", "pack", "other")


@dataclass(frozen=True)
class PipelineConfig:
    workers: int = 4
    shards: int = 2
    mode: str = "col"
    scheme: str = "colrandind"
    tau: float = 1e-3
    latent_dim: int = 4
    pq_bits: int = 4
    lambda_precision: str = "f32"
    learning_rate: float = 0.001
    batch_size: int = 128
    epochs_full: int = 100
    epochs_incremental: int = 2
    retrain_period: int = 25
    static_model: bool = False
    newton: lagrange.NewtonOptions = field(
        default_factory=lagrange.NewtonOptions)
    seed: int = 0

    def __post_init__(self):
        if min(self.workers, self.shards, self.latent_dim, self.epochs_full,
               self.epochs_incremental, self.retrain_period,
               self.batch_size) < 1:
            raise ConfigError("all pipeline counts must be >= 1")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.pq_bits not in (4, 6, 8):
            raise ConfigError("pq_bits must be 4, 6, or 8")
        if self.lambda_precision not in ("f32", "f64"):
            raise ConfigError("lambda_precision must be 'f32' or 'f64'")
        if self.mode not in ("row", "col"):
            raise ConfigError("mode must be 'row' or 'col'")
        SelectionScheme(self.scheme)
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict):
        d = dict(d)
        if isinstance(d.get("newton"), dict):
            d["newton"] = lagrange.NewtonOptions(**d["newton"])
        return cls(**d)

    def digest(self) -> bytes:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).digest()

    @property
    def lambda_bytes(self) -> int:
        return 4 if self.lambda_precision == "f32" else 8


@dataclass
class TimestepState:
    """Carries each shard's trained model to the next timestep."""
    models: list
    timestep_index: int = 0


@dataclass
class _ShardResult:
    blob: bytes
    final_images: np.ndarray
    ae_errors: np.ndarray
    stage4_errors: np.ndarray
    n_selected: int
    n_converged: int
    n_exceptions: int
    n_images: int
    timings: dict
    model: ae.AEModel


# ---------------------------------------------------------------------------
# section payload codecs

def _encode_lambda_section(lams, qois, precision: str) -> bytes:
    inter = np.concatenate([lams, qois], axis=1)
    dtype = "<f4" if precision == "f32" else "<f8"
    return inter.astype(dtype).tobytes()


def _decode_lambda_section(raw: bytes, n_images: int, precision_bytes: int):
    dtype = "<f4" if precision_bytes == 4 else "<f8"
    expected = n_images * 8 * precision_bytes
    if len(raw) != expected:
        raise FormatError("lambda section length mismatch")
    inter = np.frombuffer(raw, dtype=dtype).reshape(n_images, 8)
    inter = inter.astype(np.float64)
    return inter[:, :4], inter[:, 4:]


def _encode_residual_section(plan: residual.ResidualPlan) -> bytes:
    parts = [struct.pack("<dI", plan.eb, len(plan.selected))]
    for idx, payload in zip(plan.selected, plan.payloads):
        parts.append(struct.pack("<II", int(idx), len(payload)))
        parts.append(payload)
    return b"".join(parts)


def _decode_residual_section(raw: bytes):
    if len(raw) < 12:
        raise FormatError("residual section truncated")
    eb, count = struct.unpack_from("<dI", raw, 0)
    off = 12
    entries = []
    for _ in range(count):
        if off + 8 > len(raw):
            raise FormatError("residual section truncated")
        idx, length = struct.unpack_from("<II", raw, off)
        off += 8
        entries.append((idx, raw[off:off + length]))
        off += length
    if off != len(raw):
        raise FormatError("residual section has trailing bytes")
    return eb, entries


def _encode_exceptions(indices, images) -> bytes:
    parts = [struct.pack("<I", len(indices))]
    for idx, img in zip(indices, images):
        parts.append(struct.pack("<I", int(idx)))
        parts.append(np.ascontiguousarray(img, dtype="<f8").tobytes())
    return b"".join(parts)


def _decode_exceptions(raw: bytes, rows: int, cols: int):
    if len(raw) < 4:
        raise FormatError("exceptions section truncated")
    count = struct.unpack_from("<I", raw, 0)[0]
    off = 4
    out = {}
    size = rows * cols * 8
    for _ in range(count):
        if off + 4 + size > len(raw):
            raise FormatError("exceptions section truncated")
        idx = struct.unpack_from("<I", raw, off)[0]
        off += 4
        img = np.frombuffer(raw, dtype="<f8", count=rows * cols,
                            offset=off).reshape(rows, cols)
        out[idx] = img.copy()
        off += size
    if off != len(raw):
        raise FormatError("exceptions section has trailing bytes")
    return out


# ---------------------------------------------------------------------------
# compression

def _shard_images(ds: FDataset, shard) -> np.ndarray:
    planes = np.fromiter((p for p, _ in shard.members), dtype=np.intp)
    nodes = np.fromiter((x for _, x in shard.members), dtype=np.intp)
    return ds.data[planes, nodes]


def _compress_shard(shard, images, grid: VelocityGrid, n_planes: int,
                    config: PipelineConfig, prev_model,
                    train_full: bool) -> _ShardResult:
    timings = dict.fromkeys(_STAGES, 0.0)
    t_start = time.perf_counter()
    seed = mix_seed(config.seed, shard.worker_id)
    n_img, rows, cols = images.shape
    codec = residual.BuiltinCodec()

    t0 = time.perf_counter()
    if config.static_model and prev_model is not None:
        model = prev_model
    else:
        sel = select_training(shard, SelectionScheme(config.scheme),
                              n_planes, seed)
        epochs = config.epochs_full if train_full else config.epochs_incremental
        tc = ae.TrainConfig(learning_rate=config.learning_rate,
                            batch_size=config.batch_size, epochs=epochs,
                            seed=seed)
        init = None if train_full else prev_model
        model = ae.train(images[sel], tc, init=init,
                         latent_dim=config.latent_dim)
    timings["train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    latents = ae.encode_batch(model, images)
    timings["encode"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    codebook = quantizer.pq_train(latents, 2 ** config.pq_bits, seed)
    codes = quantizer.pq_encode(codebook, latents)
    q_latents = quantizer.pq_decode(codebook, codes, n_img)
    recon = ae.decode_batch(model, q_latents, (rows, cols))
    timings["pq"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ae_errors = image_nrmse_batch(images, recon)
    degenerate = ~np.isfinite(ae_errors)
    exceptions = set(int(i) for i in np.flatnonzero(degenerate))
    eligible = np.flatnonzero(~degenerate & (ae_errors > config.tau))
    if eligible.size:
        eb, lossless = residual.find_error_bound(
            images[eligible], recon[eligible], config.tau, codec)
        payloads = []
        for i in eligible:
            r = images[i] - recon[i]
            payloads.append(codec.compress_lossless(r) if lossless
                            else codec.compress(r, eb))
        plan = residual.ResidualPlan(tau=config.tau, eb=eb, lossless=lossless,
                                     selected=eligible, payloads=payloads)
    else:
        plan = residual.ResidualPlan(tau=config.tau, eb=0.0, lossless=False,
                                     selected=eligible, payloads=[])
    corrected = residual.apply_residuals(recon, plan, codec)
    stage4_errors = image_nrmse_batch(images, corrected)
    timings["find_eb"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    qois_true = compute_qoi_batch(images, grid)
    qoi_mat = np.stack([qois_true.n, qois_true.u_par,
                        qois_true.t_perp, qois_true.t_par], axis=1)
    if config.lambda_precision == "f32":
        qoi_stored = qoi_mat.astype(np.float32).astype(np.float64)
    else:
        qoi_stored = qoi_mat.copy()
    raw_lams, statuses, _ = lagrange.project_batch(corrected, grid,
                                                   qoi_stored, config.newton)
    lams = np.zeros((n_img, 4))
    n_converged = 0
    for i in range(n_img):
        if i in exceptions:
            continue
        if statuses[i] != lagrange.NewtonStatus.CONVERGED:
            exceptions.add(i)
            continue
        lam_cast, overflowed = lagrange.cast_lambda(raw_lams[i],
                                                    config.lambda_precision)
        if overflowed:
            exceptions.add(i)
            continue
        lams[i] = lam_cast
        n_converged += 1

    final = lagrange.apply_lambda_batch(corrected, lams, grid, qoi_stored,
                                        floor=config.newton.floor)
    # safety net: anything the projection pushed past the bound is stored
    # verbatim, so the decompressed tensor always meets the PD guarantee
    # (n_converged still counts Newton convergence for reporting)
    final_errors = image_nrmse_batch(images, final)
    for i in np.flatnonzero(~(final_errors <= config.tau)):
        exceptions.add(int(i))
    exc_sorted = sorted(exceptions)
    if exc_sorted:
        lams[exc_sorted] = 0.0
        qoi_stored[exc_sorted] = 0.0
        for i in exc_sorted:
            final[i] = images[i]
    timings["newton"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    sections = {
        "weights": model.to_bytes(),
        "codes": codes,
        "pq_table": codebook.to_bytes(),
        "residuals": _encode_residual_section(plan),
        "lambdas": _encode_lambda_section(lams, qoi_stored,
                                          config.lambda_precision),
        "exceptions": _encode_exceptions(exc_sorted,
                                         [images[i] for i in exc_sorted]),
    }
    blob = container.write_shard(
        dict(scheme=container.SCHEME_FULL,
             lambda_precision=config.lambda_bytes,
             n_images=n_img, img_rows=rows, img_cols=cols,
             latent_dim=config.latent_dim, pq_bits=config.pq_bits),
        sections)
    timings["pack"] = time.perf_counter() - t0
    timings["other"] = (time.perf_counter() - t_start
                        - sum(timings[s] for s in _STAGES if s != "other"))

    return _ShardResult(
        blob=blob, final_images=final, ae_errors=ae_errors,
        stage4_errors=stage4_errors, n_selected=int(eligible.size),
        n_converged=n_converged, n_exceptions=len(exc_sorted),
        n_images=n_img, timings=timings, model=model)


def compress(ds: FDataset, config: PipelineConfig,
             state: TimestepState | None = None):
    """Run the five stages; returns (archive bytes, report, new state)."""
    shards = partition(ds.n_planes, ds.n_nodes, config.shards, config.mode)
    if state is not None and len(state.models) != len(shards):
        raise ConfigError("timestep state does not match the shard count")
    index = state.timestep_index if state is not None else 0
    train_full = (state is None) or (not config.static_model
                                     and index % config.retrain_period == 0)

    def job(i):
        prev = state.models[i] if state is not None else None
        return _compress_shard(shards[i], _shard_images(ds, shards[i]),
                               ds.grid, ds.n_planes, config, prev, train_full)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(job, range(len(shards))))
    else:
        results = [job(i) for i in range(len(shards))]

    preamble = container.ArchivePreamble(
        n_shards=len(shards), decomp_mode=config.mode, n_planes=ds.n_planes,
        n_nodes=ds.n_nodes, grid=ds.grid, timestep=ds.timestep,
        tau=config.tau, seed=config.seed, config_digest=config.digest())
    archive = container.write_archive(preamble, [r.blob for r in results])

    recon_ds = _assemble(ds.grid, shards, [r.final_images for r in results],
                         ds.n_planes, ds.n_nodes, ds.timestep)
    report = _build_report(ds, recon_ds, archive, results, config.tau)
    new_state = TimestepState(models=[r.model for r in results],
                              timestep_index=index + 1)
    return archive, report, new_state


def _assemble(grid, shards, image_stacks, n_planes, n_nodes,
              timestep) -> FDataset:
    data = np.empty((n_planes, n_nodes, grid.rows, grid.cols))
    for shard, imgs in zip(shards, image_stacks):
        for j, (p, x) in enumerate(shard.members):
            data[p, x] = imgs[j]
    return FDataset(grid=grid, data=data, timestep=timestep)


def _build_report(orig: FDataset, recon: FDataset, archive: bytes,
                  results, tau: float) -> ErrorReport:
    per_image = image_nrmse_batch(orig.images(), recon.images())
    qoi_errs, qoi_max = qoi_error_report(orig, recon)
    n_total = sum(r.n_images for r in results)
    timings = {}
    for stage in _STAGES:
        vals = [r.timings[stage] for r in results]
        timings[stage] = {"sum": sum(vals), "max": max(vals)}
    ae_err_all = np.concatenate([r.ae_errors for r in results])
    ae_acc = float(np.mean(np.where(np.isfinite(ae_err_all), ae_err_all,
                                    np.inf) <= tau))
    return ErrorReport(
        pd_nrmse=nrmse(orig.images().reshape(-1), recon.images().reshape(-1)),
        per_image_nrmse=per_image.tolist(),
        qoi_nrmse=qoi_errs,
        max_qoi_nrmse=qoi_max,
        compression_ratio=compression_ratio(dataset_nbytes(orig),
                                            len(archive)),
        ae_accuracy=ae_acc,
        residual_fraction=sum(r.n_selected for r in results) / n_total,
        convergence_fraction=sum(r.n_converged for r in results) / n_total,
        exception_count=sum(r.n_exceptions for r in results),
        stage_timings=timings,
    )


# ---------------------------------------------------------------------------
# decompression

def _decode_shard(blob_bytes: bytes, grid: VelocityGrid, members):
    """Decode one shard; returns (ae_recon, corrected, final) stacks."""
    blob = container.read_shard(blob_bytes)
    h = blob.header
    n_img = h.n_images
    if n_img != len(members):
        raise FormatError("shard image count disagrees with the partition")
    model = ae.AEModel.from_bytes(blob.sections["weights"], h.latent_dim,
                                  h.img_rows * h.img_cols)
    codebook = quantizer.PQCodebook.from_bytes(blob.sections["pq_table"],
                                               h.latent_dim, 1 << h.pq_bits)
    latents = quantizer.pq_decode(codebook, blob.sections["codes"], n_img)
    recon = ae.decode_batch(model, latents, (h.img_rows, h.img_cols))

    _, entries = _decode_residual_section(blob.sections["residuals"])
    codec = residual.BuiltinCodec()
    corrected = recon.copy()
    for idx, payload in entries:
        r = codec.decompress(payload)
        if r.shape != (h.img_rows, h.img_cols):
            raise FormatError("residual payload dims do not match the shard")
        corrected[idx] = corrected[idx] + r

    lams, qois = _decode_lambda_section(blob.sections["lambdas"], n_img,
                                        h.lambda_precision)
    final = lagrange.apply_lambda_batch(corrected, lams, grid, qois)
    exceptions = _decode_exceptions(blob.sections["exceptions"],
                                    h.img_rows, h.img_cols)
    for idx, img in exceptions.items():
        final[idx] = img
    return recon, corrected, final


def decompress(archive: bytes) -> FDataset:
    """Invert compress(); exception images are reproduced verbatim."""
    preamble, blobs = container.read_archive(archive)
    shards = partition(preamble.n_planes, preamble.n_nodes,
                       preamble.n_shards, preamble.decomp_mode)
    finals = []
    for shard, blob in zip(shards, blobs):
        _, _, final = _decode_shard(blob, preamble.grid, shard.members)
        finals.append(final)
    return _assemble(preamble.grid, shards, finals, preamble.n_planes,
                     preamble.n_nodes, preamble.timestep)


def evaluate(orig: FDataset, archive: bytes) -> ErrorReport:
    """Decompress and fill a full error report, including gate verdicts."""
    t0 = time.perf_counter()
    preamble, blobs = container.read_archive(archive)
    if (preamble.n_planes, preamble.n_nodes) != (orig.n_planes, orig.n_nodes) \
            or (preamble.grid.rows, preamble.grid.cols) != (orig.grid.rows,
                                                            orig.grid.cols):
        raise ConfigError("archive dimensions do not match the dataset")
    shards = partition(preamble.n_planes, preamble.n_nodes,
                       preamble.n_shards, preamble.decomp_mode)
    finals = []
    ae_errors = []
    lambda_precision = None
    for shard, blob in zip(shards, blobs):
        imgs = _shard_images(orig, shard)
        recon, _, final = _decode_shard(blob, preamble.grid, shard.members)
        finals.append(final)
        ae_errors.append(image_nrmse_batch(imgs, recon))
        lambda_precision = container.ShardHeader.unpack(blob).lambda_precision
    recon_ds = _assemble(preamble.grid, shards, finals, preamble.n_planes,
                         preamble.n_nodes, preamble.timestep)
    decode_time = time.perf_counter() - t0

    t0 = time.perf_counter()
    per_image = image_nrmse_batch(orig.images(), recon_ds.images())
    qoi_errs, qoi_max = qoi_error_report(orig, recon_ds)
    ae_err_all = np.concatenate(ae_errors)
    tau = preamble.tau
    qoi_gate = QOI_GATES["f32" if lambda_precision == 4 else "f64"]
    report = ErrorReport(
        pd_nrmse=nrmse(orig.images().reshape(-1), recon_ds.images().reshape(-1)),
        per_image_nrmse=per_image.tolist(),
        qoi_nrmse=qoi_errs,
        max_qoi_nrmse=qoi_max,
        compression_ratio=compression_ratio(dataset_nbytes(orig),
                                            len(archive)),
        ae_accuracy=float(np.mean(np.where(np.isfinite(ae_err_all),
                                           ae_err_all, np.inf) <= tau)),
        residual_fraction=float(np.mean(np.where(np.isfinite(ae_err_all),
                                                 ae_err_all, np.inf) > tau)),
        stage_timings={"decode": {"sum": decode_time, "max": decode_time},
                       "metrics": {"sum": time.perf_counter() - t0,
                                   "max": time.perf_counter() - t0}},
        gates={
            "pd_per_image": bool(np.all(per_image <= tau)),
            "qoi": bool(qoi_max <= qoi_gate),
        },
    )
    return report


def run_timesteps(datasets, config: PipelineConfig):
    """Compress a sequence; full training every retrain_period steps.

    Returns a list of (archive, report, mode) with mode in
    {"full", "incremental", "static"}.
    """
    if not datasets:
        raise ConfigError("need at least one timestep")
    out = []
    state = None
    for index, ds in enumerate(datasets):
        if state is None:
            mode = "full"
        elif config.static_model:
            mode = "static"
        elif index % config.retrain_period == 0:
            mode = "full"
        else:
            mode = "incremental"
        archive, report, state = compress(ds, config, state)
        out.append((archive, report, mode))
    return out
