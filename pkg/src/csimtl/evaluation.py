"""NMSE, classifier accuracy, routing gap, complexity comparison, and the
2-D code embedding.

NMSE is computed on the normalized tensors the networks consume (the raw
complex domain is available through the normalization parameters).  Perfect
reconstructions are floored at -100 dB to keep reports finite.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .channel import geometric_region, iter_dataset
from .models import ArchSpec, decoder_layers, encoder_layers, gatenet_layers
from .nn import count_flops, count_params
from .preprocess import (denormalize, fit_normalizer, split_normalize,
                         to_angle_delay, truncate)
from .training import (ModeBundle, TaskData, build_bundle, infer, make_split,
                       train_s2s)

NMSE_FLOOR_DB = -100.0


@dataclass
class EvalReport:
    mode: str
    arch: str
    cr: str
    nmse_db: dict[int, float] = field(default_factory=dict)
    oracle_nmse_db: dict[int, float] = field(default_factory=dict)
    gate_accuracy: dict[int, float] = field(default_factory=dict)
    nmse_gap_db: dict[int, float] = field(default_factory=dict)
    excluded_samples: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def average_nmse_db(self) -> float:
        return float(np.mean(list(self.nmse_db.values())))


def nmse_db(targets: np.ndarray, recons: np.ndarray) -> tuple[float, int]:
    """10*log10(mean ||H - H_hat||^2 / ||H||^2) over samples.

    Accepts real or complex arrays.  Zero-norm targets are excluded and
    counted.  Returns (value dB, excluded).
    """
    t = targets.reshape(targets.shape[0], -1)
    r = recons.reshape(recons.shape[0], -1)
    if np.iscomplexobj(t) or np.iscomplexobj(r):
        norms = (np.abs(t).astype(np.float64) ** 2).sum(axis=1)
        err_all = np.abs(t - r).astype(np.float64) ** 2
    else:
        t = t.astype(np.float64)
        r = r.astype(np.float64)
        norms = (t ** 2).sum(axis=1)
        err_all = (t - r) ** 2
    keep = norms > 0
    excluded = int((~keep).sum())
    if not keep.any():
        raise ValueError("all samples have zero norm")
    ratio = float((err_all[keep].sum(axis=1) / norms[keep]).mean())
    if ratio <= 10.0 ** (NMSE_FLOOR_DB / 10.0):
        return NMSE_FLOOR_DB, excluded
    return 10.0 * np.log10(ratio), excluded


def per_task_nmse(bundle: ModeBundle, tasks: list[TaskData],
                  which: str = "test", oracle: bool = False,
                  norm_params=None):
    """Per-task NMSE of a trained bundle on one split.

    Default domain is the normalized tensor the networks consume; passing the
    dataset's normalization parameters switches to the raw complex
    angle-delay domain instead.
    """
    out: dict[int, float] = {}
    excluded = 0
    for j, task in enumerate(tasks):
        idx = getattr(task, f"{which}_idx")
        x = task.tensors[idx]
        labels = np.full(idx.size, j)
        if bundle.mode == "m2m" or oracle:
            recon, _ = infer(bundle, x, oracle_tasks=labels)
        else:
            recon, _ = infer(bundle, x)
        if norm_params is not None:
            val, exc = nmse_db(denormalize(x, norm_params),
                               denormalize(recon, norm_params))
        else:
            val, exc = nmse_db(x, recon)
        out[task.task_id] = val
        excluded += exc
    return out, excluded


def gate_accuracy(bundle: ModeBundle, tasks: list[TaskData],
                  which: str = "test") -> dict[int, float]:
    """Percentage of samples routed to the true task, per task."""
    if bundle.gatenet is None:
        raise ValueError("bundle has no trained classifier")
    encoder = bundle.encoders[0]
    out = {}
    for j, task in enumerate(tasks):
        idx = getattr(task, f"{which}_idx")
        codes = encoder.predict(task.tensors[idx])
        probs = bundle.gatenet.predict(codes)
        pred = probs.argmax(axis=1)
        out[task.task_id] = float((pred == j).mean() * 100.0)
    return out


def nmse_gap(bundle: ModeBundle, tasks: list[TaskData],
             which: str = "test") -> dict[int, float]:
    """Per-task NMSE(classifier routing) - NMSE(oracle routing), in dB."""
    routed, _ = per_task_nmse(bundle, tasks, which, oracle=False)
    oracle, _ = per_task_nmse(bundle, tasks, which, oracle=True)
    return {k: routed[k] - oracle[k] for k in routed}


def _ae_params(spec: ArchSpec) -> tuple[int, int]:
    enc = count_params(encoder_layers(spec))
    dec = count_params(decoder_layers(spec))
    return enc, dec


def _ae_flops(spec: ArchSpec) -> int:
    return (count_flops(encoder_layers(spec), spec.input_shape)
            + count_flops(decoder_layers(spec), (spec.code_len,)))


def gatenet_complexity(code_len: int, n_tasks: int) -> tuple[int, int]:
    layers = gatenet_layers(code_len, n_tasks)
    return count_params(layers), count_flops(layers, (code_len,))


def complexity_table(spec_sim: ArchSpec, spec_com: ArchSpec, n_tasks: int,
                     task_samples: list[int]) -> list[dict]:
    """Memory and time complexity rows for the three deployment modes.

    Encoder/decoder memory in parameters, offline training time as summed
    per-sample FLOPs over one pass of the training data, online testing as
    per-sample FLOPs.  The single-network mode uses the complex architecture;
    the multi-network modes use the simple one.
    """
    if len(task_samples) != n_tasks:
        raise ValueError("one sample count per task required")
    enc_c, dec_c = _ae_params(spec_com)
    enc_s, dec_s = _ae_params(spec_sim)
    ae_c = _ae_flops(spec_com)
    ae_s = _ae_flops(spec_sim)
    gate_p, gate_f = gatenet_complexity(spec_sim.code_len, n_tasks)
    n_total = sum(task_samples)
    return [
        {"mode": "s2s", "arch": spec_com.label(),
         "enc_memory": enc_c, "dec_memory": dec_c,
         "train_flops": n_total * ae_c, "test_flops": ae_c},
        {"mode": "m2m", "arch": spec_sim.label(),
         "enc_memory": n_tasks * enc_s, "dec_memory": n_tasks * dec_s,
         "train_flops": n_total * ae_s, "test_flops": ae_s},
        {"mode": "s2m", "arch": spec_sim.label(),
         "enc_memory": enc_s, "dec_memory": n_tasks * dec_s + gate_p,
         "train_flops": n_total * (ae_s + gate_f),
         "test_flops": ae_s + gate_f},
    ]


def pca_embed(codes: np.ndarray, dims: int = 2):
    """Project codes onto the top principal components.

    Mean-centered, eigenvectors ordered by decreasing explained variance,
    sign fixed so each component's first nonzero loading is positive.
    Rank-deficient inputs yield zero trailing axes and a warning.
    Returns (points (N, dims), explained_variance (dims,)).
    """
    x = np.asarray(codes, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < dims or x.shape[1] < dims:
        raise ValueError("need at least `dims` samples and code length")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / max(x.shape[0] - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:dims]
    comps = eigvecs[:, order]
    var = np.maximum(eigvals[order], 0.0)
    tol = max(eigvals.max(), 0.0) * 1e-12
    for i in range(dims):
        if var[i] <= tol:
            comps[:, i] = 0.0
            var[i] = 0.0
            warnings.warn("code cloud is rank deficient; trailing embedding "
                          "axis set to zero")
        else:
            nz = np.nonzero(np.abs(comps[:, i]) > 1e-12)[0]
            if nz.size and comps[nz[0], i] < 0:
                comps[:, i] = -comps[:, i]
    return centered @ comps, var


def write_embedding_csv(path, points: np.ndarray, labels: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("x,y,task_id\n")
        for (x, y), t in zip(points, labels):
            fh.write(f"{x:.9g},{y:.9g},{int(t)}\n")


def range_sweep(diameters, arch_spec, array_cfg, n_delay_bins, train_cfg,
                center=(100.0, 0.0), cluster_count=6, los=True,
                n_samples=1200):
    """NMSE of pooled-mode training versus the sampling-disc diameter.

    One geometric region per diameter (angle/delay ranges follow from the
    disc), each with its own dataset, normalizer, and fixed training budget.
    Returns [(diameter, nmse_db)] in the given order.
    """
    results = []
    for diameter in diameters:
        region = geometric_region(task_id=1, center=center, diameter=diameter,
                                  cluster_count=cluster_count, los=los,
                                  cfg=array_cfg, sample_count=n_samples)
        truncated = np.empty((n_samples, array_cfg.n_tx, n_delay_bins),
                             dtype=np.complex64)
        for i, sample in enumerate(iter_dataset([region], array_cfg,
                                                train_cfg.seed)):
            truncated[i] = truncate(to_angle_delay(sample.matrix),
                                    n_delay_bins).astype(np.complex64)
        tr, va, te = make_split(n_samples, train_cfg.split, train_cfg.seed, 1)
        norm = fit_normalizer(truncated[tr])
        tensors, _ = split_normalize(truncated, norm)
        task = TaskData(tensors=tensors, task_id=1, train_idx=tr, val_idx=va,
                        test_idx=te)
        bundle = build_bundle("s2s", arch_spec, 1)
        train_s2s([task], bundle, train_cfg)
        nmse, _ = per_task_nmse(bundle, [task])
        results.append((diameter, nmse[1]))
    return results
