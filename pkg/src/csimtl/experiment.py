"""Experiment configuration, persistence, manifests, and pipelines.

Configs are INI-style text (key = value under sections).  Every command
writes a manifest recording its seed, the content hashes of its inputs and
outputs, and a hash link to its parent manifest, so any report can be traced
back to the generating config byte-for-byte.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
import math
import os
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import analytics, dataio
from .channel import (ArrayConfig, ChannelConfigError, SubregionConfig,
                      iter_dataset, validate_cell)
from .evaluation import (EvalReport, complexity_table, gate_accuracy,
                         nmse_gap, pca_embed, per_task_nmse, range_sweep,
                         write_embedding_csv)
from .models import ArchSpec, CRS, FAMILIES, parse_cr
from .nn import count_flops, count_params, load_network, save_network
from .preprocess import NormParams, fit_normalizer, split_normalize, to_angle_delay, truncate
from .training import (ModeBundle, MODES, TaskData, TrainConfig, build_bundle,
                       encode_tasks, make_split, make_task_data, train_gatenet,
                       train_m2m, train_s2m_joint, train_s2s)

MANIFEST_VERSION = 1


class ConfigError(ValueError):
    pass


class DataIntegrityError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    array: ArrayConfig
    regions: list[SubregionConfig]
    n_delay_bins: int
    arch: ArchSpec
    mode: str
    train: TrainConfig
    gate_max_epochs: int = 30
    gate_patience: int = 10
    sweep_max_epochs: int = 40
    sweep_patience: int = 10
    region_names: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"train.mode: unknown mode {self.mode!r}")
        if self.n_delay_bins <= 0 or self.n_delay_bins > self.array.n_subcarriers:
            raise ConfigError("preprocess.n_delay_bins must lie in "
                              "[1, array.n_subcarriers]")
        try:
            validate_cell(self.regions)
        except ChannelConfigError as e:
            raise ConfigError(f"regions: {e}") from e
        expected = (self.array.n_tx, self.n_delay_bins, 2)
        if tuple(self.arch.input_shape) != expected:
            raise ConfigError(f"arch.input_shape {self.arch.input_shape} must "
                              f"equal (n_tx, n_delay_bins, 2) = {expected}")

    @property
    def n_tasks(self) -> int:
        return len(self.regions)

    def gate_config(self) -> TrainConfig:
        return replace(self.train, max_epochs=self.gate_max_epochs,
                       patience=self.gate_patience)


def default_config(seed: int = 1) -> ExperimentConfig:
    """Desk-scale default: three contrasting subregions, minutes-scale runs.

    Delay ranges are disjoint across regions (distinct path-length profiles)
    while angle sectors partially overlap, so tasks differ strongly yet share
    structure.  128 tones keep the delay-bin resolution of the full 512-tone
    grid at a quarter of the synthesis cost.
    """
    array = ArrayConfig(n_subcarriers=128)
    spread = dict(cluster_angular_spread=math.radians(4.0),
                  cluster_delay_spread=70e-9, power_decay=math.inf)
    regions = [
        SubregionConfig(task_id=1, center=(55.0, -20.0), diameter=16.0,
                        cluster_count=16, los=False,
                        aod_range=(math.radians(-58.0), math.radians(-14.0)),
                        delay_range=(0.55e-6, 1.30e-6), sample_count=2000,
                        **spread),
        SubregionConfig(task_id=2, center=(45.0, 18.0), diameter=16.0,
                        cluster_count=5, los=True,
                        aod_range=(math.radians(4.0), math.radians(40.0)),
                        delay_range=(0.10e-6, 0.48e-6), sample_count=2000,
                        **spread),
        SubregionConfig(task_id=3, center=(80.0, 30.0), diameter=16.0,
                        cluster_count=9, los=False,
                        aod_range=(math.radians(-4.0), math.radians(30.0)),
                        delay_range=(1.42e-6, 2.20e-6), sample_count=2000,
                        **spread),
    ]
    arch = ArchSpec(family="SimpleCNN", cr=Fraction(1, 16),
                    input_shape=(32, 32, 2))
    return ExperimentConfig(
        array=array, regions=regions, n_delay_bins=32, arch=arch, mode="s2m",
        train=TrainConfig(seed=seed),
        region_names={1: "dense_nlos", 2: "sparse_los", 3: "medium_nlos"})


def paper_scale_config(seed: int = 1) -> ExperimentConfig:
    """Full-size configuration: five 50k-sample subregions on a 512-tone grid.

    Cell layout, cluster counts, and LOS flags follow the published
    multi-scenario setup (commercial/residential/park/parking-lot/warehouse);
    angle and delay ranges are chosen consistently with each center.  NLOS
    regions never evaluate their center's geometry, so centers behind the
    array broadside are valid.
    """
    array = ArrayConfig()
    mk = lambda task, center, clusters, los, aod, delay: SubregionConfig(
        task_id=task, center=center, diameter=20.0, cluster_count=clusters,
        los=los, aod_range=(math.radians(aod[0]), math.radians(aod[1])),
        delay_range=(delay[0] * 1e-6, delay[1] * 1e-6), sample_count=50000)
    regions = [
        mk(1, (50.0, 0.0), 40, False, (-30.0, 30.0), (0.15, 1.20)),
        mk(2, (-100.0, -50.0), 40, False, (-45.0, -5.0), (0.35, 1.60)),
        mk(3, (10.0, -70.0), 5, True, (-88.0, -64.0), (0.22, 0.80)),
        mk(4, (90.0, -160.0), 5, True, (-75.0, -45.0), (0.58, 1.30)),
        mk(5, (0.0, 170.0), 10, False, (55.0, 85.0), (0.55, 2.40)),
    ]
    arch = ArchSpec(family="CsiNet", cr=Fraction(1, 4), input_shape=(32, 32, 2))
    cfg = ExperimentConfig(
        array=array, regions=regions, n_delay_bins=32, arch=arch, mode="s2m",
        train=TrainConfig(seed=seed, max_epochs=1200, patience=20),
        gate_max_epochs=300, gate_patience=10,
        region_names={1: "commercial", 2: "residential", 3: "park",
                      4: "parking_lot", 5: "warehouse"})
    return cfg


# --------------------------------------------------------------------------
# INI serialization

def config_to_ini(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser()
    cp["array"] = {
        "n_tx": str(cfg.array.n_tx),
        "n_subcarriers": str(cfg.array.n_subcarriers),
        "center_freq": f"{cfg.array.center_freq:.9g}",
        "bandwidth": f"{cfg.array.bandwidth:.9g}",
    }
    if cfg.array.element_spacing is not None:
        cp["array"]["element_spacing"] = f"{cfg.array.element_spacing:.9g}"
    cp["preprocess"] = {"n_delay_bins": str(cfg.n_delay_bins)}
    cp["arch"] = {"family": cfg.arch.family, "cr": str(cfg.arch.cr),
                  "k_wide": str(cfg.arch.k_wide)}
    cp["train"] = {
        "mode": cfg.mode,
        "lr": f"{cfg.train.lr:.9g}",
        "max_epochs": str(cfg.train.max_epochs),
        "batch_size": str(cfg.train.batch_size),
        "patience": str(cfg.train.patience),
        "split": ",".join(f"{v:.9g}" for v in cfg.train.split),
        "seed": str(cfg.train.seed),
        "gate_max_epochs": str(cfg.gate_max_epochs),
        "gate_patience": str(cfg.gate_patience),
        "sweep_max_epochs": str(cfg.sweep_max_epochs),
        "sweep_patience": str(cfg.sweep_patience),
    }
    for r in sorted(cfg.regions, key=lambda r: r.task_id):
        section = f"region.{r.task_id}"
        cp[section] = {
            "name": cfg.region_names.get(r.task_id, f"task{r.task_id}"),
            "center": f"{r.center[0]:.9g},{r.center[1]:.9g}",
            "diameter": f"{r.diameter:.9g}",
            "clusters": str(r.cluster_count),
            "los": str(r.los).lower(),
            "aod_deg": f"{math.degrees(r.aod_range[0]):.9g},"
                       f"{math.degrees(r.aod_range[1]):.9g}",
            "delay_us": f"{r.delay_range[0] * 1e6:.9g},"
                        f"{r.delay_range[1] * 1e6:.9g}",
            "samples": str(r.sample_count),
            "angular_spread_deg": f"{math.degrees(r.cluster_angular_spread):.9g}",
            "delay_spread_ns": f"{r.cluster_delay_spread * 1e9:.9g}",
            "subpaths": str(r.subpath_count),
            "correlation_distance": f"{r.correlation_distance:.9g}",
            "power_decay_us": ("inf" if r.power_decay == math.inf else
                               "auto" if r.power_decay is None else
                               f"{r.power_decay * 1e6:.9g}"),
        }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _get(cp, section, key, cast, default=None):
    try:
        if default is not None and not cp.has_option(section, key):
            return default
        return cast(cp.get(section, key))
    except (configparser.Error, ValueError) as e:
        raise ConfigError(f"{section}.{key}: {e}") from e


def _pair(text: str) -> tuple[float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 2:
        raise ValueError("expected two comma-separated numbers")
    return (parts[0], parts[1])


def config_from_ini(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"config parse error: {e}") from e
    try:
        array = ArrayConfig(
            n_tx=_get(cp, "array", "n_tx", int, 32),
            n_subcarriers=_get(cp, "array", "n_subcarriers", int, 512),
            center_freq=_get(cp, "array", "center_freq", float, 2.655e9),
            bandwidth=_get(cp, "array", "bandwidth", float, 10e6),
            element_spacing=(float(cp.get("array", "element_spacing"))
                             if cp.has_option("array", "element_spacing") else None),
        )
    except ChannelConfigError as e:
        raise ConfigError(f"array: {e}") from e
    n_delay_bins = _get(cp, "preprocess", "n_delay_bins", int, 32)
    family = _get(cp, "arch", "family", str, "SimpleCNN")
    if family not in FAMILIES:
        raise ConfigError(f"arch.family: unknown family {family!r}; "
                          f"choose one of {FAMILIES}")
    try:
        arch = ArchSpec(family=family,
                        cr=_get(cp, "arch", "cr", parse_cr, Fraction(1, 16)),
                        input_shape=(array.n_tx, n_delay_bins, 2),
                        k_wide=_get(cp, "arch", "k_wide", int, 1))
    except ValueError as e:
        raise ConfigError(f"arch: {e}") from e
    split_text = _get(cp, "train", "split", str, "0.85,0.10,0.05")
    split = tuple(float(v) for v in split_text.split(","))
    if len(split) != 3:
        raise ConfigError("train.split: expected three fractions")
    try:
        train = TrainConfig(
            lr=_get(cp, "train", "lr", float, 1e-3),
            max_epochs=_get(cp, "train", "max_epochs", int, 100),
            batch_size=_get(cp, "train", "batch_size", int, 128),
            patience=_get(cp, "train", "patience", int, 20),
            seed=_get(cp, "train", "seed", int, 1),
            split=split,
        )
    except ValueError as e:
        raise ConfigError(f"train: {e}") from e
    mode = _get(cp, "train", "mode", str, "s2m")
    regions = []
    names = {}
    for section in cp.sections():
        if not section.startswith("region."):
            continue
        try:
            task_id = int(section.split(".", 1)[1])
            aod = _get(cp, section, "aod_deg", _pair)
            delay = _get(cp, section, "delay_us", _pair)
            decay_text = cp.get(section, "power_decay_us", fallback="auto")
            decay = (None if decay_text == "auto" else
                     math.inf if decay_text == "inf" else
                     float(decay_text) * 1e-6)
            region = SubregionConfig(
                task_id=task_id,
                center=_get(cp, section, "center", _pair),
                diameter=_get(cp, section, "diameter", float),
                cluster_count=_get(cp, section, "clusters", int),
                los=cp.getboolean(section, "los", fallback=False),
                aod_range=(math.radians(aod[0]), math.radians(aod[1])),
                delay_range=(delay[0] * 1e-6, delay[1] * 1e-6),
                sample_count=_get(cp, section, "samples", int),
                cluster_angular_spread=math.radians(
                    _get(cp, section, "angular_spread_deg", float, 2.0)),
                cluster_delay_spread=_get(cp, section, "delay_spread_ns",
                                          float, 40.0) * 1e-9,
                subpath_count=_get(cp, section, "subpaths", int, 20),
                correlation_distance=_get(cp, section, "correlation_distance",
                                          float, 20.0),
                power_decay=decay,
            )
        except (ChannelConfigError, ValueError) as e:
            raise ConfigError(f"{section}: {e}") from e
        regions.append(region)
        names[task_id] = cp.get(section, "name", fallback=f"task{task_id}")
    if not regions:
        raise ConfigError("no [region.N] sections found")
    try:
        return ExperimentConfig(
            array=array, regions=regions, n_delay_bins=n_delay_bins, arch=arch,
            mode=mode, train=train,
            gate_max_epochs=_get(cp, "train", "gate_max_epochs", int, 30),
            gate_patience=_get(cp, "train", "gate_patience", int, 10),
            sweep_max_epochs=_get(cp, "train", "sweep_max_epochs", int, 40),
            sweep_patience=_get(cp, "train", "sweep_patience", int, 10),
            region_names=names)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    cfg = config_from_ini(text)
    if seed_override is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=seed_override))
    return cfg


REFERENCE_HEADER = """\
; Reference configuration (generated; all values are the defaults).
;
; [array]        ULA + OFDM grid.  The array lies along the y axis with
;                broadside +x; users must sit in the x > 0 half plane.
; [preprocess]   n_delay_bins delay bins are kept after the unitary 2-D
;                angle-delay transform.
; [arch]         family in {SimpleCNN, CsiNet, CsiNet_encPlus, CsiNet_Kwide};
;                cr is the codeword-to-input ratio as a fraction, e.g. 1/16;
;                k_wide only applies to CsiNet_Kwide.
; [train]        mode in {s2s, m2m, s2m}; split fractions are
;                train,validation,test and must sum to 1; gate_* settings
;                drive the classifier stage of s2m; sweep_* the range sweep.
; [region.N]     one section per subregion, task ids contiguous from 1.
;                Angles in degrees, delays in microseconds, spreads per
;                cluster; 'los = true' adds a deterministic geometric path.
"""


def write_reference_config(path, seed: int = 1) -> None:
    Path(path).write_text(REFERENCE_HEADER + config_to_ini(default_config(seed)))


# --------------------------------------------------------------------------
# Manifests

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, sections: dict[str, dict[str, str]]) -> None:
    lines = [f"csimtl_manifest_version = {MANIFEST_VERSION}"]
    for section, entries in sections.items():
        lines.append(f"[{section}]")
        for key in sorted(entries):
            lines.append(f"{key} = {entries[key]}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict[str, dict[str, str]]:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise DataIntegrityError(f"missing manifest {path}: {e}") from e
    sections: dict[str, dict[str, str]] = {"": {}}
    current = ""
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections.setdefault(current, {})
        elif "=" in line:
            key, value = line.split("=", 1)
            sections[current][key.strip()] = value.strip()
    return sections


def _check_file(path, recorded_hash: str, what: str) -> None:
    if not Path(path).exists():
        raise DataIntegrityError(f"{what} {path} is missing")
    actual = sha256_file(path)
    if actual != recorded_hash:
        raise DataIntegrityError(
            f"{what} {path} hash {actual[:12]}... does not match the manifest "
            f"({recorded_hash[:12]}...); regenerate upstream outputs")


@contextmanager
def output_lock(out_dir: Path):
    """One writer per output directory."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise DataIntegrityError(
            f"output directory {out_dir} is locked by another command "
            f"(remove {lock} if that command crashed)") from None
    try:
        yield
    finally:
        os.close(fd)
        os.unlink(lock)


def _split_hashes(cfg: ExperimentConfig, counts: dict[int, int]) -> dict[str, str]:
    out = {}
    for task_id in sorted(counts):
        tr, va, te = make_split(counts[task_id], cfg.train.split,
                                cfg.train.seed, task_id)
        h = hashlib.sha256()
        for arr in (tr, va, te):
            h.update(np.ascontiguousarray(arr, dtype="<u4").tobytes())
        out[f"task_{task_id}"] = h.hexdigest()
    return out


# --------------------------------------------------------------------------
# Pipelines

SF_FILE = "spatial_frequency.csid"
AD_FILE = "angle_delay.csid"
GEN_MANIFEST = "generate.manifest"
TRAIN_MANIFEST = "train.manifest"
EVAL_MANIFEST = "eval.manifest"


def run_generate(cfg: ExperimentConfig, out_dir, deterministic: bool = False) -> Path:
    """Synthesize, transform, normalize, and persist the dataset."""
    out_dir = Path(out_dir)
    with output_lock(out_dir):
        config_text = config_to_ini(cfg)
        (out_dir / "config.ini").write_text(config_text)
        counts = {r.task_id: r.sample_count for r in cfg.regions}
        n_total = sum(counts.values())
        n_tx, n_c = cfg.array.n_tx, cfg.n_delay_bins

        sf_header = dataio.DatasetHeader(n_tx=n_tx, n_cols=cfg.array.n_subcarriers,
                                         task_counts=counts)
        truncated = np.empty((n_total, n_tx, n_c), dtype=np.complex64)
        labels = np.empty(n_total, dtype=np.uint16)
        seeds = np.empty(n_total, dtype=np.uint64)
        with dataio.DatasetWriter(out_dir / SF_FILE, sf_header) as writer:
            for i, sample in enumerate(iter_dataset(cfg.regions, cfg.array,
                                                    cfg.train.seed)):
                writer.write_complex(sample.matrix, sample.task_id, sample.seed)
                ad = truncate(to_angle_delay(sample.matrix), n_c)
                truncated[i] = ad.astype(np.complex64)
                labels[i] = sample.task_id
                seeds[i] = sample.seed

        # normalization statistics come from the training split only
        train_mask = np.zeros(n_total, dtype=bool)
        offsets = np.cumsum([0] + [counts[t] for t in sorted(counts)])
        for pos, task_id in enumerate(sorted(counts)):
            tr, _, _ = make_split(counts[task_id], cfg.train.split,
                                  cfg.train.seed, task_id)
            train_mask[offsets[pos] + tr] = True
        norm = fit_normalizer(truncated[train_mask],
                              fitted_on=f"seed={cfg.train.seed}")
        tensors, clipped = split_normalize(truncated, norm)

        ad_header = dataio.DatasetHeader(
            n_tx=n_tx, n_cols=n_c, task_counts=counts,
            flags=dataio.FLAG_ANGLE_DELAY_NORMALIZED)
        with dataio.DatasetWriter(out_dir / AD_FILE, ad_header) as writer:
            for i in range(n_total):
                writer.write_tensor(tensors[i], int(labels[i]), int(seeds[i]))

        sections = {
            "run": {
                "kind": "generate",
                "seed": str(cfg.train.seed),
                "deterministic": str(deterministic).lower(),
                "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
                "clipped_values": str(clipped),
                "n_samples": str(n_total),
            },
            "normalization": {
                "offset": f"{norm.offset:.17g}",
                "scale": f"{norm.scale:.17g}",
                "fitted_on": norm.fitted_on,
            },
            "splits": _split_hashes(cfg, counts),
            "files": {
                SF_FILE: sha256_file(out_dir / SF_FILE),
                AD_FILE: sha256_file(out_dir / AD_FILE),
            },
        }
        write_manifest(out_dir / GEN_MANIFEST, sections)
    return out_dir / GEN_MANIFEST


def load_norm_params(manifest: dict) -> NormParams:
    norm = manifest.get("normalization", {})
    return NormParams(offset=float(norm["offset"]), scale=float(norm["scale"]),
                      fitted_on=norm.get("fitted_on", ""))


def load_tasks(cfg: ExperimentConfig, data_dir) -> list[TaskData]:
    """Load the preprocessed dataset and rebuild per-task splits."""
    data_dir = Path(data_dir)
    manifest = read_manifest(data_dir / GEN_MANIFEST)
    _check_file(data_dir / AD_FILE, manifest["files"][AD_FILE], "dataset")
    header, tensors, labels, _seeds = dataio.read_dataset(data_dir / AD_FILE)
    if not header.normalized:
        raise DataIntegrityError("angle-delay dataset is not normalized")
    split_hashes = _split_hashes(cfg, header.task_counts)
    for key, value in manifest.get("splits", {}).items():
        if split_hashes.get(key) != value:
            raise DataIntegrityError(
                f"split {key} differs from the generate manifest; the config "
                "seed or split fractions changed since generation")
    tasks = []
    for task_id in sorted(header.task_counts):
        task_tensors = tensors[labels == task_id]
        tasks.append(make_task_data(task_tensors, task_id, cfg.train))
    return tasks


def _bundle_files(bundle: ModeBundle) -> dict[str, object]:
    files = {}
    if bundle.mode == "m2m":
        for j, (enc, dec) in enumerate(zip(bundle.encoders, bundle.decoders), 1):
            files[f"encoder_{j:03d}.csiw"] = enc
            files[f"decoder_{j:03d}.csiw"] = dec
    else:
        files["encoder.csiw"] = bundle.encoders[0]
        for j, dec in enumerate(bundle.decoders, 1):
            files[f"decoder_{j:03d}.csiw"] = dec
    if bundle.gatenet is not None:
        files["gatenet.csiw"] = bundle.gatenet
    return files


def _write_history_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for i, (tr, va) in enumerate(history):
            fh.write(f"{i},{tr:.9g},{va:.9g}\n")


def run_train(cfg: ExperimentConfig, data_dir, out_dir,
              deterministic: bool = False) -> ModeBundle:
    data_dir, out_dir = Path(data_dir), Path(out_dir)
    tasks = load_tasks(cfg, data_dir)
    if len(tasks) != cfg.n_tasks:
        raise DataIntegrityError("dataset task count does not match the config")
    with output_lock(out_dir):
        bundle = build_bundle(cfg.mode, cfg.arch, cfg.n_tasks)
        histories = {}
        if cfg.mode == "s2s":
            res = train_s2s(tasks, bundle, cfg.train)
            histories["losses.csv"] = res.history
        elif cfg.mode == "m2m":
            results = train_m2m(tasks, bundle, cfg.train)
            for task, res in zip(tasks, results):
                histories[f"losses_task{task.task_id}.csv"] = res.history
        else:
            res = train_s2m_joint(tasks, bundle, cfg.train)
            histories["losses.csv"] = res.history
            gate_res = train_gatenet(bundle, tasks, cfg.gate_config())
            histories["losses_gatenet.csv"] = gate_res.history

        meta = {"family": cfg.arch.family, "cr": str(cfg.arch.cr),
                "k_wide": str(cfg.arch.k_wide), "mode": cfg.mode,
                "n_tasks": str(cfg.n_tasks)}
        files = {}
        for fname, net in _bundle_files(bundle).items():
            save_network(out_dir / fname, net, meta)
            files[fname] = sha256_file(out_dir / fname)
        for fname, history in histories.items():
            _write_history_csv(out_dir / fname, history)
            files[fname] = sha256_file(out_dir / fname)

        config_text = config_to_ini(cfg)
        (out_dir / "config.ini").write_text(config_text)
        gen_manifest_path = data_dir / GEN_MANIFEST
        sections = {
            "run": {
                "kind": "train",
                "mode": cfg.mode,
                "seed": str(cfg.train.seed),
                "deterministic": str(deterministic).lower(),
                "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
            },
            "splits": _split_hashes(cfg, {t.task_id: t.n for t in tasks}),
            "parents": {
                os.path.relpath(gen_manifest_path, out_dir):
                    sha256_file(gen_manifest_path),
            },
            "inputs": {
                os.path.relpath(data_dir / AD_FILE, out_dir):
                    sha256_file(data_dir / AD_FILE),
            },
            "files": files,
        }
        write_manifest(out_dir / TRAIN_MANIFEST, sections)
    return bundle


def load_bundle(cfg: ExperimentConfig, weights_dir) -> ModeBundle:
    """Load trained weights, refusing specs that disagree with the config."""
    weights_dir = Path(weights_dir)
    manifest = read_manifest(weights_dir / TRAIN_MANIFEST)
    for fname, digest in manifest.get("files", {}).items():
        if fname.endswith(".csiw"):
            _check_file(weights_dir / fname, digest, "weights file")
    mode = manifest["run"]["mode"]
    if mode != cfg.mode:
        raise DataIntegrityError(f"weights were trained in mode {mode!r} but "
                                 f"the config requests {cfg.mode!r}")
    want_gate = mode == "s2m" and "gatenet.csiw" in manifest.get("files", {})
    bundle = build_bundle(mode, cfg.arch, cfg.n_tasks, with_gatenet=want_gate)
    for fname, net in _bundle_files(bundle).items():
        loaded, meta = load_network(weights_dir / fname)
        if (meta.get("family"), meta.get("cr"), meta.get("k_wide")) != \
                (cfg.arch.family, str(cfg.arch.cr), str(cfg.arch.k_wide)):
            raise DataIntegrityError(
                f"{fname}: architecture {meta.get('family')}/{meta.get('cr')}"
                f"/k{meta.get('k_wide')} disagrees with the config "
                f"{cfg.arch.family}/{cfg.arch.cr}/k{cfg.arch.k_wide}")
        if loaded.params.flat.size != net.params.flat.size:
            raise DataIntegrityError(f"{fname}: parameter count mismatch")
        net.params.load_values(loaded.params.flat)
        for (m, v), (ms, vs) in zip(net.bn_state, loaded.bn_state):
            m[:] = ms
            v[:] = vs
    return bundle


def _report_to_json(report: EvalReport) -> str:
    payload = {
        "mode": report.mode,
        "arch": report.arch,
        "cr": report.cr,
        "nmse_db": {str(k): report.nmse_db[k] for k in sorted(report.nmse_db)},
        "average_nmse_db": report.average_nmse_db,
        "oracle_nmse_db": {str(k): v for k, v in sorted(report.oracle_nmse_db.items())},
        "gate_accuracy_pct": {str(k): v for k, v in sorted(report.gate_accuracy.items())},
        "nmse_gap_db": {str(k): v for k, v in sorted(report.nmse_gap_db.items())},
        "excluded_samples": report.excluded_samples,
        "metadata": report.metadata,
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _report_to_text(report: EvalReport) -> str:
    lines = [f"mode={report.mode} arch={report.arch} cr={report.cr}"]
    tasks = sorted(report.nmse_db)
    header = f"{'task':>6s} {'nmse_db':>10s}"
    if report.gate_accuracy:
        header += f" {'oracle_db':>10s} {'gap_db':>9s} {'acc_pct':>8s}"
    lines.append(header)
    for t in tasks:
        row = f"{t:>6d} {report.nmse_db[t]:>10.3f}"
        if report.gate_accuracy:
            row += (f" {report.oracle_nmse_db[t]:>10.3f}"
                    f" {report.nmse_gap_db[t]:>9.4f}"
                    f" {report.gate_accuracy[t]:>8.3f}")
        lines.append(row)
    lines.append(f"average {report.average_nmse_db:.3f} dB")
    if "complexity" in report.metadata:
        lines.append("")
        lines.append(f"{'mode':>5s} {'arch':>14s} {'enc_mem':>10s} {'dec_mem':>10s} "
                     f"{'train_flops':>14s} {'test_flops':>12s}")
        for row in report.metadata["complexity"]:
            lines.append(f"{row['mode']:>5s} {row['arch']:>14s} "
                         f"{row['enc_memory']:>10d} {row['dec_memory']:>10d} "
                         f"{row['train_flops']:>14d} {row['test_flops']:>12d}")
    return "\n".join(lines) + "\n"


def run_eval(cfg: ExperimentConfig, data_dir, weights_dir, out_dir,
             oracle: bool = False, deterministic: bool = False,
             raw_domain: bool = False) -> EvalReport:
    data_dir, weights_dir, out_dir = map(Path, (data_dir, weights_dir, out_dir))
    tasks = load_tasks(cfg, data_dir)
    bundle = load_bundle(cfg, weights_dir)
    if bundle.mode == "s2m" and bundle.gatenet is None and not oracle:
        raise DataIntegrityError("s2m evaluation needs a trained gatenet; "
                                 "pass --oracle-labels to use true labels")
    norm = None
    if raw_domain:
        norm = load_norm_params(read_manifest(data_dir / GEN_MANIFEST))
    with output_lock(out_dir):
        report = EvalReport(mode=bundle.mode, arch=cfg.arch.label(),
                            cr=str(cfg.arch.cr))
        use_oracle = oracle or bundle.mode in ("m2m",)
        report.nmse_db, report.excluded_samples = per_task_nmse(
            bundle, tasks, oracle=use_oracle, norm_params=norm)
        if bundle.mode == "s2m" and bundle.gatenet is not None:
            report.oracle_nmse_db, _ = per_task_nmse(bundle, tasks,
                                                     oracle=True,
                                                     norm_params=norm)
            report.gate_accuracy = gate_accuracy(bundle, tasks)
            report.nmse_gap_db = {k: report.nmse_db[k] - report.oracle_nmse_db[k]
                                  for k in report.nmse_db}
        com = ArchSpec(family="CsiNet_Kwide", cr=cfg.arch.cr,
                       input_shape=cfg.arch.input_shape, k_wide=8)
        report.metadata = {
            "seed": cfg.train.seed,
            "oracle_labels": bool(use_oracle),
            "nmse_domain": "raw" if raw_domain else "normalized",
            "n_tasks": cfg.n_tasks,
            "complexity": complexity_table(cfg.arch, com, cfg.n_tasks,
                                           [t.n for t in tasks]),
        }
        (out_dir / "eval_report.json").write_text(_report_to_json(report))
        (out_dir / "eval_report.txt").write_text(_report_to_text(report))
        train_manifest_path = weights_dir / TRAIN_MANIFEST
        sections = {
            "run": {
                "kind": "eval",
                "seed": str(cfg.train.seed),
                "deterministic": str(deterministic).lower(),
                "oracle_labels": str(use_oracle).lower(),
                "nmse_domain": "raw" if raw_domain else "normalized",
            },
            "parents": {
                os.path.relpath(train_manifest_path, out_dir):
                    sha256_file(train_manifest_path),
                os.path.relpath(data_dir / GEN_MANIFEST, out_dir):
                    sha256_file(data_dir / GEN_MANIFEST),
            },
            "files": {
                "eval_report.json": sha256_file(out_dir / "eval_report.json"),
                "eval_report.txt": sha256_file(out_dir / "eval_report.txt"),
            },
        }
        write_manifest(out_dir / EVAL_MANIFEST, sections)
    return report


def run_analyze(cfg: ExperimentConfig, data_dir, out_dir,
                hist_bins: int = 60, corr_samples_per_task: int = 100) -> None:
    """Per-task feature statistics CSVs from the preprocessed dataset."""
    data_dir, out_dir = Path(data_dir), Path(out_dir)
    tasks = load_tasks(cfg, data_dir)
    with output_lock(out_dir):
        interval_rows = []
        corr_inputs = {"pas": [], "pdp": [], "csi": []}
        slices = {}
        pos = 0
        for task in tasks:
            tensors = task.tensors
            pas_vals = analytics.batch_pas(tensors)
            pdp_vals = analytics.batch_pdp(tensors)
            for kind, vals in (("pas", pas_vals), ("pdp", pdp_vals)):
                feats = [analytics.FeatureVector(kind=kind.upper(), values=v)
                         for v in vals]
                density, edges = analytics.histogram(feats, hist_bins)
                analytics.write_histogram_csv(
                    out_dir / f"hist_{kind}_task{task.task_id}.csv", density, edges)
                lo, hi = analytics.coverage_interval(feats, 0.95)
                interval_rows.append((task.task_id, kind.upper(), lo, hi))
            take = min(corr_samples_per_task, tensors.shape[0])
            corr_inputs["pas"].extend(pas_vals[:take])
            corr_inputs["pdp"].extend(pdp_vals[:take])
            corr_inputs["csi"].extend(tensors[:take])
            slices[task.task_id] = (pos, pos + take - 1)
            pos += take
        analytics.write_intervals_csv(out_dir / "intervals.csv", interval_rows)
        for kind, values in corr_inputs.items():
            corr = analytics.pearson_matrix(values, task_slices=slices)
            analytics.write_correlation_csv(out_dir / f"corr_{kind}.csv", corr)


def complexity_grid(families: list[tuple[str, int]], crs=CRS,
                    input_shape=(32, 32, 2)) -> list[dict]:
    """Params/FLOPs of every family at every compression ratio."""
    from .models import decoder_layers, encoder_layers
    rows = []
    for cr in crs:
        for family, k in families:
            spec = ArchSpec(family=family, cr=cr, input_shape=input_shape,
                            k_wide=k)
            enc, dec = encoder_layers(spec), decoder_layers(spec)
            rows.append({
                "cr": str(cr),
                "arch": spec.label(),
                "params": count_params(enc) + count_params(dec),
                "flops": (count_flops(enc, spec.input_shape)
                          + count_flops(dec, (spec.code_len,))),
            })
    return rows


def run_complexity(out_dir, families=None, input_shape=(32, 32, 2)) -> list[dict]:
    if families is None:
        families = [("SimpleCNN", 1), ("CsiNet", 1), ("CsiNet_encPlus", 1),
                    ("CsiNet_Kwide", 8), ("CsiNet_Kwide", 16)]
    rows = complexity_grid(families, input_shape=input_shape)
    out_dir = Path(out_dir)
    with output_lock(out_dir):
        with open(out_dir / "complexity.csv", "w", newline="") as fh:
            fh.write("cr,arch,params,flops\n")
            for row in rows:
                fh.write(f"{row['cr']},{row['arch']},{row['params']},"
                         f"{row['flops']}\n")
        arches = list(dict.fromkeys(r["arch"] for r in rows))
        lines = [f"{'CR':>6s}" + "".join(f" {a:>16s}" for a in arches)
                 + "   (params / flops)"]
        for cr in sorted({r["cr"] for r in rows}, key=lambda s: -Fraction(s)):
            cells = [r for r in rows if r["cr"] == cr]
            line = f"{cr:>6s}"
            for a in arches:
                cell = next(r for r in cells if r["arch"] == a)
                line += f" {cell['params'] / 1e6:6.2f}M/{cell['flops'] / 1e6:7.2f}M"
            lines.append(line)
        (out_dir / "complexity.txt").write_text("\n".join(lines) + "\n")
    return rows


def run_embed(cfg: ExperimentConfig, data_dir, weights_dir, out_dir) -> Path:
    """PCA projection of the encoder's test-split codes, one row per sample."""
    data_dir, out_dir = Path(data_dir), Path(out_dir)
    tasks = load_tasks(cfg, data_dir)
    bundle = load_bundle(cfg, weights_dir)
    with output_lock(out_dir):
        codes, labels = encode_tasks(bundle.encoders[0], tasks, "test")
        task_ids = np.array([tasks[j].task_id for j in labels])
        points, variance = pca_embed(codes, dims=2)
        path = out_dir / "embedding.csv"
        write_embedding_csv(path, points, task_ids)
        write_manifest(out_dir / "embed.manifest", {
            "run": {"kind": "embed",
                    "explained_variance": ",".join(f"{v:.9g}" for v in variance)},
            "files": {"embedding.csv": sha256_file(path)},
        })
    return path


def sweep_nmse(cfg: ExperimentConfig, diameters: list[float],
               n_samples: int = 1200) -> list[tuple[float, float]]:
    """Range sweep at the config's sweep budget (see evaluation.range_sweep)."""
    sweep_train = replace(cfg.train, max_epochs=cfg.sweep_max_epochs,
                          patience=cfg.sweep_patience)
    return range_sweep(diameters, cfg.arch, cfg.array, cfg.n_delay_bins,
                       sweep_train, n_samples=n_samples)


def run_sweep(cfg: ExperimentConfig, out_dir, diameters: list[float],
              n_samples: int = 1200) -> list[tuple[float, float]]:
    out_dir = Path(out_dir)
    results = sweep_nmse(cfg, diameters, n_samples)
    with output_lock(out_dir):
        path = out_dir / "sweep.csv"
        with open(path, "w", newline="") as fh:
            fh.write("diameter_m,nmse_db\n")
            for diameter, value in results:
                fh.write(f"{diameter:.9g},{value:.9g}\n")
        write_manifest(out_dir / "sweep.manifest", {
            "run": {"kind": "sweep", "seed": str(cfg.train.seed),
                    "n_samples": str(n_samples)},
            "files": {"sweep.csv": sha256_file(path)},
        })
    return results
