"""Glue between the stages: training both from a survey and localizing a query."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .coarse import (RpClassifierModel, baseline_wifi_only, coarse_localize, coarse_model_from_record,
                     coarse_model_record, train_classifier)
from .config import ExperimentConfig, load_config, save_config
from .core import (AreaPartition, CandidateSelection, ImageFeatures, Location, ReferencePoint,
                   RssiObservation, make_grid_partition)
from .db import DbFormatError, HashMismatchError, ImageDb, WifiDb, read_envelope, write_envelope
from .fine import (RegressorModel, TrainingSample, fine_localize, fine_model_from_record,
                   fine_model_record, pool_features, train_fine)

COARSE_MODEL_FILE = "coarse_model.jsonl"
FINE_MODEL_FILE = "fine_model.jsonl"
CONFIG_FILE = "config.json"


def partition_for(cfg: ExperimentConfig) -> AreaPartition:
    return make_grid_partition(cfg.floor_lo, cfg.floor_hi, cfg.n_cells_x, cfg.n_cells_y,
                               cfg.reference_points())


def build_training_samples(images: ImageDb, coarse: RpClassifierModel, partition: AreaPartition,
                           j_star: int) -> list[TrainingSample]:
    """One sample per (entry, round); the selection comes from the RSSI recorded with that round."""
    out = []
    for e in images.entries:
        true_area = partition.area_of(e.location)
        for feats, rssi in zip(e.features, e.rssi):
            sel = coarse_localize(rssi, coarse, partition, j_star)
            out.append(TrainingSample(pool_features(feats), e.location, sel,
                                      true_area in sel.area_indices))
    return out


@dataclass(frozen=True)
class TrainedSystem:
    cfg: ExperimentConfig
    partition: AreaPartition
    rps: tuple[ReferencePoint, ...]
    coarse: RpClassifierModel
    fine: RegressorModel

    def localize(self, rssi: RssiObservation, img: ImageFeatures) -> tuple[CandidateSelection, Location]:
        sel = coarse_localize(rssi, self.coarse, self.partition, self.cfg.j_star)
        return sel, fine_localize(img, self.fine, sel, self.partition)

    def baseline(self, rssi: RssiObservation) -> Location:
        return baseline_wifi_only(rssi, self.coarse, list(self.rps))


def check_hash(expected: str, actual: str, what: str) -> None:
    if expected != actual:
        raise HashMismatchError(f"{what} was built for config {actual!r}, expected {expected!r}")


def train_system(cfg: ExperimentConfig, wifi: WifiDb, images: ImageDb, progress=None) -> TrainedSystem:
    h = cfg.config_hash()
    check_hash(h, wifi.config_hash, "WiFi database")
    check_hash(h, images.config_hash, "image database")
    partition = partition_for(cfg)
    coarse = train_classifier(wifi, cfg.coarse)
    samples = build_training_samples(images, coarse, partition, cfg.j_star)
    fine = train_fine(samples, cfg.fine, cfg.seed, h, progress)
    return TrainedSystem(cfg, partition, tuple(wifi.reference_points), coarse, fine)


def _write_curve(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def save_system(system: TrainedSystem, out_dir) -> list[Path]:
    """Write both models, their loss curves and the resolved config; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h, seed = system.cfg.config_hash(), system.cfg.seed
    paths = [out / CONFIG_FILE, out / COARSE_MODEL_FILE, out / FINE_MODEL_FILE,
             out / "coarse_loss.csv", out / "fine_loss.csv"]
    save_config(system.cfg, paths[0])
    write_envelope(paths[1], "coarse_model", [coarse_model_record(system.coarse)], h, seed)
    write_envelope(paths[2], "fine_model", [fine_model_record(system.fine)], h, seed)
    _write_curve(paths[3], ["iteration", "loss"], [list(r) for r in system.coarse.loss_history])
    _write_curve(paths[4], ["epoch", "mean_loss"],
                 [[k + 1, v] for k, v in enumerate(system.fine.loss_curve)])
    return paths


def load_system(model_dir) -> TrainedSystem:
    d = Path(model_dir)
    if not (d / CONFIG_FILE).is_file():
        # a missing model directory is an I/O problem, not a bad config
        raise FileNotFoundError(f"no {CONFIG_FILE} in model directory {d}")
    cfg = load_config(d / CONFIG_FILE)
    h = cfg.config_hash()
    models = {}
    for kind, name in (("coarse_model", COARSE_MODEL_FILE), ("fine_model", FINE_MODEL_FILE)):
        header, recs = read_envelope(d / name, kind)
        check_hash(h, header["config_hash"], name)
        if len(recs) != 1:
            raise DbFormatError(f"{name} must hold exactly one model record")
        models[kind] = recs[0]
    try:
        coarse = coarse_model_from_record(models["coarse_model"], h)
        fine = fine_model_from_record(models["fine_model"], h)
    except (KeyError, TypeError, ValueError) as e:
        raise DbFormatError(f"bad model record: {e}") from e
    return TrainedSystem(cfg, partition_for(cfg), tuple(cfg.reference_points()), coarse, fine)
