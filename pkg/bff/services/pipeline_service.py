from functools import cached_property
from pathlib import Path
import logging
import os
import shutil
import time

import numpy as np
from jinja2 import Environment, FileSystemLoader, select_autoescape

from bff import __version__
from bff.config import Settings, get_settings
from bff.dependencies import derive_seed, get_executor, stage_rng
from bff.models.acoustics import ImagingGrid, RFFrame, TransducerConfig
from bff.models.bubble import BubbleParams
from bff.models.evaluation import Axes, EvalReport, LocalizationTable
from bff.models.flow import FlowSolution
from bff.models.network import VesselNetwork
from bff.models.pipeline import DatasetManifest, PipelineConfig
from bff.models.tracks import EventTable
from bff.services import io_service as io
from bff.services.acoustics_service import (
    beamform_das,
    calibrate_amplitude,
    envelope_log,
    simulate_frame,
    transmit_pressure_at,
)
from bff.services.bubble_service import integrate_radius, population_params, sonovue_preset
from bff.services.evaluation_service import evaluate, reference_localizer, reference_tracker
from bff.services.exceptions import InputError
from bff.services.flow_service import boundary_conditions, solve_flow
from bff.services.network_service import generate_network, merge_networks
from bff.services.render_service import render_overlay, render_sr_image, render_velocity_map, track_table
from bff.services.track_service import simulate_events

logger = logging.getLogger(__name__)

TEMPLATES = Path(__file__).resolve().parent.parent / "templates"
SR_FACTOR = 4

NETWORK_FILE = "network.toml"
GT_FILE = "ground_truth.csv"
RF_FILE = "rf.bin"
BMODE_DIR = "bmode"
TRACE_DIR = "traces"
PRED_FILE = "predictions.csv"
TRACKS_FILE = "tracks.csv"
REPORT_FILE = "report.json"
MANIFEST_FILE = "manifest.json"


def write_report(report: EvalReport, out: Path) -> None:
    """report.json plus a rendered report.html next to it"""
    io.write_json(report.model_dump(mode="json"), out / REPORT_FILE)
    env = Environment(loader=FileSystemLoader(TEMPLATES), autoescape=select_autoescape(["html"]))
    html = env.get_template("report.html").render(report=report, headline=report.headline())
    (out / "report.html").write_text(html)


def evaluate_files(gt_path: Path, pred_path: Path, radius: float, axes: Axes, out: Path) -> EvalReport:
    """Score a prediction CSV against a ground-truth CSV and write the reports"""
    report = evaluate(io.read_events(gt_path), io.read_localizations(pred_path), radius, axes)
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out)
    logger.info(f"Evaluation: {report.headline()}")
    return report


class DatasetPipeline:
    """Stage runner; every stage reads the files of the stages before it"""

    def __init__(self, config: PipelineConfig, out: Path, settings: Settings | None = None):
        self.config = config
        self.out = Path(out)
        self.settings = settings or get_settings()
        self.out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.out / name

    @cached_property
    def transducer(self) -> TransducerConfig:
        tx = self.config.transducer
        if tx.mi is None:
            return tx
        grid = self.config.grid
        return calibrate_amplitude(tx, tx.mi, (grid.z_min + grid.z_max) / 2)

    def _network(self) -> VesselNetwork:
        return io.read_network(self.path(NETWORK_FILE))

    def _flow(self, net: VesselNetwork) -> FlowSolution:
        return io.read_flow(self.out, net, self.config.fluid.nu)

    # ─── stages ───

    def generate(self) -> VesselNetwork:
        trees, generators = [], []
        for k, params in enumerate(self.config.generators):
            seeded = params.model_copy(update={"seed": derive_seed(self.config.seed, f"generate:{k}")})
            trees.append(generate_network(seeded, self.settings.max_edges))
            generators.append(seeded.model_dump(mode="json"))
        net = trees[0] if len(trees) == 1 else merge_networks(trees)
        meta = {"name": self.config.name, "seed": self.config.seed, "trees": len(trees), "generator": generators}
        io.write_network(net, self.path(NETWORK_FILE), meta=meta)
        return net

    def flow(self) -> FlowSolution:
        net = self._network()
        bc = boundary_conditions(net, self.config.boundary, stage_rng(self.config.seed, "flow"))
        solution = solve_flow(net, bc, self.config.fluid)
        io.write_flow(solution, self.out)
        return solution

    def seed(self) -> EventTable:
        net = self._network()
        b = self.config.bubbles
        events = simulate_events(
            net,
            self._flow(net),
            b.count,
            b.frame_rate,
            b.n_frames,
            derive_seed(self.config.seed, "seed"),
            b.radial_law,
        )
        io.write_events(events, self.path(GT_FILE))
        return events

    def _shells(self, events: EventTable) -> dict[int, BubbleParams]:
        b = self.config.bubbles
        base = sonovue_preset()
        if b.preset == "custom":
            base = b.params if b.params is not None else io.read_bubble_params(b.params_file)
        ids = [int(i) for i in np.unique(events.data["bubble_id"])]
        shells = population_params(base, ids, derive_seed(self.config.seed, "bubbles"), b.r0_range, b.buckle_ratio)
        return dict(zip(ids, shells))

    def _write_traces(self, events: EventTable, shells: dict[int, BubbleParams]) -> list[Path]:
        """Radius traces of the first bubbles at their entry position, first transmit angle"""
        b = self.config.bubbles
        if b.trace_bubbles == 0:
            return []
        tx = self.transducer
        directory = self.path(TRACE_DIR)
        directory.mkdir(exist_ok=True)
        entries = events.data.drop_duplicates("bubble_id").sort_values("bubble_id").head(b.trace_bubbles)
        stems = []
        for row in entries.itertuples(index=False):
            bubble_id = int(row.bubble_id)
            drive = transmit_pressure_at((row.x, row.y, row.z), tx, tx.angles[0])
            trace = integrate_radius(drive, shells[bubble_id], oversample=b.oversample)
            stem = directory / f"bubble_{bubble_id:05d}"
            io.write_trace(trace, shells[bubble_id], stem)
            stems.append(stem)
        logger.info(f"Wrote {len(stems)} radius traces to {directory}")
        return stems

    def simulate(self) -> Path:
        events = io.read_events(self.path(GT_FILE))
        tx = self.transducer
        b = self.config.bubbles
        shells = self._shells(events)
        noise_seed = derive_seed(self.config.seed, "noise")
        n_samples = tx.n_samples
        expected = (len(tx.angles), tx.n_elements, n_samples)
        checkpoints = self.path("checkpoint") / self.config.config_hash()[:12]
        if self.settings.checkpoint:
            checkpoints.mkdir(parents=True, exist_ok=True)

        def one(frame: int) -> np.ndarray:
            target = checkpoints / f"frame_{frame:05d}.npy"
            if self.settings.checkpoint and target.exists():
                data = np.load(target)
                if data.shape == expected:
                    logger.debug(f"Frame {frame} restored from checkpoint")
                    return data
            rf = simulate_frame(
                events.at_frame(frame), shells, tx, self.config.noise,
                seed=noise_seed, frame=frame, oversample=b.oversample, ring_down=b.ring_down, n_samples=n_samples,
            )
            data = rf.data.astype(np.float32)
            if self.settings.checkpoint:
                partial = target.with_suffix(".part.npy")
                np.save(partial, data)
                os.replace(partial, target)
            return data

        started = time.perf_counter()
        with get_executor(self.settings.threads) as pool:
            io.write_rf(self.path(RF_FILE), tx, pool.map(one, range(b.n_frames)))
        if self.settings.checkpoint:
            shutil.rmtree(self.path("checkpoint"), ignore_errors=True)
        logger.info(f"Simulated {b.n_frames} frames in {time.perf_counter() - started:.1f} s")
        self._write_traces(events, shells)
        return self.path(RF_FILE)

    def beamform(self) -> list[Path]:
        fields, data = io.read_rf(self.path(RF_FILE))
        tx = self.transducer
        if fields["n_elements"] != tx.n_elements or fields["n_angles"] != len(tx.angles):
            raise InputError("RF file does not match the configured transducer")
        grid = self.config.grid
        directory = self.path(BMODE_DIR)
        directory.mkdir(exist_ok=True)

        def one(frame: int) -> Path:
            rf = RFFrame(data=np.asarray(data[frame], dtype=float), fs=fields["fs"])
            bmode = envelope_log(beamform_das(rf, tx, grid), grid, self.config.evaluation.dynamic_range)
            stem = directory / f"frame_{frame:05d}"
            io.write_bmode(bmode, stem)
            return stem

        with get_executor(self.settings.threads) as pool:
            stems = list(pool.map(one, range(fields["n_frames"])))
        logger.info(f"Beamformed {len(stems)} frames into {directory}")
        return stems

    def _bmode_stems(self) -> list[Path]:
        stems = sorted(p.with_suffix("") for p in self.path(BMODE_DIR).glob("frame_*.json"))
        if not stems:
            raise InputError(f"no B-mode frames under {self.path(BMODE_DIR)}")
        return stems

    def localize(self) -> LocalizationTable:
        ev = self.config.evaluation
        min_sep = ev.min_sep if ev.min_sep is not None else self.transducer.wavelength
        locs = []
        for stem in self._bmode_stems():
            frame = int(stem.name.split("_")[1])
            locs.extend(reference_localizer(io.read_bmode(stem), ev.threshold_db, min_sep, frame))
        table = LocalizationTable.from_records(locs)
        io.write_localizations(table, self.path(PRED_FILE))
        logger.info(f"Localised {len(table)} bubbles in {len(self._bmode_stems())} frames")
        return table

    def _max_link(self) -> float:
        if self.config.evaluation.max_link is not None:
            return self.config.evaluation.max_link
        net = self._network()
        fastest = float(np.max(np.abs(self._flow(net).edge_max_velocity)))
        return 1.5 * fastest / self.config.bubbles.frame_rate + self.config.search_radius

    def track(self) -> LocalizationTable:
        preds = io.read_localizations(self.path(PRED_FILE))
        assign = reference_tracker(preds, self._max_link())
        data = preds.data.drop(columns="track_id", errors="ignore").merge(assign.to_frame(), on=["frame", "loc_id"])
        table = LocalizationTable(data=data)
        io.write_localizations(table, self.path(TRACKS_FILE))
        return table

    def evaluate(self, pred_name: str = TRACKS_FILE) -> EvalReport:
        return evaluate_files(
            self.path(GT_FILE), self.path(pred_name), self.config.search_radius, self.config.evaluation.axes, self.out
        )

    def render(self, source: str = "tracks") -> dict[str, Path]:
        if source == "gt":
            table = track_table(io.read_events(self.path(GT_FILE)).data, "bubble_id")
        elif source == "tracks":
            table = track_table(io.read_localizations(self.path(TRACKS_FILE)).data, "track_id")
        else:
            raise InputError(f"unknown render source {source!r}")
        grid = self.config.grid
        fine = ImagingGrid(**(grid.model_dump() | {"dx": grid.dx / SR_FACTOR, "dz": grid.dz / SR_FACTOR}))
        frame_rate = self.config.bubbles.frame_rate

        outputs = {"sr_image": self.path("sr_image"), "velocity_map": self.path("velocity_map")}
        io.write_float_image(render_sr_image(table, fine, frame_rate), outputs["sr_image"], fine, "track density")
        io.write_float_image(render_velocity_map(table, fine, frame_rate), outputs["velocity_map"], fine, "speed m/s")

        stems = sorted(self.path(BMODE_DIR).glob("frame_*.json"))
        if stems and self.path(PRED_FILE).exists():
            stem = stems[0].with_suffix("")
            frame = int(stem.name.split("_")[1])
            gt = io.read_events(self.path(GT_FILE)).at_frame(frame)
            preds = io.read_localizations(self.path(PRED_FILE)).data
            overlay = render_overlay(io.read_bmode(stem), gt, preds[preds["frame"] == frame])
            outputs["overlay"] = self.path(f"overlay_{frame:05d}.ppm")
            io.write_ppm(overlay, outputs["overlay"])
        logger.info(f"Rendered {source} images: {sorted(outputs)}")
        return outputs

    def write_manifest(self) -> DatasetManifest:
        io.write_json(self.config.model_dump(mode="json"), self.path("config.json"))
        files = {}
        for path in sorted(self.out.rglob("*")):
            relative = path.relative_to(self.out)
            if not path.is_file() or path.name == MANIFEST_FILE or path.suffix == ".log" or "checkpoint" in relative.parts:
                continue
            files[relative.as_posix()] = io.sha256_file(path)
        manifest = DatasetManifest(
            name=self.config.name,
            version=__version__,
            seed=self.config.seed,
            config_hash=self.config.config_hash(),
            files=files,
        )
        io.write_json(manifest.model_dump(), self.path(MANIFEST_FILE))
        return manifest

    def simulate_dataset(self) -> DatasetManifest:
        """Upstream stages when their files are missing, then RF, B-mode frames and the manifest"""
        if not self.path(NETWORK_FILE).exists():
            self.generate()
        if not self.path("flow_edges.csv").exists():
            self.flow()
        if not self.path(GT_FILE).exists():
            self.seed()
        self.simulate()
        self.beamform()
        return self.write_manifest()

    def run(self) -> DatasetManifest:
        """Every stage in order, then the manifest"""
        for stage in (self.generate, self.flow, self.seed, self.simulate, self.beamform, self.localize, self.track):
            logger.info(f"Stage {stage.__name__} starting")
            stage()
        self.evaluate()
        self.render("tracks")
        return self.write_manifest()
