from pathlib import Path
import hashlib
import json
import logging

import numpy as np
import pandas as pd
import toml
from pydantic import ValidationError

from bff import __version__
from bff.models.acoustics import BModeImage, ImagingGrid, RFFrame, TransducerConfig
from bff.models.bubble import BubbleParams, BubbleTrace
from bff.models.evaluation import LocalizationTable
from bff.models.flow import FlowSolution
from bff.models.network import Edge, Node, VesselNetwork
from bff.models.tracks import EventTable
from bff.services.exceptions import InputError
from bff.services.flow_service import reynolds

logger = logging.getLogger(__name__)

RF_MAGIC = b"BFFRF\x00\x00\x00"
RF_VERSION = 1
RF_HEADER = np.dtype(
    [
        ("magic", "S8"),
        ("version", "<u4"),
        ("n_elements", "<u4"),
        ("n_samples", "<u4"),
        ("n_frames", "<u4"),
        ("n_angles", "<u4"),
        ("fs", "<f8"),
        ("f0", "<f8"),
        ("c", "<f8"),
    ]
)
FLOAT_FORMAT = "%.17g"


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_json(payload, path: Path) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ─── network ───

def write_network(net: VesselNetwork, path: Path, meta: dict | None = None) -> None:
    document = {
        "meta": {"version": __version__, "n_nodes": net.n_nodes, "n_edges": net.n_edges} | (meta or {}),
        "node": [{"id": n.id, "x": float(n.position[0]), "y": float(n.position[1]), "z": float(n.position[2])} for n in net.nodes],
        "edge": [{"id": e.id, "src": e.source, "dst": e.target, "radius": float(e.radius)} for e in net.edges],
    }
    path.write_text(toml.dumps(document))
    logger.info(f"Wrote network with {net.n_edges} edges to {path}")


def read_network(path: Path) -> VesselNetwork:
    try:
        document = toml.load(path)
        nodes = [Node(id=n["id"], position=(n["x"], n["y"], n["z"])) for n in document.get("node", [])]
        edges = [Edge(id=e["id"], source=e["src"], target=e["dst"], radius=e["radius"]) for e in document.get("edge", [])]
        return VesselNetwork(nodes=nodes, edges=edges)
    except FileNotFoundError:
        raise InputError(f"network file {path} does not exist")
    except (toml.TomlDecodeError, KeyError, TypeError, ValidationError) as e:
        raise InputError(f"malformed network file {path}: {e}")


def read_bubble_params(path: Path) -> BubbleParams:
    """Shell parameters from a TOML preset file"""
    try:
        return BubbleParams(**toml.load(path))
    except FileNotFoundError:
        raise InputError(f"bubble preset {path} does not exist")
    except (toml.TomlDecodeError, ValidationError) as e:
        raise InputError(f"malformed bubble preset {path}: {e}")


# ─── flow ───

def write_flow(flow: FlowSolution, directory: Path) -> None:
    edges = pd.DataFrame(
        {
            "edge_id": np.arange(flow.n_edges),
            "flow_m3s": flow.edge_flow,
            "dp_pa": flow.edge_pressure_drop,
            "umax_ms": flow.edge_max_velocity,
        }
    )
    nodes = pd.DataFrame({"node_id": np.arange(len(flow.node_pressure)), "pressure_pa": flow.node_pressure})
    edges.to_csv(directory / "flow_edges.csv", index=False, float_format=FLOAT_FORMAT)
    nodes.to_csv(directory / "flow_nodes.csv", index=False, float_format=FLOAT_FORMAT)


def read_flow(directory: Path, net: VesselNetwork, nu: float) -> FlowSolution:
    try:
        edges = pd.read_csv(directory / "flow_edges.csv")
        nodes = pd.read_csv(directory / "flow_nodes.csv")
    except FileNotFoundError as e:
        raise InputError(f"flow files missing: {e.filename}")
    if len(edges) != net.n_edges or len(nodes) != net.n_nodes:
        raise InputError("flow files do not match the network")
    u_max = edges["umax_ms"].to_numpy(dtype=float)
    return FlowSolution(
        node_pressure=nodes["pressure_pa"].to_numpy(dtype=float),
        edge_pressure_drop=edges["dp_pa"].to_numpy(dtype=float),
        edge_flow=edges["flow_m3s"].to_numpy(dtype=float),
        edge_max_velocity=u_max,
        edge_length=net.lengths,
        edge_radius=net.radii,
        reynolds=reynolds(u_max / 2.0, 2.0 * net.radii, nu),
        conservation_residual=0.0,
    )


# ─── tables ───

def write_events(events: EventTable, path: Path) -> None:
    events.data.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def read_events(path: Path) -> EventTable:
    try:
        return EventTable(data=pd.read_csv(path))
    except FileNotFoundError:
        raise InputError(f"ground-truth file {path} does not exist")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, ValidationError) as e:
        raise InputError(f"malformed ground-truth file {path}: {e}")


def write_localizations(table: LocalizationTable, path: Path) -> None:
    data = table.data
    if table.has_tracks:
        data = data.astype({"track_id": "int64"})
    data.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def read_localizations(path: Path) -> LocalizationTable:
    try:
        return LocalizationTable(data=pd.read_csv(path))
    except FileNotFoundError:
        raise InputError(f"prediction file {path} does not exist")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, ValidationError) as e:
        raise InputError(f"malformed prediction file {path}: {e}")


# ─── RF data ───

def rf_header(tx: TransducerConfig, n_frames: int, n_samples: int) -> np.ndarray:
    header = np.zeros(1, dtype=RF_HEADER)
    header[0] = (RF_MAGIC, RF_VERSION, tx.n_elements, n_samples, n_frames, len(tx.angles), tx.fs, tx.f0, tx.c)
    return header


def write_rf(path: Path, tx: TransducerConfig, frames) -> int:
    """Stream frames (each (angles, elements, samples)) after the header; returns the frame count"""
    frames = iter(frames)
    count = 0
    with open(path, "wb") as fh:
        header_at = fh.tell()
        fh.write(bytes(RF_HEADER.itemsize))
        n_samples = 0
        for frame in frames:
            data = frame.data if isinstance(frame, RFFrame) else np.asarray(frame)
            n_samples = data.shape[-1]
            fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
            count += 1
        fh.seek(header_at)
        fh.write(rf_header(tx, count, n_samples).tobytes())
    logger.info(f"Wrote {count} RF frames to {path}")
    return count


def read_rf(path: Path) -> tuple[dict, np.ndarray]:
    """Header fields and a read-only (frames, angles, elements, samples) view"""
    try:
        header = np.fromfile(path, dtype=RF_HEADER, count=1)
    except FileNotFoundError:
        raise InputError(f"RF file {path} does not exist")
    if len(header) != 1 or header[0]["magic"] != RF_MAGIC.rstrip(b"\x00"):
        raise InputError(f"{path} is not an RF file")
    fields = {name: header[0][name].item() for name in RF_HEADER.names if name != "magic"}
    if fields["version"] != RF_VERSION:
        raise InputError(f"unsupported RF version {fields['version']}")
    shape = (fields["n_frames"], fields["n_angles"], fields["n_elements"], fields["n_samples"])
    data = np.memmap(path, dtype="<f4", mode="r", offset=RF_HEADER.itemsize, shape=shape)
    return fields, data


# ─── images ───

def write_pgm(gray: np.ndarray, path: Path) -> None:
    gray = np.asarray(gray, dtype=np.uint8)
    height, width = gray.shape
    path.write_bytes(f"P5\n{width} {height}\n255\n".encode() + gray.tobytes())


def write_ppm(rgb: np.ndarray, path: Path) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    height, width, _ = rgb.shape
    path.write_bytes(f"P6\n{width} {height}\n255\n".encode() + rgb.tobytes())


def to_gray(image: np.ndarray, low: float, high: float) -> np.ndarray:
    if high <= low:
        return np.zeros(image.shape, dtype=np.uint8)
    return np.interp(image, [low, high], [0, 255]).astype(np.uint8)


def write_bmode(bmode: BModeImage, stem: Path) -> None:
    """8-bit dB-mapped PGM, raw float32 envelope and a JSON sidecar with the grid"""
    write_pgm(to_gray(bmode.db, -bmode.dynamic_range, 0.0), stem.with_suffix(".pgm"))
    bmode.envelope.astype("<f4").tofile(stem.with_suffix(".f32"))
    write_json(
        {
            "grid": bmode.grid.model_dump(),
            "shape": list(bmode.grid.shape),
            "dynamic_range": bmode.dynamic_range,
            "dtype": "<f4",
            "content": "envelope",
        },
        stem.with_suffix(".json"),
    )


def read_bmode(stem: Path) -> BModeImage:
    try:
        sidecar = json.loads(stem.with_suffix(".json").read_text())
        grid = ImagingGrid(**sidecar["grid"])
        envelope = np.fromfile(stem.with_suffix(".f32"), dtype="<f4").astype(float).reshape(grid.shape)
    except FileNotFoundError as e:
        raise InputError(f"B-mode file missing: {e.filename}")
    except (KeyError, ValueError, ValidationError) as e:
        raise InputError(f"malformed B-mode files {stem}: {e}")
    dynamic_range = sidecar["dynamic_range"]
    peak = envelope.max()
    if peak == 0:
        db = np.full(envelope.shape, -dynamic_range)
    else:
        with np.errstate(divide="ignore"):
            db = np.clip(20.0 * np.log10(envelope / peak), -dynamic_range, 0.0)
    return BModeImage(grid=grid, envelope=envelope, db=db, dynamic_range=dynamic_range)


def write_float_image(image: np.ndarray, stem: Path, grid: ImagingGrid, content: str) -> None:
    image.astype("<f4").tofile(stem.with_suffix(".f32"))
    write_pgm(to_gray(image, 0.0, float(image.max()) if image.size else 0.0), stem.with_suffix(".pgm"))
    write_json({"grid": grid.model_dump(), "shape": list(image.shape), "dtype": "<f4", "content": content}, stem.with_suffix(".json"))


def write_trace(trace: BubbleTrace, params: BubbleParams, stem: Path) -> None:
    """Columns t, R, Rdot, Rddot as float64 with the shell parameters alongside"""
    columns = np.column_stack([trace.time, trace.radius, trace.velocity, trace.acceleration])
    columns.astype("<f8").tofile(stem.with_suffix(".f64"))
    write_json(
        {"columns": ["t", "R", "Rdot", "Rddot"], "n_samples": len(columns), "fs": trace.fs, "params": params.model_dump()},
        stem.with_suffix(".json"),
    )
