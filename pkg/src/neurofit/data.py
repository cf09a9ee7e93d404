"""Membrane-potential recordings: CSV ingestion, spike segmentation, fit inputs.

A recording CSV has a header naming at least ``t`` and ``v`` (case does not
matter) and optionally ``i``.  Other columns are kept as extra channels, which
lets simulated trajectories (``t,v,w`` or ``t,V,n,m,h``) round-trip.

Units can be declared in a sidecar ``<name>.json`` next to the CSV::

    {"units": {"t": "ms", "v": "mV", "i": "uA/cm2"}}

Time is converted to seconds and potential to mV on load.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import models
from .errors import DataFormatError
from .pinn import Observations

TIME_TO_SECONDS = {"s": 1.0, "ms": 1e-3, "us": 1e-6}
POTENTIAL_TO_MV = {"V": 1e3, "mV": 1.0, "uV": 1e-3}


@dataclass
class Recording:
    t: np.ndarray
    V: np.ndarray
    I: np.ndarray = None
    extra: dict = field(default_factory=dict)
    name: str = "recording"
    units: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.V = np.asarray(self.V, dtype=float)
        if self.V.shape != self.t.shape:
            raise ValueError("t and V must have the same length")
        if self.I is not None:
            self.I = np.asarray(self.I, dtype=float)
            if self.I.shape != self.t.shape:
                raise ValueError("I must match t in length")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("t must be strictly increasing")

    def __len__(self):
        return len(self.t)

    @property
    def current(self):
        return self.I if self.I is not None else np.zeros_like(self.t)


@dataclass
class SpikeSegment:
    recording: str
    start: int
    stop: int
    t: np.ndarray
    V: np.ndarray
    I: np.ndarray
    peak_time: float
    scaling: models.ScalingSpec
    extra: dict = field(default_factory=dict)

    @property
    def duration(self):
        return float(self.t[-1] - self.t[0])

    def to_recording(self):
        return Recording(self.t, self.V, self.I, dict(self.extra), f"{self.recording}[{self.start}:{self.stop}]")


def _read_units(path):
    sidecar = path.with_suffix(".json")
    if not sidecar.exists():
        return {}
    with open(sidecar) as fh:
        return json.load(fh).get("units", {})


def load_csv(path):
    """Read a recording; errors carry the 1-based data row and the file line."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError("empty file", line=1)
    header = [h.strip() for h in rows[0]]
    lower = [h.lower() for h in header]
    for required in ("t", "v"):
        if required not in lower:
            raise DataFormatError(f"header lacks a {required!r} column", line=1)
    data = []
    for row_no, row in enumerate(rows[1:], start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            err = DataFormatError(f"row {row_no} has {len(row)} fields, expected {len(header)}",
                                  line=row_no + 1)
            err.row = row_no
            raise err
        try:
            values = [float(c) for c in row]
        except ValueError:
            err = DataFormatError(f"row {row_no} is not numeric", line=row_no + 1)
            err.row = row_no
            raise err from None
        if not all(math.isfinite(x) for x in values):
            err = DataFormatError(f"row {row_no} holds a non-finite value", line=row_no + 1)
            err.row = row_no
            raise err
        if data and values[lower.index("t")] <= data[-1][lower.index("t")]:
            err = DataFormatError(f"t is not strictly increasing at row {row_no}", line=row_no + 1)
            err.row = row_no
            raise err
        data.append(values)
    if not data:
        raise DataFormatError("no data rows", line=2)
    arr = np.asarray(data, dtype=float)
    cols = {name: arr[:, k] for k, name in enumerate(header)}
    t = cols[header[lower.index("t")]]
    V = cols[header[lower.index("v")]]
    I = cols[header[lower.index("i")]] if "i" in lower else None
    extra = {name: cols[name] for name in header if name.lower() not in ("t", "v", "i")}

    units = _read_units(path)
    if "t" in units:
        t = t * TIME_TO_SECONDS[units["t"]]
    if "v" in units:
        V = V * POTENTIAL_TO_MV[units["v"]]
    rec = Recording(t, V, I, extra, path.stem, units)
    rec.columns = header
    return rec


def write_csv(path, t, V, I=None, extra=None, v_name="v"):
    cols, names = [t, V], ["t", v_name]
    if I is not None:
        cols.append(I)
        names.append("i")
    for name, values in (extra or {}).items():
        cols.append(values)
        names.append(name)
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=",".join(names),
               comments="", fmt="%.17g")


def default_threshold(V):
    V = np.asarray(V, dtype=float)
    return float(V.min() + 0.5 * (V.max() - V.min()))


def upward_crossings(V, threshold):
    V = np.asarray(V, dtype=float)
    return np.flatnonzero((V[:-1] < threshold) & (V[1:] >= threshold)) + 1


def segment_spikes(rec, threshold=None, pre_window=None, post_window=None, refractory=None):
    """Cut single-spike windows around upward threshold crossings.

    Crossings closer than ``refractory`` to the previous kept crossing are
    ignored.  Windows are clipped to the recording and dropped if the clipped
    window is shorter than half the requested one.
    """
    if pre_window is None or post_window is None:
        raise ValueError("pre_window and post_window are required")
    if pre_window <= 0 or post_window <= 0:
        raise ValueError("windows must be positive")
    if refractory is None:
        refractory = pre_window + post_window
    if threshold is None:
        threshold = default_threshold(rec.V)
    t, V = rec.t, rec.V
    kept = []
    for idx in upward_crossings(V, threshold):
        if kept and t[idx] - t[kept[-1]] < refractory:
            continue
        kept.append(idx)
    requested = pre_window + post_window
    segments = []
    for idx in kept:
        lo = int(np.searchsorted(t, t[idx] - pre_window, side="left"))
        hi = int(np.searchsorted(t, t[idx] + post_window, side="right"))
        if t[hi - 1] - t[lo] < 0.5 * requested or hi - lo < 3:
            continue
        sl = slice(lo, hi)
        seg_t = t[sl] - t[lo]
        seg_V = V[sl]
        if np.ptp(seg_V) == 0:
            continue
        peak = lo + int(np.argmax(seg_V))
        scaling = models.fit_scaling(seg_t, {"V": seg_V})
        segments.append(SpikeSegment(
            recording=rec.name, start=lo, stop=hi, t=seg_t, V=seg_V.copy(),
            I=rec.current[sl].copy(), peak_time=float(t[peak] - t[lo]), scaling=scaling,
            extra={k: v[sl].copy() for k, v in rec.extra.items()},
        ))
    return segments


def prepare_fit_input(seg):
    """Time and potential of ``seg`` mapped onto [-1, 1], plus the map used."""
    spec = models.fit_scaling(seg.t, {"V": seg.V})
    # clipping only removes roundoff: the window defines the map
    s = np.clip(spec.to_norm_time(seg.t), -1.0, 1.0)
    v = np.clip(spec.normalize("V", seg.V), -1.0, 1.0)
    return s, v, spec


def write_segments(segments, outdir, source=None, settings=None):
    """One CSV per segment plus ``index.json`` describing them."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, seg in enumerate(segments):
        fname = f"segment_{k:03d}.csv"
        write_csv(outdir / fname, seg.t, seg.V, seg.I, seg.extra)
        entries.append({"file": fname, "recording": seg.recording, "start": seg.start,
                        "stop": seg.stop, "peak_time": seg.peak_time,
                        "duration": seg.duration, "scaling": seg.scaling.to_dict()})
    index = {"source": source, "settings": settings or {}, "segments": entries}
    with open(outdir / "index.json", "w") as fh:
        json.dump(index, fh, indent=2)
    return index


def read_segment_index(directory):
    """Segment CSV paths listed in ``index.json``, or all ``*.csv`` files if absent."""
    directory = Path(directory)
    index = directory / "index.json"
    if index.exists():
        with open(index) as fh:
            return [directory / e["file"] for e in json.load(fh)["segments"]]
    return sorted(p for p in directory.glob("*.csv"))


def observations_for(rec, model, rescale_potential=False):
    """Map a recording onto the state channels of ``model``.

    The potential column becomes ``v`` (FitzHugh-Nagumo) or ``V``
    (Hodgkin-Huxley); extra columns named like state variables are kept as
    additional observed channels.  With ``rescale_potential`` the potential
    is first mapped onto [-1, 1].  FitzHugh-Nagumo treats the stimulus as
    the fitted parameter ``I``, so a recorded current is only passed on for
    Hodgkin-Huxley.
    """
    state = models.params_class(model).STATE
    potential = state[0]
    V = rec.V
    if rescale_potential:
        shift, scale = models.unit_affine(V)
        V = (V - shift) / scale
    values = {potential: V}
    for name, x in rec.extra.items():
        if name in state and name != potential:
            values[name] = x
    return Observations(rec.t, values, rec.I if model == "hh" else None)
