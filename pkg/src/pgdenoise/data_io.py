"""Noise injection, TEP track ingestion and filtering, synthetic surrogate tracks.

Track CSV schema (UTF-8, LF line endings, '.' decimal separator):

    # track_id: 2
    # power_W: 240
    # speed_mm_s: 1464
    # k: 0.207
    # rho_cp: 0.005054
    pos_mm,tep
    0,1372.25

Additional ``# key: value`` header lines (tep_scale, tep_offset, seed, ...)
are preserved but optional. ``k`` is in W/(mm K) and ``rho_cp`` in
J/(mm^3 K), the units the sensor platform reports; conversion helpers map
them to SI. An optional third ``ted`` column is parsed and retained but
unused. Sidecar ground-truth files use the same schema with value column
``temp``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, SchemaError
from .network import Mlp
from .problems import ProblemSpec, sobol_unit

log = logging.getLogger(__name__)

TEP_VALID_RANGE = (1000.0, 2500.0)

REQUIRED_TRACK_HEADERS = ("track_id", "power_W", "speed_mm_s", "k", "rho_cp")


# ---------------------------------------------------------------------------
# Noise injection and generic noisy datasets
# ---------------------------------------------------------------------------


def inject_noise(y_true: np.ndarray, p: float, seed: int) -> np.ndarray:
    """Add zero-mean Gaussian noise with sigma = p * max|y_true|.

    Deterministic given the seed; p = 0 returns the input unchanged.
    """
    y_true = np.asarray(y_true, dtype=np.float64)
    if p < 0:
        raise ConfigurationError("noise fraction must be >= 0")
    if p == 0:
        return y_true.copy()
    sigma = p * float(np.max(np.abs(y_true)))
    if sigma == 0.0:
        log.warning("all-zero targets: noise sigma is 0, returning identity")
        return y_true.copy()
    rng = np.random.default_rng(seed)
    return y_true + rng.normal(0.0, sigma, size=y_true.shape)


@dataclass
class NoisyDataset:
    """Observation rows: coordinates, per-row context, clean and noisy values."""

    coords: np.ndarray  # (n, d)
    context: np.ndarray  # (n, c)
    y_noisy: np.ndarray  # (n,)
    y_true: np.ndarray | None = None
    noise_fraction: float = 0.0
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coords = np.atleast_2d(np.asarray(self.coords, dtype=np.float64))
        self.context = np.asarray(self.context, dtype=np.float64)
        if self.context.ndim == 1:
            self.context = self.context.reshape(len(self.coords), -1)
        self.y_noisy = np.asarray(self.y_noisy, dtype=np.float64)
        if self.y_true is not None:
            self.y_true = np.asarray(self.y_true, dtype=np.float64)
        n = len(self.coords)
        if self.context.shape[0] != n or self.y_noisy.shape != (n,):
            raise ConfigurationError("dataset row counts disagree")
        if self.y_true is not None and self.y_true.shape != (n,):
            raise ConfigurationError("y_true length mismatch")

    def __len__(self):
        return len(self.coords)

    def subset(self, idx) -> "NoisyDataset":
        return NoisyDataset(
            coords=self.coords[idx],
            context=self.context[idx],
            y_noisy=self.y_noisy[idx],
            y_true=None if self.y_true is None else self.y_true[idx],
            noise_fraction=self.noise_fraction,
            seed=self.seed,
            meta=dict(self.meta),
        )


def make_dataset(
    problem: ProblemSpec, n: int, p: float, seed: int, region: np.ndarray | None = None
) -> NoisyDataset:
    """Sample coordinates over the problem's data region and add noise.

    Coordinates come from the (deterministic, seed-free) Sobol sequence so
    that different noise seeds share the same observation sites; the noise
    draw is governed by ``seed``.
    """
    if problem.reference is None:
        raise ConfigurationError(f"problem '{problem.name}' has no reference oracle")
    region = problem.data_region if region is None else region
    u = sobol_unit(problem.n_coords, n)
    coords = region[:, 0] + u * (region[:, 1] - region[:, 0])
    context = np.zeros((n, problem.n_context))
    y_true = problem.reference(coords, context)
    y_noisy = inject_noise(y_true, p, seed)
    return NoisyDataset(coords, context, y_noisy, y_true, p, seed)


def save_dataset(ds: NoisyDataset, problem: ProblemSpec, path) -> None:
    cols = list(problem.coord_names) + list(problem.context_names) + ["y_true", "y_noisy"]
    lines = [
        f"# problem: {problem.name}",
        f"# noise_fraction: {ds.noise_fraction!r}",
        f"# seed: {ds.seed}",
    ]
    for key, value in sorted(ds.meta.items()):
        lines.append(f"# {key}: {value}")
    lines.append(",".join(cols))
    blocks = [ds.coords, ds.context]
    blocks.append(ds.y_true.reshape(-1, 1) if ds.y_true is not None else np.full((len(ds), 1), np.nan))
    blocks.append(ds.y_noisy.reshape(-1, 1))
    table = np.hstack(blocks)
    for row in table:
        lines.append(",".join(format(v, ".17g") for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_dataset(path, problem: ProblemSpec) -> NoisyDataset:
    headers, colnames, table, _ = _read_csv_with_headers(path)
    expected = list(problem.coord_names) + list(problem.context_names) + ["y_true", "y_noisy"]
    if colnames != expected:
        raise SchemaError(f"dataset columns {colnames} != expected {expected}")
    d, c = problem.n_coords, problem.n_context
    y_true = table[:, d + c]
    return NoisyDataset(
        coords=table[:, :d],
        context=table[:, d : d + c],
        y_noisy=table[:, d + c + 1],
        y_true=None if np.all(np.isnan(y_true)) else y_true,
        noise_fraction=float(headers.get("noise_fraction", 0.0)),
        seed=int(headers.get("seed", 0)),
        meta={k: v for k, v in headers.items() if k not in ("problem", "noise_fraction", "seed")},
    )


# ---------------------------------------------------------------------------
# TEP tracks
# ---------------------------------------------------------------------------


@dataclass
class TepTrack:
    """One single-track melt-pool thermal-emission record."""

    track_id: int
    power_w: float
    speed_mm_s: float
    k: float  # W/(mm K), as reported by the platform
    rho_cp: float  # J/(mm^3 K)
    pos_mm: np.ndarray
    tep: np.ndarray
    ted: np.ndarray | None = None
    extras: dict = field(default_factory=dict)
    n_dropped: int = 0

    def __post_init__(self):
        self.pos_mm = np.asarray(self.pos_mm, dtype=np.float64)
        self.tep = np.asarray(self.tep, dtype=np.float64)
        if self.pos_mm.shape != self.tep.shape:
            raise ConfigurationError("pos/tep length mismatch")

    @property
    def k_si(self) -> float:
        """Conductivity in W/(m K)."""
        return self.k * 1e3

    @property
    def rho_cp_si(self) -> float:
        """Volumetric heat capacity in J/(m^3 K)."""
        return self.rho_cp * 1e9

    @property
    def speed_si(self) -> float:
        return self.speed_mm_s * 1e-3

    def __eq__(self, other):
        if not isinstance(other, TepTrack):
            return NotImplemented
        return (
            self.track_id == other.track_id
            and self.power_w == other.power_w
            and self.speed_mm_s == other.speed_mm_s
            and self.k == other.k
            and self.rho_cp == other.rho_cp
            and np.array_equal(self.pos_mm, other.pos_mm)
            and np.array_equal(self.tep, other.tep)
        )


def _read_csv_with_headers(path):
    """Parse '# key: value' headers, a column-name line, and float rows."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise SchemaError(f"cannot read {path}: {e}") from e
    headers = {}
    colnames = None
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if colnames is not None:
                raise SchemaError(f"{path}:{lineno}: header line after data begins")
            key, sep, value = line[1:].partition(":")
            if not sep:
                raise SchemaError(f"{path}:{lineno}: malformed header line")
            headers[key.strip()] = value.strip()
            continue
        if colnames is None:
            colnames = [c.strip() for c in line.split(",")]
            continue
        parts = line.split(",")
        if len(parts) != len(colnames):
            raise SchemaError(
                f"{path}:{lineno}: expected {len(colnames)} fields, got {len(parts)}"
            )
        try:
            rows.append([float(v) for v in parts])
        except ValueError as e:
            raise SchemaError(f"{path}:{lineno}: non-numeric value ({e})") from e
    if colnames is None:
        raise SchemaError(f"{path}: missing column header line")
    table = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(colnames))
    return headers, colnames, table, path


def _track_from_file(path, value_col: str, apply_range_filter: bool) -> TepTrack:
    headers, colnames, table, path = _read_csv_with_headers(path)
    missing = [h for h in REQUIRED_TRACK_HEADERS if h not in headers]
    if missing:
        raise SchemaError(f"{path}: missing required headers {missing}")
    if colnames[:2] != ["pos_mm", value_col]:
        raise SchemaError(
            f"{path}: expected columns pos_mm,{value_col}[,ted], got {colnames}"
        )
    pos = table[:, 0]
    val = table[:, 1]
    ted = table[:, 2] if len(colnames) > 2 and colnames[2] == "ted" else None
    n_dropped = 0
    if apply_range_filter:
        keep = (val >= TEP_VALID_RANGE[0]) & (val <= TEP_VALID_RANGE[1])
        n_dropped = int(np.sum(~keep))
        if n_dropped:
            log.info("%s: dropped %d rows outside TEP range", path.name, n_dropped)
        pos, val = pos[keep], val[keep]
        if ted is not None:
            ted = ted[keep]
    extras = {
        k: v for k, v in headers.items() if k not in REQUIRED_TRACK_HEADERS
    }
    try:
        return TepTrack(
            track_id=int(float(headers["track_id"])),
            power_w=float(headers["power_W"]),
            speed_mm_s=float(headers["speed_mm_s"]),
            k=float(headers["k"]),
            rho_cp=float(headers["rho_cp"]),
            pos_mm=pos,
            tep=val,
            ted=ted,
            extras=extras,
            n_dropped=n_dropped,
        )
    except ValueError as e:
        raise SchemaError(f"{path}: malformed header value ({e})") from e


def load_tracks(path) -> list[TepTrack]:
    """Load every track CSV under a directory (or a single file).

    TEP values outside [1000, 2500] are dropped; the count is recorded on
    each track. Sidecar ``*.truth.csv`` files are skipped.
    """
    path = Path(path)
    if path.is_dir():
        files = sorted(
            p for p in path.glob("track_*.csv") if not p.name.endswith(".truth.csv")
        )
        if not files:
            raise SchemaError(f"no track_*.csv files under {path}")
    else:
        files = [path]
    return [_track_from_file(f, "tep", apply_range_filter=True) for f in files]


def load_track_truth(path) -> TepTrack:
    """Load a sidecar ground-truth file (column 'temp', no range filtering)."""
    return _track_from_file(path, "temp", apply_range_filter=False)


def _write_track_file(track: TepTrack, path, value_col: str) -> None:
    lines = [
        f"# track_id: {track.track_id}",
        f"# power_W: {format(track.power_w, '.17g')}",
        f"# speed_mm_s: {format(track.speed_mm_s, '.17g')}",
        f"# k: {format(track.k, '.17g')}",
        f"# rho_cp: {format(track.rho_cp, '.17g')}",
    ]
    for key in sorted(track.extras):
        lines.append(f"# {key}: {track.extras[key]}")
    cols = f"pos_mm,{value_col}" + (",ted" if track.ted is not None else "")
    lines.append(cols)
    for i in range(len(track.pos_mm)):
        row = [format(track.pos_mm[i], ".17g"), format(track.tep[i], ".17g")]
        if track.ted is not None:
            row.append(format(track.ted[i], ".17g"))
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_tracks(tracks: list[TepTrack], out_dir, truths: list[TepTrack] | None = None) -> list[Path]:
    """Write track CSVs (and optional sidecar truths) under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, track in enumerate(tracks):
        p = out_dir / f"track_{track.track_id}.csv"
        _write_track_file(track, p, "tep")
        paths.append(p)
        if truths is not None:
            _write_track_file(truths[i], out_dir / f"track_{track.track_id}.truth.csv", "temp")
    return paths


# ---------------------------------------------------------------------------
# Synthetic surrogate tracks from a pretrained physics checkpoint
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrackSpec:
    """Process parameters for one synthetic track (platform units)."""

    track_id: int
    power_w: float
    speed_mm_s: float
    k: float = 0.208  # W/(mm K)
    rho_cp: float = 0.005084  # J/(mm^3 K)


DEFAULT_TRACK_SPECS = (
    TrackSpec(1, 240.0, 1464.0, 0.207, 0.005054),
    TrackSpec(2, 240.0, 1607.0, 0.208, 0.005074),
    TrackSpec(3, 360.0, 1464.0, 0.209, 0.005093),
    TrackSpec(4, 360.0, 1607.0, 0.208, 0.005113),
)


def track_coords(spec: TrackSpec, track_length_mm: float, n_points: int):
    """Melt-pool monitoring coordinates along the scan path.

    The reading at scan position s (mm) is taken at the instantaneous laser
    center: x = -s, y = 0, z = 0, t = s / v.
    """
    s_mm = np.linspace(0.0, track_length_mm, n_points)
    v_si = spec.speed_mm_s * 1e-3
    coords = np.column_stack(
        [-s_mm * 1e-3, np.zeros(n_points), np.zeros(n_points), s_mm * 1e-3 / v_si]
    )
    return s_mm, coords


def track_context(spec: TrackSpec, n: int, absorption: float) -> np.ndarray:
    return np.tile(
        [spec.power_w * absorption, spec.speed_mm_s * 1e-3, spec.k * 1e3, spec.rho_cp * 1e9],
        (n, 1),
    )


def synth_tracks(
    physics: Mlp,
    specs=DEFAULT_TRACK_SPECS,
    p: float = 0.25,
    seed: int = 0,
    n_points: int = 128,
    track_length_mm: float = 1.5,
    absorption: float = 0.4,
    tep_window: tuple[float, float] = (1100.0, 2400.0),
) -> tuple[list[TepTrack], list[TepTrack]]:
    """Generate surrogate TEP tracks by sampling the physics surrogate.

    The temperature profile along each scan is noised (sigma = p * max|T|
    per track), affinely mapped into the TEP sensor window, and clipped to
    the physically valid range. Returns (noisy tracks, clean sidecar truths);
    both carry the affine map in their headers.
    """
    profiles = []
    for spec in specs:
        s_mm, coords = track_coords(spec, track_length_mm, n_points)
        ctx = track_context(spec, n_points, absorption)
        profiles.append((spec, s_mm, physics.predict(np.hstack([coords, ctx]))))
    t_lo = min(float(t.min()) for _, _, t in profiles)
    t_hi = max(float(t.max()) for _, _, t in profiles)
    if t_hi <= t_lo:
        raise ConfigurationError("physics surrogate produced a flat profile")
    a = (tep_window[1] - tep_window[0]) / (t_hi - t_lo)
    b = tep_window[0] - a * t_lo
    lo, hi = TEP_VALID_RANGE
    tracks, truths = [], []
    for i, (spec, s_mm, t_profile) in enumerate(profiles):
        t_noisy = inject_noise(t_profile, p, seed + spec.track_id)
        tep_noisy = np.clip(a * t_noisy + b, lo, hi)
        tep_truth = np.clip(a * t_profile + b, lo, hi)
        n_clipped = int(np.sum((a * t_noisy + b < lo) | (a * t_noisy + b > hi)))
        if n_clipped:
            log.info("track %d: clipped %d values into TEP range", spec.track_id, n_clipped)
        extras = {
            "tep_scale": format(a, ".17g"),
            "tep_offset": format(b, ".17g"),
            "noise_fraction": format(p, ".17g"),
            "seed": str(seed),
            "absorption": format(absorption, ".17g"),
            "clipped": str(n_clipped),
        }
        common = dict(
            track_id=spec.track_id,
            power_w=spec.power_w,
            speed_mm_s=spec.speed_mm_s,
            k=spec.k,
            rho_cp=spec.rho_cp,
            pos_mm=s_mm,
        )
        tracks.append(TepTrack(tep=tep_noisy, extras=dict(extras), **common))
        truths.append(TepTrack(tep=tep_truth, extras=dict(extras), **common))
    return tracks, truths


def make_track_dataset(
    physics: Mlp,
    spec: TrackSpec,
    p: float,
    seed: int,
    n_points: int = 128,
    track_length_mm: float = 1.5,
    absorption: float = 0.4,
) -> NoisyDataset:
    """Noisy single-track temperature profile in physical units.

    Samples the physics surrogate along the scan path and injects Gaussian
    noise; used for the synthetic-noise denoising study where ground truth
    is the surrogate itself (no sensor-unit scaling or range clipping).
    """
    s_mm, coords = track_coords(spec, track_length_mm, n_points)
    ctx = track_context(spec, n_points, absorption)
    t_true = physics.predict(np.hstack([coords, ctx]))
    t_noisy = inject_noise(t_true, p, seed)
    return NoisyDataset(
        coords, ctx, t_noisy, t_true, p, seed, meta={"track_id": spec.track_id}
    )


def scale_physics_to_tep(physics: Mlp, a: float, b: float) -> Mlp:
    """Clone a physics network with the TEP affine map folded into its output."""
    return Mlp(
        layer_sizes=physics.layer_sizes,
        activations=physics.activations,
        dropout_rate=physics.dropout_rate,
        params=physics.params.copy(),
        input_shift=physics.input_shift.copy(),
        input_scale=physics.input_scale.copy(),
        output_shift=a * physics.output_shift + b,
        output_scale=a * physics.output_scale,
        meta=dict(physics.meta),
    )


def tracks_to_dataset(
    tracks: list[TepTrack],
    truths: list[TepTrack] | None = None,
    absorption: float = 0.4,
) -> NoisyDataset:
    """Assemble track rows into one dataset in PINN coordinates.

    Truth values are matched to the (possibly range-filtered) noisy rows by
    exact scan position.
    """
    coords_l, ctx_l, noisy_l, true_l = [], [], [], []
    for i, tr in enumerate(tracks):
        n = len(tr.pos_mm)
        s_mm = tr.pos_mm
        v_si = tr.speed_si
        coords = np.column_stack(
            [-s_mm * 1e-3, np.zeros(n), np.zeros(n), s_mm * 1e-3 / v_si]
        )
        ctx = np.tile([tr.power_w * absorption, v_si, tr.k_si, tr.rho_cp_si], (n, 1))
        coords_l.append(coords)
        ctx_l.append(ctx)
        noisy_l.append(tr.tep)
        if truths is not None:
            truth = truths[i]
            idx = {p: j for j, p in enumerate(truth.pos_mm)}
            try:
                sel = np.array([idx[p] for p in s_mm], dtype=int)
            except KeyError as e:
                raise SchemaError(f"truth file missing position {e} for track {tr.track_id}") from e
            true_l.append(truth.tep[sel])
    return NoisyDataset(
        coords=np.vstack(coords_l),
        context=np.vstack(ctx_l),
        y_noisy=np.concatenate(noisy_l),
        y_true=np.concatenate(true_l) if truths is not None else None,
        meta={"absorption": absorption},
    )
