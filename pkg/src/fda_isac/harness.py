"""Scenario-driven Monte-Carlo experiments and table generators.

A scenario is a JSON document with four top-level keys:

``array``
    ArrayConfig fields; ``offsets`` as strings such as ``"3+17/100"``.
``ccie``
    ``n_coeff``, ``qam_order``, ``seed`` and optionally explicit ``coeffs``
    as ``[[re, im], ...]``.
``scene``
    ``targets`` (``range_m``, ``angle_deg``, ``velocity_mps``,
    ``reflection: [re, im]``), ``comm_channel_power``, ``comm_user``.
``experiment``
    ``kind``, ``snr_grid_db``, ``trials``, ``master_seed`` and kind-specific
    settings (see :class:`Experiment`).

Every trial draws from its own generator seeded with ``master_seed ^ trial``,
so results do not depend on execution order.
"""
from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import ccie, sensing, theory
from .array_model import ArrayConfig, ConfigError, format_offset, validate_fodc
from .scene import Scene, Target, check_scene, draw_channel, synth_cpi

KINDS = ("sense", "comm-ber", "crb", "complexity", "fodc-check", "rate")
ESTIMATORS = ("ssmte", "lcsse")
HIT_THRESHOLD = 0.2
FLOAT_FMT = ".12g"


# --- scenario ----------------------------------------------------------------------

@dataclass
class Experiment:
    kind: str
    snr_grid_db: list = field(default_factory=lambda: [5.0])
    trials: int = 200
    master_seed: int = 0
    s_r: int = 1000
    s_theta: int = 1000
    theta_min: float = -90.0
    theta_max: float = 90.0
    refine: bool = True
    estimators: list = field(default_factory=lambda: ["lcsse"])
    velocity_transpose: str = "plain"
    max_range_m: float | None = None
    n_rx_user: int = 2
    min_bits: int = 100_000
    target_errors: int = 200
    max_bits: int = 4_000_000
    batch_frames: int = 4096
    antenna_grid: list = field(default_factory=lambda: [4, 6, 8, 10])
    n_range_bins: int | None = None
    rate_n_grid: list = field(default_factory=lambda: list(range(2, 17)))

    def grid_spec(self) -> sensing.GridSpec:
        return sensing.GridSpec(self.s_theta, self.s_r, self.refine,
                                self.theta_min, self.theta_max)


@dataclass
class Scenario:
    array: ArrayConfig
    ccie: ccie.CcieConfig
    scene: Scene
    experiment: Experiment
    source: dict = field(default_factory=dict)
    name: str = "scenario"


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"missing '{key}' in {where}")
    return d[key]


def _complex(v, where: str) -> complex:
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(float(v[0]), float(v[1]))
    raise ConfigError(f"{where}: expected a number or [re, im] pair, got {v!r}")


_ARRAY_KEYS = {"n_tx", "n_rx", "carrier_hz", "delta_f_hz", "d1_m", "d2_m", "offsets",
               "pri_s", "pulses_per_cpi", "pulse_width_s"}
_GRID_KEYS = {"s_r", "s_theta", "theta_min", "theta_max", "refine"}


def _parse_array(d: dict) -> ArrayConfig:
    unknown = set(d) - _ARRAY_KEYS
    if unknown:
        raise ConfigError(f"unknown array keys: {sorted(unknown)}")
    kw = dict(d)
    if "offsets" in kw and kw["offsets"] is not None:
        kw["offsets"] = tuple(kw["offsets"])
        kw.setdefault("n_tx", len(kw["offsets"]))
    try:
        return ArrayConfig(**kw)
    except TypeError as exc:
        raise ConfigError(f"bad array section: {exc}") from exc


def _parse_ccie(d: dict) -> ccie.CcieConfig:
    order = int(d.get("qam_order", 4))
    seed = int(d.get("seed", 0))
    if "coeffs" in d:
        c = np.array([_complex(v, "ccie.coeffs") for v in d["coeffs"]])
        return ccie.CcieConfig(c, order, seed)
    return ccie.CcieConfig.generate(int(d.get("n_coeff", 4)), order, seed)


def _parse_scene(d: dict) -> Scene:
    targets = []
    for i, t in enumerate(d.get("targets", [])):
        where = f"scene.targets[{i}]"
        targets.append(Target(float(_require(t, "range_m", where)),
                              float(_require(t, "angle_deg", where)),
                              float(t.get("velocity_mps", 0.0)),
                              _complex(t.get("reflection", [1.0, 0.0]), where)))
    user = d.get("comm_user")
    return Scene(targets, comm_channel_power=float(d.get("comm_channel_power", 1.0)),
                 comm_user=tuple(user) if user is not None else None)


def _parse_experiment(d: dict) -> Experiment:
    kind = _require(d, "kind", "experiment")
    if kind not in KINDS:
        raise ConfigError(f"experiment.kind must be one of {KINDS}, got {kind!r}")
    kw = {k: v for k, v in d.items() if k != "grids"}
    grids = d.get("grids", {})
    if set(grids) - _GRID_KEYS:
        raise ConfigError(f"unknown grid keys: {sorted(set(grids) - _GRID_KEYS)}")
    kw.update(grids)
    names = set(Experiment.__dataclass_fields__)
    unknown = set(kw) - names
    if unknown:
        raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
    exp = Experiment(**kw)
    exp.snr_grid_db = [float(s) for s in exp.snr_grid_db]
    if not exp.snr_grid_db:
        raise ConfigError("snr_grid_db must not be empty")
    if exp.trials < 1:
        raise ConfigError("trials must be >= 1")
    bad = set(exp.estimators) - set(ESTIMATORS)
    if bad:
        raise ConfigError(f"unknown estimators {sorted(bad)}")
    if exp.velocity_transpose not in ("plain", "conjugate"):
        raise ConfigError("velocity_transpose must be 'plain' or 'conjugate'")
    exp.grid_spec()  # validates the grid
    return exp


def parse_scenario(doc: dict, name: str = "scenario") -> Scenario:
    if not isinstance(doc, dict):
        raise ConfigError("scenario must be a JSON object")
    try:
        array = _parse_array(doc.get("array", {}))
        scen = Scenario(array, _parse_ccie(doc.get("ccie", {})),
                        _parse_scene(doc.get("scene", {})),
                        _parse_experiment(_require(doc, "experiment", "scenario")),
                        doc, name)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    check_scene(scen.scene, scen.array)
    return scen


def load_scenario(path: str | os.PathLike) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {p}: {exc.strerror or exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    return parse_scenario(doc, p.stem)


def scenario_echo(scn: Scenario) -> dict:
    """Resolved configuration as plain JSON types."""
    a = scn.array
    return {
        "array": {"n_tx": a.n_tx, "n_rx": a.n_rx, "carrier_hz": a.carrier_hz,
                  "delta_f_hz": a.delta_f_hz, "d1_m": a.d1_m, "d2_m": a.d2_m,
                  "offsets": [format_offset(e) for e in a.offsets], "pri_s": a.pri_s,
                  "pulses_per_cpi": a.pulses_per_cpi, "pulse_width_s": a.pulse_width_s},
        "ccie": {"qam_order": scn.ccie.qam_order, "seed": scn.ccie.seed,
                 "coeffs": json.loads(ccie.coeffs_to_json(scn.ccie.coeffs))},
        "scene": {"targets": [{"range_m": t.range_m, "angle_deg": t.angle_deg,
                               "velocity_mps": t.velocity_mps,
                               "reflection": [t.reflection.real, t.reflection.imag]}
                              for t in scn.scene.targets],
                  "comm_channel_power": scn.scene.comm_channel_power},
        "experiment": asdict(scn.experiment),
    }


def trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(int(master_seed) ^ int(trial))


def snr_to_noise(snr_db: float) -> float:
    return 10.0 ** (-snr_db / 10.0)


# --- association ---------------------------------------------------------------------

def pair_cost(est: sensing.EstimatedTarget, truth: Target) -> float:
    return (abs(est.angle_deg - truth.angle_deg) + abs(est.range_m - truth.range_m)
            + abs(est.velocity_mps - truth.velocity_mps))


@dataclass
class Matching:
    pairs: list          # (estimate index, truth index)
    costs: list
    misses: int

    @property
    def total(self) -> float:
        return float(sum(self.costs))


def associate(estimates: Sequence[sensing.EstimatedTarget], truth: Sequence[Target]) -> Matching:
    """Minimum-total-cost one-to-one assignment; unmatched truths are misses."""
    n_e, n_t = len(estimates), len(truth)
    if n_e == 0 or n_t == 0:
        return Matching([], [], n_t)
    cost = np.array([[pair_cost(e, t) for t in truth] for e in estimates])
    cost = np.where(np.isfinite(cost), cost, 1e300)
    if max(n_e, n_t) <= 6:
        best, best_c = None, math.inf
        if n_e <= n_t:
            for perm in itertools.permutations(range(n_t), n_e):
                c = sum(cost[i, perm[i]] for i in range(n_e))
                if c < best_c:
                    best, best_c = [(i, perm[i]) for i in range(n_e)], c
        else:
            for perm in itertools.permutations(range(n_e), n_t):
                c = sum(cost[perm[j], j] for j in range(n_t))
                if c < best_c:
                    best, best_c = [(perm[j], j) for j in range(n_t)], c
        pairs = sorted(best, key=lambda p: p[1])
    else:
        rows, cols = linear_sum_assignment(cost)
        pairs = sorted(zip(rows.tolist(), cols.tolist()), key=lambda p: p[1])
    return Matching(pairs, [float(cost[i, j]) for i, j in pairs], n_t - len(pairs))


# --- sensing -------------------------------------------------------------------------

@dataclass
class MetricRow:
    snr_db: float
    estimator: str = ""
    rmse_angle_deg: float = math.nan
    rmse_range_m: float = math.nan
    rmse_vel_mps: float = math.nan
    hit_rate: float = math.nan
    crb_angle: float = math.nan
    crb_range: float = math.nan
    crb_vel: float = math.nan
    miss_rate: float = 0.0


SENSE_COLUMNS = ["snr_db", "estimator", "rmse_angle_deg", "rmse_range_m", "rmse_vel_mps",
                 "hit_rate", "crb_angle", "crb_range", "crb_vel", "miss_rate"]
TRIAL_COLUMNS = ["snr_db", "estimator", "trial", "target", "range_hat_m", "angle_hat_deg",
                 "vel_hat_mps", "err_range_m", "err_angle_deg", "err_vel_mps", "cost", "hit"]


def _rmse_over_targets(sq: np.ndarray) -> float:
    """(1/G) sum_g sqrt(mean over trials), ignoring missed entries."""
    per = [math.sqrt(np.nanmean(col)) if np.any(np.isfinite(col)) else math.nan for col in sq.T]
    return float(np.mean(per))


def root_crb_row(scene: Scene, cfg: ArrayConfig, noise_power: float) -> tuple[float, float, float]:
    """Root CRBs (deg, m, m/s) averaged over the targets."""
    if not scene.targets:
        return math.nan, math.nan, math.nan
    if noise_power == 0:
        return 0.0, 0.0, 0.0
    reps = [theory.crb(t, cfg, noise_power) for t in scene.targets]
    return (float(np.mean([math.sqrt(r.crb_angle_deg2) for r in reps])),
            float(np.mean([math.sqrt(r.crb_range_m2) for r in reps])),
            float(np.mean([math.sqrt(r.crb_velocity_mps2) for r in reps])))


def run_sensing_experiment(scn: Scenario, trial_log: list | None = None) -> list[MetricRow]:
    """RMSE and hit rate for each SNR and estimator; one CPI per trial shared by estimators."""
    exp = scn.experiment
    truth = scn.scene.targets
    if not truth:
        raise ConfigError("sensing experiment needs at least one target")
    cfg = scn.array
    bins = sensing.coarse_range_bins([t.range_m for t in truth], cfg)
    grid = exp.grid_spec()
    conj = exp.velocity_transpose == "conjugate"
    g = len(truth)
    rows = []
    for snr in exp.snr_grid_db:
        noise = snr_to_noise(snr)
        scene = scn.scene.with_noise(sensing=noise)
        acc = {m: dict(sq=np.full((exp.trials, g, 3), np.nan), hits=0, misses=0)
               for m in exp.estimators}
        for trial in range(exp.trials):
            cpi = synth_cpi(scene, cfg, scn.ccie, trial_rng(exp.master_seed, trial))
            for m in exp.estimators:
                try:
                    res = sensing.estimate_targets(cpi.data, bins, cfg, m, grid, conj)
                    est = res.targets
                except (np.linalg.LinAlgError, ValueError):
                    est = []
                match = associate(est, truth)
                a = acc[m]
                hit = match.misses == 0 and match.total < HIT_THRESHOLD
                a["hits"] += hit
                a["misses"] += match.misses
                for (ei, ti), c in zip(match.pairs, match.costs):
                    e = est[ei]
                    err = (e.angle_deg - truth[ti].angle_deg, e.range_m - truth[ti].range_m,
                           e.velocity_mps - truth[ti].velocity_mps)
                    a["sq"][trial, ti] = np.square(err)
                    if trial_log is not None:
                        trial_log.append([snr, m, trial, ti, e.range_m, e.angle_deg,
                                          e.velocity_mps, err[1], err[0], err[2], c, int(hit)])
                if trial_log is not None:
                    matched = {ti for _, ti in match.pairs}
                    for ti in range(g):
                        if ti not in matched:
                            trial_log.append([snr, m, trial, ti] + [math.nan] * 7 + [0])
        crb_a, crb_r, crb_v = root_crb_row(scene, cfg, noise)
        for m in exp.estimators:
            a = acc[m]
            rows.append(MetricRow(
                snr, m,
                rmse_angle_deg=_rmse_over_targets(a["sq"][:, :, 0]),
                rmse_range_m=_rmse_over_targets(a["sq"][:, :, 1]),
                rmse_vel_mps=_rmse_over_targets(a["sq"][:, :, 2]),
                hit_rate=a["hits"] / exp.trials,
                crb_angle=crb_a, crb_range=crb_r, crb_vel=crb_v,
                miss_rate=a["misses"] / (exp.trials * g)))
    return rows


# --- communication ------------------------------------------------------------------

BER_COLUMNS = ["snr_db", "ber_sim", "ber_bound", "p_im", "p_qam", "ber_bound_alt",
               "ber_index_sim", "ber_const_sim", "bits", "errors"]


@dataclass
class BerRow:
    snr_db: float
    ber_sim: float
    ber_bound: float
    p_im: float
    p_qam: float
    ber_bound_alt: float
    ber_index_sim: float
    ber_const_sim: float
    bits: int
    errors: int

    @property
    def sigma(self) -> float:
        """Binomial standard error of ``ber_sim``."""
        p = self.ber_sim
        return math.sqrt(max(p * (1.0 - p), 0.0) / self.bits) if self.bits else math.nan


def simulate_ber_batch(cfg: ccie.CcieConfig, n_tx: int, n_rx_user: int, channel_power: float,
                       noise_power: float, n_frames: int, rng: np.random.Generator):
    """Bit errors (index, constellation) and bit counts for ``n_frames`` random frames."""
    bits = rng.integers(0, 2, (n_frames, cfg.frame_bits(n_tx)), dtype=np.uint8)
    idx, lab, sym = ccie.encode_batch(bits, cfg)
    h = draw_channel(rng, n_frames * n_tx, n_rx_user, channel_power).reshape(
        n_frames, n_tx, n_rx_user)
    noise = math.sqrt(noise_power / 2.0) * (
        rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape))
    y = sym[..., None] * h + noise
    i_hat, l_hat = ccie.detect_batch(y, h, cfg)
    err = ccie.join_bits(i_hat, l_hat, cfg) != bits
    err = err.reshape(n_frames, n_tx, cfg.bits_per_antenna)
    bi = cfg.bits_index
    return (int(err[..., :bi].sum()), int(err[..., bi:].sum()),
            n_frames * n_tx * bi, n_frames * n_tx * cfg.bits_symbol)


def run_comm_ber(scn: Scenario) -> list[BerRow]:
    """Simulated BER and analytic bound per SNR.

    Each SNR point runs whole batches until at least ``min_bits`` bits and an
    expected ``target_errors`` errors (judged from the bound) are covered,
    capped at ``max_bits``. Batch ``t`` uses the generator ``master_seed ^ t``.
    """
    exp = scn.experiment
    cfg = scn.ccie
    n_tx = scn.array.n_tx
    u = exp.n_rx_user
    sc2 = scn.scene.comm_channel_power
    frame_bits = cfg.frame_bits(n_tx)
    rows = []
    for snr in exp.snr_grid_db:
        noise = snr_to_noise(snr)
        bound = theory.ccie_ber_bound(cfg, n_tx, u, sc2, noise)
        want = exp.min_bits
        if bound.p_total > 0:
            want = max(want, math.ceil(exp.target_errors / bound.p_total))
        want = min(want, max(exp.max_bits, exp.min_bits))
        n_batches = max(1, math.ceil(want / (exp.batch_frames * frame_bits)))
        ei = ec = bi = bc = 0
        for t in range(n_batches):
            e1, e2, b1, b2 = simulate_ber_batch(cfg, n_tx, u, sc2, noise, exp.batch_frames,
                                                trial_rng(exp.master_seed, t))
            ei, ec, bi, bc = ei + e1, ec + e2, bi + b1, bc + b2
        total = bi + bc
        rows.append(BerRow(snr, (ei + ec) / total, bound.p_total, bound.p_im, bound.p_qam,
                           bound.p_total_alt, ei / bi if bi else 0.0, ec / bc, total, ei + ec))
    return rows


# --- analytic tables ----------------------------------------------------------------

CRB_COLUMNS = ["snr_db", "target", "crb_range_m2", "crb_angle_deg2", "crb_doppler_hz2",
               "crb_velocity_mps2"]
COMPLEXITY_COLUMNS = ["n_tx", "n_rx", "pulses", "targets", "range_bins", "s_r", "s_theta",
                      "ssmte", "lcsse", "ratio"]
RATE_COLUMNS = ["n_tx", "n_coeff", "qam_order", "ccie_bits", "fopim_bits"]


def run_crb_table(scn: Scenario) -> list[list]:
    rows = []
    for snr in scn.experiment.snr_grid_db:
        noise = snr_to_noise(snr)
        for i, t in enumerate(scn.scene.targets):
            r = theory.crb(t, scn.array, noise)
            rows.append([snr, i, r.crb_range_m2, r.crb_angle_deg2, r.crb_doppler_hz2,
                         r.crb_velocity_mps2])
    return rows


def run_complexity_table(scn: Scenario) -> list[list]:
    exp = scn.experiment
    g = max(len(scn.scene.targets), 1)
    g_bins = exp.n_range_bins
    if g_bins is None:
        g_bins = len(sensing.coarse_range_bins([t.range_m for t in scn.scene.targets],
                                               scn.array)) or 1
    k = scn.array.pulses_per_cpi
    rows = []
    for n in exp.antenna_grid:
        n = int(n)
        a = sensing.complexity_count("ssmte", n, n, k, g, g_bins, exp.s_r, exp.s_theta)
        b = sensing.complexity_count("lcsse", n, n, k, g, g_bins, exp.s_r, exp.s_theta)
        rows.append([n, n, k, g, g_bins, exp.s_r, exp.s_theta, a, b, a / b])
    return rows


def run_rate_table(scn: Scenario) -> list[list]:
    order = scn.ccie.qam_order
    return [[n, n, order, theory.bits_per_pulse("ccie", n, n, order),
             theory.bits_per_pulse("fopim", n, qam_order=order)]
            for n in map(int, scn.experiment.rate_n_grid)]


def run_fodc_check(scn: Scenario):
    max_r = scn.experiment.max_range_m
    if max_r is None:
        targets = scn.scene.targets
        if not targets:
            raise ConfigError("fodc-check needs experiment.max_range_m or targets")
        max_r = max(t.range_m for t in targets)
    return validate_fodc(scn.array, max_r)


# --- output ------------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), FLOAT_FMT)
    return str(v)


def csv_text(columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def rows_as_lists(rows, columns) -> list[list]:
    return [[getattr(r, c) for c in columns] for r in rows]


def blob_hash(data: bytes) -> str:
    """Git blob object id of ``data``."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_outputs(out_dir: str | os.PathLike, files: dict[str, str], manifest: dict) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for name, text in sorted(files.items()):
        data = text.encode("utf-8")
        (out / name).write_bytes(data)
        hashes[name] = blob_hash(data)
    manifest = dict(manifest, outputs=hashes)
    body = json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n"
    (out / "run_manifest.json").write_text(body)
    return manifest


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")
