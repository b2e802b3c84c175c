"""Command-line front-end for reproducible design/evaluation runs.

Config files are JSON with units baked into the key names (mm, khz) so a
unit mistake is visible at the call site; positions convert to meters on
load. Identical config + seed produces byte-identical output files; wall
clock and host details live only in the separate provenance file.

Exit codes: 0 optimal, 2 infeasible, 3 unbounded, 4 numerical failure,
64 usage/config error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .design import (
    CovarianceDesign,
    design_nominal_eq5,
    design_nominal_generalized,
    design_robust,
    design_sum_energy_robust,
    design_weighted_robust,
)
from .evaluate import (
    DB_CONVENTIONS,
    nominal_power_map,
    perturbed_power_map,
    region_report,
    synthesize_waveforms,
)
from .geometry import ConfigurationError, build_curvilinear_array, build_region_grids
from .solver import SolverOptions
from .steering import UncertaintyModel, build_steering_field
from .worstcase import worst_case_power_map

EXIT_OPTIMAL = 0
EXIT_INFEASIBLE = 2
EXIT_UNBOUNDED = 3
EXIT_NUMERICAL = 4
EXIT_USAGE = 64

STATUS_EXIT = {
    "optimal": EXIT_OPTIMAL,
    "infeasible": EXIT_INFEASIBLE,
    "unbounded": EXIT_UNBOUNDED,
    "numerical_failure": EXIT_NUMERICAL,
}

VARIANTS = (
    "nominal_eq5",
    "nominal_generalized",
    "robust",
    "weighted_robust",
    "sum_energy_robust",
)

PRESET_DIR = Path(__file__).parent / "presets"


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Fully resolved run parameters (internal units: meters, Hz)."""

    arc_radius: float
    element_count: int
    spacing: float
    carrier_frequency: float
    sound_speed: float
    center_angle: float
    amplitude_reference: float
    tumor_center: tuple
    tumor_radius: float
    box_width: float
    box_height: float
    grid_spacing: float
    gamma: float = 1.0
    delta: float = 0.7
    epsilon: float = 0.0
    weight: str = "identity"
    variant: str = "robust"
    power_level: Optional[float] = None
    seed: int = 0
    raw: dict = dc_field(default_factory=dict)

    @classmethod
    def from_document(cls, doc: dict) -> "RunConfig":
        try:
            arr = doc["array"]
            reg = doc["regions"]
            des = doc.get("design", {})
            cfg = cls(
                arc_radius=float(arr["arc_radius_mm"]) * 1e-3,
                element_count=int(arr["element_count"]),
                spacing=float(arr["spacing_mm"]) * 1e-3,
                carrier_frequency=float(arr["carrier_frequency_khz"]) * 1e3,
                sound_speed=float(arr["sound_speed_m_per_s"]),
                center_angle=float(arr.get("center_angle_rad", -np.pi / 2)),
                amplitude_reference=float(
                    arr.get("amplitude_reference_mm", 1000.0)) * 1e-3,
                tumor_center=tuple(
                    float(v) * 1e-3 for v in reg["tumor_center_mm"]),
                tumor_radius=float(reg["tumor_radius_mm"]) * 1e-3,
                box_width=float(reg["box_width_mm"]) * 1e-3,
                box_height=float(reg["box_height_mm"]) * 1e-3,
                grid_spacing=float(reg["grid_spacing_mm"]) * 1e-3,
                gamma=float(des.get("gamma", 1.0)),
                delta=float(des.get("delta", 0.7)),
                epsilon=float(des.get("epsilon", 0.0)),
                weight=des.get("weight", "identity"),
                variant=des.get("variant", "robust"),
                power_level=des.get("power_level"),
                seed=int(doc.get("seed", 0)),
                raw=doc,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"malformed config: {exc}") from exc
        for name in ("arc_radius", "spacing", "carrier_frequency",
                     "sound_speed", "tumor_radius", "box_width",
                     "box_height", "grid_spacing", "gamma",
                     "amplitude_reference"):
            if getattr(cfg, name) <= 0:
                raise UsageError(f"config field {name} must be positive")
        if cfg.variant not in VARIANTS:
            raise UsageError(f"unknown variant {cfg.variant!r}")
        if cfg.element_count < 1:
            raise UsageError("element_count must be >= 1")
        return cfg

    def document(self) -> dict:
        """Unit-suffixed document that round-trips through from_document."""
        doc = {
            "array": {
                "arc_radius_mm": self.arc_radius * 1e3,
                "element_count": self.element_count,
                "spacing_mm": self.spacing * 1e3,
                "carrier_frequency_khz": self.carrier_frequency * 1e-3,
                "sound_speed_m_per_s": self.sound_speed,
                "center_angle_rad": self.center_angle,
                "amplitude_reference_mm": self.amplitude_reference * 1e3,
            },
            "regions": {
                "tumor_center_mm": [v * 1e3 for v in self.tumor_center],
                "tumor_radius_mm": self.tumor_radius * 1e3,
                "box_width_mm": self.box_width * 1e3,
                "box_height_mm": self.box_height * 1e3,
                "grid_spacing_mm": self.grid_spacing * 1e3,
            },
            "design": {
                "gamma": self.gamma,
                "delta": self.delta,
                "epsilon": self.epsilon,
                "weight": self.weight,
                "variant": self.variant,
                "power_level": self.power_level,
            },
            "seed": self.seed,
        }
        return doc

    def build_field(self):
        geometry = build_curvilinear_array(
            arc_radius=self.arc_radius,
            element_count=self.element_count,
            spacing=self.spacing,
            carrier_frequency=self.carrier_frequency,
            sound_speed=self.sound_speed,
            center_angle=self.center_angle,
            amplitude_reference=self.amplitude_reference,
        )
        grids = build_region_grids(
            tumor_center=self.tumor_center,
            tumor_radius=self.tumor_radius,
            box_width=self.box_width,
            box_height=self.box_height,
            grid_spacing=self.grid_spacing,
        )
        if self.weight != "identity":
            raise UsageError(f"unsupported weight model {self.weight!r}")
        model = UncertaintyModel(
            weight_diagonal=np.ones(self.element_count),
            epsilon=self.epsilon,
        )
        return build_steering_field(geometry, grids, uncertainty=model)


def load_config(name_or_path: str) -> RunConfig:
    path = Path(name_or_path)
    if not path.exists():
        candidate = PRESET_DIR / f"{name_or_path}.json"
        if candidate.exists():
            path = candidate
        else:
            raise UsageError(f"config {name_or_path!r} not found")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from exc
    return RunConfig.from_document(doc)


def _run_design(cfg: RunConfig, options: SolverOptions) -> CovarianceDesign:
    field = cfg.build_field()
    if cfg.variant == "nominal_eq5":
        return design_nominal_eq5(field, cfg.delta, cfg.gamma, options)
    if cfg.variant == "nominal_generalized":
        return design_nominal_generalized(field, cfg.delta, cfg.gamma, options)
    if cfg.variant == "robust":
        return design_robust(field, cfg.delta, cfg.gamma, options)
    if cfg.variant == "weighted_robust":
        return design_weighted_robust(field, cfg.delta,
                                      power_level=cfg.power_level,
                                      gamma=cfg.gamma, options=options)
    if cfg.variant == "sum_energy_robust":
        return design_sum_energy_robust(field, cfg.delta,
                                        power_level=cfg.power_level,
                                        gamma=cfg.gamma, options=options)
    raise UsageError(f"unknown variant {cfg.variant!r}")


def _config_hash(doc: dict) -> str:
    blob = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _write_provenance(out_dir: Path, cfg: RunConfig, extra: dict) -> None:
    prov = {
        "timestamp_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "package_version": __version__,
        "python_version": sys.version.split()[0],
        "numpy_version": np.__version__,
        "config_sha256": _config_hash(cfg.document()),
    }
    prov.update(extra)
    (out_dir / "provenance.json").write_text(
        json.dumps(prov, indent=2) + "\n")


def _write_design(out_dir: Path, cfg: RunConfig,
                  design: CovarianceDesign) -> Path:
    doc = {"config": cfg.document(), "design": design.to_dict()}
    path = out_dir / "design.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _load_design(path: str):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"design file {path!r} not found")
    try:
        doc = json.loads(p.read_text())
        cfg = RunConfig.from_document(doc["config"])
        design = CovarianceDesign.from_dict(doc["design"])
    except (KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"malformed design file: {exc}") from exc
    design.validate()
    return cfg, design


def cmd_design(args) -> int:
    cfg = load_config(args.config)
    if args.variant:
        cfg.variant = args.variant
    if args.delta is not None:
        cfg.delta = args.delta
    if args.epsilon is not None:
        cfg.epsilon = args.epsilon
    if args.power_level is not None:
        cfg.power_level = args.power_level
    if cfg.variant not in VARIANTS:
        raise UsageError(f"unknown variant {cfg.variant!r}")
    if not (0.0 <= cfg.delta < 1.0):
        raise UsageError("delta must satisfy 0 <= delta < 1")
    if cfg.epsilon < 0:
        raise UsageError("epsilon must be nonnegative")
    options = _solver_options(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    design = _run_design(cfg, options)
    _write_provenance(out_dir, cfg, {"command": "design",
                                     "variant": cfg.variant,
                                     "status": design.status})
    if design.status != "optimal":
        print(f"design: {cfg.variant} -> {design.status}", file=sys.stderr)
        return STATUS_EXIT.get(design.status, EXIT_NUMERICAL)
    design.validate()
    path = _write_design(out_dir, cfg, design)
    print(f"design: {cfg.variant} -> optimal "
          f"(t={design.t:.6g}) written to {path}")
    return EXIT_OPTIMAL


def cmd_evaluate(args) -> int:
    cfg, design = _load_design(args.design)
    field = cfg.build_field()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.mode == "nominal":
        pmap = nominal_power_map(design, field)
    else:
        pmap = worst_case_power_map(design, field)
    map_path = out_dir / f"power_map_{args.mode}.txt"
    pmap.export(map_path, convention=args.db_convention)
    if args.mode == "worst":
        pmap.export_perturbations(out_dir / "worst_perturbations.txt")
    report = region_report([(args.mode, pmap)],
                           convention=args.db_convention,
                           average=args.average)
    report.export(out_dir / f"report_{args.mode}.txt")
    _write_provenance(out_dir, cfg, {"command": "evaluate",
                                     "mode": args.mode})
    print(f"evaluate: {args.mode} map written to {map_path}")
    return EXIT_OPTIMAL


def cmd_synthesize(args) -> int:
    cfg, design = _load_design(args.design)
    if args.n_samples < 1:
        raise UsageError("--n-samples must be >= 1")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else cfg.seed
    block = synthesize_waveforms(design, args.n_samples, seed=seed)
    path = out_dir / "waveforms.txt"
    block.export(path)
    _write_provenance(out_dir, cfg, {"command": "synthesize",
                                     "n_samples": args.n_samples,
                                     "seed": seed})
    print(f"synthesize: {args.n_samples} snapshots written to {path}")
    return EXIT_OPTIMAL


def cmd_reproduce_paper(args) -> int:
    """Run the bundled study: nonrobust and robust designs, their nominal
    and worst-case maps, and the summary table."""
    cfg = load_config("paper_scenario")
    options = _solver_options(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    field = cfg.build_field()

    nonrobust = design_nominal_generalized(field, cfg.delta, cfg.gamma,
                                           options)
    if nonrobust.status != "optimal":
        print(f"nonrobust design: {nonrobust.status}", file=sys.stderr)
        return STATUS_EXIT.get(nonrobust.status, EXIT_NUMERICAL)
    nonrobust.validate()
    robust = design_robust(field, cfg.delta, cfg.gamma, options)
    if robust.status != "optimal":
        print(f"robust design: {robust.status}", file=sys.stderr)
        return STATUS_EXIT.get(robust.status, EXIT_NUMERICAL)
    robust.validate()

    # the stored config keeps the scenario epsilon so a later worst-mode
    # evaluation of the nonrobust design still perturbs the steering vectors
    nr_cfg = RunConfig.from_document(cfg.document())
    nr_cfg.variant = "nominal_generalized"
    doc = {"config": nr_cfg.document(), "design": nonrobust.to_dict()}
    (out_dir / "design_nonrobust.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n")
    doc = {"config": cfg.document(), "design": robust.to_dict()}
    (out_dir / "design_robust.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n")

    nr_worst = worst_case_power_map(nonrobust, field)
    maps = [
        ("nonrobust_nominal", nominal_power_map(nonrobust, field)),
        ("nonrobust_worst", nr_worst),
        ("robust_nominal", nominal_power_map(robust, field)),
        ("robust_worst", worst_case_power_map(robust, field)),
        # the shared perturbed scenario: the robust design evaluated under
        # the worst perturbations certified for the non-robust design
        ("robust_perturbed", perturbed_power_map(robust, field, nr_worst)),
    ]
    for label, pmap in maps:
        pmap.export(out_dir / f"power_map_{label}.txt",
                    convention=args.db_convention)
    maps[1][1].export_perturbations(out_dir / "worst_perturbations_nonrobust.txt")
    maps[3][1].export_perturbations(out_dir / "worst_perturbations_robust.txt")
    table_rows = [maps[0], maps[1], maps[4]]
    report = region_report(table_rows, convention=args.db_convention,
                           average=args.average)
    report.export(out_dir / "report.txt")
    _write_provenance(out_dir, cfg, {"command": "reproduce-paper"})
    for label, t_db, s_db in report.rows:
        print(f"{label}: tumor {t_db:.2f} dB, healthy {s_db:.2f} dB")
    return EXIT_OPTIMAL


def _solver_options(args) -> SolverOptions:
    return SolverOptions(
        gap_tol=args.gap_tol,
        feas_tol=args.feas_tol,
        max_iter=args.max_iter,
    )


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wavecov",
                     description="Waveform covariance design for focused "
                                 "power deposition.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config=False, design=False):
        p.add_argument("--out-dir", default="wavecov_out",
                       help="output directory (created if missing)")
        p.add_argument("--db-convention", choices=sorted(DB_CONVENTIONS),
                       default="20log10")
        p.add_argument("--average", choices=("db-of-mean", "mean-of-db"),
                       default="db-of-mean")
        p.add_argument("--gap-tol", type=float, default=1e-7)
        p.add_argument("--feas-tol", type=float, default=1e-6)
        p.add_argument("--max-iter", type=int, default=200_000)
        if config:
            p.add_argument("--config", required=True,
                           help="config file path or bundled preset name")
        if design:
            p.add_argument("--design", required=True,
                           help="design.json produced by the design command")

    p = sub.add_parser("design", help="solve a covariance design problem")
    add_common(p, config=True)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--delta", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--power-level", type=float)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("evaluate", help="power map + report for a design")
    add_common(p, design=True)
    p.add_argument("--mode", choices=("nominal", "worst"), default="nominal")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synthesize", help="draw waveform snapshots")
    add_common(p, design=True)
    p.add_argument("--n-samples", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("reproduce-paper",
                       help="run the bundled reference study end to end")
    add_common(p)
    p.set_defaults(func=cmd_reproduce_paper)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
