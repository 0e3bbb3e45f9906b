"""
Experiment Runner
=================
Turns one experiment config into result artifacts. Every subcommand returns a
CommandResult: the artifacts it wrote plus the assertions it checked. The CLI
maps a failed assertion to a nonzero exit status.

Sweep points are independent; with ``jobs > 1`` they run on a process pool and
are written back in grid order, so artifacts do not depend on ``jobs``.
"""

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from services.likelihood_analysis import LikelihoodAnalyzer, LikelihoodInstance
from services.property_suites import DEFAULT_ORACLE_POINTS, PropertySuites
from services.rdp_optimizer import (
    ConvergenceError,
    DistortionMatrix,
    InfeasibleError,
    RdpOptimizer,
    SolverConfig,
)
from services.svi_engine import DiscreteLatentModel, SviEngine
from services.syn_codec import BitStream, CodecModel, SynonymousCodec
from utils.config_loader import ConfigError, ConfigLoader
from utils.prob_core import (
    FiniteDistribution,
    SupportError,
    SynsetPartition,
    ValidationError,
    entropy,
    reject_unknown_keys,
    semantic_entropy,
    within_block_conditional,
)

logger = logging.getLogger(__name__)

TOP_LEVEL_KEYS = (
    "source", "partition", "distortion", "solver", "codec", "sweep", "model", "lemma", "battery", "output",
)
SWEEP_COLUMNS = ["d_target", "p_target", "rate", "achieved_d", "achieved_p", "iters", "converged"]
RD_COLUMNS = ["slope"] + SWEEP_COLUMNS
LAGRANGIAN_COLUMNS = ["lambda_d", "lambda_p", "rate", "achieved_d", "achieved_p", "converged", "surface_rate"]
MONOTONE_SLACK = 1e-4
BA_MATCH_TOL = 1e-4
LAGRANGIAN_MATCH_TOL = 1e-3

DEFAULT_SLOPES = (-8.0, -6.0, -4.0, -3.0, -2.0, -1.5, -1.0, -0.5)
DEFAULT_D_TARGETS = (0.05, 0.1, 0.2, 0.3, 0.4)
DEFAULT_P_TARGETS = (0.0, 0.01, 0.05, 0.2, math.inf)


# ═══════════════════════════════════════════════════════════
# CONFIG
# ═══════════════════════════════════════════════════════════

@dataclass(frozen=True)
class SweepConfig:
    d_targets: Tuple[float, ...] = DEFAULT_D_TARGETS
    p_targets: Tuple[float, ...] = DEFAULT_P_TARGETS
    slopes: Tuple[float, ...] = DEFAULT_SLOPES

    @classmethod
    def from_config(cls, cfg: Dict[str, Any], prefix: str = "sweep.") -> "SweepConfig":
        reject_unknown_keys(cfg, ("d_targets", "p_targets", "slopes"), prefix)
        values = {}
        for key in ("d_targets", "p_targets", "slopes"):
            if key not in cfg:
                continue
            grid = cfg[key]
            if not isinstance(grid, list) or not grid:
                raise ValidationError(f"{key} must be a non-empty list", field=f"{prefix}{key}")
            for i, v in enumerate(grid):
                if isinstance(v, bool) or not isinstance(v, (int, float)) or math.isnan(v):
                    raise ValidationError(f"{v!r} is not a number", field=f"{prefix}{key}[{i}]")
                if key == "slopes" and v > 0:
                    raise ValidationError("slopes must be <= 0", field=f"{prefix}{key}[{i}]")
                if key != "slopes" and v < 0:
                    raise ValidationError("targets must be >= 0", field=f"{prefix}{key}[{i}]")
            values[key] = tuple(float(v) for v in grid)
        return cls(**values)


@dataclass(frozen=True)
class BatteryConfig:
    """Size of the seeded random-instance suites and the (D, P) points checked against the grid search."""

    instances: int = 1000
    oracle_points: Tuple[Tuple[float, float], ...] = DEFAULT_ORACLE_POINTS

    @classmethod
    def from_config(cls, cfg: Dict[str, Any], prefix: str = "battery.") -> "BatteryConfig":
        reject_unknown_keys(cfg, ("instances", "oracle_points"), prefix)
        instances = cfg.get("instances", 1000)
        if isinstance(instances, bool) or not isinstance(instances, int) or instances < 1:
            raise ValidationError("instances must be a positive integer", field=f"{prefix}instances")
        points = cfg.get("oracle_points", DEFAULT_ORACLE_POINTS)
        if not isinstance(points, (list, tuple)):
            raise ValidationError("oracle_points must be a list of [D, P] pairs", field=f"{prefix}oracle_points")
        parsed = []
        for i, pair in enumerate(points):
            where = f"{prefix}oracle_points[{i}]"
            if not isinstance(pair, (list, tuple)) or len(pair) != 2:
                raise ValidationError("expected a [D, P] pair", field=where)
            for v in pair:
                if isinstance(v, bool) or not isinstance(v, (int, float)) or math.isnan(v) or v < 0:
                    raise ValidationError(f"{v!r} is not a non-negative number", field=where)
            parsed.append((float(pair[0]), float(pair[1])))
        return cls(instances=instances, oracle_points=tuple(parsed))


def _read_codec_symbols(raw: Any, base_dir: Optional[Path], alphabet_size: int) -> np.ndarray:
    if not isinstance(raw, str) or not raw:
        raise ValidationError("symbols_path must be a path string", field="codec.symbols_path")
    path = Path(raw)
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    if not path.is_file():
        raise ValidationError(f"symbol file {path} does not exist", field="codec.symbols_path")
    try:
        symbols = ConfigLoader.read_symbols(path)
    except ConfigError as exc:
        raise ValidationError(str(exc), field="codec.symbols_path") from exc
    if symbols.size == 0:
        raise ValidationError(f"symbol file {path} is empty", field="codec.symbols_path")
    bad = np.flatnonzero((symbols < 0) | (symbols >= alphabet_size))
    if bad.size:
        raise ValidationError(
            f"symbol {symbols[bad[0]]} (entry {bad[0] + 1}) is outside [0, {alphabet_size})",
            field="codec.symbols_path",
        )
    return symbols


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    source: FiniteDistribution
    partition: SynsetPartition
    distortion: DistortionMatrix
    solver: SolverConfig = SolverConfig()
    codec: Optional[CodecModel] = None
    codec_n: int = 100_000
    sweep: SweepConfig = SweepConfig()
    model: Optional[DiscreteLatentModel] = None
    lemma: Optional[LikelihoodInstance] = None
    battery: BatteryConfig = BatteryConfig()
    codec_symbols: Optional[np.ndarray] = None     # replaces sampling when codec.symbols_path is set
    output_dir: Path = Path("results")

    def __post_init__(self):
        if self.codec is None:
            object.__setattr__(self, "codec", CodecModel(self.source, self.partition))
        if self.model is None:
            object.__setattr__(self, "model", DiscreteLatentModel.ideal(self.source, self.partition))
        if self.lemma is None:
            object.__setattr__(self, "lemma", LikelihoodInstance(self.source, self.source, self.partition))

    @classmethod
    def from_dict(cls, doc: Dict[str, Any], base_dir: Optional[Path] = None) -> "ExperimentConfig":
        """
        Validate every section; failures surface as ConfigError with a dotted path.
        Relative file paths inside the config resolve against base_dir.
        """
        section = ""
        try:
            reject_unknown_keys(doc, TOP_LEVEL_KEYS, "")
            for key in TOP_LEVEL_KEYS:
                if key in doc and key != "distortion" and not isinstance(doc[key], dict):
                    raise ValidationError("section must be a JSON object", field=key)
            section = "source"
            if "source" not in doc:
                raise ValidationError("missing required section", field="source")
            source = FiniteDistribution.from_config(doc["source"], "source.")
            section = "partition"
            partition = (
                SynsetPartition.from_config(doc["partition"], "partition.")
                if "partition" in doc else SynsetPartition.singletons(source.size)
            )
            if partition.alphabet_size != source.size:
                raise ValidationError(
                    f"partition covers {partition.alphabet_size} indices, source has {source.size}",
                    field="partition.blocks",
                )
            section = "distortion"
            distortion = DistortionMatrix.from_config(doc.get("distortion", "hamming"), source.size)
            if distortion.shape[0] != source.size:
                raise ValidationError("distortion rows must match the source alphabet", field="distortion.matrix")
            section = "solver"
            solver = SolverConfig.from_config(doc.get("solver", {}), "solver.")
            section = "codec"
            codec_cfg = doc.get("codec", {})
            codec = CodecModel.from_config(codec_cfg, source, partition, "codec.")
            codec_n = codec_cfg.get("n", 100_000)
            if isinstance(codec_n, bool) or not isinstance(codec_n, int) or codec_n < 1:
                raise ValidationError("n must be a positive integer", field="codec.n")
            codec_symbols = None
            if "symbols_path" in codec_cfg:
                codec_symbols = _read_codec_symbols(codec_cfg["symbols_path"], base_dir, source.size)
                codec_n = int(codec_symbols.size)
            section = "sweep"
            sweep = SweepConfig.from_config(doc.get("sweep", {}), "sweep.")
            section = "model"
            model = DiscreteLatentModel.from_config(doc["model"], "model.") if "model" in doc else None
            section = "lemma"
            lemma = LikelihoodInstance.from_config(doc.get("lemma", {}), source, partition, "lemma.")
            section = "battery"
            battery = BatteryConfig.from_config(doc.get("battery", {}), "battery.")
            section = "output"
            output = doc.get("output", {})
            reject_unknown_keys(output, ("dir",), "output.")
            output_dir = Path(output.get("dir", "results"))
        except ValidationError as exc:
            raise ConfigError(str(exc), field_path=exc.field or section) from exc
        except SupportError as exc:
            raise ConfigError(str(exc), field_path=section) from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed value: {exc}", field_path=section) from exc
        return cls(
            source, partition, distortion, solver, codec, codec_n, sweep, model, lemma, battery, codec_symbols,
            output_dir,
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(ConfigLoader.load(path), base_dir=Path(path).parent)

    def with_overrides(self, seed: Optional[int] = None, out_dir: Optional[str] = None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            try:
                cfg = dataclasses.replace(
                    cfg,
                    solver=dataclasses.replace(cfg.solver, seed=seed),
                    codec=dataclasses.replace(cfg.codec, seed=seed),
                )
            except ValidationError as exc:
                raise ConfigError(str(exc), field_path="--seed") from exc
        if out_dir is not None:
            cfg = dataclasses.replace(cfg, output_dir=Path(out_dir))
        return cfg


# ═══════════════════════════════════════════════════════════
# RESULTS
# ═══════════════════════════════════════════════════════════

@dataclass
class CommandResult:
    command: str
    summary: Dict[str, Any] = field(default_factory=dict)
    assertions: List[Dict[str, Any]] = field(default_factory=list)
    artifacts: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(a["passed"] for a in self.assertions)

    def check(self, name: str, residual: float, tolerance: float, passed: Optional[bool] = None) -> None:
        ok = bool(residual <= tolerance) if passed is None else bool(passed)
        if not ok:
            logger.warning(f"[{self.command}] assertion '{name}' failed: residual {residual:.3e} > {tolerance:g}")
        self.assertions.append(
            {"name": name, "passed": ok, "residual": float(residual), "tolerance": float(tolerance)}
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "passed": self.passed,
            "summary": self.summary,
            "assertions": self.assertions,
            "artifacts": self.artifacts,
        }


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value)
    return value


# ═══════════════════════════════════════════════════════════
# POOL WORKERS (module level so they pickle)
# ═══════════════════════════════════════════════════════════

def _failed_row(d: float, p: float, point=None) -> Dict[str, Any]:
    if point is not None:
        row = point.to_row()
        row.update(d_target=d, p_target=p, converged=False)
        return row
    nan = float("nan")
    return {"d_target": d, "p_target": p, "rate": nan, "achieved_d": nan, "achieved_p": nan,
            "iters": 0, "converged": False}


def _solve_surface_point(task: Tuple[FiniteDistribution, DistortionMatrix, float, float, SolverConfig]) -> Dict[str, Any]:
    p, delta, d, pt, cfg = task
    try:
        return {**RdpOptimizer.rdp_solve(p, delta, d, pt, cfg).to_row(), "_status": "solved"}
    except InfeasibleError as exc:
        logger.warning(f"(D={d:g}, P={pt:g}) infeasible: {exc} [binding={exc.binding}]")
        return {**_failed_row(d, pt), "_status": "infeasible"}
    except ConvergenceError as exc:
        logger.warning(f"(D={d:g}, P={pt:g}) did not converge: {exc}")
        return {**_failed_row(d, pt, exc.last_point), "_status": "unconverged"}


def _solve_lagrangian_point(
    task: Tuple[FiniteDistribution, DistortionMatrix, float, float, SolverConfig],
) -> Dict[str, Any]:
    """Minimise the weighted loss, then re-solve the constrained problem at the (D, P) it reached."""
    p, delta, lambda_d, lambda_p, cfg = task
    point = RdpOptimizer.minimize_rdp_loss(p, delta, lambda_d, lambda_p, cfg)
    row = {
        "lambda_d": lambda_d, "lambda_p": lambda_p, "rate": point.rate, "achieved_d": point.achieved_d,
        "achieved_p": point.achieved_p, "converged": point.converged, "surface_rate": float("nan"),
    }
    constrained = dataclasses.replace(cfg, perception="kl", check_dominance=False)
    try:
        row["surface_rate"] = RdpOptimizer.rdp_solve(
            p, delta, point.achieved_d, max(point.achieved_p, 0.0), constrained
        ).rate
    except (InfeasibleError, ConvergenceError) as exc:
        logger.warning(f"(λ_d={lambda_d:g}, λ_p={lambda_p:g}) constrained re-solve failed: {exc}")
    return row


def _solve_rd_point(task: Tuple[FiniteDistribution, DistortionMatrix, float, SolverConfig]) -> Dict[str, Any]:
    p, delta, slope, cfg = task
    try:
        point = RdpOptimizer.blahut_arimoto(p, delta, slope, cfg)
    except ConvergenceError as exc:
        logger.warning(f"slope {slope:g} did not converge: {exc}")
        point = exc.last_point
    history = np.asarray(point.history)
    rise = float(np.max(np.diff(history))) if history.size > 1 else 0.0
    return {"slope": slope, **point.to_row(), "_max_rise": rise}


def _run_tasks(fn: Callable, tasks: Sequence[Any], jobs: int) -> List[Any]:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


class ExperimentRunner:
    """Subcommand bodies."""

    @staticmethod
    def _write_sweep(
        cfg: ExperimentConfig, result: CommandResult, stem: str, rows: List[Dict[str, Any]], columns: List[str],
        fmt: str,
    ) -> None:
        out = cfg.output_dir / f"{stem}.{fmt}"
        if fmt == "csv":
            ConfigLoader.write_csv(out, rows, columns)
        else:
            ConfigLoader.write_json(out, _jsonable([{c: r[c] for c in columns} for r in rows]))
        result.artifacts.append(out.name)

    @staticmethod
    def _write_report(cfg: ExperimentConfig, result: CommandResult, name: str, payload: Dict[str, Any]) -> None:
        out = cfg.output_dir / name
        ConfigLoader.write_json(out, _jsonable(payload))
        result.artifacts.append(out.name)

    # ═══════════════════════════════════════════════════════
    # SUBCOMMANDS
    # ═══════════════════════════════════════════════════════

    @staticmethod
    def entropy(cfg: ExperimentConfig, fmt: str = "csv", jobs: int = 1) -> CommandResult:
        result = CommandResult("entropy")
        h = entropy(cfg.source)
        h_s = semantic_entropy(cfg.source, cfg.partition)
        result.summary = {"h": h, "h_s": h_s, "syn_rate": RdpOptimizer.synonymous_rate(cfg.source, cfg.partition)}
        result.check("semantic_entropy_below_entropy", max(0.0, h_s - h), 1e-12)
        ExperimentRunner._write_report(cfg, result, "entropy.json", result.summary)
        return result

    @staticmethod
    def svi_check(cfg: ExperimentConfig, fmt: str = "csv", jobs: int = 1) -> CommandResult:
        result = CommandResult("svi-check")
        m = cfg.model
        per_symbol = []
        for x in np.flatnonzero(m.source.probs > 0):
            report = SviEngine.svlbo_report(m, int(x))
            decomposition = SviEngine.kl_decomposition(m, int(x))
            per_symbol.append({"x": int(x), **report.to_dict(),
                               "identity_residual": report.identity_residual,
                               "decomposition_residual": report.decomposition_residual,
                               "kl_decomposition_residual": decomposition["residual"]})
            result.check(f"svlbo_identity[x={x}]", abs(report.identity_residual), 1e-10)
            result.check(f"partial_kl_decomposition[x={x}]", abs(decomposition["residual"]), 1e-10)
            result.check(f"full_kl_nonnegative[x={x}]", max(0.0, -report.full_kl), 1e-12)
        conditions = SviEngine.lossless_conditions_check(m)
        premise = conditions["kl_zero"] and conditions["likelihood_one"]
        result.check(
            "lossless_conditions_imply_hs_equals_mi",
            abs(conditions["semantic_entropy"] - conditions["block_latent_mi"]) if premise else 0.0,
            1e-9,
            passed=(not premise) or conditions["hs_equals_mi"],
        )
        result.summary = {"symbols": per_symbol, "lossless_conditions": conditions}
        ExperimentRunner._write_report(cfg, result, "svi_check.json", result.summary)
        return result

    @staticmethod
    def lemma_check(cfg: ExperimentConfig, fmt: str = "csv", jobs: int = 1) -> CommandResult:
        result = CommandResult("lemma-check")
        report = LikelihoodAnalyzer.lemma_report(cfg.lemma)
        result.check("f_equals_kl_plus_delta_p", abs(report["residual"]), 1e-12)
        result.check("delta_p_below_f", max(0.0, report["delta_p"] - report["f"]), 1e-12)
        result.summary = report
        ExperimentRunner._write_report(cfg, result, "lemma_check.json", report)
        return result

    @staticmethod
    def rd_curve(cfg: ExperimentConfig, fmt: str = "csv", jobs: int = 1) -> CommandResult:
        result = CommandResult("rd-curve")
        tasks = [(cfg.source, cfg.distortion, s, cfg.solver) for s in cfg.sweep.slopes]
        rows = _run_tasks(_solve_rd_point, tasks, jobs)
        for row in rows:
            result.check(f"ba_objective_non_increasing[slope={row['slope']:g}]", max(0.0, row.pop("_max_rise")),
                         1e-12)
        unconverged = [row["slope"] for row in rows if not row["converged"]]
        result.check("rd_points_converged", float(len(unconverged)), 0.0)
        corner = RdpOptimizer.blahut_arimoto(cfg.source, cfg.distortion, -math.inf, cfg.solver)
        if cfg.distortion.is_square:
            result.check("zero_distortion_corner_equals_entropy", abs(corner.rate - entropy(cfg.source)), 1e-12)
        result.summary = {"points": len(rows), "corner_rate": corner.rate, "unconverged_slopes": unconverged}
        ExperimentRunner._write_sweep(cfg, result, "rd_curve", rows, RD_COLUMNS, fmt)
        return result

    @staticmethod
    def rdp_surface(cfg: ExperimentConfig, fmt: str = "csv", jobs: int = 1) -> CommandResult:
        result = CommandResult("rdp-surface")
        ds, ps = cfg.sweep.d_targets, cfg.sweep.p_targets
        tasks = [(cfg.source, cfg.distortion, d, p, cfg.solver) for d in ds for p in ps]
        rows = _run_tasks(_solve_surface_point, tasks, jobs)
        statuses = [r.pop("_status") for r in rows]
        unconverged = [(r["d_target"], r["p_target"]) for r, s in zip(rows, statuses) if s == "unconverged"]
        result.check("surface_points_converged", float(len(unconverged)), 0.0)
        rates = np.array([r["rate"] for r in rows], dtype=float).reshape(len(ds), len(ps))

        d_order, p_order = np.argsort(ds, kind="stable"), np.argsort(ps, kind="stable")
        grid = rates[np.ix_(d_order, p_order)]
        with np.errstate(invalid="ignore"):
            rise_d = np.nan_to_num(np.diff(grid, axis=0), nan=0.0)
            rise_p = np.nan_to_num(np.diff(grid, axis=1), nan=0.0)
        result.check("rate_non_increasing_in_d", float(max(0.0, rise_d.max(initial=0.0))), MONOTONE_SLACK)
        result.check("rate_non_increasing_in_p", float(max(0.0, rise_p.max(initial=0.0))), MONOTONE_SLACK)

        for j, p in enumerate(ps):
            if not math.isinf(p):
                continue
            for i, d in enumerate(ds):
                if math.isnan(rates[i, j]):
                    continue
                rd = RdpOptimizer.rate_distortion(cfg.source, cfg.distortion, d, cfg.solver)
                result.check(f"disabled_perception_matches_rd[D={d:g}]", abs(rates[i, j] - rd.rate), BA_MATCH_TOL)

        result.summary = {
            "points": len(rows),
            "infeasible": statuses.count("infeasible"),
            "unconverged": unconverged,
        }
        ExperimentRunner._write_sweep(cfg, result, "rdp_surface", rows, SWEEP_COLUMNS, fmt)

        if cfg.solver.lagrange_grid and cfg.distortion.is_square:
            tasks = [(cfg.source, cfg.distortion, ld, lp, cfg.solver) for ld, lp in cfg.solver.lagrange_grid]
            lagrangian = _run_tasks(_solve_lagrangian_point, tasks, jobs)
            for row in lagrangian:
                gap = abs(row["rate"] - row["surface_rate"])
                result.check(
                    f"lagrangian_point_on_surface[λ_d={row['lambda_d']:g},λ_p={row['lambda_p']:g}]",
                    gap if math.isfinite(gap) else math.inf,
                    LAGRANGIAN_MATCH_TOL,
                )
            result.summary["lagrangian_points"] = len(lagrangian)
            ExperimentRunner._write_sweep(cfg, result, "rdp_lagrangian", lagrangian, LAGRANGIAN_COLUMNS, fmt)
        elif cfg.solver.lagrange_grid:
            logger.warning("solver.lagrange_grid ignored: the weighted loss needs a square distortion")
        return result

    @staticmethod
    def codec_run(cfg: ExperimentConfig, fmt: str = "csv", jobs: int = 1) -> CommandResult:
        result = CommandResult("codec-run")
        model = cfg.codec
        if cfg.codec_symbols is not None:
            symbols = cfg.codec_symbols
            logger.info(f"Encoding {symbols.size} symbols read from codec.symbols_path")
        else:
            symbols = SynonymousCodec.sample_source(model, cfg.codec_n)
        bs = SynonymousCodec.encode(symbols, model)
        blob = bs.to_bytes()
        ConfigLoader.atomic_write_bytes(cfg.output_dir / "codec_run.bin", blob)
        result.artifacts.append("codec_run.bin")

        parsed = BitStream.from_bytes(blob)
        blocks = SynonymousCodec.decode_blocks(parsed, model)
        recon = SynonymousCodec.decode(parsed, model)
        ConfigLoader.write_symbols(cfg.output_dir / "reconstruction.txt", recon)
        result.artifacts.append("reconstruction.txt")

        encoded_blocks, _ = SynonymousCodec.split_representation(symbols, model)
        mismatches = int(np.count_nonzero(blocks != encoded_blocks))
        result.check("semantic_round_trip", float(mismatches), 0.0)

        freqs = np.asarray(parsed.freq_table, dtype=float)
        ideal_bits = float(np.sum(np.log2(freqs.sum() / freqs)[encoded_blocks]))
        result.check("rate_bound", max(0.0, bs.bit_length - ideal_bits - 32.0), 0.0)

        labels = model.partition.labels
        if model.sampler_mode == "strict":
            outside = int(np.count_nonzero(labels[recon] != encoded_blocks))
            result.check("reconstruction_within_synset", float(outside), 0.0)
        if np.allclose(model.detail_sampler, within_block_conditional(model.source, model.partition),
                       atol=1e-15, rtol=0.0):
            residual = float(np.max(np.abs(SynonymousCodec.pushforward(model).probs - model.source.probs)))
            result.check("pushforward_preserves_source", residual, 1e-12)
        if model.partition.is_singleton and model.sampler_mode == "strict":
            result.check("singleton_bit_exact", float(np.count_nonzero(recon != symbols)), 0.0)

        metric = cfg.distortion if cfg.distortion.is_square else None
        report = SynonymousCodec.measure(symbols, recon, model, bitstream=bs, metric=metric)
        result.summary = report.to_dict()
        ExperimentRunner._write_report(cfg, result, "codec_run.json", result.summary)
        return result

    @staticmethod
    def degenerate(cfg: ExperimentConfig, fmt: str = "csv", jobs: int = 1) -> CommandResult:
        result = CommandResult("degenerate")
        suite = RdpOptimizer.degeneration_suite(cfg.source, cfg.distortion, cfg.partition, cfg.solver)
        for a in suite["assertions"]:
            result.check(a["name"], a["residual"], a["tolerance"], passed=a["passed"])
        result.summary = suite
        ExperimentRunner._write_report(cfg, result, "degenerate.json", suite)
        return result

    @staticmethod
    def suites(cfg: ExperimentConfig, fmt: str = "csv", jobs: int = 1) -> CommandResult:
        result = CommandResult("suites")
        checks = PropertySuites.run_all(
            cfg.solver.seed, cfg.battery.instances, cfg.source, cfg.distortion, cfg.battery.oracle_points, cfg.solver
        )
        for c in checks:
            result.check(c.name, c.residual, c.tolerance)
        result.summary = {
            "seed": cfg.solver.seed,
            "instances": cfg.battery.instances,
            "checks": [c.to_dict() for c in checks],
        }
        ExperimentRunner._write_report(cfg, result, "suites.json", result.summary)
        return result

    @staticmethod
    def battery(cfg: ExperimentConfig, fmt: str = "csv", jobs: int = 1) -> CommandResult:
        result = CommandResult("all")
        sections = {}
        for name in BATTERY_ORDER:
            sub = COMMANDS[name](cfg, fmt, jobs)
            sections[name] = {"passed": sub.passed, "assertions": sub.assertions}
            result.assertions.extend({**a, "name": f"{name}:{a['name']}"} for a in sub.assertions)
            result.artifacts.extend(sub.artifacts)
        result.summary = sections
        ExperimentRunner._write_report(cfg, result, "battery.json", {"passed": result.passed, "sections": sections})
        return result

    @staticmethod
    def run(command: str, cfg: ExperimentConfig, fmt: str = "csv", jobs: int = 1) -> CommandResult:
        if command not in COMMANDS:
            raise ValueError(f"unknown subcommand '{command}'")
        if fmt not in ("csv", "json"):
            raise ValueError(f"unknown format '{fmt}'")
        logger.info(f"Running '{command}' into {cfg.output_dir} (format={fmt}, jobs={jobs})")
        result = COMMANDS[command](cfg, fmt, max(1, int(jobs)))
        status = "passed" if result.passed else "FAILED"
        logger.info(f"'{command}' {status}: {len(result.assertions)} assertions, artifacts {result.artifacts}")
        return result


BATTERY_ORDER = (
    "entropy", "svi-check", "lemma-check", "rd-curve", "rdp-surface", "codec-run", "degenerate", "suites",
)

COMMANDS: Dict[str, Callable[..., CommandResult]] = {
    "entropy": ExperimentRunner.entropy,
    "svi-check": ExperimentRunner.svi_check,
    "lemma-check": ExperimentRunner.lemma_check,
    "rd-curve": ExperimentRunner.rd_curve,
    "rdp-surface": ExperimentRunner.rdp_surface,
    "codec-run": ExperimentRunner.codec_run,
    "degenerate": ExperimentRunner.degenerate,
    "suites": ExperimentRunner.suites,
    "all": ExperimentRunner.battery,
}
