"""Command-line pipeline: build the operator, simulate counts, reconstruct, analyze.

Every subcommand reads the same scenario file and writes into one output
directory, refreshing ``manifest.json`` there.  Exit codes: 0 success,
2 configuration error, 3 I/O error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, artifacts
from .config import ConfigError, ScenarioConfig, load_config
from .photoncount import CountError, CountMatrix, expected_counts, simulate_counts
from .recon import ReconstructionError, matched_gaussian_lambda, reconstruct
from .scene import SceneError
from .transport import ForwardOperator, OperatorError, apply_forward, build_operator

log = logging.getLogger("occlusight")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

OPERATOR_FILE = "operator.bin"
COUNTS_FILE = "counts.csv"
TRUTH_FILE = "truth.csv"
REFLECTIVITY_FILE = "reflectivity.csv"

SWEEP_AXES = {"ppp": "ppp", "occluder-diameter": "occluder-diameter",
              "diameter": "occluder-diameter", "bar-separation": "bar-separation",
              "separation": "bar-separation", "lambda": "lambda", "spectrum": "spectrum"}


class ArtifactError(OSError):
    """Missing, unreadable or inconsistent artifact in the output directory."""


class Session:
    """One subcommand invocation: config, output directory and seed."""

    def __init__(self, cfg: ScenarioConfig, out: Path | None = None, seed: int | None = None,
                 workers: int | None = None):
        self.cfg = cfg
        self.out = Path(out) if out is not None else cfg.output_dir
        self.seed = cfg.acquisition.seed if seed is None else int(seed)
        self.workers = workers
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ArtifactError(f"cannot create output directory {self.out}: {exc}") from None
        self.notes: dict = {}

    def path(self, name: str) -> Path:
        return self.out / name

    def finish(self, command: str) -> None:
        extra = {"config": str(self.cfg.source) if self.cfg.source else None}
        extra.update(self.notes)
        artifacts.write_manifest(self.out, command, self.cfg.config_hash, self.seed, extra)

    # ------------------------------------------------------- artifacts

    def build_operator(self) -> ForwardOperator:
        op = build_operator(self.cfg.scene, self.cfg.acquisition.kp, self.workers)
        op.save(self.path(OPERATOR_FILE))
        return op

    def operator(self) -> ForwardOperator:
        """Reuse ``operator.bin`` when it matches the configured scene, else build it."""
        p = self.path(OPERATOR_FILE)
        if p.is_file():
            try:
                op = ForwardOperator.load(p)
            except OperatorError as exc:
                raise ArtifactError(str(exc)) from None
            if (op.fingerprint == self.cfg.scene.fingerprint()
                    and op.kp == self.cfg.acquisition.kp):
                return op
            log.info("%s is stale for this scene; rebuilding", p)
        return self.build_operator()

    def simulate(self, op: ForwardOperator) -> CountMatrix:
        truth = self.cfg.truth_image()
        Y = apply_forward(op, truth)
        R = simulate_counts(Y, self.cfg.acquisition_params(), self.seed)
        artifacts.write_counts(self.path(COUNTS_FILE), R)
        artifacts.write_json(self.path("counts.stamp.json"),
                             {"config_hash": self.cfg.config_hash, "seed": self.seed})
        artifacts.write_reflectivity(self.path(TRUTH_FILE), truth)
        self.notes["ppp_expected"] = float(np.mean(expected_counts(Y, R.params)))
        return R

    def counts(self, op: ForwardOperator) -> CountMatrix:
        """Reuse ``counts.csv`` written by the same config and seed, else simulate."""
        stamp = self.path("counts.stamp.json")
        if self.path(COUNTS_FILE).is_file() and stamp.is_file():
            try:
                meta = json.loads(stamp.read_text(encoding="utf-8"))
                if meta == {"config_hash": self.cfg.config_hash, "seed": self.seed}:
                    return artifacts.read_counts(self.path(COUNTS_FILE))
            except (ValueError, KeyError, OSError) as exc:
                raise ArtifactError(f"{self.path(COUNTS_FILE)}: {exc}") from None
        return self.simulate(op)


# ------------------------------------------------------------ commands

def cmd_build_operator(session: Session) -> dict:
    op = session.build_operator()
    session.finish("build-operator")
    return {"m": op.m, "n": op.n, "fingerprint": op.fingerprint,
            "zero_fraction": float(np.mean(op.matrix == 0))}


def cmd_simulate(session: Session) -> dict:
    op = session.operator()
    R = session.simulate(op)
    session.finish("simulate")
    return {"pulses": R.params.pulses, "seed": R.seed,
            "ppp_expected": session.notes["ppp_expected"],
            "ppp_empirical": float(R.counts.mean())}


def cmd_reconstruct(session: Session) -> dict:
    op = session.operator()
    R = session.counts(op)
    res = reconstruct(R, op, session.cfg.reconstruction)
    truth = session.cfg.truth_image()
    artifacts.write_reflectivity(session.path(REFLECTIVITY_FILE), res.estimate)
    artifacts.render_pgm(res.display, session.path("reflectivity.pgm"))
    artifacts.write_trace(session.path("trace.csv"), res.objective_trace)
    summary = {"rmse": analysis.rmse(res.estimate, truth), "iterations": res.iterations,
               "converged": res.converged, "stop_reason": res.stop_reason,
               "lambda": session.cfg.reconstruction.lam,
               "likelihood": session.cfg.reconstruction.likelihood}
    artifacts.write_json(session.path("reconstruction.json"), summary)
    session.finish("reconstruct")
    return summary


def cmd_render(session: Session, source: Path | None = None) -> dict:
    src = source or session.path(REFLECTIVITY_FILE)
    try:
        F = artifacts.read_image(src)
    except (OSError, ValueError) as exc:
        raise ArtifactError(f"{src}: {exc}") from None
    target = session.path(Path(src).stem + ".pgm")
    artifacts.render_pgm(F, target)
    written = [target.name]
    truth_csv = session.path(TRUTH_FILE)
    if source is None and truth_csv.is_file():
        artifacts.render_pgm(artifacts.read_image(truth_csv), session.path("truth.pgm"))
        written.append("truth.pgm")
    session.finish("render")
    return {"written": written}


def _gaussian_config(session: Session, op: ForwardOperator):
    """Gaussian baseline with one fixed weight for the whole PPP sweep.

    ``"matched"`` gives the Gaussian term the binomial term's curvature
    balance at the scenario's nominal acquisition; the weight then stays
    fixed while the dwell time varies, as a signal-independent noise model
    prescribes.
    """
    cfg = session.cfg
    lam_g = cfg.analysis.gaussian_lambda
    if lam_g == "matched":
        Y = apply_forward(op, cfg.truth_image())
        R = simulate_counts(Y, cfg.acquisition_params(), session.seed)
        lam_g = matched_gaussian_lambda(cfg.reconstruction.lam, R)
    session.notes["gaussian_lambda"] = float(lam_g)
    return cfg.reconstruction.replace(likelihood="gaussian", lam=float(lam_g))


def cmd_analyze(session: Session, axis: str, values: list[float] | None = None) -> dict:
    cfg = session.cfg
    a = cfg.analysis
    if axis not in SWEEP_AXES:
        raise ConfigError(f"--sweep: unknown axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    axis = SWEEP_AXES[axis]
    binomial = cfg.reconstruction.replace(likelihood="binomial")
    extent = cfg.scene.hidden_wall.extent_u

    if axis == "spectrum":
        spec = analysis.singular_spectrum(session.operator(), a.tau)
        spec.write_csv(session.path("spectrum.csv"))
        spec.write_dat(session.path("spectrum.dat"))
        unocc = analysis.singular_spectrum(
            build_operator(cfg.scene.without_occluders(), cfg.acquisition.kp, session.workers),
            a.tau)
        unocc.write_csv(session.path("spectrum-unoccluded.csv"))
        session.notes["effective_rank"] = spec.effective_rank
        session.notes["effective_rank_unoccluded"] = unocc.effective_rank
        session.finish("analyze spectrum")
        return {"effective_rank": spec.effective_rank,
                "effective_rank_unoccluded": unocc.effective_rank,
                "condition_number": spec.condition_number}

    op = session.operator()
    truth = cfg.truth_image()
    params = cfg.acquisition_params()
    if axis == "ppp":
        report = analysis.sweep_ppp(op, truth, values or a.ppp_levels, params, binomial,
                                    _gaussian_config(session, op), a.seeds, a.max_pulses,
                                    session.workers)
    elif axis == "occluder-diameter":
        report = analysis.sweep_occluder(cfg.scene, cfg.acquisition.kp, truth,
                                         values or a.diameters, params, binomial, a.seeds,
                                         session.workers)
    elif axis == "bar-separation":
        report = analysis.sweep_bars(op, extent, values or a.separations, params, binomial,
                                     a.seeds, session.workers, bar_width=a.bar_width,
                                     bar_length=a.bar_length)
    else:
        report = analysis.sweep_lambda(op, truth, params, values or a.lambdas, binomial,
                                       session.seed, a.lambda_scale, session.workers)
    report.write_csv(session.path(f"sweep-{axis}.csv"))
    report.write_dat(session.path(f"sweep-{axis}.dat"))
    session.finish(f"analyze {axis}")
    return {"rows": report.rows}


# ------------------------------------------------------------ CLI

def _parse_values(tokens: list[str]) -> list[float]:
    out = []
    for tok in tokens:
        for part in tok.split(","):
            if part.strip():
                try:
                    out.append(float(part))
                except ValueError:
                    raise ConfigError(f"--sweep: not a number: {part!r}") from None
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="occlusight",
                                description="Occluder-assisted non-line-of-sight imaging "
                                            "from photon counts.")
    p.add_argument("command",
                   choices=["build-operator", "simulate", "reconstruct", "analyze", "render"])
    p.add_argument("--config", required=True,
                   help="scenario file (bundled names such as desk_scale.cfg also work)")
    p.add_argument("--out", type=Path, help="output directory (default: from config)")
    p.add_argument("--seed", type=int, help="override the acquisition seed")
    p.add_argument("--sweep", nargs="+", metavar=("AXIS", "VALUES"),
                   help="analyze: ppp | occluder-diameter | bar-separation | lambda | "
                        "spectrum, followed by optional values (comma or space separated)")
    p.add_argument("--input", type=Path, help="render: image to convert (CSV or PGM)")
    p.add_argument("--workers", type=int, help="worker threads (default OCCLUSIGHT_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _print(result: dict) -> None:
    rows = result.pop("rows", None)
    for k, v in result.items():
        print(f"{k}: {v:.6g}" if isinstance(v, float) else f"{k}: {v}")
    if rows:
        keys = list(rows[0])
        print("  ".join(f"{k:>14}" for k in keys))
        for r in rows:
            print("  ".join(f"{r[k]:>14.6g}" if isinstance(r[k], float) else f"{r[k]:>14}"
                            for k in keys))


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed: must be a nonnegative integer")
        cfg = load_config(args.config)
        session = Session(cfg, args.out, args.seed, args.workers)
        if args.command == "build-operator":
            result = cmd_build_operator(session)
        elif args.command == "simulate":
            result = cmd_simulate(session)
        elif args.command == "reconstruct":
            result = cmd_reconstruct(session)
        elif args.command == "render":
            result = cmd_render(session, args.input)
        else:
            if not args.sweep:
                raise ConfigError("analyze: --sweep AXIS [VALUES] is required")
            result = cmd_analyze(session, args.sweep[0], _parse_values(args.sweep[1:]))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, OperatorError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ReconstructionError, SceneError, CountError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _print(result)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
