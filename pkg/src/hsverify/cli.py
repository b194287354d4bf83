"""Command-line front end: class setup, structural summaries and verification runs."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .algebra_core import (StructureError, check_structure, class_from_config, fixed_point_spaces,
                           pairs_to_matrix)
from .integrator import (EpsSchedule, MCSpec, VerificationReport, sample_A, verdict, verify_polar_form,
                         verify_euclid, verify_sw, verify_ps_identity)

TARGETS = ("euclid", "ps", "sw", "cor21", "all")
EXIT_PASS, EXIT_FAIL, EXIT_INCONCLUSIVE = 0, 1, 2


@dataclass
class RunConfig:
    """Everything needed to reproduce a run.

    ``A`` is either ``{"mode": "explicit", "matrices": [...]}`` with matrices as
    nested [re, im] pairs, or ``{"mode": "sampled", "delta", "seed", "scale",
    "count"}``; a sampled seed of None means the run seed.
    """

    cls: dict
    A: dict = field(default_factory=lambda: {"mode": "sampled", "delta": 0.5, "seed": None,
                                             "scale": 0.25, "count": 1})
    eps_values: tuple = (0.4, 0.2, 0.1, 0.05)
    eps_order: int = 1
    backend: str = "auto"
    seed: int = 20240611
    samples: int = 200_000
    batch: int = 20_000
    tol_rel: float = 0.05
    fit_tol_rel: Optional[float] = None
    b_values: tuple = (0.5, 1.0, 2.0)
    sign_control: bool = False
    out: Optional[str] = None

    def __post_init__(self):
        self.eps_values = tuple(float(e) for e in self.eps_values)
        self.b_values = tuple(float(b) for b in self.b_values)
        if self.backend not in ("auto", "mc", "quadrature"):
            raise ValueError(f"unknown backend {self.backend!r}")
        mode = self.A.get("mode")
        if mode == "explicit":
            if not self.A.get("matrices"):
                raise ValueError("explicit A needs at least one matrix")
        elif mode == "sampled":
            for key, default in (("delta", 0.5), ("seed", None), ("scale", 0.25), ("count", 1)):
                self.A.setdefault(key, default)
        else:
            raise ValueError("A mode must be 'explicit' or 'sampled'")
        EpsSchedule(self.eps_values, self.eps_order)
        MCSpec(seed=self.seed, samples=self.samples, batch=self.batch)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class"] = d.pop("cls")
        d["eps_values"] = list(self.eps_values)
        d["b_values"] = list(self.b_values)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        d["cls"] = d.pop("class")
        return cls(**d)

    def schedule(self) -> EpsSchedule:
        return EpsSchedule(self.eps_values, self.eps_order)

    def mc(self) -> MCSpec:
        return MCSpec(seed=self.seed, samples=self.samples, batch=self.batch)

    def a_seed(self) -> int:
        return self.seed if self.A.get("seed") is None else int(self.A["seed"])

    def matrices(self, d, count: Optional[int] = None) -> list:
        """The configured A matrices; sampled configs can be asked for ``count`` draws."""
        if self.A["mode"] == "explicit":
            return [pairs_to_matrix(m) for m in self.A["matrices"]]
        n = int(self.A["count"]) if count is None else count
        base = self.a_seed()
        return [sample_A(d, float(self.A["delta"]), base + i, float(self.A["scale"])) for i in range(n)]


# ---------------------------------------------------------------------------
# report I/O
# ---------------------------------------------------------------------------

def provenance(cfg: RunConfig, d) -> dict:
    config = cfg.to_dict()
    config["out"] = None  # the output location does not affect any number
    return {
        "version": __version__,
        "config": config,
        "mc_seed": cfg.seed,
        "A_seed": cfg.a_seed() if cfg.A["mode"] == "sampled" else None,
        "basis_orientation": {
            "Q": "stored Q+ basis followed by stored Q- basis (max-entry normalized, orthogonal)",
            "ps": "parameters (p, Q+) in stored bases",
            "euclid": "parameters (Q-, Q+) with Q = X + i Y~",
        },
        "generator_scale": "unit Euclidean length in orthonormal a-coordinates",
        "dims": d.dims(),
    }


def write_outputs(out_dir: str, prov: dict, reports: list) -> None:
    os.makedirs(out_dir, exist_ok=True)
    payload = {"provenance": prov, "reports": [r.to_dict() for r in reports]}
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    rows = []
    for r in reports:
        rows.extend(r.trace)
    with open(os.path.join(out_dir, "trace.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eps", "re", "im", "stderr"])
        for row in rows:
            w.writerow([repr(row["eps"]), repr(row["re"]), repr(row["im"]), repr(row["stderr"])])


REPORT_KEYS = {"class", "target", "A", "c", "lhs", "stderr", "rhs", "rel_dev", "tol_rel", "verdict", "trace",
               "notes"}


def validate_report(payload: dict) -> None:
    """Re-check a parsed report file: required keys and verdicts consistent with the numbers."""
    if set(payload) != {"provenance", "reports"}:
        raise ValueError("report must contain 'provenance' and 'reports'")
    RunConfig.from_dict(payload["provenance"]["config"])
    for r in payload["reports"]:
        missing = REPORT_KEYS - set(r)
        if missing:
            raise ValueError(f"report entry lacks {sorted(missing)}")
        if r["verdict"] in ("pass", "fail"):
            lhs, rhs = complex(*r["lhs"]), complex(*r["rhs"])
            ok = verdict(lhs, rhs, r["stderr"], r["tol_rel"])
            if ok != (r["verdict"] == "pass"):
                raise ValueError(f"verdict of {r['target']} does not match its numbers")
        elif r["verdict"] not in ("inconclusive", "skipped", "reference"):
            raise ValueError(f"unknown verdict {r['verdict']!r}")
        pairs_to_matrix(r["A"])
        for row in r["trace"]:
            if set(row) != {"eps", "re", "im", "stderr"}:
                raise ValueError("malformed trace row")


def load_report(path: str) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    validate_report(payload)
    return payload


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

def _ps_backend(cfg: RunConfig, d, absolute: bool) -> str:
    if cfg.backend != "auto":
        return cfg.backend
    if d.p.dim == 1 or (d.p.dim == 2 and not absolute):
        return "quadrature"
    return "mc"


def _skipped(d, target: str, A, note: str) -> VerificationReport:
    return VerificationReport(d.cls.name, target, A, 0j, 0j, 0.0, 0j, 0.0, None, [], [note], status="skipped")


def run_targets(cfg: RunConfig, d, target: str) -> list:
    """Run the requested checks and return their reports in a fixed order."""
    from .root_system import polar_data
    from .integrator import jprime_is_polynomial

    reports = []
    As = cfg.matrices(d)
    spec = cfg.mc()
    if target in ("euclid", "all"):
        for A in As:
            reports.append(verify_euclid(d, A, spec, tol_rel=cfg.tol_rel))
    if target in ("ps", "all"):
        for A in As:
            backend = _ps_backend(cfg, d, cfg.sign_control)
            reports.append(verify_ps_identity(d, A, cfg.schedule(), spec, backend, cfg.tol_rel,
                                                absolute=cfg.sign_control, fit_tol_rel=cfg.fit_tol_rel))
    if target in ("sw", "all"):
        for A in As:
            for b in cfg.b_values:
                reports.append(verify_sw(d, A, b, spec, "mc" if cfg.backend == "auto" else cfg.backend,
                                         tol_rel=cfg.tol_rel))
    if target in ("cor21", "all"):
        pd = polar_data(d, seed=cfg.seed)
        if cfg.A["mode"] == "explicit":
            cor_As = As
        else:
            cor_As = cfg.matrices(d, max(4, int(cfg.A["count"])))
        if d.cls.preset is None:
            reports.append(_skipped(d, "cor21", cor_As[0], "polar form needs a preset class (Haar sampler on K)"))
        elif not jprime_is_polynomial(pd):
            reports.append(_skipped(d, "cor21", cor_As[0],
                                    "polar form needs a polynomial J' (even compact multiplicities)"))
        elif len(cor_As) < 2:
            reports.append(_skipped(d, "cor21", cor_As[0], "A-independence needs at least two A"))
        else:
            reports.extend(verify_polar_form(d, pd, cor_As, cfg.schedule(), spec, cfg.tol_rel))
    return reports


def exit_code(reports: list) -> int:
    statuses = [r.status for r in reports]
    if "fail" in statuses:
        return EXIT_FAIL
    if "inconclusive" in statuses:
        return EXIT_INCONCLUSIVE
    return EXIT_PASS


def _fmt(z: complex) -> str:
    return f"{z.real:+.6e}{z.imag:+.6e}j"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_dims(cfg: RunConfig, args) -> int:
    d = fixed_point_spaces(class_from_config(cfg.cls))
    rep = check_structure(d)
    dims = d.dims()
    print(f"class {d.cls.name}")
    print("  ".join(f"{k}={v}" for k, v in dims.items()))
    for name, r in rep.residuals.items():
        print(f"  {name:28s} {r:.2e}")
    print(f"  det ad(s): p -> Q-         {rep.ad_s_det:+.6e} (cond {rep.ad_s_cond:.3g})")
    if not rep.ok:
        for f in rep.failures:
            print(f"structural failure: {f['relation']} (residual {f['residual']:.3g})")
        return EXIT_FAIL
    return EXIT_PASS


def cmd_roots(cfg: RunConfig, args) -> int:
    from .root_system import chamber_data, polar_data

    d = fixed_point_spaces(class_from_config(cfg.cls))
    pd = polar_data(d, seed=cfg.seed)
    cd = chamber_data(d, seed=cfg.seed)
    print(f"class {d.cls.name}: dim h = {pd.h.dim}, dim a = {cd.a.dim}")
    for label, rs in (("k+Q+ over h", pd.compact), ("p+Q- over h", pd.noncompact),
                      ("g over a", cd.g_roots), ("Q over a", cd.q_roots)):
        print(f"{label}: {len(rs.positive_roots)} positive roots, zero space dim {rs.zero_space.dim}")
        for a in rs.positive_roots:
            vals = ", ".join(f"{v:+.4f}" for v in a.values)
            print(f"  [{vals}]  multiplicity {a.multiplicity}")
    return EXIT_PASS


def cmd_cones(cfg: RunConfig, args) -> int:
    from .chamber_geometry import covering_check, face_to_face_check, sign_constancy_check, triangulated_chamber
    from .root_system import chamber_data

    d = fixed_point_spaces(class_from_config(cfg.cls))
    cd = chamber_data(d, seed=cfg.seed)
    tc = triangulated_chamber(cd)
    print(f"class {d.cls.name}: chamber in R^{tc.dim}, {len(tc.generators)} generators, "
          f"{len(tc.cones)} simplicial cones")
    for i, g in enumerate(tc.generators):
        print(f"  generator {i}: [" + ", ".join(f"{v:+.4f}" for v in g) + "]")
    for c, I in enumerate(tc.cones):
        signs = "".join("+" if s > 0 else "-" for s in tc.sign_table[:, c]) if tc.sign_table.size else ""
        print(f"  cone {c}: generators {list(I)}  root signs {signs}")
    cov = covering_check(tc, seed=cfg.seed)
    overlap = face_to_face_check(tc, seed=cfg.seed)
    const = sign_constancy_check(tc, seed=cfg.seed)
    print(f"covering {cov}  face-to-face overlap {overlap:.2e}  sign constancy {const}")
    ok = (cov["multiply_covered"] == 0 and cov["uncovered_in_chamber"] == 0 and cov["outside_covered"] == 0
          and overlap < 1e-8 and const)
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_jacobian(cfg: RunConfig, args) -> int:
    from .root_system import jacobian_Jprime, polar_data

    d = fixed_point_spaces(class_from_config(cfg.cls))
    pd = polar_data(d, seed=cfg.seed)
    lam = [float(v) for v in args.lam.split(",")]
    try:
        jv = jacobian_Jprime(pd, lam)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAIL
    print(f"J'({', '.join(f'{v:g}' for v in lam)}) = {jv.value:.12g}")
    for cls_, vals, mult, f in jv.factors:
        print(f"  {cls_:6s} root [{', '.join(f'{v:+g}' for v in vals)}]^{mult} -> {f:.12g}")
    return EXIT_PASS


def cmd_verify(cfg: RunConfig, args) -> int:
    d = fixed_point_spaces(class_from_config(cfg.cls))
    rep = check_structure(d)
    if not rep.ok:
        for f in rep.failures:
            print(f"structural failure: {f['relation']} (residual {f['residual']:.3g})", file=sys.stderr)
        return EXIT_FAIL
    try:
        reports = run_targets(cfg, d, args.target)
    except np.linalg.LinAlgError as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as err:
        print(f"precondition error: {err}", file=sys.stderr)
        return EXIT_FAIL
    for r in reports:
        line = f"{r.target:12s} {r.status:12s}"
        if r.status != "skipped":
            line += f" lhs {_fmt(r.lhs)}  rhs {_fmt(r.rhs)}  stderr {r.stderr:.2e}  rel dev {r.rel_dev:.3%}"
        else:
            line += " " + r.notes[0]
        print(line)
    if cfg.out:
        write_outputs(cfg.out, provenance(cfg, d), reports)
    code = exit_code(reports)
    if cfg.sign_control and code == EXIT_FAIL:
        worst = max((r.rel_dev for r in reports if r.status == "fail"), default=math.nan)
        print(f"sign mismatch: the |J| integral deviates by {worst:.1%} from c e^(-Tr A^2)")
    return code


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", choices=["unitary", "orthogonal", "symplectic", "U", "O", "Sp"])
    common.add_argument("--p", type=int)
    common.add_argument("--q", type=int)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="run seed (Monte Carlo streams and sampled A)")
    common.add_argument("--eps-schedule", help="comma-separated decreasing eps values")
    common.add_argument("--extrapolation-order", type=int)
    common.add_argument("--backend", choices=["auto", "mc", "quadrature"])
    common.add_argument("--samples", type=int, help="Monte Carlo sample count")
    common.add_argument("--tol", type=float, help="relative tolerance of the verdicts")
    common.add_argument("--fit-tol", type=float,
                        help="relative disagreement of adjacent extrapolation orders that makes a run inconclusive")
    common.add_argument("--n-a", type=int, help="number of sampled A matrices")
    common.add_argument("--sign-control", action="store_true",
                        help="replace the signed Jacobian by its absolute value (negative control)")
    common.add_argument("--out", help="directory for report.json and trace.csv")

    parser = argparse.ArgumentParser(prog="hsverify", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("dims", parents=[common], help="dimensions and structure residuals")
    sub.add_parser("roots", parents=[common], help="root systems and multiplicities")
    sub.add_parser("cones", parents=[common], help="Weyl chamber triangulation")
    pj = sub.add_parser("jacobian", parents=[common], help="polar Jacobian J'(lambda)")
    pj.add_argument("--lam", required=True, help="comma-separated coordinates of lambda in h")
    pv = sub.add_parser("verify", parents=[common], help="run integral identities")
    pv.add_argument("target", choices=TARGETS)
    return parser


def config_from_args(args) -> RunConfig:
    if args.config:
        with open(args.config) as fh:
            raw = json.load(fh)
        cfg = RunConfig.from_dict(raw)
    else:
        if args.preset is None or args.p is None or args.q is None:
            raise ValueError("give --preset, --p and --q, or --config")
        cfg = RunConfig({"preset": args.preset, "p": args.p, "q": args.q})
    if args.preset is not None and args.config:
        cfg.cls = {"preset": args.preset, "p": args.p, "q": args.q}
    if args.seed is not None:
        cfg.seed = args.seed
    if args.eps_schedule:
        cfg.eps_values = tuple(float(v) for v in args.eps_schedule.split(","))
    if args.extrapolation_order is not None:
        cfg.eps_order = args.extrapolation_order
    if args.backend:
        cfg.backend = args.backend
    if args.samples:
        cfg.samples = args.samples
    if args.tol is not None:
        cfg.tol_rel = args.tol
    if args.fit_tol is not None:
        cfg.fit_tol_rel = args.fit_tol
    if args.n_a:
        if cfg.A["mode"] != "sampled":
            raise ValueError("--n-a applies to sampled A only")
        cfg.A["count"] = args.n_a
    if args.sign_control:
        cfg.sign_control = True
    if args.out:
        cfg.out = args.out
    return RunConfig.from_dict(cfg.to_dict())  # re-validate after overrides


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        handler = {"dims": cmd_dims, "roots": cmd_roots, "cones": cmd_cones, "jacobian": cmd_jacobian,
                   "verify": cmd_verify}[args.command]
        return handler(cfg, args)
    except StructureError as err:
        print(f"structural error: {err}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
