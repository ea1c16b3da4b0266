"""Batch command-line front end: shockbif <command> --config run.ini."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .config import TEMPLATE, RunConfig, build_model, load_config, reflection_matrix
from .discretization import Grid1D, measure_inverse_norm_decay
from .errors import BifurcationError, ConfigError, PipelineError
from .model import OperatorFamily

COMMANDS = ("init", "profile", "spectrum", "crossing", "reduce", "branch", "verify",
            "synthesize")
EXIT_CHECKS_FAILED = 1


class Pipeline:
    """Stage orchestration for one configuration; later stages reuse the
    cached results of earlier ones."""

    def __init__(self, cfg: RunConfig, grid: Grid1D = None, K_max: int = None):
        self.cfg = cfg
        self.grid = grid or Grid1D(cfg.L, cfg.N)
        self.K_max = K_max or cfg.K_max
        self.model = build_model(cfg)
        self.family = OperatorFamily(self.model, self.grid, cfg.tolerances["tol_rh"])
        self._crossing = None
        self._reduced = None
        self._realness = None

    @property
    def tol(self):
        return self.cfg.tolerances

    def refined(self) -> "Pipeline":
        """Same run with h halved and K_max doubled."""
        return Pipeline(self.cfg, self.grid.refined(), 2 * self.K_max)

    def crossing(self):
        from .spectral import track_crossing

        if self._crossing is None:
            c = self.cfg
            self._crossing = track_crossing(
                self.family, c.require_k_star(), c.eps_grid, d=c.d_track, guess=c.guess,
                radius=c.radius, Q=c.Q, tol_eig=self.tol["tol_eig"],
                tol_transversal=self.tol["tol_transversal"], threads=c.threads)
        return self._crossing

    def reduced(self):
        from .reduction import ReducedEquation, certify_realness

        if self._reduced is None:
            c = self.cfg
            rep = self.crossing()
            mode = "O2" if c.symmetry_mode == "auto" else c.symmetry_mode
            d_bar = rep.d_bar if c.d_override is None else c.d_override
            if (c.d_override is None and mode == "O2"
                    and abs(rep.lambda_crit.imag) <= self.tol["tol_eig"]):
                # real crossing: the tracking frame is already steady
                d_bar = c.d_track
            red = ReducedEquation(self.family, rep.k_star, d_bar, self.K_max, c.radius, c.Q,
                                  self.tol["tol_fix"], mode, c.threads,
                                  reflection=reflection_matrix(c, self.model.n))
            if c.symmetry_mode == "auto":
                xs = [x for x in c.x_samples if x != 0][:2] or [0.01]
                self._realness = certify_realness(red, [rep.eps_crit], xs,
                                                  self.tol["tol_eig"], self.tol["tol_red"])
            self._reduced = red
        return self._reduced

    def branch(self, s_grid=None):
        from .bifurcation import branch_O2, branch_SO2, hopf_reinterpret

        rep = self.crossing()
        red = self.reduced()
        s_grid = self.cfg.s_grid if s_grid is None else s_grid
        solver = branch_O2 if red.symmetry_mode == "O2" else branch_SO2
        br = solver(red, s_grid, rep.eps_crit, rep.lambda_prime,
                    tol_transversal=self.tol["tol_transversal"])
        if abs(red.d_bar) > 1e-12:
            try:
                br = hopf_reinterpret(br)
            except BifurcationError as exc:
                br.warnings.append(str(exc))
        return br

    def certify(self, branch):
        from .bifurcation import synthesize_and_certify

        red = self.reduced()
        out = []
        for p in branch.samples:
            if p.s == 0.0:
                p.residual = 0.0
                out.append(None)
                continue
            cert = synthesize_and_certify(red, p)
            p.residual = cert.residual_l2
            out.append(cert)
        return out


# -- commands -------------------------------------------------------------

def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    return str(o)


def cmd_init(args):
    path = args.config or os.path.join(args.out or ".", "run.ini")
    if os.path.exists(path):
        raise ConfigError(f"{path} exists; remove it first")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(TEMPLATE)
    print(f"wrote {path}")
    return [path]


def cmd_profile(pipe: Pipeline, out):
    prof = pipe.family.profile(pipe.cfg.eps0)
    n = prof.n
    path = os.path.join(out, "profile.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x"] + [f"u{a}" for a in range(n)] + [f"ux{a}" for a in range(n)])
        for i, x in enumerate(prof.grid.x):
            w.writerow([repr(float(x))] + [repr(float(v)) for v in prof.ubar[:, i]]
                       + [repr(float(v)) for v in prof.ubar_x[:, i]])
    lax = dict(prof.lax.to_dict(), speed=prof.c, residual=prof.residual,
               newton_iterations=prof.iterations, decay_rate=prof.alpha)
    _write_json(os.path.join(out, "lax.json"), lax)
    print(f"profile: c = {prof.c:.6g}, residual = {prof.residual:.3e}, Lax passed")
    return [path, os.path.join(out, "lax.json")]


def cmd_spectrum(pipe: Pipeline, out):
    from .spectral import EigenTracker

    c = pipe.cfg
    k = c.require_k_star()
    tracker = EigenTracker(pipe.family, k, c.d_track, c.radius, c.Q, pipe.tol["tol_eig"],
                           c.threads)
    samples, guess = [], c.guess
    for e in c.eps_grid:
        lam = tracker.at(e, [guess]).lam
        conj = EigenTracker(pipe.family, -k, c.d_track, c.radius, c.Q,
                            pipe.tol["tol_eig"]).at(e, [np.conj(lam)]).lam
        samples.append({"eps": float(e), "re": lam.real, "im": lam.imag,
                        "conjugate_defect": abs(conj - np.conj(lam))})
        guess = lam
    _write_json(os.path.join(out, "spectrum.json"), {"k": k, "d": c.d_track, "samples": samples})
    dfam = OperatorFamily(pipe.model, Grid1D(c.decay_L, c.decay_N), pipe.tol["tol_rh"])
    decay = measure_inverse_norm_decay(dfam.coefficients(c.eps0), c.d_track, c.decay_k,
                                       seed=c.seed)
    _write_json(os.path.join(out, "decay.json"), decay.to_dict())
    print(f"spectrum: {len(samples)} samples of lambda_{k}; decay slopes "
          f"{decay.slope_inv:.3f}, {decay.slope_dx:.3f}")
    return [os.path.join(out, "spectrum.json"), os.path.join(out, "decay.json")]


def cmd_crossing(pipe: Pipeline, out):
    rep = pipe.crossing()
    path = os.path.join(out, "crossing.json")
    rep.to_json(path)
    print(f"crossing: eps_crit = {rep.eps_crit:.10g}, lambda' = {rep.lambda_prime:.6g}, "
          f"d_bar = {rep.d_bar:.6g}")
    return [path]


def cmd_reduce(pipe: Pipeline, out):
    from .reduction import write_reduced_csv

    red = pipe.reduced()
    rep = pipe.crossing()
    xs = sorted({-x for x in pipe.cfg.x_samples} | set(pipe.cfg.x_samples))
    rows = red.sample_table(xs, [rep.eps_crit])
    path = os.path.join(out, "reduced.csv")
    write_reduced_csv(rows, path)
    files = [path]
    if pipe._realness is not None:
        _write_json(os.path.join(out, "realness.json"), pipe._realness.to_dict())
        files.append(os.path.join(out, "realness.json"))
        for w in pipe._realness.warnings:
            print(f"warning: {w}", file=sys.stderr)
    print(f"reduce: {len(rows)} samples in {red.symmetry_mode} mode")
    return files


def _manifest(pipe: Pipeline, branch):
    from .bifurcation import config_hash

    c = pipe.cfg
    payload = c.to_dict()
    return {"model": pipe.model.name, "grid": {"L": pipe.grid.L, "N": pipe.grid.N},
            "K_max": pipe.K_max, "contour": {"radius": c.radius, "Q": c.Q},
            "tolerances": c.tolerances, "kind": branch.kind,
            "eps_crit": branch.eps_crit, "d_bar": branch.d_bar,
            "warnings": branch.warnings, "config_hash": config_hash(payload)}


def cmd_branch(pipe: Pipeline, out):
    br = pipe.branch()
    pipe.certify(br)
    path = os.path.join(out, "branch.csv")
    br.to_csv(path)
    _write_json(os.path.join(out, "branch_manifest.json"), _manifest(pipe, br))
    for w in br.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"branch: {len(br.samples)} samples ({br.kind})")
    return [path, os.path.join(out, "branch_manifest.json")]


def cmd_synthesize(pipe: Pipeline, out):
    br = pipe.branch()
    certs = pipe.certify(br)
    fine = pipe.refined()
    fine_br = fine.branch([p.s for p in br.samples])
    fine_certs = fine.certify(fine_br)
    rows, files = [], []
    for i, (p, cc, cf) in enumerate(zip(br.samples, certs, fine_certs)):
        if cc is None:
            continue
        ratio = cc.residual_l2 / cf.residual_l2 if cf.residual_l2 > 0 else np.inf
        state = pipe.reduced().solve(p.x, p.eps, p.d)
        f = os.path.join(out, f"modes_{i:03d}.npz")
        state.stack.save_npz(f)
        files.append(f)
        rows.append({"s": p.s, "eps": p.eps, "d": p.d, "residual": cc.residual_l2,
                     "residual_refined": cf.residual_l2, "ratio": ratio,
                     "norm_h2": cc.norm_h2, "spurious": bool(ratio < 3.0)})
        if ratio < 3.0:
            print(f"warning: residual did not drop under refinement at s={p.s} "
                  f"(ratio {ratio:.2f}); sample flagged as spurious", file=sys.stderr)
    _write_json(os.path.join(out, "certificates.json"), rows)
    print(f"synthesize: {len(rows)} certified samples")
    return files + [os.path.join(out, "certificates.json")]


def cmd_verify(pipe: Pipeline, out):
    from .verification import run_checks

    rows = run_checks(pipe.cfg, pipe.model, pipe.family, pipe.cfg.eps0)
    for r in rows:
        print(r.row())
    _write_json(os.path.join(out, "verify.json"), [r.__dict__ for r in rows])
    failed = [r for r in rows if not r.passed]
    print(f"verify: {len(rows) - len(failed)}/{len(rows)} checks passed")
    return EXIT_CHECKS_FAILED if failed else 0


HANDLERS = {"profile": cmd_profile, "spectrum": cmd_spectrum, "crossing": cmd_crossing,
            "reduce": cmd_reduce, "branch": cmd_branch, "verify": cmd_verify,
            "synthesize": cmd_synthesize}


def build_parser():
    p = argparse.ArgumentParser(prog="shockbif",
                                description="Transverse bifurcation of viscous shocks on a strip")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="INI run configuration (init writes one)")
    p.add_argument("--out", help="output directory (overrides [run] out)")
    p.add_argument("--threads", type=int, help="worker threads (overrides [run] threads)")
    p.add_argument("--seed", type=int, help="random seed (overrides [run] seed)")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "init":
            cmd_init(args)
            return 0
        if not args.config:
            raise ConfigError("--config is required (create one with `shockbif init`)")
        cfg = load_config(args.config)
        if args.threads is not None:
            cfg.threads = args.threads
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out:
            cfg.out = args.out
        from .config import validate

        validate(cfg)
        os.makedirs(cfg.out, exist_ok=True)
        result = HANDLERS[args.command](Pipeline(cfg), cfg.out)
        return result if isinstance(result, int) else 0
    except PipelineError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return exc.exit_code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
