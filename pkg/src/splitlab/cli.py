"""Command-line harness: one subcommand per analysis, flat-file outputs.

Exit codes: 0 success, 2 configuration error, 3 solver failure or refusal,
4 budget exhausted.
"""
from __future__ import annotations

import argparse
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .diffusion import run_transition_chain, scaling_study
from .errors import BudgetError, ConfigError, NonConvergenceError, RefusalError, ResolutionError
from .frequencies import QMode
from .melnikov import (HomoclinicGrid, compute_grid, first_order_grid, fourier_of_grid,
                       melnikov_coefficient)
from .splitting import (SplittingWindow, check_3ts_window, check_splitting_condition,
                        diffusion_time_bound, fast_mode_profiles, find_minimum,
                        suggest_window_from_minimum, three_timescale_analysis)
from .torus import solve_invariant_torus, trivial_torus

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_BUDGET = 0, 2, 3, 4


class Context:
    def __init__(self, cfg: ExperimentConfig, out: Path, workers: int, seed: int | None,
                 budget: float | None):
        self.cfg = cfg
        self.out = out
        self.workers = max(1, workers)
        self.seed = seed if seed is not None else int(cfg.number("experiment", "seed", 0))
        self.deadline = None if budget is None else time.monotonic() + budget
        self.digest = cfg.digest(self.seed)
        self.written: list[Path] = []

    def header(self, prefix: str = "# ") -> str:
        return f"{prefix}splitlab {__version__}\n{prefix}config_hash={self.digest}\n"

    def write(self, name: str, body: str, comment: str = "# ") -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        path.write_text(self.header(comment) + body)
        self.written.append(path)
        return path

    def expired(self) -> bool:
        return self.deadline is not None and time.monotonic() > self.deadline


def _kv(items: dict) -> str:
    def fmt(v):
        if isinstance(v, bool):
            return str(v).lower()
        if isinstance(v, float):
            return f"{v:.17e}"
        return str(v)
    return "".join(f"{k}={fmt(v)}\n" for k, v in items.items())


def _mu_tag(i: int, mu: float) -> str:
    return f"mu{i}"


# subcommands ------------------------------------------------------------------

def cmd_melnikov(ctx: Context) -> int:
    cfg = ctx.cfg
    f = cfg.perturbation()
    omega = cfg.omega()
    if f.n != omega.n:
        raise ConfigError("perturbation dimension differs from the number of rotators")
    shape = cfg.shape("shape", [32] * omega.n)
    grid = compute_grid("gamma", 0.0, f, omega, shape)
    ctx.write("gamma_grid.txt", grid.to_text())
    if f.q_mode is QMode.GENERAL:
        mgrid = compute_grid("M", 0.0, f, omega, shape, cfg.solver_options(), workers=ctx.workers)
        ctx.write("M_grid.txt", mgrid.to_text())
        body = "# M is computed by quadrature; no closed-form coefficient table\n"
    else:
        lines = ["k,k_dot_omega,f_k_re,f_k_im,gamma_k_re,gamma_k_im"]
        for k in sorted(f.coefficients):
            c = f.coefficients[k]
            kw = float(np.dot(k, omega.array))
            g = melnikov_coefficient(k, omega, c)
            lines.append(" ".join(map(str, k)) + f",{kw:.17e},{c.real:.17e},{c.imag:.17e},"
                         f"{g.real:.17e},{g.imag:.17e}")
        body = "\n".join(lines) + "\n"
    ctx.write("gamma_coefficients.csv", body)
    return EXIT_OK


def cmd_homoclinic(ctx: Context) -> int:
    cfg = ctx.cfg
    f = cfg.perturbation()
    omega = cfg.omega()
    kinds = [k.strip() for k in cfg.get("experiment", "kinds", "glued").split(",") if k.strip()]
    bad = [k for k in kinds if k not in ("glued", "reduced", "general")]
    if bad:
        raise ConfigError(f"unknown grid kinds: {', '.join(bad)}")
    shape = cfg.shape("shape", [8] * omega.n)
    if len(shape) != omega.n:
        raise ConfigError("[experiment] shape needs one size per rotator")
    opts = cfg.solver_options()
    gamma = fourier_of_grid(first_order_grid(f, omega, shape))
    for i, mu in enumerate(cfg.numbers("experiment", "mu")):
        torus = None
        if "general" in kinds:
            torus = solve_invariant_torus(mu, f, omega, cfg.integer("solver", "K_modes", 8),
                                          cfg.torus_options()) if mu else trivial_torus(omega)
        for kind in kinds:
            if ctx.expired():
                raise BudgetError("wall-clock budget exhausted")
            grid = compute_grid(kind, mu, f, omega, shape, opts, torus=torus, workers=ctx.workers)
            tag = f"{kind}_{_mu_tag(i, mu)}"
            ctx.write(f"homoclinic_{tag}.txt", grid.to_text({"mu": repr(mu)}))
            rep = fourier_of_grid(grid)
            lines = [f"# aliasing_bound={rep.aliasing_bound:.17e}",
                     "k,G_k_re,G_k_im,mu_first_order_re,mu_first_order_im,diff_abs"]
            for k in sorted(rep.coefficients):
                if not any(k):
                    continue
                g = rep.coefficients[k]
                p = mu * gamma.coefficients.get(k, 0.0)
                lines.append(" ".join(map(str, k)) + f",{g.real:.17e},{g.imag:.17e},"
                             f"{p.real:.17e},{p.imag:.17e},{abs(g - p):.17e}")
            ctx.write(f"fourier_{tag}.csv", "\n".join(lines) + "\n")
    return EXIT_OK


def _splitting_grid(ctx: Context) -> HomoclinicGrid:
    cfg = ctx.cfg
    source = cfg.get("experiment", "source", "first_order")
    if source == "file":
        path = cfg.get("experiment", "grid_file")
        if path is None:
            raise ConfigError("[experiment] grid_file required for source=file")
        p = Path(path)
        if not p.is_absolute() and cfg.path is not None:
            p = cfg.path.parent / p
        if not p.is_file():
            raise ConfigError(f"grid file not found: {p}")
        return HomoclinicGrid.from_text(p.read_text())
    if source == "radial":
        n = cfg.integer("experiment", "n", 2)
        N = cfg.integer("experiment", "size", 512)
        A0 = cfg.numbers("experiment", "center", [math.pi] * n)
        ax = 2 * math.pi * np.arange(N) / N
        mesh = np.meshgrid(*([ax] * n), indexing="ij")
        # squared sup-distance, so the level sets are the cubes used by the checker
        r = np.max([np.abs((m - a + math.pi) % (2 * math.pi) - math.pi) for m, a in zip(mesh, A0)], axis=0)
        return HomoclinicGrid(r**2, "synthetic", 0.0)
    if source == "first_order":
        f = cfg.perturbation()
        omega = cfg.omega()
        mu = cfg.number("experiment", "mu", 1.0)
        g = first_order_grid(f, omega, cfg.shape("shape", [512] * omega.n))
        return HomoclinicGrid(8.0 + mu * g.samples, "first_order", mu)
    raise ConfigError(f"unknown [experiment] source {source!r}")


def _window_from_config(cfg: ExperimentConfig, grid: HomoclinicGrid):
    if cfg.get("experiment", "window", "auto") == "auto":
        return suggest_window_from_minimum(grid)
    try:
        return SplittingWindow(tuple(cfg.numbers("experiment", "A0")), cfg.number("experiment", "rho"),
                               cfg.number("experiment", "alpha"), cfg.number("experiment", "delta"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_splitting(ctx: Context) -> int:
    cfg = ctx.cfg
    grid = _splitting_grid(ctx)
    mn = find_minimum(grid)
    found = _window_from_config(cfg, grid)
    if isinstance(found, SplittingWindow):
        report = check_splitting_condition(grid, found)
        body = report.to_text()
    elif found.feasible:
        report = found.report
        body = report.to_text()
    else:
        report = None
        body = _kv({"feasible": False, "reason": found.reason})
    body += _kv({"minimum": ",".join(f"{a:.17e}" for a in mn.A0), "minimum_value": mn.value,
                 "nondegenerate": mn.nondegenerate,
                 "hessian_eigenvalues": ",".join(f"{e:.17e}" for e in mn.eigenvalues)})
    if report is not None and "dI" in cfg.parser["experiment"]:
        b = diffusion_time_bound(cfg.number("experiment", "dI"), report.window,
                                 cfg.number("system", "tau", 1.0), cfg.number("experiment", "eta"),
                                 cfg.number("experiment", "C", 1.0))
        body += _kv({"diffusion_time_bound": b.value, "transitions": b.transitions,
                     "transition_time": b.transition_time, "shadow_term": b.shadow_term})
    ctx.write("splitting_report.txt", body)
    return EXIT_OK


def cmd_threescales(ctx: Context) -> int:
    cfg = ctx.cfg
    f = cfg.perturbation()
    eps_list = cfg.numbers("experiment", "eps_list")
    a = cfg.number("system", "a", 1.0)
    power = cfg.number("experiment", "mu_power", 2.0)
    scale = cfg.number("experiment", "mu_scale", 1.0)
    shape = cfg.shape("shape", [6, 8])
    rep = three_timescale_analysis(eps_list, a, lambda e: scale * e**power, f, shape,
                                   cfg.solver_options(), ctx.workers, keep_grids=True)
    ctx.write("threescales.csv", rep.to_csv())
    summary = {"slope_G": rep.slope_G, "slope_gamma": rep.slope_gamma,
               "slope_G_raw": rep.slope_G_raw, "target": rep.target,
               "relative_error": rep.relative_error()}
    eps_w = cfg.number("experiment", "window_eps", eps_list[0])
    if eps_w in rep.grids:
        omega = cfg.omega(eps_w)
        A2 = np.linspace(0, 2 * math.pi, 512, endpoint=False)
        p0 = -fast_mode_profiles(f, omega, A2[:, None], 0).real
        g1 = fast_mode_profiles(f, omega, A2[:, None], 1)
        w = check_3ts_window(eps_w, scale * eps_w**power, A2, p0, g1, cfg.number("experiment", "c", 1.0),
                             cfg.number("experiment", "d", 1.0), rep.grids[eps_w],
                             cfg.number("experiment", "Cbar", 1.5), cfg.number("experiment", "rho", 0.4))
        summary.update({"window_eps": eps_w, "window_feasible": w.feasible,
                        "window_violated": w.violated or "none"})
        if w.window is not None:
            summary.update({"window_alpha": w.window.alpha, "window_delta": w.window.delta,
                            "window_A0": ",".join(f"{x:.17e}" for x in w.window.A0)})
    ctx.write("threescales_summary.txt", _kv(summary))
    return EXIT_OK


def _diffuse_job(args):
    I0, It, mu, f, omega, window, eta, sim_budget, dt, seed = args
    return run_transition_chain(I0, It, mu, f, omega, window, eta, sim_budget, dt=dt, seed=seed)


def cmd_diffuse(ctx: Context) -> int:
    cfg = ctx.cfg
    f = cfg.perturbation()
    omega = cfg.omega()
    mus = cfg.numbers("experiment", "mu")
    I0 = np.array(cfg.numbers("experiment", "I0", [0.0] * omega.n))
    if "I_target" in cfg.parser["experiment"]:
        It = np.array(cfg.numbers("experiment", "I_target"))
    else:
        d = np.array([-omega.array[1], omega.array[0]] + [0.0] * (omega.n - 2))
        It = I0 + cfg.number("experiment", "dI", 0.5) * d / np.linalg.norm(d)
    eta = cfg.number("experiment", "eta", 0.1)
    dt = cfg.number("solver", "dt", 1e-3)
    sim_budget = cfg.number("experiment", "sim_budget", 1e6)
    shape = cfg.shape("shape", [1024] * omega.n)
    tau = cfg.number("system", "tau", 2.0)
    base = first_order_grid(f, omega, shape)
    jobs, windows = [], []
    for mu in mus:
        window = None
        if mu > 0:
            found = suggest_window_from_minimum(HomoclinicGrid(8.0 + mu * base.samples, "first_order", mu))
            if not found.feasible:
                raise RefusalError(f"no splitting window at mu={mu}: {found.reason}")
            window = found.window
        else:
            window = SplittingWindow((0.0,) * omega.n, 1.0, 0.1, 1.0)
        windows.append(window)
        jobs.append((I0, It, mu, f, omega, window, eta, sim_budget, dt, ctx.seed))
    runs = []
    exhausted = False
    if ctx.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=ctx.workers) as ex:
            futures = [ex.submit(_diffuse_job, j) for j in jobs]
            for fu in futures:
                timeout = None if ctx.deadline is None else max(ctx.deadline - time.monotonic(), 0.0)
                try:
                    runs.append(fu.result(timeout=timeout))
                except TimeoutError:
                    exhausted = True
                    break
            if exhausted:
                for fu in futures:
                    fu.cancel()
    else:
        for j in jobs:
            if ctx.expired():
                exhausted = True
                break
            runs.append(_diffuse_job(j))
    for i, (run, window) in enumerate(zip(runs, windows)):
        ctx.write(f"diffuse_{_mu_tag(i, run.mu)}.csv", run.to_csv())
        summ = run.summary()
        summ.update({"rho": window.rho, "alpha": window.alpha, "delta": window.delta})
        ctx.write(f"diffuse_{_mu_tag(i, run.mu)}_summary.txt", _kv(summ))
    done = [(r, w) for r, w in zip(runs, windows) if r.mu > 0]
    if done:
        dI = float(np.linalg.norm(It - I0))
        bounds = [diffusion_time_bound(dI, w, tau, eta).value for _, w in done]
        rep = scaling_study([r.mu for r, _ in done], [r.T_d for r, _ in done], bounds)
        text = rep.to_csv()
        if rep.excluded:
            text += "# excluded (incomplete): " + ",".join(f"{m:.17e}" for m in rep.excluded) + "\n"
        text += f"# spread={rep.spread:.17e}\n# C_fit={rep.C_fit:.17e}\n"
        ctx.write("scaling.csv", text)
    if exhausted:
        raise BudgetError("wall-clock budget exhausted before all runs finished")
    return EXIT_OK


def cmd_torus(ctx: Context) -> int:
    cfg = ctx.cfg
    f = cfg.perturbation()
    omega = cfg.omega()
    K = cfg.integer("solver", "K_modes", 8)
    lines = ["mu,residual,energy,energy_spread,sup_Q,sup_P,sup_a,iterations"]
    for i, mu in enumerate(cfg.numbers("experiment", "mu")):
        if ctx.expired():
            raise BudgetError("wall-clock budget exhausted")
        tor = solve_invariant_torus(mu, f, omega, K, cfg.torus_options())
        ctx.write(f"torus_{_mu_tag(i, mu)}.txt", tor.to_table())
        s = tor.sup_norms()
        lines.append(f"{mu:.17e},{tor.invariance_residual:.17e},{tor.energy:.17e},"
                     f"{tor.energy_spread:.17e},{s['Q']:.17e},{s['P']:.17e},{s['a']:.17e},{tor.iterations}")
    ctx.write("torus_summary.csv", "\n".join(lines) + "\n")
    return EXIT_OK


COMMANDS = {"melnikov": cmd_melnikov, "homoclinic": cmd_homoclinic, "splitting": cmd_splitting,
            "threescales": cmd_threescales, "diffuse": cmd_diffuse, "torus": cmd_torus}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="splitlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"splitlab {__version__}")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, type=Path)
    ap.add_argument("--out", type=Path, default=None)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--budget", type=float, default=None, help="wall-clock seconds")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config)
        out = args.out or Path(cfg.get("output", "dir", "out"))
        ctx = Context(cfg, out, args.workers, args.seed, args.budget)
        code = COMMANDS[args.command](ctx)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetError as exc:
        print(f"budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (NonConvergenceError, RefusalError, ResolutionError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    for p in ctx.written:
        print(p)
    return code


if __name__ == "__main__":
    sys.exit(main())
