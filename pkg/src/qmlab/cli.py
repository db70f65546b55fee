"""Command-line harness.

Exit codes: 0 success, 1 a requested check failed, 2 bad configuration.
Flags override values read from --config (.json or .toml).
"""

from __future__ import annotations

import csv
import json
import math
import os
import sys
from pathlib import Path

import click
import numpy as np

from .errors import QMLabError

EXIT_CHECK = 1
EXIT_CONFIG = 2


class ConfigError(click.ClickException):
    exit_code = EXIT_CONFIG

    def format_message(self) -> str:
        return f"config error: {self.message}"


def fmt(v: float) -> str:
    return f"{v:.9g}"


def _default_seed() -> int:
    raw = os.environ.get("QMLAB_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"QMLAB_SEED must be an integer, got {raw!r}") from None


def _read_config(path: str | None) -> dict:
    if path is None:
        return {}
    from .eprb import load_config

    try:
        data = load_config(path)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    except (OSError, QMLabError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except ValueError as exc:  # TOML decode errors carry line information in the message
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _out_dir(out: str | None) -> Path | None:
    if out is None:
        return None
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write(out: Path | None, name: str, text: str) -> None:
    if out is not None:
        (out / name).write_text(text)


def _parse_floats(text: str, what: str) -> list[float]:
    try:
        return [float(eval_angle(v)) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"{what}: {exc}") from None


def eval_angle(token: str) -> float:
    """Parse a number, allowing 'pi' multiples such as 3pi/4 or pi/2."""
    t = token.strip().replace(" ", "")
    if "pi" not in t:
        return float(t)
    num, _, den = t.partition("/")
    coef = num.replace("*", "").replace("pi", "") or "1"
    coef = "-1" if coef == "-" else coef
    value = float(coef) * math.pi
    return value / float(den) if den else value


def _spinor(text: str, what: str):
    parts = _parse_floats(text, what)
    if len(parts) == 2:
        return parts
    if len(parts) == 4:
        return {"re": parts[:2], "im": parts[2:]}
    raise ConfigError(f"{what}: expected 're0,re1' or 're0,re1,im0,im1'")


def scenario_options(f):
    opts = [
        click.option("--config", "config_path", type=click.Path(), help="Scenario file (.json or .toml)."),
        click.option("--state", type=click.Choice(["singlet", "product"]), help="Source state."),
        click.option("--angles", help="'tsirelson' or four x-z plane angles a,a',b,b' in radians."),
        click.option("--chi-a", help="Alice spinor for product states: re0,re1[,im0,im1]."),
        click.option("--chi-b", help="Bob spinor for product states: re0,re1[,im0,im1]."),
        click.option("--d", "d", type=int, help="Spatial truncation dimension for both wings."),
        click.option("--n", "n", type=int, help="Expansion size for the counting backend."),
        click.option("--backend", type=click.Choice(["born", "counting"]), help="Probability backend."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def build_scenario(config_path=None, state=None, angles=None, chi_a=None, chi_b=None, d=None, n=None,
                   backend=None, base: dict | None = None):
    """Merge file values with flags, then validate."""
    from .eprb import Scenario, direction

    data = dict(base if base is not None else _read_config(config_path))
    if angles is None and not {"a", "a_prime", "b", "b_prime"} <= set(data):
        angles = "tsirelson"
    if angles is not None:
        if angles == "tsirelson":
            vals = [0.0, math.pi / 2, math.pi / 4, 3 * math.pi / 4]
        else:
            vals = _parse_floats(angles, "--angles")
            if len(vals) != 4:
                raise ConfigError("--angles: expected four values a,a',b,b'")
        for key, th in zip(("a", "a_prime", "b", "b_prime"), vals):
            data[key] = direction(th).tolist()
    if state == "singlet":
        data["state"] = "singlet"
    elif state == "product" or chi_a is not None or chi_b is not None:
        prod = dict(data.get("state", {}).get("product", {})) if isinstance(data.get("state"), dict) else {}
        if chi_a is not None:
            prod["chi_a"] = _spinor(chi_a, "--chi-a")
        if chi_b is not None:
            prod["chi_b"] = _spinor(chi_b, "--chi-b")
        if "chi_a" not in prod or "chi_b" not in prod:
            raise ConfigError("product state needs --chi-a and --chi-b (or a config file)")
        data["state"] = {"product": prod}
    if d is not None:
        data["d_a"] = data["d_b"] = d
    if n is not None:
        data["n"] = n
    if backend is not None:
        data["backend"] = backend
    try:
        return Scenario.from_dict(data)
    except (QMLabError, KeyError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


@click.group()
def main():
    """Microstate counting, EPRB correlations and locality-condition checks."""


# -- expand ------------------------------------------------------------------

@main.command()
@click.option("--dim", type=int, required=True, help="Ambient dimension.")
@click.option("--n", "n", type=int, required=True, help="Number of microstates.")
@click.option("--seed", type=int, default=None, help="Seed (default: QMLAB_SEED or 0).")
@click.option("--cells", type=int, default=0, show_default=True,
              help="Adapt to a random resolution with this many cells; 0 builds a generic expansion.")
@click.option("--verify", is_flag=True, help="Exit 1 unless all invariant residuals are within tolerance.")
@click.option("--out", type=click.Path(file_okay=False), help="Directory for expansion.json.")
def expand(dim, n, seed, cells, verify, out):
    """Expand a seeded random state into n orthogonal equal-norm microstates."""
    from .expansion import counting_distribution, expand_adapted, expand_generic
    from .hilbert import Projector, Resolution, random_state

    seed = _default_seed() if seed is None else seed
    rng = np.random.default_rng(seed)
    psi = random_state((dim,), rng)
    try:
        if cells:
            q, _ = np.linalg.qr(rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim)))
            cuts = np.linspace(0, dim, cells + 1).astype(int)
            res = Resolution(tuple(Projector.from_basis((dim,), q[:, a:b].T) for a, b in zip(cuts[:-1], cuts[1:])))
            e = expand_adapted(psi, res, n)
        else:
            e = expand_generic(psi, n, seed)
    except QMLabError as exc:
        raise ConfigError(str(exc)) from None
    res_vals = e.residuals()
    for name, v in res_vals.items():
        click.echo(f"{name}_residual {fmt(v)}")
    path = _out_dir(out)
    if cells:
        dist = counting_distribution(e, res)
        click.echo("counts " + " ".join(str(m) for m in dist.counts) + f" cats {dist.cats}")
        _write(path, "expansion_summary.csv", _summary_csv(dist))
    _write(path, "expansion.json", json.dumps(e.to_json()))
    ok = max(res_vals.values()) <= e.tolerance
    click.echo(f"valid {str(ok).lower()}")
    if verify and not ok:
        sys.exit(EXIT_CHECK)


def _summary_csv(dist) -> str:
    """One row per cell: n, cell, m_i, cats, lower_i, upper_i."""
    lines = ["n,cell,m,cats,lower,upper"]
    for i, (m, iv) in enumerate(zip(dist.counts, dist.intervals)):
        lines.append(f"{dist.n},{i},{m},{dist.cats},{fmt(iv.lower)},{fmt(iv.upper)}")
    return "\n".join(lines) + "\n"


# -- born --------------------------------------------------------------------

@main.command()
@scenario_options
@click.option("--pair", type=click.Choice(["ab", "ab'", "a'b", "a'b'"]), default="ab", show_default=True)
def born(pair, **kw):
    """Born probabilities of the four joint outcomes at one setting pair."""
    from .eprb import OUTCOMES, joint_distribution

    kw["backend"] = "born"
    sc = build_scenario(**kw)
    dirs = sc.directions()
    x, y = (pair[:2], pair[2:]) if pair.startswith("a'") else (pair[:1], pair[1:])
    dist = joint_distribution(sc.psi(), dirs[x], dirs[y], "born", setting=(x, y))
    for s, t in OUTCOMES:
        click.echo(f"p({s:+d},{t:+d}) {fmt(dist.p(s, t))}")


# -- eprb --------------------------------------------------------------------

@main.group()
def eprb():
    """Joint distributions and CHSH for a scenario."""


def _distributions(sc):
    from .eprb import scenario_distributions

    try:
        return scenario_distributions(sc.psi(), sc)
    except QMLabError as exc:
        raise ConfigError(str(exc)) from None


@eprb.command("dist")
@scenario_options
@click.option("--out", type=click.Path(file_okay=False), help="Directory for distributions.csv/json.")
def eprb_dist(out, **kw):
    """Print p(s,t) for all four setting pairs."""
    from .eprb import OUTCOMES

    sc = build_scenario(**kw)
    dists = _distributions(sc)
    rows = [["setting_pair", "s", "t", "p", "backend", "cat_mass"]]
    for (x, y), d in dists.items():
        for s, t in OUTCOMES:
            rows.append([x + y, s, t, fmt(d.p(s, t)), d.backend, fmt(d.cat_mass)])
    for r in rows:
        click.echo("\t".join(str(c) for c in r))
    path = _out_dir(out)
    if path is not None:
        with open(path / "distributions.csv", "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
        _write(path, "distributions.json", json.dumps([d.to_json() for d in dists.values()], indent=2))


@eprb.command("chsh")
@scenario_options
@click.option("--out", type=click.Path(file_okay=False), help="Directory for chsh.json.")
def eprb_chsh(out, **kw):
    """S = E(a,b) - E(a,b') + E(a',b) + E(a',b')."""
    from .eprb import PAIRS, chsh_from_distributions, correlation

    sc = build_scenario(**kw)
    dists = _distributions(sc)
    s = chsh_from_distributions(dists)
    for pair in PAIRS:
        click.echo(f"E({''.join(pair)}) {fmt(correlation(dists[pair]))}")
    click.echo(f"S {fmt(s)}")
    click.echo(f"|S| {fmt(abs(s))}")
    _write(_out_dir(out), "chsh.json", json.dumps({
        "scenario": sc.to_dict(), "S": s, "abs_S": abs(s),
        "E": {"".join(p): correlation(dists[p]) for p in PAIRS},
    }, indent=2))


# -- conditions --------------------------------------------------------------

@main.group()
def conditions():
    """Locality-condition reports."""


@conditions.command("report")
@scenario_options
@click.option("--all-models", is_flag=True, help="Report every built-in model.")
@click.option("--model", "models", multiple=True,
              type=click.Choice(["born-qm", "lambda-many-counting", "lambda-one", "deterministic-local"]))
@click.option("--seed", type=int, default=None, help="Seed for the sampled local model.")
@click.option("--out", type=click.Path(file_okay=False), help="Directory for report.md and conditions.json.")
def conditions_report(all_models, models, seed, out, **kw):
    """Table of condition verdicts and flags per model."""
    from .conditions import MODELS, condition_report, report_json, report_table

    sc = build_scenario(**kw)
    seed = _default_seed() if seed is None else seed
    chosen = MODELS if all_models or not models else tuple(m for m in MODELS if m in models)
    try:
        reports = [condition_report(m, sc, seed=seed) for m in chosen]
    except QMLabError as exc:
        raise ConfigError(str(exc)) from None
    table = report_table(reports)
    click.echo(table, nl=False)
    path = _out_dir(out)
    _write(path, "report.md", "# Condition report\n\n" + table)
    _write(path, "conditions.json", report_json(reports))
    if not all(r.consistent for r in reports):
        sys.exit(EXIT_CHECK)


# -- lambda-one --------------------------------------------------------------

@main.group("lambda-one")
def lambda_one():
    """One-world Monte Carlo."""


@lambda_one.command("run")
@scenario_options
@click.option("--run-config", type=click.Path(), help="Run file {scenario, n, trials, seed, schedule}.")
@click.option("--trials", type=int, help="Trials per pair (schedule 'each') or in total.")
@click.option("--seed", type=int, help="Master seed (default: QMLAB_SEED or 0).")
@click.option("--schedule", type=click.Choice(["each", "round-robin", "ab", "ab'", "a'b", "a'b'"]))
@click.option("--workers", type=int, help="Worker threads; results do not depend on this.")
@click.option("--out", type=click.Path(file_okay=False), help="Directory for lambda_one.json/csv.")
def lambda_one_run(run_config, trials, seed, schedule, workers, out, **kw):
    """Sample microstates uniformly and tally outcome frequencies."""
    from .lambda_one import run_experiment

    run = _read_config(run_config)
    unknown = set(run) - {"scenario", "n", "trials", "seed", "schedule", "workers"}
    if unknown:
        raise ConfigError(f"unknown run field(s): {sorted(unknown)}")
    if kw["config_path"] is None and "scenario" in run:
        if not isinstance(run["scenario"], dict):
            raise ConfigError("field 'scenario': expected a mapping")
        sc = build_scenario(base=run["scenario"], **{k: v for k, v in kw.items() if k != "config_path"})
    else:
        sc = build_scenario(**kw)

    def pick(flag, key, default):
        value = flag if flag is not None else run.get(key, default)
        if key != "schedule" and (not isinstance(value, int) or isinstance(value, bool)):
            raise ConfigError(f"field {key!r}: expected an integer")
        return value

    n = kw["n"] if kw["n"] is not None else run.get("n", sc.n)
    try:
        result = run_experiment(
            sc.psi(), sc, n, pick(trials, "trials", 100_000), pick(seed, "seed", _default_seed()),
            pick(schedule, "schedule", "each"), pick(workers, "workers", 1),
        )
    except QMLabError as exc:
        raise ConfigError(str(exc)) from None
    click.echo(result.to_csv(), nl=False)
    s, sigma = result.chsh()
    if not math.isnan(s):
        click.echo(f"S_hat {fmt(s)} +- {fmt(sigma)}")
    click.echo("cats " + " ".join(str(int(c)) for c in result.cats))
    path = _out_dir(out)
    _write(path, "lambda_one.json", json.dumps(result.to_json(), indent=2))
    _write(path, "lambda_one.csv", result.to_csv())


# -- sweep -------------------------------------------------------------------

@main.group()
def sweep():
    """Parameter sweeps."""


def sweep_rows(thetas) -> list[list[str]]:
    from .acceptance import quadratic_ratio

    rows = [["theta", "E", "one_plus_E", "quadratic_ratio"]]
    for th in thetas:
        e, _ = quadratic_ratio(th)
        rows.append([fmt(th), fmt(e), fmt(1 + e), fmt((1 - math.cos(th)) / th**2)])
    return rows


@sweep.command("theta")
@click.option("--grid", default="0.1,0.05,0.025", show_default=True,
              help="Comma-separated angles in (0, pi]; 'pi' multiples allowed.")
@click.option("--out", type=click.Path(file_okay=False), help="Directory for sweep_theta.csv.")
def sweep_theta(grid, out):
    """Singlet correlation E(theta) and the small-angle ratio (1 - cos theta)/theta^2."""
    thetas = _parse_floats(grid, "--grid")
    if not thetas:
        raise ConfigError("--grid: empty grid")
    bad = [t for t in thetas if not 0 < t <= math.pi + 1e-12]
    if bad:
        raise ConfigError(f"--grid: angles must lie in (0, pi], got {bad}")
    rows = sweep_rows(thetas)
    text = "\n".join(",".join(r) for r in rows) + "\n"
    click.echo(text, nl=False)
    _write(_out_dir(out), "sweep_theta.csv", text)


# -- verify ------------------------------------------------------------------

@main.command()
@click.option("--only", help="Comma-separated criterion numbers (default: all eleven).")
@click.option("--out", type=click.Path(file_okay=False), help="Directory for report.md and verify.json.")
def verify(only, out):
    """Run the acceptance suite; exit 1 if any criterion fails."""
    from .acceptance import CRITERIA, run_all

    picked = None
    if only:
        try:
            picked = tuple(int(v) for v in only.split(","))
        except ValueError:
            raise ConfigError(f"--only: expected integers, got {only!r}") from None
        if any(not 1 <= v <= len(CRITERIA) for v in picked):
            raise ConfigError(f"--only: criteria are numbered 1..{len(CRITERIA)}")
    results = run_all(picked)
    for r in results:
        click.echo(r.line())
    passed = sum(r.passed for r in results)
    click.echo(f"{passed}/{len(results)} criteria passed")
    path = _out_dir(out)
    _write(path, "report.md", "# Acceptance\n\n" + "\n".join(f"- {r.line()}" for r in results) + "\n")
    _write(path, "verify.json", json.dumps([r.to_json() for r in results], indent=2, default=str))
    if passed != len(results):
        sys.exit(EXIT_CHECK)


if __name__ == "__main__":
    main()
