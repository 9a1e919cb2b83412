"""Multi-seed comparison of training on the original, potential-shaped and abstraction-shaped tasks."""

from __future__ import annotations

import csv
import io as _io
import json
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .envs import (
    EpisodicEnvConfig,
    TabularEnv,
    build_env,
    builtin_abstraction,
    encoding_matrix,
    key_potential,
    terminal_mask,
    to_tabular,
)
from .learner import (
    LearningCurve,
    TrainConfig,
    evaluate_returns,
    greedy_actions,
    mc_policy_evaluation,
    potential_shaped,
    reinforce_train,
)
from .mdp import Policy, greedy_policy, suboptimality_gap, value_iteration
from .shaping import ShapingConfig, run_pipeline

METHODS = ("default", "potential_rews", "abstraction_envs", "opt")
CSV_COLUMNS = ["method", "run", "iteration", "mean_episode_return", "mean_discounted_return"]
BOUND_SLACK = 1e-6


@dataclass
class ExperimentConfig:
    env: EpisodicEnvConfig = field(default_factory=EpisodicEnvConfig.gathering)
    methods: tuple = ("default", "abstraction_envs", "opt")
    runs: int = 30
    train: TrainConfig = field(default_factory=TrainConfig)
    shaping: ShapingConfig = field(default_factory=ShapingConfig)
    output_dir: str = "results"
    seed: int = 0
    pretrain_iterations: int | None = None
    mc_samples: int = 2000
    workers: int = 1

    def __post_init__(self):
        self.methods = tuple(self.methods)
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if not self.methods:
            raise ValueError("methods must be nonempty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {METHODS}")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "preset" in d:
            base = preset(d.pop("preset")).to_dict()
            for k, v in d.items():
                if isinstance(v, dict) and isinstance(base.get(k), dict):
                    base[k].update(v)
                else:
                    base[k] = v
            d = base
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown experiment keys {sorted(unknown)}")
        if "env" in d:
            d["env"] = EpisodicEnvConfig.from_dict(d["env"])
        if "train" in d:
            d["train"] = TrainConfig.from_dict(d["train"])
        if "shaping" in d:
            d["shaping"] = ShapingConfig(**d["shaping"])
        return cls(**d)


def preset(name: str) -> ExperimentConfig:
    if name == "gathering-small":
        return ExperimentConfig(
            env=EpisodicEnvConfig.gathering(n_cells=7, horizon=20),
            train=TrainConfig(iterations=300),
            output_dir="results/gathering-small",
        )
    if name == "gathering-paper":
        return ExperimentConfig(
            env=EpisodicEnvConfig.gathering(),
            methods=METHODS,
            train=TrainConfig(iterations=2000),
            output_dir="results/gathering-paper",
        )
    if name == "catcher-paper":
        return ExperimentConfig(
            env=EpisodicEnvConfig.catcher(),
            methods=METHODS,
            train=TrainConfig(iterations=2000),
            output_dir="results/catcher-paper",
        )
    raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")


PRESETS = ("gathering-small", "gathering-paper", "catcher-paper")


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


def run_seed(master: int, run: int, method: str) -> int:
    return (master ^ run ^ zlib.crc32(method.encode())) & 0x7FFFFFFF


# -- shared, seed-independent context ------------------------------------------

@dataclass
class Context:
    """Tabular export and shaping results shared by every run."""

    mdp: object
    codec: object
    phi: object
    terminal: np.ndarray
    encodings: np.ndarray
    shaped: object = None
    report: object = None
    opt_actions: np.ndarray | None = None


def build_context(cfg: ExperimentConfig) -> Context:
    env = build_env(cfg.env)
    m, codec = to_tabular(env)
    ctx = Context(m, codec, builtin_abstraction(env, codec), terminal_mask(env, codec),
                  encoding_matrix(env, codec))
    if "abstraction_envs" in cfg.methods:
        res = run_pipeline(m, ctx.phi, cfg=cfg.shaping)
        ctx.shaped, ctx.report = res.shaped, res.report
    if "opt" in cfg.methods:
        ctx.opt_actions = star_chasing_actions(env, m, codec)
    return ctx


def star_chasing_actions(env, m, codec) -> np.ndarray:
    """Optimal actions when only the star pays."""
    star = env.cfg.rewards["star"]
    star_only = m.replace(reward=np.where(m.reward >= 0.5 * star, m.reward, 0.0))
    return greedy_policy(value_iteration(star_only)).table


class LookupPolicy:
    """Greedy policy given as an action per tabulated state, looked up by encoding."""

    def __init__(self, actions: np.ndarray, encodings: np.ndarray):
        self.actions = np.asarray(actions)
        self.lookup = {e.tobytes(): i for i, e in enumerate(encodings)}

    def greedy(self, obs: np.ndarray) -> np.ndarray:
        return np.array([self.actions[self.lookup[o.tobytes()]] for o in obs])


# -- single runs ----------------------------------------------------------------

@dataclass
class RunResult:
    method: str
    run: int
    seed: int
    curve: LearningCurve
    check: dict | None = None


def _train_cfg(cfg: ExperimentConfig, seed: int) -> TrainConfig:
    return cfg.train.replace(seed=seed)


def _run_default(cfg, ctx, seed):
    env = build_env(cfg.env.replace(seed=seed))
    _, curve = reinforce_train(env, _train_cfg(cfg, seed), method="default")
    return curve, None


def _run_potential(cfg, ctx, seed):
    env = build_env(cfg.env.replace(seed=seed))
    pre = _train_cfg(cfg, seed)
    if cfg.pretrain_iterations is not None:
        pre = pre.replace(iterations=cfg.pretrain_iterations)
    policy, _ = reinforce_train(env, pre, method="potential_pretrain")
    index = ctx.codec.index
    est = mc_policy_evaluation(env, policy, cfg.mc_samples, seed, len(ctx.codec),
                               state_index=lambda s: index[env.key(s)], greedy=True)
    wrapped = potential_shaped(env, key_potential(env, ctx.codec, est.values), env.cfg.gamma)
    eval_env = build_env(cfg.env.replace(seed=seed))
    _, curve = reinforce_train(wrapped, _train_cfg(cfg, seed), eval_env=eval_env,
                               method="potential_rews")
    return curve, None


def _run_abstraction(cfg, ctx, seed):
    tcfg = _train_cfg(cfg, seed)
    train_env = TabularEnv(ctx.shaped, cfg.env.horizon, ctx.terminal, ctx.encodings, seed)
    eval_env = build_env(cfg.env.replace(seed=seed))
    policy, curve = reinforce_train(train_env, tcfg, eval_env=eval_env, method="abstraction_envs")
    return curve, theorem1_check(ctx, policy)


def theorem1_check(ctx: Context, policy) -> dict:
    """Suboptimality of the learned greedy policy on the original task against the bound."""
    pi = Policy.deterministic(greedy_actions(policy, ctx.encodings))
    eps_opt = suboptimality_gap(ctx.shaped, pi)
    measured = suboptimality_gap(ctx.mdp, pi)
    bound = ctx.report.bound(eps_opt)
    converged = eps_opt < ctx.report.delta
    return {
        "eps_opt": eps_opt,
        "suboptimality": measured,
        "bound": bound,
        "converged": bool(converged),
        "bound_holds": bool(measured <= bound + BOUND_SLACK),
        "violated": bool(converged and measured > bound + BOUND_SLACK),
    }


def _run_opt(cfg, ctx, seed):
    env = build_env(cfg.env.replace(seed=seed))
    policy = LookupPolicy(ctx.opt_actions, ctx.encodings)
    curve = LearningCurve(seed=seed, method="opt")
    env.seed(seed)
    for _ in range(cfg.train.iterations):
        und, disc = evaluate_returns(env, policy, cfg.train.eval_episodes)
        curve.episode_returns.append(und)
        curve.discounted_returns.append(disc)
    return curve, None


RUNNERS = {
    "default": _run_default,
    "potential_rews": _run_potential,
    "abstraction_envs": _run_abstraction,
    "opt": _run_opt,
}


def run_one(cfg: ExperimentConfig, ctx: Context, method: str, run: int) -> RunResult:
    seed = run_seed(cfg.seed, run, method)
    curve, check = RUNNERS[method](cfg, ctx, seed)
    return RunResult(method, run, seed, curve, check)


def _run_task(args):
    return run_one(*args)


# -- output -------------------------------------------------------------------------

def csv_header(cfg: ExperimentConfig) -> str:
    t = cfg.train
    return "".join(
        f"# {line}\n"
        for line in (
            f"env={cfg.env.env_kind} n_cells={cfg.env.n_cells} horizon={cfg.env.horizon} gamma={cfg.env.gamma}",
            f"iterations={t.iterations} episodes_per_update={t.episodes_per_update} "
            f"learning_rate={t.learning_rate} policy={t.policy}",
            f"returns are greedy evaluations over {t.eval_episodes} episodes of the original task; "
            "discounted returns start at the first step",
        )
    )


def curve_rows(res: RunResult):
    for it, (u, d) in enumerate(zip(res.curve.episode_returns, res.curve.discounted_returns)):
        yield [res.method, res.run, it, repr(float(u)), repr(float(d))]


def _stderr(x: np.ndarray) -> float:
    return float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0


@dataclass
class ExperimentResult:
    curves_path: Path
    summary: dict
    results: list
    violations: int


def run_experiment(cfg: ExperimentConfig, ctx: Context | None = None) -> ExperimentResult:
    """Train every method for every run; writes ``curves.csv``, ``summary.json`` and ``summary.txt``."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ctx = ctx or build_context(cfg)
    tasks = [(cfg, ctx, m, r) for m in cfg.methods for r in range(cfg.runs)]
    curves_path = out / "curves.csv"
    results = []
    with open(curves_path, "w", newline="") as fh:
        fh.write(csv_header(cfg))
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)

        def record(res):
            results.append(res)
            writer.writerows(curve_rows(res))
            fh.flush()

        if cfg.workers > 1:
            # map yields in submission order, so the file is independent of scheduling
            with ProcessPoolExecutor(cfg.workers) as pool:
                for res in pool.map(_run_task, tasks):
                    record(res)
        else:
            for t in tasks:
                record(run_one(*t))

    summary = summarize(cfg, ctx, results)
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    (out / "summary.txt").write_text(format_summary(summary) + "\n")
    return ExperimentResult(curves_path, summary, results, summary["theorem1"]["violations"])


def summarize(cfg: ExperimentConfig, ctx: Context, results: list) -> dict:
    methods = {}
    for m in cfg.methods:
        rs = [r for r in results if r.method == m]
        disc = np.array([r.curve.discounted_returns[-1] if len(r.curve) else 0.0 for r in rs])
        und = np.array([r.curve.episode_returns[-1] if len(r.curve) else 0.0 for r in rs])
        methods[m] = {
            "runs": len(rs),
            "final_discounted_mean": float(disc.mean()),
            "final_discounted_stderr": _stderr(disc),
            "final_episode_mean": float(und.mean()),
            "final_episode_stderr": _stderr(und),
        }
    checks = [r.check for r in results if r.check is not None]
    summary = {
        "config": cfg.to_dict(),
        "methods": methods,
        "theorem1": {
            "checked": len(checks),
            "converged": sum(c["converged"] for c in checks),
            "violations": sum(c["violated"] for c in checks),
            "runs": checks,
        },
    }
    if ctx.report is not None:
        summary["shaping"] = ctx.report.as_dict()
    return summary


def format_summary(summary: dict) -> str:
    lines = [f"{'method':<18} {'runs':>5} {'final disc. return':>22} {'final episode return':>22}"]
    for m, s in summary["methods"].items():
        lines.append(
            f"{m:<18} {s['runs']:>5d} "
            f"{s['final_discounted_mean']:>12.4f} ± {s['final_discounted_stderr']:<7.4f} "
            f"{s['final_episode_mean']:>12.4f} ± {s['final_episode_stderr']:<7.4f}"
        )
    t = summary["theorem1"]
    if t["checked"]:
        lines.append(
            f"bound check on the original task: {t['checked']} runs, "
            f"{t['converged']} converged, {t['violations']} violations"
        )
    return "\n".join(lines)


# -- aggregation ---------------------------------------------------------------------

def read_curves(path) -> list[dict]:
    text = Path(path).read_text()
    body = "".join(line for line in text.splitlines(keepends=True) if not line.startswith("#"))
    reader = csv.reader(_io.StringIO(body))
    header = next(reader, None)
    if header != CSV_COLUMNS:
        raise ValueError(f"{path}: header {header} does not match {CSV_COLUMNS}")
    return [
        {"method": r[0], "run": int(r[1]), "iteration": int(r[2]),
         "mean_episode_return": float(r[3]), "mean_discounted_return": float(r[4])}
        for r in reader if r
    ]


def aggregate(files) -> list[dict]:
    """Per-(method, iteration) mean and standard error across runs, ordered by first appearance."""
    groups: dict = {}
    for f in files:
        for row in read_curves(f):
            g = groups.setdefault((row["method"], row["iteration"]), ([], []))
            g[0].append(row["mean_episode_return"])
            g[1].append(row["mean_discounted_return"])
    order = {}
    for method, _ in groups:
        order.setdefault(method, len(order))
    out = []
    for (method, it), (und, disc) in sorted(groups.items(), key=lambda kv: (order[kv[0][0]], kv[0][1])):
        u, d = np.array(und), np.array(disc)
        out.append({
            "method": method, "iteration": it, "runs": len(u),
            "mean_episode_return": float(u.mean()), "stderr_episode_return": _stderr(u),
            "mean_discounted_return": float(d.mean()), "stderr_discounted_return": _stderr(d),
        })
    return out


def write_aggregate(rows: list[dict], path) -> None:
    cols = ["method", "iteration", "runs", "mean_episode_return", "stderr_episode_return",
            "mean_discounted_return", "stderr_discounted_return"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)


__all__ = [
    "CSV_COLUMNS",
    "ExperimentConfig",
    "METHODS",
    "PRESETS",
    "aggregate",
    "build_context",
    "load_config",
    "preset",
    "run_experiment",
    "run_one",
    "run_seed",
]
