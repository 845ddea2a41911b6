"""Config-driven experiment runner.

Configs are flat ``key=value`` lines with ``#`` comments.  Five modes:
plan (index policy vs LP bound), baselines (plus greedy and random),
scale (replication experiment), learn (regret series of the UCB learner)
and oracle (exact DP value vs LP bound on tiny instances).  Results go to
CSV (frozen column order per mode, metadata lines prefixed with ``#``) or
a JSON array of row objects mirroring the CSV fields.

All floats are printed as 9-significant-digit scientific notation and all
randomness flows from the config seed, so identical configs produce
byte-identical outputs.

Exit codes: 0 success, 2 config error, 3 runtime invariant breach,
4 size-guard refusal.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__, learner, lp, policy as policy_mod, scenarios, simulate
from .learner import ConfigError
from .model import InvariantViolation
from .rng import child_rng
from .simulate import SizeGuardError

MODES = ("plan", "learn", "scale", "baselines", "oracle")
FORMATS = ("csv", "json")

COLUMNS = {
    "plan": ("policy", "trials", "mean_reward", "stderr", "lp_bound", "gap", "per_arm_gap"),
    "baselines": ("policy", "trials", "mean_reward", "stderr", "lp_bound", "gap", "per_arm_gap"),
    "scale": (
        "rho",
        "policy",
        "trials",
        "mean_reward",
        "stderr",
        "lp_bound",
        "gap",
        "per_arm_gap",
        "lemma1_max_dev",
    ),
    "learn": ("t", "cumulative_regret", "stderr"),
    "oracle": ("dp_value", "lp_bound"),
}

# (type, validator, description) per top-level key.
_POSITIVE_INT = lambda v: v >= 1
_KEYS = {
    "scenario": (str, lambda v: v in scenarios.SCENARIO_KINDS, f"one of {scenarios.SCENARIO_KINDS}"),
    "mode": (str, lambda v: v in MODES, f"one of {MODES}"),
    "seed": (int, lambda v: v >= 0, "a nonnegative integer"),
    "trials": (int, _POSITIVE_INT, "an integer >= 1"),
    "horizon": (int, _POSITIVE_INT, "an integer >= 1"),
    "eta": (float, lambda v: 0.0 < v < 1.0, "a float in (0, 1)"),
    "lambda_override": (int, _POSITIVE_INT, "an integer >= 1"),
    "rho_list": (str, lambda v: True, "comma-separated positive integers"),
    "output": (str, lambda v: len(v) > 0, "a file path"),
    "format": (str, lambda v: v in FORMATS, f"one of {FORMATS}"),
}

_SCENARIO_KEYS = {
    "birth-death": {"birth.N": int, "birth.S": int, "birth.alpha": float, "birth.mu": float},
    "random-multi-action": {"random.N": int, "random.S": int, "random.A": int, "random.K": int},
    "deadline": {"deadline.N": int, "deadline.M": int},
    "video-streaming": {"video.N": int, "video.bandwidth": int, "video.bmax": int},
}

_PARAM_NAME = {
    "birth.N": "N",
    "birth.S": "S",
    "birth.alpha": "alpha",
    "birth.mu": "mu",
    "random.N": "N",
    "random.S": "S",
    "random.A": "A",
    "random.K": "K",
    "deadline.N": "N",
    "deadline.M": "M",
    "video.N": "N",
    "video.bandwidth": "total_bandwidth",
    "video.bmax": "B_max",
}


@dataclass
class ExperimentConfig:
    scenario: str
    mode: str
    seed: int
    trials: int = 100
    horizon: Optional[int] = None
    eta: float = 0.1
    lambda_override: Optional[int] = None
    rho_list: tuple[int, ...] = (2, 8, 32)
    output: Optional[str] = None
    format: str = "csv"
    scenario_params: dict = field(default_factory=dict)

    @property
    def output_path(self) -> str:
        return self.output if self.output else f"results.{self.format}"


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a flat key=value config document."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {stripped!r}")
        key, value = stripped.split("=", 1)
        key, value = key.strip(), value.strip()
        if key in raw:
            raise ConfigError(f"duplicate key {key!r}")
        raw[key] = value

    for required in ("scenario", "mode", "seed"):
        if required not in raw:
            raise ConfigError(f"missing required key {required!r}")

    values: dict = {}
    scenario_params: dict = {}
    scenario = raw.get("scenario", "")
    allowed_prefixed = _SCENARIO_KEYS.get(scenario, {})
    for key, text_value in raw.items():
        if key in _KEYS:
            typ, check, expect = _KEYS[key]
            try:
                value = typ(text_value)
            except ValueError:
                raise ConfigError(f"key {key!r}: cannot parse {text_value!r} as {typ.__name__}")
            if not check(value):
                raise ConfigError(f"key {key!r}: value {text_value!r} out of range; expected {expect}")
            values[key] = value
        elif key in allowed_prefixed:
            typ = allowed_prefixed[key]
            try:
                scenario_params[_PARAM_NAME[key]] = typ(text_value)
            except ValueError:
                raise ConfigError(f"key {key!r}: cannot parse {text_value!r} as {typ.__name__}")
        else:
            raise ConfigError(f"unknown key {key!r}")

    if "rho_list" in values:
        try:
            rhos = tuple(int(part) for part in values["rho_list"].split(","))
        except ValueError:
            raise ConfigError("key 'rho_list': expected comma-separated integers")
        if not rhos or any(r < 1 for r in rhos):
            raise ConfigError("key 'rho_list': entries must be integers >= 1")
        values["rho_list"] = rhos

    return ExperimentConfig(scenario_params=scenario_params, **values)


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.8e}"
    return str(value)


def _meta_lines(config: ExperimentConfig, instance, extra: list[str]) -> list[str]:
    lines = [f"rmabkit {__version__}"]
    echo = [
        f"scenario={config.scenario}",
        f"mode={config.mode}",
        f"seed={config.seed}",
        f"trials={config.trials}",
        f"horizon={'' if config.horizon is None else config.horizon}",
        f"eta={_fmt(config.eta)}",
        f"lambda_override={'' if config.lambda_override is None else config.lambda_override}",
        f"rho_list={','.join(str(r) for r in config.rho_list)}",
        f"format={config.format}",
    ]
    echo.extend(f"{k}={v}" for k, v in sorted(config.scenario_params.items()))
    lines.append("config " + " ".join(echo))
    seen = []
    for arm in instance.arms:
        key = (arm.reward_scale, arm.reward_offset)
        if arm.is_normalized and key not in seen:
            seen.append(key)
            lines.append(
                f"reward_normalization scale={_fmt(arm.reward_scale)} offset={_fmt(arm.reward_offset)}"
            )
    lines.extend(extra)
    return lines


def _write_output(path: str, fmt: str, columns, rows, meta_lines) -> None:
    if fmt == "csv":
        parts = [f"# {line}" for line in meta_lines]
        parts.append(",".join(columns))
        for row in rows:
            parts.append(",".join(_fmt(row[c]) for c in columns))
        data = "\n".join(parts) + "\n"
        with open(path, "w", newline="") as fh:
            fh.write(data)
    else:
        payload = [
            {c: (row[c] if not isinstance(row[c], (np.integer, np.floating)) else row[c].item()) for c in columns}
            for row in rows
        ]
        with open(path, "w", newline="") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")


def _report_row(report: simulate.GapReport) -> dict:
    return {
        "policy": report.policy,
        "trials": report.trials,
        "mean_reward": report.mean_reward,
        "stderr": report.stderr,
        "lp_bound": report.lp_bound,
        "gap": report.gap,
        "per_arm_gap": report.per_arm_gap,
    }


def _learn_emit_points(T: int, cap: int = 1024) -> np.ndarray:
    if T <= cap:
        return np.arange(1, T + 1)
    return np.unique(np.linspace(1, T, cap).round().astype(np.int64))


def run_experiment(config: ExperimentConfig) -> int:
    """Execute one configured experiment; returns the process exit code."""
    try:
        spec = scenarios.ScenarioSpec(kind=config.scenario, seed=config.seed, params=config.scenario_params)
        instance = scenarios.build_scenario(spec, horizon=config.horizon)
        extra_meta: list[str] = []
        if config.mode == "plan":
            solution = lp.solve_relaxed(instance)
            executor = policy_mod.OmrExecutor(instance, policy_mod.make_omr_policy(solution, instance))
            stats = simulate.run_policy(instance, executor, config.trials, config.seed, tag="plan")
            report = simulate.gap_report("omr", stats, solution.objective, instance.num_arms, config.trials)
            rows = [_report_row(report)]
        elif config.mode == "baselines":
            reports = simulate.evaluate_baselines(instance, config.trials, config.seed)
            rows = [_report_row(r) for r in reports]
        elif config.mode == "scale":
            results = simulate.scaling_experiment(instance, config.rho_list, config.trials, config.seed)
            rows = []
            for res in results:
                row = {"rho": res.rho, "lemma1_max_dev": res.lemma_dev_mean}
                row.update(_report_row(res.report))
                rows.append(row)
        elif config.mode == "oracle":
            dp = simulate.dp_oracle(instance)
            bound = lp.relaxed_upper_bound(instance)
            rows = [{"dp_value": dp.value, "lp_bound": bound}]
        elif config.mode == "learn":
            T = instance.horizon
            try:
                rate = simulate.dp_average_rate(instance)
                oracle_kind = "dp_average"
            except SizeGuardError:
                rate = lp.relaxed_upper_bound(instance) / T
                oracle_kind = "lp_average"
            regrets = np.empty((config.trials, T))
            for i in range(config.trials):
                result = learner.rmab_ucb(
                    instance,
                    T,
                    config.eta,
                    config.seed,
                    index=i,
                    lambda_override=config.lambda_override,
                    oracle_rate=rate,
                    oracle_kind=oracle_kind,
                )
                regrets[i] = result.regret
            extra_meta.append(f"regret_oracle kind={oracle_kind} rate={_fmt(rate)}")
            extra_meta.append(
                f"learn lambda={result.meta['lambda']} t1={result.meta['t1']} "
                f"t2={result.meta['t2']} planning={result.meta['planning']}"
            )
            rows = []
            denom = np.sqrt(config.trials) if config.trials > 1 else 1.0
            for t in _learn_emit_points(T):
                col = regrets[:, t - 1]
                stderr = float(col.std(ddof=1) / denom) if config.trials > 1 else 0.0
                rows.append({"t": int(t), "cumulative_regret": float(col.mean()), "stderr": stderr})
        else:  # pragma: no cover - parse_config already validates
            raise ConfigError(f"unknown mode {config.mode!r}")
        meta = _meta_lines(config, instance, extra_meta)
        _write_output(config.output_path, config.format, COLUMNS[config.mode], rows, meta)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SizeGuardError as exc:
        print(f"size guard: {exc}", file=sys.stderr)
        return 4
    except InvariantViolation as exc:
        print(f"invariant breach: {exc}", file=sys.stderr)
        return 3


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="rmabkit",
        description="Run a configured restless-bandit planning/learning experiment.",
    )
    parser.add_argument("config", help="path to a key=value config file")
    args = parser.parse_args(argv)
    try:
        with open(args.config) as fh:
            text = fh.read()
    except OSError as exc:
        print(f"config error: cannot read {args.config}: {exc}", file=sys.stderr)
        return 2
    try:
        config = parse_config(text)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return run_experiment(config)


if __name__ == "__main__":
    sys.exit(main())
