import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
import pandas as pd

from utils.errors import ContractError, DomainError, LifecycleError, OrderingError
from utils.Rng import make_stream

log = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ConformanceReport:
    env_name: str
    checks: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def add(self, name, passed, detail=""):
        self.checks.append(CheckResult(name, bool(passed), detail))

    def result(self, name):
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    def to_frame(self):
        return pd.DataFrame([c.__dict__ for c in self.checks], columns=["name", "passed", "detail"])


def _fresh(env):
    return env.__class__(env.config)


def _rollout(env, seed, n_steps):
    """Reset with seed and play a seeded random action stream, recording everything observable."""
    obs, state = env.reset(seed)
    rng = make_stream(seed, "conformance")
    trace = [("reset", [o.copy() for o in obs], state.copy())]
    for _ in range(n_steps):
        agent = env.current_agent
        action = int(rng.integers(env.info.action_count))
        result = env.step(agent, action)
        trace.append((agent, action, result.obs.copy(), result.reward, result.done,
                      tuple(sorted(result.achieved_subgoals)), env.global_state().copy()))
        if result.done:
            obs, state = env.reset(int(rng.integers(2 ** 31 - 1)))
            trace.append(("reset", [o.copy() for o in obs], state.copy()))
    return trace


def _same(a, b):
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return np.array_equal(a, b)
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    return a == b


def check_determinism(env, report, seed, n_steps):
    first = _rollout(_fresh(env), seed, n_steps)
    second = _rollout(_fresh(env), seed, n_steps)
    report.add("determinism", _same(first, second),
               "" if _same(first, second) else "two runs from seed {} diverged".format(seed))


def check_lifecycle(env, report, seed):
    problems = []
    probe = _fresh(env)
    try:
        probe.step(0, 0)
        problems.append("step before reset accepted")
    except LifecycleError:
        pass

    probe.reset(seed)
    wrong = (probe.current_agent + 1) % max(probe.info.n_agents, 2)
    try:
        probe.step(wrong, 0)
        problems.append("out-of-turn agent {} accepted".format(wrong))
    except OrderingError:
        pass
    try:
        probe.step(probe.current_agent, probe.info.action_count)
        problems.append("action {} accepted".format(probe.info.action_count))
    except DomainError:
        pass

    rng = make_stream(seed, "conformance.lifecycle")
    done = False
    for _ in range(probe.info.max_steps * probe.info.n_agents + 1):
        done = probe.step(probe.current_agent, int(rng.integers(probe.info.action_count))).done
        if done:
            break
    if not done:
        problems.append("episode did not end within T={}".format(probe.info.max_steps))
    else:
        try:
            probe.step(probe.current_agent, 0)
            problems.append("step after done accepted")
        except LifecycleError:
            pass
    report.add("lifecycle", not problems, "; ".join(problems))


def check_bounds(env, report, seed, n_steps):
    problems = []
    probe = _fresh(env)
    obs, _ = probe.reset(seed)
    rng = make_stream(seed, "conformance.bounds")
    observations = list(obs)
    for _ in range(n_steps):
        try:
            result = probe.step(probe.current_agent, int(rng.integers(probe.info.action_count)))
        except ContractError as e:
            problems.append("contract error on a legal step: {}".format(e))
            break
        observations.append(result.obs)
        bad_goals = [g for g in result.achieved_subgoals if not 0 <= g < probe.info.subgoal_count]
        if bad_goals:
            problems.append("achieved subgoals {} out of range".format(bad_goals))
        state = probe.normalized_state()
        if state.min() < 0.0 or state.max() > 1.0:
            problems.append("normalized state outside [0, 1]")
        if result.done:
            observations.extend(probe.reset(int(rng.integers(2 ** 31 - 1)))[0])
    stacked = np.stack(observations)
    if stacked.min() < 0.0 or stacked.max() > 1.0:
        problems.append("observation range [{:.3f}, {:.3f}] outside [0, 1]".format(stacked.min(), stacked.max()))
    report.add("bounds", not problems, "; ".join(sorted(set(problems))))


def check_obs_dim(env, report, seed, expected=None):
    fresh = _fresh(env)
    obs, state = fresh.reset(seed)
    problems = []
    lengths = sorted({len(o) for o in obs})
    if lengths != [fresh.info.obs_dim]:
        problems.append("observation lengths {} differ from obs_dim {}".format(lengths, fresh.info.obs_dim))
    if expected is not None and fresh.info.obs_dim != expected:
        problems.append("obs_dim {} differs from expected {}".format(fresh.info.obs_dim, expected))
    if tuple(state.shape) != tuple(fresh.info.state_shape):
        problems.append("state shape {} differs from {}".format(state.shape, fresh.info.state_shape))
    report.add("obs_dim", not problems, "; ".join(problems))


def conformance_suite(env, seed=0, n_steps=300, expected_obs_dim=None):
    """Run the contract checks against fresh instances of env's class and config."""
    report = ConformanceReport(env.name)
    check_determinism(env, report, seed, n_steps)
    check_lifecycle(env, report, seed)
    check_bounds(env, report, seed, n_steps)
    check_obs_dim(env, report, seed, expected_obs_dim)
    for check in report.checks:
        level = logging.INFO if check.passed else logging.WARNING
        log.log(level, "{} {}: {} {}".format(env.name, check.name, "pass" if check.passed else "FAIL", check.detail))
    return report
