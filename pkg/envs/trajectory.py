import logging

import pandas as pd

from utils.errors import SchemaError

log = logging.getLogger(__name__)

COLUMNS = ["seed", "agent_id", "action"]
HEADER_PREFIX = "# gmah-trajectory"


def record_trajectory(env, seed, actions):
    """Play a fixed action script from reset(seed); agents act in cursor order.

    Returns the replay records and the step results. The script stops early
    when the episode ends.
    """
    env.reset(seed)
    records, results = [], []
    for action in actions:
        agent = env.current_agent
        results.append(env.step(agent, int(action)))
        records.append((int(seed), agent, int(action)))
        if results[-1].done:
            break
    return pd.DataFrame(records, columns=COLUMNS), results


def save_trajectory(path, records, env_name, config_hash):
    with open(path, "w") as f:
        f.write("{} env={} config={}\n".format(HEADER_PREFIX, env_name, config_hash))
        records[COLUMNS].to_csv(f, index=False)
    log.debug("trajectory with {} steps written to {}".format(len(records), path))
    return path


def load_trajectory(path):
    with open(path) as f:
        header = f.readline().strip()
        if not header.startswith(HEADER_PREFIX):
            raise SchemaError("{} is not a trajectory file".format(path))
        fields = dict(part.split("=", 1) for part in header[len(HEADER_PREFIX):].split())
        records = pd.read_csv(f)
    missing = [c for c in COLUMNS if c not in records.columns]
    if missing:
        raise SchemaError("{} lacks columns {}".format(path, missing))
    return fields, records


def replay(env, records):
    """Re-run recorded steps; a new seed or a finished episode triggers a reset."""
    results = []
    current_seed = None
    for seed, agent_id, action in records[COLUMNS].itertuples(index=False):
        if seed != current_seed or env.done:
            env.reset(int(seed))
            current_seed = seed
        results.append(env.step(int(agent_id), int(action)))
    return results
