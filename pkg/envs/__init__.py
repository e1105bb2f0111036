from envs.DoorKey import DoorKey
from envs.TrashGrid import TrashGrid
from utils.errors import DomainError

ENVIRONMENTS = {
    DoorKey.name: DoorKey,
    TrashGrid.name: TrashGrid,
}


def make_env(config):
    """Build the environment named by an EnvConfig."""
    try:
        cls = ENVIRONMENTS[config.name]
    except KeyError:
        raise DomainError("unknown environment {!r}".format(config.name))
    return cls(config)
