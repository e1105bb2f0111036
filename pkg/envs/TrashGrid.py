import json
from dataclasses import dataclass

import numpy as np

from envs.AbstractEnv import AbstractEnv, EnvInfo
from envs.DoorKey import DIRECTIONS
from utils.errors import DomainError

REMOVED, SMALL, BIG = 0, 1, 2
CODE_EMPTY, CODE_AGENT, CODE_SMALL, CODE_BIG, CODE_STATION = 0, 1, 2, 3, 4
MAX_CODE = CODE_STATION
DOWN = 1

FORWARD, LEFT, RIGHT, PICKUP, PUTDOWN, SPLIT = range(6)
FIND_TRASH, PICKUP_S_TRASH, PICKUP_B_TRASH, PUT_TRASH = range(4)

STATION_ROWS, STATION_COLS = 2, 4

GLYPHS = {CODE_EMPTY: ".", CODE_SMALL: "s", CODE_BIG: "B", CODE_STATION: "="}


def station_cells(size):
    return [(x, y) for y in range(size - STATION_ROWS, size) for x in range(size - STATION_COLS, size)]


@dataclass
class TrashGridState:
    size: int
    agent_pos: np.ndarray
    agent_dir: np.ndarray
    agent_load: np.ndarray
    trash_pos: np.ndarray
    trash_kind: np.ndarray
    recycled: np.ndarray
    splits: np.ndarray
    t: int
    T: int

    def copy(self):
        return TrashGridState(self.size, self.agent_pos.copy(), self.agent_dir.copy(), self.agent_load.copy(),
                              self.trash_pos.copy(), self.trash_kind.copy(), self.recycled.copy(),
                              self.splits.copy(), self.t, self.T)

    def front(self, i):
        dx, dy = DIRECTIONS[int(self.agent_dir[i])]
        return int(self.agent_pos[i, 0]) + dx, int(self.agent_pos[i, 1]) + dy

    def in_bounds(self, x, y):
        return 0 <= x < self.size and 0 <= y < self.size

    def trash_at(self, x, y):
        hits = np.flatnonzero((self.trash_kind != REMOVED) & (self.trash_pos[:, 0] == x) & (self.trash_pos[:, 1] == y))
        return int(hits[0]) if hits.size else None

    def agent_at(self, x, y):
        hits = np.flatnonzero((self.agent_pos[:, 0] == x) & (self.agent_pos[:, 1] == y))
        return int(hits[0]) if hits.size else None

    def faces_trash(self, i):
        x, y = self.front(i)
        return self.in_bounds(x, y) and self.trash_at(x, y) is not None

    def in_station(self, i):
        x, y = int(self.agent_pos[i, 0]), int(self.agent_pos[i, 1])
        return x >= self.size - STATION_COLS and y >= self.size - STATION_ROWS

    def total_mass(self):
        """Trash units on the board, carried and recycled; a big item counts as one unit."""
        return int((self.trash_kind != REMOVED).sum() + self.agent_load.sum() + self.recycled.sum())


class TrashGrid(AbstractEnv):
    name = "trashgrid"
    subgoal_names = ("FindTrash", "PickupSTrash", "PickupBTrash", "PutTrash")
    action_names = ("Forward", "Left", "Right", "Pickup", "Putdown", "Split")

    def make_info(self):
        cfg = self.config
        n_trash = cfg.n_small + cfg.n_big
        obs_dim = cfg.n_agents * 4 + n_trash * 3 + STATION_ROWS * STATION_COLS * 2
        return EnvInfo(n_agents=cfg.n_agents, action_count=len(self.action_names), obs_dim=obs_dim,
                       state_shape=(cfg.grid_size, cfg.grid_size), subgoal_count=len(self.subgoal_names),
                       max_steps=cfg.max_steps)

    @property
    def grid_shape(self):
        return self.config.grid_size, self.config.grid_size

    def _reset(self, rng):
        cfg = self.config
        size = cfg.grid_size
        if cfg.n_agents > size:
            raise DomainError("{} agents do not fit on a top row of {} cells".format(cfg.n_agents, size))
        columns = np.sort(rng.choice(size, size=cfg.n_agents, replace=False))
        agent_pos = np.stack([columns, np.zeros(cfg.n_agents, dtype=np.int64)], axis=1).astype(np.int64)

        station = set(station_cells(size))
        occupied = {(int(x), int(y)) for x, y in agent_pos}
        candidates = [(x, y) for y in range(size) for x in range(size) if (x, y) not in station and (x, y) not in occupied]
        n_trash = cfg.n_small + cfg.n_big
        if n_trash > len(candidates):
            raise DomainError("{} trash items do not fit on the board".format(n_trash))
        picks = rng.choice(len(candidates), size=n_trash, replace=False)
        trash_pos = np.array([candidates[int(p)] for p in picks], dtype=np.int64).reshape(n_trash, 2)
        trash_kind = np.array([SMALL] * cfg.n_small + [BIG] * cfg.n_big, dtype=np.int64)

        return TrashGridState(size=size, agent_pos=agent_pos, agent_dir=np.full(cfg.n_agents, DOWN, dtype=np.int64),
                              agent_load=np.zeros(cfg.n_agents, dtype=np.int64), trash_pos=trash_pos,
                              trash_kind=trash_kind, recycled=np.zeros(cfg.n_agents, dtype=np.int64),
                              splits=np.zeros(cfg.n_agents, dtype=np.int64), t=0, T=cfg.max_steps)

    def _step(self, i, action):
        cfg = self.config
        s = self.state
        reward = cfg.step_penalty
        fx, fy = s.front(i)
        blocked = not s.in_bounds(fx, fy) or s.agent_at(fx, fy) is not None or s.trash_at(fx, fy) is not None

        if action == FORWARD:
            if blocked:
                reward += cfg.collision_penalty
            else:
                s.agent_pos[i] = (fx, fy)
        elif action == LEFT:
            s.agent_dir[i] = (s.agent_dir[i] - 1) % 4
        elif action == RIGHT:
            s.agent_dir[i] = (s.agent_dir[i] + 1) % 4
        elif action == PICKUP:
            k = s.trash_at(fx, fy) if s.in_bounds(fx, fy) else None
            if k is not None and s.trash_kind[k] == SMALL and s.agent_load[i] < cfg.max_load:
                s.agent_load[i] += 1
                s.trash_kind[k] = REMOVED
        elif action == PUTDOWN:
            if s.in_station(i) and s.agent_load[i] > 0:
                units = int(s.agent_load[i])
                reward += (1.0 - cfg.beta * s.t / float(s.T)) * units * cfg.reward_scale
                s.recycled[i] += units
                s.agent_load[i] = 0
        elif action == SPLIT:
            k = s.trash_at(fx, fy) if s.in_bounds(fx, fy) else None
            if k is not None and s.trash_kind[k] == BIG:
                s.trash_kind[k] = SMALL
                s.splits[i] += 1

        if self.cursor.at_cycle_end:
            s.t += 1
        cleared = not (s.trash_kind != REMOVED).any() and s.agent_load.sum() == 0
        return reward, bool(cleared or s.t >= s.T)

    def observe(self, agent_id):
        s = self.state
        span = float(s.size - 1)
        parts = [[s.agent_pos[agent_id, 0] / span, s.agent_pos[agent_id, 1] / span,
                  s.agent_load[agent_id] / float(self.config.max_load), s.agent_dir[agent_id] / 3.0]]
        for j in range(self.info.n_agents):
            if j == agent_id:
                continue
            dx, dy = s.agent_pos[j] - s.agent_pos[agent_id]
            parts.append([(dx + span) / (2 * span), (dy + span) / (2 * span),
                          s.agent_load[j] / float(self.config.max_load), s.agent_dir[j] / 3.0])
        for k in range(len(s.trash_kind)):
            if s.trash_kind[k] == REMOVED:
                parts.append([0.0, 0.0, 0.0])
            else:
                parts.append([s.trash_pos[k, 0] / span, s.trash_pos[k, 1] / span, s.trash_kind[k] / float(BIG)])
        for x, y in station_cells(s.size):
            parts.append([x / span, y / span])
        return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts])

    def global_state(self):
        s = self.state
        codes = np.full((s.size, s.size), CODE_EMPTY, dtype=np.int64)
        for x, y in station_cells(s.size):
            codes[y, x] = CODE_STATION
        for k in range(len(s.trash_kind)):
            if s.trash_kind[k] != REMOVED:
                x, y = s.trash_pos[k]
                codes[y, x] = CODE_SMALL if s.trash_kind[k] == SMALL else CODE_BIG
        for x, y in s.agent_pos:
            codes[y, x] = CODE_AGENT
        return codes

    def normalized_state(self):
        return self.global_state().ravel() / float(MAX_CODE)

    def subgoal_achieved(self, agent_id, g, prev, nxt):
        if g == FIND_TRASH:
            return not prev.faces_trash(agent_id) and nxt.faces_trash(agent_id)
        if g == PICKUP_S_TRASH:
            return nxt.agent_load[agent_id] > prev.agent_load[agent_id]
        if g == PICKUP_B_TRASH:
            return nxt.splits[agent_id] > prev.splits[agent_id]
        if g == PUT_TRASH:
            return nxt.recycled[agent_id] > prev.recycled[agent_id]
        raise DomainError("Trash-Grid has no subgoal {}".format(g))

    def agent_position(self, agent_id):
        return int(self.state.agent_pos[agent_id, 0]), int(self.state.agent_pos[agent_id, 1])

    def render_ascii(self, state=None):
        return render_ascii(state if state is not None else self.state)


def render_ascii(state):
    codes = np.full((state.size, state.size), CODE_EMPTY, dtype=np.int64)
    for x, y in station_cells(state.size):
        codes[y, x] = CODE_STATION
    for k in range(len(state.trash_kind)):
        if state.trash_kind[k] != REMOVED:
            x, y = state.trash_pos[k]
            codes[y, x] = CODE_SMALL if state.trash_kind[k] == SMALL else CODE_BIG
    rows = [[GLYPHS[int(c)] for c in row] for row in codes]
    for i, (x, y) in enumerate(state.agent_pos):
        rows[y][x] = str(i)
    return "\n".join("".join(r) for r in rows)


def dump_layout(state):
    sidecar = {
        "agents": [[int(d), int(l), int(r), int(sp)] for d, l, r, sp in
                   zip(state.agent_dir, state.agent_load, state.recycled, state.splits)],
        "trash": [[int(x), int(y), int(k)] for (x, y), k in zip(state.trash_pos, state.trash_kind)],
        "t": state.t,
        "T": state.T,
    }
    return render_ascii(state), sidecar


def load_layout(text, sidecar):
    lines = text.strip("\n").split("\n")
    size = len(lines)
    n_agents = len(sidecar["agents"])
    agent_pos = np.zeros((n_agents, 2), dtype=np.int64)
    for y, line in enumerate(lines):
        for x, glyph in enumerate(line):
            if glyph.isdigit():
                agent_pos[int(glyph)] = (x, y)
    agents = np.asarray(sidecar["agents"], dtype=np.int64).reshape(n_agents, 4)
    trash = np.asarray(sidecar["trash"], dtype=np.int64).reshape(-1, 3)
    return TrashGridState(size=size, agent_pos=agent_pos, agent_dir=agents[:, 0].copy(),
                          agent_load=agents[:, 1].copy(), trash_pos=trash[:, :2].copy(),
                          trash_kind=trash[:, 2].copy(), recycled=agents[:, 2].copy(), splits=agents[:, 3].copy(),
                          t=sidecar["t"], T=sidecar["T"])


def save_layout(state, path):
    text, sidecar = dump_layout(state)
    with open(path + ".txt", "w") as f:
        f.write(text + "\n")
    with open(path + ".json", "w") as f:
        json.dump(sidecar, f, indent=2)
