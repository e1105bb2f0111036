import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from envs.AbstractEnv import AbstractEnv, EnvInfo
from utils.errors import DomainError

UNSEEN, EMPTY, WALL, DOOR, KEY, BOX = 0, 1, 2, 3, 4, 5
MAX_TYPE = BOX
DOOR_OPEN_STATE, DOOR_LOCKED_STATE = 0, 2
MAX_STATE = DOOR_LOCKED_STATE
AGENT_CODE, OPEN_DOOR_CODE = 6, 7

# right, down, left, up; y grows downwards
DIRECTIONS = ((1, 0), (0, 1), (-1, 0), (0, -1))
AGENT_GLYPHS = ">v<^"

FORWARD, LEFT, RIGHT, PICKUP, DROP, TOGGLE, DONE = range(7)
PICKUP_KEY, OPEN_DOOR, TOGGLE_BOX = range(3)

VIEW = 7

GLYPHS = {EMPTY: ".", WALL: "#", KEY: "K", BOX: "B"}
LOCKED_GLYPH, OPEN_GLYPH = "L", "/"


@dataclass
class DoorKeyState:
    grid: np.ndarray
    door: tuple
    door_open: bool
    agent: tuple
    direction: int
    carrying_key: bool
    box_toggled: bool
    t: int
    T: int

    def copy(self):
        return DoorKeyState(self.grid.copy(), self.door, self.door_open, self.agent, self.direction,
                            self.carrying_key, self.box_toggled, self.t, self.T)

    def front(self):
        dx, dy = DIRECTIONS[self.direction]
        return self.agent[0] + dx, self.agent[1] + dy

    def cell(self, x, y):
        return int(self.grid[y, x])

    def wall_column(self):
        return self.door[0]


class DoorKey(AbstractEnv):
    name = "doorkey"
    subgoal_names = ("pickup_key", "open_door", "toggle_box")
    action_names = ("Forward", "Left", "Right", "Pickup", "Drop", "Toggle", "Done")

    def make_info(self):
        size = self.config.size
        return EnvInfo(n_agents=1, action_count=len(self.action_names), obs_dim=VIEW * VIEW * 3,
                       state_shape=(size, size), subgoal_count=len(self.subgoal_names),
                       max_steps=self.config.max_steps)

    @property
    def grid_shape(self):
        return self.config.size, self.config.size

    def _reset(self, rng):
        size = self.config.size
        grid = np.full((size, size), EMPTY, dtype=np.int64)
        grid[0, :] = grid[-1, :] = grid[:, 0] = grid[:, -1] = WALL

        wall_x = int(rng.integers(2, size - 2))
        grid[1:size - 1, wall_x] = WALL
        door_y = int(rng.integers(1, size - 1))
        grid[door_y, wall_x] = DOOR

        left = [(x, y) for y in range(1, size - 1) for x in range(1, wall_x)]
        right = [(x, y) for y in range(1, size - 1) for x in range(wall_x + 1, size - 1)]

        agent = left[int(rng.integers(len(left)))]
        free_left = [c for c in left if c != agent]
        key = free_left[int(rng.integers(len(free_left)))]
        grid[key[1], key[0]] = KEY

        if rng.random() < self.config.box_same_room_prob:
            candidates = [c for c in free_left if c != key]
        else:
            candidates = right
        box = candidates[int(rng.integers(len(candidates)))]
        grid[box[1], box[0]] = BOX

        return DoorKeyState(grid=grid, door=(wall_x, door_y), door_open=False, agent=agent,
                            direction=int(rng.integers(4)), carrying_key=False, box_toggled=False,
                            t=0, T=self.config.max_steps)

    def _step(self, agent_id, action):
        s = self.state
        reward = 0.0
        done = False
        fx, fy = s.front()
        front = s.cell(fx, fy)

        if action == FORWARD:
            if front == EMPTY or (front == DOOR and s.door_open):
                s.agent = (fx, fy)
        elif action == LEFT:
            s.direction = (s.direction - 1) % 4
        elif action == RIGHT:
            s.direction = (s.direction + 1) % 4
        elif action == PICKUP:
            if front == KEY and not s.carrying_key:
                s.carrying_key = True
                s.grid[fy, fx] = EMPTY
        elif action == DROP:
            if s.carrying_key and front == EMPTY:
                s.grid[fy, fx] = KEY
                s.carrying_key = False
        elif action == TOGGLE:
            if front == DOOR and not s.door_open and s.carrying_key:
                s.door_open = True
            elif front == BOX:
                s.box_toggled = True
                reward = self.box_reward(s.t)
                done = True
        # DONE is a no-op

        s.t += 1
        if not done and s.t >= s.T:
            done = True
        return reward, done

    def box_reward(self, t):
        return (1.0 - self.config.beta * t / float(self.state.T)) * self.config.reward_scale

    def observation_window(self, state=None):
        """Type and state channels of the 7x7 view, agent at the bottom centre facing up."""
        s = state if state is not None else self.state
        size = s.grid.shape[0]
        fx, fy = DIRECTIONS[s.direction]
        rx, ry = DIRECTIONS[(s.direction + 1) % 4]

        world = {}
        for j in range(VIEW):
            for i in range(VIEW):
                ahead, lateral = VIEW - 1 - j, i - VIEW // 2
                x = s.agent[0] + ahead * fx + lateral * rx
                y = s.agent[1] + ahead * fy + lateral * ry
                if 0 <= x < size and 0 <= y < size:
                    world[(i, j)] = (x, y)

        types = np.full((VIEW, VIEW), UNSEEN, dtype=np.int64)
        states = np.zeros((VIEW, VIEW), dtype=np.int64)
        origin = (VIEW // 2, VIEW - 1)
        seen = {origin}
        queue = deque([origin])
        while queue:
            i, j = queue.popleft()
            x, y = world[(i, j)]
            code = s.cell(x, y)
            if (i, j) == origin:
                code = DOOR if (x, y) == s.door else EMPTY
                if s.carrying_key:
                    code = KEY
            types[j, i] = code
            if code == DOOR:
                states[j, i] = DOOR_OPEN_STATE if s.door_open else DOOR_LOCKED_STATE
            if code == WALL or (code == DOOR and not s.door_open and (i, j) != origin):
                continue
            for ni, nj in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)):
                if (ni, nj) in world and (ni, nj) not in seen:
                    seen.add((ni, nj))
                    queue.append((ni, nj))
        return types, states

    def observe(self, agent_id=0):
        types, states = self.observation_window()
        obs = np.zeros((VIEW, VIEW, 3), dtype=np.float64)
        obs[:, :, 0] = types / float(MAX_TYPE)
        obs[:, :, 1] = states / float(MAX_STATE)
        return obs.ravel()

    def global_state(self):
        s = self.state
        codes = s.grid.copy()
        if s.door_open:
            codes[s.door[1], s.door[0]] = OPEN_DOOR_CODE
        codes[s.agent[1], s.agent[0]] = AGENT_CODE
        return codes

    def normalized_state(self):
        return self.global_state().ravel() / float(OPEN_DOOR_CODE)

    def subgoal_achieved(self, agent_id, g, prev, nxt):
        if g == PICKUP_KEY:
            return not prev.carrying_key and nxt.carrying_key
        if g == OPEN_DOOR:
            return not prev.door_open and nxt.door_open
        if g == TOGGLE_BOX:
            return not prev.box_toggled and nxt.box_toggled
        raise DomainError("Door-Key has no subgoal {}".format(g))

    def agent_position(self, agent_id=0):
        return self.state.agent

    def render_ascii(self, state=None):
        return render_ascii(state if state is not None else self.state)


def render_ascii(state):
    lines = []
    for y in range(state.grid.shape[0]):
        row = []
        for x in range(state.grid.shape[1]):
            if (x, y) == state.agent:
                row.append(AGENT_GLYPHS[state.direction])
            elif (x, y) == state.door:
                row.append(OPEN_GLYPH if state.door_open else LOCKED_GLYPH)
            else:
                row.append(GLYPHS[state.cell(x, y)])
        lines.append("".join(row))
    return "\n".join(lines)


def dump_layout(state):
    sidecar = {
        "agent": [state.agent[0], state.agent[1], state.direction],
        "t": state.t,
        "T": state.T,
        "carrying_key": state.carrying_key,
        "box_toggled": state.box_toggled,
    }
    return render_ascii(state), sidecar


def load_layout(text, sidecar):
    lookup = {v: k for k, v in GLYPHS.items()}
    lines = text.strip("\n").split("\n")
    grid = np.full((len(lines), len(lines[0])), EMPTY, dtype=np.int64)
    door, door_open = None, False
    x_a, y_a, direction = sidecar["agent"]
    for y, line in enumerate(lines):
        for x, glyph in enumerate(line):
            if glyph in AGENT_GLYPHS:
                continue
            if glyph in (LOCKED_GLYPH, OPEN_GLYPH):
                grid[y, x] = DOOR
                door, door_open = (x, y), glyph == OPEN_GLYPH
            else:
                grid[y, x] = lookup[glyph]
    if door is None:
        # only an open door can hide under the agent
        door, door_open = (x_a, y_a), True
        grid[y_a, x_a] = DOOR
    return DoorKeyState(grid=grid, door=door, door_open=door_open, agent=(x_a, y_a), direction=direction,
                        carrying_key=sidecar["carrying_key"], box_toggled=sidecar["box_toggled"],
                        t=sidecar["t"], T=sidecar["T"])


def save_layout(state, path):
    text, sidecar = dump_layout(state)
    with open(path + ".txt", "w") as f:
        f.write(text + "\n")
    with open(path + ".json", "w") as f:
        json.dump(sidecar, f, indent=2)


def read_layout(path):
    with open(path + ".txt") as f:
        text = f.read()
    with open(path + ".json") as f:
        sidecar = json.load(f)
    return load_layout(text, sidecar)
