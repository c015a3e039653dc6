"""Grid world: entity placement, primitive behaviors, condition predicates.

Positions are integer cells on a square grid of half-extent
``grid_half_extent`` centered at the origin; the hub sits at the origin. One
world is owned by exactly one trial and all agent actions within a step are
applied sequentially, so no internal locking exists.

The primitive-behavior style is a config knob: with ``ppa_primitives`` the
carry/drop composites succeed when their goal already holds (already
carrying, hands already empty); the nominal variant fails instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from random import Random

from .btree import TickStatus, TickTrace, TreeEvaluationError

__all__ = [
    "Task",
    "WorldConfig",
    "WorldError",
    "WorldObject",
    "Agent",
    "World",
    "init_world",
    "eval_condition",
    "execute_action",
    "task_performance",
]

FORAGING = "Foraging"
NEST_MAINTENANCE = "NestMaintenance"
TASKS = (FORAGING, NEST_MAINTENANCE)

FOOD = "Food"
DEBRIS = "Debris"


class Task:
    """Task name constants."""

    FORAGING = FORAGING
    NEST_MAINTENANCE = NEST_MAINTENANCE


class WorldError(ValueError):
    """Invalid world configuration or placement."""


@dataclass(frozen=True)
class WorldConfig:
    grid_half_extent: int = 50
    hub_radius: float = 10.0
    site_radius: float = 10.0
    site_distance: float = 30.0
    boundary_radius: float = 30.0
    object_count: int | None = None  # None: equals population at init
    agent_speed: int = 2
    perception_range: int = 5  # Chebyshev; shared by sensing and gene exchange
    obstacles: tuple[tuple[tuple[int, int], float], ...] = ()
    traps: tuple[tuple[tuple[int, int], float], ...] = ()
    ppa_primitives: bool = True

    def validate(self):
        if self.hub_radius <= 0 or self.site_radius <= 0 or self.boundary_radius <= 0:
            raise WorldError("radii must be positive")
        if self.agent_speed <= 0 or self.perception_range <= 0:
            raise WorldError("agent_speed and perception_range must be positive")
        if self.site_distance < self.hub_radius + self.site_radius:
            raise WorldError(
                "hub and site footprints overlap: site_distance "
                f"{self.site_distance} < {self.hub_radius + self.site_radius}"
            )


@dataclass
class WorldObject:
    id: int
    kind: str  # Food | Debris
    position: tuple[int, int] | None  # None while carried
    carried_by: int | None = None


class Agent:
    """Physical agent body; evolutionary state lives on subclasses."""

    __slots__ = ("id", "position", "heading", "inventory", "visited", "alive",
                 "visited_hub", "visited_site")

    def __init__(self, agent_id: int, position: tuple[int, int]):
        self.id = agent_id
        self.position = position
        self.heading = (0, 0)
        self.inventory: list[WorldObject] = []
        self.visited = {position}
        self.alive = True
        self.visited_hub = False
        self.visited_site = False

    def carrying_kind(self, kind: str) -> bool:
        return any(o.kind == kind for o in self.inventory)


CARRY_CAPACITY = 1


class World:
    """Grid environment with hub, optional site, movable objects, and agents."""

    def __init__(self, config: WorldConfig, task: str, rng: Random, population: int,
                 agent_factory=Agent):
        config.validate()
        if task not in TASKS:
            raise WorldError(f"unknown task {task!r}")
        if population <= 0:
            raise WorldError("population must be positive")
        self.config = config
        self.task = task
        self.rng = rng
        self.population = population
        self._agent_factory = agent_factory
        self.hub_center = (0, 0)
        self.site_center: tuple[int, int] | None = None
        self.objects: list[WorldObject] = []
        self.agents: list[Agent] = []
        self._cell_objects: dict[tuple[int, int], list[WorldObject]] = {}
        self._buckets: dict[tuple[int, int], list[Agent]] = {}
        self._place_entities()

    # ------------------------------------------------------------------ setup

    def _place_entities(self):
        cfg = self.config
        count = cfg.object_count if cfg.object_count is not None else self.population
        if count <= 0:
            raise WorldError("object_count must be positive")
        if self.task == FORAGING:
            self.site_center = self._cell_on_circle(cfg.site_distance)
            for i in range(count):
                pos = self._cell_in_disc(self.site_center, cfg.site_radius)
                self._add_object(WorldObject(i, FOOD, pos))
        else:
            for i in range(count):
                pos = self._cell_in_disc(self.hub_center, cfg.hub_radius)
                self._add_object(WorldObject(i, DEBRIS, pos))
        for i in range(self.population):
            spawn = self._cell_in_disc(self.hub_center, cfg.hub_radius)
            agent = self._agent_factory(i, spawn)
            agent.visited_hub = True
            self.agents.append(agent)

    def _cell_on_circle(self, radius: float) -> tuple[int, int]:
        """Integer cell closest to `radius` from origin near a random angle."""
        theta = self.rng.uniform(0.0, 2.0 * math.pi)
        cx, cy = radius * math.cos(theta), radius * math.sin(theta)
        best, best_err = None, None
        for dx in range(-2, 3):
            for dy in range(-2, 3):
                cand = (round(cx) + dx, round(cy) + dy)
                err = abs(math.hypot(*cand) - radius)
                if best_err is None or err < best_err:
                    best, best_err = cand, err
        return best

    def _cell_in_disc(self, center: tuple[int, int], radius: float) -> tuple[int, int]:
        r = int(radius)
        r2 = radius * radius
        while True:
            x = center[0] + self.rng.randint(-r, r)
            y = center[1] + self.rng.randint(-r, r)
            dx, dy = x - center[0], y - center[1]
            if dx * dx + dy * dy <= r2:
                return self._clamp((x, y))

    def _add_object(self, obj: WorldObject):
        self.objects.append(obj)
        self._cell_objects.setdefault(obj.position, []).append(obj)

    # ------------------------------------------------------------- geometry

    def _clamp(self, pos: tuple[int, int]) -> tuple[int, int]:
        h = self.config.grid_half_extent
        return (min(h, max(-h, pos[0])), min(h, max(-h, pos[1])))

    def in_hub(self, pos: tuple[int, int]) -> bool:
        return _in_disc(pos, self.hub_center, self.config.hub_radius)

    def in_site(self, pos: tuple[int, int]) -> bool:
        return self.site_center is not None and _in_disc(
            pos, self.site_center, self.config.site_radius
        )

    def _blocked(self, pos: tuple[int, int]) -> bool:
        return any(_in_disc(pos, c, r) for c, r in self.config.obstacles)

    def _in_trap(self, pos: tuple[int, int]) -> bool:
        return any(_in_disc(pos, c, r) for c, r in self.config.traps)

    def _path_blocked(self, start, end) -> bool:
        for cell in _line_cells(start, end):
            if self._blocked(cell):
                return True
        return False

    # ------------------------------------------------------- agent indexing

    def rebuild_agent_index(self):
        """Bucket alive agents by perception-sized cells; call once per step."""
        r = self.config.perception_range
        buckets: dict[tuple[int, int], list[Agent]] = {}
        for a in self.agents:
            if a.alive:
                key = (a.position[0] // r, a.position[1] // r)
                buckets.setdefault(key, []).append(a)
        self._buckets = buckets

    def neighbors_of(self, agent: Agent) -> list[Agent]:
        """Alive agents within Chebyshev perception range, ascending id."""
        r = self.config.perception_range
        x, y = agent.position
        bx, by = x // r, y // r
        found = []
        for kx in (bx - 1, bx, bx + 1):
            for ky in (by - 1, by, by + 1):
                for other in self._buckets.get((kx, ky), ()):
                    if other is agent:
                        continue
                    ox, oy = other.position
                    if abs(ox - x) <= r and abs(oy - y) <= r:
                        found.append(other)
        found.sort(key=lambda a: a.id)
        return found

    # ----------------------------------------------------------- conditions

    def eval_condition(self, name: str, agent: Agent) -> bool:
        base, _, obj = name.partition("_")
        try:
            fn = _CONDITIONS[base]
        except KeyError:
            raise TreeEvaluationError(f"unknown condition {name!r}") from None
        return fn(self, agent, obj)

    # -------------------------------------------------------------- actions

    def execute_action(self, name: str, agent: Agent, rng: Random | None,
                       trace: TickTrace | None = None) -> TickStatus:
        if not agent.alive:
            return TickStatus.FAILURE
        base, _, obj = name.partition("_")
        try:
            fn = _ACTIONS[base]
        except KeyError:
            raise TreeEvaluationError(f"unknown action {name!r}") from None
        return fn(self, agent, obj, rng if rng is not None else self.rng, trace)

    def _nearest_target(self, agent: Agent, obj: str) -> tuple[int, int] | None:
        if obj == "Hub":
            return self.hub_center
        if obj == "Sites":
            return self.site_center
        if obj in (FOOD, DEBRIS):
            best, best_d = None, None
            ax, ay = agent.position
            for o in self.objects:
                if o.kind == obj and o.position is not None:
                    d = (o.position[0] - ax) ** 2 + (o.position[1] - ay) ** 2
                    if best_d is None or d < best_d:
                        best, best_d = o.position, d
            return best
        return None

    def _move(self, agent: Agent, dx: int, dy: int, trace: TickTrace | None) -> TickStatus:
        if dx == 0 and dy == 0:
            return TickStatus.SUCCESS
        target = self._clamp((agent.position[0] + dx, agent.position[1] + dy))
        if self.config.obstacles and self._path_blocked(agent.position, target):
            # bug following: slide parallel to the surface, trying left then right
            for px, py in ((-dy, dx), (dy, -dx)):
                side = self._clamp((agent.position[0] + px, agent.position[1] + py))
                if not self._path_blocked(agent.position, side):
                    target = side
                    break
            else:
                return TickStatus.FAILURE
        if target == agent.position:
            return TickStatus.SUCCESS
        agent.heading = (target[0] - agent.position[0], target[1] - agent.position[1])
        agent.position = target
        agent.visited.add(target)
        if not agent.visited_hub and self.in_hub(target):
            agent.visited_hub = True
        if not agent.visited_site and self.in_site(target):
            agent.visited_site = True
        if self.config.traps and self._in_trap(target):
            agent.alive = False
            return TickStatus.FAILURE
        if trace is not None and agent.inventory:
            trace.actions_executed += 1  # carry-step
        return TickStatus.SUCCESS

    def _step_toward(self, agent: Agent, target: tuple[int, int], sign: int,
                     rng: Random, trace: TickTrace | None) -> TickStatus:
        speed = self.config.agent_speed
        ax, ay = agent.position
        vx, vy = target[0] - ax, target[1] - ay
        if vx == 0 and vy == 0:
            if sign > 0:
                return TickStatus.SUCCESS  # already there
            theta = rng.uniform(0.0, 2.0 * math.pi)
            vx, vy = math.cos(theta), math.sin(theta)
        norm = math.hypot(vx, vy)
        scale = sign * min(speed, norm if sign > 0 else speed) / norm
        dx = round(vx * scale)
        dy = round(vy * scale)
        return self._move(agent, dx, dy, trace)

    # ------------------------------------------------------------- carrying

    def _pickup(self, agent: Agent, obj_kind: str, trace: TickTrace | None) -> bool:
        here = self._cell_objects.get(agent.position)
        if not here:
            return False
        for o in here:
            if o.kind == obj_kind:
                here.remove(o)
                if not here:
                    del self._cell_objects[agent.position]
                o.carried_by = agent.id
                o.position = None
                agent.inventory.append(o)
                if trace is not None:
                    trace.actions_executed += 1  # pickup
                return True
        return False

    def _release(self, agent: Agent, obj_kind: str, trace: TickTrace | None) -> bool:
        for o in agent.inventory:
            if o.kind == obj_kind:
                agent.inventory.remove(o)
                o.carried_by = None
                o.position = agent.position
                self._cell_objects.setdefault(o.position, []).append(o)
                if trace is not None and self._goal_consistent_drop(o):
                    trace.actions_executed += 1
                return True
        return False

    def _goal_consistent_drop(self, obj: WorldObject) -> bool:
        if self.task == FORAGING:
            return obj.kind == FOOD and self.in_hub(obj.position)
        return obj.kind == DEBRIS and not _in_disc(
            obj.position, self.hub_center, self.config.boundary_radius
        )

    # ---------------------------------------------------------- performance

    def task_performance(self) -> float:
        """Fraction of task objects moved to their goal region, in [0, 1]."""
        kind = FOOD if self.task == FORAGING else DEBRIS
        total = 0
        done = 0
        for o in self.objects:
            if o.kind != kind:
                continue
            total += 1
            if o.position is None:
                continue
            if self.task == FORAGING:
                if self.in_hub(o.position):
                    done += 1
            elif not _in_disc(o.position, self.hub_center, self.config.boundary_radius):
                done += 1
        return done / total if total else 0.0

    def object_census(self, kind: str) -> tuple[int, int]:
        placed = sum(1 for o in self.objects if o.kind == kind and o.position is not None)
        carried = sum(1 for o in self.objects if o.kind == kind and o.position is None)
        return placed, carried

    def snapshot(self) -> dict:
        """JSON-ready dump of entity positions and agent states."""
        return {
            "task": self.task,
            "hub": {"center": list(self.hub_center), "radius": self.config.hub_radius},
            "site": None if self.site_center is None else {
                "center": list(self.site_center), "radius": self.config.site_radius,
            },
            "objects": [
                {"id": o.id, "kind": o.kind,
                 "position": None if o.position is None else list(o.position),
                 "carried_by": o.carried_by}
                for o in self.objects
            ],
            "agents": [
                {"id": a.id, "position": list(a.position), "alive": a.alive,
                 "carrying": [o.id for o in a.inventory],
                 "visited": len(a.visited)}
                for a in self.agents
            ],
        }


# ------------------------------------------------------------------ helpers

def _in_disc(pos, center, radius) -> bool:
    dx, dy = pos[0] - center[0], pos[1] - center[1]
    return dx * dx + dy * dy <= radius * radius


def _line_cells(start, end):
    """Integer cells along the segment, Bresenham style, excluding start."""
    x, y = start
    ex, ey = end
    dx, dy = abs(ex - x), abs(ey - y)
    sx = 1 if ex > x else -1
    sy = 1 if ey > y else -1
    err = dx - dy
    cells = []
    while (x, y) != (ex, ey):
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x += sx
        if e2 < dx:
            err += dx
            y += sy
        cells.append((x, y))
    return cells


# ------------------------------------------------------ condition registry

def _cond_neighbour_objects(world: World, agent: Agent, obj: str) -> bool:
    r = world.config.perception_range
    x, y = agent.position
    if obj == "Hub":
        return math.hypot(x, y) <= world.config.hub_radius + r
    if obj == "Sites":
        if world.site_center is None:
            return False
        sx, sy = world.site_center
        return math.hypot(x - sx, y - sy) <= world.config.site_radius + r
    if obj in (FOOD, DEBRIS):
        for o in world.objects:
            if o.kind == obj and o.position is not None:
                if abs(o.position[0] - x) <= r and abs(o.position[1] - y) <= r:
                    return True
        return False
    if obj == "Obstacles":
        return any(math.hypot(x - c[0], y - c[1]) <= rad + r
                   for c, rad in world.config.obstacles)
    if obj == "Trap":
        return any(math.hypot(x - c[0], y - c[1]) <= rad + r
                   for c, rad in world.config.traps)
    raise TreeEvaluationError(f"NeighbourObjects has no object {obj!r}")


def _cond_is_visited_before(world: World, agent: Agent, obj: str) -> bool:
    if obj == "Hub":
        return agent.visited_hub
    if obj == "Sites":
        return agent.visited_site
    raise TreeEvaluationError(f"IsVisitedBefore has no object {obj!r}")


def _cond_is_dropable(world: World, agent: Agent, obj: str) -> bool:
    if world.task == NEST_MAINTENANCE:
        # dropping "outside": anywhere beyond the nest boundary qualifies
        if obj == "Hub":
            return not _in_disc(agent.position, world.hub_center,
                                world.config.boundary_radius)
        if obj == "Sites":
            return False
    if obj == "Hub":
        return world.in_hub(agent.position)
    if obj == "Sites":
        return world.in_site(agent.position)
    raise TreeEvaluationError(f"IsDropable has no object {obj!r}")


def _cond_is_carrying(world: World, agent: Agent, obj: str) -> bool:
    return agent.carrying_kind(obj)


def _cond_is_carryable(world: World, agent: Agent, obj: str) -> bool:
    here = world._cell_objects.get(agent.position)
    return bool(here) and any(o.kind == obj for o in here)


def _cond_can_move(world: World, agent: Agent, obj: str) -> bool:
    if not agent.alive:
        return False
    if not world.config.obstacles:
        return True
    x, y = agent.position
    return any(
        not world._blocked(world._clamp((x + dx, y + dy)))
        for dx in (-1, 0, 1) for dy in (-1, 0, 1) if (dx, dy) != (0, 0)
    )


def _cond_dummy(world: World, agent: Agent, obj: str) -> bool:
    return True


_CONDITIONS = {
    "NeighbourObjects": _cond_neighbour_objects,
    "IsVisitedBefore": _cond_is_visited_before,
    "IsDropable": _cond_is_dropable,
    "IsCarrying": _cond_is_carrying,
    "AlreadyCarrying": _cond_is_carrying,
    "IsCarryable": _cond_is_carryable,
    "CanMove": _cond_can_move,
    "DummyNode": _cond_dummy,
}


# --------------------------------------------------------- action registry

def _act_move_towards(world, agent, obj, rng, trace):
    target = world._nearest_target(agent, obj)
    if target is None:
        return TickStatus.FAILURE
    return world._step_toward(agent, target, 1, rng, trace)


def _act_move_away(world, agent, obj, rng, trace):
    target = world._nearest_target(agent, obj)
    if target is None:
        return TickStatus.FAILURE
    return world._step_toward(agent, target, -1, rng, trace)


def _act_explore(world, agent, obj, rng, trace):
    theta = rng.uniform(0.0, 2.0 * math.pi)
    speed = world.config.agent_speed
    dx = round(speed * math.cos(theta))
    dy = round(speed * math.sin(theta))
    return world._move(agent, dx, dy, trace)


def _act_single_carry(world, agent, obj, rng, trace):
    if world.config.ppa_primitives and agent.carrying_kind(obj):
        return TickStatus.SUCCESS  # goal already met
    if len(agent.inventory) >= CARRY_CAPACITY:
        return TickStatus.FAILURE
    if world._pickup(agent, obj, trace):
        return TickStatus.SUCCESS
    return TickStatus.FAILURE


def _act_drop(world, agent, obj, rng, trace):
    if not agent.carrying_kind(obj):
        if world.config.ppa_primitives:
            return TickStatus.SUCCESS  # nothing held: goal already met
        return TickStatus.FAILURE
    world._release(agent, obj, trace)
    return TickStatus.SUCCESS


_ACTIONS = {
    "MoveTowards": _act_move_towards,
    "MoveAway": _act_move_away,
    "Explore": _act_explore,
    "SingleCarry": _act_single_carry,
    "Drop": _act_drop,
}


# --------------------------------------------------------- module-level ops

def init_world(config: WorldConfig, task: str, rng: Random,
               population: int | None = None, agent_factory=Agent) -> World:
    """Build a world for the given task with seeded entity placement."""
    if population is None:
        population = config.object_count
    if population is None:
        raise WorldError("population not given and object_count unset")
    return World(config, task, rng, population, agent_factory)


def eval_condition(name: str, agent: Agent, world: World) -> bool:
    return world.eval_condition(name, agent)


def execute_action(name: str, agent: Agent, world: World, rng: Random,
                   trace: TickTrace | None = None) -> TickStatus:
    return world.execute_action(name, agent, rng, trace)


def task_performance(world: World, task: str | None = None) -> float:
    if task is not None and task != world.task:
        raise WorldError(f"world runs task {world.task}, not {task}")
    return world.task_performance()
