"""Learnable Point Drop: a DQN that picks which region of a scan to thin out, and how much.

The policy acts on a discrete space of (depth band x azimuth sector x drop
ratio) cells plus a no-op. Its reward is the rise in segmentation loss plus
mean prediction entropy caused by the drop.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .augment import AugmentSpec, compose_sj
from .errors import EmptyInputError, NumericError, ShapeError
from .pointcloud import LabelArray, PointCloud, azimuth_of
from .rng import derive_seed, make_rng
from .surrogate import (SurrogateModel, TrainConfig, epoch_order, featurize, lr_at,
                        sgd_on_scene, step_seed)

LOG_HEADER = ("scene_id", "action", "l_aug", "h_aug", "l_lpd", "h_lpd", "reward", "epsilon")


# -- entropy -----------------------------------------------------------------

def point_entropies(logits: np.ndarray) -> np.ndarray:
    """Shannon entropy (nats) of softmax(logits) for every row."""
    logits = np.asarray(logits, dtype=np.float64)
    logp = nn.log_softmax(logits)
    h = -(np.exp(logp) * logp).sum(axis=1)
    return np.minimum(h, math.log(logits.shape[1]))


def mean_entropy(logits: np.ndarray) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise EmptyInputError("entropy of an empty logit set is undefined")
    return float(point_entropies(logits).mean())


# -- action space ------------------------------------------------------------

@dataclass(frozen=True)
class ActionSpace:
    depth_bounds: tuple = (0.0, 10.0, 25.0, 50.0, math.inf)
    sectors: int = 8
    ratios: tuple = (0.25, 0.5, 0.75, 0.9)

    def __post_init__(self):
        b = self.depth_bounds
        if len(b) < 2 or b[0] != 0 or b[-1] != math.inf or any(x >= y for x, y in zip(b, b[1:])):
            raise ShapeError("depth bounds must rise strictly from 0 to inf")
        if self.sectors < 1 or not self.ratios or not all(0 < r <= 1 for r in self.ratios):
            raise ShapeError("need >= 1 sector and ratios in (0, 1]")

    @property
    def bands(self) -> int:
        return len(self.depth_bounds) - 1

    @property
    def cells(self) -> int:
        return self.bands * self.sectors

    @property
    def size(self) -> int:
        return self.cells * len(self.ratios) + 1

    @property
    def noop(self) -> int:
        return self.size - 1

    @property
    def state_width(self) -> int:
        return 2 + 3 * self.cells

    def decode(self, action: int):
        """(cell, ratio) of an action, or None for the no-op."""
        action = int(action)
        if not 0 <= action < self.size:
            raise ShapeError(f"action {action} outside [0, {self.size})")
        if action == self.noop:
            return None
        cell, k = divmod(action, len(self.ratios))
        return cell, self.ratios[k]

    def encode(self, band: int, sector: int, ratio_index: int) -> int:
        return (band * self.sectors + sector) * len(self.ratios) + ratio_index

    def cell_of(self, cloud: PointCloud) -> np.ndarray:
        """Cell id (band * sectors + sector) of every point."""
        bounds = np.asarray(self.depth_bounds[1:-1], dtype=np.float64)
        band = np.searchsorted(bounds, cloud.ranges, side="right")
        theta = azimuth_of(cloud.x, cloud.y)
        theta = np.where((cloud.x == 0) & (cloud.y == 0), 0.0, theta)
        sector = np.floor((theta + np.pi) * (self.sectors / (2 * np.pi))).astype(np.int64)
        sector %= self.sectors
        return band * self.sectors + sector

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depth_bounds"] = [b if math.isfinite(b) else "inf" for b in self.depth_bounds]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ActionSpace":
        return cls(tuple(float(b) for b in d["depth_bounds"]), int(d["sectors"]),
                   tuple(float(r) for r in d["ratios"]))


def build_state(l_aug: float, h_aug: float, cloud: PointCloud, entropies: np.ndarray,
                space: ActionSpace, range_scale: float = 50.0) -> np.ndarray:
    """[L, H] followed by (count fraction, mean range / range_scale, mean entropy) per cell."""
    state = np.zeros(space.state_width)
    state[0], state[1] = l_aug, h_aug
    if cloud.n:
        cells = space.cell_of(cloud)
        k = space.cells
        counts = np.bincount(cells, minlength=k).astype(np.float64)
        safe = np.maximum(counts, 1.0)
        stats = np.stack([counts / cloud.n,
                          np.bincount(cells, cloud.ranges, k) / safe / range_scale,
                          np.bincount(cells, entropies, k) / safe], axis=1)
        state[2:] = stats.reshape(-1)
    if not np.all(np.isfinite(state)):
        raise NumericError("state contains non-finite values")
    return state


def apply_drop_action(cloud: PointCloud, labels: LabelArray, action: int, space: ActionSpace,
                      seed: int) -> tuple[PointCloud, LabelArray]:
    """Drop round(m * ratio) of the m points in the action's cell; others untouched."""
    decoded = space.decode(action)
    if decoded is None:
        return cloud, labels
    cell, ratio = decoded
    members = np.flatnonzero(space.cell_of(cloud) == cell)
    k = int(round(members.size * ratio))
    if k == 0:
        return cloud, labels
    keep = np.ones(cloud.n, dtype=bool)
    keep[members[make_rng(seed).permutation(members.size)[:k]]] = False
    return cloud.take(keep), labels.take(keep)


# -- reward ------------------------------------------------------------------

@dataclass(frozen=True)
class RewardRecord:
    l_aug: float
    h_aug: float
    l_lpd: float
    h_lpd: float


def compute_reward(rec: RewardRecord) -> float:
    return (rec.l_lpd + rec.h_lpd) - (rec.l_aug + rec.h_aug)


# -- agent -------------------------------------------------------------------

@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool = True


class ReplayBuffer:
    """Fixed-capacity ring; once full, each push overwrites the oldest entry."""

    def __init__(self, capacity: int = 10_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, t: Transition) -> None:
        if not math.isfinite(t.reward):
            raise NumericError("transition reward is not finite")
        if len(self._items) < self.capacity:
            self._items.append(t)
        else:
            self._items[self._next] = t
        self._next = (self._next + 1) % self.capacity

    def items(self) -> list:
        """Contents oldest first."""
        if len(self._items) < self.capacity:
            return list(self._items)
        return self._items[self._next:] + self._items[:self._next]

    def sample(self, rng: np.random.Generator, k: int) -> list:
        idx = rng.integers(0, len(self._items), size=k)
        return [self._items[i] for i in idx]


@dataclass
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.05
    decay_steps: int = 1

    def __call__(self, step: int) -> float:
        if self.decay_steps <= 0 or step >= self.decay_steps:
            return self.end
        return self.start + (self.end - self.start) * step / self.decay_steps


@dataclass(eq=False)
class QAgent:
    online: nn.DenseNet
    target: nn.DenseNet
    replay: ReplayBuffer
    epsilon: float = 1.0
    gamma: float = 0.0
    sync_period: int = 200
    clip_norm: float = 100.0
    updates: int = 0

    def __post_init__(self):
        if self.online.sizes != self.target.sizes:
            raise ShapeError("online and target networks differ in architecture")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")


def make_agent(space: ActionSpace, hidden=(64,), seed: int = 0, capacity: int = 10_000,
               gamma: float = 0.0, sync_period: int = 200, epsilon: float = 1.0) -> QAgent:
    """Q-network with a zeroed output layer, so untried actions start at Q = 0
    instead of at random values far larger than typical rewards."""
    online = nn.init_net((space.state_width, *hidden, space.size), derive_seed(seed, 0, "q-init"))
    online.weights[-1][...] = 0.0
    return QAgent(online, online.clone(), ReplayBuffer(capacity), epsilon, gamma, sync_period)


def q_values(agent: QAgent, state: np.ndarray) -> np.ndarray:
    return nn.forward(agent.online, state)[0]


def greedy_action(agent: QAgent, state: np.ndarray) -> int:
    # argmax returns the first maximum, i.e. the lowest action id on ties
    return int(np.argmax(q_values(agent, state)))


def select_action(agent: QAgent, state: np.ndarray, rng: np.random.Generator) -> int:
    """Epsilon-greedy; one uniform draw decides explore vs exploit."""
    n_actions = agent.online.sizes[-1]
    if rng.random() < agent.epsilon:
        return int(rng.integers(n_actions))
    return greedy_action(agent, state)


def agent_train_step(agent: QAgent, batch, lr: float) -> float:
    """One DQN regression step on the taken actions; returns the batch loss."""
    if not batch:
        raise EmptyInputError("empty transition batch")
    states = np.stack([t.state for t in batch])
    actions = np.array([t.action for t in batch], dtype=np.int64)
    rewards = np.array([t.reward for t in batch], dtype=np.float64)
    terminal = np.array([t.terminal for t in batch], dtype=bool)
    targets = rewards.copy()
    if agent.gamma != 0:
        live = ~terminal
        if live.any():
            nxt = np.stack([batch[i].next_state for i in np.flatnonzero(live)])
            targets[live] += agent.gamma * nn.forward(agent.target, nxt).max(axis=1)
    if not np.all(np.isfinite(targets)):
        raise NumericError("non-finite Q target")
    q, inputs = nn.forward_cached(agent.online, states)
    rows = np.arange(len(batch))
    err = q[rows, actions] - targets
    grad_out = np.zeros_like(q)
    grad_out[rows, actions] = 2.0 * err / len(batch)
    grads = nn.backward(agent.online, inputs, grad_out)
    nn.clip_and_step(agent.online, grads, lr, agent.clip_norm)
    agent.updates += 1
    if agent.updates % agent.sync_period == 0:
        nn.copy_params(agent.online, agent.target)
    return float(np.mean(err * err))


def save_agent(agent: QAgent, space: ActionSpace, path) -> None:
    from .storage import atomic_write_bytes, atomic_write_text
    atomic_write_bytes(path, nn.save_bytes(agent.online))
    meta = {"action_space": space.to_dict(), "gamma": agent.gamma,
            "sync_period": agent.sync_period, "epsilon": agent.epsilon,
            "updates": agent.updates, "sizes": list(agent.online.sizes)}
    atomic_write_text(str(path) + ".json", json.dumps(meta, indent=2, sort_keys=True))


def load_agent(path) -> tuple[QAgent, ActionSpace]:
    with open(path, "rb") as fh:
        online = nn.load_bytes(fh.read())
    with open(str(path) + ".json") as fh:
        meta = json.load(fh)
    agent = QAgent(online, online.clone(), ReplayBuffer(), meta["epsilon"], meta["gamma"],
                   meta["sync_period"], updates=meta["updates"])
    return agent, ActionSpace.from_dict(meta["action_space"])


# -- pipeline ----------------------------------------------------------------

@dataclass(frozen=True)
class LpdConfig:
    space: ActionSpace = field(default_factory=ActionSpace)
    sj: AugmentSpec = field(default_factory=AugmentSpec)
    policy: str = "agent"  # agent | noop | random
    train_agent: bool = True
    lr: float = 0.1
    batch_size: int = 32
    updates_per_step: int = 4
    warmup: int = 32
    hidden: tuple = (64,)
    gamma: float = 0.0
    sync_period: int = 200
    capacity: int = 10_000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.5
    range_scale: float = 50.0
    update_on_sj_loss: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.policy not in ("agent", "noop", "random"):
            raise ValueError(f"unknown policy {self.policy!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["space"] = self.space.to_dict()
        d["sj"] = self.sj.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LpdConfig":
        d = dict(d)
        if "space" in d:
            d["space"] = ActionSpace.from_dict(d["space"])
        if "sj" in d:
            d["sj"] = AugmentSpec.from_dict(d["sj"])
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


@dataclass(frozen=True)
class LogRow:
    scene_id: str
    action: int
    l_aug: float
    h_aug: float
    l_lpd: float
    h_lpd: float
    reward: float
    epsilon: float


@dataclass
class PipelineResult:
    surrogate: SurrogateModel
    agent: QAgent
    log: list
    loss_trace: list


def _loss_and_entropy(model: SurrogateModel, cloud: PointCloud, labels: LabelArray):
    feats = featurize(cloud, model.features)
    logits = nn.forward(model.net, feats)
    loss, _ = nn.cross_entropy(logits, labels.semantic, model.ignore_label)
    ent = point_entropies(logits)
    return feats, loss, ent


def _has_labels(labels: LabelArray) -> bool:
    return bool(np.any(labels.semantic != labels.ignore_label))


def measure_augmented(model: SurrogateModel, cloud: PointCloud, labels: LabelArray,
                      sj: AugmentSpec, space: ActionSpace, sj_seed: int,
                      range_scale: float = 50.0) -> dict:
    """Apply SJ and compute L_aug, H_aug and the LPD state."""
    aug = compose_sj(cloud, sj.with_seed(sj_seed)) if sj.any_enabled else cloud
    feats, l_aug, ent = _loss_and_entropy(model, aug, labels)
    h_aug = float(ent.mean())
    state = build_state(l_aug, h_aug, aug, ent, space, range_scale)
    return dict(aug=aug, aug_features=feats, l_aug=l_aug, h_aug=h_aug, state=state)


def measure_drop(model: SurrogateModel, measured: dict, labels: LabelArray, action: int,
                 space: ActionSpace, drop_seed: int, range_scale: float = 50.0) -> dict:
    """Apply a drop action to the augmented sample and score it."""
    aug = measured["aug"]
    dropped, dlabels = apply_drop_action(aug, labels, action, space, drop_seed)
    if dropped.n == 0 or not _has_labels(dlabels):
        # nothing left to score: fall back to the augmented sample
        dropped, dlabels = aug, labels
    feats, l_lpd, ent = _loss_and_entropy(model, dropped, dlabels)
    rec = RewardRecord(measured["l_aug"], measured["h_aug"], l_lpd, float(ent.mean()))
    next_state = build_state(rec.l_lpd, rec.h_lpd, dropped, ent, space, range_scale)
    return dict(action=int(action), record=rec, next_state=next_state, dropped=dropped,
                labels=dlabels, features=feats)


def drop_step(model: SurrogateModel, cloud: PointCloud, labels: LabelArray, sj: AugmentSpec,
              space: ActionSpace, choose, sj_seed: int, drop_seed: int,
              range_scale: float = 50.0) -> dict:
    """SJ, measure, ``choose(state) -> action``, drop, measure again."""
    measured = measure_augmented(model, cloud, labels, sj, space, sj_seed, range_scale)
    action = int(choose(measured["state"]))
    out = measure_drop(model, measured, labels, action, space, drop_seed, range_scale)
    return {**measured, **out}


def run_training_pipeline(scenes, surrogate: SurrogateModel, agent: QAgent,
                          train_cfg: TrainConfig, cfg: LpdConfig,
                          scene_ids=None) -> PipelineResult:
    """SJ -> loss/entropy -> LPD state -> drop -> loss/entropy -> reward -> updates.

    Surrogate SGD seeds and scene order come from ``train_cfg`` exactly as in
    ``train_surrogate``; LPD draws come from ``cfg.seed``.
    """
    scenes = list(scenes)
    if not scenes:
        raise EmptyInputError("no training scenes")
    ids = list(scene_ids) if scene_ids is not None else [f"{i:06d}" for i in range(len(scenes))]
    space = cfg.space
    if agent.online.sizes[0] != space.state_width or agent.online.sizes[-1] != space.size:
        raise ShapeError("agent network does not match the action space")
    n = len(scenes)
    total = train_cfg.epochs * n
    schedule = EpsilonSchedule(cfg.eps_start, cfg.eps_end, int(cfg.eps_decay_fraction * total))
    log, trace = [], []
    step = 0
    for epoch in range(train_cfg.epochs):
        losses = []
        for idx in epoch_order(n, train_cfg.seed, epoch):
            idx = int(idx)
            cloud, labels = scenes[idx]
            agent.epsilon = schedule(step)
            action_rng = make_rng(derive_seed(cfg.seed, step, "action"))
            if cfg.policy == "agent":
                choose = lambda s: select_action(agent, s, action_rng)  # noqa: E731
            elif cfg.policy == "noop":
                choose = lambda s: space.noop  # noqa: E731
            else:
                choose = lambda s: int(action_rng.integers(space.size))  # noqa: E731
            out = drop_step(surrogate, cloud, labels, cfg.sj, space, choose,
                            derive_seed(cfg.seed, step, "sj"),
                            derive_seed(cfg.seed, step, "drop"), cfg.range_scale)
            rec = out["record"]
            reward = compute_reward(rec)
            if cfg.train_agent and cfg.policy == "agent":
                agent.replay.push(Transition(out["state"], out["action"], reward,
                                             out["next_state"], terminal=agent.gamma == 0))
                if len(agent.replay) >= max(cfg.warmup, 1):
                    replay_rng = make_rng(derive_seed(cfg.seed, step, "replay"))
                    for _ in range(cfg.updates_per_step):
                        agent_train_step(agent, agent.replay.sample(replay_rng, cfg.batch_size),
                                         cfg.lr)
            if cfg.update_on_sj_loss:
                sgd_on_scene(surrogate, out["aug_features"], labels, train_cfg,
                             derive_seed(train_cfg.seed, step, "surrogate-sj"),
                             lr_at(train_cfg, epoch))
            losses.append(sgd_on_scene(surrogate, out["features"], out["labels"], train_cfg,
                                       step_seed(train_cfg.seed, epoch, n, idx),
                                       lr_at(train_cfg, epoch)))
            log.append(LogRow(ids[idx], out["action"], rec.l_aug, rec.h_aug, rec.l_lpd,
                              rec.h_lpd, reward, agent.epsilon))
            step += 1
        trace.append(float(np.mean(losses)))
    return PipelineResult(surrogate, agent, log, trace)


def evaluate_policies(model: SurrogateModel, agent: QAgent, scenes, cfg: LpdConfig,
                      seed: int, policies=("greedy", "random")) -> dict:
    """Rewards of frozen policies on each scene; nothing is trained.

    All policies see the same SJ sample and drop seed per scene. 'random'
    draws uniformly over the whole action space, no-op included.
    """
    space = cfg.space
    out = {p: [] for p in policies}
    for i, (cloud, labels) in enumerate(scenes):
        measured = measure_augmented(model, cloud, labels, cfg.sj, space,
                                     derive_seed(seed, i, "eval-sj"), cfg.range_scale)
        for p in policies:
            if p == "greedy":
                action = greedy_action(agent, measured["state"])
            elif p == "random":
                action = int(make_rng(derive_seed(seed, i, "eval-action")).integers(space.size))
            else:
                raise ValueError(f"unknown evaluation policy {p!r}")
            res = measure_drop(model, measured, labels, action, space,
                               derive_seed(seed, i, "eval-drop"), cfg.range_scale)
            out[p].append(compute_reward(res["record"]))
    return {p: np.array(v) for p, v in out.items()}


def evaluate_policy(model: SurrogateModel, agent: QAgent, scenes, cfg: LpdConfig,
                    policy: str, seed: int) -> np.ndarray:
    return evaluate_policies(model, agent, scenes, cfg, seed, (policy,))[policy]


def log_to_csv(rows) -> str:
    """Episode log; floats use repr so every value reparses exactly."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_HEADER)
    for r in rows:
        w.writerow([r.scene_id, r.action, repr(r.l_aug), repr(r.h_aug), repr(r.l_lpd),
                    repr(r.h_lpd), repr(r.reward), repr(r.epsilon)])
    return buf.getvalue()


def log_from_csv(text: str) -> list:
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != LOG_HEADER:
        raise ValueError(f"unexpected episode-log header {header}")
    return [LogRow(row[0], int(row[1]), *map(float, row[2:])) for row in reader]
