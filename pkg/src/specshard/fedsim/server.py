"""Server side of the sharded federated loop: planning, sampling, aggregation."""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .. import plans as plans_mod
from ..designs import DesignKind, make_design, make_numpy_style_design, make_rng
from ..errors import ValidationError
from ..metrics import normalized_marginal_entropy
from ..plans import Strategy, collective_discrepancy, plan_collective, plan_unbiased, unbiased_discrepancy
from ..spectra import build_shard, decompose, keep_count
from .model import DenseLayer, FactorizedLayer, LocalHyper, cosine_lr, forward, local_train, loss_and_delta
from .tasks import make_task

# Stream purposes for make_rng(seed, purpose, ...).
_S_TASK, _S_INIT, _S_GROUPS, _S_PARTICIPANTS, _S_SHARD, _S_ORDER, _S_PRISM = range(1, 8)


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "classification"
    input_dim: int = 20
    hidden_dims: tuple = (32, 32)
    n_classes: int = 4
    samples_per_client: int = 64
    dirichlet_alpha: float = 1.0


@dataclass(frozen=True)
class SimulationConfig:
    """Everything a simulation run depends on (besides code)."""

    seed: int = 0
    rounds: int = 200
    clients: int = 10
    participants_per_round: int = 10
    hyper: LocalHyper = field(default_factory=LocalHyper)
    strategy: Strategy = Strategy.COLLECTIVE
    design: DesignKind = DesignKind.CPS
    keep_ratio_groups: tuple = ((0.2, 1.0),)
    task: TaskSpec = field(default_factory=TaskSpec)
    cosine: bool = False
    prism_trials: int = 100_000

    def __post_init__(self):
        if self.rounds < 1 or self.clients < 1:
            raise ValidationError("rounds and clients must be >= 1")
        if not 1 <= self.participants_per_round <= self.clients:
            raise ValidationError("participants_per_round must lie in [1, clients]")
        fractions = [f for _, f in self.keep_ratio_groups]
        if not self.keep_ratio_groups or abs(sum(fractions) - 1.0) > 1e-9:
            raise ValidationError("keep_ratio_groups fractions must sum to 1")
        for r, f in self.keep_ratio_groups:
            if not 0 < r <= 1 or not 0 <= f <= 1:
                raise ValidationError(f"bad keep-ratio group ({r}, {f})")
        if len(self.task.hidden_dims) < 2:
            raise ValidationError("hidden_dims needs >= 2 entries to have a factorized layer")


@dataclass
class ServerModel:
    """Full weights and biases per layer; layers 1..L-2 are factorizable."""

    weights: list
    biases: list

    @property
    def factorized(self):
        return list(range(1, len(self.weights) - 1))

    def copy(self):
        return ServerModel([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def dense_layers(self):
        return [DenseLayer(w, b) for w, b in zip(self.weights, self.biases)]

    def flat(self):
        return np.concatenate([a.ravel() for a in self.weights + self.biases])


@dataclass
class SimulationState:
    model: ServerModel
    task: object
    keep_ratios: np.ndarray


@dataclass
class RoundRecord:
    round: int
    train_loss: float
    train_metric: float
    unbiased_discrepancy: list
    collective_discrepancy: list
    anme_layers: list
    anme: float
    cosine: float = math.nan
    wall_clock: float = 0.0

    def row(self, emit):
        out = {}
        for key in emit:
            if key in ("unbiased_discrepancy", "collective_discrepancy", "anme_layers"):
                for i, v in enumerate(getattr(self, key)):
                    out[f"{key}_{i + 1}"] = v
            else:
                out[key] = getattr(self, key)
        return out


def init_model(dims, rng):
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) / math.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return ServerModel(weights, biases)


def assign_keep_ratios(n_clients, groups, rng):
    """Client keep ratios: group sizes by largest remainder, shuffled over clients."""
    ratios = np.array([r for r, _ in groups], dtype=float)
    fracs = np.array([f for _, f in groups], dtype=float)
    raw = fracs * n_clients
    counts = np.floor(raw).astype(int)
    for k in np.argsort(-(raw - counts), kind="stable")[: n_clients - counts.sum()]:
        counts[k] += 1
    return rng.permutation(np.repeat(ratios, counts))


def init_state(config):
    t = config.task
    task = make_task(t.kind, t.input_dim, config.clients, t.samples_per_client,
                     make_rng(config.seed, _S_TASK), n_classes=t.n_classes,
                     dirichlet_alpha=t.dirichlet_alpha)
    dims = [t.input_dim, *t.hidden_dims, task.output_dim]
    model = init_model(dims, make_rng(config.seed, _S_INIT))
    ratios = assign_keep_ratios(config.clients, config.keep_ratio_groups,
                                make_rng(config.seed, _S_GROUPS))
    return SimulationState(model, task, ratios)


def sample_participants(config, round_index):
    rng = make_rng(config.seed, _S_PARTICIPANTS, round_index)
    return np.sort(rng.choice(config.clients, size=config.participants_per_round, replace=False))


def data_orders(config, round_index, client, size):
    return [make_rng(config.seed, _S_ORDER, round_index, client, epoch).permutation(size)
            for epoch in range(config.hyper.local_epochs)]


def evaluate(model, task):
    x, y = task.pooled()
    out = forward(model.dense_layers(), x)[-1]
    loss, _ = loss_and_delta(out, y, task.kind)
    if task.kind == "classification":
        metric = float(np.mean(out.argmax(axis=1) == y))
    else:
        metric = float(1.0 - np.sum((out - y) ** 2) / np.sum((y - y.mean(axis=0)) ** 2))
    return loss, metric


def aggregate(model, decompositions, client_updates, sizes):
    """Per-term weighted averaging of factor columns, then ``W = U V^T``.

    Args:
        model: server model at the start of the round (not modified).
        decompositions: {layer: SpectralDecomposition} used this round.
        client_updates: list (one per client) of trained layer lists; the
            factorized entries carry their term ``indices``.
        sizes: local dataset sizes D^(c).

    Returns:
        A new ServerModel. Terms no client selected keep their factors;
        dense layers and all biases take the D-weighted mean over clients.
    """
    if not client_updates:
        raise ValidationError("empty round: no client updates")
    sizes = np.asarray(sizes, dtype=np.float64)
    if sizes.size != len(client_updates):
        raise ValidationError("one dataset size per client is required")
    total = sizes.sum()
    new = model.copy()
    for layer_idx in range(len(model.weights)):
        bias = sum(d * upd[layer_idx].bias for d, upd in zip(sizes, client_updates)) / total
        new.biases[layer_idx] = bias
        if layer_idx not in decompositions:
            new.weights[layer_idx] = sum(
                d * upd[layer_idx].weight for d, upd in zip(sizes, client_updates)) / total
            continue
        left, right = decompositions[layer_idx].absorbed_factors()
        num_l = np.zeros_like(left)
        num_r = np.zeros_like(right)
        den = np.zeros(left.shape[1])
        for d, upd in zip(sizes, client_updates):
            layer = upd[layer_idx]
            if layer.left.shape[0] != left.shape[0] or layer.right.shape[0] != right.shape[0]:
                raise ValidationError(f"layer {layer_idx}: factor shape mismatch")
            num_l[:, layer.indices] += d * layer.left
            num_r[:, layer.indices] += d * layer.right
            den[layer.indices] += d
        hit = den > 0
        left[:, hit] = num_l[:, hit] / den[hit]
        right[:, hit] = num_r[:, hit] / den[hit]
        new.weights[layer_idx] = left @ right.T
    return new


def _layer_plans(config, decomposition, groups, layer_idx, round_index):
    """Plan and design for every keep-ratio group present this round."""
    out = {}
    for ratio, members in groups.items():
        C = len(members)
        plan = plans_mod.plan_for_keep_ratio(
            decomposition, ratio, config.strategy, group_size=C,
            rng=make_rng(config.seed, _S_PRISM, round_index, layer_idx, int(round(ratio * 1e6))),
            prism_trials=config.prism_trials)
        if plan.draw_weights is not None:
            design = make_numpy_style_design(plan.draw_weights, plan.sample_size)
        elif plan.is_deterministic:
            design = make_design(DesignKind.DETERMINISTIC, plan.probabilities, plan.sample_size)
        else:
            design = make_design(config.design, plan.probabilities, plan.sample_size)
        out[ratio] = (plan, design)
    return out


def _round_diagnostics(lam, groups):
    """Client-averaged closed-form discrepancies of the two optimal plans."""
    unb, col, weight = 0.0, 0.0, 0
    for ratio, members in groups.items():
        n = keep_count(lam.size, ratio)
        C = len(members)
        pu = plan_unbiased(lam, n)
        pc = plan_collective(lam, n, C)
        unb += C * unbiased_discrepancy(lam, pu.probabilities)
        col += C * collective_discrepancy(lam, pc.probabilities, pc.multipliers, C)
        weight += C
    return unb / weight, col / weight


def fedavg_reference_update(config, model, task, participants, round_index, mode="factorized"):
    """Server update of plain FedAvg from ``model`` on the same clients and data order.

    ``mode="factorized"`` trains every decomposable layer as full-rank factors
    with unit multipliers and averages the factors (the keep-ratio-1 model);
    ``mode="dense"`` trains the ordinary weight matrices. The input model is
    left unchanged.

    Returns:
        (new_model, delta) with ``delta`` the flattened parameter change.
    """
    hyper = config.hyper
    lr = cosine_lr(hyper.learning_rate, round_index - 1, config.rounds)
    factors = {}
    if mode == "factorized":
        for l in model.factorized:
            d = decompose(model.weights[l])
            factors[l] = d.absorbed_factors()
    elif mode != "dense":
        raise ValidationError(f"unknown reference mode {mode!r}")
    trained, sizes = [], []
    for c in participants:
        data = task.clients[c]
        layers = []
        for l, (w, b) in enumerate(zip(model.weights, model.biases)):
            if l in factors:
                left, right = factors[l]
                layers.append(FactorizedLayer(left.copy(), right.copy(), np.ones(left.shape[1]), b.copy()))
            else:
                layers.append(DenseLayer(w.copy(), b.copy()))
        orders = data_orders(config, round_index, int(c), data.size)
        trained.append(local_train(layers, data.x, data.y, task.kind, hyper, lr, orders))
        sizes.append(data.size)
    new = model.copy()
    for l in range(len(model.weights)):
        new.biases[l] = np.average([t[l].bias for t in trained], axis=0, weights=sizes)
        if l in factors:
            left = np.average([t[l].left for t in trained], axis=0, weights=sizes)
            right = np.average([t[l].right for t in trained], axis=0, weights=sizes)
            new.weights[l] = left @ right.T
        else:
            new.weights[l] = np.average([t[l].weight for t in trained], axis=0, weights=sizes)
    return new, new.flat() - model.flat()


def update_cosine_similarity(a, b):
    """Cosine of the angle between two flattened updates; 0 if either is zero."""
    a = np.concatenate([np.ravel(x) for x in a]) if isinstance(a, (list, tuple)) else np.ravel(a)
    b = np.concatenate([np.ravel(x) for x in b]) if isinstance(b, (list, tuple)) else np.ravel(b)
    if a.shape != b.shape:
        raise ValidationError(f"update shapes differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def run_round(state, config, round_index):
    """One communication round; ``round_index`` counts from 1.

    Returns:
        (new_state, RoundRecord).
    """
    started = time.perf_counter()
    model, task = state.model, state.task
    participants = sample_participants(config, round_index)
    groups = {}
    for c in participants:
        groups.setdefault(float(state.keep_ratios[c]), []).append(int(c))
    lr = cosine_lr(config.hyper.learning_rate, round_index - 1, config.rounds)

    decompositions, layer_plans, unb, col, anmes = {}, {}, [], [], []
    for l in model.factorized:
        d = decompose(model.weights[l])
        decompositions[l] = d
        layer_plans[l] = _layer_plans(config, d, groups, l, round_index)
        u, c = _round_diagnostics(d.singular_values, groups)
        unb.append(u)
        col.append(c)
        values = []
        for ratio, members in groups.items():
            plan = layer_plans[l][ratio][0]
            h = normalized_marginal_entropy(plan.probabilities, plan.sample_size)
            if h is not None:
                values.extend([h] * len(members))
        anmes.append(float(np.mean(values)) if values else math.nan)

    updates, sizes = [], []
    for c in participants:
        c = int(c)
        ratio = float(state.keep_ratios[c])
        data = task.clients[c]
        layers = []
        for l, (w, b) in enumerate(zip(model.weights, model.biases)):
            if l not in decompositions:
                layers.append(DenseLayer(w.copy(), b.copy()))
                continue
            plan, design = layer_plans[l][ratio]
            idx = design.sample(make_rng(config.seed, _S_SHARD, round_index, c, l))
            shard = build_shard(decompositions[l], idx, plan.multipliers, ratio)
            layers.append(FactorizedLayer(shard.left, shard.right, shard.multipliers,
                                          b.copy(), shard.indices))
        orders = data_orders(config, round_index, c, data.size)
        updates.append(local_train(layers, data.x, data.y, task.kind, config.hyper, lr, orders))
        sizes.append(data.size)

    new_model = aggregate(model, decompositions, updates, sizes)
    cosine = math.nan
    if config.cosine:
        _, ref_delta = fedavg_reference_update(config, model, task, participants, round_index)
        cosine = update_cosine_similarity(new_model.flat() - model.flat(), ref_delta)
    loss, metric = evaluate(new_model, task)
    defined = [a for a in anmes if not math.isnan(a)]
    record = RoundRecord(
        round=round_index,
        train_loss=loss,
        train_metric=metric,
        unbiased_discrepancy=unb,
        collective_discrepancy=col,
        anme_layers=anmes,
        anme=float(np.mean(defined)) if defined else math.nan,
        cosine=cosine,
        wall_clock=time.perf_counter() - started,
    )
    return SimulationState(new_model, task, state.keep_ratios), record


def simulate(config, state=None):
    """Yield ``(state, record)`` after each of ``config.rounds`` rounds."""
    state = state or init_state(config)
    for r in range(1, config.rounds + 1):
        state, record = run_round(state, config, r)
        yield state, record
