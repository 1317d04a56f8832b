"""Synthetic federated datasets with Dirichlet label skew."""

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError


@dataclass(frozen=True)
class ClientData:
    x: np.ndarray
    y: np.ndarray

    @property
    def size(self):
        return self.x.shape[0]


@dataclass(frozen=True)
class SyntheticTask:
    """Per-client datasets for one synthetic problem.

    ``y`` holds integer labels for classification and real targets of width
    ``output_dim`` for regression.
    """

    kind: str
    input_dim: int
    output_dim: int
    clients: list
    dirichlet_alpha: float = float("inf")

    @property
    def n_clients(self):
        return len(self.clients)

    def pooled(self):
        return (np.concatenate([c.x for c in self.clients]),
                np.concatenate([c.y for c in self.clients]))


def _allocate(size, q, avail):
    """Integer class counts near ``size * q`` without exceeding ``avail``."""
    raw = size * q
    counts = np.minimum(np.floor(raw).astype(np.int64), avail)
    order = np.argsort(-(raw - np.floor(raw)), kind="stable")
    for k in order:
        if counts.sum() >= size:
            break
        if counts[k] < avail[k]:
            counts[k] += 1
    # classes ran dry: top up from the remaining pools, most-wanted first
    for k in np.argsort(-q, kind="stable"):
        short = size - counts.sum()
        if short <= 0:
            break
        counts[k] += min(short, avail[k] - counts[k])
    return counts


def split_dirichlet(labels, n_clients, alpha, rng):
    """Assign sample indices to clients with class priors ~ Dir(alpha * p).

    ``p`` is the pooled class distribution. Clients get equal shares (the
    first ``total % n_clients`` one extra) and every sample goes to exactly
    one client.

    Returns:
        list of index arrays, one per client.
    """
    labels = np.asarray(labels)
    total = labels.size
    if n_clients < 1:
        raise ValidationError("need at least one client")
    if n_clients > total:
        raise ValidationError(f"{n_clients} clients but only {total} samples")
    if not alpha > 0:
        raise ValidationError("dirichlet alpha must be > 0")
    classes, counts = np.unique(labels, return_counts=True)
    p = counts / total
    pools = [rng.permutation(np.flatnonzero(labels == k)) for k in classes]
    taken = np.zeros(classes.size, dtype=np.int64)
    sizes = np.full(n_clients, total // n_clients)
    sizes[: total % n_clients] += 1
    parts = []
    for size in sizes:
        q = rng.dirichlet(alpha * p)
        want = _allocate(int(size), q, counts - taken)
        idx = [pools[k][taken[k]:taken[k] + want[k]] for k in range(classes.size)]
        taken += want
        parts.append(np.sort(np.concatenate(idx)))
    return parts


def make_task(kind, input_dim, n_clients, samples_per_client, rng, n_classes=4,
              output_dim=None, dirichlet_alpha=1.0, class_separation=1.0, noise=1.0):
    """Generate a synthetic federated task.

    Classification: Gaussian classes with random means of scale
    ``class_separation`` and unit noise, balanced pooled labels, split with
    Dirichlet skew. Regression: targets from a random tanh teacher plus
    noise of scale ``0.1 * noise``, split uniformly at random.
    """
    total = n_clients * samples_per_client
    if kind == "classification":
        if n_classes < 2:
            raise ValidationError("classification needs at least two classes")
        means = rng.standard_normal((n_classes, input_dim)) * class_separation
        y = np.arange(total) % n_classes
        x = means[y] + noise * rng.standard_normal((total, input_dim))
        parts = split_dirichlet(y, n_clients, dirichlet_alpha, rng)
        clients = [ClientData(x[i], y[i]) for i in parts]
        return SyntheticTask(kind, input_dim, n_classes, clients, dirichlet_alpha)
    if kind == "regression":
        out = output_dim or n_classes
        hidden = rng.standard_normal((input_dim, 2 * input_dim)) / np.sqrt(input_dim)
        head = rng.standard_normal((2 * input_dim, out)) / np.sqrt(2 * input_dim)
        x = rng.standard_normal((total, input_dim))
        y = np.tanh(x @ hidden) @ head + 0.1 * noise * rng.standard_normal((total, out))
        order = rng.permutation(total).reshape(n_clients, samples_per_client)
        clients = [ClientData(x[np.sort(i)], y[np.sort(i)]) for i in order]
        return SyntheticTask(kind, input_dim, out, clients)
    raise ValidationError(f"unknown task kind {kind!r}")
