"""Dense multi-task network: shared tanh trunk, MFI and OSNR branches.

Everything is written out by hand: forward pass, the weighted two-task
squared-error objective, backpropagation and Adam. Parameters live in one
flat float64 vector; per-layer ``W`` (fan_out x fan_in) and ``b`` are views
into it, so the optimizer works on a single array.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import FileFormatError, NonFinite
from .features import Dataset, decode_osnr

MFI = "mfi"
OSNR = "osnr"
TASKS = (MFI, OSNR)
FORMAT_VERSION = 1


def half(n: int) -> int:
    """Default sizing rule: half of the previous layer, rounded half up."""
    return max(1, (int(n) + 1) // 2)


@dataclass(frozen=True)
class Branch:
    task: str
    hidden_sizes: tuple
    output_size: int
    output_activation: str

    @classmethod
    def for_task(cls, task: str, hidden_sizes) -> "Branch":
        if task == MFI:
            return cls(MFI, tuple(hidden_sizes), 3, "softmax")
        if task == OSNR:
            return cls(OSNR, tuple(hidden_sizes), 1, "linear")
        raise ValueError(f"unknown task {task!r}")


@dataclass(frozen=True)
class MtlTopology:
    input_size: int
    shared_sizes: tuple
    branches: tuple

    def __post_init__(self):
        object.__setattr__(self, "shared_sizes", tuple(int(s) for s in self.shared_sizes))
        object.__setattr__(
            self,
            "branches",
            tuple(b if isinstance(b, Branch) else Branch(**{**b, "hidden_sizes": tuple(b["hidden_sizes"])})
                  for b in self.branches),
        )
        sizes = [self.input_size, *self.shared_sizes]
        for b in self.branches:
            sizes += [*b.hidden_sizes, b.output_size]
        if any(int(s) < 1 for s in sizes):
            raise ValueError(f"all layer sizes must be >= 1: {sizes}")
        tasks = [b.task for b in self.branches]
        if not tasks or len(set(tasks)) != len(tasks) or any(t not in TASKS for t in tasks):
            raise ValueError(f"branches must be distinct tasks from {TASKS}, got {tasks}")

    @classmethod
    def default(cls, input_size: int, shared: int | None = None, branch_hidden: int | None = None) -> "MtlTopology":
        shared = half(input_size) if shared is None else int(shared)
        hidden = half(shared) if branch_hidden is None else int(branch_hidden)
        return cls(input_size, (shared,), (Branch.for_task(MFI, (hidden,)), Branch.for_task(OSNR, (hidden,))))

    @property
    def tasks(self) -> tuple:
        return tuple(b.task for b in self.branches)

    def branch(self, task: str) -> Branch:
        for b in self.branches:
            if b.task == task:
                return b
        raise KeyError(task)

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) for every layer: trunk first, then each branch."""
        shapes = []
        prev = self.input_size
        for s in self.shared_sizes:
            shapes.append((prev, s))
            prev = s
        trunk_out = prev
        for b in self.branches:
            prev = trunk_out
            for s in (*b.hidden_sizes, b.output_size):
                shapes.append((prev, s))
                prev = s
        return shapes

    def layer_groups(self) -> dict:
        """Layer indices per segment: 'shared' and one entry per task."""
        n_shared = len(self.shared_sizes)
        groups = {"shared": list(range(n_shared))}
        i = n_shared
        for b in self.branches:
            n = len(b.hidden_sizes) + 1
            groups[b.task] = list(range(i, i + n))
            i += n
        return groups

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shared_sizes"] = list(self.shared_sizes)
        for b in d["branches"]:
            b["hidden_sizes"] = list(b["hidden_sizes"])
        return d


def make_stl(topology: MtlTopology, task: str) -> MtlTopology:
    """Drop every branch except ``task``; the trunk is kept as is."""
    return MtlTopology(topology.input_size, topology.shared_sizes, (topology.branch(task),))


def count_neurons(topology: MtlTopology) -> int:
    n = topology.input_size + sum(topology.shared_sizes)
    for b in topology.branches:
        n += sum(b.hidden_sizes) + b.output_size
    return n


def count_parameters(topology: MtlTopology) -> int:
    return sum(fi * fo + fo for fi, fo in topology.layer_shapes())


@dataclass
class LossWeights:
    w_mfi: float = 1.0
    w_osnr: float = 5.0
    mfi_loss: str = "squared"

    def __post_init__(self):
        if not (self.w_mfi >= 0 and self.w_osnr >= 0) or not (math.isfinite(self.w_mfi) and math.isfinite(self.w_osnr)):
            raise ValueError("loss weights must be finite and nonnegative")
        if self.mfi_loss not in ("squared", "cross_entropy"):
            raise ValueError("mfi_loss must be 'squared' or 'cross_entropy'")

    @classmethod
    def from_ratio(cls, ratio: float) -> "LossWeights":
        return cls(1.0, float(ratio))


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 2000
    patience: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be >= 1")


class MtlNetwork:
    def __init__(self, topology: MtlTopology, params: np.ndarray | None = None, seed: int | None = None):
        self.topology = topology
        self.seed = seed
        shapes = topology.layer_shapes()
        size = sum(fi * fo + fo for fi, fo in shapes)
        if params is None:
            params = np.zeros(size)
        params = np.ascontiguousarray(params, dtype=float)
        if params.shape != (size,):
            raise ValueError(f"expected {size} parameters, got {params.shape}")
        self.params = params
        self.layers = _layer_views(params, shapes)

    def copy(self) -> "MtlNetwork":
        return MtlNetwork(self.topology, self.params.copy(), self.seed)


def _layer_views(flat: np.ndarray, shapes) -> list:
    views, off = [], 0
    for fi, fo in shapes:
        W = flat[off : off + fi * fo].reshape(fo, fi)
        off += fi * fo
        b = flat[off : off + fo]
        off += fo
        views.append((W, b))
    return views


def init_network(topology: MtlTopology, seed: int) -> MtlNetwork:
    """Symmetric uniform weights with bound sqrt(6 / (fan_in + fan_out)); zero biases."""
    net = MtlNetwork(topology, seed=seed)
    rng = np.random.default_rng(seed)
    for (W, _), (fi, fo) in zip(net.layers, topology.layer_shapes()):
        bound = math.sqrt(6.0 / (fi + fo))
        W[...] = rng.uniform(-bound, bound, size=W.shape)
    return net


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class Outputs:
    mfi: np.ndarray | None
    osnr: np.ndarray | None
    cache: dict = field(repr=False, default_factory=dict)


def forward(net: MtlNetwork, features) -> Outputs:
    """Batch forward pass. 1-D input gives per-example outputs.

    ``mfi`` is (n, 3) softmax probabilities, ``osnr`` is (n,) normalized
    OSNR estimates; either is None when the branch is absent.
    """
    x = np.asarray(features, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    topo = net.topology
    if X.ndim != 2 or X.shape[1] != topo.input_size:
        raise ValueError(f"expected features of width {topo.input_size}, got shape {x.shape}")
    groups = topo.layer_groups()
    acts = {}
    h = X
    for li in groups["shared"]:
        W, b = net.layers[li]
        acts[li] = (h, None)
        h = np.tanh(h @ W.T + b)
    trunk = h
    heads = {}
    for br in topo.branches:
        h = trunk
        idx = groups[br.task]
        for li in idx[:-1]:
            W, b = net.layers[li]
            acts[li] = (h, None)
            h = np.tanh(h @ W.T + b)
        W, b = net.layers[idx[-1]]
        acts[idx[-1]] = (h, None)
        z = h @ W.T + b
        heads[br.task] = softmax(z) if br.output_activation == "softmax" else z[:, 0]
    cache = {"inputs": {li: a[0] for li, a in acts.items()}, "trunk": trunk, "heads": heads}
    mfi, osnr = heads.get(MFI), heads.get(OSNR)
    if single:
        mfi = None if mfi is None else mfi[0]
        osnr = None if osnr is None else osnr[0]
    return Outputs(mfi, osnr, cache)


def _as2d(a):
    a = np.asarray(a, dtype=float)
    return a[None, :] if a.ndim == 1 else a


def mtl_loss(outputs: Outputs, y_mfi=None, y_osnr=None, weights: LossWeights | None = None) -> float:
    """Weighted two-task loss, averaged over the batch.

    Per example: w_mfi * sum_k (y1_k - h1_k)^2 + w_osnr * (y2 - h2)^2.
    Terms for absent branches are skipped.
    """
    weights = weights or LossWeights()
    total = 0.0
    n = None
    if outputs.mfi is not None:
        P, Y = _as2d(outputs.mfi), _as2d(y_mfi)
        if P.shape != Y.shape:
            raise ValueError(f"MFI output {P.shape} vs target {Y.shape}")
        n = P.shape[0]
        if weights.mfi_loss == "squared":
            per = np.sum((Y - P) ** 2, axis=1)
        else:
            per = -np.sum(Y * np.log(np.clip(P, 1e-300, None)), axis=1)
        total += weights.w_mfi * per.sum()
    if outputs.osnr is not None:
        h, y = np.atleast_1d(outputs.osnr).astype(float), np.atleast_1d(np.asarray(y_osnr, dtype=float))
        if h.shape != y.shape:
            raise ValueError(f"OSNR output {h.shape} vs target {y.shape}")
        if n is not None and h.size != n:
            raise ValueError("MFI and OSNR batches differ in size")
        n = h.size
        total += weights.w_osnr * np.sum((y - h) ** 2)
    if n is None:
        raise ValueError("network has no output heads")
    return float(total / n)


def backward(net: MtlNetwork, outputs: Outputs, y_mfi=None, y_osnr=None,
             weights: LossWeights | None = None) -> np.ndarray:
    """Exact gradient of ``mtl_loss`` as a flat vector laid out like ``net.params``."""
    weights = weights or LossWeights()
    topo = net.topology
    groups = topo.layer_groups()
    inputs = outputs.cache["inputs"]
    heads = outputs.cache["heads"]
    grad = np.zeros_like(net.params)
    gviews = _layer_views(grad, topo.layer_shapes())
    n = next(iter(heads.values())).shape[0]
    d_trunk = np.zeros_like(outputs.cache["trunk"])

    for br in topo.branches:
        idx = groups[br.task]
        if br.task == MFI:
            P, Y = heads[MFI], _as2d(y_mfi)
            if weights.mfi_loss == "squared":
                g = 2.0 * weights.w_mfi * (P - Y) / n
                # softmax Jacobian: dz_j = p_j (g_j - sum_k p_k g_k)
                dz = P * (g - np.sum(P * g, axis=1, keepdims=True))
            else:
                dz = weights.w_mfi * (P * Y.sum(axis=1, keepdims=True) - Y) / n
        else:
            y = np.atleast_1d(np.asarray(y_osnr, dtype=float))
            dz = (2.0 * weights.w_osnr * (heads[OSNR] - y) / n)[:, None]
        for pos in range(len(idx) - 1, -1, -1):
            li = idx[pos]
            W, _ = net.layers[li]
            a_in = inputs[li]
            gW, gb = gviews[li]
            gW[...] = dz.T @ a_in
            gb[...] = dz.sum(axis=0)
            da = dz @ W
            if pos > 0:
                dz = da * (1.0 - a_in**2)
            else:
                d_trunk += da

    dz = d_trunk * (1.0 - outputs.cache["trunk"] ** 2)
    shared = groups["shared"]
    for pos in range(len(shared) - 1, -1, -1):
        li = shared[pos]
        W, _ = net.layers[li]
        a_in = inputs[li]
        gW, gb = gviews[li]
        gW[...] = dz.T @ a_in
        gb[...] = dz.sum(axis=0)
        if pos > 0:
            dz = (dz @ W) * (1.0 - a_in**2)
    return grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, net: MtlNetwork) -> "AdamState":
        return cls(np.zeros_like(net.params), np.zeros_like(net.params), 0)


def adam_step(net: MtlNetwork, state: AdamState, grad: np.ndarray, cfg: TrainConfig):
    """Bias-corrected Adam update, in place on ``net.params`` and ``state``."""
    if grad.shape != net.params.shape or state.m.shape != net.params.shape:
        raise ValueError("gradient/state shape does not match the network")
    state.step += 1
    t = state.step
    state.m *= cfg.beta1
    state.m += (1.0 - cfg.beta1) * grad
    state.v *= cfg.beta2
    state.v += (1.0 - cfg.beta2) * grad * grad
    m_hat = state.m / (1.0 - cfg.beta1**t)
    v_hat = state.v / (1.0 - cfg.beta2**t)
    net.params -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    return net, state


def predict(net: MtlNetwork, features, grid):
    """(class indices, OSNR in dB). Argmax ties go to the lowest index.

    Missing heads yield None for their half of the pair.
    """
    out = forward(net, features)
    cls = None if out.mfi is None else np.argmax(out.mfi, axis=-1)
    osnr = None if out.osnr is None else decode_osnr(out.osnr, grid)
    return cls, osnr


def batch_metrics(net: MtlNetwork, X, Y, y_db, grid) -> tuple[float, float]:
    """(accuracy, RMSE in dB); NaN for an absent head or empty batch."""
    if len(X) == 0:
        return math.nan, math.nan
    cls, est = predict(net, X, grid)
    acc = math.nan if cls is None else float(np.mean(cls == np.argmax(Y, axis=1)))
    rmse = math.nan if est is None else float(np.sqrt(np.mean((est - y_db) ** 2)))
    return acc, rmse


@dataclass
class History:
    rows: list = field(default_factory=list)  # dicts: epoch, train_loss, val_loss, val_acc, val_rmse_db
    initial_train_loss: float = math.nan
    initial_val_loss: float = math.nan
    best_epoch: int = 0


def _loss_on(net, X, Y, y, weights):
    if len(X) == 0:
        return math.nan
    return mtl_loss(forward(net, X), Y, y, weights)


def train(net: MtlNetwork, dataset: Dataset, cfg: TrainConfig | None = None,
          weights: LossWeights | None = None) -> tuple[MtlNetwork, History]:
    """Minibatch Adam on the train partition with early stopping on val loss.

    Each epoch reshuffles with a generator seeded from ``cfg.seed``. The
    network is left holding the best-validation snapshot (training loss
    is monitored instead when there is no validation partition).
    """
    cfg = cfg or TrainConfig()
    weights = weights or LossWeights()
    if dataset.bin_count != net.topology.input_size:
        raise ValueError(f"dataset has {dataset.bin_count} bins, network expects {net.topology.input_size}")
    Xtr, Ytr, ytr, _ = dataset.arrays("train")
    Xva, Yva, yva, dbva = dataset.arrays("val")
    if len(Xtr) == 0:
        raise ValueError("dataset has no training partition")
    grid = dataset.spec.osnr_grid
    monitor_val = len(Xva) > 0

    rng = np.random.default_rng(cfg.seed)
    state = AdamState.zeros_like(net)
    hist = History(initial_train_loss=_loss_on(net, Xtr, Ytr, ytr, weights),
                   initial_val_loss=_loss_on(net, Xva, Yva, yva, weights))
    best = hist.initial_val_loss if monitor_val else hist.initial_train_loss
    best_params = net.params.copy()
    stale = 0
    n = len(Xtr)
    # overflow shows up as a non-finite loss, which is checked explicitly
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, cfg.max_epochs + 1):
            order = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                sel = order[start : start + cfg.batch_size]
                out = forward(net, Xtr[sel])
                g = backward(net, out, Ytr[sel], ytr[sel], weights)
                adam_step(net, state, g, cfg)
            tr_loss = _loss_on(net, Xtr, Ytr, ytr, weights)
            va_loss = _loss_on(net, Xva, Yva, yva, weights)
            monitored = va_loss if monitor_val else tr_loss
            if not math.isfinite(tr_loss) or (monitor_val and not math.isfinite(va_loss)):
                raise NonFinite(epoch, tr_loss if not math.isfinite(tr_loss) else va_loss)
            acc, rmse = batch_metrics(net, Xva, Yva, dbva, grid)
            hist.rows.append({"epoch": epoch, "train_loss": tr_loss, "val_loss": va_loss,
                              "val_acc": acc, "val_rmse_db": rmse})
            if monitored < best:
                best, stale = monitored, 0
                best_params[...] = net.params
                hist.best_epoch = epoch
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    net.params[...] = best_params
    return net, hist


def extract_branch(net: MtlNetwork, task: str) -> MtlNetwork:
    """Single-branch network sharing copies of the trunk and ``task`` weights."""
    stl = MtlNetwork(make_stl(net.topology, task), seed=net.seed)
    groups = net.topology.layer_groups()
    src = groups["shared"] + groups[task]
    for (W, b), li in zip(stl.layers, src):
        W[...] = net.layers[li][0]
        b[...] = net.layers[li][1]
    return stl


def model_to_dict(net: MtlNetwork, weights: LossWeights | None = None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "topology": net.topology.to_dict(),
        "loss_weights": asdict(weights or LossWeights()),
        "seed": net.seed,
        "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in net.layers],
    }


def save_model(net: MtlNetwork, path, weights: LossWeights | None = None) -> None:
    """JSON model file; floats use repr, which round-trips float64 exactly."""
    Path(path).write_text(json.dumps(model_to_dict(net, weights), indent=1) + "\n", encoding="utf-8")


def load_model(path) -> MtlNetwork:
    net, _ = load_model_with_weights(path)
    return net


def load_model_with_weights(path) -> tuple[MtlNetwork, LossWeights]:
    text = Path(path).read_text(encoding="utf-8")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(d, dict) or d.get("format_version") != FORMAT_VERSION:
        raise FileFormatError(f"{path}: unsupported format_version {d.get('format_version') if isinstance(d, dict) else None!r}")
    try:
        t = d["topology"]
        topo = MtlTopology(int(t["input_size"]), tuple(t["shared_sizes"]), tuple(t["branches"]))
        weights = LossWeights(**d.get("loss_weights", {}))
        layers = d["layers"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"{path}: bad header ({exc})") from exc
    shapes = topo.layer_shapes()
    if len(layers) != len(shapes):
        raise FileFormatError(f"{path}: topology has {len(shapes)} layers, payload has {len(layers)}")
    net = MtlNetwork(topo, seed=d.get("seed"))
    for i, ((W, b), layer, (fi, fo)) in enumerate(zip(net.layers, layers, shapes)):
        try:
            Wl = np.array(layer["W"], dtype=float)
            bl = np.array(layer["b"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise FileFormatError(f"{path}: layer {i} unreadable ({exc})") from exc
        if Wl.shape != (fo, fi) or bl.shape != (fo,):
            raise FileFormatError(f"{path}: layer {i} has W{Wl.shape} b{bl.shape}, topology needs W{(fo, fi)} b{(fo,)}")
        W[...] = Wl
        b[...] = bl
    return net, weights
