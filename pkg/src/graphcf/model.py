"""Model kinds, parameter storage, the output scale and uniform aggregation."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .weighting import ConfigError, MlpParams, weighted_sum


class ModelKind(enum.Enum):
    MF = "MF"
    SVDPP = "SVDPP"
    W_SVDPP = "W_SVDPP"
    A_SVDPP = "A_SVDPP"
    GCF = "GCF"
    W_GCF = "W_GCF"
    A_GCF = "A_GCF"
    A_GCF2 = "A_GCF2"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).upper().replace("-", "_").replace("++", "PP")
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ConfigError(f"unknown model kind {value!r}; valid kinds: {valid}") from None

    @property
    def weighting(self):
        """How feedback is combined: None (no feedback), uniform, weighted or attentive."""
        if self is ModelKind.MF:
            return None
        if self in (ModelKind.W_SVDPP, ModelKind.W_GCF):
            return "weighted"
        if self in (ModelKind.A_SVDPP, ModelKind.A_GCF, ModelKind.A_GCF2):
            return "attentive"
        return "uniform"

    @property
    def user_side(self):
        return self is not ModelKind.MF

    @property
    def item_side(self):
        return self in (ModelKind.GCF, ModelKind.W_GCF, ModelKind.A_GCF, ModelKind.A_GCF2)

    @property
    def step_two(self):
        return self is ModelKind.A_GCF2

    @property
    def feedback_slots(self):
        """Row keys (``user``, ``item``, ``user2``, ``item2``) the kind reads."""
        slots = []
        if self.user_side:
            slots.append("user")
        if self.item_side:
            slots.append("item")
        if self.step_two:
            slots += ["user2", "item2"]
        return slots


# feedback slot -> (embedding block, owner side of the row, side the row entries index)
SLOTS = {
    "user": ("Y", "user", "item"),
    "item": ("X", "item", "user"),
    "user2": ("Y2", "user", "user"),
    "item2": ("X2", "item", "item"),
}
MLP_OF_SLOT = {"user": "mlp_user", "item": "mlp_item", "user2": "mlp_user2", "item2": "mlp_item2"}

OUTPUT_SCALES = ("logistic", "clamp")
NORMS = ("sqrt_k", "mean", "degree")


def _real(x):
    x = np.asarray(x)
    return x.astype(np.result_type(x, np.float64), copy=False)


def scale(z):
    """Logistic squashing of the raw score into (0, 1)."""
    z = _real(z)
    out = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    return float(out) if out.ndim == 0 else out


def apply_output(z, output="logistic"):
    """Output transform and its derivative."""
    if output == "logistic":
        y = scale(z)
        return y, y * (1.0 - y)
    if output == "clamp":
        z = _real(z)
        return np.clip(z, 0.0, 1.0), ((z > 0) & (z < 1)).astype(z.dtype)
    raise ConfigError(f"unknown output scale {output!r}")


def uniform_coef(width, norm="sqrt_k", degree=None):
    """Per-entry weight of uniform aggregation over a row of ``width`` entries."""
    if norm == "sqrt_k":
        return np.full(width, width**-0.5)
    if norm == "mean":
        return np.full(width, 1.0 / width)
    if norm == "degree":
        if degree is None:
            raise ConfigError("degree normalization needs the entity's true degree")
        d = np.asarray(degree, dtype=np.float64)
        return np.broadcast_to(np.maximum(d, 1.0)[..., None] ** -0.5, (*d.shape, width)).copy()
    raise ConfigError(f"unknown normalization {norm!r}")


def aggregate_uniform(row, table, norm="sqrt_k", degree=None):
    """Equal-weight sum of ``table[row]``; the default weight is ``k ** -0.5``."""
    row = np.asarray(row)
    if row.ndim != 1 or len(row) < 1:
        raise ConfigError("a feedback row needs at least one entry")
    return weighted_sum(uniform_coef(len(row), norm, degree), table[row])


@dataclass
class ModelParams:
    """All trainable blocks of one model, keyed by name.

    User-indexed blocks (P, X, Y2, alpha, bu) have ``n_users + 1`` rows and
    item-indexed blocks (Q, Y, X2, beta, bi) ``n_items + 1``; the last row is
    the PAD entity. MLP layers are stored as ``mlp_<slot>.W<l>`` and
    ``mlp_<slot>.c<l>``.
    """

    kind: ModelKind
    n_users: int
    n_items: int
    K: int
    Kp: int
    k: int = 20
    hidden: tuple = (32,)
    temperature: float = 0.1
    norm: str = "sqrt_k"
    output: str = "logistic"
    mask_pad: bool = False
    blocks: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = ModelKind.parse(self.kind)
        if self.kind.user_side and self.K != self.Kp:
            raise ConfigError(f"feedback width K'={self.Kp} must equal K={self.K} to add to p_u/q_i")
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")
        if self.norm not in NORMS:
            raise ConfigError(f"unknown normalization {self.norm!r}")
        if self.output not in OUTPUT_SCALES:
            raise ConfigError(f"unknown output scale {self.output!r}")
        self.hidden = tuple(int(h) for h in self.hidden)

    @property
    def user_pad(self):
        return self.n_users

    @property
    def item_pad(self):
        return self.n_items

    def pad_index(self, side):
        return self.n_users if side == "user" else self.n_items

    def __getattr__(self, name):
        blocks = self.__dict__.get("blocks", {})
        if name in blocks:
            return blocks[name]
        raise AttributeError(name)

    @property
    def b(self):
        return self.blocks["b"]

    def mlp(self, slot):
        name = MLP_OF_SLOT.get(slot, slot)
        n_layers = len(self.hidden) + 1
        return MlpParams(
            [self.blocks[f"{name}.W{l}"] for l in range(n_layers)],
            [self.blocks[f"{name}.c{l}"] for l in range(n_layers)],
        )

    def copy(self):
        out = ModelParams(
            self.kind, self.n_users, self.n_items, self.K, self.Kp, self.k, self.hidden,
            self.temperature, self.norm, self.output, self.mask_pad,
        )
        out.blocks = {k: v.copy() for k, v in self.blocks.items()}
        return out

    def block_shapes(self):
        return block_layout(self.kind, self.n_users, self.n_items, self.K, self.Kp, self.hidden)

    def n_parameters(self):
        return sum(v.size for v in self.blocks.values())

    def equal(self, other):
        return (
            self.header() == other.header()
            and self.blocks.keys() == other.blocks.keys()
            and all(np.array_equal(self.blocks[k], other.blocks[k]) for k in self.blocks)
        )

    def header(self):
        return {
            "kind": self.kind.value,
            "K": self.K,
            "Kp": self.Kp,
            "n_users": self.n_users,
            "n_items": self.n_items,
            "k": self.k,
            "hidden": ",".join(map(str, self.hidden)),
            "temperature": repr(float(self.temperature)),
            "norm": self.norm,
            "output": self.output,
            "mask_pad": int(self.mask_pad),
        }


def block_layout(kind, n_users, n_items, K, Kp, hidden=(32,)):
    """Ordered ``{name: shape}`` of the blocks ``kind`` owns; this is the snapshot order."""
    kind = ModelKind.parse(kind)
    nu, ni = n_users + 1, n_items + 1
    layout = {"P": (nu, K), "Q": (ni, K), "bu": (nu,), "bi": (ni,), "b": (1,)}
    table_rows = {"Y": ni, "X": nu, "Y2": nu, "X2": ni}
    for slot in kind.feedback_slots:
        name = SLOTS[slot][0]
        layout[name] = (table_rows[name], Kp)
    if kind.weighting == "weighted":
        layout["alpha"] = (nu, Kp)
        layout["beta"] = (ni, Kp)
    if kind.weighting == "attentive":
        widths = [K + Kp, *hidden, 1]
        for slot in kind.feedback_slots:
            name = MLP_OF_SLOT[slot]
            for l, (a, b) in enumerate(zip(widths, widths[1:])):
                layout[f"{name}.W{l}"] = (a, b)
                layout[f"{name}.c{l}"] = (b,)
    return layout


def is_bias_block(name):
    return name in ("bu", "bi", "b") or ".c" in name


MLP_INITS = ("uniform", "he")
WEIGHT_INITS = ("uniform", "sqrt_k")


def init_params(kind, n_users, n_items, K=16, Kp=None, k=20, hidden=(32,), seed=0, init_scale=0.01,
                mlp_init="uniform", weight_init="uniform", **settings):
    """Uniform(-init_scale, init_scale) weights, zero biases.

    ``mlp_init="he"`` draws MLP weights from U(-sqrt(6/fan_in), sqrt(6/fan_in))
    instead. ``weight_init="sqrt_k"`` adds ``k ** -0.25`` to the first
    coordinate of every alpha and beta row, so each pair weight starts near
    ``k ** -0.5``, the uniform weight.
    """
    if mlp_init not in MLP_INITS:
        raise ConfigError(f"unknown mlp_init {mlp_init!r}; valid: {', '.join(MLP_INITS)}")
    if weight_init not in WEIGHT_INITS:
        raise ConfigError(f"unknown weight_init {weight_init!r}; valid: {', '.join(WEIGHT_INITS)}")
    Kp = K if Kp is None else Kp
    params = ModelParams(ModelKind.parse(kind), n_users, n_items, K, Kp, k, tuple(hidden), **settings)
    rng = np.random.default_rng(seed)
    for name, shape in params.block_shapes().items():
        if is_bias_block(name):
            params.blocks[name] = np.zeros(shape)
        elif mlp_init == "he" and name.startswith("mlp_"):
            params.blocks[name] = rng.uniform(-1.0, 1.0, size=shape) * np.sqrt(6.0 / shape[0])
        else:
            params.blocks[name] = rng.uniform(-init_scale, init_scale, size=shape)
        if weight_init == "sqrt_k" and name in ("alpha", "beta"):
            params.blocks[name][:, 0] += k**-0.25
    return params


SNAPSHOT_MAGIC = "GCFSNAP1"


def save_params(params, path):
    """Snapshot: one text header line, then every block as little-endian float64.

    Blocks follow :func:`block_layout` order, each C-contiguous.
    """
    head = " ".join(f"{k}={v}" for k, v in params.header().items())
    with open(path, "wb") as fh:
        fh.write(f"{SNAPSHOT_MAGIC} {head}\n".encode("ascii"))
        for name, shape in params.block_shapes().items():
            arr = params.blocks[name]
            if arr.shape != shape:
                raise ValueError(f"block {name} has shape {arr.shape}, expected {shape}")
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model snapshot not found: {path}")
    with open(path, "rb") as fh:
        line = fh.readline().decode("ascii").split()
        if not line or line[0] != SNAPSHOT_MAGIC:
            raise ValueError(f"{path}: not a model snapshot")
        meta = dict(tok.split("=", 1) for tok in line[1:])
        hidden = tuple(int(h) for h in meta["hidden"].split(",") if h)
        params = ModelParams(
            ModelKind.parse(meta["kind"]),
            int(meta["n_users"]),
            int(meta["n_items"]),
            int(meta["K"]),
            int(meta["Kp"]),
            int(meta["k"]),
            hidden,
            float(meta["temperature"]),
            meta["norm"],
            meta["output"],
            bool(int(meta["mask_pad"])),
        )
        for name, shape in params.block_shapes().items():
            count = int(np.prod(shape))
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError(f"{path}: truncated at block {name}")
            params.blocks[name] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after last block")
    return params
