"""Domain-adversarial network: shared convolutional feature extractor, a phase
discriminator, and an adversary guessing whether a state carries a label."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from math import ceil, comb

import numpy as np

from ..errors import InvalidArgumentError
from .layers import (
    BatchNorm,
    Conv1d,
    Dense,
    Dropout,
    Flatten,
    GradientReversal,
    MaxPool1d,
    ReLU,
    Sequential,
    softmax,
)

POOL = 3


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    n_sites: int = 0
    channels: int = 4
    stages: int = 4
    hidden: int = 128
    dropout_p: float = 0.5
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    dtype: str = "float32"

    @property
    def pad_length(self) -> int:
        """Smallest multiple of 3**stages that fits the input."""
        block = POOL ** self.stages
        return ceil(self.input_dim / block) * block

    @property
    def feature_dim(self) -> int:
        return self.channels * self.pad_length // POOL ** self.stages

    def to_dict(self):
        return asdict(self)


def pad_length_for(n_sites: int, stages: int = 4) -> int:
    return Architecture(comb(n_sites, n_sites // 2), n_sites, stages=stages).pad_length


def _streams(seed: int, n: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


class DannModel:
    """Feature extractor ``G_f``, discriminator ``G_d`` and adversary ``G_a``.

    Each component draws its initial weights (and dropout masks) from its own
    random stream, so a model built without the adversary starts from the
    same feature extractor and discriminator as one built with it.
    """

    def __init__(self, arch: Architecture, lam: float = 1.0, rng_seed: int = 0,
                 with_adversary: bool = True):
        self.arch = arch
        self.rng_seed = int(rng_seed)
        dtype = np.dtype(arch.dtype)
        f_rng, d_rng, a_rng, d_drop, a_drop = _streams(self.rng_seed, 5)

        layers = []
        for s in range(arch.stages):
            layers += [
                Conv1d(1 if s == 0 else arch.channels, arch.channels, f_rng, dtype),
                ReLU(),
                MaxPool1d(POOL),
                BatchNorm(arch.channels, arch.bn_momentum, arch.bn_eps, dtype),
            ]
        layers.append(Flatten())
        self.features = Sequential(layers)
        self.discriminator = self._head(d_rng, d_drop, dtype)
        self.grl = GradientReversal(lam)
        self.adversary = (
            Sequential([self.grl, *self._head(a_rng, a_drop, dtype).layers])
            if with_adversary else None
        )

    def _head(self, init_rng, drop_rng, dtype):
        a = self.arch
        return Sequential([
            Dense(a.feature_dim, a.hidden, init_rng, dtype),
            ReLU(),
            Dropout(a.dropout_p, drop_rng),
            Dense(a.hidden, 2, init_rng, dtype),
        ])

    @classmethod
    def for_sites(cls, n_sites: int, cfg=None, with_adversary: bool = True, dtype="float32"):
        from .train import TrainConfig

        cfg = TrainConfig() if cfg is None else cfg
        arch = Architecture(
            comb(n_sites, n_sites // 2), n_sites,
            dropout_p=cfg.dropout_p, bn_momentum=cfg.bn_momentum, bn_eps=cfg.bn_eps,
            dtype=dtype,
        )
        return cls(arch, lam=cfg.lam, rng_seed=cfg.rng_seed, with_adversary=with_adversary)

    @property
    def n_sites(self) -> int:
        return self.arch.n_sites

    @property
    def lam(self) -> float:
        return self.grl.lam

    @lam.setter
    def lam(self, value: float):
        self.grl.lam = value

    @property
    def dtype(self):
        return np.dtype(self.arch.dtype)

    def components(self):
        out = [("features", self.features), ("discriminator", self.discriminator)]
        if self.adversary is not None:
            out.append(("adversary", self.adversary))
        return out

    def named_params(self, component: str | None = None):
        """Yield ``(name, layer, key)`` for every trainable array, in a fixed order."""
        for cname, seq in self.components():
            if component is not None and cname != component:
                continue
            for lname, layer in seq.named_layers(f"{cname}."):
                for key in layer.params:
                    yield f"{lname}.{key}", layer, key

    def named_buffers(self):
        for cname, seq in self.components():
            for lname, layer in seq.named_layers(f"{cname}."):
                for key in layer.buffers:
                    yield f"{lname}.{key}", layer, key

    def state_dict(self) -> dict:
        state = {name: layer.params[key] for name, layer, key in self.named_params()}
        state.update({name: layer.buffers[key] for name, layer, key in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict):
        for name, layer, key in self.named_params():
            layer.params[key] = np.array(state[name], dtype=self.dtype)
        for name, layer, key in self.named_buffers():
            layer.buffers[key] = np.array(state[name], dtype=self.dtype)

    def prepare(self, coefficients) -> np.ndarray:
        """Zero-pad raw coefficient rows to ``(batch, 1, pad_length)``."""
        x = np.asarray(coefficients)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.arch.input_dim:
            raise InvalidArgumentError(
                f"model expects {self.arch.input_dim} coefficients, got {x.shape[1]}"
            )
        out = np.zeros((x.shape[0], 1, self.arch.pad_length), dtype=self.dtype)
        out[:, 0, : x.shape[1]] = x
        return out

    def phase_proba(self, coefficients, batch_size: int = 1024) -> np.ndarray:
        """Discriminator softmax output in inference mode, shape ``(batch, 2)``."""
        x = np.asarray(coefficients)
        if x.ndim == 1:
            x = x[None, :]
        chunks = []
        for start in range(0, len(x), batch_size):
            f = self.features.forward(self.prepare(x[start:start + batch_size]), training=False)
            chunks.append(softmax(self.discriminator.forward(f, training=False).astype(np.float64)))
        if not chunks:
            return np.zeros((0, 2))
        return np.concatenate(chunks)

    def adversary_proba(self, coefficients) -> np.ndarray:
        if self.adversary is None:
            raise InvalidArgumentError("model has no adversary")
        f = self.features.forward(self.prepare(coefficients), training=False)
        return softmax(self.adversary.forward(f, training=False).astype(np.float64))


def predict(model: DannModel, record) -> np.ndarray | float:
    """Probability that a state is many-body localized.

    ``record`` may be an :class:`~mbl_dann.dataset.EigenstateRecord` (returns a
    float) or a :class:`~mbl_dann.dataset.RecordSet` (returns an array).
    """
    from ..dataset import RecordSet

    if record.n_sites != model.n_sites:
        raise InvalidArgumentError(
            f"record has N={record.n_sites} but the model was built for N={model.n_sites}"
        )
    if isinstance(record, RecordSet):
        return model.phase_proba(record.coefficients)[:, 1]
    return float(model.phase_proba(record.coefficients)[0, 1])
