"""The full two-stage network: question CNN, answer CNN, fusion scorer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dffn.config import Config
from dffn.fusion import METADATA_DIM, FusionMlp, fuse
from dffn.hcf import HCF_DIM
from dffn.nnkernel import DEFAULT_DTYPE, EVAL, Mode
from dffn.sentence_encoder import SentenceCnn


@dataclass
class Batch:
    q: np.ndarray     # (n, L, d) question sentence matrices
    a: np.ndarray     # (n, L, d) answer sentence matrices
    hcf: np.ndarray   # (n, 28)
    meta: np.ndarray  # (n, 33)

    def __len__(self):
        return len(self.hcf)


class DffnModel:
    """Scores a batch of QA pairs.

    The ``no_cnn`` ablation zeroes the pair segment and skips both CNNs (they
    then get no gradients); ``no_hcf`` zeroes the hand-crafted segment.
    """

    def __init__(self, config: Config, q_cnn: SentenceCnn, a_cnn: SentenceCnn, mlp: FusionMlp):
        self.config = config
        self.q_cnn = q_cnn
        self.a_cnn = a_cnn
        self.mlp = mlp
        self.sentence_dim = config.sentence_dim
        self.pair_dim = 2 * config.sentence_dim
        self.input_dim = self.pair_dim + HCF_DIM + METADATA_DIM

    @classmethod
    def build(cls, config: Config, seed: int | None = None, dtype=DEFAULT_DTYPE) -> "DffnModel":
        rng = np.random.default_rng(config.seed if seed is None else seed)
        cnn_cfg = config.sentence_cnn()
        q_cnn = SentenceCnn.build(cnn_cfg, rng, dtype)
        a_cnn = SentenceCnn.build(cnn_cfg, rng, dtype)
        input_dim = 2 * config.sentence_dim + HCF_DIM + METADATA_DIM
        mlp = FusionMlp.build(input_dim, config.fusion_hidden, config.rrelu(), rng, dtype)
        return cls(config, q_cnn, a_cnn, mlp)

    @property
    def uses_cnn(self) -> bool:
        return self.config.ablation != "no_cnn"

    @property
    def dtype(self):
        return self.mlp.layers[0].params["W"].dtype

    def _parts(self):
        return (("q_cnn", self.q_cnn), ("a_cnn", self.a_cnn), ("fusion", self.mlp))

    def encode_pair(self, q, a, mode: Mode = EVAL, rng=None) -> np.ndarray:
        if mode.training and rng is None:
            rng = mode.rng()
        q_rep = self.q_cnn.forward(q, mode, rng)
        a_rep = self.a_cnn.forward(a, mode, rng)
        return np.concatenate([q_rep, a_rep], axis=-1)

    def fusion_input(self, batch: Batch, mode: Mode = EVAL, rng=None) -> np.ndarray:
        n = len(batch)
        if self.uses_cnn:
            pair = self.encode_pair(batch.q, batch.a, mode, rng)
        else:
            pair = np.zeros((n, self.pair_dim))
        hcf = batch.hcf if self.config.ablation != "no_hcf" else np.zeros((n, HCF_DIM))
        return fuse(pair, hcf, batch.meta, self.pair_dim).astype(self.dtype)

    def forward(self, batch: Batch, mode: Mode = EVAL) -> np.ndarray:
        rng = mode.rng()
        x = self.fusion_input(batch, mode, rng)
        return self.mlp.forward(x, mode, rng)[:, 0]

    def backward(self, dscores):
        dx = self.mlp.backward(np.asarray(dscores).reshape(-1, 1))
        if self.uses_cnn:
            sd = self.sentence_dim
            self.q_cnn.backward(dx[:, :sd])
            self.a_cnn.backward(dx[:, sd : 2 * sd])
        return dx

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{prefix}.{k}": v for prefix, net in self._parts() for k, v in net.parameters().items()}

    def gradients(self) -> dict[str, np.ndarray]:
        parts = self._parts() if self.uses_cnn else self._parts()[2:]
        return {f"{prefix}.{k}": v for prefix, net in parts for k, v in net.gradients().items()}

    def kink_state(self):
        return [s for _, net in self._parts() for s in net.kink_state()]

    def astype(self, dtype) -> "DffnModel":
        return DffnModel(self.config, self.q_cnn.astype(dtype), self.a_cnn.astype(dtype), self.mlp.astype(dtype))

    def load_parameters(self, values: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(values) != set(params):
            missing = sorted(set(params) - set(values))
            extra = sorted(set(values) - set(params))
            raise ValueError(f"parameter names differ (missing {missing}, unexpected {extra})")
        for name, target in params.items():
            src = np.asarray(values[name])
            if src.shape != target.shape:
                raise ValueError(f"{name}: shape {src.shape} != {target.shape}")
            target[...] = src

    def copy_parameters(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.parameters().items()}
