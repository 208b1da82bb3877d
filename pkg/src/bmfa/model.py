"""Full embedding network: backbone -> aggregation strategy -> head.

A model is fully determined by (strategy, fusion, stages, r, embedding_dim,
num_classes, seed, dtype). Parameters are initialized per name, so any two
models agree bit-for-bit on every parameter whose dotted name they share.
"""

from __future__ import annotations

import numpy as np

from .aggregation import AGGREGATORS, FUSIONS, Head
from .autograd import Node
from .backbone import Backbone
from .errors import FormatError, ValidationError
from .init import ParamFactory


class Model:
    def __init__(
        self,
        strategy: str = "bmfa",
        fusion: str | None = "afm",
        stages: tuple[int, ...] = (1, 2, 3, 4),
        r: int = 4,
        embedding_dim: int = 512,
        num_classes: int | None = None,
        seed: int = 0,
        dtype=np.float32,
    ):
        if strategy not in AGGREGATORS:
            raise ValidationError(
                f"strategy must be one of {sorted(AGGREGATORS)}, got {strategy!r}"
            )
        if strategy != "baseline" and fusion not in FUSIONS:
            raise ValidationError(f"fusion must be one of {FUSIONS}, got {fusion!r}")
        if embedding_dim < 1:
            raise ValidationError(f"embedding_dim must be >= 1, got {embedding_dim}")
        self.strategy = strategy
        self.fusion = fusion
        f = ParamFactory(seed, dtype)
        self.backbone = Backbone(f)
        self.agg = AGGREGATORS[strategy](f, fusion, tuple(stages), r)
        self.head = Head(f, self.agg.out_dim, embedding_dim)
        self.classifier = None
        if num_classes is not None:
            if num_classes < 2:
                raise ValidationError(f"num_classes must be >= 2, got {num_classes}")
            self.classifier = f.he(
                "classifier.weight", (num_classes, embedding_dim), embedding_dim
            )
        self.params = f.params
        self.bns = f.bns

    def embed(self, x: Node) -> Node:
        """(N, 1, T, 64) features -> (N, embedding_dim) embeddings."""
        return self.head(self.agg(self.backbone(x)))

    def set_mode(self, mode: str) -> None:
        if mode not in ("train", "infer"):
            raise ValidationError(f"mode must be 'train' or 'infer', got {mode!r}")
        for state in self.bns.values():
            state.mode = mode

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: node.value.copy() for name, node in self.params.items()}
        for name, state in self.bns.items():
            out[f"{name}.running_mean"] = state.running_mean.copy()
            out[f"{name}.running_var"] = state.running_var.copy()
        return out

    def load_state_dict(self, sd: dict[str, np.ndarray],
                        allow_extra_prefixes: tuple[str, ...] = ("classifier.",)) -> None:
        """Copy values in place. Keys must match the model exactly, except
        that entries under *allow_extra_prefixes* (a classifier saved by a
        training run, loaded into an embedding-only model) are ignored."""
        targets: dict[str, np.ndarray] = {n: p.value for n, p in self.params.items()}
        for name, state in self.bns.items():
            targets[f"{name}.running_mean"] = state.running_mean
            targets[f"{name}.running_var"] = state.running_var
        missing = sorted(set(targets) - set(sd))
        extra = sorted(
            k for k in set(sd) - set(targets)
            if not any(k.startswith(p) for p in allow_extra_prefixes)
        )
        if missing or extra:
            raise FormatError(
                f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}"
            )
        for name, dst in targets.items():
            src = np.asarray(sd[name])
            if src.size != dst.size:
                raise FormatError(
                    f"size mismatch for {name}: {src.shape} vs {dst.shape}"
                )
            dst[...] = src.reshape(dst.shape).astype(dst.dtype)
