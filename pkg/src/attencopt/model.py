"""Encoder-decoder policy: parameters, configuration and checkpoints."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .decoder import Batch, DecodeResult, DecoderConfig, ScheduleSolution, decode, init_decoder, solutions_from_result
from .encoder import EncoderConfig, encode, init_encoder
from .features import build_features
from .instance import Instance
from .tensor import ParameterStore, Tensor, load_checkpoint, no_grad, save_checkpoint

_CONFIG_PREFIX = "__config__/"


@dataclass
class PolicyModel:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    n_locations: int = 4
    store: ParameterStore = field(default_factory=ParameterStore)

    @classmethod
    def initialize(
        cls,
        n_locations: int = 4,
        encoder: EncoderConfig | None = None,
        decoder: DecoderConfig | None = None,
        seed: int = 0,
    ) -> "PolicyModel":
        encoder = encoder or EncoderConfig()
        decoder = decoder or DecoderConfig(n_heads=encoder.n_heads)
        rng = np.random.default_rng(seed)
        store = ParameterStore()
        init_encoder(store, encoder, n_features=n_locations + 2, rng=rng)
        init_decoder(store, encoder.hidden_dim, rng)
        return cls(encoder=encoder, decoder=decoder, n_locations=n_locations, store=store)

    @property
    def n_features(self) -> int:
        return self.n_locations + 2

    def encode(self, batch: Batch) -> Tensor:
        if batch.inputs.shape[-1] != self.n_features:
            raise ValueError(
                f"model expects {self.n_locations} locations, instance features have {batch.inputs.shape[-1] - 2}"
            )
        return encode(batch.inputs, self.store, self.encoder)

    def run(self, batch: Batch, mode="greedy", rng=None, actions=None, H=None, **kwargs) -> DecodeResult:
        if H is None:
            H = self.encode(batch)
        return decode(
            H, batch, self.store, self.decoder, self.encoder.hidden_dim, mode=mode, rng=rng, actions=actions, **kwargs
        )

    def solve(self, instances, mode="greedy", seed=None, pad_to: int | None = None) -> list[ScheduleSolution]:
        """Decode schedules; instances are grouped by shape and batched."""
        instances = list(instances)
        rng = np.random.default_rng(seed) if mode == "sample" else None
        out: list[ScheduleSolution | None] = [None] * len(instances)
        groups: dict = {}
        for idx, inst in enumerate(instances):
            groups.setdefault((inst.n_turbines, inst.n_periods, inst.capacity), []).append(idx)
        for idxs in groups.values():
            start = time.perf_counter()
            with no_grad():
                batch = Batch.from_features(build_features(instances[i], pad_to=pad_to) for i in idxs)
                result = self.run(batch, mode=mode, rng=rng)
            per_item = (time.perf_counter() - start) / len(idxs)
            for i, sol in zip(idxs, solutions_from_result(result, [instances[i] for i in idxs], per_item)):
                out[i] = sol
        return out

    def solve_one(self, instance: Instance, mode="greedy", seed=None, pad_to=None) -> ScheduleSolution:
        return self.solve([instance], mode=mode, seed=seed, pad_to=pad_to)[0]

    # -- persistence ------------------------------------------------------
    def config_dict(self) -> dict:
        return {"encoder": asdict(self.encoder), "decoder": asdict(self.decoder), "n_locations": self.n_locations}

    def save(self, path, include_optimizer: bool = True) -> None:
        arrays = self.store.state_arrays() if include_optimizer else {n: p.data for n, p in self.store}
        arrays = dict(arrays)
        for section, cfg in (("encoder", self.encoder), ("decoder", self.decoder)):
            for f in fields(cfg):
                arrays[f"{_CONFIG_PREFIX}{section}.{f.name}"] = np.array(float(getattr(cfg, f.name)))
        arrays[f"{_CONFIG_PREFIX}n_locations"] = np.array(float(self.n_locations))
        save_checkpoint(arrays, path)

    @classmethod
    def load(cls, path) -> "PolicyModel":
        arrays = load_checkpoint(path)
        cfg = {k[len(_CONFIG_PREFIX) :]: float(v) for k, v in arrays.items() if k.startswith(_CONFIG_PREFIX)}

        def build(section, klass):
            kwargs = {}
            for f in fields(klass):
                key = f"{section}.{f.name}"
                if key in cfg:
                    default = getattr(klass(), f.name)
                    kwargs[f.name] = type(default)(cfg[key]) if not isinstance(default, bool) else bool(cfg[key])
            return klass(**kwargs)

        store = ParameterStore.from_arrays({k: v for k, v in arrays.items() if not k.startswith(_CONFIG_PREFIX)})
        return cls(
            encoder=build("encoder", EncoderConfig),
            decoder=build("decoder", DecoderConfig),
            n_locations=int(cfg.get("n_locations", 4)),
            store=store,
        )
