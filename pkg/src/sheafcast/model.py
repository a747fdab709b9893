"""Full forecasting pipeline: encode -> sheaf message passing -> neural ODE.

A model instance is bound to one working graph (the prior's edge set). The
forward pass encodes each node's context into a stalk, runs the configured
rounds of sheaf message passing, then integrates the per-node vector field
over the horizon with the stalks held fixed.

Ablations:
  * "graph":   restriction maps frozen to the identity, gates pinned to 1,
               reducing the sheaf to plain graph-Laplacian diffusion.
  * "no_lstm": stalks are the raw context fitted to the stalk dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .dynamics import VectorFieldParams, field_batch, rk4_states
from .encoder import LstmParams, encode_all, raw_stalks
from .errors import InvalidParameterError, ShapeMismatchError
from .sheaf import SheafParameters, message_pass

ABLATIONS = ("full", "graph", "no_lstm")


@dataclass
class ModelConfig:
    stalk_dim: int = 32
    map_dim: int = 0                  # 0 means "same as stalk_dim"
    rounds: int = 2
    normalize: bool = False
    field_width: int = 64
    field_state_free: bool = False
    dt: float = 1.0
    ablation: str = "full"

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise InvalidParameterError(f"unknown ablation {self.ablation!r}")
        if self.map_dim == 0:
            self.map_dim = self.stalk_dim
        if self.ablation == "graph" and self.map_dim != self.stalk_dim:
            raise InvalidParameterError("graph ablation needs map_dim == stalk_dim")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ForecastModel:
    config: ModelConfig
    lstm: LstmParams
    sheaf: SheafParameters
    vfield: VectorFieldParams

    @classmethod
    def init(cls, edges, n_nodes: int, config: ModelConfig, seed: int) -> "ForecastModel":
        rng = np.random.default_rng(seed)
        lstm = LstmParams.init(config.stalk_dim, rng)
        sheaf = SheafParameters.init(
            edges, n_nodes, stalk_dim=config.stalk_dim, map_dim=config.map_dim,
            rounds=config.rounds, normalize=config.normalize, rng=rng,
            identity=(config.ablation == "graph"))
        vfield = VectorFieldParams.init(config.stalk_dim, config.field_width,
                                        rng, state_free=config.field_state_free)
        return cls(config=config, lstm=lstm, sheaf=sheaf, vfield=vfield)

    @property
    def n_nodes(self) -> int:
        return self.sheaf.n_nodes

    def parameters(self) -> dict:
        """Trainable tensors only; ablations drop their frozen groups."""
        params = {}
        if self.config.ablation != "no_lstm":
            params.update(self.lstm.parameters())
        params.update(self.sheaf.parameters())
        params.update(self.vfield.parameters())
        return params

    def all_tensors(self) -> dict:
        """Every parameter group, trainable or not (checkpoint surface)."""
        out = dict(self.lstm.parameters())
        out.update({"sheaf.rho_src": self.sheaf.rho_src,
                    "sheaf.rho_dst": self.sheaf.rho_dst,
                    "sheaf.attention": self.sheaf.attention})
        out.update(self.vfield.parameters())
        return out

    def stalks(self, context: np.ndarray) -> ad.Tensor:
        if self.config.ablation == "no_lstm":
            return ad.Tensor(raw_stalks(context, self.config.stalk_dim))
        return encode_all(context, self.lstm)

    def forward(self, context: np.ndarray, t_hor: int):
        """Forecast t_hor steps; returns (predictions (n, t_hor) Tensor,
        first-round edge discrepancies (n_edges, m) Tensor)."""
        context = np.asarray(context, dtype=np.float64)
        if context.ndim != 2 or context.shape[0] != self.n_nodes:
            raise ShapeMismatchError(
                f"context {context.shape} does not match the {self.n_nodes}-node graph")
        alpha_override = 1.0 if self.config.ablation == "graph" else None
        h0 = self.stalks(context)
        h_final, delta = message_pass(h0, self.sheaf,
                                      alpha_override=alpha_override,
                                      return_first_discrepancy=True)

        def f(_t, x):
            return field_batch(x, h_final, self.vfield).reshape(-1)

        x0 = ad.Tensor(context[:, -1])
        states = rk4_states(f, x0, 0.0, self.config.dt, int(t_hor))
        pred = ad.concatenate([s.reshape(-1, 1) for s in states], axis=1)
        return pred, delta

    def predict(self, context: np.ndarray, t_hor: int) -> np.ndarray:
        """Numpy forecast without tape recording."""
        with ad.no_grad():
            pred, _ = self.forward(context, t_hor)
        return pred.data
