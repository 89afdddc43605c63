"""Differentiable blocks over [L, W, H] cube tensors.

Three pieces:

* ``ConvLstmCell``: one recurrent step with 3D convolutions on the input and
  hidden paths and per-cell Hadamard peepholes on the cell state. Input and
  forget gates see C_{t-1}; the output gate sees C_t; H_t = o_t * act(C_t).
* ``SequenceForecaster``: a 1-layer encoder ConvLSTM over the n history
  cubes, whose final (H, C) state seeds a 1-layer decoder that rolls out p
  steps; a 1x1x1 head + softmax on the decoder's output gate yields per-cell
  class distributions.
* ``CubeDetector``: a 3-layer 3D CNN (3x3x3, 3x3x3, 5x5x3 kernels, ReLU)
  plus a 1x1x1 projection + softmax over a single cube.

Public tensors are channels-last ([..., L, W, H, C]); internally channels
move to the conv axis. Peephole weights are full [C_hidden, L, W, H]
tensors, so a cell is tied to one grid shape.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, ShapeError, UsageError
from .grids import NUM_CLASSES, CubeKind, FeatureCube, RegionSpec

GATE_NAMES = ("i", "f", "c", "o")


def _same_padding(kernel: tuple[int, int, int]) -> tuple[int, int, int]:
    for k in kernel:
        if k % 2 == 0:
            raise ConfigurationError(f"kernel sizes must be odd for same padding, got {kernel}")
    return tuple(k // 2 for k in kernel)


def _state_act(name: str):
    if name == "tanh":
        return torch.tanh
    if name == "sigmoid":
        return torch.sigmoid
    raise ConfigurationError(f"state_activation must be 'tanh' or 'sigmoid', got {name!r}")


class ConvLstmCell(nn.Module):
    """Peephole ConvLSTM cell on a fixed [L, W, H] grid.

    Parameters follow the gate symbols: W_x{i,f,c,o} input kernels,
    W_h{i,f,c,o} hidden kernels, W_c{i,f,o} per-cell peepholes, b_{i,f,c,o}
    biases. ``state_activation`` selects the cell nonlinearity used both for
    the candidate update and the hidden output (tanh by default; sigmoid is
    a documented variant).
    """

    def __init__(
        self,
        in_channels: int,
        hidden_channels: int,
        grid_shape: tuple[int, int, int],
        kernel_size: tuple[int, int, int] = (3, 3, 3),
        state_activation: str = "tanh",
    ) -> None:
        super().__init__()
        if in_channels < 1 or hidden_channels < 1:
            raise ConfigurationError("channel counts must be positive")
        self.in_channels = in_channels
        self.hidden_channels = hidden_channels
        self.grid_shape = tuple(int(g) for g in grid_shape)
        self.kernel_size = tuple(int(k) for k in kernel_size)
        self.padding = _same_padding(self.kernel_size)
        self.state_activation = state_activation
        self._act = _state_act(state_activation)
        kl, kw, kh = self.kernel_size
        for gate in GATE_NAMES:
            self.register_parameter(
                f"W_x{gate}", nn.Parameter(torch.empty(hidden_channels, in_channels, kl, kw, kh))
            )
            self.register_parameter(
                f"W_h{gate}", nn.Parameter(torch.empty(hidden_channels, hidden_channels, kl, kw, kh))
            )
            self.register_parameter(f"b_{gate}", nn.Parameter(torch.empty(hidden_channels)))
        for gate in ("i", "f", "o"):
            self.register_parameter(
                f"W_c{gate}", nn.Parameter(torch.empty(hidden_channels, *self.grid_shape))
            )
        self.reset_parameters()

    def reset_parameters(self, generator: torch.Generator | None = None) -> None:
        """Fan-in-scaled uniform kernels, zero peepholes, b_f = 1, other biases 0."""
        with torch.no_grad():
            for gate in GATE_NAMES:
                for prefix in ("W_x", "W_h"):
                    w = getattr(self, f"{prefix}{gate}")
                    fan_in = w.shape[1] * w.shape[2] * w.shape[3] * w.shape[4]
                    bound = 1.0 / math.sqrt(fan_in)
                    w.uniform_(-bound, bound, generator=generator)
                getattr(self, f"b_{gate}").fill_(1.0 if gate == "f" else 0.0)
            for gate in ("i", "f", "o"):
                getattr(self, f"W_c{gate}").zero_()

    def zero_state(self, batch: int, dtype: torch.dtype = torch.float32,
                   device: torch.device | str = "cpu") -> tuple[torch.Tensor, torch.Tensor]:
        shape = (batch, self.hidden_channels, *self.grid_shape)
        return torch.zeros(shape, dtype=dtype, device=device), torch.zeros(shape, dtype=dtype, device=device)

    def _check_step_shapes(self, x_t: torch.Tensor, hidden: torch.Tensor, cell: torch.Tensor) -> None:
        expected_x = (self.in_channels, *self.grid_shape)
        if x_t.ndim != 5 or tuple(x_t.shape[1:]) != expected_x:
            raise ShapeError(f"input must be [B,{','.join(map(str, expected_x))}], got {tuple(x_t.shape)}")
        expected_s = (x_t.shape[0], self.hidden_channels, *self.grid_shape)
        for name, s in (("hidden", hidden), ("cell", cell)):
            if tuple(s.shape) != expected_s:
                raise ShapeError(f"{name} state must be {expected_s}, got {tuple(s.shape)}")

    def forward(
        self, x_t: torch.Tensor, state: tuple[torch.Tensor, torch.Tensor]
    ) -> tuple[torch.Tensor, tuple[torch.Tensor, torch.Tensor]]:
        """One step: returns (o_t, (H_t, C_t)). x_t is [B, C_in, L, W, H]."""
        hidden, cell = state
        self._check_step_shapes(x_t, hidden, cell)
        wx = torch.cat([self.W_xi, self.W_xf, self.W_xc, self.W_xo], dim=0)
        wh = torch.cat([self.W_hi, self.W_hf, self.W_hc, self.W_ho], dim=0)
        from_x = F.conv3d(x_t, wx, padding=self.padding)
        from_h = F.conv3d(hidden, wh, padding=self.padding)
        xi, xf, xc, xo = from_x.chunk(4, dim=1)
        hi, hf, hc, ho = from_h.chunk(4, dim=1)
        bias = lambda b: b.view(1, -1, 1, 1, 1)
        i_gate = torch.sigmoid(xi + hi + self.W_ci * cell + bias(self.b_i))
        f_gate = torch.sigmoid(xf + hf + self.W_cf * cell + bias(self.b_f))
        candidate = self._act(xc + hc + bias(self.b_c))
        new_cell = f_gate * cell + i_gate * candidate
        o_gate = torch.sigmoid(xo + ho + self.W_co * new_cell + bias(self.b_o))
        new_hidden = o_gate * self._act(new_cell)
        return o_gate, (new_hidden, new_cell)


class SequenceForecaster(nn.Module):
    """Encoder-decoder ConvLSTM emitting class distributions per cell and step.

    ``decoder_mode`` picks the decoder's input stream:

    * ``feature_fed`` (default): step j consumes the j-th forecast feature
      cube.
    * ``label_fed``: step j consumes the previous step's predicted
      distribution, lifted to feature width by a learned 1x1x1 projection;
      the first step gets the uniform distribution, and during training
      ground-truth one-hot rows replace predictions at labeled cells.
      Requires ``with_label_projection=True`` at construction.
    """

    MODES = ("feature_fed", "label_fed")

    def __init__(
        self,
        region: RegionSpec,
        hidden_channels: int = 32,
        kernel_size: tuple[int, int, int] = (3, 3, 3),
        state_activation: str = "tanh",
        with_label_projection: bool = False,
    ) -> None:
        super().__init__()
        self.region = region
        self.hidden_channels = hidden_channels
        grid = region.grid_shape
        self.encoder = ConvLstmCell(region.channels, hidden_channels, grid, kernel_size, state_activation)
        self.decoder = ConvLstmCell(region.channels, hidden_channels, grid, kernel_size, state_activation)
        self.head = nn.Conv3d(hidden_channels, NUM_CLASSES, kernel_size=1)
        if with_label_projection:
            self.label_projection = nn.Conv3d(NUM_CLASSES, region.channels, kernel_size=1)
        else:
            self.label_projection = None

    def reset_parameters(self, generator: torch.Generator | None = None) -> None:
        self.encoder.reset_parameters(generator)
        self.decoder.reset_parameters(generator)
        with torch.no_grad():
            fan_in = self.head.weight.shape[1]
            bound = 1.0 / math.sqrt(fan_in)
            self.head.weight.uniform_(-bound, bound, generator=generator)
            self.head.bias.zero_()
            if self.label_projection is not None:
                fan_in = self.label_projection.weight.shape[1]
                bound = 1.0 / math.sqrt(fan_in)
                self.label_projection.weight.uniform_(-bound, bound, generator=generator)
                self.label_projection.bias.zero_()

    def _check_sequence(self, name: str, seq: torch.Tensor) -> None:
        expected = (*self.region.grid_shape, self.region.channels)
        if seq.ndim != 6 or tuple(seq.shape[2:]) != expected:
            raise ShapeError(
                f"{name} must be [B,steps,{','.join(map(str, expected))}], got {tuple(seq.shape)}"
            )

    def forward(
        self,
        history: torch.Tensor,
        forecast_features: torch.Tensor | None = None,
        mode: str = "feature_fed",
        horizon: int | None = None,
        labels: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """history [B,n,L,W,H,C] -> class probabilities [B,p,L,W,H,4].

        feature_fed requires ``forecast_features`` [B,p,L,W,H,C]; label_fed
        requires ``horizon`` (or infers it from forecast_features/labels).
        """
        if mode not in self.MODES:
            raise UsageError(f"mode must be one of {self.MODES}, got {mode!r}")
        self._check_sequence("history", history)
        batch = history.shape[0]
        state = self.encoder.zero_state(batch, dtype=history.dtype, device=history.device)
        hist = history.permute(0, 1, 5, 2, 3, 4)  # [B,n,C,L,W,H]
        for t in range(hist.shape[1]):
            _, state = self.encoder(hist[:, t], state)

        if mode == "feature_fed":
            if forecast_features is None:
                raise UsageError("feature_fed mode requires forecast feature cubes")
            self._check_sequence("forecast_features", forecast_features)
            feats = forecast_features.permute(0, 1, 5, 2, 3, 4)
            steps = feats.shape[1]
        else:
            if self.label_projection is None:
                raise ConfigurationError(
                    "label_fed mode requires with_label_projection=True at construction"
                )
            if horizon is None:
                if forecast_features is not None:
                    horizon = forecast_features.shape[1]
                elif labels is not None:
                    horizon = labels.shape[1]
                else:
                    raise UsageError("label_fed mode requires an explicit horizon")
            steps = int(horizon)
            feats = None

        outputs = []
        prev_dist = None
        for j in range(steps):
            if mode == "feature_fed":
                x_t = feats[:, j]
            else:
                if prev_dist is None:
                    prev_dist = torch.full(
                        (batch, NUM_CLASSES, *self.region.grid_shape),
                        1.0 / NUM_CLASSES, dtype=history.dtype, device=history.device,
                    )
                x_t = self.label_projection(prev_dist)
            o_gate, state = self.decoder(x_t, state)
            dist = torch.softmax(self.head(o_gate), dim=1)
            outputs.append(dist)
            if mode == "label_fed":
                prev_dist = dist
                if labels is not None:
                    step_labels = labels[:, j].long()
                    known = (step_labels >= 0).unsqueeze(1)
                    onehot = F.one_hot(step_labels.clamp_min(0), NUM_CLASSES)
                    onehot = onehot.permute(0, 4, 1, 2, 3).to(dist.dtype)
                    prev_dist = torch.where(known, onehot, dist)
        stacked = torch.stack(outputs, dim=1)  # [B,p,4,L,W,H]
        return stacked.permute(0, 1, 3, 4, 5, 2)


class CubeDetector(nn.Module):
    """3D CNN over one feature cube: three ReLU conv layers then a 1x1x1
    projection and per-cell softmax."""

    def __init__(self, in_channels: int = 12, hidden_channels: int = 32) -> None:
        super().__init__()
        if hidden_channels < 1:
            raise ConfigurationError("hidden_channels must be positive")
        self.conv1 = nn.Conv3d(in_channels, hidden_channels, (3, 3, 3), padding=_same_padding((3, 3, 3)))
        self.conv2 = nn.Conv3d(hidden_channels, hidden_channels, (3, 3, 3), padding=_same_padding((3, 3, 3)))
        self.conv3 = nn.Conv3d(hidden_channels, hidden_channels, (5, 5, 3), padding=_same_padding((5, 5, 3)))
        self.project = nn.Conv3d(hidden_channels, NUM_CLASSES, kernel_size=1)

    def reset_parameters(self, generator: torch.Generator | None = None) -> None:
        with torch.no_grad():
            for layer in (self.conv1, self.conv2, self.conv3, self.project):
                fan_in = layer.weight.shape[1] * layer.weight.shape[2] * layer.weight.shape[3] * layer.weight.shape[4]
                bound = 1.0 / math.sqrt(fan_in)
                layer.weight.uniform_(-bound, bound, generator=generator)
                layer.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x [B,L,W,H,C] -> class probabilities [B,L,W,H,4]."""
        if x.ndim != 5 or x.shape[-1] != self.conv1.in_channels:
            raise ShapeError(
                f"input must be [B,L,W,H,{self.conv1.in_channels}], got {tuple(x.shape)}"
            )
        z = x.permute(0, 4, 1, 2, 3)
        z = F.relu(self.conv1(z))
        z = F.relu(self.conv2(z))
        z = F.relu(self.conv3(z))
        logits = self.project(z)
        return torch.softmax(logits, dim=1).permute(0, 2, 3, 4, 1)

    def forward_cube(self, cube: FeatureCube) -> torch.Tensor:
        """Single-cube convenience wrapper enforcing the forecast-cube kind."""
        if cube.kind is not CubeKind.NWP_FORECAST:
            raise UsageError(f"detector expects a {CubeKind.NWP_FORECAST.value} cube, got {cube.kind.value}")
        x = torch.from_numpy(cube.data.copy()).unsqueeze(0)
        return self.forward(x)[0]


def detect_sequence(detector: CubeDetector, forecast_features: torch.Tensor) -> torch.Tensor:
    """Apply the detector to every step of [B,p,L,W,H,C] by folding steps into
    the batch axis; returns [B,p,L,W,H,4]."""
    b, p = forecast_features.shape[:2]
    flat = forecast_features.reshape(b * p, *forecast_features.shape[2:])
    probs = detector(flat)
    return probs.reshape(b, p, *probs.shape[1:])
