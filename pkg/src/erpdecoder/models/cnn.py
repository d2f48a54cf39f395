"""
Contains the intermediate CNN on raw Cz/Pz epochs: a single temporal-spatial convolution block followed by a dense
two class layer. Training runs in float64, the fitted parameters are frozen to float32.
"""

import logging
from typing import Callable, Optional, Sequence

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field
from torch import nn

from ..core import TrainingTag
from ..errors import InvalidArgumentError, TrainingDivergenceError
from ..types import FloatArray
from .base import ModelKind, TrainedModel

_logger = logging.getLogger("erpdecoder.models.cnn")

EpochCallback = Callable[[int, float], None]
CheckpointCallback = Callable[[int, TrainedModel], None]


class CnnConfig(BaseModel):
    """
    The network layout. The input has `n_channels` rows of `n_samples` samples ([0, 700) ms by default).
    """

    model_config = ConfigDict(frozen=True)

    n_channels: int = Field(default=2, ge=1)
    n_samples: int = Field(default=350, ge=1)
    n_filters: int = Field(default=50, ge=1)
    kernel_length: int = Field(default=10, ge=1)
    pool_length: int = Field(default=3, ge=1)
    pool_stride: int = Field(default=3, ge=1)
    dropout: float = Field(default=0.1, ge=0, lt=1)
    target_weight: float = Field(default=5.0, gt=0)

    @property
    def pooled_length(self) -> int:
        """Number of time steps after the pooling"""
        convolved = self.n_samples - self.kernel_length + 1
        if convolved < self.pool_length:
            raise InvalidArgumentError(f"{self.n_samples} samples are too short for the kernel and pool sizes")
        return (convolved - self.pool_length) // self.pool_stride + 1


class OptimizerConfig(BaseModel):
    """
    SGD with Nesterov momentum
    """

    model_config = ConfigDict(frozen=True)

    momentum: float = Field(default=0.95, gt=0, lt=1)
    learning_rate: float = Field(default=1e-5, gt=0)
    weight_decay: float = Field(default=1e-6, ge=0)
    batch_size: int = Field(default=32, ge=1)
    n_epochs: int = Field(default=30, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)


class IntermediateCnn(nn.Module):
    """
    temporal conv -> spatial conv -> batch norm -> ReLU -> max pool -> dropout -> dense.
    Input shape (batch, 1, channels, samples), output: two logits (non-target, target).
    """

    def __init__(self, config: CnnConfig):
        super().__init__()
        self.config = config
        self.temporal = nn.Conv2d(1, config.n_filters, (1, config.kernel_length))
        self.spatial = nn.Conv2d(config.n_filters, config.n_filters, (config.n_channels, 1), bias=False)
        self.norm = nn.BatchNorm2d(config.n_filters)
        self.activation = nn.ReLU()
        self.pool = nn.MaxPool2d((1, config.pool_length), stride=(1, config.pool_stride))
        self.dropout = nn.Dropout(config.dropout)
        self.dense = nn.Linear(config.n_filters * config.pooled_length, 2)
        self.reset_parameters()

    def reset_parameters(self):
        """Glorot uniform weights, zero biases, BN with gamma 1 and beta 0"""
        for layer in (self.temporal, self.spatial, self.dense):
            nn.init.xavier_uniform_(layer.weight)
            if layer.bias is not None:
                nn.init.zeros_(layer.bias)
        self.norm.reset_parameters()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.activation(self.norm(self.spatial(self.temporal(x))))
        x = self.dropout(self.pool(x))
        return self.dense(torch.flatten(x, start_dim=1))


def _as_input(trials: np.ndarray, config: CnnConfig, dtype: torch.dtype) -> torch.Tensor:
    trials = np.asarray(trials)
    if trials.ndim != 3 or trials.shape[1:] != (config.n_channels, config.n_samples):
        raise InvalidArgumentError(
            f"Expected trials of shape (n, {config.n_channels}, {config.n_samples}), got {trials.shape}"
        )
    return torch.from_numpy(np.ascontiguousarray(trials)).to(dtype).unsqueeze(1)


def loss_function(config: CnnConfig, dtype: torch.dtype = torch.float64) -> nn.CrossEntropyLoss:
    """Class weighted cross entropy, the target class weighted by `target_weight`"""
    return nn.CrossEntropyLoss(weight=torch.tensor([1.0, config.target_weight], dtype=dtype))


def parameter_l2_norm(module: nn.Module) -> float:
    """The L2 norm of all trainable parameters"""
    with torch.no_grad():
        return float(torch.sqrt(sum((parameter.double() ** 2).sum() for parameter in module.parameters())))


# pylint: disable=too-many-arguments
def _freeze(
    module: IntermediateCnn,
    config: CnnConfig,
    optimizer_config: OptimizerConfig,
    epoch_losses: list[float],
    subject_id: str,
    training_set_tag: TrainingTag,
) -> TrainedModel:
    """Copies the current parameters into a float32 model, leaving the module in inference mode"""
    module.eval()
    return TrainedModel.create(
        ModelKind.CNN,
        {name: tensor.detach().cpu().numpy() for name, tensor in module.state_dict().items()},
        {**config.model_dump(mode="json"), "optimizer": optimizer_config.model_dump(mode="json")},
        subject_id=subject_id,
        training_set_tag=training_set_tag,
        seed=optimizer_config.seed,
        metrics={
            "initial_loss": epoch_losses[0],
            "final_loss": epoch_losses[-1],
            "parameter_l2_norm": parameter_l2_norm(module),
        },
    )


# pylint: disable=too-many-arguments, too-many-locals
def fit_cnn(
    trials: np.ndarray,
    labels: np.ndarray,
    config: CnnConfig = CnnConfig(),
    optimizer_config: OptimizerConfig = OptimizerConfig(),
    *,
    subject_id: str = "",
    training_set_tag: TrainingTag = TrainingTag.IN_LAB,
    on_epoch: Optional[EpochCallback] = None,
    checkpoints: Sequence[int] = (),
    on_checkpoint: Optional[CheckpointCallback] = None,
) -> TrainedModel:
    """
    Trains the network on (n, channels, samples) trials with binary labels (1 = target). The weight initialisation,
    the dropout masks and the batch composition only depend on `optimizer_config.seed`.
    `on_epoch` is called after every epoch with the epoch index and its mean batch loss. After `k` epochs for every
    k in `checkpoints`, `on_checkpoint` receives k and the frozen model of that moment, which equals the model
    trained with `n_epochs=k`.
    """
    labels = np.asarray(labels, dtype=np.int64)
    inputs = _as_input(trials, config, torch.float64)
    if inputs.shape[0] != labels.shape[0]:
        raise InvalidArgumentError(f"{inputs.shape[0]} trials but {labels.shape[0]} labels")
    if np.unique(labels).size < 2:
        raise InvalidArgumentError("The training set must contain targets and non-targets")
    targets = torch.from_numpy(labels)
    shuffle_rng = np.random.default_rng(optimizer_config.seed)
    checkpoint_set = set(checkpoints)
    epoch_losses: list[float] = []
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(optimizer_config.seed % 2**63)
        module = IntermediateCnn(config).double()
        criterion = loss_function(config)
        optimizer = torch.optim.SGD(
            module.parameters(),
            lr=optimizer_config.learning_rate,
            momentum=optimizer_config.momentum,
            nesterov=True,
            weight_decay=optimizer_config.weight_decay,
        )
        module.train()
        for epoch in range(optimizer_config.n_epochs):
            order = shuffle_rng.permutation(labels.size)
            batch_losses: list[float] = []
            for batch, start in enumerate(range(0, labels.size, optimizer_config.batch_size)):
                index = torch.from_numpy(order[start : start + optimizer_config.batch_size])
                if index.numel() < 2:
                    # batch norm needs two trials per batch
                    continue
                optimizer.zero_grad()
                loss = criterion(module(inputs[index]), targets[index])
                if not torch.isfinite(loss):
                    raise TrainingDivergenceError(epoch, batch, float(loss))
                loss.backward()
                optimizer.step()
                batch_losses.append(float(loss))
            epoch_losses.append(float(np.mean(batch_losses)))
            _logger.debug("Epoch %i: loss %.6f", epoch, epoch_losses[-1])
            if on_epoch is not None:
                on_epoch(epoch, epoch_losses[-1])
            if on_checkpoint is not None and epoch + 1 in checkpoint_set:
                snapshot = optimizer_config.model_copy(update={"n_epochs": epoch + 1})
                on_checkpoint(epoch + 1, _freeze(module, config, snapshot, epoch_losses, subject_id, training_set_tag))
                module.train()
    model = _freeze(module, config, optimizer_config, epoch_losses, subject_id, training_set_tag)
    metrics = model.metrics
    _logger.info(
        "Trained the CNN for %i epochs on %i trials, loss %.4f -> %.4f",
        optimizer_config.n_epochs,
        labels.size,
        metrics["initial_loss"],
        metrics["final_loss"],
    )
    return model


def cnn_config_of(model: TrainedModel) -> CnnConfig:
    """The network layout stored in the model"""
    return CnnConfig.model_validate({key: value for key, value in model.config.items() if key != "optimizer"})


def build_module(model: TrainedModel) -> IntermediateCnn:
    """Rebuilds the float32 network of a trained model in inference mode"""
    module = IntermediateCnn(cnn_config_of(model))
    reference = module.state_dict()
    module.load_state_dict(
        {name: torch.from_numpy(model.parameters[name].copy()).to(reference[name].dtype) for name in reference}
    )
    return module.eval()


def cnn_predict(model: TrainedModel, trials: np.ndarray) -> FloatArray:
    """
    Softmax target probabilities of (n, channels, samples) trials.
    """
    cache = model.runtime_cache()
    if "module" not in cache:
        cache["module"] = build_module(model)
    module: IntermediateCnn = cache["module"]
    with torch.no_grad():
        logits = module(_as_input(trials, module.config, torch.float32))
        return torch.softmax(logits, dim=1)[:, 1].double().numpy()
