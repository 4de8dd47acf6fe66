"""External API module for plateau learning rate scheduling and toy-scale SGD training

The scheduler smooths the raw loss with a simple moving average and decays the learning rate by a constant factor
whenever the smoothed loss fails to reach a new minimum for ``patience`` consecutive steps. Training stops once the
learning rate falls below a floor.

Will raise a derived class of :class:`pvawb.exceptions.PVAWBError` to allow the CLI implementation to convert
stack-trace/exceptions into STDERR message and non-zero exit codes.
"""

import math
import typing
import pathlib
import dataclasses
import collections

import numpy
import pandas

from pvawb import _settings
from pvawb import tensor_engine
from pvawb.graph_ir import LayerKind, NetworkGraph
from pvawb.exceptions import InvalidSpecError, NonFiniteLossError


_exclude_from_namespace = set(globals().keys())


def _from_mapping(cls, data: typing.Mapping[str, typing.Any]):
    fields = {field.name for field in dataclasses.fields(cls)}
    unknown = set(data) - fields
    if unknown:
        raise InvalidSpecError(f"Unknown {cls.__name__} keys {sorted(unknown)}, choose from {sorted(fields)}")
    return cls(**data)


@dataclasses.dataclass(frozen=True)
class SchedulerConfig:
    """Plateau scheduler settings

    :param base_lr: initial learning rate
    :param decay_factor: learning rate multiplier per decay, in ``(0, 1)``
    :param patience: steps without a new smoothed minimum before a decay
    :param window: simple moving average span
    :param terminate_below: learning rate floor that stops training

    :raises InvalidSpecError: If a value is outside its range
    """

    base_lr: float = _settings._default_base_lr
    decay_factor: float = _settings._default_decay_factor
    patience: int = _settings._default_patience
    window: int = _settings._default_window
    terminate_below: float = _settings._default_terminate_below

    def __post_init__(self) -> None:
        if not 0.0 < self.decay_factor < 1.0:
            raise InvalidSpecError(f"Decay factor must be in (0, 1), got '{self.decay_factor}'")
        if self.patience < 1 or self.window < 1:
            raise InvalidSpecError(f"Patience and window must be positive, got '{self.patience}', '{self.window}'")
        if self.base_lr < 0.0 or self.terminate_below < 0.0:
            raise InvalidSpecError("Learning rates must not be negative")

    @classmethod
    def from_dict(cls, data: typing.Mapping[str, typing.Any]) -> "SchedulerConfig":
        return _from_mapping(cls, data)


@dataclasses.dataclass(frozen=True)
class StepResult:
    """Outcome of one scheduler step

    :param lr: learning rate after the step
    :param decayed: whether this step decayed the learning rate
    :param terminate: whether the learning rate is below the floor
    :param smoothed: moving average loss
    """

    lr: float
    decayed: bool
    terminate: bool
    smoothed: float


class PlateauScheduler:
    """Sequential plateau detection state machine. Not safe for concurrent stepping.

    :param config: scheduler settings
    """

    def __init__(self, config: typing.Optional[SchedulerConfig] = None) -> None:
        self.config = SchedulerConfig() if config is None else config
        self.decays = 0
        self.best = math.inf
        self.since_best = 0
        self.steps = 0
        self._losses: typing.Deque[float] = collections.deque(maxlen=self.config.window)

    @property
    def lr(self) -> float:
        """``base_lr * decay_factor ** decays``"""
        return self.config.base_lr * self.config.decay_factor**self.decays

    @property
    def smoothed(self) -> float:
        if not self._losses:
            return math.nan
        return math.fsum(self._losses) / len(self._losses)

    @property
    def terminate(self) -> bool:
        floor = self.config.terminate_below * (1.0 - _settings._floor_relative_tolerance)
        return self.lr < floor

    def step(self, raw_loss: float) -> StepResult:
        """Record one raw loss

        :param raw_loss: training loss of the step

        :returns: step outcome

        :raises NonFiniteLossError: If the loss is NaN or infinite
        """
        if not math.isfinite(raw_loss):
            raise NonFiniteLossError(f"Scheduler received a non-finite loss '{raw_loss}' at step {self.steps + 1}")
        self.steps += 1
        self._losses.append(float(raw_loss))
        smoothed = self.smoothed
        decayed = False
        if smoothed < self.best:
            self.best = smoothed
            self.since_best = 0
        else:
            self.since_best += 1
            if self.since_best >= self.config.patience:
                self.decays += 1
                self.since_best = 0
                decayed = True
        return StepResult(lr=self.lr, decayed=decayed, terminate=self.terminate, smoothed=smoothed)


def scheduler_step(scheduler: PlateauScheduler, raw_loss: float) -> typing.Dict[str, typing.Any]:
    """Functional form of :meth:`PlateauScheduler.step`

    :returns: ``{"lr", "decayed", "terminate"}``
    """
    result = scheduler.step(raw_loss)
    return {"lr": result.lr, "decayed": result.decayed, "terminate": result.terminate}


def replay_scheduler(
    losses: typing.Iterable[float],
    config: typing.Optional[SchedulerConfig] = None,
    stop_on_terminate: bool = True,
) -> pandas.DataFrame:
    """Run a recorded loss stream through a fresh scheduler

    :param losses: raw losses in step order
    :param config: scheduler settings
    :param stop_on_terminate: stop after the first terminating step

    :returns: history with columns ``iteration``, ``loss``, ``smoothed_loss``, ``lr`` and ``decayed``
    """
    scheduler = PlateauScheduler(config)
    rows = []
    for iteration, loss in enumerate(losses, start=1):
        result = scheduler.step(loss)
        rows.append((iteration, float(loss), result.smoothed, result.lr, result.decayed))
        if stop_on_terminate and result.terminate:
            break
    return pandas.DataFrame(rows, columns=_settings._history_columns)


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """SGD settings

    :param batch_size: samples per step
    :param momentum: velocity decay
    :param weight_decay: L2 penalty on ``weight`` parameters
    :param iterations: step limit
    :param seed: shuffling and initialization seed
    :param scheduler: learning rate schedule
    :param verbose: print progress every ``report_every`` steps
    :param report_every: progress interval
    """

    batch_size: int = _settings._default_batch_size
    momentum: float = _settings._default_momentum
    weight_decay: float = _settings._default_weight_decay
    iterations: int = _settings._default_iterations
    seed: int = _settings._default_seed
    scheduler: SchedulerConfig = dataclasses.field(default_factory=SchedulerConfig)
    verbose: bool = False
    report_every: int = 50

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.iterations < 0:
            raise InvalidSpecError("Batch size must be positive and iterations must not be negative")
        if not 0.0 <= self.momentum < 1.0 or self.weight_decay < 0.0:
            raise InvalidSpecError("Momentum must be in [0, 1) and weight decay must not be negative")

    @classmethod
    def from_dict(cls, data: typing.Mapping[str, typing.Any]) -> "TrainConfig":
        """Build from a configuration mapping whose optional ``scheduler`` key holds :class:`SchedulerConfig` keys"""
        data = dict(data)
        if "scheduler" in data:
            data["scheduler"] = SchedulerConfig.from_dict(data["scheduler"] or {})
        return _from_mapping(cls, data)


def make_toy_dataset(
    samples: int = _settings._default_toy_samples,
    size: int = _settings._toy_image_size,
    seed: int = _settings._default_seed,
    noise: float = 0.1,
) -> typing.Tuple[numpy.ndarray, numpy.ndarray]:
    """Linearly separable two-class images

    Class 1 images carry a fixed random pattern, class 0 images its negation, both with additive Gaussian noise.

    :returns: ``(images of shape (samples, 1, size, size), labels)``
    """
    rng = numpy.random.default_rng(seed)
    pattern = rng.standard_normal((size, size))
    labels = numpy.arange(samples) % 2
    signs = numpy.where(labels == 1, 1.0, -1.0)
    images = signs[:, None, None] * pattern[None] + noise * rng.standard_normal((samples, size, size))
    return images[:, None], labels


@dataclasses.dataclass
class TrainResult:
    """Outcome of :meth:`train`

    :param weights: trained parameters
    :param history: per-step ``iteration``, ``loss``, ``smoothed_loss``, ``lr`` and ``decayed``
    :param scheduler: final scheduler state
    """

    weights: tensor_engine.WeightStore
    history: pandas.DataFrame
    scheduler: PlateauScheduler


def batch_loss(
    graph: NetworkGraph,
    weights: tensor_engine.WeightStore,
    images: numpy.ndarray,
    labels: numpy.ndarray,
    mode: str = "train",
) -> float:
    """Softmax cross-entropy of the graph output"""
    activations = tensor_engine.forward(graph, weights, images, mode=mode)
    loss, _ = tensor_engine.softmax_cross_entropy(activations[graph.output_name], labels)
    return loss


def accuracy(
    graph: NetworkGraph, weights: tensor_engine.WeightStore, images: numpy.ndarray, labels: numpy.ndarray
) -> float:
    """Fraction of inference mode arg-max predictions equal to the labels"""
    activations = tensor_engine.forward(graph, weights, images, mode="inference")
    logits = activations[graph.output_name].reshape(images.shape[0], -1)
    return float(numpy.mean(logits.argmax(axis=1) == numpy.asarray(labels)))


def train(
    graph: NetworkGraph,
    dataset: typing.Tuple[numpy.ndarray, numpy.ndarray],
    config: typing.Optional[TrainConfig] = None,
    weights: typing.Optional[tensor_engine.WeightStore] = None,
) -> TrainResult:
    """SGD with momentum under the plateau learning rate policy

    Each step draws the next mini-batch of a per-epoch permutation, computes the softmax cross-entropy of the graph
    output, updates the parameters with the current learning rate and then steps the scheduler with the loss. Training
    stops early when a decay takes the learning rate from at or above the scheduler floor to below it. A base learning
    rate already below the floor never stops early, so a zero learning rate runs every iteration.

    :param graph: graph whose output holds class logits
    :param dataset: ``(images, labels)``
    :param config: training settings
    :param weights: initial parameters, He-initialized from ``config.seed`` when omitted. Not modified.

    :returns: trained weights and history
    """
    config = TrainConfig() if config is None else config
    images, labels = dataset
    images = numpy.asarray(images, dtype=numpy.float64)
    labels = numpy.asarray(labels)
    shape = graph.input_shape
    if weights is None:
        weights = tensor_engine.init_weights(graph, shape, seed=config.seed)
    weights = weights.copy()
    velocity = {
        node: {name: numpy.zeros_like(value) for name, value in params.items()} for node, params in weights.items()
    }
    scheduler = PlateauScheduler(config.scheduler)
    rng = numpy.random.default_rng(config.seed)
    order = numpy.zeros(0, dtype=int)
    rows = []
    for iteration in range(1, config.iterations + 1):
        if order.size < config.batch_size:
            order = numpy.concatenate([order, rng.permutation(images.shape[0])])
        batch, order = order[: config.batch_size], order[config.batch_size :]
        activations = tensor_engine.forward(graph, weights, images[batch], mode="train")
        loss, loss_grad = tensor_engine.softmax_cross_entropy(activations[graph.output_name], labels[batch])
        gradients = tensor_engine.backward(graph, weights, images[batch], loss_grad)
        tensor_engine.update_running_statistics(graph, weights, gradients.activations)
        lr = scheduler.lr
        for node, params in gradients.weights.items():
            for name, grad in params.items():
                value = weights.get(node, name)
                if name == "weight":
                    grad = grad + config.weight_decay * value
                velocity[node][name] = config.momentum * velocity[node][name] - lr * grad
                weights.set(node, name, value + velocity[node][name])
        below_floor = scheduler.terminate
        result = scheduler.step(loss)
        rows.append((iteration, loss, result.smoothed, lr, result.decayed))
        if config.verbose and (iteration % config.report_every == 0 or result.decayed):
            print(f"iteration {iteration}: loss {loss:.6f}, smoothed {result.smoothed:.6f}, lr {lr:.6g}")
        if result.terminate and not below_floor:
            break
    history = pandas.DataFrame(rows, columns=_settings._history_columns)
    return TrainResult(weights=weights, history=history, scheduler=scheduler)


def init_mcrelu_from_crelu(
    crelu_graph: NetworkGraph, crelu_weights: tensor_engine.WeightStore, mcrelu_graph: NetworkGraph
) -> tensor_engine.WeightStore:
    """Initialize a modified C.ReLU network to compute exactly what a shared-bias C.ReLU network computes

    Shared nodes copy their parameters. Every ``ScaleBias`` node missing from the C.ReLU network becomes the identity,
    which gives both halves the convolution's shared bias.

    :param crelu_graph: shared-bias network
    :param crelu_weights: its parameters
    :param mcrelu_graph: network with separate scale and bias per C.ReLU half

    :returns: parameters of ``mcrelu_graph``
    """
    store = tensor_engine.WeightStore()
    shapes = tensor_engine.init_weights(mcrelu_graph)
    for node in mcrelu_graph.nodes:
        if node.name in crelu_graph and node.name in crelu_weights:
            for name, value in crelu_weights[node.name].items():
                store.set(node.name, name, value)
        elif node.kind is LayerKind.SCALE_BIAS:
            channels = shapes.get(node.name, "scale").shape[0]
            store.set(node.name, "scale", numpy.ones(channels))
            store.set(node.name, "bias", numpy.zeros(channels))
        elif node.name in shapes:
            raise InvalidSpecError(f"Node '{node.name}' has no counterpart in the C.ReLU network '{crelu_graph.name}'")
    return store


def save_history(history: pandas.DataFrame, path: typing.Union[str, pathlib.Path]) -> None:
    """Write the history CSV without an index column"""
    history.to_csv(path, index=False)


# Limit help() and 'from module import *' behavior to the module's public API
_module_objects = set(globals().keys()) - _exclude_from_namespace
__all__ = [name for name in _module_objects if not name.startswith("_")]
