"""
Parameter store module.

This module provides the ordered parameter container shared by the
trainers, the checkpoint format and the gradient oracles, plus the Adam
optimiser state and update step.
"""

from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import torch
from torch import nn

from .errors import ShapeMismatchError


class ParamStore:
    """
    Ordered mapping from parameter name to tensor.

    Names are unique and iteration follows insertion order. Each entry
    carries a requires-gradient flag; frozen entries are skipped by
    `backprop`, `finite_diff_grad` and `adam_step`.
    """

    def __init__(self) -> None:
        self._tensors: Dict[str, torch.Tensor] = {}
        self._trainable: Dict[str, bool] = {}

    @classmethod
    def from_module(
        cls, module: nn.Module, frozen: Iterable[str] = (), prefix: str = ""
    ) -> "ParamStore":
        """
        Build a store that shares storage with a module's parameters.

        Args:
            module: The module whose parameters to expose.
            frozen: Parameter names to mark as not requiring gradients.
            prefix: Optional prefix prepended to every name.

        Returns:
            A store whose tensors are the module's Parameter objects.
        """
        frozen = set(frozen)
        store = cls()
        for name, param in module.named_parameters():
            store.add(prefix + name, param, requires_grad=name not in frozen)
        return store

    def add(self, name: str, tensor: torch.Tensor, requires_grad: bool = True) -> None:
        """
        Add a named tensor.

        Raises:
            ValueError: If the name is already present.
        """
        if name in self._tensors:
            raise ValueError(f"Parameter '{name}' is already registered")
        self._tensors[name] = tensor
        self._trainable[name] = requires_grad

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._tensors[name]

    def __contains__(self, name: object) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def names(self) -> List[str]:
        return list(self._tensors)

    def items(self) -> List[Tuple[str, torch.Tensor]]:
        return list(self._tensors.items())

    def requires_grad(self, name: str) -> bool:
        return self._trainable[name]

    def trainable_items(self) -> List[Tuple[str, torch.Tensor]]:
        """Return (name, tensor) pairs of entries flagged as trainable."""
        return [(n, t) for n, t in self._tensors.items() if self._trainable[n]]

    def numel(self) -> int:
        return sum(t.numel() for t in self._tensors.values())

    def load_into(self, module: nn.Module, prefix: str = "", strict: bool = True) -> None:
        """
        Copy values from this store into a module's parameters.

        Args:
            module: Destination module.
            prefix: Name prefix used when the store was written.
            strict: Require an exact match of names and shapes.

        Raises:
            KeyError: If `strict` and a module parameter is missing from the store.
            ShapeMismatchError: If a shape differs.
        """
        with torch.no_grad():
            for name, param in module.named_parameters():
                key = prefix + name
                if key not in self._tensors:
                    if strict:
                        raise KeyError(f"Checkpoint has no entry '{key}'")
                    continue
                value = self._tensors[key]
                if tuple(value.shape) != tuple(param.shape):
                    raise ShapeMismatchError(
                        f"Entry '{key}' has shape {tuple(value.shape)}, module expects {tuple(param.shape)}"
                    )
                param.copy_(value.to(param.dtype))


class AdamState:
    """
    Adam optimiser state for a ParamStore.

    Moments live inside a torch Adam instance bound to the store's trainable
    tensors, so their shapes always equal the parameter shapes. `t` counts
    completed updates.

    Args:
        store: The parameters to optimise. Trainable tensors must be leaves.
        lr: Learning rate.
        beta1: First-moment decay.
        beta2: Second-moment decay.
        eps: Denominator offset.
    """

    def __init__(
        self,
        store: ParamStore,
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.names = [name for name, _ in store.trainable_items()]
        self.optimizer = torch.optim.Adam(
            [store[name] for name in self.names],
            lr=lr,
            betas=(beta1, beta2),
            eps=eps,
            foreach=False,
        )

    def moments(self, tensor: torch.Tensor) -> Optional[Tuple[torch.Tensor, torch.Tensor]]:
        """Return the (first, second) moment tensors of a parameter, once created."""
        state = self.optimizer.state.get(tensor)
        if not state:
            return None
        return state["exp_avg"], state["exp_avg_sq"]


def adam_step(store: ParamStore, grads: Dict[str, torch.Tensor], state: AdamState) -> ParamStore:
    """
    Apply one bias-corrected Adam update in place.

    Args:
        store: The parameters to update.
        grads: Gradients keyed by name, one per trainable parameter.
        state: The optimiser state bound to `store`; `state.t` is advanced by one.

    Returns:
        The updated store.

    Raises:
        ShapeMismatchError: If a gradient is missing or has the wrong shape.
    """
    for name in state.names:
        if name not in grads:
            raise ShapeMismatchError(f"No gradient supplied for '{name}'")
        if tuple(grads[name].shape) != tuple(store[name].shape):
            raise ShapeMismatchError(
                f"Gradient for '{name}' has shape {tuple(grads[name].shape)}, "
                f"parameter has {tuple(store[name].shape)}"
            )
    for name in state.names:
        param = store[name]
        param.grad = grads[name].detach().to(param.dtype).clone()
    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=True)
    state.t += 1
    return store
