"""Affine layers and tiny MLPs built on the autodiff primitives."""
from __future__ import annotations

from dataclasses import dataclass, fields

from . import autodiff as ad
from .autodiff import Parameter, RngStream, Tensor


@dataclass
class Affine:
    w: Parameter  # (d_in, d_out)
    b: Parameter  # (1, d_out)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)


@dataclass
class TwoLayer:
    """Affine -> ReLU -> Affine."""
    first: Affine
    second: Affine

    def __call__(self, x: Tensor) -> Tensor:
        return self.second(ad.relu(self.first(x)))


def affine(rng: RngStream, d_in: int, d_out: int, name: str) -> Affine:
    return Affine(
        w=ad.init_uniform(rng, d_in, (d_in, d_out), f"{name}.w"),
        b=ad.init_uniform(rng, d_in, (1, d_out), f"{name}.b"),
    )


def two_layer(rng: RngStream, d_in: int, hidden: int, d_out: int,
              name: str) -> TwoLayer:
    return TwoLayer(
        first=affine(rng, d_in, hidden, f"{name}.0"),
        second=affine(rng, hidden, d_out, f"{name}.1"),
    )


def collect_parameters(obj) -> list[Parameter]:
    """Walk dataclasses / lists / dicts and return every Parameter once."""
    out: list[Parameter] = []
    seen: set[int] = set()

    def visit(o):
        if isinstance(o, Parameter):
            if id(o) not in seen:
                seen.add(id(o))
                out.append(o)
        elif isinstance(o, (list, tuple)):
            for item in o:
                visit(item)
        elif isinstance(o, dict):
            for item in o.values():
                visit(item)
        elif hasattr(o, "__dataclass_fields__"):
            for f in fields(o):
                visit(getattr(o, f.name))

    visit(obj)
    return out
