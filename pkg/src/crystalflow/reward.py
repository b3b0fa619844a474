"""Energy backends and the Boltzmann reward.

Two backends map canonical records to an energy in eV/atom:

* ``SurrogateEnergy``: a fixed analytic function for self-contained runs.
* ``ProxyEnergy``: inference-only formation-energy network (composition,
  space group and lattice branches feeding a final MLP) with weights loaded
  from a tensor container.

``reward(E, T) = exp(-E / T)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import records as recio
from . import symtab, tensorio
from .symtab import LATTICE_DIMS

# --------------------------------------------------------------------- reward


def reward(energy, temperature: float):
    """Boltzmann transform ``exp(-energy / T)``; works on scalars and arrays."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    e = np.asarray(energy, dtype=np.float64)
    if not np.all(np.isfinite(e)):
        raise ValueError("energy must be finite")
    out = np.exp(-e / temperature)
    return float(out) if out.ndim == 0 else out


def log_reward(energy, temperature: float):
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    e = np.asarray(energy, dtype=np.float64)
    if not np.all(np.isfinite(e)):
        raise ValueError("energy must be finite")
    out = -e / temperature
    return float(out) if out.ndim == 0 else out


# ------------------------------------------------------------------ surrogate

_PROP = {name: i for i, name in enumerate(symtab.tables().property_names)}
# molar volume in cm^3/mol -> volume per atom in angstrom^3
_CM3_PER_MOL_TO_A3 = 1e24 / 6.02214076e23


def _cell_volume(lat: dict) -> float:
    ca, cb, cg = (math.cos(math.radians(lat[k])) for k in ("alpha", "beta", "gamma"))
    arg = 1.0 - ca * ca - cb * cb - cg * cg + 2.0 * ca * cb * cg
    return lat["a"] * lat["b"] * lat["c"] * math.sqrt(max(arg, 1e-12))


class SurrogateEnergy:
    """Analytic stand-in for a formation-energy model, in eV/atom.

    With stoichiometric fractions ``f_i``, counts ``n_i``, Pauling
    electronegativities ``chi_i`` and tabulated atomic volumes ``v_i``::

        E = -0.5
            - 3.5  * tanh(sum_i f_i (chi_i - chi_mean)^2)       ionic character
            - 0.75 * sum_i f_i cos(2 pi n_i / 3)                 multimodal in counts
            + 0.25 * (((37 * sg) mod 17) / 16 - 0.5)             space-group offset
            + 1.0  * tanh(0.25 * ln(V / V_ref)^2)                cell-volume strain

    ``V`` is the cell volume in cubic angstrom and ``V_ref = sum_i n_i v_i``
    with the tabulated molar volumes converted to angstrom^3 per atom. The strain term is
    dropped when the record has no lattice. Every term is bounded, so
    ``E`` lies in ``[-4.875, 1.375]``.
    """

    name = "surrogate"

    def energy(self, rec: dict) -> float:
        comp = rec["composition"]
        syms = sorted(comp, key=lambda s: symtab.element(s).Z)
        n = np.array([comp[s] for s in syms], dtype=np.float64)
        f = n / n.sum()
        chi = np.array([symtab.element(s).physical_properties[_PROP["electronegativity"]] for s in syms])
        spread = float(np.dot(f, (chi - np.dot(f, chi)) ** 2))
        e = -0.5 - 3.5 * math.tanh(spread)
        e -= 0.75 * float(np.dot(f, np.cos(2.0 * math.pi * n / 3.0)))
        e += 0.25 * (((37 * int(rec["space_group"])) % 17) / 16.0 - 0.5)
        lat = rec.get("lattice")
        if lat is not None:
            vol = _CM3_PER_MOL_TO_A3 * np.array(
                [symtab.element(s).physical_properties[_PROP["atomic_volume"]] for s in syms]
            )
            v_ref = float(np.dot(n, vol))
            e += math.tanh(0.25 * math.log(_cell_volume(lat) / v_ref) ** 2)
        return e

    def __call__(self, recs: Sequence[dict]) -> np.ndarray:
        return np.array([self.energy(r) for r in recs], dtype=np.float64)


# ---------------------------------------------------------------------- proxy


class ProxyFormatError(ValueError):
    """Weight file inconsistent with the proxy architecture."""


class VocabularyError(KeyError):
    pass


@dataclass(frozen=True)
class ProxyHyperparameters:
    properties_proj_size: int = 64
    group_emb_size: int = 16
    period_emb_size: int = 256
    z_emb_size: int = 128
    sg_emb_size: int = 128
    lat_hidden_channels: int = 284
    lat_num_layers: int = 1
    num_layers: int = 5
    hidden_channels: int = 576
    n_properties: int = 8
    z_vocab: int = 118
    period_vocab: int = 7
    group_vocab: int = 18
    sg_vocab: int = 230

    @property
    def element_dim(self) -> int:
        return self.properties_proj_size + self.z_emb_size + self.period_emb_size + self.group_emb_size


def proxy_shapes(hp: ProxyHyperparameters) -> dict[str, tuple[int, ...]]:
    """Name -> shape of every learnable tensor.

    * ``props_proj``: bias-free projection of the property vector.
    * ``comp``: one ReLU layer from the pooled element embedding to ``hidden_channels``.
    * ``lat.i``: ``lat_num_layers`` ReLU layers of width ``lat_hidden_channels``.
    * ``out.i``: ``num_layers`` linear layers; all but the last have
      ``hidden_channels`` outputs and ReLU, the last outputs the scalar energy.
    """
    s = {
        "props_proj.weight": (hp.n_properties, hp.properties_proj_size),
        "z_emb": (hp.z_vocab, hp.z_emb_size),
        "period_emb": (hp.period_vocab, hp.period_emb_size),
        "group_emb": (hp.group_vocab, hp.group_emb_size),
        "comp.weight": (hp.element_dim, hp.hidden_channels),
        "comp.bias": (hp.hidden_channels,),
        "sg_emb": (hp.sg_vocab, hp.sg_emb_size),
    }
    width = 6
    for i in range(hp.lat_num_layers):
        s[f"lat.{i}.weight"] = (width, hp.lat_hidden_channels)
        s[f"lat.{i}.bias"] = (hp.lat_hidden_channels,)
        width = hp.lat_hidden_channels
    width = hp.hidden_channels + hp.sg_emb_size + (hp.lat_hidden_channels if hp.lat_num_layers else 6)
    for i in range(hp.num_layers):
        fan_out = 1 if i == hp.num_layers - 1 else hp.hidden_channels
        s[f"out.{i}.weight"] = (width, fan_out)
        s[f"out.{i}.bias"] = (fan_out,)
        width = fan_out
    return s


STAT_SHAPES = {
    "stats.lp_mean": (6,),
    "stats.lp_std": (6,),
    "stats.prop_mean": (8,),
    "stats.prop_std": (8,),
}


def proxy_param_count(hp: ProxyHyperparameters) -> int:
    return sum(int(np.prod(shape)) for shape in proxy_shapes(hp).values())


def _relu(x):
    return np.maximum(x, 0.0)


class ProxyEnergy:
    """Inference-only proxy network.

    Composition branch: each element's vector ``[W p_Z, E_Z, E_period, E_group]``
    (properties standardised with the stored statistics) is pooled by a
    stoichiometric-fraction weighted sum, elements visited in increasing Z,
    then passed through one ReLU layer. Lattice branch: ``(LP - mu) / sigma``
    through the lattice MLP; records without a lattice use ``mu`` (a zero
    standardised input). The three branches are concatenated and fed to the
    output MLP.
    """

    name = "proxy"

    def __init__(self, tensors: dict[str, np.ndarray], hp: ProxyHyperparameters):
        self.hp = hp
        expected = dict(proxy_shapes(hp))
        expected.update(STAT_SHAPES)
        if hp.n_properties != STAT_SHAPES["stats.prop_mean"][0]:
            raise ProxyFormatError("property statistics expect 8 properties")
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        if missing or extra:
            raise ProxyFormatError(f"tensor names mismatch: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            if tuple(tensors[name].shape) != shape:
                raise ProxyFormatError(f"{name}: shape {tuple(tensors[name].shape)} != expected {shape}")
        if not np.all(tensors["stats.lp_std"] > 0) or not np.all(tensors["stats.prop_std"] > 0):
            raise ProxyFormatError("standardisation scales must be strictly positive")
        self.t = {k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()}

    @property
    def n_params(self) -> int:
        return sum(v.size for k, v in self.t.items() if not k.startswith("stats."))

    # -- construction -------------------------------------------------------

    @classmethod
    def random(cls, hp: Optional[ProxyHyperparameters] = None, seed: int = 0, lp_mean=None, lp_std=None):
        """Randomly initialised weights (Glorot-uniform matrices, N(0,1) embeddings)."""
        hp = hp or ProxyHyperparameters()
        rng = np.random.default_rng(seed)
        t = {}
        for name, shape in proxy_shapes(hp).items():
            if name.endswith("_emb"):
                t[name] = rng.standard_normal(shape)
            elif len(shape) == 2:
                bound = math.sqrt(6.0 / sum(shape))
                t[name] = rng.uniform(-bound, bound, shape)
            else:
                t[name] = np.zeros(shape)
        props = np.array([e.physical_properties for e in symtab.tables().elements.values()])
        t["stats.prop_mean"] = props.mean(axis=0)
        t["stats.prop_std"] = np.where(props.std(axis=0) > 0, props.std(axis=0), 1.0)
        t["stats.lp_mean"] = np.array(lp_mean if lp_mean is not None else [6.0, 6.0, 8.0, 90.0, 90.0, 90.0], float)
        t["stats.lp_std"] = np.array(lp_std if lp_std is not None else [2.5, 2.5, 4.0, 10.0, 10.0, 12.0], float)
        return cls(t, hp)

    @classmethod
    def load(cls, path: str | Path) -> "ProxyEnergy":
        try:
            tensors, meta = tensorio.load(path)
        except tensorio.TensorFormatError as exc:
            raise ProxyFormatError(str(exc)) from None
        hp_doc = meta.get("hyperparameters")
        if not isinstance(hp_doc, dict):
            raise ProxyFormatError("weight file header lacks 'hyperparameters'")
        try:
            hp = ProxyHyperparameters(**hp_doc)
        except TypeError as exc:
            raise ProxyFormatError(f"bad hyperparameters: {exc}") from None
        return cls(tensors, hp)

    def save(self, path: str | Path) -> None:
        meta = {"kind": "proxy", "hyperparameters": self.hp.__dict__, "n_params": self.n_params}
        tensorio.save(path, self.t, meta)

    # -- forward ------------------------------------------------------------

    def standardize_lattice(self, lat: Optional[dict]) -> np.ndarray:
        if lat is None:
            return np.zeros(6)
        v = np.array([lat[d] for d in LATTICE_DIMS], dtype=np.float64)
        return (v - self.t["stats.lp_mean"]) / self.t["stats.lp_std"]

    def element_vector(self, symbol: str) -> np.ndarray:
        try:
            el = symtab.element(symbol)
        except symtab.TableKeyError as exc:
            raise VocabularyError(str(exc)) from None
        hp = self.hp
        if not (1 <= el.Z <= hp.z_vocab and 1 <= el.period <= hp.period_vocab and 1 <= el.group <= hp.group_vocab):
            raise VocabularyError(f"element {symbol} outside the embedding vocabulary")
        p = (np.array(el.physical_properties) - self.t["stats.prop_mean"]) / self.t["stats.prop_std"]
        return np.concatenate(
            [
                p @ self.t["props_proj.weight"],
                self.t["z_emb"][el.Z - 1],
                self.t["period_emb"][el.period - 1],
                self.t["group_emb"][el.group - 1],
            ]
        )

    def composition_features(self, comp: dict) -> np.ndarray:
        syms = sorted(comp, key=lambda s: symtab.element(s).Z if s in symtab.tables().elements else -1)
        total = float(sum(comp.values()))
        pooled = np.zeros(self.hp.element_dim)
        for s in syms:
            pooled += (comp[s] / total) * self.element_vector(s)
        return pooled

    def features(self, rec: dict) -> np.ndarray:
        sg = int(rec["space_group"])
        if not 1 <= sg <= self.hp.sg_vocab:
            raise VocabularyError(f"space group {sg} outside the embedding vocabulary")
        h_c = _relu(self.composition_features(rec["composition"]) @ self.t["comp.weight"] + self.t["comp.bias"])
        h = self.standardize_lattice(rec.get("lattice"))
        for i in range(self.hp.lat_num_layers):
            h = _relu(h @ self.t[f"lat.{i}.weight"] + self.t[f"lat.{i}.bias"])
        return np.concatenate([h_c, self.t["sg_emb"][sg - 1], h])

    def __call__(self, recs: Sequence[dict]) -> np.ndarray:
        if len(recs) == 0:
            return np.zeros(0)
        h = np.stack([self.features(r) for r in recs])
        for i in range(self.hp.num_layers):
            h = h @ self.t[f"out.{i}.weight"] + self.t[f"out.{i}.bias"]
            if i < self.hp.num_layers - 1:
                h = _relu(h)
        return h[:, 0]

    def energy(self, rec: dict) -> float:
        return float(self([rec])[0])


# -------------------------------------------------------------------- helpers


@dataclass(frozen=True)
class RewardConfig:
    backend: str = "surrogate"
    weights: Optional[str] = None
    temperature: float = 8.0

    def __post_init__(self):
        if self.backend not in ("surrogate", "proxy"):
            raise ValueError(f"unknown energy backend {self.backend!r}")
        if self.backend == "proxy" and not self.weights:
            raise ValueError("the proxy backend needs a weight file")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")


def make_backend(config: RewardConfig) -> Callable[[Sequence[dict]], np.ndarray]:
    if config.backend == "surrogate":
        return SurrogateEnergy()
    return ProxyEnergy.load(config.weights)


def state_energy_fn(env, backend: Callable[[Sequence[dict]], np.ndarray]):
    """Adapter from terminal ``CrystalState`` batches to a record-based backend."""

    def fn(states):
        return backend([env.to_record(s) for s in states])

    return fn


def proxy_mae(backend: Callable[[Sequence[dict]], np.ndarray], path: str | Path) -> float:
    """Mean absolute error of ``backend`` on a labelled record CSV (``energy_ev_per_atom`` column)."""
    recs, vals = recio.read_csv(path, extra=(recio.ENERGY_COLUMN,))
    if not recs:
        raise recio.RecordParseError("no data rows")
    pred = np.asarray(backend(recs), dtype=np.float64)
    labels = np.array([v[0] for v in vals])
    return float(np.mean(np.abs(pred - labels)))
