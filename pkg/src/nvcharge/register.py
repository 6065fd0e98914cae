"""Two-node quantum register: dipole-coupled electron spins with nuclear
storage behind charge switching.

Each node is one center.  While negatively charged it exposes an electron
spin (S = 1) whose mS = 0 / mS = -1 pair serves as the working qubit;
its nitrogen nucleus holds one storage qubit permanently.  Switching a node
to the positive state discards the electron factor from the joint density
matrix, which is exactly what makes storage clean: no electron, no dipole
coupling, no cross-node evolution.

The electron-electron coupling uses the secular like-spin dipolar form
2*J*Sz(x)Sz (flip-flop terms quenched by node-distinct local fields), under
which a pulse of duration 1/(4|J|) is an exact controlled-phase on the
{mS0, mS-1} qubit pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .charge import attach_electron
from .dynamics import apply_relaxation
from .engine import DEFAULT_RELAXATION, RelaxationTable
from .physics import (
    ChargeState,
    Isotope,
    PhysicalParams,
    electron_sector_labels,
    nuclear_level_labels,
)

__all__ = [
    "K_DD_MHZ_NM3",
    "MeasurementRecord",
    "Node",
    "ProtocolConfig",
    "Register",
    "bell_fidelity",
    "concurrence",
    "dipole_coupling",
    "mutual_information",
    "run_protocol_phase",
]

# dipolar prefactor mu0*h/(4 pi) expressed in MHz * nm^3 / (MHz/T)^2,
# so J in MHz comes straight from gamma in MHz/T and r in nm
K_DD_MHZ_NM3 = 6.62607015e-8

PHASES = ("initialization", "operation", "readout")

_ELECTRON_QUBIT = (1, 2)  # basis indices of mS 0 and mS -1 (m descending)
_NUCLEAR_QUBIT = (0, 1)

_MZ_ELECTRON = np.array([1.0, 0.0, -1.0])

_HADAMARD = np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2.0)


def dipole_coupling(
    r_i: tuple[float, float, float],
    r_j: tuple[float, float, float],
    gamma_e_mhz_per_t: float,
    k_dd: float = K_DD_MHZ_NM3,
) -> float:
    """Secular point-dipole coupling (MHz) between two electron spins.

    Positions are in nanometers; the polar angle is measured against the
    shared quantization axis z.  Vanishes exactly on the magic angle
    cos^2(theta) = 1/3.
    """
    d = np.subtract(r_j, r_i, dtype=float)
    r = float(np.linalg.norm(d))
    if r == 0.0:
        raise ValueError("coincident node positions have no defined coupling")
    cos2 = (d[2] / r) ** 2
    return k_dd * gamma_e_mhz_per_t**2 * (1.0 - 3.0 * cos2) / r**3


@dataclass
class Node:
    """One addressable center: geometry plus its current charge state."""

    id: str
    position: tuple[float, float, float]
    isotope: Isotope = Isotope.N15
    charge: ChargeState = ChargeState.MINUS


@dataclass(frozen=True)
class ProtocolConfig:
    """Knobs for the three protocol phases.

    electron_init_level is the m-descending basis index an electrically
    attached electron starts in; the default 1 is mS = 0, matching what a
    laser init would have produced.
    """

    swap_error: float = 0.0
    swap_duration_us: float = 0.0
    entangle_time_us: float | None = None  # None: 1/(4|J|)
    electron_init_level: int = 1
    readout_node: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.swap_error <= 1.0:
            raise ValueError("swap_error must be a probability")
        if self.swap_duration_us < 0:
            raise ValueError("swap_duration_us must be nonnegative")
        if self.entangle_time_us is not None and self.entangle_time_us <= 0:
            raise ValueError("entangle_time_us must be positive")
        if self.electron_init_level not in (0, 1, 2):
            raise ValueError("electron_init_level must index the S=1 triplet")


@dataclass(frozen=True)
class MeasurementRecord:
    node_id: str
    basis: str
    outcome: str
    probability: float


class Register:
    """Joint state of up to two nodes, with charge-dependent structure.

    The density matrix is a tensor product over per-node factors in node
    order: an electron factor when the node's charge carries one, then the
    nuclear factor.  Charge switches add and remove electron factors, so
    the matrix dimension changes as the protocol runs.
    """

    def __init__(
        self,
        nodes: list[Node],
        params: PhysicalParams | None = None,
        relaxation: RelaxationTable = DEFAULT_RELAXATION,
        k_dd: float = K_DD_MHZ_NM3,
    ):
        if not nodes:
            raise ValueError("register needs at least one node")
        if len(nodes) > 2:
            raise ValueError(f"register supports at most 2 nodes, got {len(nodes)}")
        if len({n.id for n in nodes}) != len(nodes):
            raise ValueError("node ids must be unique")
        positions = {tuple(float(x) for x in n.position) for n in nodes}
        if len(positions) != len(nodes):
            raise ValueError("node positions must be distinct")
        self.nodes = nodes
        self.params = params if params is not None else PhysicalParams()
        self.relaxation = relaxation
        self.k_dd = k_dd
        parts = []
        for node in nodes:
            e = attach_electron(node.charge)
            if e is not None:
                parts.append(e)
            nd = len(nuclear_level_labels(node.isotope))
            nuc = np.zeros((nd, nd), dtype=complex)
            nuc[0, 0] = 1.0
            parts.append(nuc)
        self.rho = parts[0]
        for p in parts[1:]:
            self.rho = np.kron(self.rho, p)

    # -- factor bookkeeping -------------------------------------------------

    def _factors(self) -> list[tuple[str, int, int]]:
        """(kind, node_index, dim) per tensor factor, in joint order."""
        out = []
        for i, node in enumerate(self.nodes):
            e = attach_electron(node.charge)
            if e is not None:
                out.append(("e", i, e.shape[0]))
            out.append(("n", i, len(nuclear_level_labels(node.isotope))))
        return out

    def _dims(self) -> list[int]:
        return [d for _, _, d in self._factors()]

    def _factor_index(self, node: int, kind: str) -> int:
        for k, (fk, fi, _) in enumerate(self._factors()):
            if fi == node and fk == kind:
                return k
        raise ValueError(
            f"node {node} has no {kind!r} factor in its current charge state"
        )

    def _apply_matrix(self, m: np.ndarray, axes: tuple[int, ...]) -> None:
        """rho <- M rho M^dag with M acting on the given (ascending) factors."""
        dims = self._dims()
        k = len(dims)
        sub = [dims[a] for a in axes]
        t = self.rho.reshape(dims + dims)
        mt = m.astype(complex).reshape(sub + sub)
        na = len(axes)
        t = np.tensordot(mt, t, axes=(list(range(na, 2 * na)), list(axes)))
        t = np.moveaxis(t, range(na), axes)
        right = [k + a for a in axes]
        t = np.tensordot(t, mt.conj(), axes=(right, list(range(na, 2 * na))))
        t = np.moveaxis(t, range(-na, 0), right)
        self.rho = t.reshape(self.rho.shape)

    def _apply_channel_1q(self, channel, axis: int) -> None:
        """Apply a map rho_d -> rho_d to one tensor factor."""
        dims = self._dims()
        d = dims[axis]
        sup = np.empty((d * d, d * d), dtype=complex)
        for a in range(d):
            for b in range(d):
                basis = np.zeros((d, d), dtype=complex)
                basis[a, b] = 1.0
                sup[:, a * d + b] = channel(basis).reshape(-1)
        k = len(dims)
        t = self.rho.reshape(dims + dims)
        st = sup.reshape(d, d, d, d)
        t = np.tensordot(st, t, axes=([2, 3], [axis, k + axis]))
        t = np.moveaxis(t, (0, 1), (axis, k + axis))
        self.rho = t.reshape(self.rho.shape)

    def _trace_out(self, axis: int) -> None:
        dims = self._dims()
        k = len(dims)
        t = self.rho.reshape(dims + dims)
        d = math.prod(dims) // dims[axis]
        self.rho = np.trace(t, axis1=axis, axis2=k + axis).reshape(d, d)

    def _insert_factor(self, state: np.ndarray, position: int) -> None:
        dims = self._dims()
        k = len(dims)
        t = self.rho.reshape(dims + dims)
        t = np.tensordot(state.astype(complex), t, axes=0)
        order_out = list(range(2, 2 + k))
        order_out.insert(position, 0)
        order_in = list(range(2 + k, 2 + 2 * k))
        order_in.insert(position, 1)
        t = np.transpose(t, order_out + order_in)
        d = math.prod(dims) * state.shape[0]
        self.rho = t.reshape(d, d)

    def reduced(self, keep_axes: tuple[int, ...]) -> np.ndarray:
        """Partial state over the given tensor factors (ascending order)."""
        dims = self._dims()
        k = len(dims)
        t = self.rho.reshape(dims + dims)
        for axis in sorted(set(range(k)) - set(keep_axes), reverse=True):
            half = t.ndim // 2
            t = np.trace(t, axis1=axis, axis2=half + axis)
        d = math.prod(dims[a] for a in keep_axes)
        return t.reshape(d, d)

    def nuclear_state(self) -> np.ndarray:
        """Joint state of all nuclear factors (electrons traced out)."""
        keep = tuple(k for k, (kind, _, _) in enumerate(self._factors()) if kind == "n")
        return self.reduced(keep)

    def nuclear_qubit_state(self) -> np.ndarray:
        """Two-node nuclear state projected onto the qubit pair of levels."""
        if len(self.nodes) != 2:
            raise ValueError("qubit-pair state needs a two-node register")
        dims = [len(nuclear_level_labels(n.isotope)) for n in self.nodes]
        return _qubit_block(self.nuclear_state(), dims, _NUCLEAR_QUBIT)

    def electron_qubit_state(self) -> np.ndarray:
        """Two-node electron state projected onto the {mS0, mS-1} qubits."""
        if len(self.nodes) != 2:
            raise ValueError("qubit-pair state needs a two-node register")
        axes = (self._factor_index(0, "e"), self._factor_index(1, "e"))
        dims = [self._dims()[a] for a in axes]
        if dims != [3, 3]:
            raise ValueError("electron qubits exist only on negative nodes")
        return _qubit_block(self.reduced(axes), dims, _ELECTRON_QUBIT)

    # -- structure changes ----------------------------------------------------

    def coupling_matrix(self) -> np.ndarray:
        """Electron-electron couplings in MHz; zero without both electrons."""
        n = len(self.nodes)
        j = np.zeros((n, n))
        for a in range(n):
            for b in range(a + 1, n):
                if (
                    self.nodes[a].charge is ChargeState.MINUS
                    and self.nodes[b].charge is ChargeState.MINUS
                ):
                    j[a, b] = j[b, a] = dipole_coupling(
                        self.nodes[a].position,
                        self.nodes[b].position,
                        self.params.gamma_e_mhz_per_t,
                        self.k_dd,
                    )
        return j

    def switch_node(
        self, node: int, new_charge: ChargeState, electron_level: int = 1
    ) -> None:
        """Electrically switch one node's charge state.

        Removing an electron traces its factor out of the joint state; the
        nuclear factor rides through untouched.  Attaching one inserts a
        fresh factor: a definite level for the negative state (index
        electron_level, default mS = 0) and the unpolarized mixture for the
        neutral state.
        """
        old = self.nodes[node].charge
        if new_charge is old:
            return
        if attach_electron(old) is not None:
            self._trace_out(self._factor_index(node, "e"))
            self.nodes[node].charge = ChargeState.PLUS
        e = attach_electron(new_charge)
        if e is not None:
            if new_charge is ChargeState.MINUS:
                state = np.zeros_like(e)
                state[electron_level, electron_level] = 1.0
            else:
                state = e.copy()
            # insert against the old factor layout, then flip the charge
            self._insert_factor(state, self._factor_index(node, "n"))
            self.nodes[node].charge = new_charge
        else:
            self.nodes[node].charge = new_charge

    def wait(self, t_us: float) -> None:
        """Idle for t_us: per-charge relaxation on every node's factors."""
        if t_us < 0:
            raise ValueError("t_us must be nonnegative")
        if t_us == 0:
            return
        for i, node in enumerate(self.nodes):
            pars = self.relaxation.for_charge(node.charge).nuclear_params()
            self._apply_channel_1q(
                lambda rho: apply_relaxation(rho, t_us, pars),
                self._factor_index(i, "n"),
            )
            epars = self.relaxation.electron_params(node.charge)
            if epars is not None:
                self._apply_channel_1q(
                    lambda rho: apply_relaxation(rho, t_us, epars),
                    self._factor_index(i, "e"),
                )

    # -- gates ----------------------------------------------------------------

    def electron_rotation(self, node: int, gate_2x2: np.ndarray) -> None:
        """Unitary on one node's electron qubit, identity on mS = +1."""
        axis = self._factor_index(node, "e")
        d = self._dims()[axis]
        u = np.eye(d, dtype=complex)
        a, b = _ELECTRON_QUBIT
        u[a, a], u[a, b] = gate_2x2[0, 0], gate_2x2[0, 1]
        u[b, a], u[b, b] = gate_2x2[1, 0], gate_2x2[1, 1]
        self._apply_matrix(u, (axis,))

    def swap_en(self, node: int, error: float = 0.0) -> None:
        """Exchange one node's electron and nuclear qubit states.

        error > 0 mixes in that much of the maximally mixed state on the
        two factors involved, the standard depolarizing model of an
        imperfect transfer.
        """
        ea = self._factor_index(node, "e")
        na = self._factor_index(node, "n")
        dims = self._dims()
        de, dn = dims[ea], dims[na]
        u = np.eye(de * dn, dtype=complex)
        e0, e1 = _ELECTRON_QUBIT
        n0, n1 = _NUCLEAR_QUBIT
        lo = e0 * dn + n1
        hi = e1 * dn + n0
        u[lo, lo] = u[hi, hi] = 0.0
        u[lo, hi] = u[hi, lo] = 1.0
        self._apply_matrix(u, (ea, na))
        if error > 0.0:
            self._depolarize((ea, na), error)

    def _depolarize(self, axes: tuple[int, ...], strength: float) -> None:
        dims = self._dims()
        keep = tuple(a for a in range(len(dims)) if a not in axes)
        rest = self.reduced(keep)
        na, nk = len(axes), len(keep)
        d_mix = math.prod(dims[a] for a in axes)
        t_rest = rest.reshape([dims[a] for a in keep] * 2)
        mix = np.eye(d_mix).reshape([dims[a] for a in axes] * 2) / d_mix
        t = np.tensordot(mix, t_rest, axes=0)
        # axis order now: mixed_out, mixed_in, keep_out, keep_in
        out_slot = {a: i for i, a in enumerate(axes)}
        out_slot.update({a: 2 * na + i for i, a in enumerate(keep)})
        in_slot = {a: na + i for i, a in enumerate(axes)}
        in_slot.update({a: 2 * na + nk + i for i, a in enumerate(keep)})
        perm = [out_slot[a] for a in range(len(dims))] + [
            in_slot[a] for a in range(len(dims))
        ]
        mixed = np.transpose(t, perm).reshape(self.rho.shape)
        self.rho = (1.0 - strength) * self.rho + strength * mixed

    def entangle(self, t_us: float | None = None) -> float:
        """Dipolar ZZ pulse between the two electron spins.

        Generator 2*J*Sz(x)Sz; the default duration 1/(4|J|) makes the
        pulse an exact controlled-phase on the {mS0, mS-1} qubits.
        Returns the duration used.
        """
        if len(self.nodes) != 2:
            raise ValueError("entangling gate needs exactly two nodes")
        j = self.coupling_matrix()[0, 1]
        if j == 0.0:
            raise ValueError(
                "no electron-electron coupling; both nodes must be negative "
                "and sit off the magic angle"
            )
        if t_us is None:
            t_us = 1.0 / (4.0 * abs(j))
        ea = self._factor_index(0, "e")
        eb = self._factor_index(1, "e")
        zz = np.outer(_MZ_ELECTRON, _MZ_ELECTRON).reshape(-1)
        phase = np.exp(-2j * np.pi * j * t_us * 2.0 * zz)
        self._apply_matrix(np.diag(phase), (ea, eb))
        return t_us

    def correlate(self, node: int) -> None:
        """Flip one node's electron qubit conditioned on its nuclear qubit."""
        ea = self._factor_index(node, "e")
        na = self._factor_index(node, "n")
        dims = self._dims()
        de, dn = dims[ea], dims[na]
        u = np.eye(de * dn, dtype=complex)
        e0, e1 = _ELECTRON_QUBIT
        ctrl = _NUCLEAR_QUBIT[1]
        a = e0 * dn + ctrl
        b = e1 * dn + ctrl
        u[a, a] = u[b, b] = 0.0
        u[a, b] = u[b, a] = 1.0
        self._apply_matrix(u, (ea, na))

    def measure_electron(
        self, node: int, rng: np.random.Generator
    ) -> MeasurementRecord:
        """Projective measurement of one electron in its level basis."""
        ea = self._factor_index(node, "e")
        labels = electron_sector_labels(self.nodes[node].charge)
        reduced_e = self.reduced((ea,))
        probs = np.clip(np.real(np.diag(reduced_e)), 0.0, None)
        probs = probs / probs.sum()
        outcome = int(rng.choice(len(probs), p=probs))
        proj = np.zeros_like(reduced_e)
        proj[outcome, outcome] = 1.0
        self._apply_matrix(proj, (ea,))
        self.rho = self.rho / float(np.real(np.trace(self.rho)))
        return MeasurementRecord(
            node_id=self.nodes[node].id,
            basis="electron_level",
            outcome=labels[outcome],
            probability=float(probs[outcome]),
        )


# ---------------------------------------------------------------------------
# the three numbered phases


def run_protocol_phase(
    register: Register,
    phase: str,
    config: ProtocolConfig = ProtocolConfig(),
    rng: np.random.Generator | None = None,
) -> list[MeasurementRecord]:
    """Execute one numbered phase of the storage-processor cycle.

    Initialization polarizes every node's electron, swaps it onto the
    nucleus and parks everything positive.  Operation wakes both nodes
    negative, lifts the nuclear qubits onto the electrons, runs the
    dipolar controlled-phase dressed into a Bell circuit, puts the qubits
    back and parks positive again.  Readout wakes one node, correlates its
    electron with its nucleus and measures the electron, projecting the
    stored qubit.
    """
    key = phase.lower()
    if key not in PHASES:
        raise ValueError(f"unknown phase {phase!r}; expected one of {PHASES}")
    if key == "initialization":
        return _phase_initialization(register, config)
    if key == "operation":
        return _phase_operation(register, config)
    if rng is None:
        raise ValueError("readout phase needs a seeded generator")
    return _phase_readout(register, config, rng)


def _phase_initialization(
    register: Register, config: ProtocolConfig
) -> list[MeasurementRecord]:
    for i in range(len(register.nodes)):
        # a fresh negative electron is polarized into mS=0 either way;
        # going through the positive state first drops any stale electron
        register.switch_node(i, ChargeState.PLUS)
        register.switch_node(i, ChargeState.MINUS, 1)
        register.swap_en(i, config.swap_error)
        register.wait(config.swap_duration_us)
        register.switch_node(i, ChargeState.PLUS)
    return []


def _require_stored(register: Register, phase: str) -> None:
    bad = [n.id for n in register.nodes if n.charge is not ChargeState.PLUS]
    if bad:
        raise ValueError(
            f"{phase} phase requires every node stored in the positive state; "
            f"violated by {', '.join(bad)}"
        )


def _phase_operation(
    register: Register, config: ProtocolConfig
) -> list[MeasurementRecord]:
    if len(register.nodes) != 2:
        raise ValueError("operation phase requires exactly two nodes")
    _require_stored(register, "operation")
    for i in range(2):
        register.switch_node(i, ChargeState.MINUS, config.electron_init_level)
    for i in range(2):
        register.swap_en(i, config.swap_error)
    register.wait(config.swap_duration_us)
    for i in range(2):
        register.electron_rotation(i, _HADAMARD)
    t = register.entangle(config.entangle_time_us)
    register.wait(t)
    register.electron_rotation(1, _HADAMARD)
    for i in range(2):
        register.swap_en(i, config.swap_error)
    register.wait(config.swap_duration_us)
    for i in range(2):
        register.switch_node(i, ChargeState.PLUS)
    return []


def _phase_readout(
    register: Register, config: ProtocolConfig, rng: np.random.Generator
) -> list[MeasurementRecord]:
    _require_stored(register, "readout")
    node = config.readout_node
    if not 0 <= node < len(register.nodes):
        raise ValueError(f"readout_node {node} out of range")
    register.switch_node(node, ChargeState.MINUS, config.electron_init_level)
    register.correlate(node)
    record = register.measure_electron(node, rng)
    register.switch_node(node, ChargeState.PLUS)
    return [record]


# ---------------------------------------------------------------------------
# analysis helpers


def _qubit_block(
    rho: np.ndarray, dims: list[int], qubit: tuple[int, int]
) -> np.ndarray:
    """Project a two-factor state onto each factor's qubit pair of levels."""
    da, db = dims
    idx = [a * db + b for a in qubit for b in qubit]
    return rho[np.ix_(idx, idx)]


def bell_fidelity(register: Register) -> float:
    """Best overlap of the stored two-nucleus state with a Bell state."""
    rho = register.nuclear_qubit_state()
    s = 1.0 / math.sqrt(2.0)
    bells = (
        np.array([s, 0.0, 0.0, s]),
        np.array([s, 0.0, 0.0, -s]),
        np.array([0.0, s, s, 0.0]),
        np.array([0.0, s, -s, 0.0]),
    )
    return max(float(np.real(v.conj() @ rho @ v)) for v in bells)


def concurrence(rho_2q: np.ndarray) -> float:
    """Wootters concurrence of a two-qubit density matrix."""
    sy = np.array([[0.0, -1.0j], [1.0j, 0.0]])
    yy = np.kron(sy, sy)
    rt = yy @ rho_2q.conj() @ yy
    lam = np.sqrt(np.clip(np.real(np.linalg.eigvals(rho_2q @ rt)), 0.0, None))
    lam.sort()
    return max(0.0, float(lam[-1] - lam[-2] - lam[-3] - lam[-4]))


def _entropy(rho: np.ndarray) -> float:
    vals = np.linalg.eigvalsh(rho)
    vals = vals[vals > 1e-15]
    return float(-(vals * np.log2(vals)).sum())


def mutual_information(register: Register) -> float:
    """Cross-node mutual information of the full joint state."""
    if len(register.nodes) != 2:
        raise ValueError("mutual_information needs a two-node register")
    factors = register._factors()
    a_axes = tuple(k for k, (_, i, _) in enumerate(factors) if i == 0)
    b_axes = tuple(k for k, (_, i, _) in enumerate(factors) if i == 1)
    sa = _entropy(register.reduced(a_axes))
    sb = _entropy(register.reduced(b_axes))
    sab = _entropy(register.rho)
    return max(0.0, sa + sb - sab)
