"""Round orchestration for FedAvg, DP-FedAvg, and the sparsified-perturbation
scheme, plus the convergence-bound evaluator and the uplink cost model.

One round: sample clients -> (fed_smp) broadcast a shared mask -> local
momentum-SGD updates -> per-scheme privatization of each update -> secure
aggregation of the fixed-point encodings -> global step
theta <- theta - (1/r) * sum. The privacy accountant advances exactly once
per round for the DP schemes regardless of sparsifier.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ParameterError
from .model import LocalOptState, ModelSpec, accuracy, local_update, mean_loss
from .numeric import Purpose, RngStream, clip_l2, l2_norm
from .privacy import PrivacyParams, RdpAccountant, perturb_masked
from .secagg import FixedPointCodec, MaskedUpdate, aggregate, make_pairwise_masks, mask_update
from .sparsify import MaskVector, SparsifierKind, apply_mask, select_randk, select_topk_proxy

FEDAVG = "fedavg"
DP_FEDAVG = "dp_fedavg"
FED_SMP = "fed_smp"
SCHEMES = (FEDAVG, DP_FEDAVG, FED_SMP)


@dataclass
class SchemeConfig:
    scheme: str
    n_clients: int
    clients_per_round: int
    rounds: int
    opt: LocalOptState
    sparsifier: SparsifierKind | None = None
    privacy: PrivacyParams | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ParameterError(f"unknown scheme '{self.scheme}'")
        if not 1 <= self.clients_per_round <= self.n_clients:
            raise ParameterError("need 1 <= clients_per_round <= n_clients")
        if self.rounds < 1:
            raise ParameterError("rounds must be >= 1")
        if self.scheme == FED_SMP and self.sparsifier is None:
            raise ParameterError("fed_smp requires a sparsifier")
        if self.scheme in (DP_FEDAVG, FED_SMP) and self.privacy is None:
            raise ParameterError(f"{self.scheme} requires privacy parameters")

    @property
    def is_private(self) -> bool:
        return self.scheme in (DP_FEDAVG, FED_SMP)


@dataclass
class RoundRecord:
    """Per-round metrics emitted by run_round."""

    round: int
    train_loss: float
    eval_accuracy: float
    epsilon: float
    uplink_bits: int
    clipped_fraction: float
    saturation: int
    wall_ms: float


@dataclass
class FederationState:
    """Mutable simulation state owned by the orchestrator."""

    model: ModelSpec
    params: np.ndarray
    shards: list[Dataset]
    public: Dataset | None
    train_eval: Dataset
    eval_data: Dataset | None
    codec: FixedPointCodec
    master_seed: int
    accountant: RdpAccountant | None = None
    bits_total: int = 0

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if len(self.params) != self.model.param_count:
            raise ParameterError("params length does not match the model")


def sample_clients(n: int, r: int, round_index: int, stream: RngStream) -> np.ndarray:
    """Uniform size-r client subset without replacement, sorted."""
    if not 1 <= r <= n:
        raise ParameterError(f"need 1 <= r <= n, got r={r}, n={n}")
    if r == n:
        return np.arange(n, dtype=np.int64)
    picks = stream.generator().choice(n, size=r, replace=False)
    return np.sort(picks.astype(np.int64))


def _full_mask(d: int) -> MaskVector:
    return MaskVector(np.arange(d, dtype=np.int64), d)


def _select_mask(
    config: SchemeConfig,
    state: FederationState,
    round_index: int,
    opt: LocalOptState,
) -> MaskVector:
    d = state.model.param_count
    if config.scheme != FED_SMP:
        return _full_mask(d)
    sp = config.sparsifier
    k = sp.k_for(d)
    stream = RngStream(state.master_seed, round_index, 0, Purpose.MASK)
    if sp.kind == "rand_k":
        return select_randk(d, k, stream)
    if state.public is None or len(state.public) == 0:
        raise ParameterError("top_k sparsifier requires a public dataset")
    return select_topk_proxy(state.model, state.params, state.public, opt, k, stream)


def run_round(
    config: SchemeConfig,
    state: FederationState,
    round_index: int,
    opt: LocalOptState | None = None,
    client_opt=None,
    proxy_opt: LocalOptState | None = None,
) -> tuple[np.ndarray, RoundRecord]:
    """Execute one communication round and advance the state in place.

    `opt` overrides the configured optimizer for this round (learning-rate
    decay), `client_opt(client_id)` supplies per-client settings when local
    work is specified in epochs, and `proxy_opt` does the same for the
    server's public-data proxy training.
    """
    t_start = time.perf_counter()
    opt = opt or config.opt
    n, r = config.n_clients, config.clients_per_round
    seed = state.master_seed
    d = state.model.param_count
    if r >= 2 and r > state.codec.max_clients():
        raise ParameterError(
            f"codec supports sums of at most {state.codec.max_clients()} clients"
        )

    clients = sample_clients(
        n, r, round_index, RngStream(seed, round_index, 0, Purpose.CLIENT_SAMPLING)
    )
    mask = _select_mask(config, state, round_index, proxy_opt or opt)
    priv = config.privacy

    payloads: dict[int, np.ndarray] = {}
    clipped = 0
    for c in clients:
        c = int(c)
        delta = local_update(
            state.model,
            state.params,
            state.shards[c],
            client_opt(c) if client_opt else opt,
            RngStream(seed, round_index, c, Purpose.BATCH),
        )
        if config.scheme == FEDAVG:
            y = delta
        else:
            pre = delta if config.scheme == DP_FEDAVG else apply_mask(
                delta, mask, config.sparsifier
            )
            if l2_norm(pre) > priv.clip:
                clipped += 1
            y = perturb_masked(
                clip_l2(pre, priv.clip),
                mask,
                priv.clip,
                priv.noise_multiplier,
                r,
                RngStream(seed, round_index, c, Purpose.NOISE),
            )
        # Only the selected coordinates travel; dense schemes select all d.
        payloads[c] = y[mask.indices]

    saturation = sum(state.codec.saturation_count(p) for p in payloads.values())
    if r >= 2:
        pair_masks = make_pairwise_masks(
            clients, mask.k, round_index, seed, state.codec
        )
        submissions = [
            mask_update(state.codec.encode(payloads[c]), pair_masks[c], state.codec)
            for c in payloads
        ]
    else:
        submissions = [MaskedUpdate(state.codec.encode(p)) for p in payloads.values()]
    summed_sparse = aggregate(submissions, state.codec)
    summed = np.zeros(d, dtype=np.float64)
    summed[mask.indices] = summed_sparse

    state.params = state.params - summed / r
    state.bits_total += 32 * mask.k * r

    epsilon = math.nan
    if config.is_private:
        if state.accountant is None:
            state.accountant = RdpAccountant(
                priv.noise_multiplier, priv.sampling_ratio, priv.delta
            )
        state.accountant.step()
        epsilon = state.accountant.epsilon()[0]

    record = RoundRecord(
        round=round_index,
        train_loss=mean_loss(state.model, state.params, state.train_eval),
        eval_accuracy=(
            accuracy(state.model, state.params, state.eval_data)
            if state.eval_data is not None
            else math.nan
        ),
        epsilon=epsilon,
        uplink_bits=state.bits_total,
        clipped_fraction=clipped / r,
        saturation=saturation,
        wall_ms=(time.perf_counter() - t_start) * 1e3,
    )
    return state.params, record


@dataclass(frozen=True)
class BoundInputs:
    """Constants entering the convergence bound evaluator.

    smoothness, grad_variance (mean per-client stochastic-gradient variance),
    beta_sq >= 1 and kappa_sq >= 0 (gradient dissimilarity), and initial_gap
    (initial minus optimal objective) are user-supplied; the evaluator never
    claims measured constants for neural models.
    """

    smoothness: float
    grad_variance: float
    beta_sq: float
    kappa_sq: float
    initial_gap: float
    learning_rate: float
    local_steps: int
    rounds: int
    k: int
    d: int
    clip: float
    noise_multiplier: float
    clients_per_round: int
    gamma: float = 1.0 / 3.0

    def __post_init__(self):
        if self.beta_sq < 1 or self.kappa_sq < 0:
            raise ParameterError("need beta_sq >= 1 and kappa_sq >= 0")
        if not 0 < self.gamma < 0.5:
            raise ParameterError("gamma must be in (0, 1/2)")
        if not 1 <= self.k <= self.d:
            raise ParameterError("need 1 <= k <= d")


@dataclass(frozen=True)
class ConvergenceBound:
    total: float
    optimization_term: float
    compression_term: float
    privacy_term: float
    lr_condition_ok: bool
    lr_limit: float


def convergence_bound(inputs: BoundInputs, kind: SparsifierKind) -> ConvergenceBound:
    """Evaluate the convergence bound's three-way decomposition.

    The compression term scales with phi_k (1 - k/d for top_k with
    zeta' = 4 * grad_variance / gamma; d/k - 1 for rand_k with zeta' = 0)
    and vanishes at k = d; the privacy term is linear in k and quadratic in
    the noise multiplier. A violated learning-rate condition downgrades the
    bound to advisory via lr_condition_ok, but the value is still returned.
    """
    L = inputs.smoothness
    eta, tau = inputs.learning_rate, inputs.local_steps
    zeta_sq, kappa_sq, beta_sq = inputs.grad_variance, inputs.kappa_sq, inputs.beta_sq
    if kind.kind == "top_k":
        phi_k = 1.0 - inputs.k / inputs.d
        zeta_prime = 4.0 * zeta_sq / inputs.gamma
    else:
        phi_k = inputs.d / inputs.k - 1.0
        zeta_prime = 0.0
    optimization = 8.0 * inputs.initial_gap / (inputs.rounds * eta * tau) + (
        8.0 * eta * tau * L * (3.0 * kappa_sq + 2.0 * zeta_sq)
    )
    compression = (8.0 * eta * tau * L * (2.0 * kappa_sq + zeta_sq) + zeta_prime) * phi_k
    privacy = (
        4.0
        * L
        * inputs.k
        * inputs.clip**2
        * inputs.noise_multiplier**2
        / (eta * tau * inputs.clients_per_round**2)
    )
    lr_limit = min(
        1.0 / (24.0 * tau * L * (phi_k + 1.0) * beta_sq),
        1.0 / (4.0 * tau * L * math.sqrt(4.0 * beta_sq + 2.0)),
        1.0 / (12.0 * tau * L),
    )
    return ConvergenceBound(
        total=optimization + compression + privacy,
        optimization_term=optimization,
        compression_term=compression,
        privacy_term=privacy,
        lr_condition_ok=eta <= lr_limit,
        lr_limit=lr_limit,
    )


def comm_cost(scheme: str, k: int, d: int, rounds: int, r: int, n: int) -> float:
    """Expected per-client uplink bits: 32 bits per transmitted coordinate,
    rounds * r/n participations, k coordinates for fed_smp and d otherwise."""
    if min(k, d, rounds, r, n) < 1:
        raise ParameterError("all cost parameters must be positive")
    coords = k if scheme == FED_SMP else d
    return 32 * coords * rounds * r / n
