"""Deterministic single-process simulator of differentially-private federated
learning with sparsified model perturbation, built around a Renyi-DP
accountant and simulated secure aggregation."""

from .data import Dataset, Partition, load_idx, partition_iid, partition_label_shards, synth_classification
from .federation import (
    BoundInputs,
    ConvergenceBound,
    FederationState,
    RoundRecord,
    SchemeConfig,
    comm_cost,
    convergence_bound,
    run_round,
    sample_clients,
)
from .harness import ExperimentConfig, run_experiment, run_single
from .model import LocalOptState, ModelSpec, init_params, local_update, loss_and_grad
from .numeric import Purpose, RngStream, clip_l2, gaussian_sample, l2_norm
from .privacy import (
    PrivacyParams,
    RdpAccountant,
    RdpCurve,
    account,
    calibrate_sigma_accountant,
    calibrate_sigma_theorem1,
    compose,
    perturb_masked,
    rdp_gaussian,
    rdp_subsampled_gaussian,
    to_eps_delta,
)
from .secagg import FixedPointCodec, MaskedUpdate, aggregate, make_pairwise_masks
from .sparsify import MaskVector, SparsifierKind, apply_mask, select_randk, select_topk_proxy

__all__ = [
    "Dataset",
    "Partition",
    "load_idx",
    "partition_iid",
    "partition_label_shards",
    "synth_classification",
    "BoundInputs",
    "ConvergenceBound",
    "FederationState",
    "RoundRecord",
    "SchemeConfig",
    "comm_cost",
    "convergence_bound",
    "run_round",
    "sample_clients",
    "ExperimentConfig",
    "run_experiment",
    "run_single",
    "LocalOptState",
    "ModelSpec",
    "init_params",
    "local_update",
    "loss_and_grad",
    "Purpose",
    "RngStream",
    "clip_l2",
    "gaussian_sample",
    "l2_norm",
    "PrivacyParams",
    "RdpAccountant",
    "RdpCurve",
    "account",
    "calibrate_sigma_accountant",
    "calibrate_sigma_theorem1",
    "compose",
    "perturb_masked",
    "rdp_gaussian",
    "rdp_subsampled_gaussian",
    "to_eps_delta",
    "FixedPointCodec",
    "MaskedUpdate",
    "aggregate",
    "make_pairwise_masks",
    "MaskVector",
    "SparsifierKind",
    "apply_mask",
    "select_randk",
    "select_topk_proxy",
]
