import numpy as np

from dpfedsim.data import synth_classification, partition_iid
from dpfedsim.federation import FederationState, SchemeConfig
from dpfedsim.model import LocalOptState, ModelSpec, init_params
from dpfedsim.numeric import Purpose, RngStream
from dpfedsim.privacy import PrivacyParams
from dpfedsim.secagg import FixedPointCodec
from dpfedsim.sparsify import SparsifierKind


def make_federation(
    scheme,
    seed=123,
    n=8,
    r=4,
    rounds=20,
    sigma=0.0,
    clip=1e9,
    kind="rand_k",
    p=1.0,
    input_dim=5,
    num_classes=3,
    n_examples=168,
    public_fraction=0.05,
    learning_rate=0.2,
    momentum=0.5,
    batch_size=7,
    local_steps=3,
    delta=1e-3,
):
    """One-call setup for a small deterministic federation."""
    data = synth_classification(seed, n_examples, input_dim, num_classes, 4.0)
    eval_data = synth_classification(seed, 128, input_dim, num_classes, 4.0, part=1)
    partition = partition_iid(data, n, public_fraction, seed)
    spec = ModelSpec("logistic", input_dim=input_dim, num_classes=num_classes)
    opt = LocalOptState(
        learning_rate=learning_rate,
        momentum=momentum,
        batch_size=batch_size,
        local_steps=local_steps,
    )
    privacy = None
    if scheme != "fedavg":
        privacy = PrivacyParams(
            clip=clip,
            noise_multiplier=sigma,
            sampling_ratio=r / n,
            rounds=rounds,
            delta=delta,
        )
    config = SchemeConfig(
        scheme=scheme,
        n_clients=n,
        clients_per_round=r,
        rounds=rounds,
        opt=opt,
        sparsifier=SparsifierKind(kind, p) if scheme == "fed_smp" else None,
        privacy=privacy,
    )
    state = FederationState(
        model=spec,
        params=init_params(spec, RngStream(seed, 0, 0, Purpose.INIT)),
        shards=[data.subset(s) for s in partition.shards],
        public=data.subset(partition.public_indices)
        if len(partition.public_indices)
        else None,
        train_eval=data,
        eval_data=eval_data,
        codec=FixedPointCodec(),
        master_seed=seed,
    )
    return config, state
