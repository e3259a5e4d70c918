"""Federated embedding learning with one identity per client."""

from ._fedface import (
    ConfigError,
    DecodeError,
    FedfaceError,
    IoError,
    NotEnoughClassesError,
    ShapeError,
    TransportError,
    UnitNormError,
    am_softmax,
    decode_frame,
    encode_frame,
    evaluate,
    federate,
    finetune,
    full_loss,
    gen_data,
    make_pairs,
    pos_loss,
    pretrain,
    roc_and_tar,
    spreadout,
    weighted_average,
)

__all__ = [
    "ConfigError",
    "DecodeError",
    "FedfaceError",
    "IoError",
    "NotEnoughClassesError",
    "ShapeError",
    "TransportError",
    "UnitNormError",
    "am_softmax",
    "decode_frame",
    "encode_frame",
    "evaluate",
    "federate",
    "finetune",
    "full_loss",
    "gen_data",
    "make_pairs",
    "pos_loss",
    "pretrain",
    "roc_and_tar",
    "spreadout",
    "weighted_average",
]
