"""Learned imitation of greedy joint port selection.

Trains a small convolutional network to reproduce, from normalized average
port powers alone, the port selections a greedy search produces, then
emits those predictions as selection files the link simulator evaluates.
"""

from dljps.accuracy import masks_from_sets, selection_accuracy
from dljps.data import DatasetDims, Record, load_dataset, split_records
from dljps.model import DlConfig, PortNet, load_model, save_model
from dljps.predict import predict_selections, resolve_conflicts, top_ports, \
    write_selections
from dljps.train import TrainResult, train_model

__all__ = [
    "DatasetDims",
    "DlConfig",
    "PortNet",
    "Record",
    "TrainResult",
    "load_dataset",
    "load_model",
    "masks_from_sets",
    "predict_selections",
    "resolve_conflicts",
    "save_model",
    "selection_accuracy",
    "split_records",
    "top_ports",
    "train_model",
    "write_selections",
]
