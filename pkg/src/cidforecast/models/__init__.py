"""Direction classifiers and their serialisation."""
from .base import (Classifier, LayoutMismatch, Prediction, Standardizer, directions,
                   load_model, model_from_dict, predict, save_model, strengths)
from .gbdt import GbdtModel, GbdtParams, PlsGbdtModel, Tree, fit_gbdt, fit_pls_gbdt, split_gain
from .logistic import LogisticModel, fit_logistic, objective
from .pls import PlsTransform, fit_pls

MODEL_KINDS = ("logistic", "pls_gbdt")


def fit_model(kind: str, X, y, target=None, price_mask=None, layout=None, **params) -> Classifier:
    """Dispatch on the model name used in run configurations."""
    if kind == "logistic":
        return fit_logistic(X, y, price_mask=price_mask, layout=layout, **params)
    if kind == "pls_gbdt":
        if target is None:
            raise ValueError("pls_gbdt needs the regression target")
        return fit_pls_gbdt(X, y, target, GbdtParams(**params), price_mask, layout)
    raise ValueError(f"unknown model {kind!r}; expected one of {MODEL_KINDS}")


__all__ = [
    "Classifier", "GbdtModel", "GbdtParams", "LayoutMismatch", "LogisticModel", "MODEL_KINDS",
    "PlsGbdtModel", "PlsTransform", "Prediction", "Standardizer", "Tree", "directions",
    "fit_gbdt", "fit_logistic", "fit_model", "fit_pls", "fit_pls_gbdt", "load_model",
    "model_from_dict", "objective", "predict", "save_model", "split_gain", "strengths",
]
