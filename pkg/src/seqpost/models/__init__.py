from .bimodal import BimodalMixtureModel
from .conjugate import ConjugateNormalModel, conjugate_oracle
from .egarch import EgarchModel, EgarchParams, egarch_simulate, egarch_transform

__all__ = [
    "BimodalMixtureModel",
    "ConjugateNormalModel",
    "EgarchModel",
    "EgarchParams",
    "conjugate_oracle",
    "egarch_simulate",
    "egarch_transform",
    "make_model",
]


def make_model(name: str, **hyper):
    """Model instance from its name and hyperparameters (None values ignored)."""
    hyper = {k: v for k, v in hyper.items() if v is not None}
    name = name.lower()
    if name == "conjugate":
        return ConjugateNormalModel(**{k: hyper[k] for k in ("sigma2", "m0", "v0") if k in hyper})
    if name == "bimodal":
        return BimodalMixtureModel(**{k: hyper[k] for k in ("sigma2", "v0") if k in hyper})
    if name.startswith("egarch"):
        return EgarchModel(K=int(hyper.get("K", 1)), I=int(hyper.get("I", 1)))
    raise ValueError(f"unknown model {name!r}")
